//! Geodesic flow on the unit tangent bundle of the octagon surface.
//!
//! The bundle is the coset space of the deck group acting on the isometry
//! group from the left; the geodesic flow is right translation by the
//! diagonal subgroup, time reversal is right translation by the half-turn
//! rotation, and transverse sections are spanned by the two unipotent
//! subgroups around a moving frame.  On top of those primitives this
//! module builds periodic orbits from conjugacy classes, locates the
//! self-crossings of a closed orbit in configuration space, and detects
//! encounters: distinct passes of one orbit running almost parallel or
//! almost antiparallel through a small section.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::fuchsian::{
    act_on_i, canonical_class, h2_distance, is_primitive, octagon_circumradius, FuchsianGroup,
    Word,
};
use crate::moebius::{
    a_t, axis_normal_form, b_s, c_u, classify, d_pi, decompose_bcu, decompose_cub, invert,
    trace, ElementClass, MoebiusElement,
};

/// Frobenius-norm threshold beyond which a flowed representative is pulled
/// back over the fundamental domain.  Representatives of reduced points
/// stay below ~3.5, so short flow legs avoid the pullback entirely.
const REDUCE_FROB_LIMIT: f64 = 10.0;

/// Two quotient points closer than this are considered equal.
pub const POINT_EQ_TOL: f64 = 1e-9;

/// Largest |residual time| the section probe accepts when matching a point
/// to a section plane.
const SECTION_TIME_WINDOW: f64 = 0.5;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("section radius {eps:.3e} outside (0, {max:.3e})")]
    BadRadius { eps: f64, max: f64 },
    #[error("grid step {dt:.3e} outside (0, {max:.3e}]")]
    BadStep { dt: f64, max: f64 },
    #[error(
        "point not in section: nearest candidate radius {nearest_radius:.3e} \
         at residual time {nearest_time:.3e}"
    )]
    NotInSection { nearest_radius: f64, nearest_time: f64 },
    #[error("every deck candidate hit a singular unipotent decomposition")]
    DegenerateDecomposition,
    #[error("class is not hyperbolic (trace {0:.6})")]
    NotHyperbolic(f64),
    #[error("class word {0} is a proper power; orbit is a repeated cycle")]
    NotPrimitive(Word),
    #[error(
        "crossing at tau {tau:.6}, loop {loop_time:.6}, angle {theta:.6} violates the \
         loop-length invariant exp(-L) < cos^2(theta/2) by {defect:.3e}"
    )]
    CrossingInvariant { tau: f64, loop_time: f64, theta: f64, defect: f64 },
}

// ---------------------------------------------------------------------------
// Points of the quotient bundle.

/// A point of the unit tangent bundle: the coset of `rep` under the deck
/// group.  Equality is geometric (quotient distance below [`POINT_EQ_TOL`]),
/// not representative-wise.
#[derive(Clone)]
pub struct QuotientPoint {
    grp: Arc<FuchsianGroup>,
    rep: MoebiusElement,
}

impl QuotientPoint {
    /// Wraps `rep`, pulling the representative back over the fundamental
    /// domain.
    pub fn new(grp: Arc<FuchsianGroup>, rep: MoebiusElement) -> Self {
        let rep = grp.dirichlet_reduce(&rep).0;
        QuotientPoint { grp, rep }
    }

    /// Wraps `rep` as stored.  Use [`QuotientPoint::new`] unless the
    /// representative is known to be moderate already.
    pub fn from_rep(grp: Arc<FuchsianGroup>, rep: MoebiusElement) -> Self {
        QuotientPoint { grp, rep }
    }

    pub fn rep(&self) -> &MoebiusElement {
        &self.rep
    }

    pub fn group(&self) -> &Arc<FuchsianGroup> {
        &self.grp
    }

    /// Geodesic flow for time `t`: right translation by the diagonal
    /// subgroup.  The representative is re-reduced only once it drifts far
    /// from the fundamental domain, so chains of short steps stay cheap.
    pub fn flow(&self, t: f64) -> Self {
        let mut rep = self.rep * a_t(t);
        if rep.frobenius_norm() > REDUCE_FROB_LIMIT {
            rep = self.grp.dirichlet_reduce(&rep).0;
        }
        QuotientPoint { grp: self.grp.clone(), rep }
    }

    /// Direction reversal: right translation by the half-turn rotation.
    pub fn time_reverse(&self) -> Self {
        QuotientPoint { grp: self.grp.clone(), rep: self.rep * d_pi() }
    }

    /// Distance between the two cosets.
    pub fn distance(&self, other: &QuotientPoint) -> f64 {
        debug_assert!(
            Arc::ptr_eq(&self.grp, &other.grp),
            "comparing points over different groups"
        );
        self.grp.quotient_distance(&self.rep, &other.rep)
    }
}

impl PartialEq for QuotientPoint {
    fn eq(&self, other: &Self) -> bool {
        self.distance(other) < POINT_EQ_TOL
    }
}

impl std::fmt::Debug for QuotientPoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "QuotientPoint({:?})", self.rep)
    }
}

// ---------------------------------------------------------------------------
// Transverse sections.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
pub enum SectionVariant {
    /// Planes `base . c_u b_s`: unstable coordinate first.
    P,
    /// Planes `base . b_s c_u`: stable coordinate first.
    Pprime,
}

/// Coordinates of a point relative to a section centred at `base`:
/// the probed point is `base . (unipotent part) . a_(residual_time)` with
/// the unipotent factor ordered according to `variant`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SectionCoords {
    pub variant: SectionVariant,
    pub u: f64,
    pub s: f64,
    /// Frame of the section centre.
    pub base: MoebiusElement,
    /// Flow time separating the probed point from the section plane;
    /// exactly linear along the flow, so `flow(z, -residual_time)` lies on
    /// the plane itself.
    pub residual_time: f64,
}

impl SectionCoords {
    /// Rebuilds a representative of the probed point from the stored data.
    pub fn reconstruct(&self) -> MoebiusElement {
        let unipotent = match self.variant {
            SectionVariant::P => c_u(self.u) * b_s(self.s),
            SectionVariant::Pprime => b_s(self.s) * c_u(self.u),
        };
        self.base * unipotent * a_t(self.residual_time)
    }
}

/// Expresses `z` in the radius-`eps` section centred at `x`, resolving the
/// deck ambiguity by scanning the ball cache.  `eps` must stay below a
/// quarter of the injectivity margin, which makes the matching deck element
/// unique whenever the residual-time window stays modest.
pub fn section_coords(
    x: &QuotientPoint,
    z: &QuotientPoint,
    variant: SectionVariant,
    eps: f64,
) -> Result<SectionCoords, FlowError> {
    let grp = x.group();
    let max_eps = grp.sigma0() / 4.0;
    if !(eps > 0.0 && eps < max_eps) {
        return Err(FlowError::BadRadius { eps, max: max_eps });
    }
    let xi = invert(x.rep());
    let zx = act_on_i(x.rep());
    // A qualifying match moves x's base point at most about
    // |u| + |s| + |t| in the plane; anything farther cannot decompose small.
    let prefilter = 2.0 * eps + SECTION_TIME_WINDOW + 0.2;
    let mut best: Option<SectionCoords> = None;
    let mut qualifying = 0usize;
    let mut nearest_radius = f64::INFINITY;
    let mut nearest_time = f64::INFINITY;
    let mut candidates = 0usize;
    let mut degenerate = 0usize;
    for ce in grp.cache() {
        let dz = ce.mat * *z.rep();
        if h2_distance(zx, act_on_i(&dz)) > prefilter {
            continue;
        }
        candidates += 1;
        let m = xi * dz;
        let dec = match variant {
            SectionVariant::P => decompose_cub(&m),
            SectionVariant::Pprime => decompose_bcu(&m).map(|(s, u, t)| (u, s, t)),
        };
        let (u, s, t) = match dec {
            Ok(v) => v,
            Err(_) => {
                degenerate += 1;
                continue;
            }
        };
        let r = u.abs().max(s.abs());
        if r < nearest_radius {
            nearest_radius = r;
            nearest_time = t.abs();
        }
        if r <= eps && t.abs() <= SECTION_TIME_WINDOW {
            qualifying += 1;
            if best.as_ref().map_or(true, |b| t.abs() < b.residual_time.abs()) {
                best = Some(SectionCoords { variant, u, s, base: *x.rep(), residual_time: t });
            }
        }
    }
    if qualifying > 1 {
        // Impossible below sigma0/8 (two matches would force a deck element
        // shorter than the injectivity margin); above that the nearest
        // plane wins, which the tolerance setup already made unambiguous.
        assert!(
            eps > grp.sigma0() / 8.0,
            "two deck matches in a section of radius {eps}, below the provable bound"
        );
    }
    match best {
        Some(c) => Ok(c),
        None if candidates > 0 && degenerate == candidates => {
            Err(FlowError::DegenerateDecomposition)
        }
        None => Err(FlowError::NotInSection { nearest_radius, nearest_time }),
    }
}

// ---------------------------------------------------------------------------
// Periodic orbits.

/// A primitive periodic orbit of the flow, carrying its conjugacy class,
/// a base point on the expanding axis, and the exact frame conjugating the
/// class matrix onto the diagonal subgroup.
#[derive(Clone)]
pub struct PeriodicOrbit {
    cls: Word,
    base: QuotientPoint,
    period: f64,
    conjugator: MoebiusElement,
}

impl PeriodicOrbit {
    /// Builds the orbit of a hyperbolic, primitive conjugacy class.  The
    /// class matrix `m` is conjugated to `a_T` by the axis frame `p`; the
    /// base point is the coset of `p` and satisfies `flow(base, T) = base`.
    pub fn from_class(grp: &Arc<FuchsianGroup>, w: &Word) -> Result<Self, FlowError> {
        let cls = canonical_class(w);
        let m = grp.evaluate_word(&cls);
        if classify(&m) != ElementClass::Hyperbolic {
            return Err(FlowError::NotHyperbolic(trace(&m)));
        }
        if !is_primitive(&cls) {
            return Err(FlowError::NotPrimitive(cls));
        }
        let (p, period) = axis_normal_form(&m).expect("hyperbolic by classification");
        let base = QuotientPoint::new(grp.clone(), p);
        Ok(PeriodicOrbit { cls, base, period, conjugator: p })
    }

    pub fn class(&self) -> &Word {
        &self.cls
    }

    pub fn base(&self) -> &QuotientPoint {
        &self.base
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// Frame `p` with `evaluate(class) = p a_T p^{-1}`; the base point is
    /// the coset of `p`.
    pub fn conjugator(&self) -> &MoebiusElement {
        &self.conjugator
    }

    pub fn group(&self) -> &Arc<FuchsianGroup> {
        self.base.group()
    }

    /// The orbit point at time `t` past the base point.
    pub fn point_at(&self, t: f64) -> QuotientPoint {
        self.base.flow(t)
    }

    /// The same geometric orbit traversed backwards: base point reversed in
    /// place, class replaced by the class of the inverse word.  The stored
    /// conjugator diagonalizes the inverse of the original class matrix,
    /// which represents the reversed class only up to conjugation.
    pub fn time_reversed(&self) -> Self {
        PeriodicOrbit {
            cls: canonical_class(&self.cls.inverse()),
            base: self.base.time_reverse(),
            period: self.period,
            conjugator: self.conjugator * d_pi(),
        }
    }

    /// The same orbit with the base point moved forward by `t`.
    pub fn shifted(&self, t: f64) -> Self {
        PeriodicOrbit {
            cls: self.cls.clone(),
            base: self.base.flow(t),
            period: self.period,
            conjugator: self.conjugator * a_t(t),
        }
    }
}

impl std::fmt::Debug for PeriodicOrbit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PeriodicOrbit(class {}, period {:.6})", self.cls, self.period)
    }
}

// ---------------------------------------------------------------------------
// Self-crossings of a closed orbit in configuration space.

/// A transversal self-intersection of the closed geodesic underlying an
/// orbit.  At orbit time `tau` the trajectory passes through a surface
/// point which it revisits at time `tau + L` with its direction rotated by
/// `sign * theta`:  the orbit points satisfy
/// `point_at(tau + L) = point_at(tau) . d_(sign*theta)` in the quotient.
/// Every geometric intersection therefore produces two records, `(tau, L)`
/// and `(tau + L, T - L)`, with the same angle and opposite signs.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Crossing {
    pub tau: f64,
    #[serde(rename = "L")]
    pub loop_time: f64,
    /// Crossing angle in (0, pi).
    pub theta: f64,
    /// Orientation of the direction rotation, +1 or -1.
    pub sign: i8,
}

/// Locates all self-crossings of the orbit's configuration-space geodesic.
///
/// A uniform grid of at most `dt` (default 0.02, capped at 0.05) seeds
/// candidate passes; for each near-coincident pair of grid frames and each
/// deck element bridging them the crossing condition is solved in closed
/// form, which pins the crossing times and angle to machine precision, so
/// the grid only needs to be fine enough to land one seed in each basin.
/// Grid anchors are processed in parallel and merged in index order, so the
/// result is deterministic.
pub fn detect_self_crossings(
    orbit: &PeriodicOrbit,
    dt: Option<f64>,
) -> Result<Vec<Crossing>, FlowError> {
    let dt = dt.unwrap_or(0.02);
    if !(dt > 0.0 && dt <= 0.05) {
        return Err(FlowError::BadStep { dt, max: 0.05 });
    }
    let grp = orbit.group().clone();
    let grid = OrbitGrid::build(orbit, dt);
    let step = grid.step;
    let period = grid.period;
    let capture = 2.0 * step + 0.05;
    let deck = grp.deck_indices_within(2.0 * octagon_circumradius() + capture + 0.3);
    let hash = DiskHash::build(&grid, &grp, &deck, capture / 2.0);
    let n = grid.reps.len();

    let per_anchor: Vec<Vec<Crossing>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut found = Vec::new();
            let mi_inv = invert(&grid.reps[i]);
            let p = grid.disk[i];
            let r2 = (capture / 2.0) * (capture / 2.0);
            hash.visit(p, |e| {
                let dx = e.x - p.0;
                let dy = e.y - p.1;
                if dx * dx + dy * dy > r2 {
                    return;
                }
                let h = mi_inv * (grp.cache()[e.deck as usize].mat * grid.reps[e.j as usize]);
                let [h11, h12, h21, h22] = h.entries();
                // Two geodesic lines cross iff the bridging element mixes
                // the expanding and contracting directions with these signs.
                if h11 * h22 <= 1e-12 || h12 * h21 >= -1e-12 {
                    return;
                }
                let diag = (h22 / h11).ln();
                let anti = (-h12 / h21).ln();
                let alpha = (anti - diag) / 2.0;
                let beta = (anti + diag) / 2.0;
                // Keep only the solution seeded by its own grid cell; the
                // crossing's nearest pair re-finds it with small offsets.
                if alpha.abs() > step || beta.abs() > step {
                    return;
                }
                let rot = a_t(-alpha) * h * a_t(beta);
                let [m11, m12, m21, m22] = rot.entries();
                if (m11 - m22).abs() > 1e-8 || (m12 + m21).abs() > 1e-8 {
                    return;
                }
                let (c, s) = if m11 + m22 < 0.0 { (-m11, -m21) } else { (m11, m21) };
                let theta = 2.0 * s.abs().atan2(c);
                let sign: i8 = if s > 0.0 { 1 } else { -1 };
                let tau_raw = grid.times[i] + alpha;
                let l = (grid.times[e.j as usize] + beta - tau_raw).rem_euclid(period);
                if l < 1e-9 || l > period - 1e-9 {
                    return;
                }
                found.push(Crossing {
                    tau: tau_raw.rem_euclid(period),
                    loop_time: l,
                    theta,
                    sign,
                });
            });
            found
        })
        .collect();

    let mut all: Vec<Crossing> = per_anchor.into_iter().flatten().collect();
    for c in &all {
        let defect = (-c.loop_time).exp() - (c.theta / 2.0).cos().powi(2);
        if defect >= 0.0 {
            return Err(FlowError::CrossingInvariant {
                tau: c.tau,
                loop_time: c.loop_time,
                theta: c.theta,
                defect,
            });
        }
    }
    all.sort_by(|a, b| {
        (a.tau, a.loop_time)
            .partial_cmp(&(b.tau, b.loop_time))
            .expect("crossing data is finite")
    });
    let mut out: Vec<Crossing> = Vec::new();
    for c in all {
        let dup = out.iter().any(|k| {
            let d = (k.tau - c.tau).abs();
            d.min(period - d) < 1e-6 && (k.loop_time - c.loop_time).abs() < 1e-6
        });
        if !dup {
            out.push(c);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Encounters.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EncounterKind {
    /// Both passes run in the same direction.
    Parallel,
    /// The second pass runs against the first.
    Antiparallel,
}

/// Two passes of one orbit through a small transverse section.  `entries`
/// lists (orbit time, section coordinates); the first entry is the section
/// centre itself (zero coordinates), the second the other pass, refined so
/// its residual time vanishes.  For antiparallel encounters the recorded
/// coordinates are those of the *reversed* second pass.
///
/// An encounter persists over a stretch of the orbit; the reported entry
/// times sit at the centre of that stretch, which makes them stable under
/// grid refinement and covariant under time reversal (up to a grid step).
#[derive(Debug, Clone, Serialize)]
pub struct Encounter {
    pub kind: EncounterKind,
    pub entries: Vec<(f64, SectionCoords)>,
    /// Largest unipotent coordinate magnitude among the entries.
    pub radius: f64,
    /// Duration over which the two passes stay within the section radius.
    pub stretch: f64,
}

#[derive(Clone, Copy)]
struct RawHit {
    kind: EncounterKind,
    a: f64,
    b: f64,
    u: f64,
    s: f64,
    anchor: u32,
}

/// Finds all encounters of the orbit with itself at section radius `eps`
/// (required below an eighth of the injectivity margin).  Orbit passes are
/// sampled on a uniform grid of at most `dt` (default `eps/4`, which is
/// also the cap); each near-coincidence is probed both directly and
/// against the reversed pass, hits are refined to zero residual time, hits
/// within `2 eps` of each other merge, and entries must stay separated by
/// loops longer than `4 eps`.  Deterministic under parallel execution.
pub fn detect_encounters(
    orbit: &PeriodicOrbit,
    eps: f64,
    dt: Option<f64>,
) -> Result<Vec<Encounter>, FlowError> {
    let grp = orbit.group().clone();
    let max_eps = grp.sigma0() / 8.0;
    if !(eps > 0.0 && eps < max_eps) {
        return Err(FlowError::BadRadius { eps, max: max_eps });
    }
    let dt = dt.unwrap_or(eps / 4.0);
    if !(dt > 0.0 && dt <= eps / 4.0 + 1e-12) {
        return Err(FlowError::BadStep { dt, max: eps / 4.0 });
    }
    let grid = OrbitGrid::build(orbit, dt);
    let step = grid.step;
    let period = grid.period;
    let capture = 2.0 * eps + step + 0.05;
    let deck = grp.deck_indices_within(2.0 * octagon_circumradius() + capture + 0.3);
    let hash = DiskHash::build(&grid, &grp, &deck, capture / 2.0);
    let n = grid.reps.len();

    let per_anchor: Vec<Vec<RawHit>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut found = Vec::new();
            let mi_inv = invert(&grid.reps[i]);
            let a_time = grid.times[i];
            let p = grid.disk[i];
            let r2 = (capture / 2.0) * (capture / 2.0);
            hash.visit(p, |e| {
                let dx = e.x - p.0;
                let dy = e.y - p.1;
                if dx * dx + dy * dy > r2 {
                    return;
                }
                let pm = mi_inv * (grp.cache()[e.deck as usize].mat * grid.reps[e.j as usize]);
                // Direct pass: z(t) = z(grid) . a_(t - t_grid), so the
                // residual decreases with slope one and the exact piercing
                // sits at grid time minus residual, same (u, s).
                if let Ok((u, s, t)) = decompose_cub(&pm) {
                    if u.abs() <= eps && s.abs() <= eps && t.abs() <= step {
                        let b = (grid.times[e.j as usize] - t).rem_euclid(period);
                        if cyclic_gap(a_time, b, period) > 4.0 * eps {
                            found.push(RawHit {
                                kind: EncounterKind::Parallel,
                                a: a_time,
                                b,
                                u,
                                s,
                                anchor: i as u32,
                            });
                        }
                    }
                }
                // Reversed pass: reversing flips the fibre direction, the
                // residual grows with slope one, exact piercing at grid
                // time plus residual.
                if let Ok((u, s, t)) = decompose_cub(&(pm * d_pi())) {
                    if u.abs() <= eps && s.abs() <= eps && t.abs() <= step {
                        let b = (grid.times[e.j as usize] + t).rem_euclid(period);
                        if cyclic_gap(a_time, b, period) > 4.0 * eps {
                            found.push(RawHit {
                                kind: EncounterKind::Antiparallel,
                                a: a_time,
                                b,
                                u,
                                s,
                                anchor: i as u32,
                            });
                        }
                    }
                }
            });
            found
        })
        .collect();

    let hits: Vec<RawHit> = per_anchor.into_iter().flatten().collect();

    // Transitive clustering: hits describe the same encounter when their
    // unordered time pairs agree within 2 eps.
    let mut parent: Vec<u32> = (0..hits.len() as u32).collect();
    fn find(parent: &mut [u32], mut i: u32) -> u32 {
        while parent[i as usize] != i {
            parent[i as usize] = parent[parent[i as usize] as usize];
            i = parent[i as usize];
        }
        i
    }
    let window = 2.0 * eps;
    for i in 0..hits.len() {
        for j in (i + 1)..hits.len() {
            if hits[i].kind != hits[j].kind {
                continue;
            }
            let (hi, hj) = (&hits[i], &hits[j]);
            let straight = cyclic_gap(hi.a, hj.a, period) <= window
                && cyclic_gap(hi.b, hj.b, period) <= window;
            let swapped = cyclic_gap(hi.a, hj.b, period) <= window
                && cyclic_gap(hi.b, hj.a, period) <= window;
            if straight || swapped {
                let (ri, rj) = (find(&mut parent, i as u32), find(&mut parent, j as u32));
                if ri != rj {
                    parent[ri as usize] = rj;
                }
            }
        }
    }

    let mut clusters: HashMap<u32, Vec<usize>> = HashMap::new();
    for i in 0..hits.len() {
        clusters.entry(find(&mut parent, i as u32)).or_default().push(i);
    }
    let signed_offset = |from: f64, to: f64| {
        let mut d = (to - from).rem_euclid(period);
        if d > period / 2.0 {
            d -= period;
        }
        d
    };
    let mut encounters: Vec<Encounter> = clusters
        .into_values()
        .map(|members| {
            // A cluster covers a stretch of hits; report the hit nearest
            // the stretch centre so entry times are stable under grid
            // refinement and map to themselves under time reversal.  Hit
            // pairs are unordered, so orient each against the earliest
            // hit first (whichever assignment moves both times less).
            let &lead = members
                .iter()
                .min_by(|&&x, &&y| {
                    (hits[x].a, hits[x].b)
                        .partial_cmp(&(hits[y].a, hits[y].b))
                        .expect("hit times are finite")
                })
                .expect("cluster is nonempty");
            let (la, lb) = (hits[lead].a, hits[lead].b);
            let mut off_a = Vec::with_capacity(members.len());
            let mut off_b = Vec::with_capacity(members.len());
            let mut straight_members = Vec::new();
            for &m in &members {
                let h = &hits[m];
                let straight_cost =
                    cyclic_gap(h.a, la, period) + cyclic_gap(h.b, lb, period);
                let swapped_cost =
                    cyclic_gap(h.a, lb, period) + cyclic_gap(h.b, la, period);
                let (ta, tb) = if straight_cost <= swapped_cost {
                    straight_members.push(m);
                    (h.a, h.b)
                } else {
                    (h.b, h.a)
                };
                off_a.push(signed_offset(la, ta));
                off_b.push(signed_offset(lb, tb));
            }
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let extent = |v: &[f64]| {
                v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                    - v.iter().cloned().fold(f64::INFINITY, f64::min)
            };
            let centre_a = (la + mean(&off_a)).rem_euclid(period);
            let stretch = extent(&off_a).max(extent(&off_b));
            let &rep = straight_members
                .iter()
                .min_by(|&&x, &&y| {
                    (cyclic_gap(hits[x].a, centre_a, period), hits[x].a, hits[x].b)
                        .partial_cmp(&(
                            cyclic_gap(hits[y].a, centre_a, period),
                            hits[y].a,
                            hits[y].b,
                        ))
                        .expect("hit times are finite")
                })
                .expect("the earliest hit is straight-oriented");
            let h = hits[rep];
            let base = grid.reps[h.anchor as usize];
            let centre = SectionCoords {
                variant: SectionVariant::P,
                u: 0.0,
                s: 0.0,
                base,
                residual_time: 0.0,
            };
            let pass = SectionCoords {
                variant: SectionVariant::P,
                u: h.u,
                s: h.s,
                base,
                residual_time: 0.0,
            };
            Encounter {
                kind: h.kind,
                entries: vec![(h.a, centre), (h.b, pass)],
                radius: h.u.abs().max(h.s.abs()),
                stretch,
            }
        })
        .collect();
    encounters.sort_by(|a, b| {
        (a.entries[0].0, a.entries[1].0)
            .partial_cmp(&(b.entries[0].0, b.entries[1].0))
            .expect("entry times are finite")
    });
    Ok(encounters)
}

fn cyclic_gap(a: f64, b: f64, period: f64) -> f64 {
    let d = (a - b).rem_euclid(period);
    d.min(period - d)
}

// ---------------------------------------------------------------------------
// Orbit reports.

/// Serializable summary of one orbit and its detected structure.
#[derive(Debug, Serialize)]
pub struct OrbitReport {
    pub class_word: Word,
    pub period: f64,
    pub base_matrix: MoebiusElement,
    pub crossings: Vec<Crossing>,
    pub encounters: Vec<Encounter>,
}

pub fn orbit_report(
    orbit: &PeriodicOrbit,
    crossings: Vec<Crossing>,
    encounters: Vec<Encounter>,
) -> OrbitReport {
    OrbitReport {
        class_word: orbit.class().clone(),
        period: orbit.period(),
        base_matrix: *orbit.base().rep(),
        crossings,
        encounters,
    }
}

// ---------------------------------------------------------------------------
// Shared detector infrastructure: a uniform grid of reduced orbit frames
// and a Euclidean spatial hash of their deck translates in the unit disk.

struct OrbitGrid {
    times: Vec<f64>,
    reps: Vec<MoebiusElement>,
    disk: Vec<(f64, f64)>,
    step: f64,
    period: f64,
}

impl OrbitGrid {
    fn build(orbit: &PeriodicOrbit, dt_max: f64) -> OrbitGrid {
        let period = orbit.period();
        let n = ((period / dt_max).ceil() as usize).max(8);
        let step = period / n as f64;
        let stepm = a_t(step);
        let grp = orbit.group();
        let mut cur = grp.dirichlet_reduce(orbit.base().rep()).0;
        let mut times = Vec::with_capacity(n);
        let mut reps = Vec::with_capacity(n);
        let mut disk = Vec::with_capacity(n);
        for k in 0..n {
            times.push(k as f64 * step);
            reps.push(cur);
            disk.push(disk_coords(&cur));
            cur = grp.dirichlet_reduce(&(cur * stepm)).0;
        }
        OrbitGrid { times, reps, disk, step, period }
    }
}

/// Image of the base point in the Poincare disk.  The map from the
/// quotient metric to the disk contracts Euclidean distances by at least
/// a factor two, so a Euclidean query radius of half the target distance
/// is a complete prefilter.
fn disk_coords(m: &MoebiusElement) -> (f64, f64) {
    let (re, im) = act_on_i(m);
    let den = re * re + (im + 1.0) * (im + 1.0);
    ((re * re + im * im - 1.0) / den, (-2.0 * re) / den)
}

#[derive(Clone, Copy)]
struct HashEntry {
    j: u32,
    deck: u32,
    x: f64,
    y: f64,
}

struct DiskHash {
    cell: f64,
    map: HashMap<(i32, i32), Vec<HashEntry>>,
}

impl DiskHash {
    /// Indexes every deck translate of every grid point that lands near
    /// the fundamental octagon (disk radius ~0.84); queries come from
    /// reduced frames, so farther translates can never match.
    fn build(grid: &OrbitGrid, grp: &FuchsianGroup, deck: &[usize], cell: f64) -> DiskHash {
        let keep = 0.845 + 1.5 * cell;
        let keep2 = keep * keep;
        let mut map: HashMap<(i32, i32), Vec<HashEntry>> = HashMap::new();
        for (j, rep) in grid.reps.iter().enumerate() {
            for &di in deck {
                let m = grp.cache()[di].mat * *rep;
                let (x, y) = disk_coords(&m);
                if x * x + y * y > keep2 {
                    continue;
                }
                let key = ((x / cell).floor() as i32, (y / cell).floor() as i32);
                map.entry(key).or_default().push(HashEntry { j: j as u32, deck: di as u32, x, y });
            }
        }
        DiskHash { cell, map }
    }

    /// Visits every entry in the 3x3 block of cells around `p`, which
    /// covers all entries within one cell width of `p`.
    fn visit(&self, p: (f64, f64), mut f: impl FnMut(&HashEntry)) {
        let cx = (p.0 / self.cell).floor() as i32;
        let cy = (p.1 / self.cell).floor() as i32;
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(bucket) = self.map.get(&(cx + dx, cy + dy)) {
                    for e in bucket {
                        f(e);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fuchsian::FuchsianGroup;
    use crate::moebius::d_theta;

    #[test]
    fn flow_is_right_translation_and_reduces_lazily() {
        let grp = FuchsianGroup::octagon_shared();
        let x = QuotientPoint::new(grp.clone(), MoebiusElement::identity());
        let y = x.flow(0.5);
        assert!(
            y.rep().approx_eq(&a_t(0.5), 1e-12),
            "short flows should not trigger a pullback"
        );
        let z = x.flow(12.0);
        assert!(
            z.rep().frobenius_norm() < REDUCE_FROB_LIMIT,
            "long flows must return reduced representatives"
        );
        assert!(x.flow(12.0) == x.flow(6.0).flow(6.0), "flow must be additive");
    }

    #[test]
    fn section_coords_recovers_planted_data() {
        let grp = FuchsianGroup::octagon_shared();
        let x = QuotientPoint::new(grp.clone(), d_theta(0.7) * a_t(0.9));
        let z = QuotientPoint::new(
            grp.clone(),
            *x.rep() * (c_u(0.01) * b_s(0.02) * a_t(0.003)),
        );
        let c = section_coords(&x, &z, SectionVariant::P, 0.05).expect("point is in the section");
        assert!((c.u - 0.01).abs() < 1e-9, "u came back as {}", c.u);
        assert!((c.s - 0.02).abs() < 1e-9, "s came back as {}", c.s);
        assert!(
            (c.residual_time - 0.003).abs() < 1e-9,
            "residual came back as {}",
            c.residual_time
        );
        let rebuilt = QuotientPoint::new(grp.clone(), c.reconstruct());
        assert!(rebuilt == z, "reconstruction must land on the probed point");
    }
}
