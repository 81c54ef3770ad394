//! Constructive closing of near-returns.
//!
//! Given a trajectory segment that comes back into a small section of its
//! starting frame, these routines produce the exact periodic orbit that
//! shadows it: the return is witnessed by a deck element ζ (identified as
//! a group word), the new orbit is the axis of ζ, and the unique periodic
//! point inside the section chart is computed in closed form from the
//! boundary fixed points of ζ conjugated into the start frame.  Every
//! quantitative claim — period shift, shadowing distance, section
//! coordinates of the periodic point — is re-measured on the constructed
//! orbit and recorded in a [`BoundReport`].
//!
//! `close_orbit_i` / `close_orbit_ii` handle a single near-return in the
//! two section conventions; `connect_orbits` splices two periodic orbits
//! whose base points nearly agree into one orbit of the combined class.

use serde::Serialize;
use std::sync::Arc;
use thiserror::Error;

use crate::flow::{
    section_coords, FlowError, PeriodicOrbit, QuotientPoint, SectionCoords, SectionVariant,
};
use crate::fuchsian::{primitive_root, reduce_word, FuchsianError, FuchsianGroup, Word};
use crate::moebius::{a_t, b_s, boundary_fixed_points, c_u, invert, trace, MoebiusElement};

/// Most negative slack tolerated in a passing bound report; absorbs
/// floating-point noise when a bound's right-hand side is exactly zero
/// (degenerate returns).
pub const SLACK_FLOOR: f64 = -1e-12;

/// One verified inequality: `lhs < rhs` claimed, `slack = rhs - lhs`.
#[derive(Debug, Clone, Serialize)]
pub struct Bound {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
}

/// Collected bound checks for one construction.
#[derive(Debug, Clone, Default, Serialize)]
#[serde(transparent)]
pub struct BoundReport {
    pub bounds: Vec<Bound>,
}

impl BoundReport {
    pub fn record(&mut self, name: &str, lhs: f64, rhs: f64) {
        self.bounds.push(Bound { name: name.to_string(), lhs, rhs, slack: rhs - lhs });
    }

    /// True when every recorded slack clears [`SLACK_FLOOR`].
    pub fn all_hold(&self) -> bool {
        self.bounds.iter().all(|b| b.slack >= SLACK_FLOOR)
    }

    /// Entry with the smallest slack, if any bounds were recorded.
    pub fn worst(&self) -> Option<&Bound> {
        self.bounds
            .iter()
            .min_by(|a, b| a.slack.partial_cmp(&b.slack).expect("slacks are finite"))
    }
}

#[derive(Debug, Error)]
pub enum ClosingError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("deck identification failed: {0}")]
    Identify(#[from] FuchsianError),
    #[error("flow-layer failure: {0}")]
    Flow(#[from] FlowError),
    #[error("certified bound violated: {worst}")]
    BoundViolated { worst: String, report: BoundReport },
}

/// Tunables shared by all closing routines.  `metric_factor` rescales the
/// shadowing thresholds (for comparing against results stated in another
/// metric normalization); `shadow_step` is the time grid for shadowing
/// verification.
#[derive(Debug, Clone, Copy)]
pub struct ClosingOptions {
    pub metric_factor: f64,
    pub shadow_step: f64,
}

impl Default for ClosingOptions {
    fn default() -> Self {
        ClosingOptions { metric_factor: 1.0, shadow_step: 0.1 }
    }
}

/// Outcome of a closing or connecting construction.
///
/// `zeta_word` is the exact deck element witnessing the return;
/// `new_orbit` is the primitive orbit underlying its axis and `power` the
/// exponent (`t_new` ≈ `power` × primitive period — 1 for generic
/// returns, larger when the return doubles an existing orbit).  `sigma`
/// and `eta` are the measured section coordinates of the new periodic
/// point relative to the input frame.
#[derive(Debug, Clone)]
pub struct ClosingResult {
    pub new_orbit: PeriodicOrbit,
    pub zeta_word: Word,
    pub power: u32,
    pub sigma: f64,
    pub eta: f64,
    pub t_new: f64,
    pub bound_report: BoundReport,
}

/// Serializable summary of a [`ClosingResult`].
#[derive(Debug, Clone, Serialize)]
pub struct ClosingReport {
    pub zeta_word: Word,
    pub class_word: Word,
    pub power: u32,
    pub sigma: f64,
    pub eta: f64,
    pub t_new: f64,
    pub orbit_period: f64,
    pub bounds: BoundReport,
}

impl ClosingResult {
    pub fn report(&self) -> ClosingReport {
        ClosingReport {
            zeta_word: self.zeta_word.clone(),
            class_word: self.new_orbit.class().clone(),
            power: self.power,
            sigma: self.sigma,
            eta: self.eta,
            t_new: self.t_new,
            orbit_period: self.new_orbit.period(),
            bounds: self.bound_report.clone(),
        }
    }
}

/// Comparing two trajectories over a span `t` cannot resolve distances
/// below the flow's conditioning envelope e^t · machine epsilon; bound
/// thresholds are floored there so that degenerate (exact-return) cases
/// with an analytic threshold of zero remain checkable.
pub(crate) fn shadow_floor(span: f64) -> f64 {
    1e-9 + 3.0e-14 * span.exp()
}

/// Flat resolution of probed section data: reducing a representative that
/// was flowed over `span` leaves ~1e-11 of noise on any coordinate read
/// off afterwards, growing mildly with the span.  Thresholds that decay
/// like e^(-span) dip below this and are padded by it.
pub(crate) fn probe_resolution(span: f64) -> f64 {
    1e-11 + 5e-12 * span.abs()
}

/// Frames carried through a chain of identification legs accumulate noise
/// amplified by the exponential of the total span; a claim that such a
/// frame lands exactly on a section centre is only checkable down to this
/// envelope.
pub(crate) fn chain_resolution(span: f64) -> f64 {
    1e-9 + 1e-11 * span.exp()
}

/// Largest distance between `a.flow(a_off + t)` and `b.flow(t)` over the
/// grid `t = 0, step, 2·step, …, span`.
pub(crate) fn shadow_max(
    a: &QuotientPoint,
    a_off: f64,
    b: &QuotientPoint,
    span: f64,
    step: f64,
) -> f64 {
    let n = (span / step).ceil().max(1.0) as usize;
    let mut worst = 0.0f64;
    for k in 0..=n {
        let t = (k as f64 * step).min(span);
        let d = a.flow(a_off + t).distance(&b.flow(t));
        if d > worst {
            worst = d;
        }
    }
    worst
}

/// Section coordinates of the unique ζ-periodic point inside the chart,
/// from the boundary fixed points of `n = g⁻¹ ζ g`: the periodic point's
/// frame conjugates the diagonal flow, so its unstable/stable coordinates
/// are rational in the attracting/repelling fixed points.
pub(crate) fn section_fixed_coords(
    n: &MoebiusElement,
    variant: SectionVariant,
) -> Option<(f64, f64)> {
    let (att, rep) = boundary_fixed_points(n)?;
    match variant {
        SectionVariant::P => {
            // frame c_sigma b_eta maps (0, infinity) to (eta/(sigma eta + 1), 1/sigma)
            let sigma = if att.is_infinite() { 0.0 } else { 1.0 / att };
            if rep.is_infinite() {
                return None;
            }
            let den = 1.0 - sigma * rep;
            if den == 0.0 {
                return None;
            }
            Some((sigma, rep / den))
        }
        SectionVariant::Pprime => {
            // frame b_eta c_sigma maps (0, infinity) to (eta, eta + 1/sigma)
            if rep.is_infinite() {
                return None;
            }
            let sigma = if att.is_infinite() { 0.0 } else { 1.0 / (att - rep) };
            Some((sigma, rep))
        }
    }
}

pub(crate) fn section_matrix(variant: SectionVariant, u: f64, s: f64) -> MoebiusElement {
    match variant {
        SectionVariant::P => c_u(u) * b_s(s),
        SectionVariant::Pprime => b_s(s) * c_u(u),
    }
}

/// Shared implementation of the two single-return closings.
fn close_single(
    x: &QuotientPoint,
    t_return: f64,
    coords: &SectionCoords,
    variant: SectionVariant,
    opts: &ClosingOptions,
) -> Result<ClosingResult, ClosingError> {
    if coords.variant != variant {
        return Err(ClosingError::Precondition(format!(
            "section variant mismatch: coords are {:?}, routine expects {:?}",
            coords.variant, variant
        )));
    }
    let (u, s) = (coords.u, coords.s);
    if !(u.abs() < 0.25 && s.abs() < 0.25) {
        return Err(ClosingError::Precondition(format!(
            "section coordinates ({u}, {s}) must stay below 1/4"
        )));
    }
    // Fold the probe residual into the return time: the segment that ends
    // exactly on the section has length t_return - residual.
    let t_eff = t_return - coords.residual_time;
    if t_eff < 1.0 {
        return Err(ClosingError::Precondition(format!(
            "effective return time {t_eff} is below 1"
        )));
    }
    let grp = x.group().clone();
    let g = *x.rep();
    let zeta_word = grp.identify(&(g * a_t(t_eff)), &(g * section_matrix(variant, u, s)), 1e-3)?;
    let zeta = grp.evaluate_word(&zeta_word);
    let tr = trace(&zeta);
    if tr < 2.0 + 1e-10 {
        return Err(ClosingError::Precondition(format!(
            "return element has trace {tr}, not hyperbolic"
        )));
    }
    let t_new = 2.0 * (tr / 2.0).acosh();

    let n = invert(&g) * (zeta * g);
    let (sigma0, eta0) = section_fixed_coords(&n, variant).ok_or_else(|| {
        ClosingError::Precondition("periodic point escapes the section chart".to_string())
    })?;
    let x_prime = QuotientPoint::new(grp.clone(), g * section_matrix(variant, sigma0, eta0));

    // Independent probe re-measures the coordinates; construction and
    // measurement must agree.
    let probe_eps = (2.0 * u.abs().max(s.abs())).clamp(1e-6, 0.2499);
    let probe = section_coords(x, &x_prime, variant, probe_eps)?;
    let (sigma, eta) = (probe.u, probe.s);
    assert!(
        (sigma - sigma0).abs() < 1e-6 && (eta - eta0).abs() < 1e-6 && probe.residual_time.abs() < 1e-6,
        "fixed-point coordinates ({sigma0}, {eta0}) disagree with the section probe ({sigma}, {eta}, residual {})",
        probe.residual_time
    );
    let drift = x_prime.flow(t_new).distance(&x_prime);
    assert!(
        drift < 1e-6 + 3e-13 * t_new.exp(),
        "constructed point is not periodic: drift {drift:.3e} over period {t_new}"
    );

    let mut report = BoundReport::default();
    let us = u * s;
    match variant {
        SectionVariant::P => report.record(
            "period shift",
            ((t_new - t_eff) / 2.0 - us.ln_1p()).abs(),
            5.0 * us.abs() * (-t_eff).exp() + probe_resolution(t_eff),
        ),
        SectionVariant::Pprime => report.record(
            "period shift",
            ((t_new - t_eff) / 2.0).abs(),
            4.0 * us.abs() * (-t_eff).exp() + probe_resolution(t_eff),
        ),
    }
    report.record(
        "sigma",
        sigma.abs(),
        2.0 * u.abs() * (-t_eff).exp() + probe_resolution(t_eff),
    );
    report.record("eta", eta.abs(), 1.5 * s.abs());
    let shadow = shadow_max(x, 0.0, &x_prime, t_eff, opts.shadow_step);
    let shadow_rhs =
        ((2.0 * u.abs() + eta.abs()) * opts.metric_factor).max(shadow_floor(t_eff));
    report.record("shadowing", shadow, shadow_rhs);

    finish(grp, zeta_word, sigma, eta, t_new, report)
}

fn finish(
    grp: std::sync::Arc<FuchsianGroup>,
    zeta_word: Word,
    sigma: f64,
    eta: f64,
    t_new: f64,
    report: BoundReport,
) -> Result<ClosingResult, ClosingError> {
    if !report.all_hold() {
        let worst = report
            .worst()
            .map(|b| format!("{} (lhs {:.6e}, rhs {:.6e})", b.name, b.lhs, b.rhs))
            .unwrap_or_else(|| "empty report".to_string());
        return Err(ClosingError::BoundViolated { worst, report });
    }
    let (root, power) = primitive_root(&zeta_word);
    let new_orbit = PeriodicOrbit::from_class(&grp, &root)?;
    let t_check = power as f64 * new_orbit.period();
    assert!(
        (t_new - t_check).abs() < 1e-9 * power as f64,
        "trace-derived period {t_new} disagrees with {power} x primitive period {t_check}"
    );
    Ok(ClosingResult { new_orbit, zeta_word, power, sigma, eta, t_new, bound_report: report })
}

/// Closes a near-return expressed in the unstable-first section chart:
/// the segment from `x` of duration `t_return` ends at
/// `x · c_u b_s a_residual`.  Returns the periodic orbit shadowing the
/// segment, with certified period-shift, coordinate, and shadowing
/// bounds.
pub fn close_orbit_i(
    x: &QuotientPoint,
    t_return: f64,
    coords: &SectionCoords,
) -> Result<ClosingResult, ClosingError> {
    close_single(x, t_return, coords, SectionVariant::P, &ClosingOptions::default())
}

pub fn close_orbit_i_with(
    x: &QuotientPoint,
    t_return: f64,
    coords: &SectionCoords,
    opts: &ClosingOptions,
) -> Result<ClosingResult, ClosingError> {
    close_single(x, t_return, coords, SectionVariant::P, opts)
}

/// As [`close_orbit_i`] for the stable-first section chart
/// (`x · b_s c_u a_residual`), whose period shift carries no logarithmic
/// correction.
pub fn close_orbit_ii(
    x: &QuotientPoint,
    t_return: f64,
    coords: &SectionCoords,
) -> Result<ClosingResult, ClosingError> {
    close_single(x, t_return, coords, SectionVariant::Pprime, &ClosingOptions::default())
}

pub fn close_orbit_ii_with(
    x: &QuotientPoint,
    t_return: f64,
    coords: &SectionCoords,
    opts: &ClosingOptions,
) -> Result<ClosingResult, ClosingError> {
    close_single(x, t_return, coords, SectionVariant::Pprime, opts)
}

/// Splices two periodic orbits into one: `coords` locates `o2`'s base
/// point inside the unstable-first section of `o1`'s base point, and the
/// result is the periodic orbit of the combined class (`o2`'s word times
/// `o1`'s word, both based at the given points), shadowing `o1` for one
/// period and then `o2` for one period.
pub fn connect_orbits(
    o1: &PeriodicOrbit,
    o2: &PeriodicOrbit,
    coords: &SectionCoords,
) -> Result<ClosingResult, ClosingError> {
    connect_orbits_with(o1, o2, coords, &ClosingOptions::default())
}

pub fn connect_orbits_with(
    o1: &PeriodicOrbit,
    o2: &PeriodicOrbit,
    coords: &SectionCoords,
    opts: &ClosingOptions,
) -> Result<ClosingResult, ClosingError> {
    if coords.variant != SectionVariant::P {
        return Err(ClosingError::Precondition(
            "connecting requires unstable-first section coordinates".to_string(),
        ));
    }
    // Fold the probe residual: the point x1 · c_u b_s sits exactly on
    // o2's orbit (it is o2's base flowed by minus the residual), and is
    // periodic with the same period.
    let grp = o1.group().clone();
    let core = connect_frames(
        &grp,
        *o1.base().rep(),
        o1.period(),
        coords.u,
        coords.s,
        o2.period(),
        opts,
    )?;
    finish(
        grp,
        core.zeta_word,
        core.sigma,
        core.eta,
        core.t_new,
        core.report,
    )
}

/// Output of the frame-level connecting construction.
pub(crate) struct ConnectCore {
    pub zeta_word: Word,
    pub t_new: f64,
    pub sigma: f64,
    pub eta: f64,
    /// Exact frame of the new periodic point, `g1 · c_(ue^-t1 + sigma) b_eta`.
    pub v_frame: MoebiusElement,
    pub report: BoundReport,
}

/// Frame-level core of the connecting construction: the frame `g1` lies
/// on an orbit of period `t1`, and `g1 · c_u b_s` lies on another orbit
/// of period `t2`.  Splices the two into the single orbit of the product
/// element and produces its periodic point in `g1`'s chart in closed
/// form, with the shadowing of both legs measured and recorded.
pub(crate) fn connect_frames(
    grp: &Arc<FuchsianGroup>,
    g1: MoebiusElement,
    t1: f64,
    u: f64,
    s: f64,
    t2: f64,
    opts: &ClosingOptions,
) -> Result<ConnectCore, ClosingError> {
    if !(u.abs() < 0.25 && s.abs() < 0.25) {
        return Err(ClosingError::Precondition(format!(
            "section coordinates ({u}, {s}) must stay below 1/4"
        )));
    }
    if t1 + t2 < 1.0 {
        return Err(ClosingError::Precondition(format!(
            "combined period {} is below 1",
            t1 + t2
        )));
    }
    let grp = grp.clone();
    let h = g1 * (c_u(u) * b_s(s));
    let w1 = grp.identify(&(g1 * a_t(t1)), &g1, 1e-3)?;
    let w2 = grp.identify(&(h * a_t(t2)), &h, 1e-3)?;
    // The element fixing the point in x1's chart traverses leg 1 first:
    // its unstable fixed direction must come from the leg-2 factor seen
    // through a_{T1}, so the leg-1 word multiplies on the left.
    let zeta_word = reduce_word(&w1.concat(&w2));
    let zeta = grp.evaluate_word(&zeta_word);
    let tr = trace(&zeta);
    if tr < 2.0 + 1e-10 {
        return Err(ClosingError::Precondition(format!(
            "combined element has trace {tr}, not hyperbolic"
        )));
    }
    let t_new = 2.0 * (tr / 2.0).acosh();

    // The new periodic point lies at c-coordinate u e^{-T1} + sigma in
    // x1's frame; measure it against the shifted centre so that sigma is
    // read off directly.
    let n = invert(&g1) * (zeta * g1);
    let (w_coord, eta0) = section_fixed_coords(&n, SectionVariant::P).ok_or_else(|| {
        ClosingError::Precondition("periodic point escapes the section chart".to_string())
    })?;
    let drift_u = u * (-t1).exp();
    let sigma0 = w_coord - drift_u;
    let v_frame = g1 * (c_u(w_coord) * b_s(eta0));
    let x_new = QuotientPoint::new(grp.clone(), v_frame);
    let centre = QuotientPoint::new(grp.clone(), g1 * c_u(drift_u));
    let probe_eps = (2.0 * u.abs().max(s.abs())).clamp(1e-6, 0.2499);
    let probe = section_coords(&centre, &x_new, SectionVariant::P, probe_eps)?;
    let (sigma, eta) = (probe.u, probe.s);
    assert!(
        (sigma - sigma0).abs() < 1e-6 && (eta - eta0).abs() < 1e-6 && probe.residual_time.abs() < 1e-6,
        "fixed-point coordinates ({sigma0}, {eta0}) disagree with the section probe ({sigma}, {eta}, residual {})",
        probe.residual_time
    );
    let drift = x_new.flow(t_new).distance(&x_new);
    assert!(
        drift < 1e-6 + 3e-13 * t_new.exp(),
        "constructed point is not periodic: drift {drift:.3e} over period {t_new}"
    );

    let mut report = BoundReport::default();
    let us = u * s;
    report.record(
        "period shift",
        ((t_new - (t1 + t2)) / 2.0 - us.ln_1p()).abs(),
        7.0 * us.abs() * ((-t1).exp() + (-t2).exp()) + probe_resolution(t1 + t2),
    );
    report.record(
        "sigma",
        sigma.abs(),
        2.0 * u.abs() * (-(t1 + t2)).exp() + probe_resolution(t1 + t2),
    );
    report.record("eta", eta.abs(), 1.5 * s.abs());
    let eps_hyp = u.abs().max(s.abs());
    let x1 = QuotientPoint::new(grp.clone(), g1);
    let x2 = QuotientPoint::new(grp.clone(), h);
    let leg1 = shadow_max(&x_new, 0.0, &x1, t1, opts.shadow_step);
    report.record(
        "shadowing leg 1",
        leg1,
        (5.0 * eps_hyp * opts.metric_factor).max(shadow_floor(t1)),
    );
    let leg2 = shadow_max(&x_new, t1, &x2, t2, opts.shadow_step);
    report.record(
        "shadowing leg 2",
        leg2,
        (5.0 * eps_hyp * opts.metric_factor).max(shadow_floor(t1 + t2)),
    );

    Ok(ConnectCore {
        zeta_word,
        t_new,
        sigma,
        eta,
        v_frame,
        report,
    })
}

/// A place where `o2`'s trajectory passes through the section chart of a
/// point on `o1`: `o2.point_at(t2)` has coordinates `(u, s)` with zero
/// residual in the chart of `o1.point_at(t1)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SectionMeeting {
    pub t1: f64,
    pub t2: f64,
    pub u: f64,
    pub s: f64,
}

/// Scans for section meetings of radius `eps` between two orbits (or one
/// orbit and itself): `t1` runs over a grid of pitch `step`, and for each
/// chart the deck ball is searched exactly — the chart coordinates of
/// `g1⁻¹ δ g2 a_t` do not depend on `t`, and the fiber time that zeroes
/// the residual is read off the matrix, so reported meetings are exact,
/// not grid-quantized.  Meetings whose connecting deck element falls
/// outside the cached ball are not reported.
pub fn find_section_meetings(
    o1: &PeriodicOrbit,
    o2: &PeriodicOrbit,
    eps: f64,
    step: f64,
) -> Vec<SectionMeeting> {
    let grp = o1.group();
    let g2 = *o2.base().rep();
    let mut out = Vec::new();
    let n = ((o1.period() / step).ceil() as usize).max(1);
    for k in 0..n {
        let t1 = k as f64 * o1.period() / n as f64;
        let g1 = *o1.point_at(t1).rep();
        let g1i = invert(&g1);
        for ce in grp.cache() {
            let m = g1i * (ce.mat * g2);
            let [a, b, c, _d] = m.entries();
            if a.abs() < 1e-9 {
                continue;
            }
            let u = c / a;
            let s = a * b;
            if u.abs() <= eps && s.abs() <= eps {
                let t2 = (-2.0 * a.abs().ln()).rem_euclid(o2.period());
                out.push(SectionMeeting { t1, t2, u, s });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_point_coords_invert_the_section_frames() {
        // plant sigma, eta, T; the conjugated diagonal element must give
        // them back through its boundary fixed points
        for &(sig, eta, t) in
            &[(0.02, -0.13, 3.0), (-1e-4, 1e-3, 7.5), (0.0, 0.2, 2.0), (0.14, 0.0, 11.0)]
        {
            for variant in [SectionVariant::P, SectionVariant::Pprime] {
                let m = section_matrix(variant, sig, eta);
                let n = m * a_t(t) * invert(&m);
                let (s2, e2) = section_fixed_coords(&n, variant).expect("hyperbolic by design");
                assert!(
                    (s2 - sig).abs() < 1e-10 && (e2 - eta).abs() < 1e-10,
                    "{variant:?}: planted ({sig}, {eta}), recovered ({s2}, {e2})"
                );
            }
        }
    }
}
