//! Matrix representatives of PSL(2,R).
//!
//! Elements are stored as 2x2 real matrices with determinant one, modulo
//! overall sign.  Every constructor and operation renormalizes the
//! determinant and picks the canonical sign: trace >= 0, and for traceless
//! matrices the first nonzero entry (row-major) positive.  All downstream
//! code may therefore assume `trace() == a + d >= 0`.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Determinant drift allowed before an operation is considered broken.
pub const DET_TOL: f64 = 1e-12;
/// Renormalization kicks in when the determinant drifts past this.
const RENORM_TRIGGER: f64 = 1e-14;
/// Below this the trace is treated as zero for sign canonicalization.
const SIGN_TOL: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum MoebiusError {
    #[error("decomposition singular: pivot entry {0:.3e} too close to zero")]
    DecompositionSingular(f64),
    #[error("not hyperbolic: trace {0:.12} <= 2 + 1e-8")]
    NotHyperbolic(f64),
    #[error("matrix logarithm undefined (trace {0:.6} <= -2); canonicalization broken")]
    LogUndefined(f64),
}

/// One-parameter subgroup selector for [`one_param`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OneParamKind {
    /// Diagonal flow direction: `a_t = diag(e^{t/2}, e^{-t/2})`.
    A,
    /// Upper unipotent: `b_s = [[1, s], [0, 1]]` (stable horocycle).
    B,
    /// Lower unipotent: `c_u = [[1, 0], [u, 1]]` (unstable horocycle).
    C,
    /// Rotations: `d_theta`, with `d_pi` the time-reversal frame flip.
    D,
}

/// An element of PSL(2,R): unit-determinant 2x2 matrix modulo sign.
#[derive(Debug, Clone, Copy)]
pub struct MoebiusElement {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
}

impl MoebiusElement {
    /// Builds an element from matrix entries, renormalizing the determinant
    /// and canonicalizing the sign.  Panics when the determinant is not
    /// positive (such input is not a PSL(2,R) representative at all).
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        let det = a * d - b * c;
        assert!(
            det > 0.0 && det.is_finite(),
            "MoebiusElement entries must have positive determinant, got {det}"
        );
        let mut m = Self { a, b, c, d };
        if (det - 1.0).abs() > RENORM_TRIGGER {
            let r = det.sqrt();
            m.a /= r;
            m.b /= r;
            m.c /= r;
            m.d /= r;
        }
        m.canonicalize();
        m
    }

    pub fn identity() -> Self {
        Self { a: 1.0, b: 0.0, c: 0.0, d: 1.0 }
    }

    pub fn from_array(e: [f64; 4]) -> Self {
        Self::new(e[0], e[1], e[2], e[3])
    }

    /// Row-major entries of the canonical representative.
    pub fn entries(&self) -> [f64; 4] {
        [self.a, self.b, self.c, self.d]
    }

    pub fn det(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn frobenius_norm(&self) -> f64 {
        (self.a * self.a + self.b * self.b + self.c * self.c + self.d * self.d).sqrt()
    }

    /// True when the two elements agree entrywise within `tol`
    /// (sign ambiguity already removed by canonicalization).
    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        (self.a - other.a).abs() <= tol
            && (self.b - other.b).abs() <= tol
            && (self.c - other.c).abs() <= tol
            && (self.d - other.d).abs() <= tol
    }

    fn canonicalize(&mut self) {
        let tr = self.a + self.d;
        let flip = if tr.abs() > SIGN_TOL {
            tr < 0.0
        } else {
            // Traceless (rotation by pi, etc): sign of first nonzero entry.
            let mut flip = false;
            for v in [self.a, self.b, self.c, self.d] {
                if v.abs() > SIGN_TOL {
                    flip = v < 0.0;
                    break;
                }
            }
            flip
        };
        if flip {
            self.a = -self.a;
            self.b = -self.b;
            self.c = -self.c;
            self.d = -self.d;
        }
    }
}

impl std::ops::Mul for MoebiusElement {
    type Output = MoebiusElement;
    fn mul(self, rhs: MoebiusElement) -> MoebiusElement {
        compose(&self, &rhs)
    }
}

impl Serialize for MoebiusElement {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.entries().serialize(s)
    }
}

impl<'de> Deserialize<'de> for MoebiusElement {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let e = <[f64; 4]>::deserialize(d)?;
        let det = e[0] * e[3] - e[1] * e[2];
        if !(det > 0.0 && det.is_finite()) {
            return Err(D::Error::custom(format!("invalid determinant {det}")));
        }
        Ok(Self::from_array(e))
    }
}

/// `g * h` with renormalization and sign canonicalization.
pub fn compose(g: &MoebiusElement, h: &MoebiusElement) -> MoebiusElement {
    MoebiusElement::new(
        g.a * h.a + g.b * h.c,
        g.a * h.b + g.b * h.d,
        g.c * h.a + g.d * h.c,
        g.c * h.b + g.d * h.d,
    )
}

pub fn invert(g: &MoebiusElement) -> MoebiusElement {
    MoebiusElement::new(g.d, -g.b, -g.c, g.a)
}

/// `a_t = diag(e^{t/2}, e^{-t/2})`: the geodesic flow direction.
pub fn a_t(t: f64) -> MoebiusElement {
    let e = (t / 2.0).exp();
    MoebiusElement::new(e, 0.0, 0.0, 1.0 / e)
}

/// `b_s = [[1, s], [0, 1]]`.
pub fn b_s(s: f64) -> MoebiusElement {
    MoebiusElement::new(1.0, s, 0.0, 1.0)
}

/// `c_u = [[1, 0], [u, 1]]`.
pub fn c_u(u: f64) -> MoebiusElement {
    MoebiusElement::new(1.0, 0.0, u, 1.0)
}

/// Rotation `d_theta = [[cos(theta/2), -sin(theta/2)], [sin(theta/2), cos(theta/2)]]`.
///
/// The half angle makes `d_theta` rotate unit tangent vectors at the base
/// point by `theta`; `d_{2 pi}` is the identity in PSL(2,R).
pub fn d_theta(theta: f64) -> MoebiusElement {
    let (sin, cos) = (theta / 2.0).sin_cos();
    MoebiusElement::new(cos, -sin, sin, cos)
}

/// The frame flip `d_pi`; canonical representative `[[0, 1], [-1, 0]]`.
pub fn d_pi() -> MoebiusElement {
    MoebiusElement::new(0.0, 1.0, -1.0, 0.0)
}

pub fn one_param(kind: OneParamKind, p: f64) -> MoebiusElement {
    match kind {
        OneParamKind::A => a_t(p),
        OneParamKind::B => b_s(p),
        OneParamKind::C => c_u(p),
        OneParamKind::D => d_theta(p),
    }
}

/// Writes `g = c_u b_s a_t`; returns `(u, s, t)`.
///
/// Valid whenever the upper-left entry is nonzero:
/// `t = 2 ln|a|`, `s = a b`, `u = c / a`.
pub fn decompose_cub(g: &MoebiusElement) -> Result<(f64, f64, f64), MoebiusError> {
    if g.a.abs() < 1e-12 {
        return Err(MoebiusError::DecompositionSingular(g.a));
    }
    let t = 2.0 * g.a.abs().ln();
    let s = g.a * g.b;
    let u = g.c / g.a;
    debug_assert!(reconstruction_ok(&(c_u(u) * b_s(s) * a_t(t)), g));
    Ok((u, s, t))
}

/// Writes `g = b_s c_u a_t`; returns `(s, u, t)`.
///
/// Valid whenever the lower-right entry is nonzero:
/// `t = -2 ln|d|`, `s = b / d`, `u = c d`.
pub fn decompose_bcu(g: &MoebiusElement) -> Result<(f64, f64, f64), MoebiusError> {
    if g.d.abs() < 1e-12 {
        return Err(MoebiusError::DecompositionSingular(g.d));
    }
    let t = -2.0 * g.d.abs().ln();
    let s = g.b / g.d;
    let u = g.c * g.d;
    debug_assert!(reconstruction_ok(&(b_s(s) * c_u(u) * a_t(t)), g));
    Ok((s, u, t))
}

fn reconstruction_ok(rebuilt: &MoebiusElement, g: &MoebiusElement) -> bool {
    rebuilt.approx_eq(g, 1e-9 * g.frobenius_norm().max(1.0))
}

/// PSL trace `|a + d|` (canonical representatives have `a + d >= 0`).
pub fn trace(g: &MoebiusElement) -> f64 {
    (g.a + g.d).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ElementClass {
    Identity,
    Elliptic,
    Parabolic,
    Hyperbolic,
}

/// Classifies by trace: < 2 elliptic, = 2 (within 1e-10) parabolic or
/// identity, > 2 hyperbolic.
pub fn classify(g: &MoebiusElement) -> ElementClass {
    if g.approx_eq(&MoebiusElement::identity(), 1e-10) {
        return ElementClass::Identity;
    }
    let tr = trace(g);
    if (tr - 2.0).abs() <= 1e-10 {
        ElementClass::Parabolic
    } else if tr < 2.0 {
        ElementClass::Elliptic
    } else {
        ElementClass::Hyperbolic
    }
}

/// Conjugates a hyperbolic element onto the diagonal flow:
/// `g = p a_T p^{-1}` with `T = 2 arccosh(trace/2) > 0`.
///
/// The columns of `p` are the expanding and contracting eigenvectors,
/// scaled so that `det p = 1` and the first column has positive first
/// entry (positive second entry if the first vanishes).
pub fn axis_normal_form(g: &MoebiusElement) -> Result<(MoebiusElement, f64), MoebiusError> {
    let tr = trace(g);
    if tr < 2.0 + 1e-8 {
        return Err(MoebiusError::NotHyperbolic(tr));
    }
    let half = tr / 2.0;
    let period = 2.0 * half.acosh();
    let lam = half + (half * half - 1.0).sqrt(); // e^{T/2}
    let lam_inv = 1.0 / lam;

    // Eigenvector for eigenvalue lam: rows of (g - lam I) give two
    // candidates; take the better conditioned one.
    let eigvec = |lambda: f64| -> (f64, f64) {
        let v1 = (g.b, lambda - g.a);
        let v2 = (lambda - g.d, g.c);
        let n1 = v1.0 * v1.0 + v1.1 * v1.1;
        let n2 = v2.0 * v2.0 + v2.1 * v2.1;
        let (mut x, mut y) = if n1 >= n2 { v1 } else { v2 };
        let n = (x * x + y * y).sqrt();
        x /= n;
        y /= n;
        (x, y)
    };
    let (mut px, mut py) = eigvec(lam);
    let (mut qx, mut qy) = eigvec(lam_inv);
    if px < 0.0 || (px == 0.0 && py < 0.0) {
        px = -px;
        py = -py;
    }
    let det0 = px * qy - py * qx;
    if det0.abs() < 1e-12 {
        // Eigenvectors collapsed: numerically parabolic after all.
        return Err(MoebiusError::NotHyperbolic(tr));
    }
    qx /= det0;
    qy /= det0;
    let p = MoebiusElement::new(px, qx, py, qy);
    Ok((p, period))
}

/// Boundary fixed points `(attracting, repelling)` of a hyperbolic
/// element acting on the real line (infinity encoded as `f64::INFINITY`).
/// Returns None for non-hyperbolic input.
///
/// The fixed points solve `c z^2 + (d - a) z - b = 0`; the discriminant
/// equals `trace^2 - 4` by the determinant relation, and the Moebius
/// derivative `1/(c z + d)^2` separates attracting (|c z + d| > 1) from
/// repelling, with the product of the two `(c z + d)` values exactly 1.
pub fn boundary_fixed_points(g: &MoebiusElement) -> Option<(f64, f64)> {
    let tr = trace(g);
    if tr <= 2.0 {
        return None;
    }
    let (a, b, c, d) = (g.a, g.b, g.c, g.d);
    if c == 0.0 {
        let finite = b / (d - a);
        return Some(if a.abs() > d.abs() {
            (f64::INFINITY, finite)
        } else {
            (finite, f64::INFINITY)
        });
    }
    let sq = (tr * tr - 4.0).sqrt();
    let lin = d - a;
    // stable quadratic: q is never near zero because sq > 0
    let q = -(lin + lin.signum() * sq) / 2.0;
    let r1 = q / c;
    let r2 = -b / q;
    if (c * r1 + d).abs() > 1.0 {
        Some((r1, r2))
    } else {
        Some((r2, r1))
    }
}

/// Principal matrix logarithm of the canonical representative, returned
/// row-major.  Always defined because canonical traces are nonnegative
/// (rotation angles stay below pi).
fn principal_log(g: &MoebiusElement) -> [f64; 4] {
    let half = (g.a + g.d) / 2.0;
    // canonical trace is >= 0 up to the traceless dead zone (SIGN_TOL)
    debug_assert!(half > -1e-9, "canonicalization should force trace >= 0, got {}", 2.0 * half);
    // g = half*I + N with N traceless; log g = f * N.
    let (na, nb, nc, nd) = (g.a - half, g.b, g.c, g.d - half);
    let f = if half > 1.0 + 1e-14 {
        let delta = half.acosh();
        delta / delta.sinh()
    } else if half < 1.0 - 1e-14 {
        let delta = half.clamp(-1.0, 1.0).acos();
        if delta < 1e-18 {
            1.0
        } else {
            delta / delta.sin()
        }
    } else {
        1.0
    };
    [f * na, f * nb, f * nc, f * nd]
}

/// Left-invariant distance on PSL(2,R): `sqrt(2) * ||log(g^{-1} h)||_F`.
///
/// The scale makes the geodesic flow unit speed:
/// `group_distance(e, a_t) = |t|`.
pub fn group_distance(g: &MoebiusElement, h: &MoebiusElement) -> f64 {
    displacement(&(invert(g) * *h))
}

/// `group_distance(identity, g)` without forming the product.
pub fn displacement(g: &MoebiusElement) -> f64 {
    let l = principal_log(g);
    (2.0 * (l[0] * l[0] + l[1] * l[1] + l[2] * l[2] + l[3] * l[3])).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_sign_flips_negative_trace() {
        let g = MoebiusElement::new(-2.0, 0.0, 0.0, -0.5);
        assert!(g.entries()[0] > 0.0);
        assert!(trace(&g) > 0.0);
    }

    #[test]
    fn traceless_sign_uses_first_nonzero_entry() {
        // d_pi built from the rotation formula has entries [[0,-1],[1,0]];
        // canonical form must be [[0,1],[-1,0]].
        let g = d_theta(std::f64::consts::PI);
        let e = g.entries();
        assert!((e[0]).abs() < 1e-15 && (e[1] - 1.0).abs() < 1e-15);
        assert!((e[2] + 1.0).abs() < 1e-15 && (e[3]).abs() < 1e-15);
        assert!(g.approx_eq(&d_pi(), 1e-15));
    }

    #[test]
    fn renormalization_keeps_det_tight() {
        let mut g = a_t(0.37);
        for _ in 0..2000 {
            g = g * b_s(0.11) * c_u(-0.07) * a_t(0.013);
        }
        assert!((g.det() - 1.0).abs() <= DET_TOL, "det drifted: {}", g.det());
    }

    #[test]
    fn d_pi_squares_to_identity() {
        let sq = d_pi() * d_pi();
        assert!(sq.approx_eq(&MoebiusElement::identity(), 1e-15));
    }
}
