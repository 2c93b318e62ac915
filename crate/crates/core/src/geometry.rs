//! The spatial domain, its signed distance and the boundary-layer cutoffs.
//!
//! The domain is a 1-D open interval `(lo, hi)` split into `cells` uniform
//! finite-volume cells. Cell `i` covers `[lo + i h, lo + (i + 1) h]`; faces
//! are numbered `0..=cells` from left to right.

use std::sync::OnceLock;

use thiserror::Error;

use crate::quadrature::GaussLegendre;
use crate::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid domain: lo = {lo}, hi = {hi}, cells = {cells} (need lo < hi and cells >= 4)")]
    InvalidDomain { lo: f64, hi: f64, cells: usize },
    #[error("extended normal is ambiguous at x = {x}: both endpoints are equidistant")]
    AmbiguousNormal { x: f64 },
    #[error("cutoff parameter beta = {beta} must lie in (0, 1)")]
    InvalidBeta { beta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain<T> {
    lo: T,
    hi: T,
    cells: usize,
}

impl<T: Real> Domain<T> {
    pub fn new(lo: T, hi: T, cells: usize) -> Result<Self, GeometryError> {
        if !(lo < hi) || cells < 4 || !(hi - lo).is_finite() {
            return Err(GeometryError::InvalidDomain {
                lo: lo.as_f64(),
                hi: hi.as_f64(),
                cells,
            });
        }
        Ok(Self { lo, hi, cells })
    }

    /// The unit interval with `cells` cells.
    pub fn unit(cells: usize) -> Result<Self, GeometryError> {
        Self::new(T::zero(), T::one(), cells)
    }

    pub fn lo(&self) -> T {
        self.lo
    }

    pub fn hi(&self) -> T {
        self.hi
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn length(&self) -> T {
        self.hi - self.lo
    }

    /// Uniform cell width.
    pub fn h(&self) -> T {
        self.length() / T::of_usize(self.cells)
    }

    pub fn center(&self, i: usize) -> T {
        self.lo + (T::of_usize(i) + T::lit(0.5)) * self.h()
    }

    pub fn face(&self, f: usize) -> T {
        self.lo + T::of_usize(f) * self.h()
    }

    pub fn centers(&self) -> Vec<T> {
        (0..self.cells).map(|i| self.center(i)).collect()
    }

    pub fn contains(&self, x: T) -> bool {
        x > self.lo && x < self.hi
    }

    /// Signed distance to the boundary: positive inside, negative outside.
    pub fn signed_distance(&self, x: T) -> T {
        if x >= self.lo && x <= self.hi {
            (x - self.lo).min(self.hi - x)
        } else if x < self.lo {
            x - self.lo
        } else {
            self.hi - x
        }
    }

    /// Outward unit normal of the nearest boundary point, extended inside.
    pub fn extended_normal(&self, x: T) -> Result<T, GeometryError> {
        let to_lo = (x - self.lo).abs();
        let to_hi = (self.hi - x).abs();
        if to_lo < to_hi {
            Ok(-T::one())
        } else if to_hi < to_lo {
            Ok(T::one())
        } else {
            Err(GeometryError::AmbiguousNormal { x: x.as_f64() })
        }
    }

    /// Measure of `{x in Q : d(x) <= c1 * ell}`.
    pub fn boundary_layer_measure(&self, ell: T, c1: T) -> T {
        let width = (c1 * ell).max(T::zero());
        (T::lit(2.0) * width).min(self.length())
    }
}

/// Parameters of the cutoff `phi_beta`, which vanishes within
/// `beta^gamma / 2` of the boundary and equals one beyond
/// `beta + 3/2 beta^gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffParams<T> {
    pub beta: T,
    pub m: T,
    pub gamma_m: T,
}

impl<T: Real> CutoffParams<T> {
    /// Uses the inner-layer exponent `gamma_m = min(m + 2, 3)`.
    pub fn new(beta: T, m: T) -> Result<Self, GeometryError> {
        let gamma_m = (m + T::lit(2.0)).min(T::lit(3.0));
        Self::with_gamma(beta, m, gamma_m)
    }

    pub fn with_gamma(beta: T, m: T, gamma_m: T) -> Result<Self, GeometryError> {
        if !(beta > T::zero() && beta < T::one()) {
            return Err(GeometryError::InvalidBeta {
                beta: beta.as_f64(),
            });
        }
        Ok(Self { beta, m, gamma_m })
    }

    /// Width `beta^gamma` of the dead layer of the piecewise-linear profile.
    fn inner(&self) -> T {
        self.beta.powf(self.gamma_m)
    }

    fn radius(&self) -> T {
        self.inner() * T::lit(0.5)
    }
}

/// Unit bump `exp(-1/(1-s^2))` on `(-1, 1)` and its normalized moments,
/// tabulated through Gauss–Legendre quadrature in `f64`.
struct Bump {
    rule: GaussLegendre<f64>,
    norm: f64,
}

const PANEL: f64 = 0.0625;

fn bump() -> &'static Bump {
    static BUMP: OnceLock<Bump> = OnceLock::new();
    BUMP.get_or_init(|| {
        let rule = GaussLegendre::new(16);
        let norm = (0..(2.0 / PANEL) as usize)
            .map(|i| {
                let a = -1.0 + PANEL * i as f64;
                rule.integrate(a, a + PANEL, raw_bump)
            })
            .sum();
        Bump { rule, norm }
    })
}

fn raw_bump(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - s * s)).exp()
    }
}

impl Bump {
    fn density(&self, s: f64) -> f64 {
        raw_bump(s) / self.norm
    }

    /// `int_{-1}^{s} rho` and `int_{-1}^{s} u rho(u) du`.
    fn moments(&self, s: f64) -> (f64, f64) {
        if s <= -1.0 {
            return (0.0, 0.0);
        }
        if s >= 1.0 {
            return (1.0, 0.0);
        }
        // Composite panels: the bump is flat to all orders at -1, which a
        // single high-order rule resolves poorly.
        let panels = ((s + 1.0) / PANEL).ceil().max(1.0) as usize;
        let w = (s + 1.0) / panels as f64;
        let mut k = 0.0;
        let mut mm = 0.0;
        for i in 0..panels {
            let a = -1.0 + w * i as f64;
            k += self.rule.integrate(a, a + w, raw_bump);
            mm += self.rule.integrate(a, a + w, |u| u * raw_bump(u));
        }
        (k / self.norm, mm / self.norm)
    }
}

/// Mollified ramp `J(s) = int_{-r}^{s} K`, with `K` the kernel's CDF at scale `r`.
/// Returns `(J, K, rho)` at `s`.
fn ramp_pieces(s: f64, r: f64) -> (f64, f64, f64) {
    let b = bump();
    let sigma = s / r;
    let (k, m1) = b.moments(sigma);
    let j = if sigma >= 1.0 { s } else { s * k - r * m1 };
    (j, k, b.density(sigma) / r)
}

/// The cutoff profile `psi_beta` as a function of the signed distance,
/// with its first and second derivatives.
fn profile<T: Real>(params: &CutoffParams<T>, d: T) -> (T, T, T) {
    let beta = params.beta.as_f64();
    let a = params.inner().as_f64();
    let r = params.radius().as_f64();
    let d = d.as_f64();
    if d <= a - r {
        return (T::zero(), T::zero(), T::zero());
    }
    if d >= beta + a + r {
        return (T::one(), T::zero(), T::zero());
    }
    let (j1, k1, p1) = ramp_pieces(d - a, r);
    let (j2, k2, p2) = ramp_pieces(d - a - beta, r);
    let v = ((j1 - j2) / beta).clamp(0.0, 1.0);
    (
        T::lit(v),
        T::lit((k1 - k2) / beta),
        T::lit((p1 - p2) / beta),
    )
}

/// Boundary-layer cutoff `phi_beta(x) = psi_beta(d(x))`.
pub fn cutoff<T: Real>(params: &CutoffParams<T>, dom: &Domain<T>, x: T) -> T {
    profile(params, dom.signed_distance(x)).0
}

/// First and second derivative of [`cutoff`] in `x`.
pub fn cutoff_derivatives<T: Real>(params: &CutoffParams<T>, dom: &Domain<T>, x: T) -> (T, T) {
    let d = dom.signed_distance(x);
    let (_, d1, d2) = profile(params, d);
    if d1 == T::zero() && d2 == T::zero() {
        return (T::zero(), T::zero());
    }
    // d'(x) = -n(x); the profile is flat at the midpoint, so the tie never matters here.
    let slope = match dom.extended_normal(x) {
        Ok(n) => -n,
        Err(_) => return (T::zero(), T::zero()),
    };
    (d1 * slope, d2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> Domain<f64> {
        Domain::unit(64).unwrap()
    }

    #[test]
    fn signed_distance_examples() {
        let q = unit();
        assert_eq!(q.signed_distance(0.5), 0.5);
        assert_eq!(q.signed_distance(0.0), 0.0);
        assert!((q.signed_distance(-0.2) + 0.2).abs() < 1e-15);
        assert!((q.signed_distance(1.3) + 0.3).abs() < 1e-15);
    }

    #[test]
    fn extended_normal_examples() {
        let q = unit();
        assert_eq!(q.extended_normal(0.1).unwrap(), -1.0);
        assert_eq!(q.extended_normal(0.9).unwrap(), 1.0);
        assert!(matches!(
            q.extended_normal(0.5),
            Err(GeometryError::AmbiguousNormal { .. })
        ));
    }

    #[test]
    fn rejects_bad_domains() {
        assert!(Domain::new(1.0, 0.0, 10).is_err());
        assert!(Domain::new(0.0, 1.0, 3).is_err());
        assert!(CutoffParams::new(1.0, 1.0).is_err());
        assert!(CutoffParams::new(0.0, 1.0).is_err());
    }

    #[test]
    fn gradient_of_distance_is_minus_normal() {
        let q = unit();
        let h = 1e-6;
        for &x in &[0.05, 0.2, 0.45, 0.55, 0.8, 0.97] {
            let g = (q.signed_distance(x + h) - q.signed_distance(x - h)) / (2.0 * h);
            assert!((g + q.extended_normal(x).unwrap()).abs() < 1e-8);
        }
    }

    #[test]
    fn layer_measure_is_linear() {
        let q = unit();
        assert!((q.boundary_layer_measure(0.1, 1.0) - 0.2).abs() < 1e-15);
        assert_eq!(q.boundary_layer_measure(0.0, 1.0), 0.0);
        let ratios: Vec<f64> = [0.1, 0.05, 0.025]
            .iter()
            .map(|&l| q.boundary_layer_measure(l, 1.0) / l)
            .collect();
        for r in &ratios {
            assert!((r - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cutoff_plateaus() {
        let q = unit();
        let p = CutoffParams::new(0.1, 1.0).unwrap();
        assert_eq!(p.gamma_m, 3.0);
        assert_eq!(cutoff(&p, &q, 0.5), 1.0);
        assert_eq!(cutoff(&p, &q, -0.1), 0.0);
        assert_eq!(cutoff(&p, &q, 1.2), 0.0);
        // Dead layer d < beta^3 / 2 = 5e-4.
        assert_eq!(cutoff(&p, &q, 4e-4), 0.0);
        assert_eq!(cutoff_derivatives(&p, &q, 4e-4), (0.0, 0.0));
        assert_eq!(cutoff_derivatives(&p, &q, 0.5), (0.0, 0.0));
        // Plateau once d > beta + 1.5 beta^3.
        assert_eq!(cutoff(&p, &q, 0.1 + 1.5e-3 + 1e-9), 1.0);
    }

    #[test]
    fn cutoff_is_monotone_and_bounded() {
        let q = unit();
        let p = CutoffParams::new(0.2, 0.5).unwrap();
        let mut prev = 0.0;
        for k in 0..=2000 {
            let x = 0.5 * k as f64 / 2000.0;
            let v = cutoff(&p, &q, x);
            assert!((0.0..=1.0).contains(&v));
            assert!(v + 1e-14 >= prev, "non-monotone at x = {x}");
            prev = v;
        }
    }

    #[test]
    fn cutoff_total_variation_is_two() {
        let q = unit();
        let p = CutoffParams::new(0.1, 2.0).unwrap();
        let n = 20000;
        let mut tv = 0.0;
        let mut prev = cutoff(&p, &q, 0.0);
        for k in 1..=n {
            let v = cutoff(&p, &q, k as f64 / n as f64);
            tv += (v - prev).abs();
            prev = v;
        }
        assert!((tv - 2.0).abs() < 1e-9, "tv = {tv}");
    }

    #[test]
    fn derivative_matches_centered_difference() {
        let q = unit();
        let p = CutoffParams::new(0.2, 1.0).unwrap();
        // Steps well below the mollifier radius beta^3 / 2.
        let (h, h2) = (1e-7, 1e-6);
        for k in 1..200 {
            let x = k as f64 / 200.0;
            if (x - 0.5).abs() < 0.1 {
                continue;
            }
            let (d1, d2) = cutoff_derivatives(&p, &q, x);
            let fd1 = (cutoff(&p, &q, x + h) - cutoff(&p, &q, x - h)) / (2.0 * h);
            let fd2 = (cutoff(&p, &q, x + h2) - 2.0 * cutoff(&p, &q, x) + cutoff(&p, &q, x - h2))
                / (h2 * h2);
            assert!(
                (d1 - fd1).abs() < 1e-6 * (1.0 + d1.abs()),
                "x = {x}: {d1} vs {fd1}"
            );
            assert!(
                (d2 - fd2).abs() < 1e-2 * (1.0 + d2.abs()),
                "x = {x}: {d2} vs {fd2}"
            );
        }
    }

    #[test]
    fn first_derivative_scales_like_inverse_beta() {
        // Sweep over the mesh: sup |phi'| * beta stays bounded by a fixed constant.
        let q = Domain::<f64>::unit(4096).unwrap();
        let mut scaled = Vec::new();
        for beta in [0.2, 0.1, 0.05] {
            let p = CutoffParams::new(beta, 1.0).unwrap();
            let sup = (0..q.cells())
                .map(|i| cutoff_derivatives(&p, &q, q.center(i)).0.abs())
                .fold(0.0, f64::max);
            scaled.push(sup * beta);
        }
        for s in &scaled {
            assert!(*s <= 1.0 + 1e-9 && *s > 0.9, "{scaled:?}");
        }
    }

    #[test]
    fn works_in_single_precision() {
        let q = Domain::<f32>::unit(8).unwrap();
        assert_eq!(q.signed_distance(0.25f32), 0.25);
        let p = CutoffParams::<f32>::new(0.1, 1.0).unwrap();
        assert_eq!(cutoff(&p, &q, 0.5f32), 1.0);
    }
}
