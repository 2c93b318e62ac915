//! The noise coefficient `A(x, ξ)` and its derivatives.
//!
//! In one space dimension `A(x, ξ)` is a row of `n` scalars, one per noise
//! coordinate. Every evaluator returns a [`Jet`] per component carrying the
//! value and all derivatives up to second order that the flows and the
//! finite-volume scheme use.

use std::fmt;

use thiserror::Error;

use crate::geometry::Domain;
use crate::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoefficientError {
    #[error("basis function {index} ({name}) does not vanish at the boundary: value {value:e}, derivative {derivative:e}")]
    BasisBoundary {
        index: usize,
        name: String,
        value: f64,
        derivative: f64,
    },
    #[error("nonlinearity must satisfy sigma(0) = 0 (got {0:e})")]
    SigmaNotZero(f64),
    #[error("empty basis")]
    EmptyBasis,
    #[error("unknown {what} id {id:?}")]
    UnknownId { what: &'static str, id: String },
}

/// Value and derivatives of one component `A_k` at a point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Jet<T> {
    pub a: T,
    pub a_xi: T,
    pub a_x: T,
    pub a_x_xi: T,
    pub a_xi_xi: T,
    pub a_x_x: T,
}

impl<T: Real> Jet<T> {
    fn zero() -> Self {
        Self {
            a: T::zero(),
            a_xi: T::zero(),
            a_x: T::zero(),
            a_x_xi: T::zero(),
            a_xi_xi: T::zero(),
            a_x_x: T::zero(),
        }
    }

    #[cfg(test)]
    fn add_scaled(&mut self, o: &Jet<T>, w: T) {
        self.a += o.a * w;
        self.a_xi += o.a_xi * w;
        self.a_x += o.a_x * w;
        self.a_x_xi += o.a_x_xi * w;
        self.a_xi_xi += o.a_xi_xi * w;
        self.a_x_x += o.a_x_x * w;
    }
}

/// Scalar nonlinearity `σ(ξ)` with `σ(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sigma {
    /// `ξ`
    Linear,
    /// `ξ / (1 + ξ²)`
    Rational,
    /// `tanh ξ`
    Tanh,
}

impl Sigma {
    pub fn parse(id: &str) -> Result<Self, CoefficientError> {
        match id {
            "linear" | "xi" => Ok(Self::Linear),
            "rational" => Ok(Self::Rational),
            "tanh" => Ok(Self::Tanh),
            _ => Err(CoefficientError::UnknownId {
                what: "sigma",
                id: id.to_string(),
            }),
        }
    }

    /// `(σ, σ', σ'')`
    pub fn jet<T: Real>(&self, xi: T) -> (T, T, T) {
        let one = T::one();
        let two = T::lit(2.0);
        match self {
            Sigma::Linear => (xi, one, T::zero()),
            Sigma::Rational => {
                let q = one + xi * xi;
                let s = xi / q;
                let d1 = (one - xi * xi) / (q * q);
                let d2 = two * xi * (xi * xi - T::lit(3.0)) / (q * q * q);
                (s, d1, d2)
            }
            Sigma::Tanh => {
                let th = xi.tanh();
                let sech2 = one - th * th;
                (th, sech2, -two * th * sech2)
            }
        }
    }
}

impl fmt::Display for Sigma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Sigma::Linear => "linear",
            Sigma::Rational => "rational",
            Sigma::Tanh => "tanh",
        };
        f.write_str(s)
    }
}

/// Spatial profile `ρ(x)` on the domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisFn {
    /// `sin²(kπ(x - lo)/L)`
    SinSquared(u32),
    /// `sin(kπ(x - lo)/L)`; its derivative is nonzero on the boundary.
    Sin(u32),
    /// `16 (x - lo)² (hi - x)² / L⁴`
    Poly,
}

impl BasisFn {
    /// Parses ids such as `sin2:1`, `sin:2`, `poly`.
    pub fn parse(id: &str) -> Result<Self, CoefficientError> {
        let bad = || CoefficientError::UnknownId {
            what: "basis",
            id: id.to_string(),
        };
        let (name, k) = match id.split_once(':') {
            Some((n, k)) => (n, Some(k.parse::<u32>().map_err(|_| bad())?)),
            None => (id, None),
        };
        match (name, k) {
            ("sin2", Some(k)) if k > 0 => Ok(Self::SinSquared(k)),
            ("sin", Some(k)) if k > 0 => Ok(Self::Sin(k)),
            ("poly", None) => Ok(Self::Poly),
            _ => Err(bad()),
        }
    }

    /// `(ρ, ρ', ρ'')` at `x` on `[lo, lo + len]`.
    pub fn jet<T: Real>(&self, x: T, lo: T, len: T) -> (T, T, T) {
        let two = T::lit(2.0);
        match *self {
            BasisFn::SinSquared(k) => {
                let w = T::of_usize(k as usize) * T::PI() / len;
                let th = w * (x - lo);
                let s = th.sin();
                let c = th.cos();
                (s * s, w * two * s * c, two * w * w * (c * c - s * s))
            }
            BasisFn::Sin(k) => {
                let w = T::of_usize(k as usize) * T::PI() / len;
                let th = w * (x - lo);
                (th.sin(), w * th.cos(), -w * w * th.sin())
            }
            BasisFn::Poly => {
                let l4 = len.powi(4);
                let c = T::lit(16.0) / l4;
                let p = x - lo;
                let q = lo + len - x;
                let v = c * p * p * q * q;
                let d1 = c * two * p * q * (q - p);
                let d2 = c * two * (q * q - T::lit(4.0) * p * q + p * p);
                (v, d1, d2)
            }
        }
    }
}

impl fmt::Display for BasisFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasisFn::SinSquared(k) => write!(f, "sin2:{k}"),
            BasisFn::Sin(k) => write!(f, "sin:{k}"),
            BasisFn::Poly => f.write_str("poly"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CoefficientKind<T> {
    /// `A ≡ 0` with `n` noise components.
    Zero { n: usize },
    /// `A_k(x, ξ) = w_k ξ`, constant in space.
    LinearInXi { weights: Vec<T> },
    /// `A_k(x, ξ) = scale · σ(ξ) ρ_k(x)`.
    BasisProduct {
        sigma: Sigma,
        basis: Vec<BasisFn>,
        scale: T,
        lo: T,
        len: T,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coefficient<T> {
    kind: CoefficientKind<T>,
    /// User-declared bound on the C_b norms of the derivatives.
    pub smoothness_budget: T,
}

impl<T: Real> Coefficient<T> {
    pub fn zero(n: usize) -> Self {
        Self {
            kind: CoefficientKind::Zero { n: n.max(1) },
            smoothness_budget: T::one(),
        }
    }

    /// `A_k = w_k ξ`. Violates the boundary assumption unless all weights vanish.
    pub fn linear_in_xi(weights: Vec<T>) -> Self {
        let budget = weights.iter().fold(T::one(), |a, w| a.max(w.abs()));
        Self {
            kind: CoefficientKind::LinearInXi { weights },
            smoothness_budget: budget,
        }
    }

    pub fn kind(&self) -> &CoefficientKind<T> {
        &self.kind
    }

    pub fn is_zero(&self) -> bool {
        match &self.kind {
            CoefficientKind::Zero { .. } => true,
            CoefficientKind::LinearInXi { weights } => weights.iter().all(|w| *w == T::zero()),
            CoefficientKind::BasisProduct { scale, .. } => *scale == T::zero(),
        }
    }

    /// Number of noise components `n`.
    pub fn dim(&self) -> usize {
        match &self.kind {
            CoefficientKind::Zero { n } => *n,
            CoefficientKind::LinearInXi { weights } => weights.len(),
            CoefficientKind::BasisProduct { basis, .. } => basis.len(),
        }
    }

    /// Writes one jet per noise component.
    pub fn jets_into(&self, x: T, xi: T, out: &mut [Jet<T>]) {
        match &self.kind {
            CoefficientKind::Zero { .. } => out.iter_mut().for_each(|j| *j = Jet::zero()),
            CoefficientKind::LinearInXi { weights } => {
                for (j, w) in out.iter_mut().zip(weights) {
                    *j = Jet::zero();
                    j.a = *w * xi;
                    j.a_xi = *w;
                }
            }
            CoefficientKind::BasisProduct {
                sigma,
                basis,
                scale,
                lo,
                len,
            } => {
                let (s, s1, s2) = sigma.jet(xi);
                for (j, b) in out.iter_mut().zip(basis) {
                    let (r, r1, r2) = b.jet(x, *lo, *len);
                    *j = Jet {
                        a: *scale * s * r,
                        a_xi: *scale * s1 * r,
                        a_x: *scale * s * r1,
                        a_x_xi: *scale * s1 * r1,
                        a_xi_xi: *scale * s2 * r,
                        a_x_x: *scale * s * r2,
                    };
                }
            }
        }
    }

    pub fn jets(&self, x: T, xi: T) -> Vec<Jet<T>> {
        let mut out = vec![Jet::zero(); self.dim()];
        self.jets_into(x, xi, &mut out);
        out
    }

    /// The jet contracted with a noise vector `v`: `Σ_k J_k v_k`.
    pub fn contract(&self, x: T, xi: T, v: &[T]) -> Jet<T> {
        let mut acc = Jet::zero();
        match &self.kind {
            CoefficientKind::Zero { .. } => {}
            CoefficientKind::LinearInXi { weights } => {
                for (w, vk) in weights.iter().zip(v) {
                    acc.a += *w * xi * *vk;
                    acc.a_xi += *w * *vk;
                }
            }
            CoefficientKind::BasisProduct {
                sigma,
                basis,
                scale,
                lo,
                len,
            } => {
                // σ factors out of the sum over components.
                let mut r = Jet::zero();
                for (b, vk) in basis.iter().zip(v) {
                    let (r0, r1, r2) = b.jet(x, *lo, *len);
                    r.a += r0 * *vk;
                    r.a_x += r1 * *vk;
                    r.a_x_x += r2 * *vk;
                }
                let (s, s1, s2) = sigma.jet(xi);
                acc = Jet {
                    a: *scale * s * r.a,
                    a_xi: *scale * s1 * r.a,
                    a_x: *scale * s * r.a_x,
                    a_x_xi: *scale * s1 * r.a_x,
                    a_xi_xi: *scale * s2 * r.a,
                    a_x_x: *scale * s * r.a_x_x,
                };
            }
        }
        acc
    }

    /// `A(x, ξ)` as a row of `n` entries.
    pub fn eval_a(&self, x: T, xi: T) -> Vec<T> {
        self.jets(x, xi).iter().map(|j| j.a).collect()
    }

    /// `∂ξA(x, ξ)`.
    pub fn eval_dxi_a(&self, x: T, xi: T) -> Vec<T> {
        self.jets(x, xi).iter().map(|j| j.a_xi).collect()
    }

    /// `∇x·A(x, ξ)`, one entry per noise component.
    pub fn eval_div_a(&self, x: T, xi: T) -> Vec<T> {
        self.jets(x, xi).iter().map(|j| j.a_x).collect()
    }

    /// `Dx ∂ξA(x, ξ)`.
    pub fn eval_dx_dxi_a(&self, x: T, xi: T) -> Vec<T> {
        self.jets(x, xi).iter().map(|j| j.a_x_xi).collect()
    }

    /// Upper bound of `|∂ξA_k|` over the domain and `|ξ| <= xi_max`,
    /// sampled on a fine grid; used to pick CFL-safe steps.
    pub fn dxi_bound(&self, dom: &Domain<T>, xi_max: T) -> Vec<T> {
        let n = self.dim();
        let mut out = vec![T::zero(); n];
        let mut buf = vec![Jet::zero(); n];
        let nx = 256;
        let nxi = 64;
        for i in 0..=nx {
            let x = dom.lo() + dom.length() * T::of_usize(i) / T::of_usize(nx);
            for j in 0..=nxi {
                let xi = -xi_max + T::lit(2.0) * xi_max * T::of_usize(j) / T::of_usize(nxi);
                self.jets_into(x, xi, &mut buf);
                for k in 0..n {
                    out[k] = out[k].max(buf[k].a_xi.abs());
                }
            }
        }
        out
    }
}

/// Builds `A_k(x, ξ) = scale · σ(ξ) ρ_k(x)` after checking that every `ρ_k`
/// and `ρ_k'` vanish on the boundary.
pub fn build_basis_coefficient<T: Real>(
    sigma: Sigma,
    basis: Vec<BasisFn>,
    scale: T,
    dom: &Domain<T>,
) -> Result<Coefficient<T>, CoefficientError> {
    if basis.is_empty() {
        return Err(CoefficientError::EmptyBasis);
    }
    let s0 = sigma.jet(T::zero()).0;
    if s0 != T::zero() {
        return Err(CoefficientError::SigmaNotZero(s0.as_f64()));
    }
    let lo = dom.lo();
    let len = dom.length();
    let tol = T::lit(1e-10);
    for (index, b) in basis.iter().enumerate() {
        for x in [dom.lo(), dom.hi()] {
            let (v, d, _) = b.jet(x, lo, len);
            if v.abs() > tol || (d * len).abs() > tol {
                return Err(CoefficientError::BasisBoundary {
                    index,
                    name: b.to_string(),
                    value: v.as_f64(),
                    derivative: d.as_f64(),
                });
            }
        }
    }
    let budget = basis.iter().fold(T::one(), |acc, b| {
        let w = match b {
            BasisFn::SinSquared(k) | BasisFn::Sin(k) => {
                let w = T::of_usize(*k as usize) * T::PI() / len;
                T::lit(2.0) * w * w
            }
            BasisFn::Poly => T::lit(32.0) / (len * len),
        };
        acc.max(w)
    }) * scale.abs().max(T::lit(1e-300));
    Ok(Coefficient {
        kind: CoefficientKind::BasisProduct {
            sigma,
            basis,
            scale,
            lo,
            len,
        },
        smoothness_budget: budget,
    })
}

/// Sample grid for [`validate_assumptions`].
#[derive(Debug, Clone)]
pub struct ValidationGrid<T> {
    pub xs: Vec<T>,
    pub xis: Vec<T>,
}

impl<T: Real> ValidationGrid<T> {
    /// `nx + 1` points across the closed domain and `nxi + 1` velocities in `[-xi_max, xi_max]`.
    pub fn uniform(dom: &Domain<T>, nx: usize, xi_max: T, nxi: usize) -> Self {
        let xs = (0..=nx)
            .map(|i| dom.lo() + dom.length() * T::of_usize(i) / T::of_usize(nx))
            .collect();
        let xis = (0..=nxi)
            .map(|j| -xi_max + T::lit(2.0) * xi_max * T::of_usize(j) / T::of_usize(nxi))
            .collect();
        Self { xs, xis }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport<T> {
    /// `max_x |∇x·A(x, 0)|`
    pub divergence_at_zero: T,
    /// `max |∂ξA|` on the boundary.
    pub boundary_dxi: T,
    /// `max |Dx∂ξA|` on the boundary.
    pub boundary_dx_dxi: T,
    pub tol: T,
}

impl<T: Real> ValidationReport<T> {
    pub fn sign_assumption_holds(&self) -> bool {
        self.divergence_at_zero <= self.tol
    }

    pub fn boundary_assumption_holds(&self) -> bool {
        self.boundary_dxi <= self.tol && self.boundary_dx_dxi <= self.tol
    }

    pub fn passed(&self) -> bool {
        self.sign_assumption_holds() && self.boundary_assumption_holds()
    }
}

pub fn validate_assumptions<T: Real>(
    c: &Coefficient<T>,
    dom: &Domain<T>,
    grid: &ValidationGrid<T>,
    tol: T,
) -> ValidationReport<T> {
    let mut buf = vec![Jet::zero(); c.dim()];
    let mut div0 = T::zero();
    for &x in &grid.xs {
        c.jets_into(x, T::zero(), &mut buf);
        for j in &buf {
            div0 = div0.max(j.a_x.abs());
        }
    }
    let mut bd = T::zero();
    let mut bdd = T::zero();
    for x in [dom.lo(), dom.hi()] {
        for &xi in &grid.xis {
            c.jets_into(x, xi, &mut buf);
            for j in &buf {
                bd = bd.max(j.a_xi.abs());
                bdd = bdd.max(j.a_x_xi.abs());
            }
        }
    }
    ValidationReport {
        divergence_at_zero: div0,
        boundary_dxi: bd,
        boundary_dx_dxi: bdd,
        tol,
    }
}

/// Largest gap between the analytic derivatives and centered differences
/// of step `h`, over all components and the sample `points` `(x, ξ)`.
pub fn finite_difference_consistency<T: Real>(c: &Coefficient<T>, points: &[(T, T)], h: T) -> T {
    let n = c.dim();
    let two = T::lit(2.0);
    let mut j0 = vec![Jet::zero(); n];
    let mut xp = vec![Jet::zero(); n];
    let mut xm = vec![Jet::zero(); n];
    let mut kp = vec![Jet::zero(); n];
    let mut km = vec![Jet::zero(); n];
    let mut worst = T::zero();
    for &(x, xi) in points {
        c.jets_into(x, xi, &mut j0);
        c.jets_into(x + h, xi, &mut xp);
        c.jets_into(x - h, xi, &mut xm);
        c.jets_into(x, xi + h, &mut kp);
        c.jets_into(x, xi - h, &mut km);
        for k in 0..n {
            let checks = [
                (j0[k].a_x, (xp[k].a - xm[k].a) / (two * h)),
                (j0[k].a_xi, (kp[k].a - km[k].a) / (two * h)),
                (j0[k].a_x_xi, (xp[k].a_xi - xm[k].a_xi) / (two * h)),
                (j0[k].a_xi_xi, (kp[k].a_xi - km[k].a_xi) / (two * h)),
                (j0[k].a_x_x, (xp[k].a_x - xm[k].a_x) / (two * h)),
            ];
            for (exact, fd) in checks {
                worst = worst.max((exact - fd).abs());
            }
        }
    }
    worst
}
