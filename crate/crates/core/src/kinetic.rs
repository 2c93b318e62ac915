//! Kinetic formulation: the kinetic function, the defect measures of a
//! discrete trajectory, and the transported weak formulation
//!
//! ```text
//! ∫χ ρ_{t0,r} |_{r=t0}^{r=t1} = ∫∫ (m|ξ|^{m-1} + η) χ Δx ρ_{t0,r} - ∫∫ (p + q) ∂ξ ρ_{t0,r}
//! ```
//!
//! with `ρ_{t0,r}(x, ξ) = ρ0(Y_{r, r-t0}(x, ξ), Π_{r, r-t0}(x, ξ))`.
//!
//! The defect measures are `p = δ(ξ - u) η|∇u|²` and
//! `q = δ(ξ - u) (4m/(m+1)²)|∇u^{[(m+1)/2]}|²`; on the mesh they live on cell
//! faces, at the face value of `u`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::characteristics::{CharState, Flow, FlowError, FlowParams};
use crate::coefficients::Coefficient;
use crate::geometry::Domain;
use crate::pde::{signed_power, FaceData, GridFunction, Trajectory};
use crate::quadrature::GaussLegendre;
use crate::roughpath::SmoothPath;
use crate::Real;

#[derive(Debug, Error)]
pub enum KineticError {
    #[error("value {value} outside the velocity grid [-{max}, {max}]")]
    OutOfRange { value: f64, max: f64 },
    #[error("velocity grid needs a positive range and an even, nonzero bin count")]
    BadGrid,
    #[error("defect tally is empty")]
    EmptyTally,
    #[error("singular moment exponent {0} outside (0, 1]")]
    BadDelta(f64),
    #[error("need t0 < t1 inside the recorded window, got [{t0}, {t1}]")]
    BadWindow { t0: f64, t1: f64 },
    #[error("no snapshot within {tol} of t = {t}")]
    MissingSnapshot { t: f64, tol: f64 },
    #[error("transported test function touches the boundary at x = {x}")]
    SupportViolation { x: f64 },
    #[error("test function support must lie strictly inside the domain")]
    TestSupport,
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// `χ̄(v, ξ)`: `1` on `0 < ξ < v`, `-1` on `v < ξ < 0`, `0` otherwise.
pub fn kinetic_function<T: Real>(v: T, xi: T) -> i8 {
    if T::zero() < xi && xi < v {
        1
    } else if v < xi && xi < T::zero() {
        -1
    } else {
        0
    }
}

/// Uniform velocity bins on `[-max, max]`. The bin count is even, so no
/// bin is centered at `ξ = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XiGrid<T> {
    pub max: T,
    pub bins: usize,
}

impl<T: Real> XiGrid<T> {
    pub fn new(max: T, bins: usize) -> Result<Self, KineticError> {
        if !(max > T::zero()) || bins == 0 || bins % 2 == 1 {
            return Err(KineticError::BadGrid);
        }
        Ok(Self { max, bins })
    }

    /// Range `2.1·max|u0|` (or `1` for zero data).
    pub fn for_data(u0: &GridFunction<T>, bins: usize) -> Result<Self, KineticError> {
        let a = u0.max_abs();
        let max = if a > T::zero() {
            T::lit(2.1) * a
        } else {
            T::one()
        };
        Self::new(max, bins)
    }

    pub fn width(&self) -> T {
        T::lit(2.0) * self.max / T::of_usize(self.bins)
    }

    pub fn center(&self, b: usize) -> T {
        -self.max + self.width() * (T::of_usize(b) + T::lit(0.5))
    }

    /// Bin containing `xi`; the closed upper end belongs to the last bin.
    pub fn bin_of(&self, xi: T) -> Result<usize, KineticError> {
        if !(xi.abs() <= self.max) {
            return Err(KineticError::OutOfRange {
                value: xi.as_f64(),
                max: self.max.as_f64(),
            });
        }
        let k = ((xi + self.max) / self.width())
            .floor()
            .to_usize()
            .unwrap_or(0);
        Ok(k.min(self.bins - 1))
    }
}

/// `χ(x_i, ξ_b)` sampled at cell and bin centers.
#[derive(Debug, Clone, PartialEq)]
pub struct KineticField<T> {
    pub dom: Domain<T>,
    pub xi_grid: XiGrid<T>,
    /// Row-major, `values[i * bins + b]`.
    pub values: Vec<i8>,
}

impl<T: Real> KineticField<T> {
    pub fn from_grid(u: &GridFunction<T>, xi_grid: &XiGrid<T>) -> Result<Self, KineticError> {
        let bins = xi_grid.bins;
        let mut values = Vec::with_capacity(u.len() * bins);
        for &v in &u.values {
            xi_grid.bin_of(v)?;
            values.extend((0..bins).map(|b| kinetic_function(v, xi_grid.center(b))));
        }
        Ok(Self {
            dom: u.dom,
            xi_grid: *xi_grid,
            values,
        })
    }

    pub fn at(&self, cell: usize, bin: usize) -> i8 {
        self.values[cell * self.xi_grid.bins + bin]
    }

    /// `∫χ(x_i, ξ) dξ` per cell by the midpoint rule in `ξ`.
    pub fn recover(&self) -> Vec<T> {
        let w = self.xi_grid.width();
        self.values
            .chunks(self.xi_grid.bins)
            .map(|row| w * T::lit(row.iter().map(|c| *c as f64).sum::<f64>()))
            .collect()
    }

    /// `∫|χ - χ'|² dξ` per cell.
    pub fn squared_distance(&self, other: &Self) -> Vec<T> {
        let w = self.xi_grid.width();
        self.values
            .chunks(self.xi_grid.bins)
            .zip(other.values.chunks(self.xi_grid.bins))
            .map(|(a, b)| {
                let s: i64 = a
                    .iter()
                    .zip(b)
                    .map(|(x, y)| {
                        let d = (*x - *y) as i64;
                        d * d
                    })
                    .sum();
                w * T::of_usize(s as usize)
            })
            .collect()
    }
}

/// Defect masses binned by velocity, with per-step totals.
#[derive(Debug, Clone, PartialEq)]
pub struct DefectTally<T> {
    pub xi_grid: XiGrid<T>,
    /// `q` mass per velocity bin, summed over space and time.
    pub q_bins: Vec<T>,
    pub p_bins: Vec<T>,
    /// `(t, q, p)` mass deposited during each step.
    pub steps: Vec<(T, T, T)>,
}

impl<T: Real> DefectTally<T> {
    pub fn new(xi_grid: XiGrid<T>) -> Self {
        Self {
            xi_grid,
            q_bins: vec![T::zero(); xi_grid.bins],
            p_bins: vec![T::zero(); xi_grid.bins],
            steps: Vec::new(),
        }
    }

    /// Deposits the face densities of one step of length `dt` ending at `t`.
    pub fn deposit(&mut self, t: T, dt: T, faces: &FaceData<T>) -> Result<(), KineticError> {
        let mut q_step = T::zero();
        let mut p_step = T::zero();
        for f in 0..faces.u_face.len() {
            let (q, p) = (faces.q[f] * dt, faces.p[f] * dt);
            if q == T::zero() && p == T::zero() {
                continue;
            }
            let b = self.xi_grid.bin_of(faces.u_face[f])?;
            self.q_bins[b] += q;
            self.p_bins[b] += p;
            q_step += q;
            p_step += p;
        }
        self.steps.push((t, q_step, p_step));
        Ok(())
    }

    pub fn q_total(&self) -> T {
        self.q_bins.iter().copied().sum()
    }

    pub fn p_total(&self) -> T {
        self.p_bins.iter().copied().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Builds the tally from consecutive snapshots: snapshot `k` accounts for
/// the interval `(t_{k-1}, t_k]`. With every step recorded this is the
/// per-step tally of the solver.
pub fn defect_tally<T: Real>(
    traj: &Trajectory<T>,
    xi_grid: &XiGrid<T>,
) -> Result<DefectTally<T>, KineticError> {
    let mut tally = DefectTally::new(*xi_grid);
    let (m, eta) = (traj.params.m, traj.params.eta);
    for w in traj.snapshots.windows(2) {
        let dt = w[1].time - w[0].time;
        if dt <= T::zero() {
            continue;
        }
        tally.deposit(w[1].time, dt, &FaceData::compute(&w[1], m, eta))?;
    }
    Ok(tally)
}

/// `δ Σ_b |ξ_b|^{δ-1} (p_b + q_b)`.
pub fn singular_moment<T: Real>(tally: &DefectTally<T>, delta: T) -> Result<T, KineticError> {
    if tally.is_empty() {
        return Err(KineticError::EmptyTally);
    }
    if !(delta > T::zero() && delta <= T::one()) {
        return Err(KineticError::BadDelta(delta.as_f64()));
    }
    let g = &tally.xi_grid;
    Ok(delta
        * (0..g.bins)
            .map(|b| g.center(b).abs().powf(delta - T::one()) * (tally.p_bins[b] + tally.q_bins[b]))
            .sum::<T>())
}

/// A smooth test function on `Q × R` with compact support.
pub trait TestFunction<T>: Sync {
    fn value(&self, x: T, xi: T) -> T;
    /// `(∂x ρ, ∂ξ ρ)`.
    fn gradient(&self, x: T, xi: T) -> (T, T);
    /// `((x_lo, x_hi), (ξ_lo, ξ_hi))` containing the support.
    fn support(&self) -> ((T, T), (T, T));
    fn id(&self) -> String;
}

/// `(1 - s²)⁴` on `|s| < 1` with its first derivative.
fn poly_bump<T: Real>(s: T) -> (T, T) {
    if s.abs() >= T::one() {
        return (T::zero(), T::zero());
    }
    let q = T::one() - s * s;
    let q3 = q * q * q;
    (q3 * q, -T::lit(8.0) * s * q3)
}

/// `ψ((x - x0)/rx) ψ((ξ - ξ0)/rξ)` with `ψ(s) = (1 - s²)⁴`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BumpTest<T> {
    pub x0: T,
    pub rx: T,
    pub xi0: T,
    pub rxi: T,
}

impl<T: Real> TestFunction<T> for BumpTest<T> {
    fn value(&self, x: T, xi: T) -> T {
        poly_bump((x - self.x0) / self.rx).0 * poly_bump((xi - self.xi0) / self.rxi).0
    }

    fn gradient(&self, x: T, xi: T) -> (T, T) {
        let (a, da) = poly_bump((x - self.x0) / self.rx);
        let (b, db) = poly_bump((xi - self.xi0) / self.rxi);
        (da * b / self.rx, a * db / self.rxi)
    }

    fn support(&self) -> ((T, T), (T, T)) {
        (
            (self.x0 - self.rx, self.x0 + self.rx),
            (self.xi0 - self.rxi, self.xi0 + self.rxi),
        )
    }

    fn id(&self) -> String {
        format!(
            "bump(x0={},rx={},xi0={},rxi={})",
            self.x0, self.rx, self.xi0, self.rxi
        )
    }
}

/// Linear combination of test functions.
pub struct SumTest<'a, T> {
    pub terms: Vec<(T, &'a dyn TestFunction<T>)>,
}

impl<T: Real> TestFunction<T> for SumTest<'_, T> {
    fn value(&self, x: T, xi: T) -> T {
        self.terms.iter().map(|(c, f)| *c * f.value(x, xi)).sum()
    }

    fn gradient(&self, x: T, xi: T) -> (T, T) {
        self.terms
            .iter()
            .fold((T::zero(), T::zero()), |acc, (c, f)| {
                let g = f.gradient(x, xi);
                (acc.0 + *c * g.0, acc.1 + *c * g.1)
            })
    }

    fn support(&self) -> ((T, T), (T, T)) {
        let mut s = (
            (T::infinity(), T::neg_infinity()),
            (T::infinity(), T::neg_infinity()),
        );
        for (_, f) in &self.terms {
            let ((a, b), (c, d)) = f.support();
            s = (
                (s.0 .0.min(a), s.0 .1.max(b)),
                (s.1 .0.min(c), s.1 .1.max(d)),
            );
        }
        s
    }

    fn id(&self) -> String {
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|(c, f)| format!("{}*{}", c, f.id()))
            .collect();
        parts.join("+")
    }
}

/// Time rule of [`weak_form_residual`] over the snapshots in the window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeRule {
    /// Simpson when the snapshots are uniform with an even number of
    /// intervals, trapezoid otherwise.
    Auto,
    Trapezoid,
    /// `Σ (t_k - t_{k-1}) f(t_k)`, the rule matching implicit Euler when
    /// every step is recorded.
    RightEndpoint,
}

/// Quadrature controls of [`weak_form_residual`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualQuadrature<T> {
    pub time_rule: TimeRule,
    /// Gauss points per velocity panel.
    pub order: usize,
    /// Largest velocity panel.
    pub max_panel: T,
    /// Offset of the finite difference for `Δx ρ`, relative to the domain length.
    pub fd_offset: T,
}

impl<T: Real> Default for ResidualQuadrature<T> {
    fn default() -> Self {
        Self {
            time_rule: TimeRule::Auto,
            order: 4,
            max_panel: T::lit(0.1),
            fd_offset: T::lit(1e-4),
        }
    }
}

/// The three terms of the transported identity and its defect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeakResidual<T> {
    pub bracket: T,
    pub diffusion: T,
    pub defect: T,
    /// `|bracket - diffusion + defect|`.
    pub value: T,
}

struct Transport<'a, T> {
    flow: Flow<'a, T>,
    jac_flow: Flow<'a, T>,
    rho: &'a dyn TestFunction<T>,
    t0: T,
    dom: Domain<T>,
    fd: T,
}

impl<T: Real> Transport<'_, T> {
    fn value(&self, r: T, x: T, xi: T) -> Result<T, FlowError> {
        if r == self.t0 {
            return Ok(self.rho.value(x, xi));
        }
        let s = self.flow.integrate(CharState::new(x, xi), r, self.t0)?;
        Ok(self.rho.value(s.x, s.xi))
    }

    fn laplacian(&self, r: T, x: T, xi: T) -> Result<T, FlowError> {
        let e = self.fd;
        // Near the boundary the offset stencil would leave Q; ρ vanishes there.
        if x - e <= self.dom.lo() || x + e >= self.dom.hi() {
            return Ok(T::zero());
        }
        let c = self.value(r, x, xi)?;
        let l = self.value(r, x - e, xi)?;
        let rr = self.value(r, x + e, xi)?;
        Ok((l - T::lit(2.0) * c + rr) / (e * e))
    }

    fn dxi(&self, r: T, x: T, xi: T) -> Result<T, FlowError> {
        if r == self.t0 {
            return Ok(self.rho.gradient(x, xi).1);
        }
        let s = self
            .jac_flow
            .integrate(CharState::with_jacobian(x, xi), r, self.t0)?;
        let j = s.jac.expect("jacobian");
        let (gx, gxi) = self.rho.gradient(s.x, s.xi);
        Ok(gx * j[0][1] + gxi * j[1][1])
    }
}

/// Composite Gauss–Legendre nodes and weights on `[a, b]`; the weights
/// carry the orientation of the interval.
fn panel_nodes<T: Real>(rule: &GaussLegendre<T>, a: T, b: T, max_panel: T) -> Vec<(T, T)> {
    let len = (b - a).abs();
    if len == T::zero() {
        return Vec::new();
    }
    let panels = (len / max_panel).ceil().to_usize().unwrap_or(1).max(1);
    let w = (b - a) / T::of_usize(panels);
    (0..panels)
        .flat_map(|k| {
            let lo = a + w * T::of_usize(k);
            rule.nodes_on(lo, lo + w)
        })
        .collect()
}

/// Per-time integrands `(∫χρ, ∫(m|ξ|^{m-1}+η)χΔρ, ∫(p+q)∂ξρ)` at snapshot `u`.
fn integrands<T: Real>(
    tr: &Transport<'_, T>,
    u: &GridFunction<T>,
    m: T,
    eta: T,
    quad: &ResidualQuadrature<T>,
    rule: &GaussLegendre<T>,
    need_bracket: bool,
) -> Result<(T, T, T), KineticError> {
    let r = u.time;
    let dom = u.dom;
    let h = dom.h();
    let n = dom.cells();
    let per_cell: Vec<Result<(T, T), KineticError>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let v = u.values[i];
            if v == T::zero() {
                return Ok((T::zero(), T::zero()));
            }
            let x = dom.center(i);
            let sgn = v.signum();
            let mut bracket = T::zero();
            let mut diff = T::zero();
            let mut touch = T::zero();
            // Bracket, and for m >= 1 the whole diffusion weight, on ξ in [0, v]
            // (oriented weights carry the sign of χ).
            for (xi, w) in panel_nodes(rule, T::zero(), v, quad.max_panel) {
                if need_bracket {
                    let val = tr.value(r, x, xi)?;
                    bracket += w * val;
                    touch = touch.max(val.abs());
                }
                let weight = if m < T::one() {
                    eta
                } else {
                    m * xi.abs().powf(m - T::one()) + eta
                };
                if weight > T::zero() {
                    let lap = tr.laplacian(r, x, xi)?;
                    touch = touch.max(lap.abs());
                    diff += w * weight * lap;
                }
            }
            // For m < 1 the singular weight is removed by w = |ξ|^m.
            if m < T::one() {
                let top = v.abs().powf(m);
                for (s, w) in panel_nodes(rule, T::zero(), top, quad.max_panel) {
                    let xi = sgn * s.powf(T::one() / m);
                    let lap = tr.laplacian(r, x, xi)?;
                    touch = touch.max(lap.abs());
                    diff += sgn * w * lap;
                }
            }
            if (i == 0 || i == n - 1) && touch > T::zero() {
                return Err(KineticError::SupportViolation { x: x.as_f64() });
            }
            Ok((bracket * h, diff * h))
        })
        .collect();
    let mut bracket = T::zero();
    let mut diff = T::zero();
    for c in per_cell {
        let (b, d) = c?;
        bracket += b;
        diff += d;
    }
    let faces = FaceData::compute(u, m, eta);
    let defect: Vec<Result<T, KineticError>> = (0..=n)
        .into_par_iter()
        .map(|f| {
            let dens = faces.p[f] + faces.q[f];
            if dens == T::zero() {
                return Ok(T::zero());
            }
            Ok(dens * tr.dxi(r, dom.face(f), faces.u_face[f])?)
        })
        .collect();
    let mut def = T::zero();
    for d in defect {
        def += d?;
    }
    Ok((bracket, diff, def))
}

/// Evaluates the transported weak identity on `[t0, t1]` along a trajectory.
///
/// The time integrals use the snapshots inside the window with the rule
/// chosen in `quad`. Snapshot times are treated as good times.
pub fn weak_form_residual<T: Real>(
    traj: &Trajectory<T>,
    rho0: &dyn TestFunction<T>,
    t0: T,
    t1: T,
    path: &SmoothPath<T>,
    c: &Coefficient<T>,
    flow: &FlowParams<T>,
    quad: &ResidualQuadrature<T>,
) -> Result<WeakResidual<T>, KineticError> {
    if !(t0 < t1) {
        return Err(KineticError::BadWindow {
            t0: t0.as_f64(),
            t1: t1.as_f64(),
        });
    }
    let dom = traj.initial.dom;
    let ((xa, xb), _) = rho0.support();
    if xa <= dom.lo() || xb >= dom.hi() {
        return Err(KineticError::TestSupport);
    }
    let tol = traj.params.dt * T::lit(1e-6);
    let snaps: Vec<&GridFunction<T>> = traj
        .snapshots
        .iter()
        .filter(|s| s.time >= t0 - tol && s.time <= t1 + tol)
        .collect();
    for t in [t0, t1] {
        if !snaps.iter().any(|s| (s.time - t).abs() <= tol) {
            return Err(KineticError::MissingSnapshot {
                t: t.as_f64(),
                tol: tol.as_f64(),
            });
        }
    }
    let tr = Transport {
        flow: Flow::new(path, c, FlowParams::new(flow.dt)),
        jac_flow: Flow::new(path, c, FlowParams::new(flow.dt).jacobian(true)),
        rho: rho0,
        t0,
        dom,
        fd: quad.fd_offset * dom.length(),
    };
    let (m, eta) = (traj.params.m, traj.params.eta);
    let rule = GaussLegendre::new(quad.order);
    let last = snaps.len() - 1;
    let mut vals = Vec::with_capacity(snaps.len());
    for (k, s) in snaps.iter().enumerate() {
        let mut s = (*s).clone();
        // Pin the window ends exactly so that ρ_{t0,t0} = ρ0.
        if k == 0 {
            s.time = t0;
        }
        vals.push(integrands(
            &tr,
            &s,
            m,
            eta,
            quad,
            &rule,
            k == 0 || k == last,
        )?);
    }
    let times: Vec<T> = snaps.iter().map(|s| s.time).collect();
    let diffusion = time_integral(
        quad.time_rule,
        &times,
        &vals.iter().map(|v| v.1).collect::<Vec<_>>(),
    );
    let defect = time_integral(
        quad.time_rule,
        &times,
        &vals.iter().map(|v| v.2).collect::<Vec<_>>(),
    );
    let bracket = vals[last].0 - vals[0].0;
    Ok(WeakResidual {
        bracket,
        diffusion,
        defect,
        value: (bracket - diffusion + defect).abs(),
    })
}

fn time_integral<T: Real>(rule: TimeRule, t: &[T], f: &[T]) -> T {
    let n = t.len() - 1;
    if n == 0 {
        return T::zero();
    }
    if rule == TimeRule::RightEndpoint {
        return t
            .windows(2)
            .zip(&f[1..])
            .map(|(w, v)| (w[1] - w[0]) * *v)
            .sum();
    }
    let h = (t[n] - t[0]) / T::of_usize(n);
    let uniform = t
        .windows(2)
        .all(|w| ((w[1] - w[0]) - h).abs() <= T::lit(1e-6) * h);
    if rule == TimeRule::Auto && uniform && n.is_multiple_of(2) {
        let mut acc = f[0] + f[n];
        for k in 1..n {
            acc += if k % 2 == 1 { T::lit(4.0) } else { T::lit(2.0) } * f[k];
        }
        acc * h / T::lit(3.0)
    } else {
        t.windows(2)
            .zip(f.windows(2))
            .map(|(tw, fw)| (tw[1] - tw[0]) * (fw[0] + fw[1]) * T::lit(0.5))
            .sum()
    }
}

/// Poincaré and Sobolev diagnostics along a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SobolevReport<T> {
    /// `(t, ‖u‖_{m+1}^{m+1} / ‖∇u^{[(m+1)/2]}‖²)`; `0` where the gradient vanishes.
    pub poincare: Vec<(T, T)>,
    pub poincare_ratio_max: T,
    pub p_m: T,
    /// `(t, ‖∇u^[m]‖_{p_m})`.
    pub pm_norm: Vec<(T, T)>,
    pub pm_norm_max: T,
}

pub fn sobolev_diagnostics<T: Real>(traj: &Trajectory<T>) -> SobolevReport<T> {
    let m = traj.params.m;
    let p_m = ((m + T::one()) / m).min(T::lit(2.0));
    let mut poincare = Vec::new();
    let mut pm_norm = Vec::new();
    for s in std::iter::once(&traj.initial).chain(traj.snapshots.iter().skip(1)) {
        let h = s.dom.h();
        let lp: T = s
            .values
            .iter()
            .map(|v| v.abs().powf(m + T::one()))
            .sum::<T>()
            * h;
        let g = s.grad_w_sq(m);
        poincare.push((s.time, if g > T::zero() { lp / g } else { T::zero() }));
        pm_norm.push((s.time, face_lp_norm(s, m, p_m)));
    }
    let poincare_ratio_max = poincare.iter().fold(T::zero(), |a, (_, r)| a.max(*r));
    let pm_norm_max = pm_norm.iter().fold(T::zero(), |a, (_, r)| a.max(*r));
    SobolevReport {
        poincare,
        poincare_ratio_max,
        p_m,
        pm_norm,
        pm_norm_max,
    }
}

/// `(Σ_faces ω_f |Δ_f u^[m] / d_f|^p)^{1/p}` with the Dirichlet ghost.
fn face_lp_norm<T: Real>(u: &GridFunction<T>, m: T, p: T) -> T {
    let h = u.dom.h();
    let half = h * T::lit(0.5);
    let n = u.len();
    let g: Vec<T> = u.values.iter().map(|v| signed_power(*v, m)).collect();
    let mut acc = half * (g[0] / half).abs().powf(p) + half * (g[n - 1] / half).abs().powf(p);
    for i in 0..n - 1 {
        acc += h * ((g[i + 1] - g[i]) / h).abs().powf(p);
    }
    acc.powf(T::one() / p)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualEntry {
    pub rho_id: String,
    pub t0: f64,
    pub t1: f64,
    pub value: f64,
}

/// Summary of the kinetic diagnostics of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KineticReport {
    pub q_total: f64,
    pub p_total: f64,
    pub singular_moments: BTreeMap<String, f64>,
    pub poincare_ratio_max: f64,
    pub sobolev_pm_norm: f64,
    pub weak_residuals: Vec<ResidualEntry>,
}

impl KineticReport {
    pub fn build<T: Real>(
        tally: &DefectTally<T>,
        deltas: &[T],
        sob: &SobolevReport<T>,
        residuals: Vec<ResidualEntry>,
    ) -> Result<Self, KineticError> {
        let mut singular_moments = BTreeMap::new();
        for d in deltas {
            singular_moments.insert(d.to_string(), singular_moment(tally, *d)?.as_f64());
        }
        Ok(Self {
            q_total: tally.q_total().as_f64(),
            p_total: tally.p_total().as_f64(),
            singular_moments,
            poincare_ratio_max: sob.poincare_ratio_max.as_f64(),
            sobolev_pm_norm: sob.pm_norm_max.as_f64(),
            weak_residuals: residuals,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::{solve, RecordPolicy, SolverParams};
    use std::f64::consts::PI;

    fn still() -> SmoothPath<f64> {
        SmoothPath::constant(vec![0.0], 1.0)
    }

    #[test]
    fn kinetic_function_examples() {
        assert_eq!(kinetic_function(2.0, 1.0), 1);
        assert_eq!(kinetic_function(-1.5, -0.5), -1);
        assert_eq!(kinetic_function(1.0, 3.0), 0);
        assert_eq!(kinetic_function(1.0, 0.0), 0);
        assert_eq!(kinetic_function(0.0, 0.0), 0);
    }

    #[test]
    fn signed_integral_gives_absolute_value() {
        let g = XiGrid::<f64>::new(4.0, 4000).unwrap();
        for v in [1.3, -2.2, 0.0] {
            let s: f64 = (0..g.bins)
                .map(|b| {
                    let xi = g.center(b);
                    kinetic_function(v, xi) as f64 * xi.signum() * g.width()
                })
                .sum();
            assert!((s - f64::abs(v)).abs() <= g.width());
        }
    }

    #[test]
    fn recovery_and_squared_identity() {
        let dom = Domain::<f64>::unit(40).unwrap();
        let u = GridFunction::from_fn(dom, |x| (2.0 * PI * x).sin());
        let v = GridFunction::from_fn(dom, |x| 0.5 * x);
        let g = XiGrid::new(2.0, 200).unwrap();
        let ku = KineticField::from_grid(&u, &g).unwrap();
        let kv = KineticField::from_grid(&v, &g).unwrap();
        for (r, x) in ku.recover().iter().zip(&u.values) {
            assert!((r - x).abs() <= g.width());
        }
        for (i, d) in ku.squared_distance(&kv).iter().enumerate() {
            assert!((d - (u.values[i] - v.values[i]).abs()).abs() <= 2.0 * g.width());
            for b in 0..g.bins {
                let (a, c) = (ku.at(i, b) as i32, kv.at(i, b) as i32);
                assert_eq!((a - c).pow(2), a.abs() + c.abs() - 2 * a * c);
            }
        }
        let big = GridFunction::from_fn(dom, |_| 3.0);
        assert!(matches!(
            KineticField::from_grid(&big, &g),
            Err(KineticError::OutOfRange { .. })
        ));
    }

    #[test]
    fn frozen_linear_profile_has_unit_q_rate() {
        // u(x) = x held fixed, m = 1: q density is 1 on the interior faces.
        let dom = Domain::<f64>::unit(100).unwrap();
        let u = GridFunction::from_fn(dom, |x| x);
        let faces = FaceData::compute(&u, 1.0, 0.0);
        let interior: f64 = faces.q[1..100].iter().sum();
        assert!((interior - 0.99).abs() < 1e-12);
        let mut tally = DefectTally::new(XiGrid::new(2.0, 100).unwrap());
        tally.deposit(0.5, 0.5, &faces).unwrap();
        assert_eq!(tally.p_total(), 0.0);
        let flat = GridFunction::from_fn(dom, |_| 0.7);
        let mut t2 = DefectTally::new(XiGrid::new(2.0, 100).unwrap());
        let fl = FaceData::compute(&flat, 1.0, 0.0);
        let mut only_interior = fl.clone();
        only_interior.q[0] = 0.0;
        only_interior.q[100] = 0.0;
        t2.deposit(1.0, 1.0, &only_interior).unwrap();
        assert!(t2.q_total().abs() < 1e-20);
    }

    #[test]
    fn heat_tally_matches_energy_identity() {
        let dom = Domain::<f64>::unit(128).unwrap();
        let u0 = GridFunction::from_fn(dom, |x| (PI * x).sin());
        let traj = solve(
            &u0,
            0.05,
            &SolverParams::new(1.0, 0.0, 5e-4),
            &still(),
            &Coefficient::zero(1),
            &RecordPolicy::every(1),
        )
        .unwrap();
        let tally = defect_tally(&traj, &XiGrid::for_data(&u0, 64).unwrap()).unwrap();
        let drop = 0.5 * (u0.l2_sq() - traj.last().l2_sq());
        assert!((tally.q_total() - drop).abs() < 2e-2 * drop);
        assert_eq!(
            singular_moment(&tally, 1.0).unwrap(),
            tally.q_total() + tally.p_total()
        );
        assert!(singular_moment(&tally, 0.25).unwrap().is_finite());
        assert!(matches!(
            singular_moment(&tally, 0.0),
            Err(KineticError::BadDelta(_))
        ));
        assert!(matches!(
            singular_moment(&DefectTally::new(tally.xi_grid), 1.0),
            Err(KineticError::EmptyTally)
        ));
    }

    #[test]
    fn viscous_tally_is_eta_times_gradient_energy() {
        let dom = Domain::<f64>::unit(64).unwrap();
        let u0 = GridFunction::from_fn(dom, |x| (PI * x).sin());
        let traj = solve(
            &u0,
            0.02,
            &SolverParams::new(2.0, 0.1, 1e-3),
            &still(),
            &Coefficient::zero(1),
            &RecordPolicy::every(1),
        )
        .unwrap();
        let tally = defect_tally(&traj, &XiGrid::for_data(&u0, 64).unwrap()).unwrap();
        let expected: f64 = traj.steps.iter().map(|s| 0.1 * s.grad_u_sq * s.dt).sum();
        assert!((tally.p_total() - expected).abs() <= 1e-14 * expected.max(1.0));
    }

    #[test]
    fn poincare_ratio_of_sine() {
        let dom = Domain::<f64>::unit(256).unwrap();
        let u0 = GridFunction::from_fn(dom, |x| (PI * x).sin());
        let traj = solve(
            &u0,
            0.0,
            &SolverParams::new(1.0, 0.0, 1e-3),
            &still(),
            &Coefficient::zero(1),
            &RecordPolicy::ends(),
        )
        .unwrap();
        let r = sobolev_diagnostics(&traj);
        assert!((r.poincare_ratio_max * PI * PI - 1.0).abs() < 1e-3);
        assert_eq!(r.p_m, 2.0);
        let z = GridFunction::zeros(dom);
        let tz = solve(
            &z,
            0.0,
            &SolverParams::new(1.0, 0.0, 1e-3),
            &still(),
            &Coefficient::zero(1),
            &RecordPolicy::ends(),
        )
        .unwrap();
        let rz = sobolev_diagnostics(&tz);
        assert_eq!((rz.poincare_ratio_max, rz.pm_norm_max), (0.0, 0.0));
    }

    #[test]
    fn zero_trajectory_has_zero_residual() {
        let dom = Domain::<f64>::unit(32).unwrap();
        let z = GridFunction::zeros(dom);
        let traj = solve(
            &z,
            0.1,
            &SolverParams::new(2.0, 0.0, 1e-2),
            &still(),
            &Coefficient::zero(1),
            &RecordPolicy::every(1),
        )
        .unwrap();
        let rho = BumpTest {
            x0: 0.5,
            rx: 0.2,
            xi0: 0.3,
            rxi: 0.2,
        };
        let r = weak_form_residual(
            &traj,
            &rho,
            0.0,
            0.1,
            &still(),
            &Coefficient::zero(1),
            &FlowParams::new(1e-2),
            &ResidualQuadrature::default(),
        )
        .unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn heat_residual_is_small_and_rejects_bad_windows() {
        let dom = Domain::<f64>::unit(64).unwrap();
        let u0 = GridFunction::from_fn(dom, |x| (PI * x).sin());
        let traj = solve(
            &u0,
            0.04,
            &SolverParams::new(1.0, 0.0, 1e-3),
            &still(),
            &Coefficient::zero(1),
            &RecordPolicy::every(1),
        )
        .unwrap();
        let rho = BumpTest {
            x0: 0.4,
            rx: 0.25,
            xi0: 0.5,
            rxi: 0.4,
        };
        let fp = FlowParams::new(1e-2);
        let q = ResidualQuadrature::default();
        let r = weak_form_residual(
            &traj,
            &rho,
            0.0,
            0.04,
            &still(),
            &Coefficient::zero(1),
            &fp,
            &q,
        )
        .unwrap();
        assert!(
            r.value < 1e-2 * r.bracket.abs().max(r.diffusion.abs()),
            "{r:?}"
        );
        assert!(weak_form_residual(
            &traj,
            &rho,
            0.04,
            0.0,
            &still(),
            &Coefficient::zero(1),
            &fp,
            &q
        )
        .is_err());
        let edge = BumpTest {
            x0: 0.1,
            rx: 0.2,
            xi0: 0.5,
            rxi: 0.4,
        };
        assert!(matches!(
            weak_form_residual(
                &traj,
                &edge,
                0.0,
                0.04,
                &still(),
                &Coefficient::zero(1),
                &fp,
                &q
            ),
            Err(KineticError::TestSupport)
        ));
    }
}
