//! Finite-volume solver for the regularized equation
//!
//! ```text
//! ∂t u = Δ(u^[m]) + ηΔu + ∂x(A(x, u) ż),   u = 0 on ∂Q.
//! ```
//!
//! Each step applies the explicit transport update with the path increment
//! over the step, then solves the implicit diffusion problem
//! `u - dt Δ_h φ(u) = u*` with `φ(u) = u^[m] + ηu` by damped Newton. The
//! Dirichlet condition is a ghost value `0` half a cell outside the domain,
//! so the first and last rows of `Δ_h` read `(φ_1 - 3φ_0)/h²`.
//!
//! Both updates are in flux form, so the change of `Σ u_i h` over a step is
//! exactly the net boundary flux.

use thiserror::Error;

use crate::coefficients::Coefficient;
use crate::geometry::Domain;
use crate::quadrature::GaussLegendre;
use crate::roughpath::SmoothPath;
use crate::Real;

#[derive(Debug, Error)]
pub enum PdeError {
    #[error("CFL violation at t = {t}: dt·|∂ξA·ż|/h = {ratio} exceeds the guard {guard}")]
    Cfl { t: f64, ratio: f64, guard: f64 },
    #[error("implicit diffusion solve did not converge at t = {t}: residual {residual} after {iters} iterations")]
    NewtonDiverged { t: f64, residual: f64, iters: usize },
    #[error("invalid solver parameter: {0}")]
    InvalidParams(String),
    #[error("grid function has {got} values, domain has {cells} cells")]
    SizeMismatch { got: usize, cells: usize },
    #[error("non-finite value in the initial data or the solution at t = {t}")]
    NonFinite { t: f64 },
    #[error("path dimension {path} does not match coefficient dimension {coefficient}")]
    DimensionMismatch { path: usize, coefficient: usize },
    #[error("end time {t_end} lies beyond the path horizon {horizon}")]
    Horizon { t_end: f64, horizon: f64 },
}

/// `|u|^{m-1} u`, with `0^[m] = 0`.
pub fn signed_power<T: Real>(u: T, m: T) -> T {
    if u == T::zero() {
        T::zero()
    } else {
        u.signum() * u.abs().powf(m)
    }
}

/// Cell averages on a [`Domain`] at a given time.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction<T> {
    pub dom: Domain<T>,
    pub values: Vec<T>,
    pub time: T,
}

impl<T: Real> GridFunction<T> {
    pub fn new(dom: Domain<T>, values: Vec<T>, time: T) -> Result<Self, PdeError> {
        if values.len() != dom.cells() {
            return Err(PdeError::SizeMismatch {
                got: values.len(),
                cells: dom.cells(),
            });
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(PdeError::NonFinite { t: time.as_f64() });
        }
        Ok(Self { dom, values, time })
    }

    pub fn zeros(dom: Domain<T>) -> Self {
        let n = dom.cells();
        Self {
            dom,
            values: vec![T::zero(); n],
            time: T::zero(),
        }
    }

    /// Cell averages of `f` by four-point Gauss–Legendre on each cell.
    pub fn from_fn<F: Fn(T) -> T>(dom: Domain<T>, f: F) -> Self {
        let rule = GaussLegendre::new(4);
        let h = dom.h();
        let values = (0..dom.cells())
            .map(|i| {
                let a = dom.face(i);
                rule.integrate(a, a + h, &f) / h
            })
            .collect();
        Self {
            dom,
            values,
            time: T::zero(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mass(&self) -> T {
        self.values.iter().copied().sum::<T>() * self.dom.h()
    }

    pub fn l1(&self) -> T {
        self.values.iter().map(|v| v.abs()).sum::<T>() * self.dom.h()
    }

    pub fn l2_sq(&self) -> T {
        self.values.iter().map(|v| *v * *v).sum::<T>() * self.dom.h()
    }

    pub fn min(&self) -> T {
        self.values.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |a, v| a.max(v.abs()))
    }

    pub fn l1_distance(&self, other: &Self) -> T {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (*a - *b).abs())
            .sum::<T>()
            * self.dom.h()
    }

    pub fn l2_distance(&self, other: &Self) -> T {
        (self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (*a - *b).powi(2))
            .sum::<T>()
            * self.dom.h())
        .sqrt()
    }

    /// `Σ_faces ω_f |(g_R - g_L)/d_f|²` for `g = f(u)`, with the Dirichlet
    /// ghost at both ends. Interior faces have `d_f = ω_f = h`; boundary faces
    /// have `d_f = ω_f = h/2`.
    pub fn face_energy<F: Fn(T) -> T>(&self, f: F) -> T {
        let h = self.dom.h();
        let half = h * T::lit(0.5);
        let g: Vec<T> = self.values.iter().map(|u| f(*u)).collect();
        let n = g.len();
        let mut acc = g[0] * g[0] / half + g[n - 1] * g[n - 1] / half;
        for i in 0..n - 1 {
            let d = g[i + 1] - g[i];
            acc += d * d / h;
        }
        acc
    }

    /// `‖∇u^{[(m+1)/2]}‖²` on the mesh.
    pub fn grad_w_sq(&self, m: T) -> T {
        let e = (m + T::one()) * T::lit(0.5);
        self.face_energy(|u| signed_power(u, e))
    }

    /// `‖∇u‖²` on the mesh.
    pub fn grad_u_sq(&self) -> T {
        self.face_energy(|u| u)
    }

    /// Cells whose value exceeds `tol` in magnitude; `None` if there are none.
    pub fn support(&self, tol: T) -> Option<(usize, usize)> {
        let first = self.values.iter().position(|v| v.abs() > tol)?;
        let last = self.values.iter().rposition(|v| v.abs() > tol)?;
        Some((first, last))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FluxScheme {
    Upwind,
    Central,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverParams<T> {
    pub m: T,
    pub eta: T,
    pub dt: T,
    /// Floor on `|u|` in the Newton linearization when `m < 1`.
    pub theta_reg: T,
    pub flux_scheme: FluxScheme,
    pub cfl_guard: T,
    pub newton_tol: T,
    pub max_newton: usize,
}

impl<T: Real> SolverParams<T> {
    pub fn new(m: T, eta: T, dt: T) -> Self {
        Self {
            m,
            eta,
            dt,
            theta_reg: T::lit(1e-10),
            flux_scheme: FluxScheme::Upwind,
            cfl_guard: T::lit(0.45),
            newton_tol: T::lit(1e-10),
            max_newton: 60,
        }
    }

    pub fn validate(&self) -> Result<(), PdeError> {
        let bad = |s: &str| Err(PdeError::InvalidParams(s.to_string()));
        if !(self.m > T::zero()) || !self.m.is_finite() {
            return bad("m must be positive");
        }
        if !(self.eta >= T::zero() && self.eta < T::one()) {
            return bad("eta must lie in [0, 1)");
        }
        if !(self.dt > T::zero()) || !self.dt.is_finite() {
            return bad("dt must be positive");
        }
        if !(self.cfl_guard > T::zero() && self.cfl_guard < T::one()) {
            return bad("cfl_guard must lie in (0, 1)");
        }
        if !(self.theta_reg > T::zero()) {
            return bad("theta_reg must be positive");
        }
        if !(self.newton_tol > T::zero()) || self.max_newton == 0 {
            return bad("newton tolerance and iteration cap must be positive");
        }
        Ok(())
    }

    fn phi(&self, u: T) -> T {
        signed_power(u, self.m) + self.eta * u
    }

    /// `φ'(u)`, with `|u|` floored at `theta_reg` when `m < 1`.
    fn dphi(&self, u: T) -> T {
        let a = if self.m < T::one() {
            u.abs().max(self.theta_reg)
        } else {
            u.abs()
        };
        let d = if self.m == T::one() {
            T::one()
        } else if a == T::zero() {
            T::zero()
        } else {
            self.m * a.powf(self.m - T::one())
        };
        d + self.eta
    }

    /// Inverse of `φ` (used when `m < 1`).
    fn phi_inv(&self, v: T) -> T {
        if v == T::zero() {
            return T::zero();
        }
        let sgn = v.signum();
        let v = v.abs();
        let inv_m = T::one() / self.m;
        if self.eta == T::zero() {
            return sgn * v.powf(inv_m);
        }
        // s = u^m solves g(s) = s + η s^{1/m} - v; g is increasing and convex,
        // so Newton from s = v decreases monotonically to the root.
        let mut s = v;
        for _ in 0..100 {
            let p = s.powf(inv_m);
            let g = s + self.eta * p - v;
            let dg = T::one() + self.eta * inv_m * p / s;
            let next = s - g / dg;
            if !(next > T::zero()) {
                s *= T::lit(0.5);
                continue;
            }
            let done = (next - s).abs() <= T::epsilon() * s;
            s = next;
            if done {
                break;
            }
        }
        sgn * s.powf(inv_m)
    }
}

/// Per-face quantities of the diffusion step, in the same order as
/// [`Domain::face`]: faces `0..=cells`.
#[derive(Debug, Clone, Default)]
pub struct FaceData<T> {
    /// Face value of `u`: the mean of the neighbors, ghost `0` at the ends.
    pub u_face: Vec<T>,
    /// `ω_f · (4m/(m+1)²)|∇u^{[(m+1)/2]}|²` at the face.
    pub q: Vec<T>,
    /// `ω_f · η|∇u|²` at the face.
    pub p: Vec<T>,
}

impl<T: Real> FaceData<T> {
    pub fn compute(u: &GridFunction<T>, m: T, eta: T) -> Self {
        let dom = &u.dom;
        let n = dom.cells();
        let h = dom.h();
        let half = h * T::lit(0.5);
        let e = (m + T::one()) * T::lit(0.5);
        let c = T::lit(4.0) * m / ((m + T::one()) * (m + T::one()));
        let mut out = Self {
            u_face: Vec::with_capacity(n + 1),
            q: Vec::with_capacity(n + 1),
            p: Vec::with_capacity(n + 1),
        };
        for f in 0..=n {
            let (ul, ur, d) = if f == 0 {
                (T::zero(), u.values[0], half)
            } else if f == n {
                (u.values[n - 1], T::zero(), half)
            } else {
                (u.values[f - 1], u.values[f], h)
            };
            let gw = (signed_power(ur, e) - signed_power(ul, e)) / d;
            let gu = (ur - ul) / d;
            out.u_face.push((ul + ur) * T::lit(0.5));
            out.q.push(d * c * gw * gw);
            out.p.push(d * eta * gu * gu);
        }
        out
    }
}

/// Tallies of one step, evaluated at the new state.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct StepRecord<T> {
    pub t: T,
    pub dt: T,
    /// Net mass entering through `∂Q` during the step.
    pub boundary_flux: T,
    pub grad_w_sq: T,
    pub grad_u_sq: T,
    /// `Σ_faces (φ_R - φ_L)(u_R - u_L)/d_f`, the discrete `∫∇u·∇φ(u)`.
    pub dissipation: T,
    pub l1: T,
    pub l2_sq: T,
    pub mass: T,
    pub min: T,
    pub newton_iters: usize,
}

#[derive(Debug, Clone, Default)]
pub struct RecordPolicy<T> {
    /// Snapshot every this many steps (`0`: never, besides the ends).
    pub every: usize,
    /// Additional snapshot times; each is snapped to the nearest step.
    pub times: Vec<T>,
}

impl<T: Real> RecordPolicy<T> {
    pub fn ends() -> Self {
        Self {
            every: 0,
            times: Vec::new(),
        }
    }

    pub fn every(k: usize) -> Self {
        Self {
            every: k,
            times: Vec::new(),
        }
    }

    pub fn at(times: Vec<T>) -> Self {
        Self { every: 0, times }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory<T> {
    pub params: SolverParams<T>,
    pub initial: GridFunction<T>,
    pub snapshots: Vec<GridFunction<T>>,
    pub steps: Vec<StepRecord<T>>,
}

impl<T: Real> Trajectory<T> {
    pub fn last(&self) -> &GridFunction<T> {
        self.snapshots.last().unwrap_or(&self.initial)
    }

    pub fn time_grid(&self) -> Vec<T> {
        self.snapshots.iter().map(|s| s.time).collect()
    }

    /// Snapshot whose time is closest to `t`.
    pub fn snapshot_near(&self, t: T) -> &GridFunction<T> {
        self.snapshots
            .iter()
            .min_by(|a, b| {
                (a.time - t)
                    .abs()
                    .partial_cmp(&(b.time - t).abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap_or(&self.initial)
    }

    /// `max_k ‖u(t_k) - v(t_k)‖₁` over snapshots shared by both trajectories.
    pub fn sup_l1_distance(&self, other: &Self) -> T {
        self.snapshots
            .iter()
            .zip(&other.snapshots)
            .map(|(a, b)| a.l1_distance(b))
            .fold(T::zero(), T::max)
    }
}

/// Left-hand side of the energy estimate and its parts.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct StabilityReport<T> {
    pub sup_l2_sq: T,
    pub grad_w_integral: T,
    pub eta_grad_u_integral: T,
    pub combined: T,
    /// `max_n |‖u_n‖² + 2 Σ_{k<=n} dt D_k - ‖u_0‖²|`, with `D` the discrete dissipation.
    pub energy_defect: T,
}

pub fn stability_report<T: Real>(traj: &Trajectory<T>) -> StabilityReport<T> {
    let eta = traj.params.eta;
    let u0 = traj.initial.l2_sq();
    let mut sup = u0;
    let mut gw = T::zero();
    let mut gu = T::zero();
    let mut diss = T::zero();
    let mut defect = T::zero();
    for s in &traj.steps {
        sup = sup.max(s.l2_sq);
        gw += s.dt * s.grad_w_sq;
        gu += s.dt * s.grad_u_sq;
        diss += s.dt * s.dissipation;
        defect = defect.max((s.l2_sq + T::lit(2.0) * diss - u0).abs());
    }
    StabilityReport {
        sup_l2_sq: sup,
        grad_w_integral: gw,
        eta_grad_u_integral: eta * gu,
        combined: sup + gw + eta * gu,
        energy_defect: defect,
    }
}

/// Reusable buffers of the stepper.
struct Workspace<T> {
    b: Vec<T>,
    w: Vec<T>,
    r: Vec<T>,
    lower: Vec<T>,
    diag: Vec<T>,
    upper: Vec<T>,
    delta: Vec<T>,
    trial: Vec<T>,
    r_trial: Vec<T>,
    dp: Vec<T>,
    sweep: Vec<T>,
    flux: Vec<T>,
}

impl<T: Real> Workspace<T> {
    fn new(n: usize) -> Self {
        let z = vec![T::zero(); n];
        Self {
            b: z.clone(),
            w: z.clone(),
            r: z.clone(),
            lower: z.clone(),
            diag: z.clone(),
            upper: z.clone(),
            delta: z.clone(),
            trial: z.clone(),
            r_trial: z.clone(),
            dp: z.clone(),
            sweep: z,
            flux: vec![T::zero(); n + 1],
        }
    }
}

/// Outcome of one [`step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo<T> {
    pub boundary_flux: T,
    pub newton_iters: usize,
}

/// `out = Δ_h g` with the Dirichlet ghost.
fn laplacian<T: Real>(g: &[T], h2: T, out: &mut [T]) {
    let n = g.len();
    let three = T::lit(3.0);
    out[0] = (g[1] - three * g[0]) / h2;
    out[n - 1] = (g[n - 2] - three * g[n - 1]) / h2;
    for i in 1..n - 1 {
        out[i] = (g[i - 1] - T::lit(2.0) * g[i] + g[i + 1]) / h2;
    }
}

/// Solves the tridiagonal system in place; `rhs` becomes the solution.
fn thomas<T: Real>(lower: &[T], diag: &[T], upper: &[T], rhs: &mut [T], scratch: &mut [T]) {
    let n = diag.len();
    scratch[0] = upper[0] / diag[0];
    rhs[0] /= diag[0];
    for i in 1..n {
        let denom = diag[i] - lower[i] * scratch[i - 1];
        if i < n - 1 {
            scratch[i] = upper[i] / denom;
        }
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i] * rhs[i + 1];
    }
}

fn max_abs<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |a, x| a.max(x.abs()))
}

/// Explicit transport with increment `dz`; returns the net boundary inflow.
fn transport<T: Real>(
    u: &mut GridFunction<T>,
    dz: &[T],
    params: &SolverParams<T>,
    c: &Coefficient<T>,
    flux: &mut [T],
) -> Result<T, PdeError> {
    let dom = u.dom;
    let n = dom.cells();
    let h = dom.h();
    let half = T::lit(0.5);
    let mut worst = T::zero();
    for f in 0..=n {
        let ul = if f == 0 { T::zero() } else { u.values[f - 1] };
        let ur = if f == n { T::zero() } else { u.values[f] };
        let x = dom.face(f);
        let mean = (ul + ur) * half;
        let jm = c.contract(x, mean, dz);
        let star = match params.flux_scheme {
            FluxScheme::Central => mean,
            // Speed of the characteristics is -∂ξA·ż: information arrives
            // from the right when ∂ξA·ż > 0.
            FluxScheme::Upwind => {
                if jm.a_xi > T::zero() {
                    ur
                } else {
                    ul
                }
            }
        };
        let js = c.contract(x, star, dz);
        worst = worst.max(jm.a_xi.abs()).max(js.a_xi.abs());
        flux[f] = js.a;
    }
    let ratio = worst / h;
    if ratio > params.cfl_guard {
        return Err(PdeError::Cfl {
            t: u.time.as_f64(),
            ratio: ratio.as_f64(),
            guard: params.cfl_guard.as_f64(),
        });
    }
    for i in 0..n {
        u.values[i] += (flux[i + 1] - flux[i]) / h;
    }
    Ok(flux[n] - flux[0])
}

/// Implicit diffusion `u - dt Δ_h φ(u) = b`; returns (boundary inflow, iterations).
fn diffuse<T: Real>(
    u: &mut GridFunction<T>,
    params: &SolverParams<T>,
    ws: &mut Workspace<T>,
) -> Result<(T, usize), PdeError> {
    let n = u.len();
    let h = u.dom.h();
    let h2 = h * h;
    let dt = params.dt;
    let c = dt / h2;
    let three = T::lit(3.0);
    let two = T::lit(2.0);
    ws.b.copy_from_slice(&u.values);
    let scale = max_abs(&ws.b).max(T::min_positive_value().sqrt());
    let tol = params.newton_tol * scale;
    let v_form = params.m < T::one();

    // The unknown is `u` (m >= 1) or `v = φ(u)` (m < 1).
    let mut x: Vec<T> = if v_form {
        ws.b.iter().map(|b| params.phi(*b)).collect()
    } else {
        ws.b.clone()
    };
    let residual = |x: &[T], ws_w: &mut [T], ws_r: &mut [T], b: &[T]| -> T {
        // r = u(x) - b - dt Δ_h φ(u(x))
        if v_form {
            ws_w.copy_from_slice(x);
        } else {
            for (w, u) in ws_w.iter_mut().zip(x) {
                *w = params.phi(*u);
            }
        }
        laplacian(ws_w, h2, ws_r);
        for i in 0..x.len() {
            let ui = if v_form { params.phi_inv(x[i]) } else { x[i] };
            ws_r[i] = ui - b[i] - dt * ws_r[i];
        }
        max_abs(ws_r)
    };

    let mut res = residual(&x, &mut ws.w, &mut ws.r, &ws.b);
    let mut iters = 0;
    let mut converged_at = None;
    // A few extra iterations after convergence drive the residual, and with it
    // the mass defect, to round-off.
    let polish = 2;
    while iters < params.max_newton {
        if res <= tol && converged_at.is_none() {
            converged_at = Some(iters);
        }
        if res == T::zero() {
            break;
        }
        if let Some(k) = converged_at {
            if iters >= k + polish {
                break;
            }
        }
        iters += 1;
        // Jacobian: rows are I·diag(du/dx) - dt Δ_h diag(dφ/dx).
        for i in 0..n {
            let (du, dp) = if v_form {
                let ui = params.phi_inv(x[i]);
                (T::one() / params.dphi(ui), T::one())
            } else {
                (T::one(), params.dphi(x[i]))
            };
            let diag_l = if i == 0 || i == n - 1 { three } else { two };
            ws.diag[i] = du + c * diag_l * dp;
            ws.dp[i] = dp;
        }
        for i in 0..n {
            ws.lower[i] = if i > 0 { -c * ws.dp[i - 1] } else { T::zero() };
            ws.upper[i] = if i + 1 < n {
                -c * ws.dp[i + 1]
            } else {
                T::zero()
            };
        }
        for i in 0..n {
            ws.delta[i] = -ws.r[i];
        }
        thomas(&ws.lower, &ws.diag, &ws.upper, &mut ws.delta, &mut ws.sweep);
        // Backtracking on the max-norm residual.
        let mut lambda = T::one();
        let mut accepted = false;
        for _ in 0..30 {
            for i in 0..n {
                ws.trial[i] = x[i] + lambda * ws.delta[i];
            }
            let rt = residual(&ws.trial, &mut ws.w, &mut ws.r_trial, &ws.b);
            if rt.is_finite() && (rt < res || rt <= tol) {
                x.copy_from_slice(&ws.trial);
                ws.r.copy_from_slice(&ws.r_trial);
                res = rt;
                accepted = true;
                break;
            }
            lambda *= T::lit(0.5);
        }
        if !accepted {
            if res <= tol {
                break;
            }
            return Err(PdeError::NewtonDiverged {
                t: u.time.as_f64(),
                residual: res.as_f64(),
                iters,
            });
        }
    }
    if res > tol {
        return Err(PdeError::NewtonDiverged {
            t: u.time.as_f64(),
            residual: res.as_f64(),
            iters,
        });
    }
    for i in 0..n {
        u.values[i] = if v_form { params.phi_inv(x[i]) } else { x[i] };
    }
    let (g0, gn) = if v_form {
        (x[0], x[n - 1])
    } else {
        (params.phi(x[0]), params.phi(x[n - 1]))
    };
    // Outward diffusive flux through the half cells at both ends.
    let inflow = -dt * two * (g0 + gn) / h;
    Ok((inflow, iters))
}

fn step_with<T: Real>(
    u: &mut GridFunction<T>,
    dz: &[T],
    params: &SolverParams<T>,
    c: &Coefficient<T>,
    ws: &mut Workspace<T>,
) -> Result<StepInfo<T>, PdeError> {
    let tflux = if c.is_zero() || dz.iter().all(|d| *d == T::zero()) {
        T::zero()
    } else {
        transport(u, dz, params, c, &mut ws.flux)?
    };
    let (dflux, iters) = diffuse(u, params, ws)?;
    u.time += params.dt;
    if !u.values.iter().all(|v| v.is_finite()) {
        return Err(PdeError::NonFinite { t: u.time.as_f64() });
    }
    Ok(StepInfo {
        boundary_flux: tflux + dflux,
        newton_iters: iters,
    })
}

/// One step from `u.time` to `u.time + params.dt`, with the path increment
/// over that interval.
pub fn step<T: Real>(
    u: &GridFunction<T>,
    params: &SolverParams<T>,
    path: &SmoothPath<T>,
    c: &Coefficient<T>,
) -> Result<(GridFunction<T>, StepInfo<T>), PdeError> {
    params.validate()?;
    check_dims(path, c)?;
    let mut out = u.clone();
    let dz = path.increment(u.time, u.time + params.dt);
    let mut ws = Workspace::new(u.len());
    let info = step_with(&mut out, &dz, params, c, &mut ws)?;
    Ok((out, info))
}

fn check_dims<T: Real>(path: &SmoothPath<T>, c: &Coefficient<T>) -> Result<(), PdeError> {
    if path.dim() != c.dim() {
        return Err(PdeError::DimensionMismatch {
            path: path.dim(),
            coefficient: c.dim(),
        });
    }
    Ok(())
}

/// Largest `dt` that keeps the transport CFL ratio below `guard` for data
/// bounded by `xi_max`, capped at `dt_max`. The bound uses the steepest
/// segment of the path.
pub fn cfl_safe_dt<T: Real>(
    dom: &Domain<T>,
    path: &SmoothPath<T>,
    c: &Coefficient<T>,
    xi_max: T,
    guard: T,
    dt_max: T,
) -> T {
    if c.is_zero() || path.segments() == 0 {
        return dt_max;
    }
    let bound = c.dxi_bound(dom, xi_max);
    let mut speed = T::zero();
    for j in 0..path.segments() {
        let v = path.velocity(j);
        let s: T = bound.iter().zip(&v).map(|(b, vk)| *b * vk.abs()).sum();
        speed = speed.max(s);
    }
    if speed == T::zero() {
        return dt_max;
    }
    dt_max.min(guard * dom.h() / speed)
}

/// Runs the solver to `t_end`, calling `observe` after every step with the
/// step tallies, the new state and its face data.
pub fn solve_observed<T: Real, F>(
    u0: &GridFunction<T>,
    t_end: T,
    params: &SolverParams<T>,
    path: &SmoothPath<T>,
    c: &Coefficient<T>,
    record: &RecordPolicy<T>,
    mut observe: F,
) -> Result<Trajectory<T>, PdeError>
where
    F: FnMut(&StepRecord<T>, &GridFunction<T>, &FaceData<T>),
{
    params.validate()?;
    check_dims(path, c)?;
    if !u0.values.iter().all(|v| v.is_finite()) {
        return Err(PdeError::NonFinite {
            t: u0.time.as_f64(),
        });
    }
    let start = u0.time;
    if t_end > path.horizon() + T::lit(1e-12) {
        return Err(PdeError::Horizon {
            t_end: t_end.as_f64(),
            horizon: path.horizon().as_f64(),
        });
    }
    let span = (t_end - start).max(T::zero());
    let nsteps = if span == T::zero() {
        0
    } else {
        (span / params.dt - T::lit(1e-9))
            .ceil()
            .to_usize()
            .unwrap_or(1)
            .max(1)
    };
    let dt = if nsteps == 0 {
        params.dt
    } else {
        span / T::of_usize(nsteps)
    };
    let run = SolverParams {
        dt,
        ..params.clone()
    };
    let marks: Vec<usize> = record
        .times
        .iter()
        .map(|t| {
            ((*t - start) / dt)
                .round()
                .to_usize()
                .unwrap_or(0)
                .min(nsteps)
        })
        .collect();

    let mut traj = Trajectory {
        params: run.clone(),
        initial: u0.clone(),
        snapshots: vec![u0.clone()],
        steps: Vec::with_capacity(nsteps),
    };
    let mut u = u0.clone();
    let mut ws = Workspace::new(u.len());
    let mut z0 = path.eval(start);
    let mut z1 = z0.clone();
    let mut dz = z0.clone();
    for k in 0..nsteps {
        let t1 = start + dt * T::of_usize(k + 1);
        path.eval_into(t1.min(path.horizon()), &mut z1);
        for i in 0..dz.len() {
            dz[i] = z1[i] - z0[i];
        }
        let info = step_with(&mut u, &dz, &run, c, &mut ws)?;
        u.time = t1;
        std::mem::swap(&mut z0, &mut z1);
        let faces = FaceData::compute(&u, run.m, run.eta);
        let q_sum: T = faces.q.iter().copied().sum();
        let c_m = T::lit(4.0) * run.m / ((run.m + T::one()) * (run.m + T::one()));
        let rec = StepRecord {
            t: t1,
            dt,
            boundary_flux: info.boundary_flux,
            grad_w_sq: q_sum / c_m,
            grad_u_sq: u.grad_u_sq(),
            dissipation: dissipation(&u, &run),
            l1: u.l1(),
            l2_sq: u.l2_sq(),
            mass: u.mass(),
            min: u.min(),
            newton_iters: info.newton_iters,
        };
        observe(&rec, &u, &faces);
        traj.steps.push(rec);
        let idx = k + 1;
        let wanted =
            (record.every > 0 && idx % record.every == 0) || marks.contains(&idx) || idx == nsteps;
        if wanted {
            traj.snapshots.push(u.clone());
        }
    }
    Ok(traj)
}

pub fn solve<T: Real>(
    u0: &GridFunction<T>,
    t_end: T,
    params: &SolverParams<T>,
    path: &SmoothPath<T>,
    c: &Coefficient<T>,
    record: &RecordPolicy<T>,
) -> Result<Trajectory<T>, PdeError> {
    solve_observed(u0, t_end, params, path, c, record, |_, _, _| {})
}

fn dissipation<T: Real>(u: &GridFunction<T>, params: &SolverParams<T>) -> T {
    let h = u.dom.h();
    let half = h * T::lit(0.5);
    let n = u.len();
    let v = &u.values;
    let mut acc = (params.phi(v[0]) * v[0] + params.phi(v[n - 1]) * v[n - 1]) / half;
    for i in 0..n - 1 {
        acc += (params.phi(v[i + 1]) - params.phi(v[i])) * (v[i + 1] - v[i]) / h;
    }
    acc
}
