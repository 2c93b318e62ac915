//! Forward and backward characteristics of the noise transport.
//!
//! The forward system is
//!
//! ```text
//! dX/dt = -∂ξA(X, Ξ) ż_t
//! dΞ/dt = (∇x·A(X, Ξ)) ż_t
//! ```
//!
//! integrated with the classical fourth-order Runge–Kutta method. Sub-steps
//! never straddle a kink of the piecewise-linear driver, so on each piece the
//! system is autonomous with constant `ż`. The derivative flow is carried by
//! the variational equation `J' = Df J`; the trace of `Df` vanishes
//! identically, which is what makes the flow measure preserving.
//!
//! Backward characteristics `Y_{t0,s} = X_{t0, t0 - s}` are the forward system
//! driven by the reversed path `s -> z(t0 - s)`. The integrator walks the
//! original path backwards, which is the same computation without
//! materializing the reversed path.

use thiserror::Error;

use crate::coefficients::Coefficient;
use crate::geometry::Domain;
use crate::roughpath::{
    holder_distance, stratonovich_lift, HolderMetricParams, PathError, SmoothPath,
};
use crate::Real;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("invalid step size {dt}")]
    InvalidStep { dt: f64 },
    #[error("time interval [{from}, {to}] not inside the path horizon [0, {horizon}]")]
    TimeOutOfRange { from: f64, to: f64, horizon: f64 },
    #[error("non-finite characteristic state at t = {t}")]
    NonFinite { t: f64 },
    #[error("path dimension {path} does not match coefficient dimension {coefficient}")]
    DimensionMismatch { path: usize, coefficient: usize },
    #[error("velocity comparability needs a nonzero initial velocity")]
    ZeroVelocity,
    #[error("path outside the rough-path ball: d(z, e) = {distance} > R0 = {radius}")]
    BallViolation { distance: f64, radius: f64 },
    #[error(transparent)]
    Path(#[from] PathError),
}

/// `(x, ξ)` with the optional derivative flow
/// `[[∂X/∂x, ∂X/∂ξ], [∂Ξ/∂x, ∂Ξ/∂ξ]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharState<T> {
    pub x: T,
    pub xi: T,
    pub jac: Option<[[T; 2]; 2]>,
}

impl<T: Real> CharState<T> {
    pub fn new(x: T, xi: T) -> Self {
        Self { x, xi, jac: None }
    }

    pub fn with_jacobian(x: T, xi: T) -> Self {
        Self {
            x,
            xi,
            jac: Some([[T::one(), T::zero()], [T::zero(), T::one()]]),
        }
    }

    pub fn det(&self) -> Option<T> {
        self.jac.map(|j| j[0][0] * j[1][1] - j[0][1] * j[1][0])
    }

    fn distance(&self, other: &Self) -> T {
        ((self.x - other.x).powi(2) + (self.xi - other.xi).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowParams<T> {
    /// Upper bound on the sub-step length.
    pub dt: T,
    pub with_jacobian: bool,
}

impl<T: Real> FlowParams<T> {
    pub fn new(dt: T) -> Self {
        Self {
            dt,
            with_jacobian: false,
        }
    }

    pub fn jacobian(mut self, on: bool) -> Self {
        self.with_jacobian = on;
        self
    }
}

type Vec6<T> = [T; 6];

/// A characteristic flow bound to its driver and coefficient.
#[derive(Debug, Clone, Copy)]
pub struct Flow<'a, T> {
    pub path: &'a SmoothPath<T>,
    pub coef: &'a Coefficient<T>,
    pub params: FlowParams<T>,
}

impl<'a, T: Real> Flow<'a, T> {
    pub fn new(path: &'a SmoothPath<T>, coef: &'a Coefficient<T>, params: FlowParams<T>) -> Self {
        Self { path, coef, params }
    }

    fn rhs(&self, y: &Vec6<T>, v: &[T], jac: bool) -> Vec6<T> {
        let j = self.coef.contract(y[0], y[1], v);
        let fx = -j.a_xi;
        let fxi = j.a_x;
        if !jac {
            return [fx, fxi, T::zero(), T::zero(), T::zero(), T::zero()];
        }
        let d00 = -j.a_x_xi;
        let d01 = -j.a_xi_xi;
        let d10 = j.a_x_x;
        let d11 = j.a_x_xi;
        // y[2..6] = J row-major.
        [
            fx,
            fxi,
            d00 * y[2] + d01 * y[4],
            d00 * y[3] + d01 * y[5],
            d10 * y[2] + d11 * y[4],
            d10 * y[3] + d11 * y[5],
        ]
    }

    fn rk4(&self, y: &Vec6<T>, v: &[T], h: T, jac: bool) -> Vec6<T> {
        let half = h * T::lit(0.5);
        let k1 = self.rhs(y, v, jac);
        let y2 = axpy(y, &k1, half);
        let k2 = self.rhs(&y2, v, jac);
        let y3 = axpy(y, &k2, half);
        let k3 = self.rhs(&y3, v, jac);
        let y4 = axpy(y, &k3, h);
        let k4 = self.rhs(&y4, v, jac);
        let sixth = h / T::lit(6.0);
        let mut out = *y;
        for i in 0..6 {
            out[i] += sixth * (k1[i] + T::lit(2.0) * (k2[i] + k3[i]) + k4[i]);
        }
        out
    }

    /// Integrates from `t_from` to `t_to` (either direction), calling
    /// `observe(t, state)` after every sub-step.
    pub fn integrate_observed<F>(
        &self,
        start: CharState<T>,
        t_from: T,
        t_to: T,
        mut observe: F,
    ) -> Result<CharState<T>, FlowError>
    where
        F: FnMut(T, &CharState<T>),
    {
        let p = self.path;
        let dt = self.params.dt;
        if !(dt > T::zero()) || !dt.is_finite() {
            return Err(FlowError::InvalidStep { dt: dt.as_f64() });
        }
        if p.dim() != self.coef.dim() {
            return Err(FlowError::DimensionMismatch {
                path: p.dim(),
                coefficient: self.coef.dim(),
            });
        }
        let horizon = p.horizon();
        let slack = T::lit(1e-12) * horizon.max(T::one());
        let lo = t_from.min(t_to);
        let hi = t_from.max(t_to);
        if lo < -slack || hi > horizon + slack {
            return Err(FlowError::TimeOutOfRange {
                from: t_from.as_f64(),
                to: t_to.as_f64(),
                horizon: horizon.as_f64(),
            });
        }
        let jac = self.params.with_jacobian || start.jac.is_some();
        let j0 = start
            .jac
            .unwrap_or([[T::one(), T::zero()], [T::zero(), T::one()]]);
        let mut y: Vec6<T> = [start.x, start.xi, j0[0][0], j0[0][1], j0[1][0], j0[1][1]];
        let pack = |y: &Vec6<T>| CharState {
            x: y[0],
            xi: y[1],
            jac: if jac {
                Some([[y[2], y[3]], [y[4], y[5]]])
            } else {
                None
            },
        };
        if t_from == t_to || p.segments() == 0 || self.coef.is_zero() {
            let s = pack(&y);
            observe(t_to, &s);
            return Ok(s);
        }
        let forward = t_to > t_from;
        let times = p.times();
        let mut v = vec![T::zero(); p.dim()];
        let mut t = t_from;
        while if forward { t < t_to } else { t > t_to } {
            // Segment holding the open interval we are about to cross.
            let j = if forward {
                p.segment_at(t)
            } else {
                let k = times.partition_point(|&s| s < t);
                k.saturating_sub(1).min(p.segments() - 1)
            };
            let seg_end = if forward {
                times[j + 1].min(t_to)
            } else {
                times[j].max(t_to)
            };
            let len = (seg_end - t).abs();
            p.velocity_into(j, &mut v);
            if !forward {
                v.iter_mut().for_each(|c| *c = -*c);
            }
            if len > T::zero() {
                let nsub = (len / dt).ceil().to_usize().unwrap_or(1).max(1);
                let h = len / T::of_usize(nsub);
                for k in 0..nsub {
                    y = self.rk4(&y, &v, h, jac);
                    if !y.iter().all(|c| c.is_finite()) {
                        return Err(FlowError::NonFinite { t: t.as_f64() });
                    }
                    let tk = if k + 1 == nsub {
                        seg_end
                    } else if forward {
                        t + h * T::of_usize(k + 1)
                    } else {
                        t - h * T::of_usize(k + 1)
                    };
                    observe(tk, &pack(&y));
                }
            }
            if seg_end == t {
                // Guard against zero-length progress at a node.
                break;
            }
            t = seg_end;
        }
        Ok(pack(&y))
    }

    pub fn integrate(
        &self,
        start: CharState<T>,
        t_from: T,
        t_to: T,
    ) -> Result<CharState<T>, FlowError> {
        self.integrate_observed(start, t_from, t_to, |_, _| {})
    }

    /// `(X, Ξ)_{t0, t1}` started from `s0`.
    pub fn forward(&self, s0: CharState<T>, t0: T, t1: T) -> Result<CharState<T>, FlowError> {
        if t1 < t0 {
            return Err(FlowError::TimeOutOfRange {
                from: t0.as_f64(),
                to: t1.as_f64(),
                horizon: self.path.horizon().as_f64(),
            });
        }
        self.integrate(self.with_jac(s0), t0, t1)
    }

    /// `(Y, Π)_{t0, s}`: the characteristic through `s0` at time `t0`, run back by `s`.
    pub fn backward(&self, s0: CharState<T>, t0: T, s: T) -> Result<CharState<T>, FlowError> {
        if s < T::zero() || s > t0 {
            return Err(FlowError::TimeOutOfRange {
                from: t0.as_f64(),
                to: (t0 - s).as_f64(),
                horizon: self.path.horizon().as_f64(),
            });
        }
        self.integrate(self.with_jac(s0), t0, t0 - s)
    }

    fn with_jac(&self, s: CharState<T>) -> CharState<T> {
        if self.params.with_jacobian && s.jac.is_none() {
            CharState::with_jacobian(s.x, s.xi)
        } else {
            s
        }
    }
}

fn axpy<T: Real>(y: &Vec6<T>, k: &Vec6<T>, h: T) -> Vec6<T> {
    let mut o = *y;
    for i in 0..6 {
        o[i] += h * k[i];
    }
    o
}

pub fn forward_flow<T: Real>(
    s0: CharState<T>,
    t0: T,
    t1: T,
    path: &SmoothPath<T>,
    c: &Coefficient<T>,
    p: &FlowParams<T>,
) -> Result<CharState<T>, FlowError> {
    Flow::new(path, c, *p).forward(s0, t0, t1)
}

pub fn backward_flow<T: Real>(
    s0: CharState<T>,
    t0: T,
    s: T,
    path: &SmoothPath<T>,
    c: &Coefficient<T>,
    p: &FlowParams<T>,
) -> Result<CharState<T>, FlowError> {
    Flow::new(path, c, *p).backward(s0, t0, s)
}

/// Residual of the inverse relation between forward and backward flows:
/// the larger of `|X_{t0,t}(Y_{t,t-t0}(x, ξ)) - (x, ξ)|` and
/// `|Y_{t,t-t0}(X_{t0,t}(x, ξ)) - (x, ξ)|`.
pub fn check_inverse<T: Real>(
    x: T,
    xi: T,
    t0: T,
    t: T,
    path: &SmoothPath<T>,
    c: &Coefficient<T>,
    p: &FlowParams<T>,
) -> Result<T, FlowError> {
    let flow = Flow::new(path, c, FlowParams::new(p.dt));
    let start = CharState::new(x, xi);
    let back = flow.backward(start, t, t - t0)?;
    let there = flow.forward(back, t0, t)?;
    let fwd = flow.forward(start, t0, t)?;
    let home = flow.backward(fwd, t, t - t0)?;
    Ok(there.distance(&start).max(home.distance(&start)))
}

/// `|det DΦ - 1|` for the forward flow from `t0` to `t`.
pub fn measure_preservation<T: Real>(
    x: T,
    xi: T,
    t0: T,
    t: T,
    path: &SmoothPath<T>,
    c: &Coefficient<T>,
    p: &FlowParams<T>,
) -> Result<T, FlowError> {
    let flow = Flow::new(path, c, p.jacobian(true));
    let end = flow.forward(CharState::with_jacobian(x, xi), t0, t)?;
    Ok((end.det().expect("jacobian requested") - T::one()).abs())
}

/// Trapezoidal integral of `tr Df` along the forward trajectory.
pub fn rhs_trace_integral<T: Real>(
    x: T,
    xi: T,
    t0: T,
    t: T,
    path: &SmoothPath<T>,
    c: &Coefficient<T>,
    p: &FlowParams<T>,
) -> Result<T, FlowError> {
    let flow = Flow::new(path, c, FlowParams::new(p.dt));
    let mut v = vec![T::zero(); path.dim()];
    let trace = |s: &CharState<T>, tt: T, v: &mut Vec<T>| {
        let j = path.segment_at(tt);
        path.velocity_into(j, v);
        let jet = c.contract(s.x, s.xi, v);
        -jet.a_x_xi + jet.a_x_xi
    };
    let mut acc = T::zero();
    let mut prev_t = t0;
    let mut prev = trace(&CharState::new(x, xi), t0, &mut v);
    flow.integrate_observed(CharState::new(x, xi), t0, t, |tt, s| {
        let cur = trace(s, tt, &mut v);
        acc += (tt - prev_t) * (cur + prev) * T::lit(0.5);
        prev = cur;
        prev_t = tt;
    })?;
    Ok(acc)
}

/// Whether `sgn Ξ = sgn ξ` along the whole forward trajectory on `[t0, t]`
/// (and `Ξ ≡ 0` when `ξ = 0`).
pub fn sign_preservation<T: Real>(
    x: T,
    xi: T,
    t0: T,
    t: T,
    path: &SmoothPath<T>,
    c: &Coefficient<T>,
    p: &FlowParams<T>,
) -> Result<bool, FlowError> {
    let flow = Flow::new(path, c, FlowParams::new(p.dt));
    let mut ok = true;
    let zero_tol = T::lit(1e-300);
    flow.integrate_observed(CharState::new(x, xi), t0, t, |_, s| {
        let good = if xi == T::zero() {
            s.xi.abs() <= zero_tol
        } else {
            s.xi != T::zero() && s.xi.signum() == xi.signum()
        };
        ok &= good;
    })?;
    Ok(ok)
}

/// One rung of the boundary distance ladder.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryRow<T> {
    pub k: u32,
    pub delta: T,
    /// `sup |X - x|` over forward times and samples.
    pub displacement: T,
    /// `sup |∂ξY|` over backward times and samples.
    pub dxi_y: T,
    /// `sup |DxY - 1|` over backward times and samples.
    pub dx_y_minus_id: T,
}

impl<T: Real> BoundaryRow<T> {
    pub fn ratios(&self) -> [T; 3] {
        [
            self.displacement / self.delta,
            self.dxi_y / self.delta,
            self.dx_y_minus_id / self.delta,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryReport<T> {
    pub rows: Vec<BoundaryRow<T>>,
    /// Largest motion of characteristics started on the boundary.
    pub standstill: T,
}

/// Which boundary quantity to analyze.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryMetric {
    Displacement,
    DxiY,
    DxYMinusId,
}

impl<T: Real> BoundaryReport<T> {
    fn values(&self, metric: BoundaryMetric) -> Vec<(T, T)> {
        self.rows
            .iter()
            .map(|r| {
                let v = match metric {
                    BoundaryMetric::Displacement => r.displacement,
                    BoundaryMetric::DxiY => r.dxi_y,
                    BoundaryMetric::DxYMinusId => r.dx_y_minus_id,
                };
                (r.delta, v)
            })
            .collect()
    }

    /// Least-squares slope of `log value` against `log δ`.
    pub fn fitted_exponent(&self, metric: BoundaryMetric) -> Option<T> {
        let pts: Vec<(f64, f64)> = self
            .values(metric)
            .into_iter()
            .filter(|(_, v)| *v > T::zero())
            .map(|(d, v)| (d.as_f64().ln(), v.as_f64().ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Some(T::lit(sxy / sxx))
    }

    /// `max / min` of `value / δ^exponent` across the ladder.
    pub fn spread(&self, metric: BoundaryMetric, exponent: T) -> T {
        let r: Vec<T> = self
            .values(metric)
            .into_iter()
            .map(|(d, v)| v / d.powf(exponent))
            .collect();
        let max = r.iter().fold(T::zero(), |a, b| a.max(*b));
        let min = r.iter().fold(T::infinity(), |a, b| a.min(*b));
        if max == T::zero() {
            T::one()
        } else {
            max / min
        }
    }

    /// Largest `value / δ` over the ladder.
    pub fn max_ratio(&self, metric: BoundaryMetric) -> T {
        self.values(metric)
            .into_iter()
            .map(|(d, v)| v / d)
            .fold(T::zero(), |a, b| a.max(b))
    }
}

/// Boundary sweep: forward characteristics on `[t0, t0 + horizon]` and
/// backward characteristics ending at `t0`, started at distance
/// `δ_k = 2^-k · L` from either endpoint for each velocity in `xis`.
pub fn boundary_estimates<T: Real>(
    dom: &Domain<T>,
    ladder: std::ops::RangeInclusive<u32>,
    xis: &[T],
    t0: T,
    horizon: T,
    path: &SmoothPath<T>,
    c: &Coefficient<T>,
    p: &FlowParams<T>,
) -> Result<BoundaryReport<T>, FlowError> {
    let flow = Flow::new(path, c, p.jacobian(true));
    let mut rows = Vec::new();
    for k in ladder {
        let delta = dom.length() * T::lit(0.5f64.powi(k as i32));
        let mut row = BoundaryRow {
            k,
            delta,
            displacement: T::zero(),
            dxi_y: T::zero(),
            dx_y_minus_id: T::zero(),
        };
        for x in [dom.lo() + delta, dom.hi() - delta] {
            for &xi in xis {
                let mut disp = T::zero();
                flow.integrate_observed(CharState::new(x, xi), t0, t0 + horizon, |_, s| {
                    disp = disp.max((s.x - x).abs());
                })?;
                let mut dxi = T::zero();
                let mut dx = T::zero();
                flow.integrate_observed(CharState::with_jacobian(x, xi), t0, T::zero(), |_, s| {
                    let j = s.jac.expect("jacobian");
                    dxi = dxi.max(j[0][1].abs());
                    dx = dx.max((j[0][0] - T::one()).abs());
                })?;
                row.displacement = row.displacement.max(disp);
                row.dxi_y = row.dxi_y.max(dxi);
                row.dx_y_minus_id = row.dx_y_minus_id.max(dx);
            }
        }
        rows.push(row);
    }
    let mut standstill = T::zero();
    for x in [dom.lo(), dom.hi()] {
        for &xi in xis {
            flow.integrate_observed(CharState::new(x, xi), t0, t0 + horizon, |_, s| {
                standstill = standstill.max((s.x - x).abs());
            })?;
            flow.integrate_observed(CharState::new(x, xi), t0, T::zero(), |_, s| {
                standstill = standstill.max((s.x - x).abs());
            })?;
        }
    }
    Ok(BoundaryReport { rows, standstill })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityReport<T> {
    pub min_ratio: T,
    pub max_ratio: T,
    /// `sup_s |∇xΠ| / (s^α (|ξ| ∧ 1))`.
    pub gradient_bound: T,
}

impl<T: Real> VelocityReport<T> {
    /// Smallest `C >= 1` with both ratios in `[1/C, C]`.
    pub fn fitted_constant(&self) -> T {
        self.max_ratio.max(T::one() / self.min_ratio).max(T::one())
    }
}

/// Ratios `|Π_{t0,s}| / |ξ|` over `s` in `[0, t0]`.
pub fn velocity_comparability<T: Real>(
    x: T,
    xi: T,
    t0: T,
    alpha: T,
    path: &SmoothPath<T>,
    c: &Coefficient<T>,
    p: &FlowParams<T>,
) -> Result<VelocityReport<T>, FlowError> {
    if xi == T::zero() {
        return Err(FlowError::ZeroVelocity);
    }
    let flow = Flow::new(path, c, p.jacobian(true));
    let mut min_ratio = T::one();
    let mut max_ratio = T::one();
    let mut grad = T::zero();
    let scale = xi.abs().min(T::one());
    flow.integrate_observed(CharState::with_jacobian(x, xi), t0, T::zero(), |tt, s| {
        let r = s.xi.abs() / xi.abs();
        min_ratio = min_ratio.min(r);
        max_ratio = max_ratio.max(r);
        let elapsed = t0 - tt;
        if elapsed > T::zero() {
            let j = s.jac.expect("jacobian");
            grad = grad.max(j[1][0].abs() / (elapsed.powf(alpha) * scale));
        }
    })?;
    Ok(VelocityReport {
        min_ratio,
        max_ratio,
        gradient_bound: grad,
    })
}

/// Guard for [`flow_stability`]: both drivers must lie in the
/// `d_α(z, e) <= r0` ball around the trivial path.
#[derive(Debug, Clone)]
pub struct RoughBall<T> {
    pub metric: HolderMetricParams<T>,
    pub r0: T,
}

impl<T: Real> RoughBall<T> {
    pub fn check(&self, p: &SmoothPath<T>) -> Result<T, FlowError> {
        let origin = SmoothPath::new(
            p.times().to_vec(),
            vec![vec![T::zero(); p.dim()]; p.node_count()],
        )?;
        let shifted = {
            let base = p.node(0).to_vec();
            let rows = (0..p.node_count())
                .map(|j| p.node(j).iter().zip(&base).map(|(a, b)| *a - *b).collect())
                .collect();
            SmoothPath::new(p.times().to_vec(), rows)?
        };
        let d = holder_distance(
            &stratonovich_lift(&shifted),
            &stratonovich_lift(&origin),
            &self.metric,
        )?;
        if d > self.r0 {
            return Err(FlowError::BallViolation {
                distance: d.as_f64(),
                radius: self.r0.as_f64(),
            });
        }
        Ok(d)
    }
}

/// `sup` over probes of `|Φ_a - Φ_b|` and `|DΦ_a - DΦ_b|` for the forward
/// flows on `[0, T]` driven by two paths.
pub fn flow_stability<T: Real>(
    path_a: &SmoothPath<T>,
    path_b: &SmoothPath<T>,
    c: &Coefficient<T>,
    p: &FlowParams<T>,
    probes: &[(T, T)],
    ball: &RoughBall<T>,
) -> Result<T, FlowError> {
    ball.check(path_a)?;
    ball.check(path_b)?;
    let fa = Flow::new(path_a, c, p.jacobian(true));
    let fb = Flow::new(path_b, c, p.jacobian(true));
    let horizon = path_a.horizon().min(path_b.horizon());
    let mut worst = T::zero();
    for &(x, xi) in probes {
        let a = fa.forward(CharState::with_jacobian(x, xi), T::zero(), horizon)?;
        let b = fb.forward(CharState::with_jacobian(x, xi), T::zero(), horizon)?;
        worst = worst.max(a.distance(&b));
        let (ja, jb) = (a.jac.expect("jac"), b.jac.expect("jac"));
        for r in 0..2 {
            for q in 0..2 {
                worst = worst.max((ja[r][q] - jb[r][q]).abs());
            }
        }
    }
    Ok(worst)
}
