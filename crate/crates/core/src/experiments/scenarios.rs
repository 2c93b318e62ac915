//! Scenario runners. Seeds run concurrently; results are folded into the
//! report in seed order.

use rayon::prelude::*;

use crate::characteristics::{
    boundary_estimates, check_inverse, flow_stability, measure_preservation, sign_preservation,
    velocity_comparability, BoundaryMetric, FlowError, FlowParams, RoughBall,
};
use crate::coefficients::Coefficient;
use crate::kinetic::{
    sobolev_diagnostics, weak_form_residual, BumpTest, DefectTally, KineticReport, ResidualEntry,
    ResidualQuadrature, TestFunction, XiGrid,
};
use crate::pde::{
    cfl_safe_dt, solve, solve_observed, stability_report, GridFunction, RecordPolicy, Trajectory,
};
use crate::roughpath::{
    coarsen, holder_distance, sample_brownian, stratonovich_lift, HolderMetricParams, SmoothPath,
};

use super::config::PathSection;
use super::{Check, Config, ExperimentError, Report, ScenarioKind};

type Res<T> = Result<T, ExperimentError>;

/// Runs the scenario named by `cfg.scenario.kind`.
pub fn run(cfg: &Config) -> Res<Report> {
    cfg.validate()?;
    match cfg.scenario.kind {
        ScenarioKind::Contraction => run_contraction(cfg),
        ScenarioKind::PositivityMass => run_positivity_mass(cfg),
        ScenarioKind::Cocycle => run_cocycle(cfg),
        ScenarioKind::NoiseContinuity => run_noise_continuity(cfg),
        ScenarioKind::VanishingViscosity => run_vanishing_viscosity(cfg),
        ScenarioKind::FlowStability => run_flow_stability(cfg),
        ScenarioKind::EstimateSuite => run_estimate_suite(cfg),
    }
}

fn per_seed<R, F>(cfg: &Config, f: F) -> Res<Vec<(u64, R)>>
where
    R: Send,
    F: Fn(u64) -> Res<R> + Sync,
{
    cfg.scenario
        .seeds
        .par_iter()
        .map(|&s| f(s).map(|r| (s, r)))
        .collect()
}

/// Configured step, or the largest CFL-safe step for every path in `paths`.
fn step_size(
    cfg: &Config,
    paths: &[&SmoothPath<f64>],
    c: &Coefficient<f64>,
    data_max: f64,
) -> Res<f64> {
    if let Some(dt) = cfg.pde.dt {
        return Ok(dt);
    }
    let dom = cfg.domain()?;
    let xi_max = 2.1 * data_max.max(1e-12);
    Ok(paths
        .iter()
        .map(|p| cfl_safe_dt(&dom, p, c, xi_max, cfg.pde.cfl_guard, cfg.pde.dt_max))
        .fold(cfg.pde.dt_max, f64::min))
}

fn record(cfg: &Config) -> RecordPolicy<f64> {
    RecordPolicy::every(cfg.pde.record_every)
}

fn require_nonnegative(u: &GridFunction<f64>, what: &str) -> Res<()> {
    if u.min() < 0.0 {
        return Err(ExperimentError::Config(format!(
            "{what} must be nonnegative"
        )));
    }
    Ok(())
}

/// Trapezoidal `∫ ‖a(t) - b(t)‖₁ dt` over shared snapshots.
fn l1l1_distance(a: &Trajectory<f64>, b: &Trajectory<f64>) -> f64 {
    let d: Vec<(f64, f64)> = a
        .snapshots
        .iter()
        .zip(&b.snapshots)
        .map(|(x, y)| (x.time, x.l1_distance(y)))
        .collect();
    trapezoid(&d)
}

fn l1l1_norm(a: &Trajectory<f64>) -> f64 {
    let d: Vec<(f64, f64)> = a.snapshots.iter().map(|x| (x.time, x.l1())).collect();
    trapezoid(&d)
}

fn trapezoid(pts: &[(f64, f64)]) -> f64 {
    pts.windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum()
}

/// Uniform `2^level`-step reference driver for the ladder scenarios.
fn reference_path(cfg: &Config, seed: u64, dim: usize) -> Res<SmoothPath<f64>> {
    let steps = 1usize << cfg.scenario.reference_level;
    let horizon = cfg.horizon();
    match cfg.path {
        PathSection::Brownian { .. } => Ok(sample_brownian(seed, dim, steps, horizon)?),
        _ => {
            let p = cfg.path(seed)?;
            let h = p.horizon();
            let times: Vec<f64> = (0..=steps).map(|k| h * k as f64 / steps as f64).collect();
            let rows = times.iter().map(|&t| p.eval(t)).collect();
            Ok(SmoothPath::new(times, rows)?)
        }
    }
}

fn non_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] <= w[0])
}

fn spread(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(0.0, f64::max);
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    if max == 0.0 {
        1.0
    } else {
        max / min
    }
}

pub fn run_contraction(cfg: &Config) -> Res<Report> {
    let c = cfg.coefficient()?;
    let (ua, ub) = (cfg.initial()?, cfg.initial_b()?);
    require_nonnegative(&ua, "pde.initial")?;
    require_nonnegative(&ub, "pde.initial_b")?;
    let rows = per_seed(cfg, |seed| {
        let path = cfg.path(seed)?;
        let dt = step_size(cfg, &[&path], &c, ua.max_abs().max(ub.max_abs()))?;
        let params = cfg.solver_params(dt);
        let ta = solve(&ua, cfg.pde.t_end, &params, &path, &c, &record(cfg))?;
        let tb = solve(&ub, cfg.pde.t_end, &params, &path, &c, &record(cfg))?;
        Ok(ta
            .snapshots
            .iter()
            .zip(&tb.snapshots)
            .map(|(a, b)| (a.time, a.l1_distance(b)))
            .collect::<Vec<_>>())
    })?;
    let d0 = ua.l1_distance(&ub);
    let mut r = Report::new(cfg);
    r.quantity("initial_l1_distance", d0);
    for (seed, diffs) in rows {
        let max = diffs.iter().map(|d| d.1).fold(0.0, f64::max);
        let ratio = if d0 > 0.0 {
            max / d0
        } else if max == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        r.quantity(format!("seed{seed}.max_ratio"), ratio);
        r.check(Check::at_most(
            "contraction",
            Some(seed),
            ratio,
            1.0 + cfg.tolerances.contraction,
        ));
        for (t, v) in diffs {
            r.series(seed, "l1_distance", t, v);
        }
    }
    Ok(r)
}

struct MassLog {
    min: f64,
    contact: Option<f64>,
    drift: f64,
    flux_after: f64,
    rows: Vec<(&'static str, f64, f64)>,
}

fn touches_boundary(u: &GridFunction<f64>) -> bool {
    match u.support(1e-8) {
        Some((a, b)) => a == 0 || b + 1 == u.len(),
        None => false,
    }
}

pub fn run_positivity_mass(cfg: &Config) -> Res<Report> {
    let c = cfg.coefficient()?;
    let u0 = cfg.initial()?;
    require_nonnegative(&u0, "pde.initial")?;
    let every = cfg.pde.record_every.max(1);
    let rows = per_seed(cfg, |seed| {
        let path = cfg.path(seed)?;
        let dt = step_size(cfg, &[&path], &c, u0.max_abs())?;
        let params = cfg.solver_params(dt);
        let m0 = u0.mass();
        let mut log = MassLog {
            min: u0.min(),
            contact: touches_boundary(&u0).then_some(u0.time),
            drift: 0.0,
            flux_after: 0.0,
            rows: vec![("mass", u0.time, m0), ("min", u0.time, u0.min())],
        };
        let mut k = 0usize;
        solve_observed(
            &u0,
            cfg.pde.t_end,
            &params,
            &path,
            &c,
            &RecordPolicy::ends(),
            |rec, u, _| {
                k += 1;
                log.min = log.min.min(rec.min);
                if log.contact.is_none() && touches_boundary(u) {
                    log.contact = Some(rec.t);
                }
                match log.contact {
                    None => {
                        let d = (rec.mass - m0).abs();
                        log.drift = log.drift.max(if m0 > 0.0 { d / m0 } else { d });
                    }
                    Some(_) => {
                        log.flux_after += rec.boundary_flux;
                        if k.is_multiple_of(every) {
                            log.rows.push(("boundary_flux", rec.t, rec.boundary_flux));
                        }
                    }
                }
                if k.is_multiple_of(every) {
                    log.rows.push(("mass", rec.t, rec.mass));
                    log.rows.push(("min", rec.t, rec.min));
                }
            },
        )?;
        Ok(log)
    })?;
    let mut r = Report::new(cfg);
    let tol = &cfg.tolerances;
    for (seed, log) in rows {
        r.check(Check::at_least(
            "positivity",
            Some(seed),
            log.min,
            -tol.negativity,
        ));
        let mass = Check::at_most("interior_mass", Some(seed), log.drift, tol.mass);
        // Fast diffusion reaches the boundary cells almost at once; the
        // drift is recorded but not asserted.
        r.check(if cfg.pde.m < 1.0 {
            mass.informational()
        } else {
            mass
        });
        r.quantity(format!("seed{seed}.min"), log.min);
        r.quantity(format!("seed{seed}.mass_drift"), log.drift);
        r.quantity(
            format!("seed{seed}.contact_time"),
            log.contact.unwrap_or(f64::NAN),
        );
        r.quantity(format!("seed{seed}.flux_after_contact"), log.flux_after);
        for (key, t, v) in log.rows {
            r.series(seed, key, t, v);
        }
    }
    Ok(r)
}

pub fn run_cocycle(cfg: &Config) -> Res<Report> {
    let c = cfg.coefficient()?;
    let u0 = cfg.initial()?;
    let t_end = cfg.pde.t_end;
    let shift = cfg.scenario.shift_fraction * t_end;
    let rows = per_seed(cfg, |seed| {
        let path = cfg.path(seed)?;
        if shift > path.horizon() {
            return Err(ExperimentError::ShiftBeyondHorizon {
                shift,
                horizon: path.horizon(),
            });
        }
        let shifted = path.shift(shift)?;
        let dt = step_size(cfg, &[&path], &c, u0.max_abs())?;
        let late = GridFunction {
            time: shift,
            ..u0.clone()
        };
        let ends = RecordPolicy::ends();
        let a = solve(&late, t_end, &cfg.solver_params(dt), &path, &c, &ends)?;
        let a2 = solve(&late, t_end, &cfg.solver_params(dt / 2.0), &path, &c, &ends)?;
        let b = solve(
            &u0,
            t_end - shift,
            &cfg.solver_params(dt),
            &shifted,
            &c,
            &ends,
        )?;
        Ok((
            a.last().l1_distance(b.last()),
            a.last().l1_distance(a2.last()),
        ))
    })?;
    let mut r = Report::new(cfg);
    r.quantity("shift", shift);
    // Round-off floor so that exactly autonomous runs are not judged
    // against a zero scheme error.
    let floor = 64.0 * f64::EPSILON * (1.0 + u0.l1());
    for (seed, (mismatch, richardson)) in rows {
        r.quantity(format!("seed{seed}.mismatch"), mismatch);
        r.quantity(format!("seed{seed}.richardson"), richardson);
        let threshold = (cfg.tolerances.cocycle_factor * richardson).max(floor);
        r.check(Check::at_most("cocycle", Some(seed), mismatch, threshold));
    }
    Ok(r)
}

pub fn run_noise_continuity(cfg: &Config) -> Res<Report> {
    let c = cfg.coefficient()?;
    let u0 = cfg.initial()?;
    let (levels, reference) = (cfg.scenario.levels, cfg.scenario.reference_level);
    if levels == 0 || reference <= levels {
        return Err(ExperimentError::NotNested(format!(
            "{levels} levels need a reference level above {levels}, got {reference}"
        )));
    }
    let rows = per_seed(cfg, |seed| {
        let fine = reference_path(cfg, seed, c.dim())?;
        let horizon = fine.horizon();
        let ladder = (1..=levels)
            .map(|k| {
                let steps = 1usize << (reference - 1 - (levels - k));
                coarsen(&fine, horizon / steps as f64)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut all: Vec<&SmoothPath<f64>> = ladder.iter().collect();
        all.push(&fine);
        let dt = step_size(cfg, &all, &c, u0.max_abs())?;
        let params = cfg.solver_params(dt);
        let metric = HolderMetricParams::dyadic_for(cfg.flow.alpha, &fine);
        let lift = stratonovich_lift(&fine);
        let uref = solve(&u0, cfg.pde.t_end, &params, &fine, &c, &record(cfg))?;
        let norm = l1l1_norm(&uref);
        let table = ladder
            .par_iter()
            .map(|p| -> Res<(f64, f64)> {
                let d = holder_distance(&stratonovich_lift(p), &lift, &metric)?;
                let u = solve(&u0, cfg.pde.t_end, &params, p, &c, &record(cfg))?;
                Ok((d, l1l1_distance(&u, &uref)))
            })
            .collect::<Res<Vec<_>>>()?;
        Ok((table, norm))
    })?;
    let mut r = Report::new(cfg);
    let n = rows.len() as f64;
    let mut mean_d = vec![0.0; levels as usize];
    let mut mean_e = vec![0.0; levels as usize];
    let mut worst = 0.0f64;
    for (seed, (table, norm)) in rows {
        let d: Vec<f64> = table.iter().map(|x| x.0).collect();
        let e: Vec<f64> = table.iter().map(|x| x.1).collect();
        for (k, (dk, ek)) in table.iter().enumerate() {
            let level = (k + 1) as f64;
            r.series(seed, "rough_distance", level, *dk);
            r.series(seed, "solution_error", level, *ek);
            mean_d[k] += dk / n;
            mean_e[k] += ek / n;
        }
        // Single samples may tie or swap neighbouring rungs of the
        // sampled Hölder distance; the ensemble mean is asserted below.
        r.check(
            Check::flag("rough_distance_monotone", Some(seed), non_increasing(&d)).informational(),
        );
        r.check(
            Check::flag("solution_error_monotone", Some(seed), non_increasing(&e)).informational(),
        );
        let rel = if norm > 0.0 {
            e[e.len() - 1] / norm
        } else {
            e[e.len() - 1]
        };
        r.quantity(format!("seed{seed}.finest_relative_error"), rel);
        worst = worst.max(rel);
    }
    for k in 0..levels as usize {
        r.quantity(format!("mean.rough_distance.{}", k + 1), mean_d[k]);
        r.quantity(format!("mean.solution_error.{}", k + 1), mean_e[k]);
    }
    r.check(Check::flag(
        "rough_distance_monotone",
        None,
        non_increasing(&mean_d),
    ));
    r.check(Check::flag(
        "solution_error_monotone",
        None,
        non_increasing(&mean_e),
    ));
    r.check(Check::at_most(
        "finest_relative_error",
        None,
        worst,
        cfg.tolerances.noise_relative,
    ));
    Ok(r)
}

pub fn run_vanishing_viscosity(cfg: &Config) -> Res<Report> {
    let c = cfg.coefficient()?;
    let u0 = cfg.initial()?;
    let (etas, meshes) = (&cfg.scenario.etas, &cfg.scenario.meshes);
    if !non_increasing(etas) || !non_increasing(meshes) {
        return Err(ExperimentError::Config(
            "etas and meshes must be decreasing".into(),
        ));
    }
    let rows = per_seed(cfg, |seed| {
        let fine = reference_path(cfg, seed, c.dim())?;
        let paths = meshes
            .iter()
            .map(|&h| coarsen(&fine, h))
            .collect::<Result<Vec<_>, _>>()?;
        let refs: Vec<&SmoothPath<f64>> = paths.iter().collect();
        let dt = step_size(cfg, &refs, &c, u0.max_abs())?;
        let runs = etas
            .par_iter()
            .zip(&paths)
            .map(|(&eta, p)| -> Res<Trajectory<f64>> {
                let params = crate::pde::SolverParams {
                    eta,
                    ..cfg.solver_params(dt)
                };
                Ok(solve(&u0, cfg.pde.t_end, &params, p, &c, &record(cfg))?)
            })
            .collect::<Res<Vec<_>>>()?;
        let diffs: Vec<f64> = runs
            .windows(2)
            .map(|w| l1l1_distance(&w[0], &w[1]))
            .collect();
        let combined: Vec<f64> = runs.iter().map(|t| stability_report(t).combined).collect();
        Ok((diffs, combined))
    })?;
    let mut r = Report::new(cfg);
    for (seed, (diffs, combined)) in rows {
        for (j, d) in diffs.iter().enumerate() {
            r.series(seed, "cauchy_difference", j as f64, *d);
        }
        for (j, v) in combined.iter().enumerate() {
            r.series(seed, "combined_estimate", j as f64, *v);
        }
        r.check(Check::flag(
            "cauchy_monotone",
            Some(seed),
            non_increasing(&diffs),
        ));
        let s = spread(&combined);
        r.quantity(format!("seed{seed}.estimate_spread"), s);
        r.check(Check::at_most(
            "estimate_bounded",
            Some(seed),
            s,
            cfg.tolerances.estimate_spread,
        ));
    }
    Ok(r)
}

struct FlowSummary {
    checks: Vec<Check>,
    quantities: Vec<(String, f64)>,
}

/// Largest velocity used in the probe grids.
const PROBE_XI: f64 = 2.0;

fn flow_summary(cfg: &Config, seed: u64, c: &Coefficient<f64>) -> Res<FlowSummary> {
    let dom = cfg.domain()?;
    let tol = &cfg.tolerances;
    let path_a = cfg.path(seed)?;
    let path_b = if path_a.segments() >= 2 {
        coarsen(&path_a, 2.0 * path_a.native_mesh())?
    } else {
        path_a.clone()
    };
    let horizon = path_a.horizon();
    let fp = FlowParams::new(cfg.flow.dt);
    let mut out = FlowSummary {
        checks: Vec::new(),
        quantities: Vec::new(),
    };
    let mut q = |k: &str, v: f64| out.quantities.push((format!("seed{seed}.{k}"), v));

    let n = 32;
    let probes: Vec<(f64, f64)> = (0..n)
        .flat_map(|i| {
            let x = dom.lo() + dom.length() * (i as f64 + 0.5) / n as f64;
            (0..n).map(move |j| (x, PROBE_XI * (2.0 * (j as f64 + 0.5) / n as f64 - 1.0)))
        })
        .collect();
    let sparse: Vec<(f64, f64)> = probes.iter().copied().step_by(41).collect();

    let signs = probes
        .par_iter()
        .map(|&(x, xi)| sign_preservation(x, xi, 0.0, horizon, &path_a, c, &fp))
        .collect::<Result<Vec<bool>, _>>()?;
    let inverse = sparse
        .iter()
        .map(|&(x, xi)| check_inverse(x, xi, 0.0, horizon, &path_a, c, &fp))
        .collect::<Result<Vec<f64>, _>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let det = sparse
        .iter()
        .map(|&(x, xi)| measure_preservation(x, xi, 0.0, horizon, &path_a, c, &fp))
        .collect::<Result<Vec<f64>, _>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let [k0, k1] = cfg.flow.ladder;
    let xis = [-1.0, -0.25, 0.25, 1.0];
    let bd = boundary_estimates(
        &dom,
        k0..=k1,
        &xis,
        0.5 * horizon,
        0.5 * horizon,
        &path_a,
        c,
        &fp,
    )?;
    let mid = dom.lo() + 0.5 * dom.length();
    let vel = velocity_comparability(mid, 1.0, horizon, cfg.flow.alpha, &path_a, c, &fp)?;
    q("inverse_residual", inverse);
    q("det_deviation", det);
    q("standstill", bd.standstill);
    q("velocity_constant", vel.fitted_constant());
    q("velocity_gradient_bound", vel.gradient_bound);

    let mut checks = vec![
        Check::flag("sign_preservation", Some(seed), signs.iter().all(|&b| b)),
        Check::at_most("inverse_relation", Some(seed), inverse, tol.inverse),
        Check::at_most("measure_preservation", Some(seed), det, tol.determinant),
        Check::at_most(
            "boundary_standstill",
            Some(seed),
            bd.standstill,
            tol.standstill,
        ),
    ];
    let limit = (1.0 + tol.boundary_flatness) / (1.0 - tol.boundary_flatness).max(1e-12);
    // A and its x-derivative vanish on the boundary, so the displacement
    // and ∂ξY decay like δ² and DxY - 1 like δ.
    for (name, metric, order) in [
        ("displacement", BoundaryMetric::Displacement, 2.0),
        ("dxi_y", BoundaryMetric::DxiY, 2.0),
        ("dx_y_minus_id", BoundaryMetric::DxYMinusId, 1.0),
    ] {
        if let Some(e) = bd.fitted_exponent(metric) {
            q(&format!("boundary_{name}_exponent"), e);
        }
        let s = bd.spread(metric, order);
        q(&format!("boundary_{name}_spread"), s);
        checks.push(Check::at_most(
            &format!("boundary_{name}_flat"),
            Some(seed),
            s,
            limit,
        ));
    }

    let ball = RoughBall {
        metric: HolderMetricParams::dyadic_for(cfg.flow.alpha, &path_a),
        r0: cfg.flow.r0,
    };
    match flow_stability(&path_a, &path_b, c, &fp, &sparse, &ball) {
        Ok(gap) => {
            let da = ball.check(&path_a)?;
            q("flow_gap", gap);
            q("ball_distance", da);
            checks.push(Check::flag("rough_ball", Some(seed), true));
        }
        Err(e @ FlowError::BallViolation { .. }) => {
            checks.push(Check::failed("rough_ball", Some(seed), e.to_string()));
        }
        Err(e) => return Err(e.into()),
    }
    out.checks = checks;
    Ok(out)
}

pub fn run_flow_stability(cfg: &Config) -> Res<Report> {
    let c = cfg.coefficient()?;
    let rows = per_seed(cfg, |seed| flow_summary(cfg, seed, &c))?;
    let mut r = Report::new(cfg);
    for (_, s) in rows {
        for (k, v) in s.quantities {
            r.quantity(k, v);
        }
        for ch in s.checks {
            r.check(ch);
        }
    }
    Ok(r)
}

/// Singular-moment exponents reported by the estimate suite.
const DELTAS: [f64; 3] = [1.0, 0.5, 0.25];

struct SweepRun {
    eta: f64,
    mesh: f64,
    combined: f64,
    kinetic: Option<KineticReport>,
}

pub fn run_estimate_suite(cfg: &Config) -> Res<Report> {
    let c = cfg.coefficient()?;
    let u0 = cfg.initial()?;
    require_nonnegative(&u0, "pde.initial")?;
    let xi_grid = XiGrid::for_data(&u0, 64)?;
    let dom = cfg.domain()?;
    let pairs: Vec<(f64, f64)> = cfg
        .scenario
        .etas
        .iter()
        .flat_map(|&e| cfg.scenario.meshes.iter().map(move |&h| (e, h)))
        .collect();
    let rows = per_seed(cfg, |seed| {
        let fine = reference_path(cfg, seed, c.dim())?;
        let paths = pairs
            .iter()
            .map(|&(_, h)| coarsen(&fine, h))
            .collect::<Result<Vec<_>, _>>()?;
        let refs: Vec<&SmoothPath<f64>> = paths.iter().collect();
        let dt = step_size(cfg, &refs, &c, u0.max_abs())?;
        pairs
            .par_iter()
            .zip(&paths)
            .enumerate()
            .map(|(j, (&(eta, mesh), p))| -> Res<SweepRun> {
                let params = crate::pde::SolverParams {
                    eta,
                    ..cfg.solver_params(dt)
                };
                let mut tally = DefectTally::new(xi_grid);
                let mut deposit = Ok(());
                let traj = solve_observed(
                    &u0,
                    cfg.pde.t_end,
                    &params,
                    p,
                    &c,
                    &record(cfg),
                    |rec, _, faces| {
                        if deposit.is_ok() {
                            deposit = tally.deposit(rec.t, rec.dt, faces);
                        }
                    },
                )?;
                deposit?;
                let combined = stability_report(&traj).combined;
                // Kinetic diagnostics on the calibration run only.
                let kinetic = if j == 0 {
                    let rho = BumpTest {
                        x0: dom.lo() + 0.5 * dom.length(),
                        rx: 0.3 * dom.length(),
                        xi0: 0.5 * u0.max_abs(),
                        rxi: 0.5 * u0.max_abs().max(1e-12),
                    };
                    let end = traj.last().time;
                    let t1 = traj
                        .snapshots
                        .iter()
                        .map(|s| s.time)
                        .find(|&t| t > 0.0 && t >= 0.1 * end)
                        .unwrap_or(end);
                    let t0 = 0.0;
                    let w = weak_form_residual(
                        &traj,
                        &rho,
                        t0,
                        t1,
                        p,
                        &c,
                        &FlowParams::new(cfg.flow.dt),
                        &ResidualQuadrature::default(),
                    )?;
                    let entry = ResidualEntry {
                        rho_id: rho.id(),
                        t0,
                        t1,
                        value: w.value,
                    };
                    let sob = sobolev_diagnostics(&traj);
                    Some(KineticReport::build(&tally, &DELTAS, &sob, vec![entry])?)
                } else {
                    None
                };
                Ok(SweepRun {
                    eta,
                    mesh,
                    combined,
                    kinetic,
                })
            })
            .collect::<Res<Vec<_>>>()
    })?;
    let mut r = Report::new(cfg);
    let scale = 1.0 + u0.l2_sq();
    for (seed, runs) in rows {
        let combined: Vec<f64> = runs.iter().map(|s| s.combined).collect();
        let fitted = cfg.tolerances.estimate_margin * combined[0] / scale;
        r.quantity(format!("seed{seed}.fitted_constant"), fitted);
        for (j, s) in runs.iter().enumerate() {
            r.series(
                seed,
                &format!("combined_eta{}_mesh{}", s.eta, s.mesh),
                j as f64,
                s.combined,
            );
            r.check(Check::at_most(
                "estimate_below_fit",
                Some(seed),
                s.combined,
                fitted * scale,
            ));
        }
        let sp = spread(&combined);
        r.quantity(format!("seed{seed}.estimate_spread"), sp);
        r.check(Check::at_most(
            "estimate_spread",
            Some(seed),
            sp,
            cfg.tolerances.estimate_spread,
        ));
        if let Some(k) = runs.into_iter().find_map(|s| s.kinetic) {
            let finite = k.singular_moments.values().all(|v| v.is_finite());
            r.check(Check::flag("singular_moments_finite", Some(seed), finite));
            r.check(
                Check::at_most(
                    "weak_residual",
                    Some(seed),
                    k.weak_residuals
                        .iter()
                        .map(|w| w.value.abs())
                        .fold(0.0, f64::max),
                    f64::INFINITY,
                )
                .informational(),
            );
            if r.kinetic.is_none() {
                r.kinetic = Some(k);
            }
        }
    }
    Ok(r)
}
