//! Acceptance criteria, one printed PASS/FAIL line each.

use std::error::Error;
use std::time::Instant;

use roughpme::characteristics::FlowParams;
use roughpme::coefficients::{build_basis_coefficient, BasisFn, Coefficient, Sigma};
use roughpme::experiments::{self, Config, Report};
use roughpme::geometry::Domain;
use roughpme::kinetic::{
    defect_tally, singular_moment, sobolev_diagnostics, weak_form_residual, BumpTest, KineticField,
    ResidualQuadrature, TimeRule, XiGrid,
};
use roughpme::pde::{solve, GridFunction, RecordPolicy, SolverParams, Trajectory};
use roughpme::roughpath::{
    holder_distance, holder_distance_parts, sample_brownian, stratonovich_lift, HolderMetricParams,
    SmoothPath,
};

type Outcome = Result<(bool, String), Box<dyn Error>>;
type Criterion = (&'static str, fn() -> Outcome);

const PI: f64 = std::f64::consts::PI;

fn config(name: &str) -> Result<Config, Box<dyn Error>> {
    let path = format!("{}/../../configs/{name}.toml", env!("CARGO_MANIFEST_DIR"));
    Ok(Config::load(std::path::Path::new(&path))?)
}

fn failures(r: &Report) -> Vec<String> {
    r.checks
        .iter()
        .filter(|c| c.asserted && !c.passed)
        .map(|c| format!("{}@{:?}={:e}>{:e}", c.name, c.seed, c.value, c.threshold))
        .collect()
}

fn worst(r: &Report, name: &str) -> f64 {
    r.check_named(name)
        .map(|c| c.value)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn bump(center: f64, width: f64) -> impl Fn(f64) -> f64 {
    move |x| {
        let s = (x - center) / width;
        if s.abs() < 1.0 {
            (1.0 - s * s).powi(2)
        } else {
            0.0
        }
    }
}

fn heat_trajectory() -> Result<(Trajectory<f64>, f64), Box<dyn Error>> {
    let dom = Domain::unit(512)?;
    let u0 = GridFunction::from_fn(dom, |x: f64| (PI * x).sin());
    let path = SmoothPath::constant(vec![0.0], 0.1);
    let start = Instant::now();
    let traj = solve(
        &u0,
        0.1,
        &SolverParams::new(1.0, 0.0, 1e-5),
        &path,
        &Coefficient::zero(1),
        &RecordPolicy::every(1000),
    )?;
    Ok((traj, start.elapsed().as_secs_f64()))
}

fn heat_oracle() -> Outcome {
    let (traj, secs) = heat_trajectory()?;
    let u = traj.last();
    let decay = (-PI * PI * u.time).exp();
    let exact = GridFunction::from_fn(u.dom, |x: f64| decay * (PI * x).sin());
    let err = u.l2_distance(&exact);
    Ok((
        err <= 5e-4 && secs < 10.0,
        format!("L2 error {err:.3e} <= 5e-4, runtime {secs:.2} s < 10 s"),
    ))
}

fn contraction() -> Outcome {
    let base = config("contraction")?;
    let mut ok = true;
    let mut parts = Vec::new();
    for m in [0.5, 1.0, 2.0, 3.0] {
        let mut cfg = base.clone();
        cfg.pde.m = m;
        cfg.tolerances.contraction = 0.02;
        let start = Instant::now();
        let r = experiments::run(&cfg)?;
        let secs = start.elapsed().as_secs_f64();
        let seeds = r.check_named("contraction").count();
        ok &= r.passed && seeds == 5 && secs < 120.0;
        parts.push(format!(
            "m={m}: max ratio {:.4} over {seeds} seeds in {secs:.1} s {:?}",
            worst(&r, "contraction"),
            failures(&r)
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn positivity_mass() -> Outcome {
    let mut cfg = config("positivity")?;
    cfg.pde.m = 3.0;
    cfg.tolerances.negativity = 1e-8;
    cfg.tolerances.mass = 1e-8;
    let r = experiments::run(&cfg)?;
    let min = r
        .check_named("positivity")
        .map(|c| c.value)
        .fold(f64::INFINITY, f64::min);
    let drift = worst(&r, "interior_mass");
    Ok((
        r.passed && min >= -1e-8 && drift <= 1e-8,
        format!("m=3: min u {min:.3e} >= -1e-8, mass drift before contact {drift:.3e} <= 1e-8"),
    ))
}

fn cocycle() -> Outcome {
    let mut cfg = config("cocycle")?;
    cfg.tolerances.cocycle_factor = 10.0;
    cfg.scenario.shift_fraction = 1.0 / 3.0;
    let r = experiments::run(&cfg)?;
    let rows: Vec<String> = r
        .check_named("cocycle")
        .map(|c| format!("{:.2e}<={:.2e}", c.value, c.threshold))
        .collect();
    Ok((
        r.passed && rows.len() == 3,
        format!(
            "s=T/3, mismatch vs 10x Richardson per seed: {}",
            rows.join(", ")
        ),
    ))
}

fn noise_continuity() -> Outcome {
    let mut cfg = config("noise_continuity")?;
    cfg.scenario.levels = 5;
    cfg.tolerances.noise_relative = 1e-2;
    let r = experiments::run(&cfg)?;
    let mean = |key: &str| -> Vec<String> {
        (1..=5)
            .map(|k| format!("{:.3e}", r.quantities[&format!("mean.{key}.{k}")]))
            .collect()
    };
    Ok((
        r.passed,
        format!(
            "d_alpha [{}], L1(L1) error [{}], finest relative {:.3e} <= 1e-2 {:?}",
            mean("rough_distance").join(" "),
            mean("solution_error").join(" "),
            worst(&r, "finest_relative_error"),
            failures(&r)
        ),
    ))
}

fn characteristics() -> Outcome {
    let mut cfg = config("flow_stability")?;
    cfg.flow.dt = 1e-3;
    cfg.flow.ladder = [3, 8];
    let t = &mut cfg.tolerances;
    t.inverse = 1e-8;
    t.determinant = 1e-6;
    t.standstill = 1e-10;
    t.boundary_flatness = 0.5;
    let r = experiments::run(&cfg)?;
    let q = |k: &str| r.quantities[&format!("seed1.{k}")];
    Ok((
        r.passed && r.check_named("sign_preservation").all(|c| c.passed),
        format!(
            "inverse {:.2e}, |detJ-1| {:.2e}, standstill {:.1e}, 1024 sign probes, flatness spreads {:.2}/{:.2}/{:.2} <= 3 {:?}",
            q("inverse_residual"),
            q("det_deviation"),
            q("standstill"),
            q("boundary_displacement_spread"),
            q("boundary_dxi_y_spread"),
            q("boundary_dx_y_minus_id_spread"),
            failures(&r)
        ),
    ))
}

fn rough_paths() -> Outcome {
    let p = sample_brownian::<f64>(11, 3, 97, 1.0)?;
    let lift = stratonovich_lift(&p);
    let n = 3;
    let times: Vec<f64> = (0..=24)
        .map(|k| k as f64 / 24.0 * 0.999 + 0.0003 * (k % 5) as f64)
        .collect();
    let (mut geo, mut chen) = (0.0f64, 0.0f64);
    for (i, &s) in times.iter().enumerate() {
        for (j, &u) in times.iter().enumerate().skip(i + 1) {
            let d = lift.increment(s, u);
            let a = lift.area(s, u);
            for x in 0..n {
                for y in 0..n {
                    let sym = 0.5 * (a[x * n + y] + a[y * n + x]);
                    geo = geo.max((sym - 0.5 * d[x] * d[y]).abs());
                }
            }
            if j > i + 1 {
                let t = times[(i + j) / 2];
                let (a1, a2) = (lift.area(s, t), lift.area(t, u));
                let (d1, d2) = (lift.increment(s, t), lift.increment(t, u));
                for x in 0..n {
                    for y in 0..n {
                        let rhs = a1[x * n + y] + a2[x * n + y] + d1[x] * d2[y];
                        chen = chen.max((a[x * n + y] - rhs).abs());
                    }
                }
            }
        }
    }

    let metric = HolderMetricParams::dyadic(0.4, 1.0, 6);
    let paths: Vec<_> = (0..4)
        .map(|s| sample_brownian::<f64>(s, 2, 64, 1.0).map(|p| stratonovich_lift(&p)))
        .collect::<Result<_, _>>()?;
    let mut axioms = true;
    for a in &paths {
        axioms &= holder_distance(a, a, &metric)? == 0.0;
        for b in &paths {
            axioms &= holder_distance(a, b, &metric)? == holder_distance(b, a, &metric)?;
            for c in &paths {
                let ab = holder_distance_parts(a, b, &metric)?.level1;
                let bc = holder_distance_parts(b, c, &metric)?.level1;
                let ac = holder_distance_parts(a, c, &metric)?.level1;
                axioms &= ac <= ab + bc;
            }
        }
    }

    // Normalized increments over 256 seeds: mean and variance bands of
    // four standard errors.
    let (steps, seeds) = (64usize, 256u64);
    let h = 0.5 / steps as f64;
    let mut g = Vec::new();
    for seed in 0..seeds {
        let p = sample_brownian::<f64>(1000 + seed, 1, steps, 0.5)?;
        for j in 0..steps {
            g.push((p.node(j + 1)[0] - p.node(j)[0]) / h.sqrt());
        }
    }
    let nn = g.len() as f64;
    let mean = g.iter().sum::<f64>() / nn;
    let var = g.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nn - 1.0);
    let stats = mean.abs() <= 4.0 / nn.sqrt() && (var - 1.0).abs() <= 4.0 * (2.0 / nn).sqrt();
    Ok((
        geo <= 1e-12 && chen <= 1e-12 && axioms && stats,
        format!(
            "geometricity {geo:.1e}, Chen {chen:.1e} <= 1e-12, d_alpha axioms {axioms}, increment mean {mean:.2e} var {var:.4} over {} samples",
            g.len()
        ),
    ))
}

struct ResidualCase {
    path: SmoothPath<f64>,
    t_end: f64,
}

impl ResidualCase {
    fn new() -> Result<Self, Box<dyn Error>> {
        Ok(Self {
            path: sample_brownian(7, 2, 8, 0.1)?,
            t_end: 0.1,
        })
    }

    fn coefficient(&self, dom: &Domain<f64>) -> Result<Coefficient<f64>, Box<dyn Error>> {
        Ok(build_basis_coefficient(
            Sigma::Linear,
            vec![BasisFn::SinSquared(1), BasisFn::SinSquared(2)],
            0.5,
            dom,
        )?)
    }

    fn trajectory(
        &self,
        level: u32,
    ) -> Result<(Trajectory<f64>, Coefficient<f64>), Box<dyn Error>> {
        let dom = Domain::unit(32 << level)?;
        let c = self.coefficient(&dom)?;
        let u0 = GridFunction::from_fn(dom, bump(0.5, 0.3));
        let dt = self.t_end / (64.0 * (1u32 << level) as f64);
        let traj = solve(
            &u0,
            self.t_end,
            &SolverParams::new(2.0, 0.01, dt),
            &self.path,
            &c,
            &RecordPolicy::every(1),
        )?;
        Ok((traj, c))
    }

    fn residual(
        &self,
        traj: &Trajectory<f64>,
        c: &Coefficient<f64>,
    ) -> Result<f64, Box<dyn Error>> {
        let rho = BumpTest {
            x0: 0.5,
            rx: 0.3,
            xi0: 0.5,
            rxi: 0.4,
        };
        let quad = ResidualQuadrature {
            time_rule: TimeRule::Trapezoid,
            ..ResidualQuadrature::default()
        };
        let flow = FlowParams::new(self.t_end / 64.0);
        Ok(
            weak_form_residual(traj, &rho, 0.0, self.t_end, &self.path, c, &flow, &quad)?
                .value
                .abs(),
        )
    }
}

fn kinetic() -> Outcome {
    // Recovery of u from the kinetic function.
    let dom = Domain::unit(64)?;
    let u = GridFunction::from_fn(dom, |x: f64| (2.0 * PI * x).sin() * 0.8 + 0.1);
    let mut recovery = Vec::new();
    let mut recovery_ok = true;
    for bins in [16usize, 32, 64, 128] {
        let g = XiGrid::new(1.0, bins)?;
        let f = KineticField::from_grid(&u, &g)?;
        let err = f
            .recover()
            .iter()
            .zip(&u.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        recovery_ok &= err <= g.width();
        recovery.push(format!("{err:.2e}"));
    }

    // Joint refinement of the cell size and the step.
    let case = ResidualCase::new()?;
    let mut res = Vec::new();
    let mut finest = None;
    let mut moments_ok = true;
    for level in 0..3 {
        let (traj, c) = case.trajectory(level)?;
        res.push(case.residual(&traj, &c)?);
        if level == 1 {
            let tally = defect_tally(&traj, &XiGrid::for_data(&traj.initial, 64)?)?;
            for delta in [1.0, 0.5, 0.25] {
                let v = singular_moment(&tally, delta)?;
                moments_ok &= v.is_finite() && v > 0.0;
            }
        }
        if level == 2 {
            finest = Some((traj, c));
        }
    }
    let ratios: Vec<f64> = res.windows(2).map(|w| w[0] / w[1]).collect();
    let decay_ok = ratios.iter().all(|r| (1.5..=3.0).contains(r));

    // Perturbation injected into the second half of the finest run.
    let (mut traj, c) = finest.expect("three levels");
    let kick = bump(0.5, 0.2);
    for s in traj
        .snapshots
        .iter_mut()
        .filter(|s| s.time >= 0.5 * case.t_end)
    {
        let dom = s.dom;
        for (i, v) in s.values.iter_mut().enumerate() {
            *v += 0.1 * kick(dom.center(i));
        }
    }
    let perturbed = case.residual(&traj, &c)?;
    let sensitivity = perturbed / res[2];

    // Poincaré ratio of the heat run.
    let (heat, _) = heat_trajectory()?;
    let sob = sobolev_diagnostics(&heat);
    let target = 1.0 / (PI * PI);
    let poincare_err = (sob.poincare_ratio_max - target).abs() / target;

    Ok((
        recovery_ok && decay_ok && sensitivity >= 10.0 && moments_ok && poincare_err <= 0.01,
        format!(
            "recovery errors [{}] <= dxi, residuals [{:.3e} {:.3e} {:.3e}] ratios [{:.2} {:.2}] in [1.5, 3], perturbation x{sensitivity:.1} >= 10, moments finite {moments_ok}, Poincare ratio {:.5} vs 1/pi^2 ({:.2e} rel)",
            recovery.join(" "),
            res[0],
            res[1],
            res[2],
            ratios[0],
            ratios[1],
            sob.poincare_ratio_max,
            poincare_err
        ),
    ))
}

fn stability_sweep() -> Outcome {
    let mut cfg = config("estimate_suite")?;
    cfg.scenario.etas = vec![0.1, 0.01, 0.001];
    cfg.scenario.meshes = vec![0.1, 0.01, 0.001];
    cfg.tolerances.estimate_spread = 2.0;
    let r = experiments::run(&cfg)?;
    let spread = worst(&r, "estimate_spread");
    let fit = r.quantities["seed1.fitted_constant"];
    let runs = r.check_named("estimate_below_fit").count();
    Ok((
        r.passed && spread < 2.0 && runs == 9,
        format!(
            "{runs} runs, spread {spread:.3} < 2, all below C(1+|u0|^2) with C = {fit:.4} {:?}",
            failures(&r)
        ),
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("heat-equation oracle", heat_oracle),
        ("L1 contraction", contraction),
        ("positivity and interior mass", positivity_mass),
        ("cocycle", cocycle),
        ("noise continuity", noise_continuity),
        ("characteristics suite", characteristics),
        ("rough-path suite", rough_paths),
        ("kinetic suite", kinetic),
        ("stability estimates", stability_sweep),
    ];
    let mut failed = Vec::new();
    for (k, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (ok, detail) = match f() {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        let secs = start.elapsed().as_secs_f64();
        println!(
            "{} [{}] {name}: {detail} ({secs:.1} s)",
            if ok { "PASS" } else { "FAIL" },
            k + 1
        );
        if !ok {
            failed.push(k + 1);
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
