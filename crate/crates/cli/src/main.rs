use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use roughpme::characteristics::{CharState, Flow, FlowParams};
use roughpme::coefficients::{build_basis_coefficient, BasisFn, Coefficient, Sigma};
use roughpme::experiments::{self, output_dir, write_outputs, Config, SimulationConfig};
use roughpme::geometry::Domain;
use roughpme::pde::{solve, stability_report, RecordPolicy};
use roughpme::roughpath::{read_csv, sample_brownian, SmoothPath};

#[derive(Parser)]
#[command(
    name = "roughpme",
    version,
    about = "Porous-medium equations with rough transport noise"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Trace characteristics from a probe grid; CSV on stdout.
    Characteristics(CharArgs),
    /// Run one simulation; writes snapshots.csv and stability.json.
    Simulate {
        config: PathBuf,
        /// Output directory (defaults to $ROUGHPME_OUT or ./out).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario; exit code 0 iff all asserted checks pass.
    Experiment {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct CharArgs {
    /// zero | linear | basis
    #[arg(long, default_value = "basis")]
    coefficient: String,
    /// Comma-separated basis ids, e.g. sin2:1,sin2:2
    #[arg(long, default_value = "sin2:1,sin2:2")]
    basis: String,
    #[arg(long, default_value = "linear")]
    sigma: String,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Comma-separated weights of the linear coefficient.
    #[arg(long, default_value = "1")]
    weights: String,
    /// Brownian driver seed (ignored with --path-file).
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 256)]
    steps: usize,
    /// Read the driver from a CSV file "t,z1,...,zn".
    #[arg(long)]
    path_file: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    t0: f64,
    #[arg(long, default_value_t = 1.0)]
    horizon: f64,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long, default_value_t = 0.0)]
    lo: f64,
    #[arg(long, default_value_t = 1.0)]
    hi: f64,
    #[arg(long, default_value_t = 5)]
    nx: usize,
    #[arg(long, default_value_t = 5)]
    nxi: usize,
    #[arg(long, default_value_t = 1.0)]
    xi_max: f64,
    /// Emit every k-th sub-step.
    #[arg(long, default_value_t = 1)]
    every: usize,
}

fn list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<T>()
                .with_context(|| format!("bad list entry {p:?}"))
        })
        .collect()
}

fn characteristics(a: CharArgs) -> Result<()> {
    let dom = Domain::new(a.lo, a.hi, 64)?;
    let coef = match a.coefficient.as_str() {
        "zero" => Coefficient::zero(list::<f64>(&a.weights)?.len()),
        "linear" => Coefficient::linear_in_xi(list(&a.weights)?),
        "basis" => {
            let basis = a
                .basis
                .split(',')
                .map(|b| BasisFn::parse(b.trim()))
                .collect::<Result<Vec<_>, _>>()?;
            build_basis_coefficient(Sigma::parse(&a.sigma)?, basis, a.scale, &dom)?
        }
        other => bail!("unknown coefficient kind {other:?}"),
    };
    let path: SmoothPath<f64> = match &a.path_file {
        Some(f) => read_csv(std::fs::File::open(f).with_context(|| f.display().to_string())?)?,
        None => sample_brownian(a.seed, coef.dim(), a.steps, a.t0 + a.horizon)?,
    };
    let flow = Flow::new(&path, &coef, FlowParams::new(a.dt).jacobian(true));
    let mut w = csv::Writer::from_writer(std::io::stdout().lock());
    w.write_record(["x0", "xi0", "t", "X", "Xi", "detJ"])?;
    let every = a.every.max(1);
    for i in 0..a.nx {
        let x0 = a.lo + (a.hi - a.lo) * (i as f64 + 0.5) / a.nx as f64;
        for j in 0..a.nxi {
            let xi0 = if a.nxi == 1 {
                a.xi_max
            } else {
                a.xi_max * (2.0 * j as f64 / (a.nxi - 1) as f64 - 1.0)
            };
            let start = CharState::with_jacobian(x0, xi0);
            let mut rows = vec![(a.t0, start)];
            let mut k = 0usize;
            let end = flow.integrate_observed(start, a.t0, a.t0 + a.horizon, |t, s| {
                k += 1;
                if k.is_multiple_of(every) {
                    rows.push((t, *s));
                }
            })?;
            if rows.last().map(|r| r.1) != Some(end) {
                rows.push((a.t0 + a.horizon, end));
            }
            for (t, s) in rows {
                let det = s.det().unwrap_or(1.0);
                w.serialize((x0, xi0, t, s.x, s.xi, det))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn simulate(config: PathBuf, out: Option<PathBuf>) -> Result<()> {
    let text = std::fs::read_to_string(&config).with_context(|| config.display().to_string())?;
    let sim = SimulationConfig::from_toml(&text)?;
    let cfg = sim.to_config();
    let c = cfg.coefficient()?;
    let u0 = cfg.initial()?;
    let path = cfg.path(sim.seed)?;
    let dt = match cfg.pde.dt {
        Some(dt) => dt,
        None => roughpme::pde::cfl_safe_dt(
            &cfg.domain()?,
            &path,
            &c,
            2.1 * u0.max_abs().max(1e-12),
            cfg.pde.cfl_guard,
            cfg.pde.dt_max,
        ),
    };
    let record = if sim.record_times.is_empty() {
        RecordPolicy::every(cfg.pde.record_every)
    } else {
        RecordPolicy::at(sim.record_times.clone())
    };
    let traj = solve(
        &u0,
        cfg.pde.t_end,
        &cfg.solver_params(dt),
        &path,
        &c,
        &record,
    )?;
    let dir = out.unwrap_or_else(output_dir);
    std::fs::create_dir_all(&dir)?;
    let mut w = csv::Writer::from_path(dir.join("snapshots.csv"))?;
    w.write_record(["t", "x", "u"])?;
    for s in &traj.snapshots {
        for (i, u) in s.values.iter().enumerate() {
            w.serialize((s.time, s.dom.center(i), u))?;
        }
    }
    w.flush()?;
    let report = serde_json::to_string_pretty(&stability_report(&traj))?;
    std::fs::write(dir.join("stability.json"), format!("{report}\n"))?;
    writeln!(std::io::stdout(), "{report}")?;
    Ok(())
}

fn experiment(config: PathBuf, out: Option<PathBuf>) -> Result<bool> {
    let cfg = Config::load(&config)?;
    let report = experiments::run(&cfg)?;
    let dir = out.unwrap_or_else(output_dir);
    write_outputs(&report, &dir)?;
    let mut stdout = std::io::stdout().lock();
    for c in &report.checks {
        let status = match (c.passed, c.asserted) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "info",
        };
        let seed = c.seed.map(|s| format!(" seed={s}")).unwrap_or_default();
        writeln!(
            stdout,
            "{status} {}{seed} value={:e} threshold={:e}",
            c.name, c.value, c.threshold
        )?;
    }
    writeln!(
        stdout,
        "{}: {}",
        report.scenario,
        if report.passed { "passed" } else { "failed" }
    )?;
    Ok(report.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Characteristics(a) => characteristics(a).map(|_| true),
        Command::Simulate { config, out } => simulate(config, out).map(|_| true),
        Command::Experiment { config, out } => experiment(config, out),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
