use roughpme::experiments::{self, write_outputs, Config, ScenarioKind};

const BASE: &str = r#"
[scenario]
id = "small"
kind = "contraction"
seeds = [1, 2]

[pde]
m = 2.0
cells = 32
t_end = 0.02
record_every = 5
initial = [{ kind = "bump", center = 0.45, width = 0.2 }]
initial_b = [{ kind = "bump", center = 0.55, width = 0.2, amplitude = 0.5 }]

[coefficient]
kind = "basis"
basis = ["sin2:1", "sin2:2"]
scale = 0.5

[path]
kind = "brownian"
steps = 64
"#;

fn cfg(kind: &str, extra: &[(&str, &str)]) -> Config {
    let mut text = BASE.replace("kind = \"contraction\"", &format!("kind = \"{kind}\""));
    for (from, to) in extra {
        assert!(text.contains(from), "{from}");
        text = text.replace(from, to);
    }
    Config::from_toml(&text).unwrap()
}

#[test]
fn identical_config_reproduces_bit_exactly() {
    let c = cfg("contraction", &[]);
    let a = experiments::run(&c).unwrap();
    let b = experiments::run(&c).unwrap();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
    assert_eq!(a.series, b.series);
    assert_eq!(a.provenance.config_hash.len(), 64);
    assert_eq!(a.provenance.version, env!("CARGO_PKG_VERSION"));
    let other = cfg("contraction", &[("cells = 32", "cells = 33")]);
    assert_ne!(Config::canonical(&other), c.canonical());
    assert_ne!(
        experiments::run(&other).unwrap().provenance.config_hash,
        a.provenance.config_hash
    );
}

#[test]
fn outputs_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let r = experiments::run(&cfg("contraction", &[])).unwrap();
    write_outputs(&r, dir.path()).unwrap();
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(json["scenario"], "small");
    assert_eq!(json["kind"], "contraction");
    assert!(json["provenance"]["config_hash"].is_string());
    assert_eq!(json["checks"].as_array().unwrap().len(), 2);
    let csv = std::fs::read_to_string(dir.path().join("series.csv")).unwrap();
    assert!(csv.starts_with("scenario,seed,key,t,value\n"));
    assert_eq!(csv.lines().count(), 1 + r.series.len());
}

#[test]
fn equal_data_contract_trivially() {
    let c = cfg(
        "contraction",
        &[(
            "center = 0.55, width = 0.2, amplitude = 0.5",
            "center = 0.45, width = 0.2",
        )],
    );
    let r = experiments::run(&c).unwrap();
    assert!(r.passed);
    assert!(r.checks.iter().all(|c| c.value == 0.0));
}

#[test]
fn heat_contraction_decreases_strictly() {
    let c = cfg(
        "contraction",
        &[
            ("m = 2.0", "m = 1.0"),
            (
                "kind = \"basis\"\nbasis = [\"sin2:1\", \"sin2:2\"]\nscale = 0.5",
                "kind = \"zero\"\ndim = 1",
            ),
        ],
    );
    let r = experiments::run(&c).unwrap();
    assert!(r.passed);
    let d: Vec<f64> = r
        .series
        .iter()
        .filter(|s| s.seed == 1)
        .map(|s| s.value)
        .collect();
    assert!(d.len() > 3);
    assert!(d.windows(2).all(|w| w[1] < w[0]), "{d:?}");
}

#[test]
fn zero_data_stays_zero() {
    let c = cfg(
        "positivity-mass",
        &[(
            "initial = [{ kind = \"bump\", center = 0.45, width = 0.2 }]",
            "initial = [{ kind = \"zero\" }]",
        )],
    );
    let r = experiments::run(&c).unwrap();
    assert!(r.passed);
    assert!(r
        .checks
        .iter()
        .all(|c| c.value == 0.0 || c.name == "positivity" && c.value == 0.0));
}

#[test]
fn positivity_and_mass_for_porous_medium() {
    let r = experiments::run(&cfg("positivity-mass", &[("m = 2.0", "m = 3.0")])).unwrap();
    assert!(r.passed, "{:?}", r.checks);
    assert!(r.quantities["seed1.mass_drift"] <= 1e-10);
}

#[test]
fn fast_diffusion_logs_contact_without_asserting_mass() {
    let r = experiments::run(&cfg("positivity-mass", &[("m = 2.0", "m = 0.5")])).unwrap();
    let mass: Vec<_> = r.check_named("interior_mass").collect();
    assert!(mass.iter().all(|c| !c.asserted));
    assert!(r.quantities["seed1.contact_time"].is_finite());
    assert!(r.series.iter().any(|s| s.key == "boundary_flux"));
}

#[test]
fn cocycle_cases() {
    let zero_shift = experiments::run(&cfg(
        "cocycle",
        &[("seeds = [1, 2]", "seeds = [1]\nshift_fraction = 0.0")],
    ))
    .unwrap();
    assert_eq!(zero_shift.quantities["seed1.mismatch"], 0.0);
    let r = experiments::run(&cfg("cocycle", &[])).unwrap();
    assert!(r.passed, "{:?}", r.checks);
}

#[test]
fn noise_decouples_without_coefficient() {
    let c = cfg(
        "noise-continuity",
        &[
            (
                "seeds = [1, 2]",
                "seeds = [1]\nlevels = 3\nreference_level = 6",
            ),
            (
                "kind = \"basis\"\nbasis = [\"sin2:1\", \"sin2:2\"]\nscale = 0.5",
                "kind = \"zero\"\ndim = 2",
            ),
        ],
    );
    let r = experiments::run(&c).unwrap();
    let errors: Vec<f64> = r
        .series
        .iter()
        .filter(|s| s.key == "solution_error")
        .map(|s| s.value)
        .collect();
    assert_eq!(errors, vec![0.0; 3]);
    assert!(r.passed);
}

#[test]
fn shallow_ladder_is_rejected() {
    let c = cfg(
        "noise-continuity",
        &[(
            "seeds = [1, 2]",
            "seeds = [1]\nlevels = 4\nreference_level = 4",
        )],
    );
    assert!(matches!(
        experiments::run(&c),
        Err(experiments::ExperimentError::NotNested(_))
    ));
}

#[test]
fn constant_viscosity_ladder_has_zero_differences() {
    let c = cfg(
        "vanishing-viscosity",
        &[(
            "seeds = [1, 2]",
            "seeds = [1]\nreference_level = 6\netas = [0.01, 0.01]\nmeshes = [0.005, 0.005]",
        )],
    );
    let r = experiments::run(&c).unwrap();
    assert!(r.passed);
    let d: Vec<f64> = r
        .series
        .iter()
        .filter(|s| s.key == "cauchy_difference")
        .map(|s| s.value)
        .collect();
    assert_eq!(d, vec![0.0]);
}

#[test]
fn flow_stability_trivial_and_out_of_ball() {
    let zero = cfg(
        "flow-stability",
        &[
            ("seeds = [1, 2]", "seeds = [1]"),
            (
                "kind = \"basis\"\nbasis = [\"sin2:1\", \"sin2:2\"]\nscale = 0.5",
                "kind = \"zero\"\ndim = 2",
            ),
        ],
    );
    let r = experiments::run(&zero).unwrap();
    assert!(r.passed, "{:?}", r.checks);
    assert_eq!(r.quantities["seed1.flow_gap"], 0.0);
    assert_eq!(r.quantities["seed1.velocity_constant"], 1.0);
    assert_eq!(r.quantities["seed1.inverse_residual"], 0.0);

    let tight = Config {
        flow: roughpme::experiments::config::FlowSection {
            r0: 1e-3,
            ..zero.flow.clone()
        },
        ..zero
    };
    let r = experiments::run(&tight).unwrap();
    assert_eq!(r.kind, ScenarioKind::FlowStability);
    let ball: Vec<_> = r.check_named("rough_ball").collect();
    assert!(!ball[0].passed, "{:?}", r.checks);
    assert!(ball[0]
        .detail
        .as_deref()
        .unwrap()
        .contains("outside the rough-path ball"));
    assert!(!r.passed);
}

#[test]
fn estimate_suite_reports_kinetic_diagnostics() {
    let c = cfg(
        "estimate-suite",
        &[(
            "seeds = [1, 2]",
            "seeds = [1]\nreference_level = 8\netas = [0.1, 0.01]\nmeshes = [0.01, 0.005]",
        )],
    );
    let r = experiments::run(&c).unwrap();
    assert!(r.passed, "{:?}", r.checks);
    let k = r.kinetic.as_ref().unwrap();
    assert_eq!(k.singular_moments.len(), 3);
    assert!(k.q_total > 0.0 && k.p_total > 0.0);
    let json = serde_json::to_value(k).unwrap();
    for key in [
        "q_total",
        "p_total",
        "singular_moments",
        "poincare_ratio_max",
        "sobolev_pm_norm",
        "weak_residuals",
    ] {
        assert!(json.get(key).is_some(), "{key}");
    }
}
