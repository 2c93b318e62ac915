//! TOML configuration of a scenario.

use serde::{Deserialize, Serialize};

use crate::coefficients::{build_basis_coefficient, BasisFn, Coefficient, Sigma};
use crate::geometry::Domain;
use crate::pde::{FluxScheme, GridFunction, SolverParams};
use crate::roughpath::{read_csv, sample_brownian, SmoothPath};

use super::ExperimentError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Contraction,
    PositivityMass,
    Cocycle,
    NoiseContinuity,
    VanishingViscosity,
    FlowStability,
    EstimateSuite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub id: String,
    pub kind: ScenarioKind,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Cocycle shift as a fraction of `t_end`.
    #[serde(default = "default_shift")]
    pub shift_fraction: f64,
    /// Dyadic levels of the noise-continuity ladder.
    #[serde(default = "default_levels")]
    pub levels: u32,
    /// Steps of the reference path, as a power of two.
    #[serde(default = "default_ref_level")]
    pub reference_level: u32,
    /// Viscosities of the vanishing-viscosity ladder or the estimate sweep.
    #[serde(default)]
    pub etas: Vec<f64>,
    /// Path meshes paired with `etas` (ladder) or crossed with them (sweep).
    #[serde(default)]
    pub meshes: Vec<f64>,
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}
fn default_shift() -> f64 {
    1.0 / 3.0
}
fn default_levels() -> u32 {
    5
}
fn default_ref_level() -> u32 {
    10
}

/// One piece of the initial datum; the datum is their sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitialPiece {
    /// `amplitude (1 - s²)²` with `s = (x - center)/width`.
    Bump {
        center: f64,
        width: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// `amplitude sin(kπ(x - lo)/L)`.
    Sine {
        #[serde(default = "one_u")]
        k: u32,
        #[serde(default = "one")]
        amplitude: f64,
    },
    Zero,
}

fn one() -> f64 {
    1.0
}
fn one_u() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeSection {
    pub m: f64,
    #[serde(default)]
    pub eta: f64,
    pub cells: usize,
    pub t_end: f64,
    #[serde(default)]
    pub lo: Option<f64>,
    #[serde(default)]
    pub hi: Option<f64>,
    /// Fixed step; when absent the largest CFL-safe step below `dt_max`.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "default_dt_max")]
    pub dt_max: f64,
    #[serde(default = "default_flux")]
    pub flux_scheme: FluxScheme,
    #[serde(default = "default_guard")]
    pub cfl_guard: f64,
    #[serde(default = "default_theta")]
    pub theta_reg: f64,
    #[serde(default = "default_record")]
    pub record_every: usize,
    pub initial: Vec<InitialPiece>,
    /// Second datum of the contraction scenario.
    #[serde(default)]
    pub initial_b: Vec<InitialPiece>,
}

fn default_dt_max() -> f64 {
    1e-3
}
fn default_flux() -> FluxScheme {
    FluxScheme::Upwind
}
fn default_guard() -> f64 {
    0.45
}
fn default_theta() -> f64 {
    1e-10
}
fn default_record() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum CoefficientSection {
    Zero {
        #[serde(default = "one_usize")]
        dim: usize,
    },
    Linear {
        weights: Vec<f64>,
    },
    Basis {
        #[serde(default = "default_sigma")]
        sigma: String,
        basis: Vec<String>,
        #[serde(default = "one")]
        scale: f64,
    },
}

fn one_usize() -> usize {
    1
}
fn default_sigma() -> String {
    "linear".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PathSection {
    /// Seeded Brownian motion sampled on a uniform mesh.
    Brownian {
        steps: usize,
        #[serde(default)]
        horizon: Option<f64>,
    },
    Linear {
        direction: Vec<f64>,
        #[serde(default)]
        horizon: Option<f64>,
    },
    Zero {
        #[serde(default)]
        horizon: Option<f64>,
    },
    Csv {
        file: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    #[serde(default = "default_flow_dt")]
    pub dt: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_r0")]
    pub r0: f64,
    #[serde(default = "default_ladder")]
    pub ladder: [u32; 2],
}

fn default_flow_dt() -> f64 {
    1e-3
}
fn default_alpha() -> f64 {
    0.4
}
fn default_r0() -> f64 {
    50.0
}
fn default_ladder() -> [u32; 2] {
    [3, 8]
}

impl Default for FlowSection {
    fn default() -> Self {
        Self {
            dt: default_flow_dt(),
            alpha: default_alpha(),
            r0: default_r0(),
            ladder: default_ladder(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_contraction")]
    pub contraction: f64,
    #[serde(default = "default_neg")]
    pub negativity: f64,
    #[serde(default = "default_mass")]
    pub mass: f64,
    #[serde(default = "default_cocycle")]
    pub cocycle_factor: f64,
    #[serde(default = "default_noise")]
    pub noise_relative: f64,
    #[serde(default = "default_spread")]
    pub estimate_spread: f64,
    #[serde(default = "default_margin")]
    pub estimate_margin: f64,
    #[serde(default = "default_inverse")]
    pub inverse: f64,
    #[serde(default = "default_det")]
    pub determinant: f64,
    #[serde(default = "default_standstill")]
    pub standstill: f64,
    #[serde(default = "default_flat")]
    pub boundary_flatness: f64,
}

fn default_contraction() -> f64 {
    0.02
}
fn default_neg() -> f64 {
    1e-8
}
fn default_mass() -> f64 {
    1e-8
}
fn default_cocycle() -> f64 {
    10.0
}
fn default_noise() -> f64 {
    1e-2
}
fn default_spread() -> f64 {
    2.0
}
fn default_margin() -> f64 {
    2.0
}
fn default_inverse() -> f64 {
    1e-8
}
fn default_det() -> f64 {
    1e-6
}
fn default_standstill() -> f64 {
    1e-10
}
fn default_flat() -> f64 {
    0.5
}

impl Default for Tolerances {
    fn default() -> Self {
        toml::from_str("").expect("all tolerance fields have defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub scenario: ScenarioSection,
    pub pde: PdeSection,
    pub coefficient: CoefficientSection,
    pub path: PathSection,
    #[serde(default)]
    pub flow: FlowSection,
    #[serde(default)]
    pub tolerances: Tolerances,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Checks the preconditions of the modules before anything runs.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |s: String| Err(ExperimentError::Config(s));
        let p = &self.pde;
        if p.initial.is_empty() {
            return bad("pde.initial must list at least one piece".into());
        }
        if !(p.t_end >= 0.0) {
            return bad("pde.t_end must be nonnegative".into());
        }
        if self.scenario.seeds.is_empty() {
            return bad("scenario.seeds must not be empty".into());
        }
        if self.scenario.kind == ScenarioKind::Contraction && p.initial_b.is_empty() {
            return bad("contraction needs pde.initial_b".into());
        }
        if !(0.0..=1.0).contains(&self.scenario.shift_fraction) {
            return bad("scenario.shift_fraction must lie in [0, 1]".into());
        }
        if matches!(self.scenario.kind, ScenarioKind::VanishingViscosity)
            && (self.scenario.etas.len() != self.scenario.meshes.len()
                || self.scenario.etas.len() < 2)
        {
            return bad(
                "vanishing-viscosity needs equally long etas and meshes (at least two)".into(),
            );
        }
        if matches!(self.scenario.kind, ScenarioKind::EstimateSuite)
            && (self.scenario.etas.is_empty() || self.scenario.meshes.is_empty())
        {
            return bad("estimate-suite needs etas and meshes".into());
        }
        self.domain()?;
        self.coefficient()?;
        self.solver_params(self.pde.dt.unwrap_or(self.pde.dt_max))
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn domain(&self) -> Result<Domain<f64>, ExperimentError> {
        Domain::new(
            self.pde.lo.unwrap_or(0.0),
            self.pde.hi.unwrap_or(1.0),
            self.pde.cells,
        )
        .map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn coefficient(&self) -> Result<Coefficient<f64>, ExperimentError> {
        let cfg = |e: String| ExperimentError::Config(e);
        Ok(match &self.coefficient {
            CoefficientSection::Zero { dim } => Coefficient::zero(*dim),
            CoefficientSection::Linear { weights } => Coefficient::linear_in_xi(weights.clone()),
            CoefficientSection::Basis {
                sigma,
                basis,
                scale,
            } => {
                let sigma = Sigma::parse(sigma).map_err(|e| cfg(e.to_string()))?;
                let basis = basis
                    .iter()
                    .map(|b| BasisFn::parse(b))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| cfg(e.to_string()))?;
                build_basis_coefficient(sigma, basis, *scale, &self.domain()?)
                    .map_err(|e| cfg(e.to_string()))?
            }
        })
    }

    fn initial_from(&self, pieces: &[InitialPiece]) -> Result<GridFunction<f64>, ExperimentError> {
        let dom = self.domain()?;
        let (lo, len) = (dom.lo(), dom.length());
        let pieces = pieces.to_vec();
        Ok(GridFunction::from_fn(dom, move |x| {
            pieces
                .iter()
                .map(|p| match p {
                    InitialPiece::Bump {
                        center,
                        width,
                        amplitude,
                    } => {
                        let s = (x - center) / width;
                        if s.abs() < 1.0 {
                            amplitude * (1.0 - s * s).powi(2)
                        } else {
                            0.0
                        }
                    }
                    InitialPiece::Sine { k, amplitude } => {
                        amplitude * (*k as f64 * std::f64::consts::PI * (x - lo) / len).sin()
                    }
                    InitialPiece::Zero => 0.0,
                })
                .sum()
        }))
    }

    pub fn initial(&self) -> Result<GridFunction<f64>, ExperimentError> {
        self.initial_from(&self.pde.initial)
    }

    pub fn initial_b(&self) -> Result<GridFunction<f64>, ExperimentError> {
        self.initial_from(&self.pde.initial_b)
    }

    pub fn horizon(&self) -> f64 {
        let h = match &self.path {
            PathSection::Brownian { horizon, .. }
            | PathSection::Linear { horizon, .. }
            | PathSection::Zero { horizon } => *horizon,
            PathSection::Csv { .. } => None,
        };
        h.unwrap_or(self.pde.t_end)
    }

    pub fn path(&self, seed: u64) -> Result<SmoothPath<f64>, ExperimentError> {
        let dim = self.coefficient()?.dim();
        let horizon = self.horizon();
        let p = match &self.path {
            PathSection::Brownian { steps, .. } => sample_brownian(seed, dim, *steps, horizon)?,
            PathSection::Linear { direction, .. } => SmoothPath::linear(direction.clone(), horizon),
            PathSection::Zero { .. } => SmoothPath::constant(vec![0.0; dim], horizon),
            PathSection::Csv { file } => {
                let f = std::fs::File::open(file)
                    .map_err(|e| ExperimentError::Config(format!("{file}: {e}")))?;
                read_csv(f)?
            }
        };
        if p.dim() != dim {
            return Err(ExperimentError::Config(format!(
                "path dimension {} does not match coefficient dimension {dim}",
                p.dim()
            )));
        }
        Ok(p)
    }

    pub fn solver_params(&self, dt: f64) -> SolverParams<f64> {
        let p = &self.pde;
        SolverParams {
            flux_scheme: p.flux_scheme,
            cfl_guard: p.cfl_guard,
            theta_reg: p.theta_reg,
            ..SolverParams::new(p.m, p.eta, dt)
        }
    }

    /// Canonical JSON of the parsed configuration, the input of the hash.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

/// Input of a single simulation: the solver, coefficient and path sections
/// of a scenario plus the driver seed and snapshot times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default = "one_u64")]
    pub seed: u64,
    #[serde(default)]
    pub record_times: Vec<f64>,
    pub pde: PdeSection,
    pub coefficient: CoefficientSection,
    pub path: PathSection,
}

fn one_u64() -> u64 {
    1
}

impl SimulationConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let s: Self = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        s.to_config().validate()?;
        Ok(s)
    }

    /// The equivalent single-seed scenario, used for its builders.
    pub fn to_config(&self) -> Config {
        Config {
            scenario: ScenarioSection {
                id: "simulate".into(),
                kind: ScenarioKind::PositivityMass,
                seeds: vec![self.seed],
                shift_fraction: default_shift(),
                levels: default_levels(),
                reference_level: default_ref_level(),
                etas: Vec::new(),
                meshes: Vec::new(),
            },
            pde: self.pde.clone(),
            coefficient: self.coefficient.clone(),
            path: self.path.clone(),
            flow: FlowSection::default(),
            tolerances: Tolerances::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [scenario]
        id = "demo"
        kind = "positivity-mass"

        [pde]
        m = 2.0
        cells = 32
        t_end = 0.05
        initial = [{ kind = "bump", center = 0.5, width = 0.2 }]

        [coefficient]
        kind = "basis"
        basis = ["sin2:1", "sin2:2"]
        scale = 0.5

        [path]
        kind = "brownian"
        steps = 64
    "#;

    #[test]
    fn parses_with_defaults() {
        let c = Config::from_toml(MINIMAL).unwrap();
        assert_eq!(c.scenario.kind, ScenarioKind::PositivityMass);
        assert_eq!(c.scenario.seeds, vec![1]);
        assert_eq!(c.tolerances.contraction, 0.02);
        assert_eq!(c.flow, FlowSection::default());
        assert_eq!(c.horizon(), 0.05);
        assert_eq!(c.path(3).unwrap().dim(), 2);
        let u0 = c.initial().unwrap();
        // Cell averages next to a peak that sits on a face.
        assert!(u0.max_abs() > 0.98 && u0.max_abs() < 1.0);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let extra = MINIMAL.replace("cells = 32", "cells = 32\nbogus = 1");
        assert!(Config::from_toml(&extra).is_err());
        let neg = MINIMAL.replace("m = 2.0", "m = -1.0");
        assert!(Config::from_toml(&neg).is_err());
        let contraction = MINIMAL.replace("positivity-mass", "contraction");
        assert!(Config::from_toml(&contraction).is_err());
        let sigma = MINIMAL.replace("scale = 0.5", "scale = 0.5\nsigma = \"cubic\"");
        assert!(Config::from_toml(&sigma).is_err());
    }

    #[test]
    fn simulation_config_reuses_sections() {
        let text = MINIMAL.replace(
            "[scenario]\n        id = \"demo\"\n        kind = \"positivity-mass\"\n",
            "seed = 4\nrecord_times = [0.01]\n",
        );
        let s = SimulationConfig::from_toml(&text).unwrap();
        assert_eq!(s.seed, 4);
        assert_eq!(s.to_config().path(s.seed).unwrap().dim(), 2);
    }

    #[test]
    fn canonical_form_is_stable() {
        let a = Config::from_toml(MINIMAL).unwrap();
        let b = Config::from_toml(&MINIMAL.replace("    ", "  ")).unwrap();
        assert_eq!(a.canonical(), b.canonical());
    }
}
