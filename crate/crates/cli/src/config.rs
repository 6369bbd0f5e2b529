//! Experiment configuration (TOML). Times are in model time units; every
//! table rejects unknown keys.

use std::collections::BTreeMap;
use std::path::Path;

use pathmfc::control::{ActionSet, ControlPolicy, PolicyKind};
use pathmfc::pathspace::TimeGrid;
use pathmfc::sde::builtin::{self, LinearMeanField};
use pathmfc::sde::{Init, ModelSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DEFAULT_CONFIG: &str = include_str!("../configs/default.toml");

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed; every check derives its streams from it.
    pub seed: u64,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub sde: SdeConfig,
    #[serde(default)]
    pub picard: PicardConfig,
    #[serde(default)]
    pub yosida: YosidaConfig,
    #[serde(default)]
    pub particles: ParticlesConfig,
    #[serde(default)]
    pub wasserstein: WassersteinConfig,
    #[serde(default)]
    pub ito: ItoConfig,
    #[serde(default)]
    pub deriv: DerivConfig,
    #[serde(default)]
    pub dpp: DppConfig,
    #[serde(default)]
    pub law: LawConfig,
    #[serde(default)]
    pub hjb: HjbConfig,
    #[serde(default)]
    pub hamiltonian: HamiltonianConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Built-in model tag; ignored when `inline` is given.
    pub tag: Option<String>,
    /// Horizon `T`.
    pub horizon: f64,
    /// Number of grid steps `M`, so `dt = T / M`.
    pub steps: usize,
    /// Scalar parameters of the built-in model (see `build_model`).
    pub params: BTreeMap<String, f64>,
    pub inline: Option<InlineModel>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            tag: Some("ou".into()),
            horizon: 1.0,
            steps: 100,
            params: BTreeMap::new(),
            inline: None,
        }
    }
}

/// A linear mean-field model given coefficient by coefficient.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineModel {
    pub tag: String,
    /// Decay rates `lambda_k >= 0`, `A = diag(-lambda_k)`.
    pub rates: Vec<f64>,
    pub coefficients: LinearMeanField,
    pub actions: ActionSet,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub particles: usize,
    /// Start time `t0`.
    pub t0: f64,
    pub init: Init,
    pub policy: Option<ControlPolicy>,
    /// Write one CSV per particle under `<out>/paths`.
    pub export: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            particles: 1000,
            t0: 0.0,
            init: Init::constant(vec![0.0]),
            policy: None,
            export: false,
        }
    }
}

/// Oracle checks on the integrator; grids are fixed by the checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SdeConfig {
    pub ou_particles: usize,
    pub ou_steps: usize,
    pub mean_field_steps: usize,
    pub weak_particles: usize,
    /// Coarsest weak-order grid; rungs double it.
    pub weak_steps: usize,
    pub flow_particles: usize,
    pub flow_steps: usize,
}

impl Default for SdeConfig {
    fn default() -> Self {
        Self {
            ou_particles: 4000,
            ou_steps: 1000,
            mean_field_steps: 1000,
            weak_particles: 20_000,
            weak_steps: 10,
            flow_particles: 64,
            flow_steps: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PicardConfig {
    pub particles: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub init: Init,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self {
            particles: 500,
            tol: 1e-10,
            max_iter: 200,
            init: Init::Gaussian {
                mean: vec![0.5],
                std: 0.5,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct YosidaConfig {
    pub ladder: Vec<f64>,
    pub particles: usize,
    pub steps: usize,
    /// OU rate and noise level.
    pub lambda: f64,
    pub s0: f64,
    pub x0: f64,
}

impl Default for YosidaConfig {
    fn default() -> Self {
        Self {
            ladder: vec![2.0, 8.0, 32.0],
            particles: 2000,
            steps: 200,
            lambda: 1.0,
            s0: 0.5,
            x0: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParticlesConfig {
    pub sizes: Vec<usize>,
    /// Reference ensemble is this multiple of each size.
    pub reference_factor: usize,
    pub replicas: usize,
    pub steps: usize,
    pub init: Init,
}

impl Default for ParticlesConfig {
    fn default() -> Self {
        Self {
            sizes: vec![250, 1000, 4000],
            reference_factor: 4,
            replicas: 8,
            steps: 50,
            init: Init::Gaussian {
                mean: vec![0.5],
                std: 0.5,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WassersteinConfig {
    pub max_atoms: usize,
    pub instances: usize,
    pub triples: usize,
    pub steps: usize,
}

impl Default for WassersteinConfig {
    fn default() -> Self {
        Self {
            max_atoms: 6,
            instances: 100,
            triples: 1000,
            steps: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ItoConfig {
    pub particles: usize,
    pub steps: usize,
    pub dim: usize,
    pub t: f64,
    pub s: f64,
    /// Functional tags; empty means every regular member of the zoo.
    pub functionals: Vec<String>,
    /// Also check the generator form on OU with the linear functional.
    pub mild: bool,
}

impl Default for ItoConfig {
    fn default() -> Self {
        Self {
            particles: 4000,
            steps: 1000,
            dim: 2,
            t: 0.0,
            s: 1.0,
            functionals: Vec::new(),
            mild: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DerivConfig {
    pub atoms: usize,
    pub dim: usize,
    pub eps: f64,
    pub tol: f64,
    pub functionals: Vec<String>,
    pub times: Vec<f64>,
}

impl Default for DerivConfig {
    fn default() -> Self {
        Self {
            atoms: 8,
            dim: 2,
            eps: 1e-5,
            tol: 1e-5,
            functionals: vec![
                "linear".into(),
                "mean_square".into(),
                "quadratic_diagonal".into(),
            ],
            times: vec![0.0, 0.5, 1.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DppConfig {
    pub particles: usize,
    pub branching: usize,
    pub steps: usize,
    pub t0: f64,
    pub times: Vec<f64>,
    pub init: Init,
}

impl Default for DppConfig {
    fn default() -> Self {
        Self {
            particles: 4000,
            branching: 4,
            steps: 100,
            t0: 0.0,
            times: vec![0.25, 0.5, 0.75],
            init: Init::Gaussian {
                mean: vec![0.5],
                std: 0.5,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LawConfig {
    pub particles: usize,
    pub steps: usize,
    pub scale: f64,
    pub families: Vec<Vec<ControlPolicy>>,
}

impl Default for LawConfig {
    fn default() -> Self {
        let c = |u: f64| ControlPolicy::constant(vec![u]);
        let fb = |g: f64| {
            ControlPolicy::new(
                format!("feedback_{g}"),
                PolicyKind::LinearFeedback {
                    gain: vec![g],
                    offset: vec![0.0],
                },
            )
        };
        Self {
            particles: 4000,
            steps: 50,
            scale: 1.0,
            families: vec![
                vec![c(0.0)],
                vec![c(-1.0), c(0.0), c(1.0)],
                vec![fb(-1.0), fb(-0.5)],
                vec![
                    c(0.0),
                    ControlPolicy::new(
                        "mean_feedback",
                        PolicyKind::MeanFeedback {
                            gain: vec![-1.0],
                            offset: vec![0.0],
                        },
                    ),
                ],
            ],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HjbConfig {
    /// `linear_value` (the exact solution), `linear_value_doubled` or a zoo tag.
    pub candidate: String,
    pub atoms: usize,
    pub steps: usize,
    pub times: Vec<f64>,
    pub tol: f64,
}

impl Default for HjbConfig {
    fn default() -> Self {
        Self {
            candidate: "linear_value".into(),
            atoms: 16,
            steps: 50,
            times: vec![0.0, 0.5, 0.9],
            tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HamiltonianConfig {
    pub instances: usize,
    pub max_atoms: usize,
    pub max_actions: usize,
    pub investment_instances: usize,
    pub investment_dim: usize,
    /// Points per coordinate of the investment grid search.
    pub grid_points: usize,
}

impl Default for HamiltonianConfig {
    fn default() -> Self {
        Self {
            instances: 50,
            max_atoms: 4,
            max_actions: 5,
            investment_instances: 100,
            investment_dim: 3,
            grid_points: 20_001,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Self::from_toml(DEFAULT_CONFIG),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                Self::from_toml(&text).map_err(|e| match e {
                    CliError::Config(m) => CliError::Config(format!("{}: {m}", p.display())),
                    other => other,
                })
            }
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, why: &str| Err(CliError::Config(format!("{field}: {why}")));
        if !(self.model.horizon > 0.0) {
            return bad("model.horizon", "must be positive");
        }
        if self.model.steps == 0 {
            return bad("model.steps", "must be at least 1");
        }
        if self.model.tag.is_none() && self.model.inline.is_none() {
            return bad("model", "needs `tag` or `inline`");
        }
        if self.yosida.ladder.iter().any(|n| !(*n > 0.0)) {
            return bad("yosida.ladder", "entries must be positive");
        }
        if self.particles.sizes.is_empty() || self.particles.replicas == 0 {
            return bad("particles", "needs sizes and at least one replica");
        }
        if self.wasserstein.max_atoms == 0 || self.wasserstein.max_atoms > 8 {
            return bad("wasserstein.max_atoms", "must be in 1..=8 (brute force)");
        }
        if self.hamiltonian.max_atoms == 0 || self.hamiltonian.max_actions < 2 {
            return bad("hamiltonian", "needs atoms and at least two actions");
        }
        if self.hamiltonian.grid_points < 2 {
            return bad("hamiltonian.grid_points", "must be at least 2");
        }
        if self.law.families.iter().any(|f| f.is_empty()) {
            return bad("law.families", "families must be non-empty");
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TimeGrid, CliError> {
        Ok(TimeGrid::new(self.model.horizon, self.model.steps)?)
    }
}

fn param(
    params: &BTreeMap<String, f64>,
    allowed: &[(&str, f64)],
    tag: &str,
) -> Result<Vec<f64>, CliError> {
    if let Some(k) = params.keys().find(|k| !allowed.iter().any(|(a, _)| a == k)) {
        let names: Vec<&str> = allowed.iter().map(|(a, _)| *a).collect();
        return Err(CliError::Config(format!(
            "model.params.{k}: unknown parameter for `{tag}` (expected one of {names:?})"
        )));
    }
    Ok(allowed
        .iter()
        .map(|(a, d)| params.get(*a).copied().unwrap_or(*d))
        .collect())
}

/// Builds the configured model: inline coefficients, or a built-in with
/// optional scalar parameter overrides.
pub fn build_model(cfg: &ModelConfig) -> Result<ModelSpec, CliError> {
    let grid = TimeGrid::new(cfg.horizon, cfg.steps)?;
    if let Some(m) = &cfg.inline {
        if m.rates.len() != m.coefficients.d() || m.rates.iter().any(|r| !(*r >= 0.0)) {
            return Err(CliError::Config(
                "model.inline.rates: one non-negative rate per coordinate".into(),
            ));
        }
        m.actions.validate()?;
        return Ok(m.coefficients.clone().into_model(
            &m.tag,
            grid,
            m.rates.clone(),
            m.actions.clone(),
        ));
    }
    let tag = cfg.tag.as_deref().unwrap_or_default();
    let p = &cfg.params;
    let model = match tag {
        "frozen" => {
            let v = param(p, &[("dim", 1.0)], tag)?;
            builtin::frozen(grid, v[0].max(1.0) as usize)
        }
        "ou" => {
            let v = param(p, &[("lambda", 1.0), ("s0", 0.5)], tag)?;
            builtin::ou(grid, v[0], v[1])
        }
        "mean_reversion" => {
            let v = param(p, &[("theta", 1.0), ("s0", 0.5), ("rate", 1.0)], tag)?;
            builtin::mean_reversion(grid, v[0], v[1], v[2])
        }
        "weak_order" => {
            let v = param(p, &[("kappa", 1.0), ("s0", 0.2)], tag)?;
            builtin::weak_order(grid, v[0], v[1])
        }
        "linear_growth" => {
            let v = param(p, &[("kappa", -1.0)], tag)?;
            builtin::linear_growth(grid, v[0])
        }
        "controlled_linear" => {
            param(p, &[], tag)?;
            builtin::controlled_linear(grid)
        }
        "quadratic" => {
            let v = param(p, &[("lambda", 1.0), ("s0", 0.5)], tag)?;
            builtin::quadratic(grid, v[0], v[1])
        }
        "terminal_square" => {
            let v = param(p, &[("s0", 0.5)], tag)?;
            builtin::terminal_square(grid, v[0])
        }
        "controlled_mean_field" => {
            let v = param(p, &[("theta", 1.0), ("s0", 0.3), ("rho", 0.1)], tag)?;
            builtin::controlled_mean_field(grid, v[0], v[1], v[2])
        }
        other => {
            param(p, &[], other)?;
            builtin::by_tag(other, grid)
                .ok_or_else(|| CliError::Config(format!("model.tag: unknown model `{other}`")))?
        }
    };
    Ok(model)
}
