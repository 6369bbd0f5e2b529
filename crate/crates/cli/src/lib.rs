//! Subcommand dispatch, reports and exit codes for the `pathmfc` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod config;

use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

pub use checks::Check;
pub use config::{build_model, ExperimentConfig, DEFAULT_CONFIG};

pub const VERSION: &str = match option_env!("PATHMFC_DESCRIBE") {
    Some(v) => v,
    None => env!("CARGO_PKG_VERSION"),
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Run(#[from] pathmfc::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use pathmfc::Error as E;
        match self {
            Self::Run(E::Blowup { .. } | E::NonConvergence { .. }) => 3,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    Picard,
    YosidaConverge,
    ParticlesConverge,
    Wasserstein,
    ItoCheck,
    DerivCheck,
    DppCheck,
    LawCheck,
    HjbResidual,
    HamiltonianForms,
    Suite,
}

impl Command {
    pub fn from_name(name: &str) -> Option<Self> {
        <Self as clap::ValueEnum>::value_variants()
            .iter()
            .copied()
            .find(|c| c.name() == name)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Picard => "picard",
            Self::YosidaConverge => "yosida-converge",
            Self::ParticlesConverge => "particles-converge",
            Self::Wasserstein => "wasserstein",
            Self::ItoCheck => "ito-check",
            Self::DerivCheck => "deriv-check",
            Self::DppCheck => "dpp-check",
            Self::LawCheck => "law-check",
            Self::HjbResidual => "hjb-residual",
            Self::HamiltonianForms => "hamiltonian-forms",
            Self::Suite => "suite",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: Value,
    pub wall_time_seconds: f64,
    pub checks: Vec<Check>,
    pub passed: usize,
    pub failed: usize,
    pub pass: bool,
}

impl RunReport {
    /// Pretty JSON with sorted keys.
    pub fn to_json(&self) -> Result<String, CliError> {
        Ok(serde_json::to_string_pretty(&serde_json::to_value(self)?)?)
    }
}

type Step = fn(&ExperimentConfig, &Path) -> Result<Vec<Check>, CliError>;

fn steps(cmd: Command) -> Vec<(&'static str, Step)> {
    let all: Vec<(&'static str, Step)> = vec![
        ("simulate", checks::simulate),
        ("sde", |c, _| checks::sde_oracles(c)),
        ("picard", |c, _| checks::picard(c)),
        ("yosida", checks::yosida),
        ("particles", checks::particles),
        ("wasserstein", |c, _| checks::wasserstein(c)),
        ("deriv", |c, _| checks::derivatives(c)),
        ("ito", |c, _| checks::ito(c)),
        ("dpp", |c, _| checks::dpp(c)),
        ("law", |c, _| checks::law(c)),
        ("hjb", |c, _| checks::hjb(c)),
        ("hamiltonian", |c, _| checks::hamiltonian(c)),
    ];
    let pick = |name: &str| all.iter().filter(|(n, _)| *n == name).cloned().collect();
    match cmd {
        Command::Simulate => pick("simulate"),
        Command::Picard => pick("picard"),
        Command::YosidaConverge => pick("yosida"),
        Command::ParticlesConverge => pick("particles"),
        Command::Wasserstein => pick("wasserstein"),
        Command::ItoCheck => pick("ito"),
        Command::DerivCheck => pick("deriv"),
        Command::DppCheck => pick("dpp"),
        Command::LawCheck => pick("law"),
        Command::HjbResidual => pick("hjb"),
        Command::HamiltonianForms => pick("hamiltonian"),
        Command::Suite => all,
    }
}

/// Runs a subcommand and writes `report.json` (and `timings.json`) to `out`.
pub fn run(cmd: Command, cfg: &ExperimentConfig, out: &Path) -> Result<RunReport, CliError> {
    std::fs::create_dir_all(out)?;
    let start = Instant::now();
    let mut all = Vec::new();
    let mut timings = serde_json::Map::new();
    for (name, step) in steps(cmd) {
        let t = Instant::now();
        all.extend(step(cfg, out)?);
        timings.insert(name.into(), json!(t.elapsed().as_secs_f64()));
    }
    let passed = all.iter().filter(|c| c.pass).count();
    let report = RunReport {
        version: VERSION.into(),
        command: cmd.name().into(),
        seed: cfg.seed,
        config: serde_json::to_value(cfg)?,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        failed: all.len() - passed,
        pass: passed == all.len(),
        passed,
        checks: all,
    };
    std::fs::write(out.join("report.json"), report.to_json()? + "\n")?;
    std::fs::write(
        out.join("timings.json"),
        serde_json::to_string_pretty(&Value::Object(timings))? + "\n",
    )?;
    Ok(report)
}
