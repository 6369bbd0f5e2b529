//! Controlled path-dependent McKean-Vlasov equations: models, initial data,
//! counter-based noise and the particle integrator.

pub mod builtin;
pub mod init;
pub mod integrate;
pub mod model;
pub mod noise;

pub use init::{Init, InitialLaw};
pub use integrate::{
    flow_restart_check, integrate, integrate_picard, integrate_with, integrate_yosida, s2_distance,
    sample_initial, Diagnostics, FlowReport, IntegrateOptions, ParticleEnsemble, PicardOptions,
    PicardReport, PicardWindow,
};
pub use model::{Coefficients, CostGrowth, ModelSpec};
pub use noise::{derive_seed, NoiseStream};
