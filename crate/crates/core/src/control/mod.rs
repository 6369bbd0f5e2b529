//! Controls, rewards, value estimation and the dynamic-programming and
//! law-invariance checkers.

pub mod policy;
pub mod value;

pub use policy::{ActionSet, ControlAction, ControlPolicy, PolicyKind, PolicyRule};
pub use value::{
    dpp_check, estimate_value, law_invariance_check, particle_rewards, reward, CheckStatus,
    DppReport, DppVariant, FamilyEstimate, LawInvarianceReport, ValueEstimate,
};
