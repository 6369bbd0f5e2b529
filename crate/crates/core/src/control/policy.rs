//! Action sets and control policies.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::measure::LawView;
use crate::pathspace::PathView;

/// The action space `U`: a finite set or a compact box in `R^m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ActionSet {
    Finite { actions: Vec<Vec<f64>> },
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl ActionSet {
    pub fn finite(actions: Vec<Vec<f64>>) -> Result<Self> {
        let set = Self::Finite { actions };
        set.validate()?;
        Ok(set)
    }

    pub fn scalar_finite(values: &[f64]) -> Self {
        Self::Finite {
            actions: values.iter().map(|v| vec![*v]).collect(),
        }
    }

    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let set = Self::Box { lo, hi };
        set.validate()?;
        Ok(set)
    }

    /// `U = {0}` in `R^1`; used by uncontrolled models.
    pub fn trivial() -> Self {
        Self::scalar_finite(&[0.0])
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Finite { actions } => {
                if actions.is_empty() {
                    return Err(Error::Config("finite action set is empty".into()));
                }
                let m = actions[0].len();
                if m == 0 || actions.iter().any(|a| a.len() != m) {
                    return Err(Error::Config(
                        "finite actions must share a positive dimension".into(),
                    ));
                }
            }
            Self::Box { lo, hi } => {
                if lo.is_empty()
                    || lo.len() != hi.len()
                    || lo.iter().zip(hi).any(|(l, h)| !(l <= h))
                {
                    return Err(Error::Config(
                        "box action set needs lo <= hi of equal positive length".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Finite { actions } => actions[0].len(),
            Self::Box { lo, .. } => lo.len(),
        }
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        match self {
            Self::Finite { actions } => actions.iter().any(|a| a.as_slice() == u),
            Self::Box { lo, hi } => {
                u.len() == lo.len()
                    && u.iter()
                        .zip(lo.iter().zip(hi))
                        .all(|(v, (l, h))| *l <= *v && *v <= *h)
            }
        }
    }

    /// Nearest admissible action (ties go to the lowest index).
    pub fn project(&self, u: &mut [f64]) {
        match self {
            Self::Finite { actions } => {
                let mut best = 0;
                let mut bd = f64::INFINITY;
                for (k, a) in actions.iter().enumerate() {
                    let d = crate::hilbert::dist(a, u);
                    if d < bd {
                        bd = d;
                        best = k;
                    }
                }
                u.copy_from_slice(&actions[best]);
            }
            Self::Box { lo, hi } => {
                for (v, (l, h)) in u.iter_mut().zip(lo.iter().zip(hi)) {
                    *v = v.clamp(*l, *h);
                }
            }
        }
    }

    /// Enumeration of a finite set.
    pub fn actions(&self) -> Option<&[Vec<f64>]> {
        match self {
            Self::Finite { actions } => Some(actions),
            Self::Box { .. } => None,
        }
    }
}

/// A single element of `U`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlAction(pub Vec<f64>);

impl ControlAction {
    pub fn new(set: &ActionSet, u: Vec<f64>) -> Result<Self> {
        if !set.contains(&u) {
            return Err(Error::Domain(format!("action {u:?} is not in U")));
        }
        Ok(Self(u))
    }
}

/// User-supplied feedback rule `u(t, x_{. ^ t}, mu_{[0,t]}, r)`.
pub trait PolicyRule: Send + Sync {
    fn act(&self, t: f64, x: PathView<'_>, law: &LawView<'_>, r: f64, out: &mut [f64]);
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PolicyKind {
    /// `u(t) = u` for all `t`.
    Constant { u: Vec<f64> },
    /// Piecewise-constant open-loop schedule; entry `(s, u)` applies from time `s`.
    OpenLoop { schedule: Vec<(f64, Vec<f64>)> },
    /// `u = offset + gain x_t`, `gain` is `m x d` row-major.
    LinearFeedback { gain: Vec<f64>, offset: Vec<f64> },
    /// `u = offset + gain (x_t - int y_t mu(dy))`.
    MeanFeedback { gain: Vec<f64>, offset: Vec<f64> },
    /// Chooses `actions[k]` when the particle's uniform randomizer falls in
    /// the `k`-th cell of the cumulative `probs`.
    Randomized {
        actions: Vec<Vec<f64>>,
        probs: Vec<f64>,
    },
    /// `actions[k]` for the first threshold `x_t[0] < thresholds[k]`, else the last action.
    Threshold {
        thresholds: Vec<f64>,
        actions: Vec<Vec<f64>>,
    },
    #[serde(skip)]
    Custom(Arc<dyn PolicyRule>),
}

impl fmt::Debug for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant { u } => f.debug_struct("Constant").field("u", u).finish(),
            Self::OpenLoop { schedule } => f
                .debug_struct("OpenLoop")
                .field("schedule", schedule)
                .finish(),
            Self::LinearFeedback { gain, offset } => f
                .debug_struct("LinearFeedback")
                .field("gain", gain)
                .field("offset", offset)
                .finish(),
            Self::MeanFeedback { gain, offset } => f
                .debug_struct("MeanFeedback")
                .field("gain", gain)
                .field("offset", offset)
                .finish(),
            Self::Randomized { actions, probs } => f
                .debug_struct("Randomized")
                .field("actions", actions)
                .field("probs", probs)
                .finish(),
            Self::Threshold {
                thresholds,
                actions,
            } => f
                .debug_struct("Threshold")
                .field("thresholds", thresholds)
                .field("actions", actions)
                .finish(),
            Self::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// A progressively measurable control `alpha`, realized per particle from
/// the particle's stopped path, the stopped empirical law and an independent
/// uniform randomizer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControlPolicy {
    pub tag: String,
    pub kind: PolicyKind,
}

impl ControlPolicy {
    pub fn new(tag: impl Into<String>, kind: PolicyKind) -> Self {
        Self {
            tag: tag.into(),
            kind,
        }
    }

    pub fn constant(u: Vec<f64>) -> Self {
        let tag = format!("constant{u:?}");
        Self::new(tag, PolicyKind::Constant { u })
    }

    /// The zero control of an uncontrolled model.
    pub fn none() -> Self {
        Self::new("none", PolicyKind::Constant { u: vec![0.0] })
    }

    pub fn custom(tag: impl Into<String>, rule: Arc<dyn PolicyRule>) -> Self {
        Self::new(tag, PolicyKind::Custom(rule))
    }

    pub fn uses_randomizer(&self) -> bool {
        matches!(
            self.kind,
            PolicyKind::Randomized { .. } | PolicyKind::Custom(_)
        )
    }

    /// Checks dimensions against `U` and the state dimension `d`.
    pub fn validate(&self, set: &ActionSet, d: usize) -> Result<()> {
        let m = set.dim();
        let bad = |what: &str| Err(Error::Config(format!("policy '{}': {what}", self.tag)));
        match &self.kind {
            PolicyKind::Constant { u } => {
                if u.len() != m {
                    return bad("constant action has wrong dimension");
                }
            }
            PolicyKind::OpenLoop { schedule } => {
                if schedule.is_empty() || schedule.iter().any(|(_, u)| u.len() != m) {
                    return bad("open-loop schedule empty or of wrong dimension");
                }
            }
            PolicyKind::LinearFeedback { gain, offset }
            | PolicyKind::MeanFeedback { gain, offset } => {
                if gain.len() != m * d || offset.len() != m {
                    return bad("feedback gain must be m x d and offset of length m");
                }
            }
            PolicyKind::Randomized { actions, probs } => {
                if actions.is_empty()
                    || actions.len() != probs.len()
                    || actions.iter().any(|a| a.len() != m)
                {
                    return bad("randomized policy needs one probability per action");
                }
                let s: f64 = probs.iter().sum();
                if probs.iter().any(|p| *p < 0.0) || (s - 1.0).abs() > 1e-12 {
                    return bad("randomized probabilities must be a distribution");
                }
            }
            PolicyKind::Threshold {
                thresholds,
                actions,
            } => {
                if actions.len() != thresholds.len() + 1 || actions.iter().any(|a| a.len() != m) {
                    return bad("threshold policy needs one more action than thresholds");
                }
            }
            PolicyKind::Custom(_) => {}
        }
        Ok(())
    }

    /// Writes the (projected) action into `out`.
    pub fn act(
        &self,
        set: &ActionSet,
        t: f64,
        x: PathView<'_>,
        law: &LawView<'_>,
        r: f64,
        out: &mut [f64],
    ) {
        match &self.kind {
            PolicyKind::Constant { u } => out.copy_from_slice(u),
            PolicyKind::OpenLoop { schedule } => {
                let mut current = &schedule[0].1;
                for (s, u) in schedule {
                    if t + 1e-12 >= *s {
                        current = u;
                    }
                }
                out.copy_from_slice(current);
            }
            PolicyKind::LinearFeedback { gain, offset } => {
                let xt = x.current();
                let d = xt.len();
                for (k, o) in out.iter_mut().enumerate() {
                    *o = offset[k] + crate::hilbert::dot(&gain[k * d..(k + 1) * d], xt);
                }
            }
            PolicyKind::MeanFeedback { gain, offset } => {
                let xt = x.current();
                let m = law.mean_now();
                let d = xt.len();
                let dev: Vec<f64> = xt.iter().zip(m).map(|(a, b)| a - b).collect();
                for (k, o) in out.iter_mut().enumerate() {
                    *o = offset[k] + crate::hilbert::dot(&gain[k * d..(k + 1) * d], &dev);
                }
            }
            PolicyKind::Randomized { actions, probs } => {
                let mut acc = 0.0;
                let mut chosen = actions.len() - 1;
                for (k, p) in probs.iter().enumerate() {
                    acc += p;
                    if r < acc {
                        chosen = k;
                        break;
                    }
                }
                out.copy_from_slice(&actions[chosen]);
            }
            PolicyKind::Threshold {
                thresholds,
                actions,
            } => {
                let v = x.current()[0];
                let k = thresholds
                    .iter()
                    .position(|th| v < *th)
                    .unwrap_or(thresholds.len());
                out.copy_from_slice(&actions[k]);
            }
            PolicyKind::Custom(rule) => rule.act(t, x, law, r, out),
        }
        set.project(out);
    }
}
