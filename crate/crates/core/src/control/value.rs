//! Reward functional, family-restricted value estimates, and the DPP and
//! law-invariance checkers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::ControlPolicy;
use crate::error::{Error, Result};
use crate::pathspace::PathGrid;
use crate::sde::integrate::{integrate_with, sample_initial, IntegrateOptions, ParticleEnsemble};
use crate::sde::noise::derive_seed;
use crate::sde::{Init, InitialLaw, ModelSpec};
use crate::stats::{mean, pairwise_sum, stderr};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub particles: usize,
    pub seed: u64,
    pub policy: String,
    /// Growth-condition violations observed while evaluating costs.
    pub warnings: Vec<String>,
}

/// Per-particle rewards `int_{from}^{to} f ds (+ g)` on an ensemble,
/// left-endpoint quadrature on the grid, laws taken from the ensemble.
pub fn particle_rewards(
    model: &ModelSpec,
    e: &ParticleEnsemble,
    from: usize,
    to: usize,
    terminal: bool,
) -> Vec<f64> {
    let grid = model.grid;
    let dt = grid.dt();
    let laws: Vec<_> = (from..to).map(|j| e.law(j)).collect();
    let terminal_law = e.terminal_law();
    let c = &model.coefficients;
    (0..e.len())
        .into_par_iter()
        .map(|i| {
            let x = &e.particles[i];
            let terms: Vec<f64> = (from..to)
                .map(|j| {
                    c.running_cost(
                        grid.time(j),
                        x.view(j),
                        &laws[j - from],
                        e.action(i, j),
                        &e.control_law(j),
                    ) * dt
                })
                .collect();
            let mut r = pairwise_sum(&terms);
            if terminal {
                r += c.terminal_cost(x.full_view(), &terminal_law);
            }
            r
        })
        .collect()
}

fn growth_warnings(model: &ModelSpec, e: &ParticleEnsemble) -> Vec<String> {
    let Some(h) = model.cost_growth else {
        return Vec::new();
    };
    let grid = model.grid;
    let c = &model.coefficients;
    let mut warnings = Vec::new();
    let span = e.end.saturating_sub(e.start);
    let probes: Vec<usize> = (0..8)
        .map(|k| e.start + k * span / 8)
        .filter(|j| *j < e.end)
        .collect();
    for j in probes {
        let law = e.law(j);
        let bound = h.h(law.sup_second_moment().sqrt());
        let bad = (0..e.len()).find(|&i| {
            let x = e.particles[i].view(j);
            let f = c.running_cost(grid.time(j), x, &law, e.action(i, j), &e.control_law(j));
            f.abs() > bound * (1.0 + x.sup_norm().powi(2)) * (1.0 + 1e-12)
        });
        if let Some(i) = bad {
            warnings.push(format!(
                "running cost exceeds its growth bound at t = {} (particle {i})",
                grid.time(j)
            ));
        }
    }
    let law = e.terminal_law();
    let bound = h.h(law.sup_second_moment().sqrt());
    if let Some(i) = (0..e.len()).find(|&i| {
        let x = e.particles[i].full_view();
        c.terminal_cost(x, &law).abs() > bound * (1.0 + x.sup_norm().powi(2)) * (1.0 + 1e-12)
    }) {
        warnings.push(format!(
            "terminal cost exceeds its growth bound (particle {i})"
        ));
    }
    warnings
}

/// `J(t0, xi, alpha)` estimated on an ensemble produced under `model`.
pub fn reward(model: &ModelSpec, e: &ParticleEnsemble) -> ValueEstimate {
    let r = particle_rewards(model, e, e.start, e.end, true);
    ValueEstimate {
        mean: mean(&r),
        stderr: stderr(&r),
        particles: e.len(),
        seed: e.seed,
        policy: e.policy_tag.clone(),
        warnings: growth_warnings(model, e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyEstimate {
    /// Index of the best member (ties go to the lowest index).
    pub best: usize,
    /// Value of the best member: a lower bound for `V(t0, xi)`.
    pub value: ValueEstimate,
    pub members: Vec<ValueEstimate>,
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = k;
        }
    }
    best
}

/// `sup` of the reward over a policy family, with common random numbers
/// (noise is keyed by particle and step, not by family member).
pub fn estimate_value(
    model: &ModelSpec,
    init: &dyn InitialLaw,
    family: &[ControlPolicy],
    t0: f64,
    particles: usize,
    seed: u64,
) -> Result<FamilyEstimate> {
    let (est, _) = estimate_value_with_ensembles(model, init, family, t0, particles, seed)?;
    Ok(est)
}

fn estimate_value_with_ensembles(
    model: &ModelSpec,
    init: &dyn InitialLaw,
    family: &[ControlPolicy],
    t0: f64,
    particles: usize,
    seed: u64,
) -> Result<(FamilyEstimate, Vec<ParticleEnsemble>)> {
    if family.is_empty() {
        return Err(Error::Config("policy family is empty".into()));
    }
    let opts = IntegrateOptions::new(t0, particles, seed);
    let ensembles: Vec<ParticleEnsemble> = family
        .par_iter()
        .map(|p| integrate_with(model, init, p, &opts))
        .collect::<Result<_>>()?;
    let members: Vec<ValueEstimate> = ensembles.iter().map(|e| reward(model, e)).collect();
    let best = argmax(&members.iter().map(|m| m.mean).collect::<Vec<_>>());
    Ok((
        FamilyEstimate {
            best,
            value: members[best].clone(),
            members,
        },
        ensembles,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DppVariant {
    /// `|U| = 1`: the principle is the tower identity.
    Exact,
    /// Family-restricted values: `V(t0) <= E int f + V(s, .)`.
    Inequality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DppReport {
    pub variant: DppVariant,
    pub t0: f64,
    pub s: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
    pub stderr: f64,
    pub pass: bool,
}

/// Continuation values `mean_b C_{i,b}` from the paths of `e` stopped at `s`,
/// restarted with fresh noise under `policy`.
fn continuation(
    model: &ModelSpec,
    e: &ParticleEnsemble,
    policy: &ControlPolicy,
    s: f64,
    seed: u64,
    branching: usize,
    fresh: bool,
) -> Result<Vec<f64>> {
    let s_node = model.grid.snap(s)?;
    let stopped: Vec<PathGrid> = e
        .particles
        .iter()
        .map(|p| {
            let mut q = p.clone();
            q.freeze_after(s_node);
            q
        })
        .collect();
    let restart = Init::labelled_atoms(stopped, e.labels.clone())?;
    let n = e.len();
    let mut acc = vec![0.0; n];
    for b in 0..branching.max(1) {
        let seed_b = if fresh {
            derive_seed(seed, 0x100 + b as u64)
        } else {
            seed
        };
        let cont = integrate_with(
            model,
            &restart,
            policy,
            &IntegrateOptions::new(s, n, seed_b),
        )?;
        let r = particle_rewards(model, &cont, cont.start, cont.end, true);
        for (a, v) in acc.iter_mut().zip(r) {
            *a += v;
        }
    }
    let k = branching.max(1) as f64;
    Ok(acc.into_iter().map(|v| v / k).collect())
}

/// Dynamic programming check between `t0` and `s`.
///
/// The continuation value at `s` is estimated by restarting from the
/// ensemble's own stopped paths with fresh noise (`branching` replicas per
/// particle), so the two sides are statistically, not trivially, equal.
#[allow(clippy::too_many_arguments)]
pub fn dpp_check(
    model: &ModelSpec,
    init: &dyn InitialLaw,
    family: &[ControlPolicy],
    t0: f64,
    s: f64,
    particles: usize,
    seed: u64,
    branching: usize,
) -> Result<DppReport> {
    if s < t0 {
        return Err(Error::Domain("split time precedes the start time".into()));
    }
    let grid = model.grid;
    let t0_node = grid.snap(t0)?;
    let s_node = grid.snap(s)?;
    let exact = family.len() == 1 && model.actions.actions().is_some_and(|a| a.len() == 1);
    let (est, ensembles) = estimate_value_with_ensembles(model, init, family, t0, particles, seed)?;
    let e = &ensembles[est.best];
    let total = particle_rewards(model, e, e.start, e.end, true);
    let head = particle_rewards(model, e, t0_node, s_node, false);
    // at s = t0 the continuation is the original problem itself
    let fresh = s_node != t0_node;
    let cont = if exact {
        continuation(model, e, &family[0], s, seed, branching, fresh)?
    } else {
        let per_member: Vec<Vec<f64>> = family
            .iter()
            .map(|p| continuation(model, e, p, s, seed, branching, fresh))
            .collect::<Result<_>>()?;
        let best = argmax(&per_member.iter().map(|c| mean(c)).collect::<Vec<_>>());
        per_member.into_iter().nth(best).unwrap()
    };
    let rhs_i: Vec<f64> = head.iter().zip(&cont).map(|(h, c)| h + c).collect();
    let diff: Vec<f64> = total.iter().zip(&rhs_i).map(|(a, b)| a - b).collect();
    let lhs = mean(&total);
    let rhs = mean(&rhs_i);
    let se = stderr(&diff);
    let gap = lhs - rhs;
    let pass = match exact {
        true => gap.abs() <= 3.0 * se + 1e-12 * (1.0 + lhs.abs()),
        false => gap <= 3.0 * se + 1e-12 * (1.0 + lhs.abs()),
    };
    Ok(DppReport {
        variant: if exact {
            DppVariant::Exact
        } else {
            DppVariant::Inequality
        },
        t0: grid.time(t0_node),
        s: grid.time(s_node),
        lhs,
        rhs,
        gap,
        stderr: se,
        pass,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawInvarianceReport {
    pub status: CheckStatus,
    pub value_a: f64,
    pub value_b: f64,
    pub gap: f64,
    pub stderr: f64,
    /// Per coordinate: `|mean_a - mean_b| / se` and the same for second moments.
    pub moment_z: Vec<(f64, f64)>,
}

/// Family-restricted values from two initial data declared equal in law.
///
/// A moment test (first and second moments, 3 SE) guards the declaration;
/// when it fails the report is inconclusive rather than failed.
#[allow(clippy::too_many_arguments)]
pub fn law_invariance_check(
    model: &ModelSpec,
    init_a: &dyn InitialLaw,
    init_b: &dyn InitialLaw,
    family: &[ControlPolicy],
    t0: f64,
    particles: usize,
    seed_a: u64,
    seed_b: u64,
) -> Result<LawInvarianceReport> {
    let j = model.grid.snap(t0)?;
    let xa = sample_initial(model, init_a, t0, particles, seed_a)?;
    let xb = sample_initial(model, init_b, t0, particles, seed_b)?;
    let mut moment_z = Vec::new();
    let mut consistent = true;
    for k in 0..model.d() {
        let a: Vec<f64> = xa.iter().map(|p| p.at(j)[k]).collect();
        let b: Vec<f64> = xb.iter().map(|p| p.at(j)[k]).collect();
        let a2: Vec<f64> = a.iter().map(|v| v * v).collect();
        let b2: Vec<f64> = b.iter().map(|v| v * v).collect();
        let z = |x: &[f64], y: &[f64]| {
            let d = (mean(x) - mean(y)).abs();
            let se = stderr(x).hypot(stderr(y));
            if se == 0.0 {
                if d <= 1e-12 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                d / se
            }
        };
        let (z1, z2) = (z(&a, &b), z(&a2, &b2));
        consistent &= z1 <= 3.0 && z2 <= 3.0;
        moment_z.push((z1, z2));
    }
    let va = estimate_value(model, init_a, family, t0, particles, seed_a)?;
    let vb = estimate_value(model, init_b, family, t0, particles, seed_b)?;
    let gap = (va.value.mean - vb.value.mean).abs();
    let se = va.value.stderr.hypot(vb.value.stderr);
    let status = if !consistent {
        CheckStatus::Inconclusive
    } else if gap <= 3.0 * se + 1e-12 * (1.0 + va.value.mean.abs()) {
        CheckStatus::Pass
    } else {
        CheckStatus::Fail
    };
    Ok(LawInvarianceReport {
        status,
        value_a: va.value.mean,
        value_b: vb.value.mean,
        gap,
        stderr: se,
        moment_z,
    })
}
