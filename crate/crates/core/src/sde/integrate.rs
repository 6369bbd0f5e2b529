//! Interacting-particle integration of the mild state equation.
//!
//! Exponential Euler: `X_{j+1} = e^{dt A} (X_j + b_j dt + sigma_j dB_j)`, with
//! coefficients evaluated at the particle's stopped path, the empirical law
//! of the stopped particles, its action and the empirical law of actions.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::ControlPolicy;
use crate::error::{Error, Result};
use crate::hilbert::{yosida, SpectralOperator};
use crate::measure::{ControlLawView, EmpiricalPathMeasure, LawView};
use crate::pathspace::{sup_dist, PathGrid, TimeGrid};
use crate::sde::init::{Init, InitialLaw};
use crate::sde::model::ModelSpec;
use crate::sde::noise::{derive_seed, randomizer, NoiseStream, PURPOSE_INIT, PURPOSE_NOISE};
use crate::stats::{mean, pairwise_sum, variance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrateOptions {
    pub t0: f64,
    pub particles: usize,
    pub seed: u64,
    /// Each step's Brownian increment is summed from this many finer ones.
    pub noise_substeps: usize,
    /// Stop integrating at this time; paths are frozen afterwards.
    pub until: Option<f64>,
}

impl IntegrateOptions {
    pub fn new(t0: f64, particles: usize, seed: u64) -> Self {
        Self {
            t0,
            particles,
            seed,
            noise_substeps: 1,
            until: None,
        }
    }

    pub fn substeps(mut self, r: usize) -> Self {
        self.noise_substeps = r;
        self
    }

    pub fn until(mut self, s: f64) -> Self {
        self.until = Some(s);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PicardWindow {
    /// One window over the whole horizon.
    Whole,
    /// Windows of the given length (rounded to whole steps, at least one).
    Fixed { length: f64 },
    /// Windows on which the fixed-point map is a 1/2-contraction.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub window: PicardWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PicardReport {
    /// Largest number of law updates needed by any window.
    pub iterations: usize,
    pub total_iterations: usize,
    pub windows: usize,
    pub window_steps: usize,
    /// Successive-iterate gaps per window, in the empirical `S_2` norm.
    pub gaps: Vec<Vec<f64>>,
    pub final_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `(mean_i ||X^i||_T^2)^{1/2}`.
    pub s2_norm: f64,
    /// `(mean_i ||xi^i||_{t0}^2)^{1/2}`.
    pub init_s2_norm: f64,
    /// `mean_i int |alpha^i_s|^2 ds`.
    pub control_l2: f64,
    /// Bound on `s2_norm` from the a-priori estimate.
    pub apriori_bound: f64,
    pub picard: Option<PicardReport>,
}

/// `N` particle paths, their actions and everything needed to replay them.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    pub particles: Vec<PathGrid>,
    /// Actions, step-major: `controls[(j * N + i) * m ..][..m]` for steps `start <= j < end`.
    pub controls: Vec<f64>,
    pub control_dim: usize,
    pub labels: Vec<u64>,
    pub randomizers: Vec<f64>,
    pub seed: u64,
    pub noise: NoiseStream,
    pub start: usize,
    pub end: usize,
    pub model_tag: String,
    pub policy_tag: String,
    pub diagnostics: Diagnostics,
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn grid(&self) -> &TimeGrid {
        self.particles[0].grid()
    }

    pub fn dim(&self) -> usize {
        self.particles[0].dim()
    }

    /// Empirical law of the particles stopped at node `j`.
    pub fn law(&self, j: usize) -> LawView<'_> {
        LawView::uniform(&self.particles, j)
    }

    pub fn terminal_law(&self) -> LawView<'_> {
        self.law(self.grid().steps)
    }

    pub fn actions_at(&self, j: usize) -> &[f64] {
        let w = self.len() * self.control_dim;
        &self.controls[j * w..(j + 1) * w]
    }

    pub fn action(&self, i: usize, j: usize) -> &[f64] {
        &self.actions_at(j)[i * self.control_dim..(i + 1) * self.control_dim]
    }

    pub fn control_law(&self, j: usize) -> ControlLawView<'_> {
        ControlLawView::new(self.actions_at(j), self.control_dim)
    }

    pub fn to_measure(&self) -> EmpiricalPathMeasure {
        self.terminal_law().to_measure()
    }

    /// Values of coordinate `k` at node `j` across particles.
    pub fn marginal(&self, j: usize, k: usize) -> Vec<f64> {
        self.particles.iter().map(|p| p.at(j)[k]).collect()
    }

    /// Writes `particle_#####.csv` files and `manifest.json` into `dir`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (i, p) in self.particles.iter().enumerate() {
            let f = fs::File::create(dir.join(format!("particle_{i:05}.csv")))?;
            p.write_csv(std::io::BufWriter::new(f))?;
        }
        let steps = self.grid().steps;
        let d = self.dim();
        let manifest = serde_json::json!({
            "seed": self.seed,
            "particles": self.len(),
            "model": self.model_tag,
            "policy": self.policy_tag,
            "grid": self.grid(),
            "summary": {
                "mean_terminal": (0..d).map(|k| mean(&self.marginal(steps, k))).collect::<Vec<_>>(),
                "variance_terminal": (0..d).map(|k| variance(&self.marginal(steps, k))).collect::<Vec<_>>(),
                "s2_norm": self.diagnostics.s2_norm,
            },
        });
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }
}

struct Engine<'a> {
    model: &'a ModelSpec,
    policy: &'a ControlPolicy,
    factors: Vec<f64>,
    noise: NoiseStream,
}

impl Engine<'_> {
    fn new<'a>(
        model: &'a ModelSpec,
        generator: &SpectralOperator,
        policy: &'a ControlPolicy,
        seed: u64,
        substeps: usize,
    ) -> Engine<'a> {
        Engine {
            model,
            policy,
            factors: generator.semigroup_factors(model.grid.dt()),
            noise: NoiseStream::with_substeps(derive_seed(seed, PURPOSE_NOISE), substeps),
        }
    }

    fn actions(
        &self,
        j: usize,
        paths: &[PathGrid],
        law_atoms: &[PathGrid],
        rands: &[f64],
    ) -> Vec<f64> {
        let m = self.model.actions.dim();
        let law = LawView::uniform(law_atoms, j);
        let t = self.model.grid.time(j);
        let mut out = vec![0.0; paths.len() * m];
        out.par_chunks_mut(m).enumerate().for_each(|(i, o)| {
            self.policy
                .act(&self.model.actions, t, paths[i].view(j), &law, rands[i], o);
        });
        out
    }

    /// Node `j + 1` values for all particles, `N x d` row-major.
    fn advance(
        &self,
        j: usize,
        paths: &[PathGrid],
        law_atoms: &[PathGrid],
        actions: &[f64],
        law_actions: &[f64],
        labels: &[u64],
    ) -> Result<Vec<f64>> {
        let d = self.model.d();
        let r = self.model.diffusion_rank();
        let dk = self.model.space.d_noise;
        let m = self.model.actions.dim();
        let grid = self.model.grid;
        let dt = grid.dt();
        let t = grid.time(j);
        let law = LawView::uniform(law_atoms, j);
        let nu = ControlLawView::new(law_actions, m);
        let coeffs = &self.model.coefficients;
        let mut next = vec![0.0; paths.len() * d];
        next.par_chunks_mut(d).enumerate().for_each_init(
            || (vec![0.0; d], vec![0.0; r], vec![0.0; dk]),
            |(b, s, db), (i, out)| {
                let x = paths[i].view(j);
                let u = &actions[i * m..(i + 1) * m];
                coeffs.drift(t, x, &law, u, &nu, b);
                coeffs.diffusion(t, x, &law, u, &nu, s);
                self.noise.increment(labels[i] as usize, j, dt, db);
                let xj = x.current();
                for k in 0..d {
                    let mut v = xj[k] + b[k] * dt;
                    if k < r {
                        v += s[k] * db[k];
                    }
                    out[k] = self.factors[k] * v;
                }
            },
        );
        if let Some(pos) = next.iter().position(|v| !v.is_finite()) {
            return Err(Error::Blowup {
                step: j + 1,
                particle: pos / d,
                time: grid.time(j + 1),
            });
        }
        Ok(next)
    }
}

fn write_node(paths: &mut [PathGrid], j: usize, values: &[f64]) {
    let d = paths[0].dim();
    for (i, p) in paths.iter_mut().enumerate() {
        p.at_mut(j).copy_from_slice(&values[i * d..(i + 1) * d]);
    }
}

struct Prepared {
    paths: Vec<PathGrid>,
    labels: Vec<u64>,
    rands: Vec<f64>,
    start: usize,
    end: usize,
}

fn prepare(
    model: &ModelSpec,
    init: &dyn InitialLaw,
    policy: &ControlPolicy,
    opts: &IntegrateOptions,
) -> Result<Prepared> {
    model.validate()?;
    policy.validate(&model.actions, model.d())?;
    if opts.particles < 2 {
        return Err(Error::Config("at least two particles are required".into()));
    }
    let grid = model.grid;
    let start = grid.snap(opts.t0)?;
    let end = match opts.until {
        Some(s) => grid.snap(s)?,
        None => grid.steps,
    };
    if end < start {
        return Err(Error::Domain(
            "integration end precedes the start time".into(),
        ));
    }
    let init_seed = derive_seed(opts.seed, PURPOSE_INIT);
    let d = model.d();
    let paths: Vec<PathGrid> = (0..opts.particles)
        .into_par_iter()
        .map(|i| {
            let mut p = init.sample(i, init_seed, &grid, d);
            p.freeze_after(start);
            p
        })
        .collect();
    if paths
        .iter()
        .any(|p| p.dim() != d || !p.grid().same_as(&grid))
    {
        return Err(Error::Config(format!(
            "initial law '{}' produced paths off the model grid or space",
            init.tag()
        )));
    }
    if paths.iter().any(|p| !p.is_finite()) {
        return Err(Error::Config(
            "initial law produced non-finite values".into(),
        ));
    }
    let labels: Vec<u64> = (0..opts.particles).map(|i| init.label(i)).collect();
    let rands: Vec<f64> = labels
        .iter()
        .map(|&l| randomizer(opts.seed, l as usize))
        .collect();
    Ok(Prepared {
        paths,
        labels,
        rands,
        start,
        end,
    })
}

fn finish(
    model: &ModelSpec,
    policy: &ControlPolicy,
    prep: Prepared,
    controls: Vec<f64>,
    opts: &IntegrateOptions,
    picard: Option<PicardReport>,
) -> Result<ParticleEnsemble> {
    let Prepared {
        mut paths,
        labels,
        rands,
        start,
        end,
    } = prep;
    if end < model.grid.steps {
        paths.par_iter_mut().for_each(|p| p.freeze_after(end));
    }
    let n = paths.len();
    let m = model.actions.dim();
    let sq: Vec<f64> = paths
        .iter()
        .map(|p| p.full_view().sup_norm().powi(2))
        .collect();
    let s2_norm = (pairwise_sum(&sq) / n as f64).sqrt();
    let sq0: Vec<f64> = paths
        .iter()
        .map(|p| p.view(start).sup_norm().powi(2))
        .collect();
    let init_s2_norm = (pairwise_sum(&sq0) / n as f64).sqrt();
    let dt = model.grid.dt();
    let per_particle: Vec<f64> = (0..n)
        .map(|i| {
            let terms: Vec<f64> = (start..end)
                .map(|j| {
                    let u = &controls[(j * n + i) * m..(j * n + i + 1) * m];
                    u.iter().map(|v| v * v).sum::<f64>() * dt
                })
                .collect();
            pairwise_sum(&terms)
        })
        .collect();
    let control_l2 = mean(&per_particle);
    let c = model.apriori_constant();
    let extra = if model.unbounded_controls {
        control_l2
    } else {
        0.0
    };
    let apriori_bound = c * (1.0 + init_s2_norm + extra);
    if s2_norm > 3.0 * apriori_bound {
        return Err(Error::Contract(format!(
            "ensemble S2 norm {s2_norm} exceeds three times the a-priori bound {apriori_bound}"
        )));
    }
    Ok(ParticleEnsemble {
        particles: paths,
        controls,
        control_dim: m,
        labels,
        randomizers: rands,
        seed: opts.seed,
        noise: NoiseStream::with_substeps(
            derive_seed(opts.seed, PURPOSE_NOISE),
            opts.noise_substeps,
        ),
        start,
        end,
        model_tag: model.tag.clone(),
        policy_tag: policy.tag.clone(),
        diagnostics: Diagnostics {
            s2_norm,
            init_s2_norm,
            control_l2,
            apriori_bound,
            picard,
        },
    })
}

fn run_explicit(
    model: &ModelSpec,
    generator: &SpectralOperator,
    init: &dyn InitialLaw,
    policy: &ControlPolicy,
    opts: &IntegrateOptions,
) -> Result<ParticleEnsemble> {
    let mut prep = prepare(model, init, policy, opts)?;
    let engine = Engine::new(model, generator, policy, opts.seed, opts.noise_substeps);
    let n = opts.particles;
    let m = model.actions.dim();
    let mut controls = vec![0.0; model.grid.steps * n * m];
    for j in prep.start..prep.end {
        let acts = engine.actions(j, &prep.paths, &prep.paths, &prep.rands);
        let next = engine.advance(j, &prep.paths, &prep.paths, &acts, &acts, &prep.labels)?;
        write_node(&mut prep.paths, j + 1, &next);
        controls[j * n * m..(j + 1) * n * m].copy_from_slice(&acts);
    }
    finish(model, policy, prep, controls, opts, None)
}

/// The initial segments `xi^i_{. ^ t0}` the integrator would start from.
pub fn sample_initial(
    model: &ModelSpec,
    init: &dyn InitialLaw,
    t0: f64,
    particles: usize,
    seed: u64,
) -> Result<Vec<PathGrid>> {
    let start = model.grid.snap(t0)?;
    let init_seed = derive_seed(seed, PURPOSE_INIT);
    Ok((0..particles)
        .into_par_iter()
        .map(|i| {
            let mut p = init.sample(i, init_seed, &model.grid, model.d());
            p.freeze_after(start);
            p
        })
        .collect())
}

/// Particle solution of the state equation started at `t0` from `init`.
pub fn integrate(
    model: &ModelSpec,
    init: &dyn InitialLaw,
    policy: &ControlPolicy,
    t0: f64,
    particles: usize,
    seed: u64,
) -> Result<ParticleEnsemble> {
    integrate_with(
        model,
        init,
        policy,
        &IntegrateOptions::new(t0, particles, seed),
    )
}

pub fn integrate_with(
    model: &ModelSpec,
    init: &dyn InitialLaw,
    policy: &ControlPolicy,
    opts: &IntegrateOptions,
) -> Result<ParticleEnsemble> {
    run_explicit(model, &model.generator, init, policy, opts)
}

/// As [`integrate_with`] with `A` replaced by its Yosida approximation `A_n`.
pub fn integrate_yosida(
    model: &ModelSpec,
    n: f64,
    init: &dyn InitialLaw,
    policy: &ControlPolicy,
    opts: &IntegrateOptions,
) -> Result<ParticleEnsemble> {
    let an = yosida(&model.generator, n)?;
    run_explicit(model, &an, init, policy, opts)
}

fn s2_gap(a: &[PathGrid], b: &[PathGrid], upto: usize) -> f64 {
    let sq: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| sup_dist(x, y, upto).powi(2))
        .collect();
    (pairwise_sum(&sq) / a.len() as f64).sqrt()
}

/// Fixed-point iteration on the flow of laws: each sweep re-solves every
/// particle against the laws (of states and of actions) of the previous
/// sweep, window by window.
pub fn integrate_picard(
    model: &ModelSpec,
    init: &dyn InitialLaw,
    policy: &ControlPolicy,
    opts: &IntegrateOptions,
    picard: &PicardOptions,
) -> Result<ParticleEnsemble> {
    if !(picard.tol > 0.0) {
        return Err(Error::Config("Picard tolerance must be positive".into()));
    }
    let mut prep = prepare(model, init, policy, opts)?;
    let engine = Engine::new(
        model,
        &model.generator,
        policy,
        opts.seed,
        opts.noise_substeps,
    );
    let n = opts.particles;
    let m = model.actions.dim();
    let width = n * m;
    let grid = model.grid;
    let window_steps = match picard.window {
        PicardWindow::Whole => (prep.end - prep.start).max(1),
        PicardWindow::Fixed { length } => ((length / grid.dt()).floor() as usize).max(1),
        PicardWindow::Auto => ((model.contraction_window() / grid.dt()).floor() as usize).max(1),
    };
    let mut controls = vec![0.0; grid.steps * width];
    let mut report = PicardReport {
        iterations: 0,
        total_iterations: 0,
        windows: 0,
        window_steps,
        gaps: Vec::new(),
        final_gap: 0.0,
    };
    let mut a = prep.start;
    while a < prep.end {
        let b = (a + window_steps).min(prep.end);
        // initial guess: paths frozen at the window start, acting on their own law
        let mut prev: Vec<PathGrid> = prep.paths.clone();
        prev.iter_mut().for_each(|p| p.freeze_after(a));
        let mut prev_actions = vec![0.0; (b - a) * width];
        for j in a..b {
            let acts = engine.actions(j, &prev, &prev, &prep.rands);
            prev_actions[(j - a) * width..(j - a + 1) * width].copy_from_slice(&acts);
        }
        let mut gaps = Vec::new();
        let mut sweeps = 0usize;
        loop {
            sweeps += 1;
            let mut cur = prev.clone();
            let mut cur_actions = vec![0.0; (b - a) * width];
            for j in a..b {
                let acts = engine.actions(j, &cur, &prev, &prep.rands);
                let law_acts = &prev_actions[(j - a) * width..(j - a + 1) * width];
                let next = engine.advance(j, &cur, &prev, &acts, law_acts, &prep.labels)?;
                write_node(&mut cur, j + 1, &next);
                cur_actions[(j - a) * width..(j - a + 1) * width].copy_from_slice(&acts);
            }
            let gap = s2_gap(&cur, &prev, b);
            gaps.push(gap);
            prev = cur;
            prev_actions = cur_actions;
            // the first sweep only replaces the guess; law updates are counted from there
            let updates = sweeps - 1;
            if sweeps > 1 && gap < picard.tol {
                report.iterations = report.iterations.max(updates);
                report.total_iterations += updates;
                report.final_gap = gap;
                break;
            }
            if updates >= picard.max_iter {
                return Err(Error::NonConvergence {
                    iterations: updates,
                    last_gap: gap,
                    gaps,
                });
            }
        }
        report.gaps.push(gaps);
        report.windows += 1;
        controls[a * width..b * width].copy_from_slice(&prev_actions);
        prev.iter_mut().for_each(|p| p.freeze_after(b));
        prep.paths = prev;
        a = b;
    }
    finish(model, policy, prep, controls, opts, Some(report))
}

/// `(mean_i ||X^1_i - X^2_i||_T^2)^{1/2}` for noise-paired ensembles.
pub fn s2_distance(e1: &ParticleEnsemble, e2: &ParticleEnsemble) -> Result<f64> {
    if e1.len() != e2.len() || !e1.grid().same_as(e2.grid()) || e1.dim() != e2.dim() {
        return Err(Error::Config(
            "ensembles differ in size, grid or dimension".into(),
        ));
    }
    Ok(s2_gap(&e1.particles, &e2.particles, e1.grid().steps))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowReport {
    pub model: String,
    pub t0: f64,
    pub s: f64,
    pub max_particle_gap: f64,
}

/// Integrates over `[t0, T]` once, and again over `[t0, s]` followed by a
/// restart at `s` from the stopped paths with the same labels and seed.
pub fn flow_restart_check(
    model: &ModelSpec,
    init: &dyn InitialLaw,
    policy: &ControlPolicy,
    t0: f64,
    s: f64,
    particles: usize,
    seed: u64,
) -> Result<FlowReport> {
    if s < t0 {
        return Err(Error::Domain("restart time precedes the start time".into()));
    }
    let opts = IntegrateOptions::new(t0, particles, seed);
    let full = integrate_with(model, init, policy, &opts)?;
    let head = integrate_with(model, init, policy, &opts.until(s))?;
    let restart_init = Init::labelled_atoms(head.particles, head.labels)?;
    let tail = integrate_with(
        model,
        &restart_init,
        policy,
        &IntegrateOptions::new(s, particles, seed),
    )?;
    let gap = full
        .particles
        .iter()
        .zip(&tail.particles)
        .map(|(x, y)| sup_dist(x, y, model.grid.steps))
        .fold(0.0, f64::max);
    Ok(FlowReport {
        model: model.tag.clone(),
        t0,
        s,
        max_particle_gap: gap,
    })
}
