//! Backward samplers over a composed tall score, plus a MALA reference sampler.
//!
//! Chains are processed in fixed-size chunks (columns of a matrix) so one
//! score call serves many chains. Each chain draws from its own random
//! stream, which keeps results independent of thread count.

mod ddim;
mod det_gef;
mod langevin;
mod mala;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{chain_rng, fill_standard_normal};
use crate::schedule::DiffusionTime;
use crate::score::ScoreField;

pub use ddim::{ddim_sample, eta_for_steps, DdimConfig, DEFAULT_SIGMA_0};
pub use det_gef::{det_gef_sample, DetGefConfig};
pub use langevin::{step_size, ula_sample, LangevinConfig};
pub use mala::{mala_log_acceptance, mala_sample, LogDensity, MalaConfig, MalaReport};

/// Chains whose norm exceeds this are frozen and dropped.
pub const DIVERGENCE_THRESHOLD: f64 = 1e3;
/// Clipped samplers keep every coordinate in `[−CLIP_BOUND, CLIP_BOUND]`.
pub const CLIP_BOUND: f64 = 3.0;
/// Chains evaluated together in one score call.
pub const CHUNK_SIZE: usize = 256;

/// Evaluations performed by one call of [`TallScore::eval`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalCost {
    pub score_evals: u64,
    pub jacobian_evals: u64,
}

/// Events raised during one tall-score call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepDiagnostics {
    /// A fallback (eigen floor or composition switch) was used.
    pub flagged: bool,
    /// The combined precision was not positive definite.
    pub lambda_violation: bool,
}

/// A tall-posterior score evaluated on a batch of chains.
pub trait TallScore: Sync {
    fn dim(&self) -> usize;
    fn n_obs(&self) -> usize;
    fn eval(&self, theta: &DMatrix<f64>, time: DiffusionTime, diag: &mut StepDiagnostics) -> DMatrix<f64>;
    fn cost(&self) -> EvalCost;
}

/// The score of one observation, viewed as a tall score.
pub struct SingleObservation<'a, F: ScoreField + ?Sized> {
    field: &'a F,
    x: &'a DVector<f64>,
}

impl<'a, F: ScoreField + ?Sized> SingleObservation<'a, F> {
    pub fn new(field: &'a F, x: &'a DVector<f64>) -> Self {
        Self { field, x }
    }
}

impl<F: ScoreField + ?Sized> TallScore for SingleObservation<'_, F> {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn n_obs(&self) -> usize {
        1
    }

    fn eval(&self, theta: &DMatrix<f64>, time: DiffusionTime, _diag: &mut StepDiagnostics) -> DMatrix<f64> {
        self.field.eval(theta, self.x, time)
    }

    fn cost(&self) -> EvalCost {
        EvalCost {
            score_evals: 1,
            jacobian_evals: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub method: String,
    pub steps: usize,
    pub n_obs: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub clip: bool,
    pub wall_time_s: f64,
    pub nfe: u64,
    pub jacobian_evals: u64,
    pub setup_nfe: u64,
    pub flagged_steps: usize,
    pub lambda_violations: usize,
    pub diverged_chains: usize,
    pub dropped_rows: usize,
}

/// Posterior draws, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub draws: DMatrix<f64>,
    pub meta: SampleMeta,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.draws.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.draws.ncols()
    }

    pub fn mean(&self) -> DVector<f64> {
        self.draws.row_mean().transpose()
    }
}

/// Working state of one chunk of chains.
pub(crate) struct Chunk {
    pub theta: DMatrix<f64>,
    rngs: Vec<ChaCha8Rng>,
    pub diverged: Vec<bool>,
    flagged: Vec<bool>,
    lambda: Vec<bool>,
    clip: bool,
}

impl Chunk {
    fn new(m: usize, first: usize, count: usize, seed: u64, steps: usize, clip: bool) -> Self {
        let mut rngs: Vec<ChaCha8Rng> = (first..first + count).map(|c| chain_rng(seed, c)).collect();
        let mut theta = DMatrix::zeros(m, count);
        for (col, rng) in theta.column_iter_mut().zip(rngs.iter_mut()) {
            let mut col = col;
            fill_standard_normal(rng, col.as_mut_slice());
        }
        Self {
            theta,
            rngs,
            diverged: vec![false; count],
            flagged: vec![false; steps + 1],
            lambda: vec![false; steps + 1],
            clip,
        }
    }

    /// Fresh standard normal noise, one column per chain.
    pub fn noise(&mut self) -> DMatrix<f64> {
        let mut z = DMatrix::zeros(self.theta.nrows(), self.theta.ncols());
        for (col, rng) in z.column_iter_mut().zip(self.rngs.iter_mut()) {
            let mut col = col;
            fill_standard_normal(rng, col.as_mut_slice());
        }
        z
    }

    pub fn record(&mut self, step: usize, diag: StepDiagnostics) {
        self.flagged[step] |= diag.flagged;
        self.lambda[step] |= diag.lambda_violation;
    }

    /// Clips, then freezes diverged chains at the origin.
    pub fn after_update(&mut self) {
        if self.clip {
            self.theta.apply(|v| *v = v.clamp(-CLIP_BOUND, CLIP_BOUND));
        }
        for (c, mut col) in self.theta.column_iter_mut().enumerate() {
            if self.diverged[c] {
                col.fill(0.0);
                continue;
            }
            let bad = col.iter().any(|v| !v.is_finite()) || col.norm() > DIVERGENCE_THRESHOLD;
            if bad {
                self.diverged[c] = true;
                col.fill(0.0);
            }
        }
    }
}

pub(crate) struct Outcome {
    pub draws: DMatrix<f64>,
    pub diverged: usize,
    pub flagged_steps: usize,
    pub lambda_violations: usize,
}

/// Runs `body` over every chunk in parallel and gathers kept chains as rows.
pub(crate) fn run_chains<F>(m: usize, n_chains: usize, seed: u64, steps: usize, clip: bool, body: F) -> Outcome
where
    F: Fn(&mut Chunk) + Sync,
{
    let n_chunks = n_chains.div_ceil(CHUNK_SIZE);
    let chunks: Vec<Chunk> = (0..n_chunks)
        .into_par_iter()
        .map(|k| {
            let first = k * CHUNK_SIZE;
            let count = CHUNK_SIZE.min(n_chains - first);
            let mut chunk = Chunk::new(m, first, count, seed, steps, clip);
            body(&mut chunk);
            chunk
        })
        .collect();
    let mut flagged = vec![false; steps + 1];
    let mut lambda = vec![false; steps + 1];
    let mut rows = Vec::new();
    let mut diverged = 0;
    for chunk in &chunks {
        for i in 0..=steps {
            flagged[i] |= chunk.flagged[i];
            lambda[i] |= chunk.lambda[i];
        }
        for (c, col) in chunk.theta.column_iter().enumerate() {
            if chunk.diverged[c] || col.iter().any(|v| !v.is_finite()) {
                diverged += 1;
            } else {
                rows.push(col.into_owned());
            }
        }
    }
    let mut draws = DMatrix::zeros(rows.len(), m);
    for (r, v) in rows.iter().enumerate() {
        draws.row_mut(r).copy_from(&v.transpose());
    }
    Outcome {
        draws,
        diverged,
        flagged_steps: flagged.iter().filter(|f| **f).count(),
        lambda_violations: lambda.iter().filter(|f| **f).count(),
    }
}

pub(crate) struct MetaInput {
    pub method: &'static str,
    pub steps: usize,
    pub n_obs: usize,
    pub seed: u64,
    pub clip: bool,
    pub nfe: u64,
    pub jacobian_evals: u64,
}

pub(crate) fn finish(outcome: Outcome, input: MetaInput, started: Instant) -> SampleSet {
    SampleSet {
        meta: SampleMeta {
            method: input.method.to_string(),
            steps: input.steps,
            n_obs: input.n_obs,
            epsilon: 0.0,
            seed: input.seed,
            clip: input.clip,
            wall_time_s: started.elapsed().as_secs_f64(),
            nfe: input.nfe,
            jacobian_evals: input.jacobian_evals,
            setup_nfe: 0,
            flagged_steps: outcome.flagged_steps,
            lambda_violations: outcome.lambda_violations,
            diverged_chains: outcome.diverged,
            dropped_rows: outcome.diverged,
        },
        draws: outcome.draws,
    }
}
