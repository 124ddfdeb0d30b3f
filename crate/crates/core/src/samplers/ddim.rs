use std::time::Instant;

use super::{finish, run_chains, MetaInput, SampleSet, StepDiagnostics, TallScore};
use crate::error::{Error, Result};
use crate::schedule::DiffusionSchedule;

pub const DEFAULT_SIGMA_0: f64 = 1e-4;

/// Stochasticity for a step count: 0.2, 0.5, 0.8 and 1.0 up to 50, 150,
/// 400 and beyond.
pub fn eta_for_steps(steps: usize) -> f64 {
    match steps {
        0..=50 => 0.2,
        51..=150 => 0.5,
        151..=400 => 0.8,
        _ => 1.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdimConfig {
    pub eta: f64,
    pub sigma_0: f64,
    pub clip: bool,
}

impl DdimConfig {
    pub fn for_steps(steps: usize) -> Self {
        Self {
            eta: eta_for_steps(steps),
            sigma_0: DEFAULT_SIGMA_0,
            clip: false,
        }
    }

    pub fn with_clip(mut self, clip: bool) -> Self {
        self.clip = clip;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::InvalidParameter(format!("eta {} outside [0, 1]", self.eta)));
        }
        if !(self.sigma_0 >= 0.0) {
            return Err(Error::InvalidParameter("sigma_0 must be non-negative".into()));
        }
        Ok(())
    }
}

/// DDIM backward chain from `N(0, I)` at `t = 1` to the clean endpoint.
pub fn ddim_sample<S: TallScore + ?Sized>(
    score: &S,
    sched: &DiffusionSchedule,
    cfg: &DdimConfig,
    n_chains: usize,
    seed: u64,
) -> Result<SampleSet> {
    cfg.validate()?;
    let started = Instant::now();
    let steps = sched.steps();
    let outcome = run_chains(score.dim(), n_chains, seed, steps, cfg.clip, |chunk| {
        for i in (1..=steps).rev() {
            let now = sched.time(i);
            let mut diag = StepDiagnostics::default();
            let s = score.eval(&chunk.theta, now, &mut diag);
            chunk.record(i, diag);
            let x0 = (&chunk.theta + s * now.upsilon) / now.alpha.sqrt();
            let z = chunk.noise();
            chunk.theta = if i > 1 {
                let prev = sched.time(i - 1);
                let var = cfg.eta * cfg.eta * (prev.upsilon / now.upsilon) * (1.0 - now.alpha / prev.alpha);
                let dir = (prev.upsilon - var).max(0.0).sqrt() / now.upsilon.sqrt();
                let eps = &chunk.theta - &x0 * now.alpha.sqrt();
                &x0 * prev.alpha.sqrt() + eps * dir + z * var.sqrt()
            } else {
                x0 + z * cfg.sigma_0
            };
            chunk.after_update();
        }
    });
    let cost = score.cost();
    Ok(finish(
        outcome,
        MetaInput {
            method: "DDIM",
            steps,
            n_obs: score.n_obs(),
            seed,
            clip: cfg.clip,
            nfe: cost.score_evals * steps as u64,
            jacobian_evals: cost.jacobian_evals * steps as u64,
        },
        started,
    ))
}
