use std::time::Instant;

use super::{finish, run_chains, MetaInput, SampleSet, StepDiagnostics, TallScore};
use crate::error::{Error, Result};
use crate::schedule::DiffusionSchedule;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LangevinConfig {
    pub inner_steps: usize,
    pub tau: f64,
    pub tamed: bool,
    pub clip: bool,
}

impl Default for LangevinConfig {
    fn default() -> Self {
        Self {
            inner_steps: 5,
            tau: 0.5,
            tamed: false,
            clip: false,
        }
    }
}

/// `δ_i = τ (1 − a_i) / √a_i` with the per-step ratio `a_i = ᾱ(t_i) / ᾱ(t_{i−1})`.
pub fn step_size(sched: &DiffusionSchedule, index: usize, tau: f64) -> f64 {
    let a = sched.step_ratio(index);
    tau * (1.0 - a) / a.sqrt()
}

/// Annealed unadjusted Langevin from `t = 1` down the grid.
pub fn ula_sample<S: TallScore + ?Sized>(
    score: &S,
    sched: &DiffusionSchedule,
    cfg: &LangevinConfig,
    n_chains: usize,
    seed: u64,
) -> Result<SampleSet> {
    if cfg.inner_steps == 0 || !(cfg.tau > 0.0) {
        return Err(Error::InvalidParameter("Langevin needs L >= 1 and tau > 0".into()));
    }
    let started = Instant::now();
    let steps = sched.steps();
    let outcome = run_chains(score.dim(), n_chains, seed, steps, cfg.clip, |chunk| {
        for i in (1..=steps).rev() {
            let time = sched.time(i);
            let delta = step_size(sched, i, cfg.tau);
            let noise_scale = (2.0 * delta).sqrt();
            for _ in 0..cfg.inner_steps {
                let mut diag = StepDiagnostics::default();
                let mut g = score.eval(&chunk.theta, time, &mut diag);
                chunk.record(i, diag);
                if cfg.tamed {
                    for mut col in g.column_iter_mut() {
                        let scale = 1.0 / (1.0 + delta * col.norm());
                        col *= scale;
                    }
                }
                let z = chunk.noise();
                chunk.theta += g * delta + z * noise_scale;
                chunk.after_update();
            }
        }
    });
    let cost = score.cost();
    let calls = (steps * cfg.inner_steps) as u64;
    Ok(finish(
        outcome,
        MetaInput {
            method: if cfg.tamed { "ULA-tamed" } else { "ULA" },
            steps,
            n_obs: score.n_obs(),
            seed,
            clip: cfg.clip,
            nfe: cost.score_evals * calls,
            jacobian_evals: cost.jacobian_evals * calls,
        },
        started,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::SingleObservation;
    use crate::score::MarginalScore;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn step_sizes_are_small_and_positive() {
        let sched = DiffusionSchedule::with_defaults(400).unwrap();
        for i in 1..=400 {
            let d = step_size(&sched, i, 0.5);
            assert!(d > 0.0 && d < 0.05, "step {i}: {d}");
        }
    }

    #[test]
    fn standard_target_moments() {
        let field = MarginalScore::standard(2);
        let x = DVector::zeros(2);
        let single = SingleObservation::new(&field, &x);
        let sched = DiffusionSchedule::with_defaults(200).unwrap();
        let out = ula_sample(&single, &sched, &LangevinConfig::default(), 4000, 2).unwrap();
        assert_eq!(out.meta.nfe, 200 * 5);
        assert!(out.mean().amax() < 0.08);
        let cov = crate::score::empirical_cov(&out.draws);
        assert!((cov - DMatrix::identity(2, 2)).amax() < 0.1);
    }

    #[test]
    fn tamed_variant_runs_and_is_labelled() {
        let field = MarginalScore::standard(1);
        let x = DVector::zeros(1);
        let single = SingleObservation::new(&field, &x);
        let sched = DiffusionSchedule::with_defaults(20).unwrap();
        let cfg = LangevinConfig {
            tamed: true,
            ..Default::default()
        };
        let out = ula_sample(&single, &sched, &cfg, 100, 2).unwrap();
        assert_eq!(out.meta.method, "ULA-tamed");
        assert_eq!(out.len(), 100);
    }
}
