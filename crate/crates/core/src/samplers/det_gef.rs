use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::{finish, run_chains, MetaInput, SampleSet};
use crate::compose::det_gef_variance;
use crate::error::{Error, Result};
use crate::schedule::DiffusionSchedule;
use crate::score::ScoreField;
use crate::tasks::Prior;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DetGefConfig {
    pub clip: bool,
}

/// Reverse chain `θ_{i−1} ~ N(μ(θ_i, x_{1:n}), σ_i² I)` of the deterministic
/// baseline.
pub fn det_gef_sample<F: ScoreField + ?Sized>(
    field: &F,
    xs: &[DVector<f64>],
    prior: &Prior,
    sched: &DiffusionSchedule,
    cfg: &DetGefConfig,
    n_chains: usize,
    seed: u64,
) -> Result<SampleSet> {
    if xs.is_empty() {
        return Err(Error::InvalidParameter("at least one observation is required".into()));
    }
    let started = Instant::now();
    let steps = sched.steps();
    let n = xs.len();
    let nf = n as f64;
    let outcome = run_chains(field.dim(), n_chains, seed, steps, cfg.clip, |chunk| {
        for i in (1..=steps).rev() {
            let time = sched.time(i);
            let a = sched.step_ratio(i);
            let beta = 1.0 - a;
            let var = det_gef_variance(n, a);
            let mut sum = DMatrix::zeros(chunk.theta.nrows(), chunk.theta.ncols());
            field.eval_each(&chunk.theta, xs, time, &mut |_, s| sum += s);
            // Σ_j μ_j − (n − 1) √a θ, with μ_j = (θ + β s_j) / √a
            let combined = (&chunk.theta * nf + sum * beta) / a.sqrt() - &chunk.theta * ((nf - 1.0) * a.sqrt());
            let mut mean = combined / beta;
            if n > 1 {
                mean += prior.diffused_score_batch(&chunk.theta, time) * (1.0 - nf);
            }
            let z = chunk.noise();
            chunk.theta = mean * var + z * var.sqrt();
            chunk.after_update();
        }
    });
    Ok(finish(
        outcome,
        MetaInput {
            method: "DET_GEF",
            steps,
            n_obs: n,
            seed,
            clip: cfg.clip,
            nfe: (n * steps) as u64,
            jacobian_evals: 0,
        },
        started,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compose::{compose_det_gef, ddpm_mean};
    use crate::score::MarginalScore;

    #[test]
    fn single_observation_step_is_ddpm() {
        let theta = DVector::from_vec(vec![0.4, -1.0]);
        let s = DVector::from_vec(vec![-0.2, 0.9]);
        let mu = ddpm_mean(&theta, &s, 0.95);
        let (mean, var) = compose_det_gef(std::slice::from_ref(&mu), &theta, &DVector::zeros(2), 0.95);
        assert!((mean - mu).amax() < 1e-14);
        assert!((var - 0.05).abs() < 1e-15);
    }

    #[test]
    fn reproducible_with_seed() {
        let field = MarginalScore::standard(2);
        let xs = vec![DVector::zeros(2); 3];
        let prior = Prior::standard(2);
        let sched = DiffusionSchedule::with_defaults(30).unwrap();
        let a = det_gef_sample(&field, &xs, &prior, &sched, &DetGefConfig::default(), 50, 9).unwrap();
        let b = det_gef_sample(&field, &xs, &prior, &sched, &DetGefConfig::default(), 50, 9).unwrap();
        assert_eq!(a.draws, b.draws);
        assert_eq!(a.meta.nfe, 90);
    }
}
