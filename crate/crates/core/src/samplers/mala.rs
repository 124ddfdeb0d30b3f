use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{SampleMeta, SampleSet, CHUNK_SIZE};
use crate::error::{Error, Result};
use crate::rng::{chain_rng, fill_standard_normal};
use crate::tasks::GaussianDensity;

/// A differentiable log density.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;
    /// Returns `log π(θ)` and writes `∇ log π(θ)` into `grad`.
    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64;
}

impl LogDensity for GaussianDensity {
    fn dim(&self) -> usize {
        GaussianDensity::dim(self)
    }

    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let theta = DVector::from_column_slice(theta);
        grad.copy_from_slice(self.score(&theta).as_slice());
        self.log_density(&theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MalaConfig {
    pub steps: usize,
    pub step_size: f64,
    pub burn_in: f64,
    pub target_acceptance: f64,
    pub adapt_window: usize,
}

impl Default for MalaConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            step_size: 0.1,
            burn_in: 0.2,
            target_acceptance: 0.574,
            adapt_window: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MalaReport {
    /// Acceptance rate after burn-in.
    pub acceptance: f64,
    pub step_size: f64,
    pub collapsed: bool,
}

fn log_proposal(from: &[f64], grad_from: &[f64], to: &[f64], h: f64) -> f64 {
    let mut q = 0.0;
    for i in 0..from.len() {
        let d = to[i] - from[i] - h * grad_from[i];
        q += d * d;
    }
    -q / (4.0 * h)
}

/// `log [π(y) q(x | y) / (π(x) q(y | x))]` for the Langevin proposal with step `h`.
pub fn mala_log_acceptance<D: LogDensity + ?Sized>(target: &D, x: &[f64], y: &[f64], h: f64) -> f64 {
    let m = x.len();
    let (mut gx, mut gy) = (vec![0.0; m], vec![0.0; m]);
    let lx = target.log_density_grad(x, &mut gx);
    let ly = target.log_density_grad(y, &mut gy);
    ly + log_proposal(y, &gy, x, h) - lx - log_proposal(x, &gx, y, h)
}

struct Chains {
    state: DMatrix<f64>,
    grad: DMatrix<f64>,
    logp: Vec<f64>,
    rngs: Vec<ChaCha8Rng>,
}

impl Chains {
    fn advance<D: LogDensity + ?Sized>(&mut self, target: &D, h: f64, steps: usize) -> u64 {
        let m = self.state.nrows();
        let mut accepted = 0;
        let mut z = vec![0.0; m];
        let mut y = vec![0.0; m];
        let mut gy = vec![0.0; m];
        for c in 0..self.state.ncols() {
            let rng = &mut self.rngs[c];
            for _ in 0..steps {
                let x = self.state.column(c);
                let gx = self.grad.column(c);
                fill_standard_normal(rng, &mut z);
                for i in 0..m {
                    y[i] = x[i] + h * gx[i] + (2.0 * h).sqrt() * z[i];
                }
                let ly = target.log_density_grad(&y, &mut gy);
                let log_ratio =
                    ly + log_proposal(&y, &gy, x.as_slice(), h) - self.logp[c] - log_proposal(x.as_slice(), gx.as_slice(), &y, h);
                let u: f64 = rng.random();
                if ly.is_finite() && u.ln() < log_ratio {
                    self.state.column_mut(c).copy_from_slice(&y);
                    self.grad.column_mut(c).copy_from_slice(&gy);
                    self.logp[c] = ly;
                    accepted += 1;
                }
            }
        }
        accepted
    }
}

/// Independent MALA chains started from the rows of `init`; each chain
/// contributes its final state. The shared step size is tuned during burn-in.
pub fn mala_sample<D: LogDensity + ?Sized>(
    target: &D,
    init: &DMatrix<f64>,
    cfg: &MalaConfig,
    seed: u64,
) -> Result<(SampleSet, MalaReport)> {
    let m = target.dim();
    if init.ncols() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: init.ncols(),
        });
    }
    if cfg.steps == 0 || !(cfg.step_size > 0.0) || cfg.adapt_window == 0 {
        return Err(Error::InvalidParameter("MALA needs steps, step size and window > 0".into()));
    }
    let started = Instant::now();
    let n = init.nrows();
    let mut chunks: Vec<Chains> = (0..n.div_ceil(CHUNK_SIZE))
        .map(|k| {
            let first = k * CHUNK_SIZE;
            let count = CHUNK_SIZE.min(n - first);
            let state = init.rows(first, count).transpose();
            let mut grad = DMatrix::zeros(m, count);
            let mut logp = vec![0.0; count];
            for c in 0..count {
                let mut g = vec![0.0; m];
                logp[c] = target.log_density_grad(state.column(c).as_slice(), &mut g);
                grad.column_mut(c).copy_from_slice(&g);
            }
            Chains {
                state,
                grad,
                logp,
                rngs: (first..first + count).map(|c| chain_rng(seed, c)).collect(),
            }
        })
        .collect();

    let burn = ((cfg.steps as f64) * cfg.burn_in).round() as usize;
    let mut h = cfg.step_size;
    let mut done = 0;
    let (mut kept_accepts, mut kept_steps) = (0u64, 0u64);
    while done < cfg.steps {
        let window = if done < burn {
            cfg.adapt_window.min(burn - done)
        } else {
            cfg.steps - done
        };
        let accepted: u64 = chunks.par_iter_mut().map(|c| c.advance(target, h, window)).sum();
        let rate = accepted as f64 / (window * n) as f64;
        if done < burn {
            h *= ((rate - cfg.target_acceptance) * 2.0).exp();
        } else {
            kept_accepts += accepted;
            kept_steps += (window * n) as u64;
        }
        done += window;
    }
    let acceptance = if kept_steps > 0 {
        kept_accepts as f64 / kept_steps as f64
    } else {
        0.0
    };

    let mut draws = DMatrix::zeros(n, m);
    let mut row = 0;
    for c in &chunks {
        for col in c.state.column_iter() {
            draws.row_mut(row).copy_from(&col.transpose());
            row += 1;
        }
    }
    let set = SampleSet {
        draws,
        meta: SampleMeta {
            method: "MALA".into(),
            steps: cfg.steps,
            n_obs: 0,
            epsilon: 0.0,
            seed,
            clip: false,
            wall_time_s: started.elapsed().as_secs_f64(),
            nfe: cfg.steps as u64,
            jacobian_evals: 0,
            setup_nfe: 0,
            flagged_steps: 0,
            lambda_violations: 0,
            diverged_chains: 0,
            dropped_rows: 0,
        },
    };
    Ok((
        set,
        MalaReport {
            acceptance,
            step_size: h,
            collapsed: acceptance < 0.05,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct StdNormal(usize);

    impl LogDensity for StdNormal {
        fn dim(&self) -> usize {
            self.0
        }
        fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
            let mut l = 0.0;
            for (g, t) in grad.iter_mut().zip(theta) {
                *g = -t;
                l -= 0.5 * t * t;
            }
            l
        }
    }

    #[test]
    fn tuned_acceptance_is_in_band() {
        let init = DMatrix::from_element(500, 2, 2.0);
        let cfg = MalaConfig {
            steps: 500,
            ..Default::default()
        };
        let (set, report) = mala_sample(&StdNormal(2), &init, &cfg, 4).unwrap();
        assert!((0.4..=0.7).contains(&report.acceptance), "{report:?}");
        assert!(!report.collapsed);
        assert!(set.mean().amax() < 0.15);
    }

    #[test]
    fn acceptance_ratio_is_antisymmetric() {
        let t = StdNormal(3);
        let x = [0.1, -0.5, 1.0];
        let y = [0.3, 0.2, 0.4];
        let a = mala_log_acceptance(&t, &x, &y, 0.3);
        let b = mala_log_acceptance(&t, &y, &x, 0.3);
        assert!((a + b).abs() < 1e-12);
    }
}
