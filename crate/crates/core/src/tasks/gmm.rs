use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::PosteriorMoments;
use crate::error::{Error, Result};
use crate::rng::fill_standard_normal;
use crate::schedule::DiffusionTime;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// One mixture component of the likelihood `x | θ ~ Σ_i w_i N(θ, diag(c_i))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmComponent {
    pub weight: f64,
    pub cov_diag: DVector<f64>,
}

/// Gaussian-mixture likelihood with diagonal components and prior `N(0, I)`.
#[derive(Debug, Clone)]
pub struct GmmTask {
    components: Vec<GmmComponent>,
}

/// One diffused posterior `Σ_i ω_i N(√ᾱ μ_i, ᾱ v_i + υ)` prepared for
/// repeated evaluation. All covariances are diagonal.
#[derive(Debug, Clone)]
pub struct DiffusedMixture {
    centers: Vec<DVector<f64>>,
    inv_var: Vec<DVector<f64>>,
    log_const: Vec<f64>,
}

impl GmmTask {
    /// Base diagonal from 0.6 to 1.4, components `2.25 Σ` and `Σ / 9`,
    /// equal weights.
    pub fn standard(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        let base = DVector::from_fn(m, |i, _| {
            if m == 1 {
                1.0
            } else {
                0.6 + 0.8 * i as f64 / (m as f64 - 1.0)
            }
        });
        Self::from_components(vec![
            GmmComponent {
                weight: 0.5,
                cov_diag: &base * 2.25,
            },
            GmmComponent {
                weight: 0.5,
                cov_diag: &base / 9.0,
            },
        ])
    }

    pub fn from_components(components: Vec<GmmComponent>) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(Error::InvalidParameter("mixture needs a component".into()));
        };
        let m = first.cov_diag.len();
        if components.iter().any(|c| c.cov_diag.len() != m) {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: components.iter().map(|c| c.cov_diag.len()).find(|l| *l != m).unwrap_or(m),
            });
        }
        if components.iter().any(|c| !(c.weight > 0.0) || c.cov_diag.iter().any(|v| !(*v > 0.0))) {
            return Err(Error::InvalidParameter("weights and variances must be positive".into()));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("weights sum to {total}")));
        }
        Ok(Self { components })
    }

    pub fn dim(&self) -> usize {
        self.components[0].cov_diag.len()
    }

    pub fn components(&self) -> &[GmmComponent] {
        &self.components
    }

    /// Exact mixture posterior of a single observation.
    pub fn posterior(&self, x: &DVector<f64>) -> PosteriorMoments {
        let mut log_w = Vec::with_capacity(self.components.len());
        let mut means = Vec::new();
        let mut covs = Vec::new();
        for c in &self.components {
            let evidence_var = c.cov_diag.add_scalar(1.0);
            log_w.push(c.weight.ln() + diag_log_normal(x, &DVector::zeros(x.len()), &evidence_var));
            means.push(x.component_div(&evidence_var));
            covs.push(DMatrix::from_diagonal(&c.cov_diag.component_div(&evidence_var)));
        }
        PosteriorMoments {
            weights: normalize_log_weights(&log_w),
            means,
            covs,
        }
    }

    pub fn diffused_posterior(&self, x: &DVector<f64>, time: DiffusionTime) -> DiffusedMixture {
        let post = self.posterior(x);
        let sa = time.alpha.sqrt();
        let mut out = DiffusedMixture {
            centers: Vec::new(),
            inv_var: Vec::new(),
            log_const: Vec::new(),
        };
        for ((w, mu), cov) in post.weights.iter().zip(&post.means).zip(&post.covs) {
            let var = cov.diagonal() * time.alpha;
            let var = var.add_scalar(time.upsilon);
            out.log_const
                .push(w.ln() - 0.5 * (mu.len() as f64 * LN_2PI + var.iter().map(|v| v.ln()).sum::<f64>()));
            out.inv_var.push(var.map(|v| 1.0 / v));
            out.centers.push(mu * sa);
        }
        out
    }

    pub fn diffused_posterior_score(&self, x: &DVector<f64>, theta: &DVector<f64>, time: DiffusionTime) -> DVector<f64> {
        let mut out = DVector::zeros(theta.len());
        self.diffused_posterior(x, time).score_into(theta.as_slice(), out.as_mut_slice());
        out
    }

    pub fn diffused_log_density(&self, x: &DVector<f64>, theta: &DVector<f64>, time: DiffusionTime) -> f64 {
        self.diffused_posterior(x, time).log_density(theta.as_slice())
    }

    /// `log p(x | θ)` and its gradient in `θ`.
    pub fn log_likelihood_grad(&self, x: &[f64], theta: &[f64], grad: &mut [f64]) -> f64 {
        let k = self.components.len();
        let mut logs = [0.0; 8];
        let mut logs_vec;
        let logs: &mut [f64] = if k <= 8 {
            &mut logs[..k]
        } else {
            logs_vec = vec![0.0; k];
            &mut logs_vec
        };
        for (l, c) in logs.iter_mut().zip(&self.components) {
            let mut q = 0.0;
            let mut ld = 0.0;
            for i in 0..x.len() {
                let d = x[i] - theta[i];
                q += d * d / c.cov_diag[i];
                ld += c.cov_diag[i].ln();
            }
            *l = c.weight.ln() - 0.5 * (x.len() as f64 * LN_2PI + ld + q);
        }
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = logs.iter().map(|l| (l - max).exp()).sum();
        let lse = max + total.ln();
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (l, c) in logs.iter().zip(&self.components) {
            let r = (l - lse).exp();
            for i in 0..x.len() {
                grad[i] += r * (x[i] - theta[i]) / c.cov_diag[i];
            }
        }
        lse
    }

    pub fn simulate<R: Rng + ?Sized>(&self, theta: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = &self.components[self.components.len() - 1];
        for c in &self.components {
            acc += c.weight;
            if u < acc {
                chosen = c;
                break;
            }
        }
        let mut z = DVector::zeros(theta.len());
        fill_standard_normal(rng, z.as_mut_slice());
        theta + z.component_mul(&chosen.cov_diag.map(f64::sqrt))
    }
}

impl DiffusedMixture {
    fn component_logs(&self, theta: &[f64], logs: &mut [f64]) {
        for (k, l) in logs.iter_mut().enumerate() {
            let c = &self.centers[k];
            let iv = &self.inv_var[k];
            let mut q = 0.0;
            for i in 0..theta.len() {
                let d = theta[i] - c[i];
                q += d * d * iv[i];
            }
            *l = self.log_const[k] - 0.5 * q;
        }
    }

    fn responsibilities(&self, theta: &[f64], r: &mut [f64]) -> f64 {
        self.component_logs(theta, r);
        let max = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in r.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        r.iter_mut().for_each(|v| *v /= total);
        max + total.ln()
    }

    pub fn log_density(&self, theta: &[f64]) -> f64 {
        let mut r = vec![0.0; self.centers.len()];
        self.responsibilities(theta, &mut r)
    }

    /// Score with responsibilities that depend on `θ_t`.
    pub fn score_into(&self, theta: &[f64], out: &mut [f64]) {
        let mut r = [0.0; 8];
        let k = self.centers.len();
        assert!(k <= 8, "at most 8 components");
        self.responsibilities(theta, &mut r[..k]);
        out.iter_mut().for_each(|v| *v = 0.0);
        for (j, rj) in r[..k].iter().enumerate() {
            let c = &self.centers[j];
            let iv = &self.inv_var[j];
            for i in 0..theta.len() {
                out[i] -= rj * (theta[i] - c[i]) * iv[i];
            }
        }
    }

    /// Row-major `m × m` Jacobian of the score:
    /// `Σ r_k (−A_k) + Σ r_k s_k s_kᵀ − s sᵀ`.
    pub fn jacobian_into(&self, theta: &[f64], out: &mut [f64]) {
        let m = theta.len();
        let k = self.centers.len();
        assert!(k <= 8, "at most 8 components");
        let mut r = [0.0; 8];
        self.responsibilities(theta, &mut r[..k]);
        let mut s_k = vec![0.0; k * m];
        let mut s = vec![0.0; m];
        for j in 0..k {
            for i in 0..m {
                let v = -(theta[i] - self.centers[j][i]) * self.inv_var[j][i];
                s_k[j * m + i] = v;
                s[i] += r[j] * v;
            }
        }
        for a in 0..m {
            for b in 0..m {
                let mut v = -s[a] * s[b];
                for j in 0..k {
                    v += r[j] * s_k[j * m + a] * s_k[j * m + b];
                }
                if a == b {
                    for j in 0..k {
                        v -= r[j] * self.inv_var[j][a];
                    }
                }
                out[a * m + b] = v;
            }
        }
    }
}

fn diag_log_normal(x: &DVector<f64>, mean: &DVector<f64>, var: &DVector<f64>) -> f64 {
    let mut q = 0.0;
    let mut ld = 0.0;
    for i in 0..x.len() {
        let d = x[i] - mean[i];
        q += d * d / var[i];
        ld += var[i].ln();
    }
    -0.5 * (x.len() as f64 * LN_2PI + ld + q)
}

fn normalize_log_weights(log_w: &[f64]) -> Vec<f64> {
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}
