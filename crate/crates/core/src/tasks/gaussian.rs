use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{BackwardMoments, GaussianDensity, PosteriorMoments, Standardizer};
use crate::error::{Error, Result};
use crate::linalg::spd_inverse;
use crate::rng::fill_standard_normal;
use crate::schedule::DiffusionTime;

/// Gaussian likelihood `x | θ ~ N(θ, Σ)` under a Gaussian prior.
#[derive(Debug, Clone)]
pub struct GaussianTask {
    rho: Option<f64>,
    likelihood_cov: DMatrix<f64>,
    likelihood_precision: DMatrix<f64>,
    likelihood_chol: DMatrix<f64>,
    prior: GaussianDensity,
    posterior_cov: DMatrix<f64>,
    // μ_post(x) = gain · x + offset
    gain: DMatrix<f64>,
    offset: DVector<f64>,
}

impl GaussianTask {
    /// `Σ = (1 − ρ) I + ρ 11ᵀ` with prior `N(0, I)`.
    pub fn correlated(m: usize, rho: f64) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        let lower = if m > 1 { -1.0 / (m as f64 - 1.0) } else { -1.0 };
        if !(rho > lower && rho < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "correlation {rho} outside ({lower}, 1) for m={m}"
            )));
        }
        let cov = DMatrix::from_fn(m, m, |i, j| if i == j { 1.0 } else { rho });
        let mut task = Self::new(cov, GaussianDensity::standard(m))?;
        task.rho = Some(rho);
        Ok(task)
    }

    pub fn new(likelihood_cov: DMatrix<f64>, prior: GaussianDensity) -> Result<Self> {
        let m = prior.dim();
        if likelihood_cov.nrows() != m || likelihood_cov.ncols() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: likelihood_cov.nrows(),
            });
        }
        let chol = likelihood_cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite {
                what: "likelihood covariance",
                min_eigenvalue: crate::linalg::min_eigenvalue(&likelihood_cov),
            })?;
        let likelihood_precision = chol.inverse();
        let posterior_cov = spd_inverse(&(&likelihood_precision + prior.precision()), "posterior precision")?;
        let gain = &posterior_cov * &likelihood_precision;
        let offset = &posterior_cov * (prior.precision() * prior.mean());
        Ok(Self {
            rho: None,
            likelihood_chol: chol.l(),
            likelihood_cov,
            likelihood_precision,
            prior,
            posterior_cov,
            gain,
            offset,
        })
    }

    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    pub fn rho(&self) -> Option<f64> {
        self.rho
    }

    pub fn likelihood_cov(&self) -> &DMatrix<f64> {
        &self.likelihood_cov
    }

    pub fn prior(&self) -> &GaussianDensity {
        &self.prior
    }

    /// `Σ_post`, shared by every single-observation posterior.
    pub fn posterior_cov(&self) -> &DMatrix<f64> {
        &self.posterior_cov
    }

    pub fn posterior_mean(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.gain * x + &self.offset
    }

    pub fn posterior(&self, x: &DVector<f64>) -> PosteriorMoments {
        PosteriorMoments::gaussian(self.posterior_mean(x), self.posterior_cov.clone())
    }

    pub fn posterior_density(&self, x: &DVector<f64>) -> GaussianDensity {
        GaussianDensity::new(self.posterior_mean(x), self.posterior_cov.clone(), "posterior covariance")
            .expect("posterior covariance is SPD")
    }

    /// `N(μ_n, (n Σ^{-1} + Σ_λ^{-1})^{-1})`.
    pub fn tall_posterior(&self, xs: &[DVector<f64>]) -> Result<PosteriorMoments> {
        let g = self.tall_posterior_density(xs)?;
        Ok(PosteriorMoments::gaussian(g.mean().clone(), g.cov().clone()))
    }

    pub fn tall_posterior_density(&self, xs: &[DVector<f64>]) -> Result<GaussianDensity> {
        if xs.is_empty() {
            return Err(Error::InvalidParameter("at least one observation is required".into()));
        }
        let n = xs.len() as f64;
        let precision = &self.likelihood_precision * n + self.prior.precision();
        let cov = spd_inverse(&precision, "tall posterior precision")?;
        let sum = xs.iter().fold(DVector::zeros(self.dim()), |acc, x| acc + x);
        let mean = &cov * (&self.likelihood_precision * sum + self.prior.precision() * self.prior.mean());
        GaussianDensity::new(mean, crate::linalg::symmetrize(&cov), "tall posterior covariance")
    }

    pub fn diffused_posterior_score(&self, x: &DVector<f64>, theta: &DVector<f64>, time: DiffusionTime) -> DVector<f64> {
        self.posterior_density(x).diffused_score(theta, time)
    }

    pub fn backward_moments(&self, x: &DVector<f64>, theta: &DVector<f64>, time: DiffusionTime) -> BackwardMoments {
        self.posterior_density(x).backward_moments(theta, time)
    }

    pub fn simulate<R: Rng + ?Sized>(&self, theta: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        let mut z = DVector::zeros(self.dim());
        fill_standard_normal(rng, z.as_mut_slice());
        theta + &self.likelihood_chol * z
    }

    /// The same task in standardized coordinates; observations must be
    /// mapped with `s.forward` as well.
    pub fn standardize(&self, s: &Standardizer) -> Result<GaussianTask> {
        let mut out = GaussianTask::new(s.covariance(&self.likelihood_cov), s.density(&self.prior)?)?;
        out.rho = self.rho;
        Ok(out)
    }
}
