//! Closed-form inference tasks used as ground truth.
//!
//! Every quantity here (posteriors, diffused scores, backward-kernel moments)
//! is exact, which is what lets the composition rules and samplers be tested
//! against analytic answers.

mod gaussian;
mod gmm;
mod prior;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{log_det_spd, spd_inverse};
use crate::rng::fill_standard_normal;
use crate::schedule::DiffusionTime;

pub use gaussian::GaussianTask;
pub use gmm::{GmmComponent, GmmTask};
pub use prior::{Prior, Standardizer, UNIFORM_SCORE_CLAMP};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Moments of a (possibly mixture) posterior.
///
/// Gaussian posteriors carry a single component with weight 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMoments {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

impl PosteriorMoments {
    pub fn gaussian(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        Self {
            weights: vec![1.0],
            means: vec![mean],
            covs: vec![cov],
        }
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// Overall mean of the mixture.
    pub fn mean(&self) -> DVector<f64> {
        self.weights
            .iter()
            .zip(&self.means)
            .fold(DVector::zeros(self.dim()), |acc, (w, mu)| acc + mu * *w)
    }

    /// Overall covariance of the mixture.
    pub fn cov(&self) -> DMatrix<f64> {
        let mean = self.mean();
        let m = self.dim();
        let mut cov = DMatrix::zeros(m, m);
        for ((w, mu), c) in self.weights.iter().zip(&self.means).zip(&self.covs) {
            let d = mu - &mean;
            cov += (c + &d * d.transpose()) * *w;
        }
        cov
    }
}

/// Mean and covariance of the backward kernel `q(θ_0 | θ_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// A multivariate normal with cached precision and Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDensity {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    precision: DMatrix<f64>,
    chol: DMatrix<f64>,
    log_det_cov: f64,
}

/// A Gaussian pushed through the forward kernel at one time:
/// `N(√ᾱ μ, ᾱ Σ + (1 − ᾱ) I)`.
#[derive(Debug, Clone)]
pub struct DiffusedGaussian {
    pub center: DVector<f64>,
    pub precision: DMatrix<f64>,
    pub log_det_precision: f64,
}

impl DiffusedGaussian {
    pub fn score(&self, theta: &DVector<f64>) -> DVector<f64> {
        -(&self.precision * (theta - &self.center))
    }

    /// Scores of every column of `theta`.
    pub fn score_batch(&self, theta: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = &self.precision * theta;
        let shift = &self.precision * &self.center;
        for mut col in out.column_iter_mut() {
            col -= &shift;
            col.neg_mut();
        }
        out
    }

    pub fn log_density(&self, theta: &DVector<f64>) -> f64 {
        let d = theta - &self.center;
        -0.5 * (theta.len() as f64 * LN_2PI - self.log_det_precision + d.dot(&(&self.precision * &d)))
    }
}

impl GaussianDensity {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, what: &'static str) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                got: cov.nrows(),
            });
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite {
                what,
                min_eigenvalue: crate::linalg::min_eigenvalue(&cov),
            })?;
        let precision = chol.inverse();
        let log_det_cov = log_det_spd(&cov, what)?;
        Ok(Self {
            mean,
            chol: chol.l(),
            precision,
            cov,
            log_det_cov,
        })
    }

    pub fn standard(m: usize) -> Self {
        Self::new(DVector::zeros(m), DMatrix::identity(m, m), "identity").expect("identity is SPD")
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn log_density(&self, theta: &DVector<f64>) -> f64 {
        let d = theta - &self.mean;
        -0.5 * (self.dim() as f64 * LN_2PI + self.log_det_cov + d.dot(&(&self.precision * &d)))
    }

    /// `∇ log N(θ; μ, Σ)`.
    pub fn score(&self, theta: &DVector<f64>) -> DVector<f64> {
        -(&self.precision * (theta - &self.mean))
    }

    pub fn diffused(&self, time: DiffusionTime) -> DiffusedGaussian {
        let m = self.dim();
        let marginal = &self.cov * time.alpha + DMatrix::identity(m, m) * time.upsilon;
        let precision = spd_inverse(&marginal, "diffused covariance")
            .expect("alpha * SPD + upsilon * I is SPD");
        let log_det_precision = -log_det_spd(&marginal, "diffused covariance").expect("SPD");
        DiffusedGaussian {
            center: &self.mean * time.alpha.sqrt(),
            precision,
            log_det_precision,
        }
    }

    /// `−(ᾱ Σ + υ I)^{-1} (θ_t − √ᾱ μ)`.
    pub fn diffused_score(&self, theta: &DVector<f64>, time: DiffusionTime) -> DVector<f64> {
        self.diffused(time).score(theta)
    }

    pub fn diffused_log_density(&self, theta: &DVector<f64>, time: DiffusionTime) -> f64 {
        self.diffused(time).log_density(theta)
    }

    /// Exact mean and covariance of `q(θ_0 | θ_t)` when `θ_0` has this law.
    pub fn backward_moments(&self, theta: &DVector<f64>, time: DiffusionTime) -> BackwardMoments {
        let m = self.dim();
        let p = self.diffused(time).precision;
        let (a, u) = (time.alpha, time.upsilon);
        let cov = (DMatrix::identity(m, m) - &p * u) * (u / a);
        let mean = &cov * theta * (a.sqrt() / u) + &p * &self.mean * u;
        BackwardMoments {
            mean,
            cov: crate::linalg::symmetrize(&cov),
        }
    }

    /// Precision of the backward kernel, `Σ^{-1} + (ᾱ / υ) I`.
    pub fn backward_precision(&self, time: DiffusionTime) -> DMatrix<f64> {
        let m = self.dim();
        &self.precision + DMatrix::identity(m, m) * time.snr()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let mut z = DVector::zeros(self.dim());
        fill_standard_normal(rng, z.as_mut_slice());
        &self.mean + &self.chol * z
    }

    /// `count` draws as rows of a matrix.
    pub fn sample_rows<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(count, self.dim());
        for r in 0..count {
            let s = self.sample(rng);
            out.row_mut(r).copy_from(&s.transpose());
        }
        out
    }
}

/// An analytic task as consumed by the experiment pipeline.
#[derive(Debug, Clone)]
pub enum Task {
    Gaussian(GaussianTask),
    Gmm(GmmTask),
}

impl Task {
    pub fn dim(&self) -> usize {
        match self {
            Task::Gaussian(t) => t.dim(),
            Task::Gmm(t) => t.dim(),
        }
    }

    pub fn prior(&self) -> Prior {
        match self {
            Task::Gaussian(t) => Prior::Gaussian(t.prior().clone()),
            Task::Gmm(t) => Prior::Gaussian(GaussianDensity::standard(t.dim())),
        }
    }

    pub fn simulate<R: Rng + ?Sized>(&self, theta: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        match self {
            Task::Gaussian(t) => t.simulate(theta, rng),
            Task::Gmm(t) => t.simulate(theta, rng),
        }
    }

    pub fn posterior(&self, x: &DVector<f64>) -> PosteriorMoments {
        match self {
            Task::Gaussian(t) => t.posterior(x),
            Task::Gmm(t) => t.posterior(x),
        }
    }

    /// `∇_θ log p_t(θ_t | x)` for a single observation.
    pub fn diffused_posterior_score(
        &self,
        x: &DVector<f64>,
        theta: &DVector<f64>,
        time: DiffusionTime,
    ) -> DVector<f64> {
        match self {
            Task::Gaussian(t) => t.diffused_posterior_score(x, theta, time),
            Task::Gmm(t) => t.diffused_posterior_score(x, theta, time),
        }
    }
}
