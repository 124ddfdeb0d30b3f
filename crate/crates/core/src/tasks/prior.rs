use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::GaussianDensity;
use crate::error::{Error, Result};
use crate::schedule::DiffusionTime;

/// Diffused Uniform scores are clamped to `UNIFORM_SCORE_CLAMP / √υ` in magnitude.
pub const UNIFORM_SCORE_CLAMP: f64 = 10.0;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const FLOOR: f64 = 1e-6;

/// Prior families with analytic diffused scores.
///
/// Every method works in *sampling space*: the identity for Gaussian and
/// Uniform priors, `φ = ln θ` for the Log-Normal prior.
#[derive(Debug, Clone)]
pub enum Prior {
    Gaussian(GaussianDensity),
    Uniform { low: DVector<f64>, high: DVector<f64> },
    /// Normal law of `ln θ`.
    LogNormal(GaussianDensity),
}

impl Prior {
    pub fn standard(m: usize) -> Self {
        Prior::Gaussian(GaussianDensity::standard(m))
    }

    pub fn uniform(low: DVector<f64>, high: DVector<f64>) -> Result<Self> {
        if low.len() != high.len() {
            return Err(Error::DimensionMismatch {
                expected: low.len(),
                got: high.len(),
            });
        }
        if low.iter().zip(high.iter()).any(|(a, b)| !(a < b)) {
            return Err(Error::InvalidParameter("uniform bounds must satisfy low < high".into()));
        }
        Ok(Prior::Uniform { low, high })
    }

    pub fn log_normal(mu: DVector<f64>, sigma: DVector<f64>) -> Result<Self> {
        if sigma.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidParameter("log-normal sigma must be positive".into()));
        }
        let cov = DMatrix::from_diagonal(&sigma.map(|s| s * s));
        Ok(Prior::LogNormal(GaussianDensity::new(mu, cov, "log-normal covariance")?))
    }

    pub fn dim(&self) -> usize {
        match self {
            Prior::Gaussian(g) | Prior::LogNormal(g) => g.dim(),
            Prior::Uniform { low, .. } => low.len(),
        }
    }

    pub fn to_sampling_space(&self, theta: &DVector<f64>) -> DVector<f64> {
        match self {
            Prior::LogNormal(_) => theta.map(f64::ln),
            _ => theta.clone(),
        }
    }

    pub fn from_sampling_space(&self, phi: &DVector<f64>) -> DVector<f64> {
        match self {
            Prior::LogNormal(_) => phi.map(f64::exp),
            _ => phi.clone(),
        }
    }

    pub fn log_density(&self, theta: &DVector<f64>) -> f64 {
        match self {
            Prior::Gaussian(g) | Prior::LogNormal(g) => g.log_density(theta),
            Prior::Uniform { low, high } => {
                let inside = theta
                    .iter()
                    .zip(low.iter().zip(high.iter()))
                    .all(|(v, (a, b))| a <= v && v <= b);
                if inside {
                    -low.iter().zip(high.iter()).map(|(a, b)| (b - a).ln()).sum::<f64>()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    /// Undiffused score `∇ log λ(θ)`; zero inside a Uniform box.
    pub fn score(&self, theta: &DVector<f64>) -> DVector<f64> {
        match self {
            Prior::Gaussian(g) | Prior::LogNormal(g) => g.score(theta),
            Prior::Uniform { .. } => DVector::zeros(theta.len()),
        }
    }

    pub fn score_batch(&self, theta: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Prior::Gaussian(g) | Prior::LogNormal(g) => {
                let mut out = g.precision() * theta;
                let shift = g.precision() * g.mean();
                for mut col in out.column_iter_mut() {
                    col -= &shift;
                    col.neg_mut();
                }
                out
            }
            Prior::Uniform { .. } => DMatrix::zeros(theta.nrows(), theta.ncols()),
        }
    }

    /// `∇ log λ_t(θ_t)` of the prior pushed through the forward kernel.
    pub fn diffused_score(&self, theta: &DVector<f64>, time: DiffusionTime) -> Result<DVector<f64>> {
        match self {
            Prior::Gaussian(g) | Prior::LogNormal(g) => Ok(g.diffused_score(theta, time)),
            Prior::Uniform { low, high } => {
                let mut out = DVector::zeros(theta.len());
                for i in 0..theta.len() {
                    out[i] = uniform_coordinate_score(theta[i], low[i], high[i], time)?;
                }
                Ok(out)
            }
        }
    }

    /// Column-wise diffused scores. Underflowing Uniform coordinates are
    /// clamped rather than reported.
    pub fn diffused_score_batch(&self, theta: &DMatrix<f64>, time: DiffusionTime) -> DMatrix<f64> {
        match self {
            Prior::Gaussian(g) | Prior::LogNormal(g) => g.diffused(time).score_batch(theta),
            Prior::Uniform { low, high } => {
                let clamp = UNIFORM_SCORE_CLAMP / time.upsilon.sqrt();
                DMatrix::from_fn(theta.nrows(), theta.ncols(), |i, c| {
                    let v = theta[(i, c)];
                    uniform_coordinate_score(v, low[i], high[i], time)
                        .unwrap_or(if v > 0.0 { -clamp } else { clamp })
                })
            }
        }
    }

    /// Whether `backward_precision` ignores its `theta` argument.
    pub fn has_constant_backward_precision(&self) -> bool {
        !matches!(self, Prior::Uniform { .. })
    }

    /// Precision of the prior backward kernel at `θ_t`.
    ///
    /// Gaussian priors use `Σ_λ^{-1} + (ᾱ/υ) I`. Uniform priors use the
    /// Tweedie form `(ᾱ/υ)(I + υ J)^{-1}` with a finite-difference diagonal
    /// Jacobian, floored so the result stays SPD.
    pub fn backward_precision(&self, theta: &DVector<f64>, time: DiffusionTime) -> DMatrix<f64> {
        match self {
            Prior::Gaussian(g) | Prior::LogNormal(g) => g.backward_precision(time),
            Prior::Uniform { low, high } => {
                let m = theta.len();
                let mut out = DMatrix::zeros(m, m);
                let clamp = UNIFORM_SCORE_CLAMP / time.upsilon.sqrt();
                let clamped = |v: f64, i: usize| {
                    uniform_coordinate_score(v, low[i], high[i], time)
                        .unwrap_or(if v > 0.0 { -clamp } else { clamp })
                };
                for i in 0..m {
                    let h = 1e-4 * (1.0 + theta[i].abs()) * time.upsilon.sqrt().max(1e-3);
                    let jac = (clamped(theta[i] + h, i) - clamped(theta[i] - h, i)) / (2.0 * h);
                    let inner = (1.0 + time.upsilon * jac).max(FLOOR);
                    out[(i, i)] = time.snr() / inner;
                }
                out
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        match self {
            Prior::Gaussian(g) | Prior::LogNormal(g) => g.sample(rng),
            Prior::Uniform { low, high } => DVector::from_fn(low.len(), |i, _| rng.random_range(low[i]..high[i])),
        }
    }

    /// Affine map to zero mean and unit marginal variance under the prior.
    pub fn standardizer(&self) -> Standardizer {
        match self {
            Prior::Gaussian(g) | Prior::LogNormal(g) => Standardizer {
                shift: g.mean().clone(),
                scale: g.cov().diagonal().map(f64::sqrt),
            },
            Prior::Uniform { low, high } => Standardizer {
                shift: (low + high) * 0.5,
                scale: (high - low) / 12f64.sqrt(),
            },
        }
    }

    /// This prior expressed in standardized coordinates.
    pub fn standardized(&self, s: &Standardizer) -> Result<Prior> {
        Ok(match self {
            Prior::Gaussian(g) => Prior::Gaussian(s.density(g)?),
            Prior::LogNormal(g) => Prior::LogNormal(s.density(g)?),
            Prior::Uniform { low, high } => Prior::Uniform {
                low: s.forward(low),
                high: s.forward(high),
            },
        })
    }
}

/// `θ_std = (θ − shift) / scale`, coordinatewise.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub shift: DVector<f64>,
    pub scale: DVector<f64>,
}

impl Standardizer {
    pub fn identity(m: usize) -> Self {
        Self {
            shift: DVector::zeros(m),
            scale: DVector::from_element(m, 1.0),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.shift.iter().all(|v| *v == 0.0) && self.scale.iter().all(|v| *v == 1.0)
    }

    pub fn forward(&self, theta: &DVector<f64>) -> DVector<f64> {
        (theta - &self.shift).component_div(&self.scale)
    }

    pub fn inverse(&self, z: &DVector<f64>) -> DVector<f64> {
        z.component_mul(&self.scale) + &self.shift
    }

    /// Maps row-stored draws back to the original coordinates.
    pub fn inverse_rows(&self, rows: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = rows.clone();
        for mut row in out.row_iter_mut() {
            for (i, v) in row.iter_mut().enumerate() {
                *v = *v * self.scale[i] + self.shift[i];
            }
        }
        out
    }

    /// `D^{-1} Σ D^{-1}` for `D = diag(scale)`.
    pub fn covariance(&self, cov: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(cov.nrows(), cov.ncols(), |i, j| {
            cov[(i, j)] / (self.scale[i] * self.scale[j])
        })
    }

    pub fn density(&self, g: &GaussianDensity) -> Result<GaussianDensity> {
        GaussianDensity::new(self.forward(g.mean()), self.covariance(g.cov()), "standardized covariance")
    }
}

/// `ln Φ(u)` without underflow in either tail.
pub(crate) fn log_ndtr(u: f64) -> f64 {
    if u > 6.0 {
        -0.5 * libm::erfc(u / std::f64::consts::SQRT_2)
    } else if u > 0.0 {
        (-0.5 * libm::erfc(u / std::f64::consts::SQRT_2)).ln_1p()
    } else if u > -37.0 {
        (0.5 * libm::erfc(-u / std::f64::consts::SQRT_2)).ln()
    } else {
        let u2 = u * u;
        -0.5 * u2 - (-u).ln() - LN_SQRT_2PI + (1.0 - 1.0 / u2 + 3.0 / (u2 * u2)).ln()
    }
}

fn log_npdf(u: f64) -> f64 {
    -0.5 * u * u - LN_SQRT_2PI
}

/// `ln(e^a − e^b)` for `a ≥ b`.
fn log_diff_exp(a: f64, b: f64) -> f64 {
    a + (-(b - a).exp_m1()).ln()
}

/// `d/dθ ln[Φ((√ᾱ b − θ)/√υ) − Φ((√ᾱ a − θ)/√υ)]`, clamped.
fn uniform_coordinate_score(theta: f64, a: f64, b: f64, time: DiffusionTime) -> Result<f64> {
    let su = time.upsilon.sqrt();
    let sa = time.alpha.sqrt();
    let ua = (sa * a - theta) / su;
    let ub = (sa * b - theta) / su;
    let log_mass = if ua >= 0.0 {
        log_diff_exp(log_ndtr(-ua), log_ndtr(-ub))
    } else if ub <= 0.0 {
        log_diff_exp(log_ndtr(ub), log_ndtr(ua))
    } else {
        let inv = std::f64::consts::FRAC_1_SQRT_2;
        (0.5 * (libm::erf(ub * inv) - libm::erf(ua * inv))).ln()
    };
    if !log_mass.is_finite() {
        return Err(Error::NumericalUnderflow(format!(
            "uniform prior mass vanishes at theta={theta}, t={}",
            time.t
        )));
    }
    let score = ((log_npdf(ua) - log_mass).exp() - (log_npdf(ub) - log_mass).exp()) / su;
    let clamp = UNIFORM_SCORE_CLAMP / su;
    Ok(score.clamp(-clamp, clamp))
}
