//! Conditional score fields `s(θ_t, x, t)` and the controlled noise wrapper.
//!
//! Fields are evaluated on batches: every column of `theta` is one chain.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{eigen_floor, symmetrize};
use crate::rng::aux_rng;
use crate::samplers::{ddim_sample, DdimConfig, SingleObservation};
use crate::schedule::{BetaProfile, DiffusionSchedule, DiffusionTime};
use crate::tasks::{GaussianDensity, GaussianTask, GmmTask};

/// Hidden width of the perturbation network.
pub const PERTURBER_WIDTH: usize = 16;

pub trait ScoreField: Send + Sync {
    fn dim(&self) -> usize;

    /// Scores of every column of `theta` given observation `x`.
    fn eval(&self, theta: &DMatrix<f64>, x: &DVector<f64>, time: DiffusionTime) -> DMatrix<f64>;

    /// Calls `visit(j, scores_j)` for every observation. Implementations may
    /// share work across observations.
    fn eval_each(
        &self,
        theta: &DMatrix<f64>,
        xs: &[DVector<f64>],
        time: DiffusionTime,
        visit: &mut dyn FnMut(usize, DMatrix<f64>),
    ) {
        for (j, x) in xs.iter().enumerate() {
            visit(j, self.eval(theta, x, time));
        }
    }

    fn has_jacobian(&self) -> bool {
        false
    }

    /// True when the Jacobian does not depend on `θ_t`.
    fn jacobian_is_constant(&self) -> bool {
        false
    }

    /// Writes one row-major `m × m` Jacobian per column of `theta` into `out`.
    /// Returns `false` when the field has no Jacobian.
    fn jacobian_batch(&self, _theta: &DMatrix<f64>, _x: &DVector<f64>, _time: DiffusionTime, _out: &mut [f64]) -> bool {
        false
    }

    /// Known covariance of the clean posterior `p(θ | x)`, if any.
    fn denoiser_cov0(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
}

pub fn eval_one<F: ScoreField + ?Sized>(field: &F, theta: &DVector<f64>, x: &DVector<f64>, time: DiffusionTime) -> DVector<f64> {
    let m = DMatrix::from_column_slice(theta.len(), 1, theta.as_slice());
    field.eval(&m, x, time).column(0).into_owned()
}

/// Analytic Jacobian at a single point, if the field provides one.
pub fn jacobian<F: ScoreField + ?Sized>(
    field: &F,
    theta: &DVector<f64>,
    x: &DVector<f64>,
    time: DiffusionTime,
) -> Option<DMatrix<f64>> {
    let m = theta.len();
    let mut out = vec![0.0; m * m];
    let col = DMatrix::from_column_slice(m, 1, theta.as_slice());
    field
        .jacobian_batch(&col, x, time, &mut out)
        .then(|| DMatrix::from_row_slice(m, m, &out))
}

/// Default finite-difference step `1e-4 (1 + |θ|_∞)`.
pub fn default_fd_step(theta: &DVector<f64>) -> f64 {
    1e-4 * (1.0 + theta.amax())
}

/// Central-difference Jacobian, symmetrized.
pub fn jacobian_fd<F: ScoreField + ?Sized>(
    field: &F,
    theta: &DVector<f64>,
    x: &DVector<f64>,
    time: DiffusionTime,
    h: f64,
) -> DMatrix<f64> {
    let m = theta.len();
    let mut probes = DMatrix::zeros(m, 2 * m);
    for k in 0..m {
        let mut plus = probes.column_mut(2 * k);
        plus.copy_from(theta);
        plus[k] += h;
        let mut minus = probes.column_mut(2 * k + 1);
        minus.copy_from(theta);
        minus[k] -= h;
    }
    let s = field.eval(&probes, x, time);
    let jac = DMatrix::from_fn(m, m, |i, k| (s[(i, 2 * k)] - s[(i, 2 * k + 1)]) / (2.0 * h));
    symmetrize(&jac)
}

/// Exact diffused score of a Gaussian task posterior.
#[derive(Debug, Clone)]
pub struct GaussianPosteriorScore {
    task: GaussianTask,
    diffused_cov: GaussianDensity,
}

impl GaussianPosteriorScore {
    pub fn new(task: GaussianTask) -> Self {
        let m = task.dim();
        let diffused_cov = GaussianDensity::new(DVector::zeros(m), task.posterior_cov().clone(), "posterior covariance")
            .expect("posterior covariance is SPD");
        Self { task, diffused_cov }
    }

    pub fn task(&self) -> &GaussianTask {
        &self.task
    }

    fn precision(&self, time: DiffusionTime) -> DMatrix<f64> {
        self.diffused_cov.diffused(time).precision
    }

    fn shift(&self, precision: &DMatrix<f64>, x: &DVector<f64>, time: DiffusionTime) -> DVector<f64> {
        precision * self.task.posterior_mean(x) * time.alpha.sqrt()
    }
}

fn add_column(out: &mut DMatrix<f64>, v: &DVector<f64>) {
    for mut col in out.column_iter_mut() {
        col += v;
    }
}

impl ScoreField for GaussianPosteriorScore {
    fn dim(&self) -> usize {
        self.task.dim()
    }

    fn eval(&self, theta: &DMatrix<f64>, x: &DVector<f64>, time: DiffusionTime) -> DMatrix<f64> {
        let p = self.precision(time);
        let mut out = -(&p * theta);
        add_column(&mut out, &self.shift(&p, x, time));
        out
    }

    fn eval_each(
        &self,
        theta: &DMatrix<f64>,
        xs: &[DVector<f64>],
        time: DiffusionTime,
        visit: &mut dyn FnMut(usize, DMatrix<f64>),
    ) {
        let p = self.precision(time);
        let base = -(&p * theta);
        for (j, x) in xs.iter().enumerate() {
            let mut out = base.clone();
            add_column(&mut out, &self.shift(&p, x, time));
            visit(j, out);
        }
    }

    fn has_jacobian(&self) -> bool {
        true
    }

    fn jacobian_is_constant(&self) -> bool {
        true
    }

    fn jacobian_batch(&self, theta: &DMatrix<f64>, _x: &DVector<f64>, time: DiffusionTime, out: &mut [f64]) -> bool {
        let m = self.dim();
        let p = self.precision(time);
        for c in 0..theta.ncols() {
            let block = &mut out[c * m * m..(c + 1) * m * m];
            for i in 0..m {
                for k in 0..m {
                    block[i * m + k] = -p[(i, k)];
                }
            }
        }
        true
    }

    fn denoiser_cov0(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.task.posterior_cov().clone())
    }
}

/// Exact diffused score of a GMM task posterior.
#[derive(Debug, Clone)]
pub struct GmmPosteriorScore {
    task: GmmTask,
}

impl GmmPosteriorScore {
    pub fn new(task: GmmTask) -> Self {
        Self { task }
    }

    pub fn task(&self) -> &GmmTask {
        &self.task
    }
}

impl ScoreField for GmmPosteriorScore {
    fn dim(&self) -> usize {
        self.task.dim()
    }

    fn eval(&self, theta: &DMatrix<f64>, x: &DVector<f64>, time: DiffusionTime) -> DMatrix<f64> {
        let mix = self.task.diffused_posterior(x, time);
        let mut out = DMatrix::zeros(theta.nrows(), theta.ncols());
        for (src, dst) in theta.column_iter().zip(out.column_iter_mut()) {
            let mut dst = dst;
            mix.score_into(src.as_slice(), dst.as_mut_slice());
        }
        out
    }

    fn has_jacobian(&self) -> bool {
        true
    }

    fn jacobian_batch(&self, theta: &DMatrix<f64>, x: &DVector<f64>, time: DiffusionTime, out: &mut [f64]) -> bool {
        let m = self.dim();
        let mix = self.task.diffused_posterior(x, time);
        for (c, col) in theta.column_iter().enumerate() {
            mix.jacobian_into(col.as_slice(), &mut out[c * m * m..(c + 1) * m * m]);
        }
        true
    }
}

/// Score of a fixed Gaussian marginal pushed through the forward kernel,
/// ignoring the observation.
#[derive(Debug, Clone)]
pub struct MarginalScore {
    density: GaussianDensity,
}

impl MarginalScore {
    pub fn new(density: GaussianDensity) -> Self {
        Self { density }
    }

    pub fn standard(m: usize) -> Self {
        Self::new(GaussianDensity::standard(m))
    }
}

impl ScoreField for MarginalScore {
    fn dim(&self) -> usize {
        self.density.dim()
    }

    fn eval(&self, theta: &DMatrix<f64>, _x: &DVector<f64>, time: DiffusionTime) -> DMatrix<f64> {
        self.density.diffused(time).score_batch(theta)
    }

    fn has_jacobian(&self) -> bool {
        true
    }

    fn jacobian_is_constant(&self) -> bool {
        true
    }

    fn jacobian_batch(&self, theta: &DMatrix<f64>, _x: &DVector<f64>, time: DiffusionTime, out: &mut [f64]) -> bool {
        let m = self.dim();
        let p = self.density.diffused(time).precision;
        for c in 0..theta.ncols() {
            for i in 0..m {
                for k in 0..m {
                    out[c * m * m + i * m + k] = -p[(i, k)];
                }
            }
        }
        true
    }

    fn denoiser_cov0(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.density.cov().clone())
    }
}

/// Smooth bounded activation `u / √(1 + u²)`, with range `(−1, 1)`.
#[inline]
fn squash(u: f64) -> f64 {
    u / (1.0 + u * u).sqrt()
}

#[inline]
fn squash_prime(u: f64) -> f64 {
    let q = 1.0 + u * u;
    1.0 / (q * q.sqrt())
}

/// Fixed random network `r(θ_t, x, ᾱ_t) ∈ (−1, 1)^m` with two hidden layers.
#[derive(Debug, Clone)]
pub struct Perturber {
    m: usize,
    d: usize,
    // first layer split into θ, x and ᾱ blocks
    w_theta: DMatrix<f64>,
    w_x: DMatrix<f64>,
    w_alpha: DVector<f64>,
    b1: DVector<f64>,
    w2: DMatrix<f64>,
    b2: DVector<f64>,
    w3: DMatrix<f64>,
    b3: DVector<f64>,
}

impl Perturber {
    pub fn new(m: usize, d: usize, seed: u64) -> Self {
        let k = PERTURBER_WIDTH;
        let mut rng = aux_rng(seed, 0x7065_7274);
        let mut draw = |rows: usize, cols: usize, fan_in: usize| {
            let scale = 1.0 / (fan_in as f64).sqrt();
            DMatrix::from_fn(rows, cols, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
        };
        let fan1 = m + d + 1;
        let w_theta = draw(k, m, fan1);
        let w_x = draw(k, d, fan1);
        let w_alpha = draw(k, 1, fan1).column(0).into_owned();
        let b1 = draw(k, 1, fan1).column(0).into_owned();
        let w2 = draw(k, k, k);
        let b2 = draw(k, 1, k).column(0).into_owned();
        let w3 = draw(m, k, k);
        let b3 = draw(m, 1, k).column(0).into_owned();
        Self {
            m,
            d,
            w_theta,
            w_x,
            w_alpha,
            b1,
            w2,
            b2,
            w3,
            b3,
        }
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn obs_dim(&self) -> usize {
        self.d
    }

    /// First-layer contribution of `θ_t`, shared across observations.
    pub fn project(&self, theta: &DMatrix<f64>) -> DMatrix<f64> {
        &self.w_theta * theta
    }

    fn first_bias(&self, x: &DVector<f64>, alpha: f64) -> DVector<f64> {
        &self.w_x * x + &self.w_alpha * alpha + &self.b1
    }

    pub fn eval_projected(&self, projected: &DMatrix<f64>, x: &DVector<f64>, alpha: f64) -> DMatrix<f64> {
        let bias = self.first_bias(x, alpha);
        let mut h1 = projected.clone();
        for mut col in h1.column_iter_mut() {
            col += &bias;
            col.apply(|v| *v = squash(*v));
        }
        let mut h2 = &self.w2 * h1;
        for mut col in h2.column_iter_mut() {
            col += &self.b2;
            col.apply(|v| *v = squash(*v));
        }
        let mut out = &self.w3 * h2;
        for mut col in out.column_iter_mut() {
            col += &self.b3;
            col.apply(|v| *v = squash(*v));
        }
        out
    }

    pub fn eval(&self, theta: &DMatrix<f64>, x: &DVector<f64>, alpha: f64) -> DMatrix<f64> {
        self.eval_projected(&self.project(theta), x, alpha)
    }

    /// Row-major `∂r/∂θ_t` at one point.
    pub fn jacobian_into(&self, theta: &[f64], bias: &DVector<f64>, out: &mut [f64]) {
        let (m, k) = (self.m, PERTURBER_WIDTH);
        // weights are column-major, so every inner loop below is a contiguous axpy
        let (w1, w2, w3) = (self.w_theta.as_slice(), self.w2.as_slice(), self.w3.as_slice());
        let mut z1 = [0.0; PERTURBER_WIDTH];
        z1.copy_from_slice(bias.as_slice());
        for (i, &th) in theta.iter().enumerate() {
            for (z, w) in z1.iter_mut().zip(&w1[i * k..(i + 1) * k]) {
                *z += w * th;
            }
        }
        let h1 = z1.map(squash);
        let mut z2 = [0.0; PERTURBER_WIDTH];
        z2.copy_from_slice(self.b2.as_slice());
        for (b, &h) in h1.iter().enumerate() {
            for (z, w) in z2.iter_mut().zip(&w2[b * k..(b + 1) * k]) {
                *z += w * h;
            }
        }
        let d2 = z2.map(squash_prime);
        let h2 = z2.map(squash);
        let mut z3 = self.b3.clone_owned();
        for (b, &h) in h2.iter().enumerate() {
            for (z, w) in z3.iter_mut().zip(&w3[b * m..(b + 1) * m]) {
                *z += w * h;
            }
        }
        let d3 = z3.map(squash_prime);
        let d1 = z1.map(squash_prime);
        // column i of diag(d2) W2 diag(d1) W_θ, then of W3 times it
        let mut g1 = [0.0; PERTURBER_WIDTH];
        let mut g2 = [0.0; PERTURBER_WIDTH];
        let mut col = vec![0.0; m];
        for i in 0..m {
            for (a, g) in g1.iter_mut().enumerate() {
                *g = d1[a] * w1[a + i * k];
            }
            g2.fill(0.0);
            for (b, &c) in g1.iter().enumerate() {
                for (g, w) in g2.iter_mut().zip(&w2[b * k..(b + 1) * k]) {
                    *g += w * c;
                }
            }
            col.fill(0.0);
            for (b, (&c, &d)) in g2.iter().zip(&d2).enumerate() {
                let c = c * d;
                for (o, w) in col.iter_mut().zip(&w3[b * m..(b + 1) * m]) {
                    *o += w * c;
                }
            }
            for r in 0..m {
                out[r * m + i] = d3[r] * col[r];
            }
        }
    }
}

/// Noise level and network of the controlled perturbation
/// `s̃ = s + ε √υ_t r(θ_t, x, ᾱ_t)`.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    pub epsilon: f64,
    pub perturber: Arc<Perturber>,
}

impl NoiseModel {
    pub fn new(epsilon: f64, perturber: Arc<Perturber>) -> Result<Self> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidParameter(format!("noise level {epsilon} must be >= 0")));
        }
        Ok(Self { epsilon, perturber })
    }
}

#[derive(Debug, Clone)]
pub struct PerturbedField<F> {
    base: F,
    noise: NoiseModel,
}

pub fn perturb<F: ScoreField>(base: F, noise: NoiseModel) -> Result<PerturbedField<F>> {
    if noise.perturber.dim() != base.dim() {
        return Err(Error::DimensionMismatch {
            expected: base.dim(),
            got: noise.perturber.dim(),
        });
    }
    Ok(PerturbedField { base, noise })
}

impl<F: ScoreField> PerturbedField<F> {
    pub fn base(&self) -> &F {
        &self.base
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    fn amplitude(&self, time: DiffusionTime) -> f64 {
        self.noise.epsilon * time.upsilon.sqrt()
    }
}

impl<F: ScoreField> ScoreField for PerturbedField<F> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn eval(&self, theta: &DMatrix<f64>, x: &DVector<f64>, time: DiffusionTime) -> DMatrix<f64> {
        let mut out = self.base.eval(theta, x, time);
        if self.noise.epsilon != 0.0 {
            out += self.noise.perturber.eval(theta, x, time.alpha) * self.amplitude(time);
        }
        out
    }

    fn eval_each(
        &self,
        theta: &DMatrix<f64>,
        xs: &[DVector<f64>],
        time: DiffusionTime,
        visit: &mut dyn FnMut(usize, DMatrix<f64>),
    ) {
        if self.noise.epsilon == 0.0 {
            return self.base.eval_each(theta, xs, time, visit);
        }
        let projected = self.noise.perturber.project(theta);
        let amp = self.amplitude(time);
        self.base.eval_each(theta, xs, time, &mut |j, mut s| {
            s += self.noise.perturber.eval_projected(&projected, &xs[j], time.alpha) * amp;
            visit(j, s)
        });
    }

    fn has_jacobian(&self) -> bool {
        self.base.has_jacobian()
    }

    fn jacobian_is_constant(&self) -> bool {
        self.noise.epsilon == 0.0 && self.base.jacobian_is_constant()
    }

    fn jacobian_batch(&self, theta: &DMatrix<f64>, x: &DVector<f64>, time: DiffusionTime, out: &mut [f64]) -> bool {
        if !self.base.jacobian_batch(theta, x, time, out) {
            return false;
        }
        if self.noise.epsilon == 0.0 {
            return true;
        }
        let m = self.dim();
        let amp = self.amplitude(time);
        let bias = self.noise.perturber.first_bias(x, time.alpha);
        let mut jr = vec![0.0; m * m];
        for (c, col) in theta.column_iter().enumerate() {
            self.noise.perturber.jacobian_into(col.as_slice(), &bias, &mut jr);
            for (o, v) in out[c * m * m..(c + 1) * m * m].iter_mut().zip(&jr) {
                *o += amp * v;
            }
        }
        true
    }

    fn denoiser_cov0(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        (self.noise.epsilon == 0.0).then(|| self.base.denoiser_cov0(x)).flatten()
    }
}

impl<T: ScoreField + ?Sized> ScoreField for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, theta: &DMatrix<f64>, x: &DVector<f64>, time: DiffusionTime) -> DMatrix<f64> {
        (**self).eval(theta, x, time)
    }
    fn eval_each(
        &self,
        theta: &DMatrix<f64>,
        xs: &[DVector<f64>],
        time: DiffusionTime,
        visit: &mut dyn FnMut(usize, DMatrix<f64>),
    ) {
        (**self).eval_each(theta, xs, time, visit)
    }
    fn has_jacobian(&self) -> bool {
        (**self).has_jacobian()
    }
    fn jacobian_is_constant(&self) -> bool {
        (**self).jacobian_is_constant()
    }
    fn jacobian_batch(&self, theta: &DMatrix<f64>, x: &DVector<f64>, time: DiffusionTime, out: &mut [f64]) -> bool {
        (**self).jacobian_batch(theta, x, time, out)
    }
    fn denoiser_cov0(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        (**self).denoiser_cov0(x)
    }
}

/// Empirical covariance of rows, with divisor `N − 1`.
pub fn empirical_cov(rows: &DMatrix<f64>) -> DMatrix<f64> {
    let n = rows.nrows();
    let mean = rows.row_mean();
    let mut centered = rows.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    centered.transpose() * centered / (n as f64 - 1.0)
}

/// Symmetrize and floor eigenvalues at `1e-6` times their mean.
pub fn regularize_cov(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = symmetrize(cov);
    let mean_eig = sym.trace() / sym.nrows() as f64;
    if !(mean_eig > 0.0) || !mean_eig.is_finite() {
        return Err(Error::DegenerateCovariance(format!("mean eigenvalue {mean_eig}")));
    }
    Ok(eigen_floor(&sym, 1e-6 * mean_eig).0)
}

/// Covariance of `n_est` DDIM draws from the single-observation posterior.
pub fn estimate_denoiser_cov<F: ScoreField + ?Sized>(
    field: &F,
    x: &DVector<f64>,
    profile: BetaProfile,
    t_est: usize,
    n_est: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let m = field.dim();
    if n_est < m + 1 {
        return Err(Error::InvalidParameter(format!(
            "need at least {} chains to estimate a {m}-dimensional covariance, got {n_est}",
            m + 1
        )));
    }
    let sched = DiffusionSchedule::new(t_est, profile)?;
    let single = SingleObservation::new(field, x);
    let draws = ddim_sample(&single, &sched, &DdimConfig::for_steps(t_est), n_est, seed)?;
    if draws.draws.nrows() < m + 1 {
        return Err(Error::DegenerateCovariance(format!(
            "only {} finite draws remain",
            draws.draws.nrows()
        )));
    }
    let cov = empirical_cov(&draws.draws);
    if cov.diagonal().iter().all(|v| *v <= 0.0) {
        return Err(Error::DegenerateCovariance("all draws identical".into()));
    }
    regularize_cov(&cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::DiffusionSchedule;

    fn noise(m: usize, eps: f64) -> NoiseModel {
        NoiseModel::new(eps, Arc::new(Perturber::new(m, m, 11))).unwrap()
    }

    #[test]
    fn zero_noise_is_bitwise_identity() {
        let task = GaussianTask::correlated(3, 0.8).unwrap();
        let base = GaussianPosteriorScore::new(task);
        let field = perturb(base.clone(), noise(3, 0.0)).unwrap();
        let sched = DiffusionSchedule::with_defaults(10).unwrap();
        let theta = DMatrix::from_fn(3, 4, |i, j| (i as f64 - j as f64) * 0.3);
        let x = DVector::from_vec(vec![0.1, 0.2, 0.3]);
        for i in 1..=10 {
            assert_eq!(field.eval(&theta, &x, sched.time(i)), base.eval(&theta, &x, sched.time(i)));
        }
    }

    #[test]
    fn perturbation_is_bounded_by_epsilon() {
        let field = perturb(MarginalScore::standard(4), noise(4, 0.1)).unwrap();
        let time = DiffusionTime::from_alpha(1.0, 0.0);
        let theta = DMatrix::from_fn(4, 50, |i, j| ((i * 7 + j * 3) as f64).sin() * 5.0);
        let x = DVector::from_element(4, 2.0);
        let delta = field.eval(&theta, &x, time) - MarginalScore::standard(4).eval(&theta, &x, time);
        assert!(delta.amax() <= 0.1);
        assert!(delta.amax() > 0.0);
    }

    #[test]
    fn perturber_is_deterministic_and_bounded() {
        let a = Perturber::new(3, 2, 5);
        let b = Perturber::new(3, 2, 5);
        let theta = DMatrix::from_fn(3, 10, |i, j| (i + j) as f64 * 10.0 - 40.0);
        let x = DVector::from_vec(vec![1.0, -3.0]);
        let ra = a.eval(&theta, &x, 0.3);
        assert_eq!(ra, b.eval(&theta, &x, 0.3));
        assert!(ra.amax() < 1.0);
        assert_ne!(ra, Perturber::new(3, 2, 6).eval(&theta, &x, 0.3));
    }

    #[test]
    fn perturber_jacobian_matches_finite_differences() {
        let p = Perturber::new(4, 4, 3);
        let x = DVector::from_vec(vec![0.5, -0.5, 1.0, 0.0]);
        let theta = [0.2, -1.0, 0.7, 1.5];
        let bias = p.first_bias(&x, 0.4);
        let mut jac = vec![0.0; 16];
        p.jacobian_into(&theta, &bias, &mut jac);
        let h = 1e-6;
        for k in 0..4 {
            let mut probes = DMatrix::from_fn(4, 2, |i, _| theta[i]);
            probes[(k, 0)] += h;
            probes[(k, 1)] -= h;
            let r = p.eval(&probes, &x, 0.4);
            for i in 0..4 {
                let fd = (r[(i, 0)] - r[(i, 1)]) / (2.0 * h);
                assert!((fd - jac[i * 4 + k]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn jacobian_fd_of_standard_marginal_is_minus_identity() {
        let field = MarginalScore::standard(3);
        let sched = DiffusionSchedule::with_defaults(10).unwrap();
        let theta = DVector::from_vec(vec![0.5, -0.2, 1.0]);
        let j = jacobian_fd(&field, &theta, &DVector::zeros(3), sched.time(4), 1e-4);
        assert!((j + DMatrix::identity(3, 3)).amax() < 1e-6);
    }

    #[test]
    fn jacobian_fd_matches_gaussian_precision() {
        let task = GaussianTask::correlated(4, 0.8).unwrap();
        let field = GaussianPosteriorScore::new(task.clone());
        let sched = DiffusionSchedule::with_defaults(50).unwrap();
        let theta = DVector::from_vec(vec![0.5, -0.2, 1.0, 0.1]);
        let x = DVector::from_element(4, 0.3);
        for i in [1, 20, 50] {
            let time = sched.time(i);
            let j = jacobian_fd(&field, &theta, &x, time, default_fd_step(&theta));
            assert_eq!(j, j.transpose());
            let expected = -task.posterior_density(&x).diffused(time).precision;
            assert!((&j - &expected).amax() < 1e-5 * expected.amax());
        }
    }

    #[test]
    fn perturbed_analytic_jacobian_matches_fd() {
        let task = GmmTask::standard(3).unwrap();
        let field = perturb(GmmPosteriorScore::new(task), noise(3, 0.1)).unwrap();
        let sched = DiffusionSchedule::with_defaults(20).unwrap();
        let theta = DVector::from_vec(vec![0.3, 0.1, -0.8]);
        let x = DVector::from_vec(vec![1.0, 0.0, -1.0]);
        for i in [1, 10, 20] {
            let time = sched.time(i);
            let analytic = symmetrize(&jacobian(&field, &theta, &x, time).unwrap());
            let fd = jacobian_fd(&field, &theta, &x, time, default_fd_step(&theta));
            assert!((&analytic - &fd).amax() < 1e-5 * (1.0 + fd.amax()));
        }
    }

    #[test]
    fn estimate_rejects_too_few_chains() {
        let field = MarginalScore::standard(3);
        let err = estimate_denoiser_cov(&field, &DVector::zeros(3), BetaProfile::default(), 50, 3, 1);
        assert!(matches!(err, Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn regularize_floors_negative_eigenvalues() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let r = regularize_cov(&c).unwrap();
        assert!(crate::linalg::min_eigenvalue(&r) > 0.0);
        assert!(regularize_cov(&DMatrix::zeros(2, 2)).is_err());
    }
}
