//! Tall-posterior scores built from per-observation scores.
//!
//! The free functions work on single points and mirror the formulas one to
//! one; [`TallComposer`] is the batched form used by the samplers.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    cholesky_in_place, cholesky_inverse_into, cholesky_solve_in_place, floored_inverse, log_det_spd, min_eigenvalue,
    spd_inverse, symmetrize,
};
use crate::samplers::{EvalCost, StepDiagnostics, TallScore};
use crate::schedule::DiffusionTime;
use crate::score::{default_fd_step, jacobian_fd, ScoreField};
use crate::tasks::{GaussianTask, Prior};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Eigenvalue floor applied to `I + υ J` when it is not positive definite.
pub const JAC_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CompositionMethod {
    Gauss,
    Jac,
    Fnpse,
    DetGef,
}

impl CompositionMethod {
    pub fn name(self) -> &'static str {
        match self {
            CompositionMethod::Gauss => "GAUSS",
            CompositionMethod::Jac => "JAC",
            CompositionMethod::Fnpse => "FNPSE",
            CompositionMethod::DetGef => "DET_GEF",
        }
    }
}

/// Per-observation and prior backward-kernel precisions with their
/// combination `Λ = Σ_j P_j + (1 − n) P_λ`.
#[derive(Debug, Clone)]
pub struct PrecisionBundle {
    pub precisions: Vec<DMatrix<f64>>,
    pub prior_precision: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    means: Option<(Vec<DVector<f64>>, DVector<f64>)>,
}

impl PrecisionBundle {
    pub fn new(precisions: Vec<DMatrix<f64>>, prior_precision: DMatrix<f64>) -> Result<Self> {
        if precisions.is_empty() {
            return Err(Error::InvalidParameter("at least one observation is required".into()));
        }
        let m = prior_precision.nrows();
        if let Some(p) = precisions.iter().find(|p| p.nrows() != m || p.ncols() != m) {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: p.nrows(),
            });
        }
        let n = precisions.len() as f64;
        let mut lambda = &prior_precision * (1.0 - n);
        for p in &precisions {
            lambda += p;
        }
        Ok(Self {
            precisions,
            prior_precision,
            lambda: symmetrize(&lambda),
            means: None,
        })
    }

    /// Attaches backward-kernel means, enabling [`log_correction`].
    pub fn with_means(mut self, means: Vec<DVector<f64>>, prior_mean: DVector<f64>) -> Result<Self> {
        if means.len() != self.precisions.len() {
            return Err(Error::DimensionMismatch {
                expected: self.precisions.len(),
                got: means.len(),
            });
        }
        self.means = Some((means, prior_mean));
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.precisions.len()
    }

    pub fn dim(&self) -> usize {
        self.lambda.nrows()
    }

    /// `η = Σ_j P_j μ_j + (1 − n) P_λ μ_λ`, when means are attached.
    pub fn eta(&self) -> Option<DVector<f64>> {
        let (means, prior_mean) = self.means.as_ref()?;
        let n = self.n() as f64;
        let mut eta = &self.prior_precision * prior_mean * (1.0 - n);
        for (p, mu) in self.precisions.iter().zip(means) {
            eta += p * mu;
        }
        Some(eta)
    }
}

/// `ζ(μ, P) = −½ (m log 2π − log|P| + μᵀ P μ)`, i.e. `log N(0; μ, P^{-1})`.
pub fn zeta(mu: &DVector<f64>, precision: &DMatrix<f64>) -> Result<f64> {
    let log_det = log_det_spd(precision, "precision")?;
    Ok(-0.5 * (mu.len() as f64 * LN_2PI - log_det + mu.dot(&(precision * mu))))
}

/// `log ∫ q_λ^{1−n} Π_j q_j dθ_0` for Gaussian factors:
/// `Σ_j ζ_j + (1 − n) ζ_λ − ζ(Λ^{-1} η, Λ)`.
pub fn log_correction(bundle: &PrecisionBundle) -> Result<f64> {
    let (means, prior_mean) = bundle
        .means
        .as_ref()
        .ok_or(Error::MissingCapability("backward-kernel means"))?;
    let (ok, min_eig) = check_lambda_spd(bundle);
    if !ok {
        return Err(Error::LambdaNotSpd { min_eigenvalue: min_eig });
    }
    if bundle.n() == 1 {
        return Ok(0.0);
    }
    let n = bundle.n() as f64;
    let mut total = (1.0 - n) * zeta(prior_mean, &bundle.prior_precision)?;
    for (p, mu) in bundle.precisions.iter().zip(means) {
        total += zeta(mu, p)?;
    }
    let eta = bundle.eta().expect("means attached");
    let chol = bundle.lambda.clone().cholesky().expect("checked SPD");
    let center = chol.solve(&eta);
    Ok(total - zeta(&center, &bundle.lambda)?)
}

/// Whether the symmetrized `Λ` is positive definite, with its minimum eigenvalue.
pub fn check_lambda_spd(bundle: &PrecisionBundle) -> (bool, f64) {
    let min = min_eigenvalue(&bundle.lambda);
    (min > 0.0, min)
}

/// Bundle for the constant-covariance rule: `P_j = Σ̂_j^{-1} + (ᾱ/υ) I`.
pub fn gauss_bundle(cov0s: &[DMatrix<f64>], prior_precision: DMatrix<f64>, time: DiffusionTime) -> Result<PrecisionBundle> {
    let snr = time.snr();
    let precisions = cov0s
        .iter()
        .map(|c| {
            let m = c.nrows();
            spd_inverse(c, "denoiser covariance").map(|p| p + DMatrix::identity(m, m) * snr)
        })
        .collect::<Result<Vec<_>>>()?;
    PrecisionBundle::new(precisions, prior_precision)
}

/// `Λ^{-1} [Σ_j P_j s_j + (1 − n) P_λ s_λ]`.
pub fn compose_gauss(scores: &[DVector<f64>], prior_score: &DVector<f64>, bundle: &PrecisionBundle) -> Result<DVector<f64>> {
    if scores.len() != bundle.n() {
        return Err(Error::DimensionMismatch {
            expected: bundle.n(),
            got: scores.len(),
        });
    }
    if scores.len() == 1 {
        return Ok(scores[0].clone());
    }
    let n = bundle.n() as f64;
    let mut rhs = &bundle.prior_precision * prior_score * (1.0 - n);
    for (p, s) in bundle.precisions.iter().zip(scores) {
        rhs += p * s;
    }
    match bundle.lambda.clone().cholesky() {
        Some(chol) => Ok(chol.solve(&rhs)),
        None => Err(Error::LambdaNotSpd {
            min_eigenvalue: min_eigenvalue(&bundle.lambda),
        }),
    }
}

/// `(ᾱ/υ) (I + υ J)^{-1}` with the eigen-floor fallback. The flag reports
/// whether the floor was needed.
pub fn jac_precision(jac: &DMatrix<f64>, time: DiffusionTime) -> (DMatrix<f64>, bool) {
    let m = jac.nrows();
    let inner = DMatrix::identity(m, m) + symmetrize(jac) * time.upsilon;
    match inner.clone().cholesky() {
        Some(chol) => (chol.inverse() * time.snr(), false),
        None => {
            let (inv, _) = floored_inverse(&inner, JAC_FLOOR);
            (inv * time.snr(), true)
        }
    }
}

/// Jacobian-based composition at a single point. The Jacobian is analytic
/// when the field offers one, finite-difference otherwise. The flag reports
/// any eigen-floor event.
pub fn compose_jac<F: ScoreField + ?Sized>(
    field: &F,
    xs: &[DVector<f64>],
    prior: &Prior,
    theta: &DVector<f64>,
    time: DiffusionTime,
) -> Result<(DVector<f64>, bool)> {
    let mut flagged = false;
    let mut scores = Vec::with_capacity(xs.len());
    let mut precisions = Vec::with_capacity(xs.len());
    for x in xs {
        scores.push(crate::score::eval_one(field, theta, x, time));
        let jac = crate::score::jacobian(field, theta, x, time)
            .unwrap_or_else(|| jacobian_fd(field, theta, x, time, default_fd_step(theta)));
        let (p, f) = jac_precision(&jac, time);
        flagged |= f;
        precisions.push(p);
    }
    let bundle = PrecisionBundle::new(precisions, prior.backward_precision(theta, time))?;
    let prior_score = prior.diffused_score(theta, time)?;
    Ok((compose_gauss(&scores, &prior_score, &bundle)?, flagged))
}

/// `Σ_j s_j + (1 − n)(1 − t) ∇ log λ(θ_t)` with the undiffused prior score.
pub fn compose_fnpse(scores: &[DVector<f64>], prior_score: &DVector<f64>, n: usize, t: f64) -> DVector<f64> {
    let mut out = prior_score * ((1.0 - n as f64) * (1.0 - t));
    for s in scores {
        out += s;
    }
    out
}

/// Reverse-step mean `(θ_t + β s) / √a` of a single-observation chain with
/// per-step ratio `a = ᾱ_t / ᾱ_{t−1}` and `β = 1 − a`.
pub fn ddpm_mean(theta: &DVector<f64>, score: &DVector<f64>, step_ratio: f64) -> DVector<f64> {
    (theta + score * (1.0 - step_ratio)) / step_ratio.sqrt()
}

/// Shared variance `β / (n − a (n − 1))` of the deterministic baseline.
pub fn det_gef_variance(n: usize, step_ratio: f64) -> f64 {
    let n = n as f64;
    (1.0 - step_ratio) / (n - step_ratio * (n - 1.0))
}

/// One reverse step of the deterministic baseline: Gaussian product of the
/// per-observation reverse kernels divided by `n − 1` forward kernels, with
/// the diffused prior score standing in for the prior factor.
pub fn compose_det_gef(
    means: &[DVector<f64>],
    theta: &DVector<f64>,
    prior_score: &DVector<f64>,
    step_ratio: f64,
) -> (DVector<f64>, f64) {
    let n = means.len();
    let beta = 1.0 - step_ratio;
    let var = det_gef_variance(n, step_ratio);
    let mut acc = -(theta * ((n as f64 - 1.0) * step_ratio.sqrt()));
    for mu in means {
        acc += mu;
    }
    let mean = (acc / beta + prior_score * (1.0 - n as f64)) * var;
    (mean, var)
}

/// Bundle built from the exact backward kernels of a Gaussian task.
pub fn gaussian_bundle(task: &GaussianTask, xs: &[DVector<f64>], theta: &DVector<f64>, time: DiffusionTime) -> Result<PrecisionBundle> {
    let mut precisions = Vec::new();
    let mut means = Vec::new();
    for x in xs {
        let bm = task.backward_moments(x, theta, time);
        precisions.push(spd_inverse(&bm.cov, "backward covariance")?);
        means.push(bm.mean);
    }
    let prior = task.prior().backward_moments(theta, time);
    PrecisionBundle::new(precisions, spd_inverse(&prior.cov, "prior backward covariance")?)?.with_means(means, prior.mean)
}

/// Batched tall score for the GAUSS, JAC and FNPSE rules.
pub struct TallComposer<'a> {
    field: &'a dyn ScoreField,
    xs: &'a [DVector<f64>],
    prior: &'a Prior,
    method: CompositionMethod,
    denoiser_precisions: Vec<DMatrix<f64>>,
}

impl<'a> TallComposer<'a> {
    /// Constant-covariance rule with one clean covariance estimate per observation.
    pub fn gauss(field: &'a dyn ScoreField, xs: &'a [DVector<f64>], prior: &'a Prior, cov0s: &[DMatrix<f64>]) -> Result<Self> {
        Self::check(field, xs, prior)?;
        if cov0s.len() != xs.len() {
            return Err(Error::DimensionMismatch {
                expected: xs.len(),
                got: cov0s.len(),
            });
        }
        let denoiser_precisions = cov0s
            .iter()
            .map(|c| spd_inverse(c, "denoiser covariance").map(|p| symmetrize(&p)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            field,
            xs,
            prior,
            method: CompositionMethod::Gauss,
            denoiser_precisions,
        })
    }

    pub fn jac(field: &'a dyn ScoreField, xs: &'a [DVector<f64>], prior: &'a Prior) -> Result<Self> {
        Self::check(field, xs, prior)?;
        Ok(Self {
            field,
            xs,
            prior,
            method: CompositionMethod::Jac,
            denoiser_precisions: Vec::new(),
        })
    }

    pub fn fnpse(field: &'a dyn ScoreField, xs: &'a [DVector<f64>], prior: &'a Prior) -> Result<Self> {
        Self::check(field, xs, prior)?;
        Ok(Self {
            field,
            xs,
            prior,
            method: CompositionMethod::Fnpse,
            denoiser_precisions: Vec::new(),
        })
    }

    fn check(field: &dyn ScoreField, xs: &[DVector<f64>], prior: &Prior) -> Result<()> {
        if xs.is_empty() {
            return Err(Error::InvalidParameter("at least one observation is required".into()));
        }
        if field.dim() != prior.dim() {
            return Err(Error::DimensionMismatch {
                expected: prior.dim(),
                got: field.dim(),
            });
        }
        Ok(())
    }

    pub fn method(&self) -> CompositionMethod {
        self.method
    }

    fn fnpse_batch(&self, theta: &DMatrix<f64>, time: DiffusionTime) -> DMatrix<f64> {
        let n = self.xs.len();
        let mut out = self.prior.score_batch(theta) * ((1.0 - n as f64) * (1.0 - time.t));
        self.field.eval_each(theta, self.xs, time, &mut |_, s| out += s);
        out
    }

    fn single(&self, theta: &DMatrix<f64>, time: DiffusionTime) -> DMatrix<f64> {
        self.field.eval(theta, &self.xs[0], time)
    }

    /// Every chain shares the per-observation precisions.
    fn shared(&self, theta: &DMatrix<f64>, time: DiffusionTime, precisions: &[DMatrix<f64>], diag: &mut StepDiagnostics) -> DMatrix<f64> {
        let n = self.xs.len();
        let m = theta.nrows();
        let sum_p = precisions.iter().fold(DMatrix::zeros(m, m), |acc, p| acc + p);
        if !self.prior.has_constant_backward_precision() {
            return self.per_chain(theta, time, PerObservation::Shared(precisions), sum_p, diag);
        }
        let p_prior = self.prior.backward_precision(&DVector::zeros(m), time);
        let lambda = symmetrize(&(&sum_p + &p_prior * (1.0 - n as f64)));
        let Some(chol) = lambda.cholesky() else {
            diag.flagged = true;
            diag.lambda_violation = true;
            return self.fnpse_batch(theta, time);
        };
        let inv = chol.inverse();
        let mut out = (&inv * &p_prior * (1.0 - n as f64)) * self.prior.diffused_score_batch(theta, time);
        let weights: Vec<DMatrix<f64>> = precisions.iter().map(|p| &inv * p).collect();
        self.field.eval_each(theta, self.xs, time, &mut |j, s| out += &weights[j] * s);
        out
    }

    fn per_chain(
        &self,
        theta: &DMatrix<f64>,
        time: DiffusionTime,
        obs: PerObservation<'_>,
        shared_sum: DMatrix<f64>,
        diag: &mut StepDiagnostics,
    ) -> DMatrix<f64> {
        let n = self.xs.len();
        let (m, chains) = theta.shape();
        let mm = m * m;
        let mut lambda = vec![0.0; chains * mm];
        let mut rhs = DMatrix::<f64>::zeros(m, chains);
        let mut sum = DMatrix::<f64>::zeros(m, chains);
        for c in 0..chains {
            lambda[c * mm..(c + 1) * mm].copy_from_slice(shared_sum.as_slice());
        }
        let mut jac = vec![0.0; chains * mm];
        let mut work = vec![0.0; mm];
        let mut inv = vec![0.0; mm];
        for (j, x) in self.xs.iter().enumerate() {
            let s = self.field.eval(theta, x, time);
            sum += &s;
            match obs {
                PerObservation::Shared(ps) => rhs += &ps[j] * &s,
                PerObservation::Jacobian => {
                    if !self.field.jacobian_batch(theta, x, time, &mut jac) {
                        for (c, col) in theta.column_iter().enumerate() {
                            let th = col.into_owned();
                            let fd = jacobian_fd(self.field, &th, x, time, default_fd_step(&th));
                            jac[c * mm..(c + 1) * mm].copy_from_slice(fd.as_slice());
                        }
                    }
                    for c in 0..chains {
                        let block = &jac[c * mm..(c + 1) * mm];
                        for a in 0..m {
                            for b in 0..m {
                                let v = 0.5 * (block[a * m + b] + block[b * m + a]) * time.upsilon;
                                work[a + b * m] = if a == b { 1.0 + v } else { v };
                            }
                        }
                        let snr = time.snr();
                        if cholesky_in_place(&mut work, m) {
                            cholesky_inverse_into(&work, m, &mut inv);
                        } else {
                            diag.flagged = true;
                            let inner = DMatrix::from_fn(m, m, |a, b| {
                                let v = 0.5 * (block[a * m + b] + block[b * m + a]) * time.upsilon;
                                if a == b {
                                    1.0 + v
                                } else {
                                    v
                                }
                            });
                            inv.copy_from_slice(floored_inverse(&inner, JAC_FLOOR).0.as_slice());
                        }
                        let lam = &mut lambda[c * mm..(c + 1) * mm];
                        let sc = s.column(c);
                        let mut r = rhs.column_mut(c);
                        for b in 0..m {
                            for a in 0..m {
                                let p = snr * inv[a + b * m];
                                lam[a + b * m] += p;
                                r[a] += p * sc[b];
                            }
                        }
                    }
                }
            }
        }
        let prior_scores = self.prior.diffused_score_batch(theta, time);
        let undiffused = self.prior.score_batch(theta);
        let weight = 1.0 - n as f64;
        let constant_prior = self
            .prior
            .has_constant_backward_precision()
            .then(|| self.prior.backward_precision(&DVector::zeros(m), time));
        let mut out = DMatrix::zeros(m, chains);
        for c in 0..chains {
            let pp = match &constant_prior {
                Some(p) => p.clone(),
                None => self.prior.backward_precision(&theta.column(c).into_owned(), time),
            };
            let lam = &mut lambda[c * mm..(c + 1) * mm];
            let mut r = rhs.column(c).into_owned() + &pp * prior_scores.column(c) * weight;
            for (l, p) in lam.iter_mut().zip(pp.as_slice()) {
                *l += weight * p;
            }
            if cholesky_in_place(lam, m) {
                cholesky_solve_in_place(lam, m, r.as_mut_slice());
                out.column_mut(c).copy_from(&r);
            } else {
                diag.flagged = true;
                diag.lambda_violation = true;
                let f = sum.column(c) + undiffused.column(c) * (weight * (1.0 - time.t));
                out.column_mut(c).copy_from(&f);
            }
        }
        out
    }
}

#[derive(Clone, Copy)]
enum PerObservation<'p> {
    Shared(&'p [DMatrix<f64>]),
    Jacobian,
}

impl TallScore for TallComposer<'_> {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn n_obs(&self) -> usize {
        self.xs.len()
    }

    fn eval(&self, theta: &DMatrix<f64>, time: DiffusionTime, diag: &mut StepDiagnostics) -> DMatrix<f64> {
        if self.xs.len() == 1 && self.method != CompositionMethod::Fnpse {
            return self.single(theta, time);
        }
        match self.method {
            CompositionMethod::Fnpse => self.fnpse_batch(theta, time),
            CompositionMethod::Gauss => {
                let m = theta.nrows();
                let snr = time.snr();
                let precisions: Vec<DMatrix<f64>> = self
                    .denoiser_precisions
                    .iter()
                    .map(|p| p + DMatrix::identity(m, m) * snr)
                    .collect();
                self.shared(theta, time, &precisions, diag)
            }
            CompositionMethod::Jac if self.field.jacobian_is_constant() => {
                let m = theta.nrows();
                let probe = theta.columns(0, 1).into_owned();
                let mut buf = vec![0.0; m * m];
                let mut precisions = Vec::with_capacity(self.xs.len());
                for x in self.xs {
                    self.field.jacobian_batch(&probe, x, time, &mut buf);
                    let (p, f) = jac_precision(&DMatrix::from_row_slice(m, m, &buf), time);
                    diag.flagged |= f;
                    precisions.push(p);
                }
                self.shared(theta, time, &precisions, diag)
            }
            CompositionMethod::Jac => {
                let m = theta.nrows();
                self.per_chain(theta, time, PerObservation::Jacobian, DMatrix::zeros(m, m), diag)
            }
            CompositionMethod::DetGef => unreachable!("the deterministic baseline has its own sampler"),
        }
    }

    fn cost(&self) -> EvalCost {
        let n = self.xs.len() as u64;
        EvalCost {
            score_evals: n,
            jacobian_evals: if self.method == CompositionMethod::Jac { n } else { 0 },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::DiffusionSchedule;
    use crate::score::GaussianPosteriorScore;

    #[test]
    fn zeta_of_unit_scalar() {
        let z = zeta(&DVector::zeros(1), &DMatrix::identity(1, 1)).unwrap();
        assert!((z + 0.918_938_533_204_672_7).abs() < 1e-15);
        let z = zeta(&DVector::zeros(3), &DMatrix::identity(3, 3)).unwrap();
        assert!((z + 1.5 * LN_2PI).abs() < 1e-14);
    }

    #[test]
    fn zeta_is_log_density_at_origin() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.5]);
        let mu = DVector::from_vec(vec![0.4, -1.2]);
        let g = crate::tasks::GaussianDensity::new(mu.clone(), spd_inverse(&p, "p").unwrap(), "c").unwrap();
        assert!((zeta(&mu, &p).unwrap() - g.log_density(&DVector::zeros(2))).abs() < 1e-12);
        assert!(zeta(&mu, &(-p)).is_err());
    }

    #[test]
    fn single_observation_correction_is_zero() {
        let b = PrecisionBundle::new(vec![DMatrix::identity(2, 2) * 3.0], DMatrix::identity(2, 2))
            .unwrap()
            .with_means(vec![DVector::from_vec(vec![1.0, 2.0])], DVector::zeros(2))
            .unwrap();
        assert_eq!(log_correction(&b).unwrap(), 0.0);
        assert!(check_lambda_spd(&b).0);
    }

    #[test]
    fn lambda_violation_is_reported() {
        let p = DMatrix::identity(2, 2);
        let b = PrecisionBundle::new(vec![p.clone(); 50], &p * 1000.0)
            .unwrap()
            .with_means(vec![DVector::zeros(2); 50], DVector::zeros(2))
            .unwrap();
        assert!(!check_lambda_spd(&b).0);
        assert!(matches!(log_correction(&b), Err(Error::LambdaNotSpd { .. })));
        assert!(compose_gauss(&vec![DVector::zeros(2); 50], &DVector::zeros(2), &b).is_err());
    }

    #[test]
    fn fnpse_terms() {
        let s = vec![DVector::from_vec(vec![1.0]), DVector::from_vec(vec![2.0]), DVector::from_vec(vec![-0.5])];
        let prior = DVector::from_vec(vec![4.0]);
        assert_eq!(compose_fnpse(&s, &prior, 3, 0.0)[0], 2.5 - 8.0);
        assert_eq!(compose_fnpse(&s, &prior, 3, 1.0)[0], 2.5);
        assert_eq!(compose_fnpse(&s[..1], &prior, 1, 0.3)[0], 1.0);
    }

    #[test]
    fn det_gef_variance_limits() {
        assert!((det_gef_variance(1, 0.9) - 0.1).abs() < 1e-15);
        let v = det_gef_variance(1000, 0.9);
        assert!((v - 0.1 / (1000.0 * 0.1 + 0.9)).abs() < 1e-15);
    }

    #[test]
    fn gauss_with_exact_covariance_is_exact() {
        let task = GaussianTask::correlated(3, 0.8).unwrap();
        let sched = DiffusionSchedule::with_defaults(100).unwrap();
        let xs: Vec<_> = (0..4).map(|k| DVector::from_fn(3, |i, _| ((i + 2 * k) as f64).cos())).collect();
        let field = GaussianPosteriorScore::new(task.clone());
        let tall = task.tall_posterior_density(&xs).unwrap();
        let prior = Prior::Gaussian(task.prior().clone());
        let covs = vec![task.posterior_cov().clone(); xs.len()];
        let theta = DVector::from_vec(vec![0.3, -0.7, 1.1]);
        for i in [1, 30, 60, 100] {
            let time = sched.time(i);
            let scores: Vec<_> = xs.iter().map(|x| task.diffused_posterior_score(x, &theta, time)).collect();
            let bundle = gauss_bundle(&covs, prior.backward_precision(&theta, time), time).unwrap();
            let ps = prior.diffused_score(&theta, time).unwrap();
            let got = compose_gauss(&scores, &ps, &bundle).unwrap();
            let want = tall.diffused_score(&theta, time);
            assert!((&got - &want).norm() < 1e-8 * want.norm().max(1.0));
            let (jac, flagged) = compose_jac(&field, &xs, &prior, &theta, time).unwrap();
            assert!(!flagged);
            assert!((&jac - &want).norm() < 1e-8 * want.norm().max(1.0));
        }
    }

    #[test]
    fn batched_composer_matches_pointwise() {
        let task = GaussianTask::correlated(2, 0.5).unwrap();
        let sched = DiffusionSchedule::with_defaults(40).unwrap();
        let xs: Vec<_> = (0..3).map(|k| DVector::from_element(2, k as f64 * 0.4)).collect();
        let field = GaussianPosteriorScore::new(task.clone());
        let prior = Prior::Gaussian(task.prior().clone());
        let covs = vec![task.posterior_cov().clone(); 3];
        let theta = DMatrix::from_fn(2, 5, |i, j| (i as f64 + 1.0) * (j as f64 - 2.0) * 0.3);
        let time = sched.time(17);
        let mut diag = StepDiagnostics::default();
        let gauss = TallComposer::gauss(&field, &xs, &prior, &covs).unwrap().eval(&theta, time, &mut diag);
        let fnpse = TallComposer::fnpse(&field, &xs, &prior).unwrap().eval(&theta, time, &mut diag);
        assert!(!diag.flagged);
        for c in 0..5 {
            let th = theta.column(c).into_owned();
            let scores: Vec<_> = xs.iter().map(|x| task.diffused_posterior_score(x, &th, time)).collect();
            let bundle = gauss_bundle(&covs, prior.backward_precision(&th, time), time).unwrap();
            let want = compose_gauss(&scores, &prior.diffused_score(&th, time).unwrap(), &bundle).unwrap();
            assert!((gauss.column(c) - &want).amax() < 1e-10);
            let want = compose_fnpse(&scores, &prior.score(&th), 3, time.t);
            assert!((fnpse.column(c) - &want).amax() < 1e-10);
        }
    }
}
