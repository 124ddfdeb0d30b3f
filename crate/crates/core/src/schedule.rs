//! Variance-preserving diffusion schedule on a uniform time grid.
//!
//! The forward kernel is `q(θ_t | θ_0) = N(√ᾱ(t) θ_0, (1 − ᾱ(t)) I)` with a
//! linear noise rate `β(t) = β_min + t (β_max − β_min)`, so that
//! `ᾱ(t) = exp(−(β_min t + (β_max − β_min) t² / 2))`.
//!
//! Grid index `i` maps to `t_i = i / T` for `i = 1..=T`. Index `0` is the
//! clean endpoint (`ᾱ = 1`) that the last sampler transition lands on; it is
//! not part of the grid proper.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BETA_MIN: f64 = 0.1;
pub const DEFAULT_BETA_MAX: f64 = 20.0;

/// Largest terminal `ᾱ(1)` accepted for a schedule.
pub const MAX_TERMINAL_ALPHA: f64 = 1e-4;

const GRID_TOLERANCE: f64 = 1e-9;

/// The time-indexed scalars of one diffusion time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionTime {
    /// Continuous time in `[0, 1]`.
    pub t: f64,
    /// Cumulative signal scale `ᾱ(t)`.
    pub alpha: f64,
    /// Noise variance `1 − ᾱ(t)`.
    pub upsilon: f64,
}

impl DiffusionTime {
    pub fn from_alpha(t: f64, alpha: f64) -> Self {
        Self {
            t,
            alpha,
            upsilon: 1.0 - alpha,
        }
    }

    /// `ᾱ / (1 − ᾱ)`, the signal-to-noise ratio.
    pub fn snr(&self) -> f64 {
        self.alpha / self.upsilon
    }

    pub fn kernel(&self) -> ForwardKernelParams {
        ForwardKernelParams {
            mean_scale: self.alpha.sqrt(),
            noise_std: self.upsilon.sqrt(),
        }
    }
}

/// Parameters of the forward kernel at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardKernelParams {
    pub mean_scale: f64,
    pub noise_std: f64,
}

/// Noise-rate profile; serialized in experiment configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaProfile {
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for BetaProfile {
    fn default() -> Self {
        Self {
            beta_min: DEFAULT_BETA_MIN,
            beta_max: DEFAULT_BETA_MAX,
        }
    }
}

impl BetaProfile {
    /// `ᾱ(t)` for any `t ∈ [0, 1]`.
    pub fn alpha(&self, t: f64) -> f64 {
        (-(self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t)).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    steps: usize,
    profile: BetaProfile,
    // index 0 is the clean endpoint
    alpha: Vec<f64>,
    upsilon: Vec<f64>,
}

/// Build a schedule with `steps` uniform grid points.
pub fn make_schedule(steps: usize, beta_min: f64, beta_max: f64) -> Result<DiffusionSchedule> {
    DiffusionSchedule::new(steps, BetaProfile { beta_min, beta_max })
}

impl DiffusionSchedule {
    pub fn new(steps: usize, profile: BetaProfile) -> Result<Self> {
        if steps < 2 {
            return Err(Error::InvalidParameter(format!(
                "schedule needs at least 2 steps, got {steps}"
            )));
        }
        let BetaProfile { beta_min, beta_max } = profile;
        if !(beta_min > 0.0 && beta_min < beta_max && beta_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < beta_min < beta_max, got ({beta_min}, {beta_max})"
            )));
        }
        if profile.alpha(1.0) > MAX_TERMINAL_ALPHA {
            return Err(Error::InvalidParameter(format!(
                "terminal alpha {:e} exceeds {MAX_TERMINAL_ALPHA:e}; raise beta_max",
                profile.alpha(1.0)
            )));
        }
        let alpha: Vec<f64> = (0..=steps)
            .map(|i| profile.alpha(i as f64 / steps as f64))
            .collect();
        let upsilon = alpha.iter().map(|a| 1.0 - a).collect();
        Ok(Self {
            steps,
            profile,
            alpha,
            upsilon,
        })
    }

    pub fn with_defaults(steps: usize) -> Result<Self> {
        Self::new(steps, BetaProfile::default())
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn profile(&self) -> BetaProfile {
        self.profile
    }

    /// Grid times `t_1..t_T`.
    pub fn grid(&self) -> Vec<f64> {
        (1..=self.steps).map(|i| self.t(i)).collect()
    }

    pub fn t(&self, index: usize) -> f64 {
        index as f64 / self.steps as f64
    }

    pub fn alpha(&self, index: usize) -> f64 {
        self.alpha[index]
    }

    pub fn upsilon(&self, index: usize) -> f64 {
        self.upsilon[index]
    }

    /// The time scalars at grid index `index` (`0..=T`).
    pub fn time(&self, index: usize) -> DiffusionTime {
        DiffusionTime {
            t: self.t(index),
            alpha: self.alpha[index],
            upsilon: self.upsilon[index],
        }
    }

    /// Per-step signal ratio `ᾱ_i / ᾱ_{i−1}` for `i ≥ 1`.
    pub fn step_ratio(&self, index: usize) -> f64 {
        assert!(index >= 1, "step ratio is defined for grid indices >= 1");
        self.alpha[index] / self.alpha[index - 1]
    }

    /// Map a time back to its grid index.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let scaled = t * self.steps as f64;
        let index = scaled.round();
        if index < 1.0 || index > self.steps as f64 || (scaled - index).abs() > GRID_TOLERANCE {
            return Err(Error::TimeOffGrid {
                t,
                steps: self.steps,
            });
        }
        Ok(index as usize)
    }

    pub fn time_at(&self, t: f64) -> Result<DiffusionTime> {
        self.index_of(t).map(|i| self.time(i))
    }
}

/// Forward-diffuse `theta0` to grid time `t`: `√ᾱ θ_0 + √(1 − ᾱ) z`.
pub fn diffuse(
    theta0: &DVector<f64>,
    t: f64,
    noise: &DVector<f64>,
    sched: &DiffusionSchedule,
) -> Result<DVector<f64>> {
    if theta0.len() != noise.len() {
        return Err(Error::DimensionMismatch {
            expected: theta0.len(),
            got: noise.len(),
        });
    }
    let k = sched.time_at(t)?.kernel();
    Ok(theta0 * k.mean_scale + noise * k.noise_std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn terminal_alpha_matches_closed_form() {
        // exp(-(0.1 + 19.9 / 2)) evaluated independently
        let s = make_schedule(1000, 0.1, 20.0).unwrap();
        assert!((s.alpha(1000) - 4.318574906034135e-05).abs() < 1e-17);
        assert!(s.alpha(1000) <= MAX_TERMINAL_ALPHA);
    }

    #[test]
    fn two_step_grid() {
        let s = make_schedule(2, 0.1, 20.0).unwrap();
        assert_eq!(s.grid(), vec![0.5, 1.0]);
        assert!((s.alpha(1) - 0.07906381245316069).abs() < 1e-15);
    }

    #[test]
    fn clean_endpoint() {
        let s = DiffusionSchedule::with_defaults(10).unwrap();
        assert_eq!(s.alpha(0), 1.0);
        assert_eq!(s.upsilon(0), 0.0);
        let tiny = s.profile().alpha(1e-12);
        assert!((1.0 - tiny) < 1e-11);
    }

    #[test]
    fn alpha_strictly_decreasing_and_upsilon_exact() {
        let s = DiffusionSchedule::with_defaults(400).unwrap();
        for i in 1..=400 {
            assert!(s.alpha(i) < s.alpha(i - 1));
            assert!(s.alpha(i) > 0.0 && s.alpha(i) < 1.0);
            assert_eq!(s.upsilon(i), 1.0 - s.alpha(i));
            let k = s.time(i).kernel();
            assert!((k.mean_scale.powi(2) + k.noise_std.powi(2) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(make_schedule(1, 0.1, 20.0).is_err());
        assert!(make_schedule(10, 20.0, 0.1).is_err());
        assert!(make_schedule(10, 0.0, 20.0).is_err());
        // terminal marginal too far from standard normal
        assert!(make_schedule(10, 0.1, 2.0).is_err());
    }

    #[test]
    fn grid_lookup() {
        let s = DiffusionSchedule::with_defaults(50).unwrap();
        assert_eq!(s.index_of(0.02).unwrap(), 1);
        assert_eq!(s.index_of(1.0).unwrap(), 50);
        assert!(matches!(s.index_of(0.015), Err(Error::TimeOffGrid { .. })));
        assert!(s.index_of(0.0).is_err());
    }

    #[test]
    fn diffuse_examples() {
        let s = DiffusionSchedule::with_defaults(100).unwrap();
        let z = DVector::from_vec(vec![0.3, -1.2]);
        let zero = DVector::zeros(2);
        let out = diffuse(&zero, 0.5, &z, &s).unwrap();
        let u = s.time_at(0.5).unwrap().upsilon.sqrt();
        assert!((out - &z * u).norm() < 1e-15);

        let ones = DVector::from_element(2, 1.0);
        let out = diffuse(&ones, 0.5, &zero, &s).unwrap();
        let a = s.time_at(0.5).unwrap().alpha.sqrt();
        assert!((out[0] - a).abs() < 1e-15);

        assert!(diffuse(&ones, 0.505, &zero, &s).is_err());
    }

    #[test]
    fn deterministic_scale_quarter_alpha() {
        let t = DiffusionTime::from_alpha(0.3, 0.25);
        let k = t.kernel();
        let theta = DVector::from_element(2, 1.0);
        let out = &theta * k.mean_scale;
        assert_eq!(out, DVector::from_element(2, 0.5));
    }

    #[test]
    fn empirical_moments_of_diffuse() {
        let s = DiffusionSchedule::with_defaults(20).unwrap();
        let theta0 = DVector::from_vec(vec![1.5, -0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        for &t in &[0.1, 0.5, 1.0] {
            let time = s.time_at(t).unwrap();
            let mut sum = DVector::zeros(2);
            let mut sq = DVector::zeros(2);
            for _ in 0..n {
                let z = DVector::from_fn(2, |_, _| StandardNormal.sample(&mut rng));
                let x = diffuse(&theta0, t, &z, &s).unwrap();
                sq += x.component_mul(&x);
                sum += x;
            }
            let mean = &sum / n as f64;
            let var = &sq / n as f64 - mean.component_mul(&mean);
            for d in 0..2 {
                let se = (time.upsilon / n as f64).sqrt();
                assert!((mean[d] - time.alpha.sqrt() * theta0[d]).abs() < 3.0 * se);
                // variance estimate standard error ≈ υ √(2/n)
                assert!((var[d] - time.upsilon).abs() < 3.0 * time.upsilon * (2.0 / n as f64).sqrt());
            }
        }
    }

    #[test]
    fn variance_preservation_from_standard_normal() {
        let s = DiffusionSchedule::with_defaults(20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        for &t in &[0.05, 0.5, 1.0] {
            let mut sq = 0.0;
            for _ in 0..n {
                let th: f64 = StandardNormal.sample(&mut rng);
                let z: f64 = StandardNormal.sample(&mut rng);
                let x = diffuse(&DVector::from_element(1, th), t, &DVector::from_element(1, z), &s)
                    .unwrap()[0];
                sq += x * x;
            }
            assert!((sq / n as f64 - 1.0).abs() < 3.0 * (2.0 / n as f64).sqrt());
        }
    }
}
