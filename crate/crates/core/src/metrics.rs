//! Distances between sample sets.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of random directions.
pub const DEFAULT_PROJECTIONS: usize = 1000;
/// Pooled points used to pick the median-heuristic bandwidth.
pub const BANDWIDTH_SUBSAMPLE: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub sw: f64,
    pub mmd: Option<f64>,
    pub n_projections: usize,
    pub seed: u64,
}

/// Uniform random unit directions, one per column.
pub fn random_projections<R: Rng + ?Sized>(m: usize, count: usize, rng: &mut R) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(m, count);
    for mut col in p.column_iter_mut() {
        loop {
            for v in col.iter_mut() {
                *v = StandardNormal.sample(rng);
            }
            let norm = col.norm();
            if norm > 1e-12 {
                col /= norm;
                break;
            }
        }
    }
    p
}

fn check_pair(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.ncols(),
            got: b.ncols(),
        });
    }
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::InvalidParameter("sample sets must be non-empty".into()));
    }
    Ok(())
}

/// Squared 1D Wasserstein-2 distance between two sorted empirical samples,
/// via the quantile coupling.
pub fn w2_squared_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    if n == m {
        return a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n as f64;
    }
    // merge the two quantile grids
    let (mut i, mut j) = (0, 0);
    let mut prev = 0.0;
    let mut total = 0.0;
    while i < n && j < m {
        let next_a = (i + 1) as f64 / n as f64;
        let next_b = (j + 1) as f64 / m as f64;
        let next = next_a.min(next_b);
        let d = a[i] - b[j];
        total += (next - prev) * d * d;
        prev = next;
        if next_a <= next {
            i += 1;
        }
        if next_b <= next {
            j += 1;
        }
    }
    total
}

/// Sliced Wasserstein-2 distance using the given directions.
pub fn sliced_wasserstein_with(a: &DMatrix<f64>, b: &DMatrix<f64>, projections: &DMatrix<f64>) -> Result<f64> {
    check_pair(a, b)?;
    if projections.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.ncols(),
            got: projections.nrows(),
        });
    }
    let pa = a * projections;
    let pb = b * projections;
    let mut total = 0.0;
    for k in 0..projections.ncols() {
        let mut xa: Vec<f64> = pa.column(k).iter().copied().collect();
        let mut xb: Vec<f64> = pb.column(k).iter().copied().collect();
        xa.sort_by(f64::total_cmp);
        xb.sort_by(f64::total_cmp);
        total += w2_squared_sorted(&xa, &xb);
    }
    Ok((total / projections.ncols() as f64).sqrt())
}

/// Sliced Wasserstein-2 distance with `n_proj` fresh random directions.
pub fn sliced_wasserstein<R: Rng + ?Sized>(a: &DMatrix<f64>, b: &DMatrix<f64>, n_proj: usize, rng: &mut R) -> Result<f64> {
    check_pair(a, b)?;
    if n_proj == 0 {
        return Err(Error::InvalidParameter("need at least one projection".into()));
    }
    let p = random_projections(a.ncols(), n_proj, rng);
    sliced_wasserstein_with(a, b, &p)
}

fn sq_dist(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    let mut d = 0.0;
    for k in 0..a.ncols() {
        let v = a[(i, k)] - b[(j, k)];
        d += v * v;
    }
    d
}

/// Median pairwise distance over (a deterministic subsample of) the pooled rows.
pub fn median_bandwidth(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let total = a.nrows() + b.nrows();
    let stride = total.div_ceil(BANDWIDTH_SUBSAMPLE).max(1);
    let pooled: Vec<(bool, usize)> = (0..total)
        .step_by(stride)
        .map(|k| if k < a.nrows() { (true, k) } else { (false, k - a.nrows()) })
        .collect();
    let get = |(in_a, r): (bool, usize)| if in_a { (a, r) } else { (b, r) };
    let mut d = Vec::with_capacity(pooled.len() * pooled.len() / 2);
    for (x, p) in pooled.iter().enumerate() {
        for q in &pooled[x + 1..] {
            let (ma, ra) = get(*p);
            let (mb, rb) = get(*q);
            d.push(sq_dist(ma, ra, mb, rb).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let med = d[d.len() / 2];
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// Unbiased MMD² with kernel `exp(−‖x − y‖² / (2 h²))`.
///
/// Equal-size sets use the U-statistic with the diagonal `k(a_i, b_i)` also
/// excluded, so identical sets give exactly zero.
pub fn mmd2_unbiased(a: &DMatrix<f64>, b: &DMatrix<f64>, bandwidth: f64) -> Result<f64> {
    check_pair(a, b)?;
    let (n, m) = (a.nrows(), b.nrows());
    if n < 2 || m < 2 {
        return Err(Error::InvalidParameter("MMD needs at least two draws per set".into()));
    }
    let g = -0.5 / (bandwidth * bandwidth);
    let k = |x: &DMatrix<f64>, i: usize, y: &DMatrix<f64>, j: usize| (g * sq_dist(x, i, y, j)).exp();
    if n == m {
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    total += k(a, i, a, j) + k(b, i, b, j) - k(a, i, b, j) - k(a, j, b, i);
                }
            }
        }
        return Ok(total / (n * (n - 1)) as f64);
    }
    let mut kaa = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            kaa += k(a, i, a, j);
        }
    }
    let mut kbb = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            kbb += k(b, i, b, j);
        }
    }
    let mut kab = 0.0;
    for i in 0..n {
        for j in 0..m {
            kab += k(a, i, b, j);
        }
    }
    Ok(2.0 * kaa / (n * (n - 1)) as f64 + 2.0 * kbb / (m * (m - 1)) as f64 - 2.0 * kab / (n * m) as f64)
}

/// `√max(MMD², 0)`; the bandwidth defaults to the median heuristic.
pub fn mmd_rbf(a: &DMatrix<f64>, b: &DMatrix<f64>, bandwidth: Option<f64>) -> Result<f64> {
    let h = bandwidth.unwrap_or_else(|| median_bandwidth(a, b));
    Ok(mmd2_unbiased(a, b, h)?.max(0.0).sqrt())
}

/// Bandwidth used by [`dirac_concentration`].
pub const DIRAC_BANDWIDTH: f64 = 1.0;

/// Per-dimension MMD between each marginal of `a` and the point mass at
/// `theta_star`, with an RBF kernel of width [`DIRAC_BANDWIDTH`].
pub fn dirac_concentration(a: &DMatrix<f64>, theta_star: &DVector<f64>) -> Result<DVector<f64>> {
    if a.ncols() != theta_star.len() {
        return Err(Error::DimensionMismatch {
            expected: a.ncols(),
            got: theta_star.len(),
        });
    }
    let n = a.nrows();
    if n < 2 {
        return Err(Error::InvalidParameter("need at least two draws".into()));
    }
    let g = -0.5 / (DIRAC_BANDWIDTH * DIRAC_BANDWIDTH);
    Ok(DVector::from_fn(a.ncols(), |d, _| {
        let col = a.column(d);
        let mut kxx = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let v = col[i] - col[j];
                kxx += (g * v * v).exp();
            }
        }
        let kxy: f64 = col.iter().map(|x| (g * (x - theta_star[d]).powi(2)).exp()).sum();
        let mmd2 = 2.0 * kxx / (n * (n - 1)) as f64 - 2.0 * kxy / n as f64 + 1.0;
        mmd2.max(0.0).sqrt()
    }))
}

/// Closed-form squared MMD between `N(μ, s²)` and the point mass at `θ*`.
pub fn dirac_mmd2_gaussian(mu: f64, s: f64, theta_star: f64) -> f64 {
    let h2 = DIRAC_BANDWIDTH * DIRAC_BANDWIDTH;
    let s2 = s * s;
    DIRAC_BANDWIDTH / (h2 + 2.0 * s2).sqrt()
        - 2.0 * DIRAC_BANDWIDTH / (h2 + s2).sqrt() * (-(mu - theta_star).powi(2) / (2.0 * (h2 + s2))).exp()
        + 1.0
}
