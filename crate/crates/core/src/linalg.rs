//! Small dense linear-algebra helpers on top of `nalgebra`.
//!
//! Matrices in this crate are tiny (parameter dimension rarely above 32), so
//! most helpers favour clarity over blocking. The slice-based Cholesky
//! routines exist for the per-chain hot loops where allocating a `DMatrix`
//! per call would dominate the cost.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let sym = symmetrize(a);
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Inverse of a symmetric positive definite matrix.
pub fn spd_inverse(a: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    match a.clone().cholesky() {
        Some(chol) => Ok(chol.inverse()),
        None => Err(Error::NotPositiveDefinite {
            what,
            min_eigenvalue: min_eigenvalue(a),
        }),
    }
}

/// `log |A|` for SPD `A`.
pub fn log_det_spd(a: &DMatrix<f64>, what: &'static str) -> Result<f64> {
    match a.clone().cholesky() {
        Some(chol) => Ok(2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()),
        None => Err(Error::NotPositiveDefinite {
            what,
            min_eigenvalue: min_eigenvalue(a),
        }),
    }
}

pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>, what: &'static str) -> Result<DVector<f64>> {
    match a.clone().cholesky() {
        Some(chol) => Ok(chol.solve(b)),
        None => Err(Error::NotPositiveDefinite {
            what,
            min_eigenvalue: min_eigenvalue(a),
        }),
    }
}

/// Symmetrize and raise every eigenvalue to at least `floor`.
///
/// Returns the repaired matrix and whether any eigenvalue was raised.
pub fn eigen_floor(a: &DMatrix<f64>, floor: f64) -> (DMatrix<f64>, bool) {
    let eig = SymmetricEigen::new(symmetrize(a));
    let mut raised = false;
    let vals = eig.eigenvalues.map(|v| {
        if v < floor {
            raised = true;
            floor
        } else {
            v
        }
    });
    let q = &eig.eigenvectors;
    (q * DMatrix::from_diagonal(&vals) * q.transpose(), raised)
}

/// Eigen-floored inverse of a symmetric matrix, `Q diag(1/max(λ, floor)) Qᵀ`.
pub fn floored_inverse(a: &DMatrix<f64>, floor: f64) -> (DMatrix<f64>, bool) {
    let eig = SymmetricEigen::new(symmetrize(a));
    let mut raised = false;
    let inv = eig.eigenvalues.map(|v| {
        if v < floor {
            raised = true;
            1.0 / floor
        } else {
            1.0 / v
        }
    });
    let q = &eig.eigenvectors;
    (q * DMatrix::from_diagonal(&inv) * q.transpose(), raised)
}

/// In-place Cholesky factorization of a column-major `m×m` buffer.
///
/// On success the lower triangle holds `L`; the strict upper triangle is left
/// untouched. Returns `false` if a non-positive pivot is met.
pub fn cholesky_in_place(a: &mut [f64], m: usize) -> bool {
    for j in 0..m {
        let mut d = a[j + j * m];
        for k in 0..j {
            let l = a[j + k * m];
            d -= l * l;
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j + j * m] = d;
        for i in (j + 1)..m {
            let mut s = a[i + j * m];
            for k in 0..j {
                s -= a[i + k * m] * a[j + k * m];
            }
            a[i + j * m] = s / d;
        }
    }
    true
}

/// Solve `L Lᵀ x = b` in place given the factor produced by [`cholesky_in_place`].
pub fn cholesky_solve_in_place(l: &[f64], m: usize, b: &mut [f64]) {
    for i in 0..m {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i + k * m] * b[k];
        }
        b[i] = s / l[i + i * m];
    }
    for i in (0..m).rev() {
        let mut s = b[i];
        for k in (i + 1)..m {
            s -= l[k + i * m] * b[k];
        }
        b[i] = s / l[i + i * m];
    }
}

/// Overwrite `inv` with `A^{-1}` from a Cholesky factor of `A`.
pub fn cholesky_inverse_into(l: &[f64], m: usize, inv: &mut [f64]) {
    for c in 0..m {
        let col = &mut inv[c * m..(c + 1) * m];
        col.iter_mut().for_each(|v| *v = 0.0);
        col[c] = 1.0;
        cholesky_solve_in_place(l, m, col);
    }
}

/// Draw one sample from `N(mean, cov)` given the lower Cholesky factor of `cov`.
pub fn correlate(l: &DMatrix<f64>, mean: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
    mean + l * z
}
