//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigen-decomposition of a symmetric matrix with eigenvalues in ascending order.
pub fn sorted_symmetric_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = symmetrize(m);
    let eig = sym.symmetric_eigen();
    let d = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(d, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(d, d);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    sorted_symmetric_eigen(m).0[0]
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let values = sorted_symmetric_eigen(m).0;
    values[values.len() - 1]
}

/// Returns `(m^{-1/2}, m^{1/2})` for a symmetric positive definite matrix.
///
/// Fails when the smallest eigenvalue is not positive relative to the largest.
pub fn inverse_sqrt_pd(m: &DMatrix<f64>, what: &str) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (values, vectors) = sorted_symmetric_eigen(m);
    let d = values.len();
    if d == 0 {
        return Ok((DMatrix::zeros(0, 0), DMatrix::zeros(0, 0)));
    }
    let largest = values[d - 1].abs().max(f64::MIN_POSITIVE);
    let smallest = values[0];
    if !(smallest > largest * 1e-13) {
        return Err(Error::Numerical(format!(
            "{what} is not positive definite: smallest eigenvalue {smallest:.6e} (largest {largest:.6e})"
        )));
    }
    let inv_sqrt = DVector::from_iterator(d, values.iter().map(|v| 1.0 / v.sqrt()));
    let sqrt = DVector::from_iterator(d, values.iter().map(|v| v.sqrt()));
    let a = &vectors * DMatrix::from_diagonal(&inv_sqrt) * vectors.transpose();
    let b = &vectors * DMatrix::from_diagonal(&sqrt) * vectors.transpose();
    Ok((symmetrize(&a), symmetrize(&b)))
}

/// Symmetric square root of a PSD matrix; negative rounding noise is clamped to zero.
pub fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (values, vectors) = sorted_symmetric_eigen(m);
    let roots = values.map(|v| v.max(0.0).sqrt());
    symmetrize(&(&vectors * DMatrix::from_diagonal(&roots) * vectors.transpose()))
}

/// Extends the orthonormal columns of `q` to an orthonormal basis of `R^d`.
pub fn complete_orthonormal(q: &DMatrix<f64>) -> DMatrix<f64> {
    let d = q.nrows();
    let mut cols: Vec<DVector<f64>> = q.column_iter().map(|c| c.into_owned()).collect();
    while cols.len() < d {
        let mut best: Option<DVector<f64>> = None;
        let mut best_norm = -1.0;
        for j in 0..d {
            let mut e = DVector::zeros(d);
            e[j] = 1.0;
            // two passes of Gram-Schmidt
            for _ in 0..2 {
                for c in &cols {
                    let proj = c.dot(&e);
                    e.axpy(-proj, c, 1.0);
                }
            }
            let norm = e.norm();
            if norm > best_norm {
                best_norm = norm;
                best = Some(e);
            }
        }
        let v = best.expect("dimension is positive");
        cols.push(v / best_norm);
    }
    DMatrix::from_columns(&cols)
}

/// Minimum-norm solution of `a x = b` through the SVD of a symmetric PSD `a`.
pub fn pinv_solve_psd(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let (values, vectors) = sorted_symmetric_eigen(a);
    let d = values.len();
    if d == 0 {
        return DVector::zeros(0);
    }
    let cutoff = values[d - 1].abs() * 1e-12;
    let coords = vectors.transpose() * b;
    let scaled = DVector::from_iterator(
        d,
        values
            .iter()
            .zip(coords.iter())
            .map(|(&l, &c)| if l > cutoff { c / l } else { 0.0 }),
    );
    vectors * scaled
}

/// Largest absolute asymmetry `|m_ij - m_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}
