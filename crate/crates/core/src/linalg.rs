//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};

/// Eigendecomposition of a symmetric matrix.
///
/// Eigenvalues are sorted in descending order (stable with respect to the
/// solver's output order on ties) and each eigenvector's sign is fixed so that
/// its largest-magnitude component is positive.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: DVector<f64>,
    /// Eigenvectors stored as columns, aligned with `values`.
    pub vectors: DMatrix<f64>,
}

pub fn sym_eigen(m: &DMatrix<f64>) -> Eigen {
    let n = m.nrows();
    let eig = symmetrize(m).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut values = DVector::zeros(n);
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = eig.eigenvalues[src];
        let mut col = eig.eigenvectors.column(src).into_owned();
        let pivot = col
            .iter()
            .copied()
            .fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(dst, &col);
    }
    Eigen { values, vectors }
}

/// `V diag(d) Vᵀ`, symmetrized.
pub fn reassemble(vectors: &DMatrix<f64>, values: &[f64]) -> DMatrix<f64> {
    let mut scaled = vectors.clone();
    for (k, mut col) in scaled.column_iter_mut().enumerate() {
        col *= values[k];
    }
    symmetrize(&(scaled * vectors.transpose()))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Element-wise L2 norm of `a - b` (square root of the sum of squares).
pub fn frobenius_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm()
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// `diag(Vᵀ C V)` without forming the full product.
pub fn diag_of_congruence(vectors: &DMatrix<f64>, c: &DMatrix<f64>) -> Vec<f64> {
    let cv = c * vectors;
    (0..vectors.ncols())
        .map(|k| vectors.column(k).dot(&cv.column(k)))
        .collect()
}

/// Column means and population standard deviations.
pub fn column_moments(x: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let t = x.nrows() as f64;
    let means: Vec<f64> = x.column_iter().map(|c| c.sum() / t).collect();
    let sds = x
        .column_iter()
        .zip(&means)
        .map(|(c, &m)| (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / t).sqrt())
        .collect();
    (means, sds)
}

/// Correlation implied by a covariance. Zero-variance assets get a zero row
/// and column (including the diagonal).
pub fn cov_to_corr(cov: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let n = cov.nrows();
    let sd: Vec<f64> = (0..n).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
    let corr = DMatrix::from_fn(n, n, |i, j| {
        if sd[i] > 0.0 && sd[j] > 0.0 {
            cov[(i, j)] / (sd[i] * sd[j])
        } else {
            0.0
        }
    });
    (corr, sd)
}

/// `diag(sd) R diag(sd)`.
pub fn corr_to_cov(corr: &DMatrix<f64>, sd: &[f64]) -> DMatrix<f64> {
    let n = corr.nrows();
    DMatrix::from_fn(n, n, |i, j| corr[(i, j)] * sd[i] * sd[j])
}

/// Orthonormal matrix from the Q factor of a square Gaussian draw, with the
/// sign convention making `R` have a positive diagonal (Haar distributed).
pub fn random_orthonormal<R: rand::Rng>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| crate::seed::normal(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            let mut col = q.column_mut(j);
            col.neg_mut();
        }
    }
    q
}
