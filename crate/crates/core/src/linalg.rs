//! Small dense linear-algebra helpers shared by the estimation modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{MgfaError, Result};

/// Symmetric eigendecomposition with eigenvalues sorted in nonincreasing
/// order. Columns of the returned matrix are the matching unit eigenvectors.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Eigenvalues of a symmetric matrix, nonincreasing.
pub fn sym_eigenvalues_desc(m: &DMatrix<f64>) -> Vec<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let mut vals: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    vals
}

/// Extends the orthonormal columns of `basis` (d×k) to a full d×d orthogonal
/// matrix. The first k columns are `basis` unchanged.
pub fn complete_orthonormal(basis: &DMatrix<f64>) -> DMatrix<f64> {
    let d = basis.nrows();
    let k = basis.ncols();
    let mut full = DMatrix::zeros(d, d);
    full.columns_mut(0, k).copy_from(basis);
    if k < d {
        // Eigenvectors of the complementary projector with eigenvalue 1 span
        // the orthogonal complement.
        let projector = DMatrix::identity(d, d) - basis * basis.transpose();
        let (_, vectors) = sym_eigen_desc(&projector);
        full.columns_mut(k, d - k)
            .copy_from(&vectors.columns(0, d - k));
    }
    full
}

/// Precomputed quantities for a Gaussian with covariance `ΛΛ' + diag(ψ)`.
///
/// With `M = I_q + Λ'Ψ⁻¹Λ`, the inverse and determinant follow from
/// `Σ⁻¹ = Ψ⁻¹ − Ψ⁻¹ΛM⁻¹Λ'Ψ⁻¹` and `|Σ| = |M|·∏ψ_i`, so only q×q systems
/// are ever factorized.
#[derive(Debug, Clone)]
pub struct FactorCovariance {
    loadings: DMatrix<f64>,
    psi_inv: DVector<f64>,
    inner_chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl FactorCovariance {
    /// `component` is only used to label a singularity error.
    pub fn new(
        loadings: &DMatrix<f64>,
        uniquenesses: &DVector<f64>,
        component: usize,
    ) -> Result<Self> {
        let d = loadings.nrows();
        let q = loadings.ncols();
        if uniquenesses.len() != d {
            return Err(MgfaError::invalid(format!(
                "uniquenesses have length {} but loadings have {d} rows",
                uniquenesses.len()
            )));
        }
        if uniquenesses.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(MgfaError::invalid(format!(
                "uniquenesses of component {component} must be finite and positive"
            )));
        }
        if loadings.iter().any(|v| !v.is_finite()) {
            return Err(MgfaError::invalid(format!(
                "loadings of component {component} contain non-finite values"
            )));
        }
        let psi_inv = uniquenesses.map(|p| 1.0 / p);
        let scaled = DMatrix::from_fn(d, q, |i, j| loadings[(i, j)] * psi_inv[i]);
        let inner = DMatrix::identity(q, q) + loadings.transpose() * &scaled;
        let inner_chol = Cholesky::new(inner).ok_or(MgfaError::Singular { component })?;
        let log_det_inner: f64 = 2.0
            * inner_chol
                .l_dirty()
                .diagonal()
                .iter()
                .map(|v| v.ln())
                .sum::<f64>();
        let log_det = log_det_inner + uniquenesses.iter().map(|p| p.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return Err(MgfaError::Singular { component });
        }
        Ok(Self {
            loadings: loadings.clone(),
            psi_inv,
            inner_chol,
            log_det,
        })
    }

    pub fn dim(&self) -> usize {
        self.loadings.nrows()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Quadratic form `r'Σ⁻¹r` for a centered vector.
    pub fn mahalanobis(&self, centered: &[f64]) -> f64 {
        let q = self.loadings.ncols();
        let mut plain = 0.0;
        let mut proj = DVector::zeros(q);
        for (i, (&r, &inv)) in centered.iter().zip(self.psi_inv.iter()).enumerate() {
            let w = r * inv;
            plain += r * w;
            for j in 0..q {
                proj[j] += self.loadings[(i, j)] * w;
            }
        }
        if q == 0 {
            return plain;
        }
        let solved = self.inner_chol.solve(&proj);
        plain - proj.dot(&solved)
    }

    pub fn log_pdf_centered(&self, centered: &[f64]) -> f64 {
        let d = self.dim() as f64;
        -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + self.log_det + self.mahalanobis(centered))
    }

    /// `γ = Λ'Σ⁻¹ = M⁻¹Λ'Ψ⁻¹` (q×d).
    pub fn gamma(&self) -> DMatrix<f64> {
        let d = self.dim();
        let q = self.loadings.ncols();
        let rhs = DMatrix::from_fn(q, d, |j, i| self.loadings[(i, j)] * self.psi_inv[i]);
        self.inner_chol.solve(&rhs)
    }

    /// Dense `Σ⁻¹`.
    pub fn precision(&self) -> DMatrix<f64> {
        let d = self.dim();
        let scaled = DMatrix::from_fn(d, self.loadings.ncols(), |i, j| {
            self.loadings[(i, j)] * self.psi_inv[i]
        });
        let mut out = -(&scaled * self.inner_chol.solve(&scaled.transpose()));
        for i in 0..d {
            out[(i, i)] += self.psi_inv[i];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn completion_is_orthogonal() {
        let v = DVector::from_vec(vec![1.0, 2.0, 2.0]) / 3.0;
        let basis = DMatrix::from_columns(&[v]);
        let full = complete_orthonormal(&basis);
        let gram = full.transpose() * &full;
        assert!((gram - DMatrix::<f64>::identity(3, 3)).amax() < 1e-12);
        assert!((full.column(0) - basis.column(0)).amax() == 0.0);
    }

    #[test]
    fn eigen_sorted() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0, 2.0]));
        let (vals, vecs) = sym_eigen_desc(&m);
        assert_eq!(vals.as_slice(), &[4.0, 2.0, 1.0]);
        assert!((vecs[(1, 0)].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn precision_matches_dense_inverse() {
        let lam = DMatrix::from_row_slice(3, 1, &[1.0, 0.5, -0.3]);
        let psi = DVector::from_vec(vec![0.5, 1.0, 2.0]);
        let fc = FactorCovariance::new(&lam, &psi, 0).unwrap();
        let sigma = &lam * lam.transpose() + DMatrix::from_diagonal(&psi);
        let inv = sigma.clone().try_inverse().unwrap();
        assert!((fc.precision() - &inv).amax() < 1e-12);
        assert!((fc.gamma() - lam.transpose() * &inv).amax() < 1e-12);
        assert!((fc.log_det() - sigma.determinant().ln()).abs() < 1e-12);
    }
}
