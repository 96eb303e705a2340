//! Sample covariance and signal/noise subspace separation.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::sim::SnapshotMatrix;

/// Eigendecomposition of a Hermitian matrix with eigenvalues sorted in
/// descending order; column `i` of `eigenvectors` pairs with
/// `eigenvalues[i]`.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<Complex64>,
}

/// Orthonormal basis of the noise subspace: the eigenvectors belonging to
/// the `N - M` smallest eigenvalues.
#[derive(Debug, Clone)]
pub struct NoiseSubspace {
    pub basis: DMatrix<Complex64>,
}

impl NoiseSubspace {
    pub fn n_antennas(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// `U_N^H a` for a steering vector `a`, with a fixed summation order
    /// so parallel callers reproduce serial results bitwise.
    pub fn project(&self, a: &DVector<Complex64>) -> DVector<Complex64> {
        let n = self.basis.nrows();
        let d = self.basis.ncols();
        let mut out = DVector::zeros(d);
        for k in 0..d {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..n {
                acc += self.basis[(i, k)].conj() * a[i];
            }
            out[k] = acc;
        }
        out
    }
}

/// Sample covariance `X X^H / T`, symmetrized so the result is exactly
/// Hermitian.
pub fn sample_covariance(x: &SnapshotMatrix) -> DMatrix<Complex64> {
    let t = x.ncols().max(1) as f64;
    let mut gamma = x * x.adjoint() / Complex64::new(t, 0.0);
    let n = gamma.nrows();
    for i in 0..n {
        gamma[(i, i)] = Complex64::new(gamma[(i, i)].re, 0.0);
        for j in (i + 1)..n {
            let avg = (gamma[(i, j)] + gamma[(j, i)].conj()) / 2.0;
            gamma[(i, j)] = avg;
            gamma[(j, i)] = avg.conj();
        }
    }
    gamma
}

fn hermitian_deviation(gamma: &DMatrix<Complex64>) -> f64 {
    let n = gamma.nrows();
    let mut dev = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            dev = dev.max((gamma[(i, j)] - gamma[(j, i)].conj()).norm());
        }
    }
    dev
}

/// Hermitian eigendecomposition with a deterministic output convention:
/// eigenvalues sorted descending, and each eigenvector rotated so its
/// largest-magnitude entry (first such entry on ties) is real positive.
pub fn hermitian_evd(gamma: &DMatrix<Complex64>) -> Result<EigenDecomposition> {
    let n = gamma.nrows();
    if n == 0 || gamma.ncols() != n {
        return Err(Error::dimension(format!(
            "expected square matrix, got {}x{}",
            n,
            gamma.ncols()
        )));
    }
    let scale = gamma.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
    let dev = hermitian_deviation(gamma);
    if dev > 1e-10 * scale.max(1.0) {
        return Err(Error::invalid(format!(
            "input is not Hermitian: max deviation {dev:.3e}"
        )));
    }
    // Symmetrize before factorizing so roundoff in the input cannot leak
    // complex eigenvalue parts.
    let mut sym = gamma.clone();
    for i in 0..n {
        sym[(i, i)] = Complex64::new(sym[(i, i)].re, 0.0);
        for j in (i + 1)..n {
            let avg = (sym[(i, j)] + sym[(j, i)].conj()) / 2.0;
            sym[(i, j)] = avg;
            sym[(j, i)] = avg.conj();
        }
    }

    let eig = nalgebra::SymmetricEigen::try_new(sym, f64::EPSILON, 0).ok_or_else(|| {
        Error::numerical(format!(
            "eigendecomposition did not converge for {n}x{n} matrix (norm {scale:.3e}, hermitian deviation {dev:.3e})"
        ))
    })?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut eigenvalues = Vec::with_capacity(n);
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvalues.push(eig.eigenvalues[src]);
        let mut col: DVector<Complex64> = eig.eigenvectors.column(src).into_owned();
        // Phase convention: largest-magnitude entry made real positive.
        let mut k_max = 0;
        let mut best = -1.0f64;
        for (k, v) in col.iter().enumerate() {
            let mag = v.norm();
            if mag > best {
                best = mag;
                k_max = k;
            }
        }
        if best > 0.0 {
            let rot = col[k_max].conj() / best;
            col *= rot;
        }
        eigenvectors.set_column(dst, &col);
    }

    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// Eigenvectors of the `N - M` smallest eigenvalues.
pub fn noise_subspace(evd: &EigenDecomposition, m_sources: usize) -> Result<NoiseSubspace> {
    let n = evd.eigenvalues.len();
    if m_sources == 0 || m_sources >= n {
        return Err(Error::dimension(format!(
            "need 1 <= M < N, got M={m_sources} with N={n}"
        )));
    }
    let basis = evd.eigenvectors.columns(m_sources, n - m_sources).into_owned();
    Ok(NoiseSubspace { basis })
}

/// Covariance, eigendecomposition, and subspace separation in one step.
pub fn noise_subspace_of(x: &SnapshotMatrix, m_sources: usize) -> Result<NoiseSubspace> {
    let gamma = sample_covariance(x);
    let evd = hermitian_evd(&gamma)?;
    noise_subspace(&evd, m_sources)
}
