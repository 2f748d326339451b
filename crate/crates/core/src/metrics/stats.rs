use autograd::ndarray::Array2;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues down to this (relative to the largest magnitude, floored
/// at 1) are treated as round-off and clipped to zero.
pub const PSD_TOLERANCE: f64 = 1e-8;

/// Mean and covariance of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianStats {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::Stats(format!(
                "covariance is {}x{} for a mean of length {d}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        let asym = (&cov - cov.transpose()).abs().max();
        if asym > 1e-8 * cov.abs().max().max(1.0) {
            return Err(Error::Stats(format!("covariance not symmetric (max gap {asym:e})")));
        }
        Ok(Self { mean, cov })
    }

    /// Sample mean and unbiased covariance of the rows of `feats`.
    pub fn from_features(feats: &Array2<f64>) -> Result<Self> {
        let (n, d) = feats.dim();
        if n < 2 {
            return Err(Error::Stats(format!("need at least 2 samples, got {n}")));
        }
        if feats.iter().any(|v| !v.is_finite()) {
            return Err(Error::Stats("non-finite feature value".into()));
        }
        let m = DMatrix::from_row_iterator(n, d, feats.iter().copied());
        let mean = m.row_mean().transpose();
        let mut centered = m;
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
        let cov = (&cov + cov.transpose()) * 0.5;
        Self::new(mean, cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn clipped_eigen(m: &DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let sym = (m + m.transpose()) * 0.5;
    let mut eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.abs().max().max(1.0);
    for v in eig.eigenvalues.iter_mut() {
        if *v < -PSD_TOLERANCE * scale {
            return Err(Error::Stats(format!("{what} has eigenvalue {v:e}")));
        }
        *v = v.max(0.0);
    }
    Ok(eig)
}

fn psd_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let eig = clipped_eigen(m, what)?;
    let root = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    Ok(&eig.eigenvectors * root * eig.eigenvectors.transpose())
}

/// Fréchet distance between two Gaussians:
/// `‖μ₁−μ₂‖² + Tr(Σ₁ + Σ₂ − 2 (Σ₁Σ₂)^½)`, with the trace of the root taken
/// as `Tr (√Σ₁ Σ₂ √Σ₁)^½` so only symmetric roots are needed.
pub fn fid(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Stats(format!("dimension {} vs {}", a.dim(), b.dim())));
    }
    let diff = (&a.mean - &b.mean).norm_squared();
    let ra = psd_sqrt(&a.cov, "first covariance")?;
    clipped_eigen(&b.cov, "second covariance")?;
    let inner = &ra * &b.cov * &ra;
    let cross: f64 = clipped_eigen(&inner, "covariance product")?
        .eigenvalues
        .iter()
        .map(|v| v.sqrt())
        .sum();
    Ok((diff + a.cov.trace() + b.cov.trace() - 2.0 * cross).max(0.0))
}
