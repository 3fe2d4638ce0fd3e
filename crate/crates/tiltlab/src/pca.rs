//! Principal-component bases of image and feature spaces.
//!
//! A fitted basis is the orthonormal transition matrix between the
//! standard basis and the PCA basis, together with the per-component
//! standard deviations and the data mean. Coordinates in the PCA basis
//! ("starred coordinates") are always taken on centered vectors,
//! `Pᵀ(x − mu)`; every consumer compensates for the mean so that the
//! tilting identities hold exactly in centered coordinates.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use ndarray_linalg::{Eigh, UPLO};

use crate::dataio::{load_matrices, save_matrices};
use crate::error::{Error, Result};

/// Standard deviations below this are treated as exactly zero.
const SIGMA_FLOOR: f64 = 1e-12;

/// Column block size for covariance accumulation; bounds the size of the
/// centered copy so large datasets are never duplicated wholesale.
const COV_BLOCK: usize = 4096;

/// An orthonormal PCA basis with component scales and the fitted mean.
///
/// Columns of `p` are unit principal directions sorted by decreasing
/// variance; `sigma` holds the matching standard deviations (population
/// normalization, `1/N`); the sign convention makes each column's
/// largest-magnitude entry positive.
#[derive(Debug, Clone)]
pub struct PcaBasis {
    p: Array2<f64>,
    sigma: Array1<f64>,
    mu: Array1<f64>,
    n_fitted: usize,
}

impl PcaBasis {
    /// Fit a full basis to the columns of `data` (an `m × N` matrix).
    pub fn fit(data: ArrayView2<f64>) -> Result<Self> {
        let (m, n) = data.dim();
        if m < 1 {
            return Err(Error::Argument("data has zero rows".to_string()));
        }
        if n < 2 {
            return Err(Error::Argument(format!(
                "need at least 2 samples to fit a basis, got {n}"
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("data contains non-finite entries".to_string()));
        }

        let mu = data.mean_axis(Axis(1)).expect("n >= 2");

        // Population covariance, accumulated over column blocks.
        let mut cov = Array2::<f64>::zeros((m, m));
        let mut start = 0;
        while start < n {
            let stop = (start + COV_BLOCK).min(n);
            let mut block = data.slice(s![.., start..stop]).to_owned();
            for mut col in block.columns_mut() {
                col -= &mu;
            }
            ndarray::linalg::general_mat_mul(1.0, &block, &block.t(), 1.0, &mut cov);
            start = stop;
        }
        cov /= n as f64;

        let (eigenvalues, vectors) = cov
            .eigh(UPLO::Lower)
            .map_err(|e| Error::Numeric(format!("eigendecomposition failed: {e}")))?;

        // eigh returns ascending eigenvalues; reverse to decreasing variance.
        let mut p = Array2::zeros((m, m));
        let mut sigma = Array1::zeros(m);
        for i in 0..m {
            let src = m - 1 - i;
            p.column_mut(i).assign(&vectors.column(src));
            let s = eigenvalues[src].max(0.0).sqrt();
            sigma[i] = if s < SIGMA_FLOOR { 0.0 } else { s };
        }
        apply_sign_convention(&mut p);

        Ok(PcaBasis {
            p,
            sigma,
            mu,
            n_fitted: n,
        })
    }

    /// Rebuild a basis from its parts, checking the invariants.
    pub fn from_parts(
        p: Array2<f64>,
        sigma: Array1<f64>,
        mu: Array1<f64>,
        n_fitted: usize,
    ) -> Result<Self> {
        let m = p.nrows();
        if p.ncols() != m || sigma.len() != m || mu.len() != m {
            return Err(Error::Argument(format!(
                "inconsistent basis dimensions: p {:?}, sigma {}, mu {}",
                p.dim(),
                sigma.len(),
                mu.len()
            )));
        }
        let gram = p.t().dot(&p);
        for i in 0..m {
            for j in 0..m {
                let expect = if i == j { 1.0 } else { 0.0 };
                if (gram[(i, j)] - expect).abs() > 1e-5 {
                    return Err(Error::Argument(
                        "basis columns are not orthonormal".to_string(),
                    ));
                }
            }
        }
        if sigma.windows(2).into_iter().any(|w| w[0] < w[1]) || sigma.iter().any(|&s| s < 0.0) {
            return Err(Error::Argument(
                "sigma must be non-increasing and non-negative".to_string(),
            ));
        }
        Ok(PcaBasis {
            p,
            sigma,
            mu,
            n_fitted,
        })
    }

    /// Dimension of the underlying space.
    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    /// Transition matrix; column `i` is the `i`-th principal direction.
    pub fn p(&self) -> &Array2<f64> {
        &self.p
    }

    /// Per-component standard deviations, non-increasing.
    pub fn sigma(&self) -> &Array1<f64> {
        &self.sigma
    }

    /// Mean of the fitted data.
    pub fn mu(&self) -> &Array1<f64> {
        &self.mu
    }

    pub fn n_fitted(&self) -> usize {
        self.n_fitted
    }

    /// Starred coordinates of `x`: `Pᵀ(x − mu)`.
    pub fn to_coords(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_dim(x.len())?;
        let centered = &x - &self.mu;
        Ok(self.p.t().dot(&centered))
    }

    /// Inverse of [`to_coords`](Self::to_coords): `mu + P·x⋆`.
    pub fn from_coords(&self, xstar: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_dim(xstar.len())?;
        Ok(&self.mu + &self.p.dot(&xstar))
    }

    /// Starred coordinates of every column of `xs` at once.
    pub fn to_coords_batch(&self, xs: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_dim(xs.nrows())?;
        let mut centered = xs.to_owned();
        for mut col in centered.columns_mut() {
            col -= &self.mu;
        }
        Ok(self.p.t().dot(&centered))
    }

    /// Number of trailing components whose variances sum to at least
    /// `variance_fraction` of the total, chosen greedily from the last
    /// component backward.
    pub fn tail_component_count(&self, variance_fraction: f64) -> Result<usize> {
        if !(0.0..1.0).contains(&variance_fraction) || variance_fraction <= 0.0 {
            return Err(Error::Argument(format!(
                "variance fraction must lie in (0, 1), got {variance_fraction}"
            )));
        }
        let variances: Vec<f64> = self.sigma.iter().map(|s| s * s).collect();
        let total: f64 = variances.iter().sum();
        if total == 0.0 {
            return Err(Error::Degenerate(
                "all components have zero variance".to_string(),
            ));
        }
        let target = variance_fraction * total;
        let mut acc = 0.0;
        let mut count = 0;
        for v in variances.iter().rev() {
            acc += v;
            count += 1;
            if acc >= target {
                break;
            }
        }
        Ok(count)
    }

    /// Orthogonal projector onto the span of the trailing components
    /// carrying `variance_fraction` of the variance.
    pub fn tail_projector(&self, variance_fraction: f64) -> Result<Array2<f64>> {
        let count = self.tail_component_count(variance_fraction)?;
        let m = self.dim();
        let tail = self.p.slice(s![.., m - count..]);
        Ok(tail.dot(&tail.t()))
    }

    pub fn save(&self, base: &Path) -> Result<()> {
        let m = self.dim();
        let sigma = self.sigma.view().into_shape_with_order((m, 1)).unwrap();
        let mu = self.mu.view().into_shape_with_order((m, 1)).unwrap();
        save_matrices(
            base,
            "pca_basis",
            serde_json::json!({ "n_fitted": self.n_fitted }),
            &[("p", self.p.view()), ("sigma", sigma), ("mu", mu)],
        )
    }

    pub fn load(base: &Path) -> Result<Self> {
        let (kind, meta, fields) = load_matrices(base)?;
        if kind != "pca_basis" {
            return Err(Error::Format(format!(
                "expected a pca_basis container, found '{kind}'"
            )));
        }
        let mut p = None;
        let mut sigma = None;
        let mut mu = None;
        for (name, m) in fields {
            match name.as_str() {
                "p" => p = Some(m),
                "sigma" => sigma = Some(m.column(0).to_owned()),
                "mu" => mu = Some(m.column(0).to_owned()),
                other => {
                    return Err(Error::Format(format!("unexpected field '{other}'")));
                }
            }
        }
        let n_fitted = meta["n_fitted"].as_u64().unwrap_or(0) as usize;
        Self::from_parts(
            p.ok_or_else(|| Error::Format("missing field 'p'".to_string()))?,
            sigma.ok_or_else(|| Error::Format("missing field 'sigma'".to_string()))?,
            mu.ok_or_else(|| Error::Format("missing field 'mu'".to_string()))?,
            n_fitted,
        )
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::Argument(format!(
                "vector length {len} does not match basis dimension {}",
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Make the largest-magnitude entry of each column positive; ties go to
/// the lowest index.
fn apply_sign_convention(p: &mut Array2<f64>) {
    for mut col in p.columns_mut() {
        let mut best = 0;
        let mut best_abs = col[0].abs();
        for (i, &v) in col.iter().enumerate().skip(1) {
            if v.abs() > best_abs {
                best = i;
                best_abs = v.abs();
            }
        }
        if col[best] < 0.0 {
            col.mapv_inplace(|v| -v);
        }
    }
}
