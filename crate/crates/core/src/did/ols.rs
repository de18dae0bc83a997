use nalgebra::{DMatrix, DVector};

use super::design::{Design, DesignLayout};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OlsError {
    #[error("design has {rows} rows but {cols} columns; need more rows than columns")]
    TooFewRows { rows: usize, cols: usize },
    #[error("design matrix is rank deficient at column {column}")]
    RankDeficient { column: usize },
    #[error("response length {response} does not match {rows} design rows")]
    Shape { rows: usize, response: usize },
}

/// Ordinary least squares with classical (homoskedastic) covariance.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub beta: DVector<f64>,
    /// `sigma2 · (XᵀX)⁻¹`, computed as `sigma2 · R⁻¹R⁻ᵀ`.
    pub covariance: DMatrix<f64>,
    /// Residual variance, `RSS / dof`.
    pub sigma2: f64,
    pub rss: f64,
    pub dof: usize,
    pub n_rows: usize,
}

/// Pivot magnitude, relative to the largest, below which a column counts as
/// linearly dependent.
const RANK_TOLERANCE: f64 = 1e-10;

impl OlsFit {
    /// Solves `min ‖Xb − y‖` through a Householder QR factorization.
    pub fn fit(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<OlsFit, OlsError> {
        let (n, k) = x.shape();
        if y.len() != n {
            return Err(OlsError::Shape { rows: n, response: y.len() });
        }
        if n <= k {
            return Err(OlsError::TooFewRows { rows: n, cols: k });
        }
        let qr = x.clone().qr();
        let r = qr.r();
        let scale = r.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if let Some(column) = (0..k).find(|&j| r[(j, j)].abs() <= RANK_TOLERANCE * scale) {
            return Err(OlsError::RankDeficient { column });
        }

        let mut qty = y.clone();
        qr.q_tr_mul(&mut qty);
        let beta = r
            .solve_upper_triangular(&qty.rows(0, k).into_owned())
            .ok_or(OlsError::RankDeficient { column: 0 })?;
        // Components of Qᵀy beyond the first k are the residual in the
        // orthogonal complement.
        let rss = qty.rows(k, n - k).norm_squared();
        let dof = n - k;
        let sigma2 = rss / dof as f64;

        let r_inv = r
            .solve_upper_triangular(&DMatrix::identity(k, k))
            .ok_or(OlsError::RankDeficient { column: 0 })?;
        let mut covariance = &r_inv * r_inv.transpose() * sigma2;
        // Exact symmetry for downstream consumers.
        for i in 0..k {
            for j in 0..i {
                let v = 0.5 * (covariance[(i, j)] + covariance[(j, i)]);
                covariance[(i, j)] = v;
                covariance[(j, i)] = v;
            }
        }
        Ok(OlsFit {
            beta,
            covariance,
            sigma2,
            rss,
            dof,
            n_rows: n,
        })
    }

    pub fn fitted(&self, x: &DMatrix<f64>) -> DVector<f64> {
        x * &self.beta
    }

    pub fn standard_errors(&self) -> DVector<f64> {
        self.covariance.diagonal().map(f64::sqrt)
    }
}

/// A fitted triple-difference model.
#[derive(Debug, Clone)]
pub struct DidFit {
    pub layout: DesignLayout,
    pub ols: OlsFit,
}

impl DidFit {
    pub fn beta0(&self) -> f64 {
        self.ols.beta[DesignLayout::INTERCEPT]
    }
    pub fn beta2(&self) -> f64 {
        self.ols.beta[self.layout.y()]
    }
    pub fn beta3(&self) -> f64 {
        self.ols.beta[self.layout.p()]
    }
    pub fn beta6(&self) -> f64 {
        self.ols.beta[self.layout.yp()]
    }
    /// Language-specific vectors, indexed by indicator slot.
    pub fn beta1(&self) -> Vec<f64> {
        self.slots(|s| self.layout.l(s))
    }
    pub fn beta4(&self) -> Vec<f64> {
        self.slots(|s| self.layout.yl(s))
    }
    pub fn beta5(&self) -> Vec<f64> {
        self.slots(|s| self.layout.pl(s))
    }
    pub fn beta7(&self) -> Vec<f64> {
        self.slots(|s| self.layout.ypl(s))
    }

    fn slots(&self, col: impl Fn(usize) -> usize) -> Vec<f64> {
        (0..self.layout.n_languages - 1).map(|s| self.ols.beta[col(s)]).collect()
    }

    pub fn sigma2(&self) -> f64 {
        self.ols.sigma2
    }
    pub fn dof(&self) -> usize {
        self.ols.dof
    }
    pub fn n_rows(&self) -> usize {
        self.ols.n_rows
    }
}

/// Fits the triple-difference model to an encoded design.
pub fn fit_ols(design: &Design) -> Result<DidFit, OlsError> {
    Ok(DidFit {
        layout: design.layout,
        ols: OlsFit::fit(&design.x, &design.response)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64) / ((1u64 << 53) as f64) - 0.5
    }

    #[test]
    fn recovers_exact_coefficients() {
        let mut s = 7u64;
        let x = DMatrix::from_fn(40, 5, |_, _| lcg(&mut s));
        let truth = DVector::from_vec(vec![1.5, -2.0, 0.25, 3.0, -0.75]);
        let y = &x * &truth;
        let fit = OlsFit::fit(&x, &y).unwrap();
        for j in 0..5 {
            assert!((fit.beta[j] - truth[j]).abs() <= 1e-9);
        }
        assert!(fit.rss < 1e-20);
        assert_eq!(fit.dof, 35);
    }

    #[test]
    fn matches_normal_equations() {
        let mut s = 3u64;
        let x = DMatrix::from_fn(60, 4, |_, j| if j == 0 { 1.0 } else { lcg(&mut s) });
        let y = DVector::from_fn(60, |_, _| lcg(&mut s));
        let fit = OlsFit::fit(&x, &y).unwrap();
        let xtx_inv = (x.transpose() * &x).try_inverse().unwrap();
        let beta = &xtx_inv * x.transpose() * &y;
        let resid = &y - &x * &beta;
        let sigma2 = resid.norm_squared() / 56.0;
        assert!((fit.beta - beta).amax() < 1e-12);
        assert!((fit.sigma2 - sigma2).abs() < 1e-14);
        assert!((fit.covariance - xtx_inv * sigma2).amax() < 1e-12);
    }

    #[test]
    fn rank_deficiency_is_an_error() {
        let x = DMatrix::from_fn(10, 3, |i, j| if j == 2 { 2.0 * i as f64 } else if j == 1 { i as f64 } else { 1.0 });
        let y = DVector::from_fn(10, |i, _| i as f64);
        assert_eq!(OlsFit::fit(&x, &y).unwrap_err(), OlsError::RankDeficient { column: 2 });
        let short = DMatrix::from_element(2, 3, 1.0);
        assert!(matches!(OlsFit::fit(&short, &DVector::zeros(2)), Err(OlsError::TooFewRows { .. })));
    }
}
