//! Dense least squares through Householder QR.
//!
//! Every regression in the crate goes through [`LeastSquares::fit`]. Rank
//! deficiency is detected on the diagonal of `R`: column `j` is rejected when
//! `|R_jj| <= RANK_TOL * ||a_j||`, i.e. when it is numerically spanned by the
//! columns before it.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative tolerance on the diagonal of `R`.
pub const RANK_TOL: f64 = 1e-10;

/// A solved least-squares problem together with the pieces the sandwich
/// estimators need.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub coefficients: DVector<f64>,
    pub fitted: DVector<f64>,
    pub residuals: DVector<f64>,
    /// Upper triangular factor of the design.
    r: DMatrix<f64>,
}

impl LeastSquares {
    /// Fits `response ~ design`. `names` labels columns in error messages.
    pub fn fit(
        design: &DMatrix<f64>,
        response: &DVector<f64>,
        names: Option<&[&str]>,
    ) -> Result<Self> {
        let (n, q) = design.shape();
        if response.len() != n {
            return Err(Error::Dimension(format!(
                "design has {n} rows but response has {} entries",
                response.len()
            )));
        }
        if q == 0 {
            return Err(Error::Dimension("design has no columns".into()));
        }
        if n < q {
            return Err(Error::InsufficientData(format!(
                "{n} observations for {q} coefficients"
            )));
        }
        let col_name = |j: usize| -> String {
            names
                .and_then(|ns| ns.get(j))
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("x{j}"))
        };

        let col_norms: Vec<f64> = (0..q).map(|j| design.column(j).norm()).collect();
        let mut a = design.clone();
        let mut qty = response.clone();

        for j in 0..q {
            let norm = a.view((j, j), (n - j, 1)).norm();
            if col_norms[j] == 0.0 || norm <= RANK_TOL * col_norms[j] {
                return Err(Error::Singular {
                    column: j,
                    name: col_name(j),
                });
            }
            let x0 = a[(j, j)];
            let alpha = if x0 >= 0.0 { -norm } else { norm };
            // v = x - alpha e1, stored in place below the diagonal
            let mut v: Vec<f64> = (j..n).map(|i| a[(i, j)]).collect();
            v[0] -= alpha;
            let vtv: f64 = v.iter().map(|x| x * x).sum();
            if vtv > 0.0 {
                let beta = 2.0 / vtv;
                for k in j..q {
                    let s: f64 = v.iter().enumerate().map(|(t, vi)| vi * a[(j + t, k)]).sum();
                    let s = s * beta;
                    for (t, vi) in v.iter().enumerate() {
                        a[(j + t, k)] -= s * vi;
                    }
                }
                let s: f64 = v.iter().enumerate().map(|(t, vi)| vi * qty[j + t]).sum();
                let s = s * beta;
                for (t, vi) in v.iter().enumerate() {
                    qty[j + t] -= s * vi;
                }
            }
            a[(j, j)] = alpha;
        }

        let r = a.view((0, 0), (q, q)).upper_triangle();
        let coefficients = back_substitute(&r, &qty.rows(0, q).into_owned());
        let fitted = design * &coefficients;
        let residuals = response - &fitted;
        Ok(Self {
            coefficients,
            fitted,
            residuals,
            r,
        })
    }

    /// `(X'X)^{-1}` computed as `R^{-1} R^{-T}`.
    pub fn xtx_inverse(&self) -> DMatrix<f64> {
        let r_inv = self.r_inverse();
        &r_inv * r_inv.transpose()
    }

    /// Diagonal of the hat matrix for the rows of `design`.
    pub fn leverage(&self, design: &DMatrix<f64>) -> DVector<f64> {
        let r_inv = self.r_inverse();
        let u = design * r_inv;
        DVector::from_iterator(u.nrows(), u.row_iter().map(|row| row.norm_squared()))
    }

    fn r_inverse(&self) -> DMatrix<f64> {
        let q = self.r.nrows();
        let mut inv = DMatrix::zeros(q, q);
        for col in 0..q {
            let mut e = DVector::zeros(q);
            e[col] = 1.0;
            inv.set_column(col, &back_substitute(&self.r, &e));
        }
        inv
    }
}

fn back_substitute(r: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let q = r.nrows();
    let mut x = DVector::zeros(q);
    for i in (0..q).rev() {
        let mut s = b[i];
        for k in i + 1..q {
            s -= r[(i, k)] * x[k];
        }
        x[i] = s / r[(i, i)];
    }
    x
}

/// Least-squares coefficients of `response` on `design`.
pub fn least_squares(design: &DMatrix<f64>, response: &DVector<f64>) -> Result<DVector<f64>> {
    LeastSquares::fit(design, response, None).map(|f| f.coefficients)
}
