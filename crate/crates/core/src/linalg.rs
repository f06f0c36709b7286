//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Compensated (Neumaier) running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for NeumaierSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = NeumaierSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Compensated sum of an iterator.
pub fn stable_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<NeumaierSum>().value()
}

/// Relative pivot threshold below which a triangular factor counts as singular.
const RANK_TOL: f64 = 1e-11;

/// Least squares `argmin ||sqrt(w) ⊙ (y − Xβ)||²` by Householder QR.
///
/// Columns are scaled to unit norm before factoring so the rank test is
/// insensitive to regressor units.
pub fn least_squares(
    design: &DMatrix<f64>,
    y: &DVector<f64>,
    weights: Option<&[f64]>,
    context: &str,
) -> Result<DVector<f64>> {
    let (n, p) = design.shape();
    if n < p || p == 0 {
        return Err(Error::Singular {
            context: format!("{context}: {n} rows for {p} coefficients"),
        });
    }
    let mut x = design.clone();
    let mut rhs = y.clone();
    if let Some(w) = weights {
        for (i, &wi) in w.iter().enumerate() {
            let s = wi.sqrt();
            x.row_mut(i).scale_mut(s);
            rhs[i] *= s;
        }
    }
    let mut scale = vec![1.0; p];
    for j in 0..p {
        let norm = x.column(j).norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Singular {
                context: format!("{context}: column {j} is zero or non-finite"),
            });
        }
        scale[j] = norm;
        x.column_mut(j).unscale_mut(norm);
    }
    let qr = x.qr();
    let r = qr.r();
    let max_diag = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    for i in 0..p {
        if r[(i, i)].abs() <= RANK_TOL * max_diag {
            return Err(Error::Singular {
                context: format!("{context}: design is rank deficient"),
            });
        }
    }
    qr.q_tr_mul(&mut rhs);
    let qty = rhs.rows(0, p).into_owned();
    let mut beta = r.solve_upper_triangular(&qty).ok_or_else(|| Error::Singular {
        context: context.to_string(),
    })?;
    for j in 0..p {
        beta[j] /= scale[j];
    }
    Ok(beta)
}

/// Inverse via LU with partial pivoting, rejecting numerically singular input.
pub fn lu_inverse(m: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let lu = m.clone().lu();
    let u = lu.u();
    let max_diag = (0..u.nrows()).map(|i| u[(i, i)].abs()).fold(0.0, f64::max);
    if (0..u.nrows()).any(|i| u[(i, i)].abs() <= 1e-14 * max_diag) {
        return Err(Error::Singular {
            context: context.to_string(),
        });
    }
    lu.try_inverse().ok_or_else(|| Error::Singular {
        context: context.to_string(),
    })
}
