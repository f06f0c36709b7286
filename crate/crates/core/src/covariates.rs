//! Covariates entering the outcome equations additively: per-cell fits,
//! the pooled restricted fit, the decomposition of the restricted LATE for a
//! binary covariate, and the instrument-propensity reweighting estimator.

use std::collections::{HashMap, HashSet};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::binary::{cf_fit, cf_fit_weighted, cf_late, CfFit};
use crate::data::{CellStats, Sample};
use crate::error::{Error, Result};
use crate::linalg::{least_squares, lu_inverse};
use crate::link::LinkFamily;

/// First-step propensities for one covariate value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovariateCell {
    pub x: Vec<f64>,
    pub p_hat: Vec<f64>,
    pub n: usize,
}

/// Pooled control-function fit with a common covariate slope `τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovCfFit {
    pub alpha: [f64; 2],
    pub gamma: [f64; 2],
    /// One entry per covariate column; constant columns are absorbed into
    /// the intercepts and reported as zero.
    pub tau: Vec<f64>,
    pub absorbed: Vec<usize>,
    pub cells: Vec<CovariateCell>,
    pub link: LinkFamily,
}

/// Decomposition of the restricted `LATE(1)` estimate for a binary covariate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prop3Decomposition {
    pub w: f64,
    pub b1: f64,
    pub b0: f64,
    pub zeta: [f64; 3],
    pub phi: [f64; 3],
    pub restricted_late1: f64,
    /// `LATE_x^CF(1)` for `x = 0, 1`: cell-`x` coefficients at the `X = 1`
    /// complier interval.
    pub cell_late1: [f64; 2],
    /// `w L₁ + (1 − w) L₀ + b₁ Δγ₁ + b₀ Δγ₀`.
    pub decomposed_late1: f64,
    /// Coefficients ordered `(α₀(0), γ₀(0), α₀(1), γ₀(1), α₁(0), γ₁(0), α₁(1), γ₁(1))`.
    pub delta_u: [f64; 8],
    pub delta_r: [f64; 8],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reweighted {
    pub iv: f64,
    pub cf: f64,
}

fn x_label(x: &[f64]) -> String {
    let parts: Vec<String> = x.iter().map(|v| v.to_string()).collect();
    format!("({})", parts.join(", "))
}

fn key(x: &[f64]) -> Vec<u64> {
    // Normalise −0.0 so it shares a cell with 0.0.
    x.iter().map(|v| (v + 0.0).to_bits()).collect()
}

fn in_cell(x: &[f64]) -> impl Fn(Error) -> Error + '_ {
    move |e| Error::InCell {
        x: x_label(x),
        source: Box::new(e),
    }
}

/// Distinct covariate values in lexicographic order with their per-z
/// treatment rates; every cell must satisfy the validity conditions.
fn covariate_cells(sample: &Sample) -> Result<(Vec<CovariateCell>, HashMap<Vec<u64>, usize>)> {
    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut seen = HashSet::new();
    for o in sample.observations() {
        if seen.insert(key(&o.x)) {
            xs.push(o.x.iter().map(|v| v + 0.0).collect());
        }
    }
    xs.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut cells = Vec::with_capacity(xs.len());
    let mut index = HashMap::new();
    for (i, x) in xs.into_iter().enumerate() {
        let k = key(&x);
        let sub = sample.filter(|o| key(&o.x) == k)?;
        let stats = CellStats::from_sample(&sub).map_err(in_cell(&x))?;
        stats.require_adjacent_conditions().map_err(in_cell(&x))?;
        index.insert(k, i);
        cells.push(CovariateCell {
            p_hat: stats.p_hats().to_vec(),
            n: sub.len(),
            x,
        });
    }
    Ok((cells, index))
}

/// Unrestricted two-step fit on the observations with `X = x`.
pub fn cf_fit_by_cell(sample: &Sample, link: &LinkFamily, x: &[f64]) -> Result<CfFit> {
    let k = key(x);
    let sub = sample
        .filter(|o| key(&o.x) == k)
        .map_err(|_| Error::Covariate(format!("value {} does not occur in the sample", x_label(x))))?;
    cf_fit(&sub, link).map_err(in_cell(x))
}

/// Pooled OLS of `Y` on arm intercepts, arm-specific `λ_d(P̂(X, Z))`, and `X`,
/// with `P̂(X, Z)` the saturated `(x, z)`-cell treatment rate.
pub fn cf_fit_covariates(sample: &Sample, link: &LinkFamily) -> Result<CovCfFit> {
    if sample.k_max() != 1 {
        return Err(Error::NotBinaryInstrument {
            context: "cf_fit_covariates",
            k_max: sample.k_max(),
        });
    }
    let (cells, index) = covariate_cells(sample)?;
    let obs = sample.observations();
    let m = sample.x_dim();
    let varying: Vec<usize> = (0..m).filter(|&j| obs.iter().any(|o| o.x[j] != obs[0].x[j])).collect();
    let absorbed: Vec<usize> = (0..m).filter(|j| !varying.contains(j)).collect();

    let lam: Vec<[[f64; 2]; 2]> = cells
        .iter()
        .map(|c| -> Result<[[f64; 2]; 2]> {
            let mut out = [[0.0; 2]; 2];
            for z in 0..2 {
                for d in 0..2 {
                    out[z][d] = link.lambda(d, c.p_hat[z])?;
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let cols = 4 + varying.len();
    let x = DMatrix::from_fn(obs.len(), cols, |i, c| {
        let o = &obs[i];
        let d = o.d_index();
        let l = lam[index[&key(&o.x)]][o.z][d];
        match c {
            0 => (1 - d) as f64,
            1 => (1 - d) as f64 * l,
            2 => d as f64,
            3 => d as f64 * l,
            _ => o.x[varying[c - 4]],
        }
    });
    let y = DVector::from_iterator(obs.len(), obs.iter().map(|o| o.y));
    let b = least_squares(&x, &y, None, "pooled covariate control-function regression")?;
    let mut tau = vec![0.0; m];
    for (k, &j) in varying.iter().enumerate() {
        tau[j] = b[4 + k];
    }
    Ok(CovCfFit {
        alpha: [b[0], b[2]],
        gamma: [b[1], b[3]],
        tau,
        absorbed,
        cells,
        link: link.clone(),
    })
}

impl CovCfFit {
    pub fn cell(&self, x: &[f64]) -> Option<&CovariateCell> {
        let k = key(x);
        self.cells.iter().find(|c| key(&c.x) == k)
    }
}

/// `(α̂₁ − α̂₀) + (γ̂₁ − γ̂₀) Γ(P̂(x, 0), P̂(x, 1))` from the pooled fit.
pub fn late_x_restricted(fit: &CovCfFit, x: &[f64]) -> Result<f64> {
    let cell = fit
        .cell(x)
        .ok_or_else(|| Error::Covariate(format!("value {} does not occur in the fit", x_label(x))))?;
    let g = fit.link.gamma(cell.p_hat[0], cell.p_hat[1])?;
    Ok((fit.alpha[1] - fit.alpha[0]) + (fit.gamma[1] - fit.gamma[0]) * g)
}

fn require_binary_x(sample: &Sample) -> Result<()> {
    if sample.x_dim() != 1 {
        return Err(Error::Covariate(format!(
            "decomposition needs exactly one covariate column, found {}",
            sample.x_dim()
        )));
    }
    if let Some(o) = sample.observations().iter().find(|o| o.x[0] != 0.0 && o.x[0] != 1.0) {
        return Err(Error::Covariate(format!("value {} is not binary", o.x[0])));
    }
    Ok(())
}

/// Restricted versus cell-specific estimates of `LATE(1)` for scalar binary `X`,
/// through the Lagrangian form of the restricted regression.
pub fn prop3_decompose(sample: &Sample, link: &LinkFamily) -> Result<Prop3Decomposition> {
    if sample.k_max() != 1 {
        return Err(Error::NotBinaryInstrument {
            context: "prop3_decompose",
            k_max: sample.k_max(),
        });
    }
    require_binary_x(sample)?;
    let (cells, index) = covariate_cells(sample)?;
    if cells.len() != 2 {
        return Err(Error::Covariate("both values 0 and 1 must occur".into()));
    }
    let p = |x: usize, z: usize| cells[x].p_hat[z];

    let obs = sample.observations();
    let mut w_mat = DMatrix::zeros(obs.len(), 8);
    for (i, o) in obs.iter().enumerate() {
        let x = index[&key(&o.x)];
        let d = o.d_index();
        let col = 4 * d + 2 * x;
        w_mat[(i, col)] = 1.0;
        w_mat[(i, col + 1)] = link.lambda(d, p(x, o.z))?;
    }
    let y = DVector::from_iterator(obs.len(), obs.iter().map(|o| o.y));
    #[rustfmt::skip]
    let c = DMatrix::from_row_slice(3, 8, &[
        -1.0, 0.0, 1.0, 0.0, 1.0, 0.0, -1.0, 0.0,
        0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0,
        0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0,
    ]);

    let wtw_inv = lu_inverse(&(w_mat.transpose() * &w_mat), "W'W")?;
    let delta_u = &wtw_inv * (w_mat.transpose() * &y);
    let m_inv = lu_inverse(&(&c * &wtw_inv * c.transpose()), "C (W'W)^-1 C'")?;
    let cdu = &c * &delta_u;
    let rho = -(&m_inv * &cdu);
    let delta_r = &delta_u + &wtw_inv * c.transpose() * &rho;
    let omega = &wtw_inv * c.transpose() * &m_inv;

    let gamma1 = link.gamma(p(1, 0), p(1, 1))?;
    let nu = |k: usize| omega.row(k - 1).transpose();
    let phi = nu(7) - nu(3) + (nu(8) - nu(4)) * gamma1;
    let (w, b1, b0) = (1.0 + phi[0], -(phi[1] + phi[0] * gamma1), phi[0] * gamma1 - phi[2]);

    let du = |k: usize| delta_u[k];
    let cell_late = |x: usize| (du(4 + 2 * x) - du(2 * x)) + (du(5 + 2 * x) - du(1 + 2 * x)) * gamma1;
    let cell_late1 = [cell_late(0), cell_late(1)];
    let upsilon = DVector::from_row_slice(&[0.0, 0.0, -1.0, -gamma1, 0.0, 0.0, 1.0, gamma1]);
    let restricted_late1 = upsilon.dot(&delta_r);
    let decomposed_late1 = w * cell_late1[1]
        + (1.0 - w) * cell_late1[0]
        + b1 * (du(7) - du(5))
        + b0 * (du(3) - du(1));
    debug_assert!(
        (restricted_late1 - decomposed_late1).abs() <= 1e-8 * (1.0 + restricted_late1.abs()),
        "decomposition identity: {restricted_late1} vs {decomposed_late1}"
    );

    let arr8 = |v: &DVector<f64>| std::array::from_fn(|k| v[k]);
    Ok(Prop3Decomposition {
        w,
        b1,
        b0,
        zeta: [-cdu[0], -cdu[1], -cdu[2]],
        phi: [phi[0], phi[1], phi[2]],
        restricted_late1,
        cell_late1,
        decomposed_late1,
        delta_u: arr8(&delta_u),
        delta_r: arr8(&delta_r),
    })
}

/// Wald and two-step control-function estimates of the unconditional LATE
/// after weighting each observation by `Z/ê(X) + (1 − Z)/(1 − ê(X))`.
pub fn reweighted_late<E: Fn(&[f64]) -> f64>(sample: &Sample, link: &LinkFamily, e_hat: E) -> Result<Reweighted> {
    if sample.k_max() != 1 {
        return Err(Error::NotBinaryInstrument {
            context: "reweighted_late",
            k_max: sample.k_max(),
        });
    }
    let weights = sample
        .observations()
        .iter()
        .map(|o| {
            let e = e_hat(&o.x);
            if !(e > 0.0 && e < 1.0) {
                return Err(Error::Domain {
                    what: "instrument propensity e(x)",
                    value: e,
                    domain: "(0, 1)",
                });
            }
            Ok(if o.z == 1 { 1.0 / e } else { 1.0 / (1.0 - e) })
        })
        .collect::<Result<Vec<f64>>>()?;
    let stats = CellStats::from_weighted(sample, &weights)?;
    let iv = crate::binary::wald_pair(&stats, 0, 1)?;
    let fit = cf_fit_weighted(sample, link, Some(&weights))?;
    Ok(Reweighted { iv, cf: cf_late(&fit)? })
}
