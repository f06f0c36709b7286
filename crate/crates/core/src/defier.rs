//! Heterogeneous-threshold selection model that admits defiers.
//!
//! Treatment is `D = 1{κ + δ Z ≥ U}` with `δ = η` (probability `υ`) or
//! `δ = −η`. With `κ̂ = P̂(0)` and `υ̂ = (η + P̂(1) − P̂(0)) / 2η` the model
//! reproduces every choice probability and conditional mean, yet its LATE
//! differs from the Wald ratio and moves with `η`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::data::{CellStats, Sample};
use crate::error::{Error, Result};
use crate::linalg::least_squares;
use crate::link::{LinkFamily, PROB_FLOOR};

/// How the two threshold components enter `E[Y | D = d, Z]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum MixtureWeighting {
    /// `υ λ_d(κ + ηZ) + (1 − υ) λ_d(κ − ηZ)`.
    #[default]
    Unweighted,
    /// Components weighted by their within-arm selection probabilities.
    /// Not the estimator analysed in the literature; for comparison only.
    ProbabilityWeighted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DefierFit {
    pub kappa: f64,
    pub upsilon: f64,
    pub eta: f64,
    pub alpha: [f64; 2],
    pub gamma: [f64; 2],
    pub link: LinkFamily,
    pub weighting: MixtureWeighting,
}

impl DefierFit {
    /// Mixture control function `c_d(z)`.
    pub fn control(&self, d: usize, z: usize) -> Result<f64> {
        control(&self.link, self.weighting, self.kappa, self.eta, self.upsilon, d, z)
    }

    pub fn fitted(&self, d: usize, z: usize) -> Result<f64> {
        Ok(self.alpha[d] + self.gamma[d] * self.control(d, z)?)
    }

    /// `υ(κ + ηz) + (1 − υ)(κ − ηz)`.
    pub fn choice_probability(&self, z: usize) -> f64 {
        let zf = z as f64;
        self.upsilon * (self.kappa + self.eta * zf) + (1.0 - self.upsilon) * (self.kappa - self.eta * zf)
    }
}

fn control(
    link: &LinkFamily,
    weighting: MixtureWeighting,
    kappa: f64,
    eta: f64,
    upsilon: f64,
    d: usize,
    z: usize,
) -> Result<f64> {
    let hi = kappa + eta * z as f64;
    let lo = kappa - eta * z as f64;
    let (l_hi, l_lo) = (link.lambda(d, hi)?, link.lambda(d, lo)?);
    Ok(match weighting {
        MixtureWeighting::Unweighted => upsilon * l_hi + (1.0 - upsilon) * l_lo,
        MixtureWeighting::ProbabilityWeighted => {
            let sel = |t: f64| if d == 1 { t } else { 1.0 - t };
            let (w_hi, w_lo) = (upsilon * sel(hi), (1.0 - upsilon) * sel(lo));
            (w_hi * l_hi + w_lo * l_lo) / (w_hi + w_lo)
        }
    })
}

/// Fits the defier model for a known half-spread `eta`.
pub fn defier_fit(sample: &Sample, link: &LinkFamily, eta: f64) -> Result<DefierFit> {
    defier_fit_with(sample, link, eta, MixtureWeighting::Unweighted)
}

pub fn defier_fit_with(sample: &Sample, link: &LinkFamily, eta: f64, weighting: MixtureWeighting) -> Result<DefierFit> {
    if sample.k_max() != 1 {
        return Err(Error::NotBinaryInstrument {
            context: "defier_fit",
            k_max: sample.k_max(),
        });
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::Domain {
            what: "eta",
            value: eta,
            domain: "(0, inf)",
        });
    }
    let stats = CellStats::from_sample(sample)?;
    stats.require_conditions(0, 1)?;
    let (p0, p1) = (stats.p_hat(0), stats.p_hat(1));
    let kappa = p0;
    let upsilon = (eta + p1 - p0) / (2.0 * eta);
    if !(0.0..=1.0).contains(&upsilon) {
        return Err(Error::Domain {
            what: "upsilon = (eta + P(1) - P(0)) / (2 eta)",
            value: upsilon,
            domain: "[0, 1]",
        });
    }
    if kappa + eta > 1.0 - PROB_FLOOR {
        return Err(Error::Domain {
            what: "kappa + eta",
            value: kappa + eta,
            domain: "(0, 1)",
        });
    }
    if kappa - eta < PROB_FLOOR {
        return Err(Error::Domain {
            what: "kappa - eta",
            value: kappa - eta,
            domain: "(0, 1)",
        });
    }

    let obs = sample.observations();
    let mut alpha = [0.0; 2];
    let mut gamma = [0.0; 2];
    for d in 0..2 {
        let c = [
            control(link, weighting, kappa, eta, upsilon, d, 0)?,
            control(link, weighting, kappa, eta, upsilon, d, 1)?,
        ];
        let rows: Vec<usize> = (0..obs.len()).filter(|&i| obs[i].d_index() == d).collect();
        let x = DMatrix::from_fn(rows.len(), 2, |r, col| if col == 0 { 1.0 } else { c[obs[rows[r]].z] });
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| obs[i].y));
        let beta = least_squares(&x, &y, None, "defier-model second step")?;
        alpha[d] = beta[0];
        gamma[d] = beta[1];
    }
    Ok(DefierFit {
        kappa,
        upsilon,
        eta,
        alpha,
        gamma,
        link: link.clone(),
        weighting,
    })
}

/// `(α̂₁ − α̂₀) + (γ̂₁ − γ̂₀) [(κ̂ + η) λ₁(κ̂ + η) − κ̂ λ₁(κ̂)] / η`.
pub fn defier_late(fit: &DefierFit) -> Result<f64> {
    let (k, e) = (fit.kappa, fit.eta);
    let corr = ((k + e) * fit.link.lambda1(k + e)? - k * fit.link.lambda1(k)?) / e;
    Ok((fit.alpha[1] - fit.alpha[0]) + (fit.gamma[1] - fit.gamma[0]) * corr)
}
