//! Estimators for a single binary instrument: Wald/IV, the two-step control
//! function, potential-outcome means, extrapolation off the complier
//! interval, Telser's residual-inclusion regression, and LaLonde's
//! common-coefficient variant.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::data::{CellStats, Sample};
use crate::error::{Error, Result};
use crate::link::LinkFamily;
use crate::linalg::least_squares;
use crate::normal;

/// Two-step control-function coefficients for a binary instrument.
///
/// Index `[d]` holds the arm-`d` value.
#[derive(Debug, Clone, PartialEq)]
pub struct CfFit {
    pub alpha: [f64; 2],
    pub gamma: [f64; 2],
    pub p0: f64,
    pub p1: f64,
    pub link: LinkFamily,
}

/// Identified mean potential outcomes by compliance group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoMeans {
    pub mu_1at: f64,
    pub mu_0nt: f64,
    pub mu_1c: f64,
    pub mu_0c: f64,
}

impl PoMeans {
    pub fn late(&self) -> f64 {
        self.mu_1c - self.mu_0c
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.mu_1at, self.mu_0nt, self.mu_1c, self.mu_0c]
    }
}

/// Model-based values for the under-identified means and the ATE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Extrapolation {
    pub mu_0at: f64,
    pub mu_1nt: f64,
    pub ate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LalondeFit {
    pub beta: f64,
    pub gamma_common: f64,
    pub intercept: f64,
}

fn require_binary(k_max: usize, context: &'static str) -> Result<()> {
    if k_max != 1 {
        return Err(Error::NotBinaryInstrument { context, k_max });
    }
    Ok(())
}

/// Wald ratio for the pair `(lo, hi)` after checking both validity conditions.
pub(crate) fn wald_pair(stats: &CellStats, lo: usize, hi: usize) -> Result<f64> {
    stats.require_conditions(lo, hi)?;
    Ok((stats.mean_y(hi) - stats.mean_y(lo)) / (stats.p_hat(hi) - stats.p_hat(lo)))
}

/// Wald estimator `(Ȳ|Z=1 − Ȳ|Z=0) / (P̂(1) − P̂(0))`.
pub fn iv_late(stats: &CellStats) -> Result<f64> {
    require_binary(stats.k_max(), "iv_late")?;
    wald_pair(stats, 0, 1)
}

/// Nonparametric estimates of the four identified group means.
pub fn iv_po_means(stats: &CellStats) -> Result<PoMeans> {
    require_binary(stats.k_max(), "iv_po_means")?;
    iv_po_means_pair(stats, 0, 1)
}

pub(crate) fn iv_po_means_pair(stats: &CellStats, lo: usize, hi: usize) -> Result<PoMeans> {
    stats.require_conditions(lo, hi)?;
    let (p0, p1) = (stats.p_hat(lo), stats.p_hat(hi));
    let y = |z, d| stats.ybar_checked(z, d);
    let dp = p1 - p0;
    Ok(PoMeans {
        mu_1at: y(lo, 1),
        mu_0nt: y(hi, 0),
        mu_1c: (p1 * y(hi, 1) - p0 * y(lo, 1)) / dp,
        mu_0c: ((1.0 - p0) * y(lo, 0) - (1.0 - p1) * y(hi, 0)) / dp,
    })
}

/// Two-step control function: first-step propensities are the per-z
/// treatment rates, second step is per-arm OLS of `Y` on `[1, λ_d(P̂(Z))]`.
pub fn cf_fit(sample: &Sample, link: &LinkFamily) -> Result<CfFit> {
    cf_fit_weighted(sample, link, None)
}

/// [`cf_fit`] with observation weights in both steps.
pub fn cf_fit_weighted(sample: &Sample, link: &LinkFamily, weights: Option<&[f64]>) -> Result<CfFit> {
    require_binary(sample.k_max(), "cf_fit")?;
    let stats = match weights {
        Some(w) => CellStats::from_weighted(sample, w)?,
        None => CellStats::from_sample(sample)?,
    };
    stats.require_conditions(0, 1)?;
    let (p0, p1) = (stats.p_hat(0), stats.p_hat(1));

    let mut alpha = [0.0; 2];
    let mut gamma = [0.0; 2];
    for d in 0..2 {
        let lam = [link.lambda(d, p0)?, link.lambda(d, p1)?];
        let rows: Vec<usize> = (0..sample.len())
            .filter(|&i| sample.observations()[i].d_index() == d)
            .collect();
        let obs = sample.observations();
        let x = DMatrix::from_fn(rows.len(), 2, |r, c| if c == 0 { 1.0 } else { lam[obs[rows[r]].z] });
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| obs[i].y));
        let w: Option<Vec<f64>> = weights.map(|w| rows.iter().map(|&i| w[i]).collect());
        let beta = least_squares(&x, &y, w.as_deref(), "control-function second step")?;
        alpha[d] = beta[0];
        gamma[d] = beta[1];

        #[cfg(debug_assertions)]
        {
            let (y0, y1) = (stats.ybar_checked(0, d), stats.ybar_checked(1, d));
            let dl = lam[1] - lam[0];
            let g = (y1 - y0) / dl;
            let a = (lam[1] * y0 - lam[0] * y1) / dl;
            let cond = (1.0 + lam[0].abs() + lam[1].abs()) / dl.abs();
            let tol = 1e-10 * cond * (1.0 + y0.abs() + y1.abs());
            debug_assert!((g - beta[1]).abs() <= tol, "slope {} vs closed form {g}", beta[1]);
            debug_assert!((a - beta[0]).abs() <= tol * cond, "intercept {} vs closed form {a}", beta[0]);
        }
    }
    Ok(CfFit {
        alpha,
        gamma,
        p0,
        p1,
        link: link.clone(),
    })
}

impl CfFit {
    /// Fitted `E[Y | D = d, Z = z]` from the second step.
    pub fn fitted(&self, d: usize, z: usize) -> Result<f64> {
        let p = if z == 0 { self.p0 } else { self.p1 };
        Ok(self.alpha[d] + self.gamma[d] * self.link.lambda(d, p)?)
    }

    /// `Γ(P̂(0), P̂(1))`, the complier-interval mean of `J(U) − μ_J`.
    pub fn complier_gamma(&self) -> Result<f64> {
        self.link.gamma(self.p0, self.p1)
    }
}

/// `(α̂₁ − α̂₀) + (γ̂₁ − γ̂₀) Γ(P̂(0), P̂(1))`.
pub fn cf_late(fit: &CfFit) -> Result<f64> {
    let g = fit.complier_gamma()?;
    Ok((fit.alpha[1] - fit.alpha[0]) + (fit.gamma[1] - fit.gamma[0]) * g)
}

pub fn cf_po_means(fit: &CfFit) -> Result<PoMeans> {
    let g = fit.complier_gamma()?;
    Ok(PoMeans {
        mu_1at: fit.alpha[1] + fit.gamma[1] * fit.link.lambda1(fit.p0)?,
        mu_0nt: fit.alpha[0] + fit.gamma[0] * fit.link.lambda0(fit.p1)?,
        mu_1c: fit.alpha[1] + fit.gamma[1] * g,
        mu_0c: fit.alpha[0] + fit.gamma[0] * g,
    })
}

/// Untreated always-taker mean, treated never-taker mean, and the ATE
/// implied by the fitted control-function model.
pub fn cf_extrapolate(fit: &CfFit) -> Result<Extrapolation> {
    Ok(Extrapolation {
        mu_0at: fit.alpha[0] + fit.gamma[0] * fit.link.lambda1(fit.p0)?,
        mu_1nt: fit.alpha[1] + fit.gamma[1] * fit.link.lambda0(fit.p1)?,
        ate: fit.alpha[1] - fit.alpha[0],
    })
}

/// Marginal treatment effect `m̂₁(u) − m̂₀(u)` with `m̂_d(u) = α̂_d + γ̂_d (J(u) − μ_J)`.
pub fn mte(fit: &CfFit, u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain {
            what: "u",
            value: u,
            domain: "(0, 1)",
        });
    }
    Ok((fit.alpha[1] - fit.alpha[0]) + (fit.gamma[1] - fit.gamma[0]) * fit.link.centered(u))
}

/// Coefficient on `D` from OLS of `Y` on `[1, D, D − P̂(Z)]`.
pub fn telser_late(sample: &Sample) -> Result<f64> {
    require_binary(sample.k_max(), "telser_late")?;
    let stats = CellStats::from_sample(sample)?;
    stats.require_conditions(0, 1)?;
    let obs = sample.observations();
    let x = DMatrix::from_fn(obs.len(), 3, |i, c| {
        let d = obs[i].d_index() as f64;
        match c {
            0 => 1.0,
            1 => d,
            _ => d - stats.p_hat(obs[i].z),
        }
    });
    let y = DVector::from_iterator(obs.len(), obs.iter().map(|o| o.y));
    Ok(least_squares(&x, &y, None, "residual-inclusion regression")?[1])
}

/// OLS of `Y` on `[1, D, h]` with a single inverse-Mills coefficient shared
/// by both arms: `h = −φ(Φ⁻¹(P))/P` if treated, `φ(Φ⁻¹(P))/(1 − P)` otherwise.
pub fn lalonde_fit(sample: &Sample) -> Result<LalondeFit> {
    require_binary(sample.k_max(), "lalonde_fit")?;
    let stats = CellStats::from_sample(sample)?;
    stats.require_conditions(0, 1)?;
    let mills: Vec<[f64; 2]> = (0..2)
        .map(|z| {
            let p = stats.p_hat(z);
            let dens = normal::pdf(normal::quantile(p));
            [dens / (1.0 - p), -dens / p]
        })
        .collect();
    let obs = sample.observations();
    let x = DMatrix::from_fn(obs.len(), 3, |i, c| match c {
        0 => 1.0,
        1 => obs[i].d_index() as f64,
        _ => mills[obs[i].z][obs[i].d_index()],
    });
    let y = DVector::from_iterator(obs.len(), obs.iter().map(|o| o.y));
    let b = least_squares(&x, &y, None, "common-coefficient regression")?;
    Ok(LalondeFit {
        intercept: b[0],
        beta: b[1],
        gamma_common: b[2],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::fixtures::toy8;
    use crate::data::Observation;
    use crate::quad;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn stats(s: &Sample) -> CellStats {
        CellStats::from_sample(s).unwrap()
    }

    fn sample(rows: &[(f64, bool, usize)]) -> Sample {
        Sample::new(rows.iter().map(|&(y, d, z)| Observation::new(y, d, z)).collect()).unwrap()
    }

    /// Ten observations per z; `n1[z]` treated; outcomes from a fixed list.
    fn grouped(n1: [usize; 2], ys: &[f64]) -> Sample {
        let mut rows = Vec::new();
        let mut k = 0;
        for z in 0..2 {
            for i in 0..10 {
                rows.push((ys[k % ys.len()], i < n1[z], z));
                k += 1;
            }
        }
        sample(&rows)
    }

    #[test]
    fn toy8_wald() {
        assert!(close(iv_late(&stats(&toy8())).unwrap(), 1.0, 1e-15));
    }

    #[test]
    fn wald_trivial_cases() {
        let s = toy8().map_outcomes(|_, o| if o.z == 0 { 3.0 } else { 3.0 }).unwrap();
        assert_eq!(iv_late(&stats(&s)).unwrap(), 0.0);
        let s = toy8().map_outcomes(|_, o| o.d_index() as f64).unwrap();
        assert!(close(iv_late(&stats(&s)).unwrap(), 1.0, 1e-15));
    }

    #[test]
    fn toy8_po_means() {
        let m = iv_po_means(&stats(&toy8())).unwrap();
        assert_eq!(m.as_array(), [2.0, 1.0, 0.5, -0.5]);
        let s = toy8().map_outcomes(|_, _| 4.5).unwrap();
        let m = iv_po_means(&stats(&s)).unwrap();
        for v in m.as_array() {
            assert!(close(v, 4.5, 1e-14));
        }
        let s = toy8().map_outcomes(|_, o| o.d_index() as f64).unwrap();
        let m = iv_po_means(&stats(&s)).unwrap();
        assert!(close(m.mu_1at, 1.0, 1e-15) && close(m.mu_0nt, 0.0, 1e-15));
        assert!(close(m.mu_1c, 1.0, 1e-15) && close(m.mu_0c, 0.0, 1e-15));
    }

    #[test]
    fn toy8_linear_fit() {
        let fit = cf_fit(&toy8(), &LinkFamily::linear()).unwrap();
        assert!(close(fit.alpha[1], 0.5, 1e-12), "{fit:?}");
        assert!(close(fit.gamma[1], -4.0, 1e-12));
        assert!(close(fit.alpha[0], -0.5, 1e-12));
        assert!(close(fit.gamma[0], 4.0, 1e-12));
        assert!(close(cf_late(&fit).unwrap(), 1.0, 1e-12));
        let e = cf_extrapolate(&fit).unwrap();
        assert!(close(e.ate, 1.0, 1e-12));
    }

    #[test]
    fn saturation_and_equivalence_on_toy8() {
        let s = toy8();
        let st = stats(&s);
        let iv = iv_po_means(&st).unwrap();
        for link in LinkFamily::builtins() {
            let fit = cf_fit(&s, &link).unwrap();
            for z in 0..2 {
                for d in 0..2 {
                    let f = fit.fitted(d, z).unwrap();
                    assert!(close(f, st.ybar(z, d).unwrap(), 1e-10), "{} z={z} d={d}", link.name());
                }
            }
            assert!(close(cf_late(&fit).unwrap(), 1.0, 1e-10), "{}", link.name());
            let cf = cf_po_means(&fit).unwrap();
            for (a, b) in cf.as_array().iter().zip(iv.as_array()) {
                assert!(close(*a, b, 1e-10), "{}: {cf:?}", link.name());
            }
        }
    }

    #[test]
    fn constant_outcome_gives_flat_fit() {
        let s = toy8().map_outcomes(|_, _| -2.0).unwrap();
        let fit = cf_fit(&s, &LinkFamily::probit()).unwrap();
        for d in 0..2 {
            assert!(fit.gamma[d].abs() < 1e-12);
            assert!(close(fit.alpha[d], -2.0, 1e-12));
        }
        for v in cf_po_means(&fit).unwrap().as_array() {
            assert!(close(v, -2.0, 1e-12));
        }
    }

    #[test]
    fn extrapolation_without_selection() {
        let fit = CfFit {
            alpha: [0.3, 1.1],
            gamma: [0.0, 0.0],
            p0: 0.2,
            p1: 0.6,
            link: LinkFamily::probit(),
        };
        let e = cf_extrapolate(&fit).unwrap();
        assert_eq!((e.mu_0at, e.mu_1nt, e.ate), (0.3, 1.1, 1.1 - 0.3));
        assert!(close(cf_late(&fit).unwrap(), e.ate, 1e-15));
    }

    #[test]
    fn late_is_link_invariant_but_ate_is_not_required_to_be() {
        let s = grouped([2, 5], &[1.3, -0.4, 2.8, 0.1, 0.7, 3.3, -1.2]);
        let lin = cf_fit(&s, &LinkFamily::linear()).unwrap();
        let pro = cf_fit(&s, &LinkFamily::probit()).unwrap();
        assert!(close(cf_late(&lin).unwrap(), cf_late(&pro).unwrap(), 1e-10));
        let (a, b) = (cf_extrapolate(&lin).unwrap().ate, cf_extrapolate(&pro).unwrap().ate);
        assert!(a.is_finite() && b.is_finite());
    }

    #[test]
    fn mte_values() {
        let fit = cf_fit(&toy8(), &LinkFamily::linear()).unwrap();
        assert!(close(mte(&fit, 0.5).unwrap(), fit.alpha[1] - fit.alpha[0], 1e-15));
        assert!(close(mte(&fit, 0.25).unwrap(), 3.0, 1e-12));
        assert!(mte(&fit, 0.0).is_err());
        assert!(mte(&fit, 1.0).is_err());
    }

    #[test]
    fn mte_averages_to_late_over_complier_interval() {
        let s = grouped([3, 8], &[0.4, 1.7, -0.2, 2.5, 0.9, 1.1, -1.3]);
        for link in LinkFamily::builtins() {
            let fit = cf_fit(&s, &link).unwrap();
            let avg = quad::integrate(|u| mte(&fit, u).unwrap(), fit.p0, fit.p1, 1e-13, 200)
                .unwrap()
                .value
                / (fit.p1 - fit.p0);
            assert!(close(avg, cf_late(&fit).unwrap(), 1e-8), "{}", link.name());
            let m1 = quad::integrate(|u| fit.alpha[1] + fit.gamma[1] * link.centered(u), fit.p0, fit.p1, 1e-13, 200)
                .unwrap()
                .value
                / (fit.p1 - fit.p0);
            assert!(close(m1, cf_po_means(&fit).unwrap().mu_1c, 1e-8));
        }
    }

    #[test]
    fn telser_matches_wald() {
        assert!(close(telser_late(&toy8()).unwrap(), 1.0, 1e-12));
        let s = toy8().map_outcomes(|_, o| o.d_index() as f64).unwrap();
        assert!(close(telser_late(&s).unwrap(), 1.0, 1e-12));
        let s = grouped([2, 7], &[3.0, -1.0, 0.5, 2.2, 1.9, -0.7]);
        assert!(close(telser_late(&s).unwrap(), iv_late(&stats(&s)).unwrap(), 1e-10));
    }

    /// Normal-equations solve by Cramer's rule, independent of the QR path.
    fn ols3(x: &[[f64; 3]], y: &[f64]) -> [f64; 3] {
        let mut a = [[0.0; 3]; 3];
        let mut b = [0.0; 3];
        for (r, yi) in x.iter().zip(y) {
            for i in 0..3 {
                b[i] += r[i] * yi;
                for j in 0..3 {
                    a[i][j] += r[i] * r[j];
                }
            }
        }
        let det = |m: &[[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let d = det(&a);
        let mut out = [0.0; 3];
        for k in 0..3 {
            let mut m = a;
            for i in 0..3 {
                m[i][k] = b[i];
            }
            out[k] = det(&m) / d;
        }
        out
    }

    #[test]
    fn lalonde_symmetric_and_asymmetric() {
        let fit = lalonde_fit(&toy8()).unwrap();
        assert!(close(fit.beta, 1.0, 1e-8), "{fit:?}");

        // P̂(0) = 0.2, P̂(1) = 0.5.
        let s = grouped([2, 5], &[1.3, -0.4, 2.8, 0.1, 0.7, 3.3, -1.2]);
        let st = stats(&s);
        assert_eq!((st.p_hat(0), st.p_hat(1)), (0.2, 0.5));
        let fit = lalonde_fit(&s).unwrap();
        let rows: Vec<[f64; 3]> = s
            .observations()
            .iter()
            .map(|o| {
                let p = st.p_hat(o.z);
                let phi = normal::pdf(normal::quantile(p));
                let h = if o.d { -phi / p } else { phi / (1.0 - p) };
                [1.0, o.d_index() as f64, h]
            })
            .collect();
        let ys: Vec<f64> = s.observations().iter().map(|o| o.y).collect();
        let oracle = ols3(&rows, &ys);
        assert!(close(fit.beta, oracle[1], 1e-10));
        assert!(close(fit.gamma_common, oracle[2], 1e-10));
        assert!((fit.beta - iv_late(&st).unwrap()).abs() > 1e-6);
    }

    #[test]
    fn condition_failures_are_typed() {
        let s = sample(&[(1.0, true, 0), (0.0, false, 0), (1.0, false, 1), (2.0, false, 1)]);
        assert!(matches!(iv_late(&stats(&s)), Err(Error::EmptyCell { z: 1, d: 1, .. })));
        assert!(matches!(cf_fit(&s, &LinkFamily::probit()), Err(Error::EmptyCell { .. })));
        let s = sample(&[(1.0, true, 0), (0.0, false, 0), (1.0, true, 1), (2.0, false, 1)]);
        assert!(matches!(iv_late(&stats(&s)), Err(Error::FirstStage { .. })));
        assert!(matches!(lalonde_fit(&s), Err(Error::FirstStage { .. })));
        let s = sample(&[(1.0, true, 0), (0.0, false, 0), (1.0, true, 2), (2.0, false, 1)]);
        assert!(matches!(telser_late(&s), Err(Error::NotBinaryInstrument { .. })));
    }

    #[test]
    fn weighted_fit_with_unit_weights_is_unweighted_fit() {
        let s = grouped([4, 6], &[0.2, 1.4, -0.9, 2.0, 0.6]);
        let ones = vec![1.0; s.len()];
        for link in LinkFamily::builtins() {
            let a = cf_fit(&s, &link).unwrap();
            let b = cf_fit_weighted(&s, &link, Some(&ones)).unwrap();
            for d in 0..2 {
                assert!(close(a.alpha[d], b.alpha[d], 1e-12));
                assert!(close(a.gamma[d], b.gamma[d], 1e-12));
            }
        }
    }
}
