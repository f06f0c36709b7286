//! Named estimators and their report entries.

use late_core::binary::{
    cf_extrapolate, cf_fit, cf_late, cf_po_means, iv_late, iv_po_means, lalonde_fit, telser_late,
};
use late_core::covariates::{cf_fit_covariates, late_x_restricted, prop3_decompose, reweighted_late};
use late_core::defier::{defier_fit, defier_late};
use late_core::fiml::{fiml_fit, limited_info_fit, FimlResult};
use late_core::link::needs_clamp;
use late_core::multi::{combination_late2, pairwise_iv_late, poly_cf_fit, poly_cf_late};
use late_core::{CellStats, LinkFamily, LinkKind, Sample};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::Settings;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Iv,
    IvMeans,
    Cf,
    Telser,
    Lalonde,
    PairwiseIv,
    PolyCf,
    Combination,
    CfCovariates,
    Prop3,
    Reweighted,
    Fiml,
    LimitedInfo,
    Defier,
}

const NAMES: [(&str, Kind, bool); 14] = [
    ("iv", Kind::Iv, false),
    ("iv_means", Kind::IvMeans, false),
    ("cf", Kind::Cf, true),
    ("telser", Kind::Telser, false),
    ("lalonde", Kind::Lalonde, false),
    ("pairwise_iv", Kind::PairwiseIv, false),
    ("poly_cf", Kind::PolyCf, true),
    ("combination", Kind::Combination, true),
    ("cf_covariates", Kind::CfCovariates, true),
    ("prop3", Kind::Prop3, true),
    ("reweighted", Kind::Reweighted, true),
    ("fiml", Kind::Fiml, false),
    ("limited_info", Kind::LimitedInfo, false),
    ("defier", Kind::Defier, true),
];

pub fn known_names() -> Vec<&'static str> {
    NAMES.iter().map(|n| n.0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimator {
    /// Report key, e.g. `cf:probit`.
    pub key: String,
    pub kind: Kind,
    pub link: Option<LinkKind>,
}

/// Parses `name` or `name:link`; link-dependent estimators without an
/// explicit link take `default_link`.
pub fn parse(spec: &str, default_link: LinkKind) -> Result<Estimator, CliError> {
    let (name, link) = match spec.split_once(':') {
        Some((n, l)) => (n.trim(), Some(l.trim())),
        None => (spec.trim(), None),
    };
    let &(base, kind, takes_link) = NAMES
        .iter()
        .find(|(n, _, _)| *n == name)
        .ok_or_else(|| CliError::Config(format!("unknown estimator '{spec}' (known: {})", known_names().join(", "))))?;
    let link = match (takes_link, link) {
        (false, None) => None,
        (false, Some(_)) => return Err(CliError::Config(format!("estimator '{base}' does not take a link"))),
        (true, None) => Some(default_link),
        (true, Some(l)) => {
            let k: LinkKind = l.parse().map_err(|e: late_core::Error| CliError::Config(e.to_string()))?;
            if k == LinkKind::Custom {
                return Err(CliError::Config("custom links are not available from the command line".into()));
            }
            Some(k)
        }
    };
    let key = match link {
        Some(l) => format!("{base}:{l}"),
        None => base.to_string(),
    };
    Ok(Estimator { key, kind, link })
}

pub fn parse_all(names: &[String], default_link: LinkKind) -> Result<Vec<Estimator>, CliError> {
    let mut out: Vec<Estimator> = Vec::with_capacity(names.len());
    for n in names {
        let e = parse(n, default_link)?;
        if out.iter().any(|o| o.key == e.key) {
            return Err(CliError::Config(format!("estimator '{}' requested twice", e.key)));
        }
        out.push(e);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    ConditionFailure,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorReport {
    pub status: Status,
    pub estimate: Option<f64>,
    /// Per-subgroup estimates for estimators with more than one target.
    #[serde(skip_serializing_if = "Map::is_empty")]
    pub estimates: Map<String, Value>,
    pub parameters: Value,
    pub diagnostics: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

struct Output {
    estimate: Option<f64>,
    estimates: Map<String, Value>,
    parameters: Value,
    diagnostics: Value,
}

impl Output {
    fn scalar(estimate: f64, parameters: Value, diagnostics: Value) -> Self {
        Output {
            estimate: Some(estimate),
            estimates: Map::new(),
            parameters,
            diagnostics,
        }
    }
}

fn family(link: Option<LinkKind>) -> LinkFamily {
    LinkFamily::from_kind(link.unwrap_or(LinkKind::Probit)).expect("built-in link")
}

fn clamp_flags(p: &[f64]) -> Value {
    json!(p.iter().any(|&v| needs_clamp(v)))
}

fn fiml_output(r: FimlResult) -> Output {
    Output::scalar(
        r.late,
        json!({ "params": r.params, "loglik": r.loglik }),
        json!({
            "interior": r.interior,
            "converged": r.converged,
            "projected_gradient": r.proj_grad,
            "tie": r.tie,
        }),
    )
}

fn run_one(est: &Estimator, sample: &Sample, settings: &Settings) -> late_core::Result<Output> {
    let link = family(est.link);
    Ok(match est.kind {
        Kind::Iv => {
            let st = CellStats::from_sample(sample)?;
            let late = iv_late(&st)?;
            Output::scalar(late, json!({ "p_hat": st.p_hats() }), json!({ "n": sample.len() }))
        }
        Kind::IvMeans => {
            let st = CellStats::from_sample(sample)?;
            let m = iv_po_means(&st)?;
            Output::scalar(m.late(), json!({ "po_means": m }), json!({ "n": sample.len() }))
        }
        Kind::Cf => {
            let fit = cf_fit(sample, &link)?;
            let late = cf_late(&fit)?;
            Output::scalar(
                late,
                json!({
                    "alpha": fit.alpha,
                    "gamma": fit.gamma,
                    "p_hat": [fit.p0, fit.p1],
                    "po_means": cf_po_means(&fit)?,
                    "extrapolation": cf_extrapolate(&fit)?,
                }),
                json!({ "clamped": clamp_flags(&[fit.p0, fit.p1]) }),
            )
        }
        Kind::Telser => Output::scalar(telser_late(sample)?, json!({}), json!({})),
        Kind::Lalonde => {
            let f = lalonde_fit(sample)?;
            Output::scalar(f.beta, json!(f), json!({}))
        }
        Kind::PairwiseIv => {
            let st = CellStats::from_sample(sample)?;
            let mut estimates = Map::new();
            for z in 1..=st.k_max() {
                estimates.insert(format!("z={z}"), json!(pairwise_iv_late(&st, z)?));
            }
            Output {
                estimate: None,
                estimates,
                parameters: json!({ "p_hat": st.p_hats() }),
                diagnostics: json!({}),
            }
        }
        Kind::PolyCf => {
            let order = settings.poly_order.unwrap_or(sample.k_max());
            let fit = poly_cf_fit(sample, &link, order)?;
            let mut estimates = Map::new();
            for z in 1..=sample.k_max() {
                estimates.insert(format!("z={z}"), json!(poly_cf_late(&fit, z)?));
            }
            Output {
                estimate: None,
                estimates,
                parameters: json!({ "delta0": fit.delta[0], "delta1": fit.delta[1], "p_hat": fit.p_hat, "order": order }),
                diagnostics: json!({ "clamped": clamp_flags(&fit.p_hat) }),
            }
        }
        Kind::Combination => {
            let c = combination_late2(sample, &link, settings.xi, settings.bootstrap, settings.seed)?;
            Output::scalar(
                c.estimate,
                json!({ "xi": c.xi_used, "w3": c.w3, "pairwise": c.pairwise }),
                json!({
                    "v1": c.v1, "v2": c.v2, "v12": c.v12,
                    "replicates": c.replicates, "discarded": c.discarded, "warnings": c.warnings,
                }),
            )
        }
        Kind::CfCovariates => {
            let fit = cf_fit_covariates(sample, &link)?;
            let mut estimates = Map::new();
            for cell in &fit.cells {
                estimates.insert(cell_label(&cell.x), json!(late_x_restricted(&fit, &cell.x)?));
            }
            Output {
                estimate: None,
                estimates,
                parameters: json!({ "alpha": fit.alpha, "gamma": fit.gamma, "tau": fit.tau, "absorbed": fit.absorbed }),
                diagnostics: json!({ "cells": fit.cells }),
            }
        }
        Kind::Prop3 => {
            let dec = prop3_decompose(sample, &link)?;
            Output::scalar(dec.restricted_late1, json!(dec), json!({}))
        }
        Kind::Reweighted => {
            let share = z_share_by_cell(sample);
            let r = reweighted_late(sample, &link, |x| share.iter().find(|(k, _)| k == x).map_or(f64::NAN, |c| c.1))?;
            Output::scalar(r.cf, json!({ "iv": r.iv, "cf": r.cf }), json!({ "instrument_propensity": "cell share of z = 1" }))
        }
        Kind::Fiml => fiml_output(fiml_fit(sample)?),
        Kind::LimitedInfo => fiml_output(limited_info_fit(sample)?),
        Kind::Defier => {
            let eta = settings.eta.ok_or(late_core::Error::InvalidSpec("defier requires eta".into()))?;
            let f = defier_fit(sample, &link, eta)?;
            Output::scalar(
                defier_late(&f)?,
                json!({ "kappa": f.kappa, "upsilon": f.upsilon, "eta": f.eta, "alpha": f.alpha, "gamma": f.gamma }),
                json!({}),
            )
        }
    })
}

pub fn cell_label(x: &[f64]) -> String {
    let parts: Vec<String> = x.iter().map(|v| v.to_string()).collect();
    format!("x=({})", parts.join(","))
}

/// Share of `Z = 1` within each distinct covariate value.
fn z_share_by_cell(sample: &Sample) -> Vec<(Vec<f64>, f64)> {
    let mut cells: Vec<(Vec<f64>, [f64; 2])> = Vec::new();
    for o in sample.observations() {
        let slot = match cells.iter().position(|(x, _)| *x == o.x) {
            Some(i) => i,
            None => {
                cells.push((o.x.clone(), [0.0; 2]));
                cells.len() - 1
            }
        };
        cells[slot].1[(o.z == 1) as usize] += 1.0;
    }
    cells.into_iter().map(|(x, n)| (x, n[1] / (n[0] + n[1]))).collect()
}

pub fn run(est: &Estimator, sample: &Sample, settings: &Settings) -> EstimatorReport {
    match run_one(est, sample, settings) {
        Ok(o) => EstimatorReport {
            status: Status::Ok,
            estimate: o.estimate,
            estimates: o.estimates,
            parameters: o.parameters,
            diagnostics: o.diagnostics,
            error: None,
        },
        Err(e) => EstimatorReport {
            status: if e.is_validity_failure() {
                Status::ConditionFailure
            } else {
                Status::Error
            },
            estimate: None,
            estimates: Map::new(),
            parameters: json!({}),
            diagnostics: json!({}),
            error: Some(e.to_string()),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_names_and_links() {
        let e = parse("cf", LinkKind::Logit).unwrap();
        assert_eq!((e.key.as_str(), e.kind, e.link), ("cf:logit", Kind::Cf, Some(LinkKind::Logit)));
        let e = parse("cf:linear", LinkKind::Logit).unwrap();
        assert_eq!(e.key, "cf:linear");
        assert_eq!(parse("iv", LinkKind::Probit).unwrap().key, "iv");
        assert!(parse("iv:probit", LinkKind::Probit).is_err());
        assert!(parse("cf:cauchit", LinkKind::Probit).is_err());
        assert!(matches!(parse("ols", LinkKind::Probit), Err(CliError::Config(m)) if m.contains("unknown estimator")));
        let names = vec!["cf".to_string(), "cf:probit".to_string()];
        assert!(parse_all(&names, LinkKind::Probit).is_err());
    }
}
