//! Seeded synthetic data-generating processes.
//!
//! Every generator draws `U ~ Uniform(0, 1)` and assigns treatment by a
//! threshold rule, so compliance types are determined by where `U` falls
//! relative to the propensities. Normal variates come from the inverse-CDF
//! transform in [`crate::normal`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binary::iv_po_means;
use crate::data::{CellStats, Observation, Sample};
use crate::error::{Error, Result};
use crate::normal;

/// Mean outcomes `[Y(0), Y(1)]` for one compliance type.
pub type ArmMeans = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum OutcomeModel {
    /// Type-specific means with Gaussian noise; no restriction on how the
    /// means are ordered across types. `u_slope[d]` adds `slope · U` to
    /// `Y(d)` so effects can vary within the complier interval.
    LateNonparametric {
        always: ArmMeans,
        complier: ArmMeans,
        never: ArmMeans,
        #[serde(default)]
        sigma: f64,
        #[serde(default)]
        u_slope: [f64; 2],
    },
    /// `Y(d) | U ~ N(α_d + γ_d Φ⁻¹(U), σ_d²)`.
    ParametricHeckit {
        alpha: [f64; 2],
        gamma: [f64; 2],
        sigma: [f64; 2],
    },
    /// Bernoulli outcomes with type-specific success probabilities.
    /// `always[0]` and `never[1]` are never observed but are drawn anyway.
    BinaryOutcome {
        always: ArmMeans,
        complier: ArmMeans,
        never: ArmMeans,
    },
    /// `D = 1{κ + δZ ≥ U}` with `δ = η` w.p. `υ` and `−η` otherwise; outcomes
    /// follow the parametric Heckit display. The spec's propensities are
    /// ignored for this variant.
    Defier {
        kappa: f64,
        eta: f64,
        upsilon: f64,
        alpha: [f64; 2],
        gamma: [f64; 2],
        sigma: [f64; 2],
    },
}

/// A scalar binary covariate `X` with its own propensities and instrument law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    /// `Pr(X = 1)`.
    pub p_x1: f64,
    /// `propensities[x][z]`.
    pub propensities: [Vec<f64>; 2],
    /// `z_probs[x][z]`; defaults to the spec-level `z_probs` for both cells.
    #[serde(default)]
    pub z_probs: Option<[Vec<f64>; 2]>,
    /// Added to both potential outcomes when `X = 1`.
    #[serde(default)]
    pub shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    /// `Pr(Z = z)` for `z = 0..=K`.
    pub z_probs: Vec<f64>,
    /// `P(z)`, strictly increasing. Ignored when `covariate` is set.
    #[serde(default)]
    pub propensities: Vec<f64>,
    pub outcome: OutcomeModel,
    #[serde(default)]
    pub covariate: Option<CovariateSpec>,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidSpec(msg.into())
}

fn check_probs(name: &str, probs: &[f64]) -> Result<()> {
    if probs.is_empty() || probs.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
        return Err(invalid(format!("{name} must be non-empty with entries in (0, 1]")));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("{name} sums to {total}, not 1")));
    }
    Ok(())
}

fn check_propensities(name: &str, p: &[f64], levels: usize) -> Result<()> {
    if p.len() != levels {
        return Err(invalid(format!("{name} has {} entries for {levels} instrument levels", p.len())));
    }
    if p.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
        return Err(invalid(format!("{name} must lie in (0, 1)")));
    }
    if p.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid(format!("{name} must be strictly increasing")));
    }
    Ok(())
}

impl DgpSpec {
    /// Binary instrument with `Pr(Z = 1) = 1/2`.
    pub fn binary(p0: f64, p1: f64, outcome: OutcomeModel) -> Self {
        DgpSpec {
            z_probs: vec![0.5, 0.5],
            propensities: vec![p0, p1],
            outcome,
            covariate: None,
        }
    }

    pub fn k_max(&self) -> usize {
        self.z_probs.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        check_probs("z_probs", &self.z_probs)?;
        let levels = self.z_probs.len();
        if levels < 2 {
            return Err(invalid("the instrument needs at least two levels"));
        }
        match &self.covariate {
            Some(c) => {
                if !(c.p_x1 > 0.0 && c.p_x1 < 1.0) {
                    return Err(invalid("covariate.p_x1 must lie in (0, 1)"));
                }
                for x in 0..2 {
                    check_propensities(&format!("covariate.propensities[{x}]"), &c.propensities[x], levels)?;
                    if let Some(zp) = &c.z_probs {
                        check_probs(&format!("covariate.z_probs[{x}]"), &zp[x])?;
                        if zp[x].len() != levels {
                            return Err(invalid(format!("covariate.z_probs[{x}] has the wrong length")));
                        }
                    }
                }
                if !c.shift.is_finite() {
                    return Err(invalid("covariate.shift must be finite"));
                }
            }
            None if !matches!(self.outcome, OutcomeModel::Defier { .. }) => {
                check_propensities("propensities", &self.propensities, levels)?;
            }
            None => {}
        }
        let nonneg = |s: &[f64]| s.iter().all(|&v| v >= 0.0 && v.is_finite());
        match &self.outcome {
            OutcomeModel::LateNonparametric { sigma, .. } => {
                if !nonneg(&[*sigma]) {
                    return Err(invalid("sigma must be non-negative"));
                }
            }
            OutcomeModel::ParametricHeckit { sigma, .. } => {
                if !nonneg(sigma) {
                    return Err(invalid("sigma must be non-negative"));
                }
            }
            OutcomeModel::BinaryOutcome {
                always,
                complier,
                never,
            } => {
                if [always, complier, never].iter().flat_map(|a| a.iter()).any(|&m| !(0.0..=1.0).contains(&m)) {
                    return Err(invalid("binary outcome means must lie in [0, 1]"));
                }
            }
            OutcomeModel::Defier {
                kappa,
                eta,
                upsilon,
                sigma,
                ..
            } => {
                if levels != 2 || self.covariate.is_some() {
                    return Err(invalid("the defier variant needs a binary instrument and no covariate"));
                }
                if !(*eta > 0.0) || !(kappa - eta > 0.0 && kappa + eta < 1.0) {
                    return Err(invalid("defier thresholds kappa +/- eta must lie in (0, 1)"));
                }
                if !(0.0..=1.0).contains(upsilon) {
                    return Err(invalid("upsilon must lie in [0, 1]"));
                }
                if !nonneg(sigma) {
                    return Err(invalid("sigma must be non-negative"));
                }
            }
        }
        Ok(())
    }
}

/// Uniform draw on the open interval `(0, 1)`.
fn open_unit<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

fn std_normal<R: Rng>(rng: &mut R) -> f64 {
    normal::quantile(open_unit(rng))
}

fn categorical<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

/// Draws `n` observations. Deterministic in `(spec, n, seed)`; conditions
/// on the resulting sample are not checked.
pub fn generate(spec: &DgpSpec, n: usize, seed: u64) -> Result<Sample> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = spec.k_max();
    let mut obs = Vec::with_capacity(n);
    for _ in 0..n {
        let x = spec.covariate.as_ref().map(|c| (rng.random::<f64>() < c.p_x1) as usize);
        let (z_probs, prop): (&[f64], &[f64]) = match (&spec.covariate, x) {
            (Some(c), Some(x)) => (
                c.z_probs.as_ref().map_or(&spec.z_probs[..], |zp| &zp[x][..]),
                &c.propensities[x][..],
            ),
            _ => (&spec.z_probs[..], &spec.propensities[..]),
        };
        let z = categorical(&mut rng, z_probs);
        let u = open_unit(&mut rng);
        let (d, y) = match &spec.outcome {
            OutcomeModel::LateNonparametric {
                always,
                complier,
                never,
                sigma,
                u_slope,
            } => {
                let d = u <= prop[z];
                let group = if u <= prop[0] {
                    always
                } else if u > prop[k] {
                    never
                } else {
                    complier
                };
                let di = d as usize;
                (d, group[di] + u_slope[di] * u + sigma * std_normal(&mut rng))
            }
            OutcomeModel::ParametricHeckit { alpha, gamma, sigma } => {
                let d = u <= prop[z];
                let di = d as usize;
                (d, alpha[di] + gamma[di] * normal::quantile(u) + sigma[di] * std_normal(&mut rng))
            }
            OutcomeModel::BinaryOutcome {
                always,
                complier,
                never,
            } => {
                let d = u <= prop[z];
                let group = if u <= prop[0] {
                    always
                } else if u > prop[k] {
                    never
                } else {
                    complier
                };
                let y = rng.random::<f64>() < group[d as usize];
                (d, y as u8 as f64)
            }
            OutcomeModel::Defier {
                kappa,
                eta,
                upsilon,
                alpha,
                gamma,
                sigma,
            } => {
                let delta = if rng.random::<f64>() < *upsilon { *eta } else { -eta };
                let d = u <= kappa + delta * z as f64;
                let di = d as usize;
                (d, alpha[di] + gamma[di] * normal::quantile(u) + sigma[di] * std_normal(&mut rng))
            }
        };
        let y = y + x.map_or(0.0, |x| x as f64 * spec.covariate.as_ref().unwrap().shift);
        obs.push(match x {
            Some(x) => Observation::with_covariates(y, d, z, vec![x as f64]),
            None => Observation::new(y, d, z),
        });
    }
    Ok(Sample::new(obs)?.with_k_max(k))
}

fn require_variant(spec: &DgpSpec, ok: bool, name: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(invalid(format!("{name} called with a {:?} spec", spec.outcome)))
    }
}

pub fn gen_late_sample(spec: &DgpSpec, n: usize, seed: u64) -> Result<Sample> {
    require_variant(spec, matches!(spec.outcome, OutcomeModel::LateNonparametric { .. }), "gen_late_sample")?;
    generate(spec, n, seed)
}

pub fn gen_parametric_sample(spec: &DgpSpec, n: usize, seed: u64) -> Result<Sample> {
    require_variant(spec, matches!(spec.outcome, OutcomeModel::ParametricHeckit { .. }), "gen_parametric_sample")?;
    generate(spec, n, seed)
}

pub fn gen_binary_sample(spec: &DgpSpec, n: usize, seed: u64) -> Result<Sample> {
    require_variant(spec, matches!(spec.outcome, OutcomeModel::BinaryOutcome { .. }), "gen_binary_sample")?;
    generate(spec, n, seed)
}

pub fn gen_defier_sample(spec: &DgpSpec, n: usize, seed: u64) -> Result<Sample> {
    require_variant(spec, matches!(spec.outcome, OutcomeModel::Defier { .. }), "gen_defier_sample")?;
    generate(spec, n, seed)
}

/// Rejection sampler for binary-outcome samples whose IV complier mean of
/// `Y(1)` exceeds one. Tries seeds `seed, seed + 1, …` and returns the
/// sample with the seed that produced it.
pub fn corner_binary_sample(spec: &DgpSpec, n: usize, seed: u64, max_tries: u64) -> Result<(Sample, u64)> {
    for s in seed..seed.saturating_add(max_tries) {
        let sample = gen_binary_sample(spec, n, s)?;
        let Ok(stats) = CellStats::from_sample(&sample) else {
            continue;
        };
        if let Ok(m) = iv_po_means(&stats) {
            if m.mu_1c > 1.0 {
                return Ok((sample, s));
            }
        }
    }
    Err(Error::Degenerate(format!(
        "no corner sample in {max_tries} draws starting at seed {seed}"
    )))
}
