//! Observations, samples, and the per-(z, d) cell statistics every
//! estimator is built from.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::NeumaierSum;

/// One unit: outcome, binary treatment, instrument level, and covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub y: f64,
    pub d: bool,
    pub z: usize,
    #[serde(default)]
    pub x: Vec<f64>,
}

impl Observation {
    pub fn new(y: f64, d: bool, z: usize) -> Self {
        Observation { y, d, z, x: Vec::new() }
    }

    pub fn with_covariates(y: f64, d: bool, z: usize, x: Vec<f64>) -> Self {
        Observation { y, d, z, x }
    }

    #[inline]
    pub fn d_index(&self) -> usize {
        self.d as usize
    }
}

/// Immutable, validated collection of observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    observations: Vec<Observation>,
    k_max: usize,
    x_dim: usize,
}

impl Sample {
    /// Validates and wraps observations. `K` is the largest instrument value seen.
    pub fn new(observations: Vec<Observation>) -> Result<Self> {
        let first = observations.first().ok_or(Error::EmptySample)?;
        let x_dim = first.x.len();
        let mut k_max = 0;
        for (index, obs) in observations.iter().enumerate() {
            if !obs.y.is_finite() {
                return Err(Error::InvalidObservation {
                    index,
                    reason: format!("outcome {} is not finite", obs.y),
                });
            }
            if obs.x.len() != x_dim {
                return Err(Error::InvalidObservation {
                    index,
                    reason: format!("covariate dimension {} differs from {}", obs.x.len(), x_dim),
                });
            }
            if let Some(v) = obs.x.iter().find(|v| !v.is_finite()) {
                return Err(Error::InvalidObservation {
                    index,
                    reason: format!("covariate value {v} is not finite"),
                });
            }
            k_max = k_max.max(obs.z);
        }
        Ok(Sample {
            observations,
            k_max,
            x_dim,
        })
    }

    /// Builds a covariate-free sample from parallel `(y, d, z)` slices.
    pub fn from_columns(y: &[f64], d: &[bool], z: &[usize]) -> Result<Self> {
        if y.len() != d.len() || y.len() != z.len() {
            return Err(Error::InvalidObservation {
                index: y.len().min(d.len()).min(z.len()),
                reason: "column lengths differ".into(),
            });
        }
        Sample::new(
            y.iter()
                .zip(d)
                .zip(z)
                .map(|((&y, &d), &z)| Observation::new(y, d, z))
                .collect(),
        )
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Largest instrument value `K`.
    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn x_dim(&self) -> usize {
        self.x_dim
    }

    /// Subsample of the observations satisfying `keep`, keeping this
    /// sample's `K` so that instrument levels stay aligned.
    pub fn filter<F: Fn(&Observation) -> bool>(&self, keep: F) -> Result<Sample> {
        let observations: Vec<_> = self.observations.iter().filter(|o| keep(o)).cloned().collect();
        if observations.is_empty() {
            return Err(Error::EmptySample);
        }
        Ok(Sample {
            observations,
            k_max: self.k_max,
            x_dim: self.x_dim,
        })
    }

    /// Same observations with every outcome replaced by `f(i, obs)`.
    pub fn map_outcomes<F: Fn(usize, &Observation) -> f64>(&self, f: F) -> Result<Sample> {
        Sample::new(
            self.observations
                .iter()
                .enumerate()
                .map(|(i, o)| Observation {
                    y: f(i, o),
                    ..o.clone()
                })
                .collect(),
        )
    }

    /// Treats `K` as at least `k_max`, for subsamples that lost their top level.
    pub fn with_k_max(mut self, k_max: usize) -> Self {
        self.k_max = self.k_max.max(k_max);
        self
    }
}

/// Per-(z, d) cell counts, outcome means, and per-z treatment rates.
///
/// When built from weights, `mass` holds the summed weights and all means and
/// rates are weighted; `counts` always hold raw observation counts.
#[derive(Debug, Clone, PartialEq)]
pub struct CellStats {
    k_max: usize,
    counts: Vec<[usize; 2]>,
    mass: Vec<[f64; 2]>,
    ybar: Vec<[Option<f64>; 2]>,
    ybar_z: Vec<f64>,
    p_hat: Vec<f64>,
}

impl CellStats {
    /// Tabulates cell statistics. Every level `0..=K` must be present.
    pub fn from_sample(sample: &Sample) -> Result<Self> {
        Self::build(sample, None)
    }

    /// Weighted tabulation; `weights` aligns with the sample's observations.
    pub fn from_weighted(sample: &Sample, weights: &[f64]) -> Result<Self> {
        if weights.len() != sample.len() {
            return Err(Error::InvalidObservation {
                index: weights.len().min(sample.len()),
                reason: "weight vector length differs from sample size".into(),
            });
        }
        if let Some((index, w)) = weights.iter().enumerate().find(|(_, w)| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidObservation {
                index,
                reason: format!("weight {w} is not positive"),
            });
        }
        Self::build(sample, Some(weights))
    }

    fn build(sample: &Sample, weights: Option<&[f64]>) -> Result<Self> {
        if sample.is_empty() {
            return Err(Error::EmptySample);
        }
        let levels = sample.k_max() + 1;
        let mut counts = vec![[0usize; 2]; levels];
        let mut mass = vec![[NeumaierSum::new(); 2]; levels];
        let mut ysum = vec![[NeumaierSum::new(); 2]; levels];
        for (i, obs) in sample.observations().iter().enumerate() {
            let w = weights.map_or(1.0, |w| w[i]);
            let d = obs.d_index();
            counts[obs.z][d] += 1;
            mass[obs.z][d].add(w);
            ysum[obs.z][d].add(w * obs.y);
        }
        let mut out_mass = Vec::with_capacity(levels);
        let mut ybar = Vec::with_capacity(levels);
        let mut ybar_z = Vec::with_capacity(levels);
        let mut p_hat = Vec::with_capacity(levels);
        for z in 0..levels {
            let n_z = counts[z][0] + counts[z][1];
            if n_z == 0 {
                return Err(Error::MissingInstrumentLevel { z });
            }
            let m = [mass[z][0].value(), mass[z][1].value()];
            let s = [ysum[z][0].value(), ysum[z][1].value()];
            let cell = |d: usize| (counts[z][d] > 0).then(|| s[d] / m[d]);
            ybar.push([cell(0), cell(1)]);
            let total = m[0] + m[1];
            ybar_z.push((s[0] + s[1]) / total);
            // Unweighted propensities are exact count ratios.
            p_hat.push(match weights {
                None => counts[z][1] as f64 / n_z as f64,
                Some(_) => m[1] / total,
            });
            out_mass.push(m);
        }
        Ok(CellStats {
            k_max: sample.k_max(),
            counts,
            mass: out_mass,
            ybar,
            ybar_z,
            p_hat,
        })
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    /// Number of observations in cell (z, d).
    pub fn n(&self, z: usize, d: usize) -> usize {
        self.counts[z][d]
    }

    /// Observations with `Z = z`.
    pub fn n_z(&self, z: usize) -> usize {
        self.counts[z][0] + self.counts[z][1]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().map(|c| c[0] + c[1]).sum()
    }

    /// Summed weight in cell (z, d); equals the count when unweighted.
    pub fn mass(&self, z: usize, d: usize) -> f64 {
        self.mass[z][d]
    }

    /// Cell mean `Ȳ_d^z`, `None` for an empty cell.
    pub fn ybar(&self, z: usize, d: usize) -> Option<f64> {
        self.ybar[z][d]
    }

    /// Mean outcome among `Z = z`.
    pub fn mean_y(&self, z: usize) -> f64 {
        self.ybar_z[z]
    }

    /// Empirical treatment rate `P̂(z)`.
    pub fn p_hat(&self, z: usize) -> f64 {
        self.p_hat[z]
    }

    pub fn p_hats(&self) -> &[f64] {
        &self.p_hat
    }

    /// Cell mean for a cell known to be nonempty (after validity checks).
    pub(crate) fn ybar_checked(&self, z: usize, d: usize) -> f64 {
        self.ybar[z][d].expect("cell emptiness is ruled out by the validity checks")
    }

    /// Errors unless both validity conditions hold for `(z_low, z_high)`.
    pub fn require_conditions(&self, z_low: usize, z_high: usize) -> Result<()> {
        for z in [z_low, z_high] {
            if z > self.k_max {
                return Err(Error::MissingInstrumentLevel { z });
            }
        }
        for z in [z_low, z_high] {
            for d in 0..2 {
                if self.counts[z][d] == 0 {
                    return Err(Error::EmptyCell {
                        z_low,
                        z_high,
                        z,
                        d: d as u8,
                    });
                }
            }
        }
        if !check_condition1(self, z_low, z_high) {
            return Err(Error::FirstStage {
                z_low,
                z_high,
                p_low: self.p_hat[z_low],
                p_high: self.p_hat[z_high],
            });
        }
        Ok(())
    }

    /// Checks both conditions for every adjacent pair `(z−1, z)`.
    pub fn require_adjacent_conditions(&self) -> Result<()> {
        (1..=self.k_max).try_for_each(|z| self.require_conditions(z - 1, z))
    }
}

/// Strict first-stage ordering `P̂(z_high) > P̂(z_low)`.
pub fn check_condition1(stats: &CellStats, z_low: usize, z_high: usize) -> bool {
    z_low <= stats.k_max && z_high <= stats.k_max && stats.p_hat(z_high) > stats.p_hat(z_low)
}

/// All four cells over `{z_low, z_high} × {0, 1}` are nonempty.
pub fn check_condition2(sample: &Sample, z_low: usize, z_high: usize) -> bool {
    let mut seen = [[false; 2]; 2];
    for obs in sample.observations() {
        let slot = if obs.z == z_low {
            0
        } else if obs.z == z_high {
            1
        } else {
            continue;
        };
        seen[slot][obs.d_index()] = true;
    }
    seen.iter().all(|row| row[0] && row[1])
}
