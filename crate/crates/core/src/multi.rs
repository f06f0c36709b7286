//! Multi-valued instruments `Z ∈ {0, …, K}`: pairwise Wald estimates,
//! polynomial control functions, scalar-index IV, and the precision-weighted
//! combination estimator for `K = 3`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::binary::wald_pair;
use crate::data::{CellStats, Sample};
use crate::error::{Error, Result};
use crate::linalg::{least_squares, lu_inverse, NeumaierSum};
use crate::link::{LinkFamily, MAX_ORDER};

/// Polynomial control-function coefficients. `delta[d]` is
/// `(α̂_d, γ̂_{d1}, …, γ̂_{dL})`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyCfFit {
    pub delta: [Vec<f64>; 2],
    pub p_hat: Vec<f64>,
    pub link: LinkFamily,
    pub order: usize,
}

/// Output of [`combination_late2`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Combination {
    pub estimate: f64,
    pub xi_used: f64,
    pub v1: Option<f64>,
    pub v2: Option<f64>,
    pub v12: Option<f64>,
    /// Pairwise Wald estimates for `z = 1, 2, 3`.
    pub pairwise: [f64; 3],
    pub w3: f64,
    pub replicates: usize,
    pub discarded: usize,
    pub warnings: Vec<String>,
}

/// Bootstrap draws allowed per replicate before giving up.
const MAX_ATTEMPTS: usize = 10;

/// Wald estimate of `LATE_z` from the pair `(z − 1, z)`.
pub fn pairwise_iv_late(stats: &CellStats, z: usize) -> Result<f64> {
    check_level(z, stats.k_max())?;
    wald_pair(stats, z - 1, z)
}

fn check_level(z: usize, k_max: usize) -> Result<()> {
    if z == 0 || z > k_max {
        return Err(Error::Domain {
            what: "instrument level",
            value: z as f64,
            domain: "1..=K",
        });
    }
    Ok(())
}

/// `λ_{dℓ}(P̂(z))` for `ℓ = 1..=order`, one row per level.
fn moments(link: &LinkFamily, d: usize, p_hat: &[f64], order: usize) -> Result<Vec<Vec<f64>>> {
    p_hat
        .iter()
        .map(|&p| (1..=order).map(|ell| link.lambda_poly(d, ell as u32, p)).collect())
        .collect()
}

/// `Λ_d`: rows `z = 0..=K` of `(1, λ_{d1}(P̂(z)), …, λ_{dL}(P̂(z)))`.
pub fn lambda_matrix(link: &LinkFamily, d: usize, p_hat: &[f64], order: usize) -> Result<DMatrix<f64>> {
    let m = moments(link, d, p_hat, order)?;
    Ok(DMatrix::from_fn(p_hat.len(), order + 1, |r, c| if c == 0 { 1.0 } else { m[r][c - 1] }))
}

/// `Ψ_d^z`: the weights with `Ψ_d^z′ Ȳ_d` equal to the arm-`d` complier mean
/// for the pair `(z − 1, z)`.
pub fn psi(p_hat: &[f64], d: usize, z: usize) -> Result<DVector<f64>> {
    check_level(z, p_hat.len() - 1)?;
    let (lo, hi) = (p_hat[z - 1], p_hat[z]);
    let dp = hi - lo;
    let mut v = DVector::zeros(p_hat.len());
    if d == 1 {
        v[z - 1] = -lo / dp;
        v[z] = hi / dp;
    } else {
        v[z - 1] = (1.0 - lo) / dp;
        v[z] = -(1.0 - hi) / dp;
    }
    Ok(v)
}

/// `Υ^z = (1, Γ₁, …, Γ_L)` at `(P̂(z − 1), P̂(z))`.
pub fn upsilon(link: &LinkFamily, p_hat: &[f64], z: usize, order: usize) -> Result<DVector<f64>> {
    check_level(z, p_hat.len() - 1)?;
    let mut v = DVector::from_element(order + 1, 1.0);
    for ell in 1..=order {
        v[ell] = link.gamma_poly(ell as u32, p_hat[z - 1], p_hat[z])?;
    }
    Ok(v)
}

fn check_order(order: usize, k_max: usize) -> Result<()> {
    if order == 0 || order > k_max || order > MAX_ORDER as usize {
        return Err(Error::Domain {
            what: "polynomial order",
            value: order as f64,
            domain: "1..=K",
        });
    }
    Ok(())
}

/// Per-arm OLS of `Y` on `[1, λ_{d1}(P̂(Z)), …, λ_{dL}(P̂(Z))]`.
pub fn poly_cf_fit(sample: &Sample, link: &LinkFamily, order: usize) -> Result<PolyCfFit> {
    let stats = CellStats::from_sample(sample)?;
    stats.require_adjacent_conditions()?;
    check_order(order, stats.k_max())?;
    let p_hat = stats.p_hats().to_vec();
    let obs = sample.observations();

    let mut delta: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for d in 0..2 {
        let m = moments(link, d, &p_hat, order)?;
        let rows: Vec<usize> = (0..obs.len()).filter(|&i| obs[i].d_index() == d).collect();
        let x = DMatrix::from_fn(rows.len(), order + 1, |r, c| {
            if c == 0 {
                1.0
            } else {
                m[obs[rows[r]].z][c - 1]
            }
        });
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| obs[i].y));
        let beta = least_squares(&x, &y, None, "polynomial control-function second step")?;
        delta[d] = beta.iter().copied().collect();
    }

    #[cfg(debug_assertions)]
    if order == stats.k_max() {
        let lu = saturated_lu(&stats, link)?;
        for d in 0..2 {
            let scale = 1.0 + lu.delta[d].iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let tol = 1e-8 * scale * lu.condition[d].max(1.0) * 1e-4;
            for (a, b) in delta[d].iter().zip(&lu.delta[d]) {
                debug_assert!((a - b).abs() <= tol.max(1e-8 * scale), "QR {a} vs LU {b}");
            }
        }
    }

    Ok(PolyCfFit {
        delta,
        p_hat,
        link: link.clone(),
        order,
    })
}

/// Saturated coefficients `Λ_d⁻¹ Ȳ_d` by LU with partial pivoting, plus the
/// 1-norm condition number of each `Λ_d`.
#[derive(Debug, Clone)]
pub struct SaturatedSolve {
    pub delta: [Vec<f64>; 2],
    pub condition: [f64; 2],
}

pub fn saturated_lu(stats: &CellStats, link: &LinkFamily) -> Result<SaturatedSolve> {
    stats.require_adjacent_conditions()?;
    let k = stats.k_max();
    let mut delta: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut condition = [0.0; 2];
    for d in 0..2 {
        let lam = lambda_matrix(link, d, stats.p_hats(), k)?;
        let inv = lu_inverse(&lam, "saturated control-function system")?;
        let ybar = DVector::from_fn(k + 1, |z, _| stats.ybar_checked(z, d));
        delta[d] = (&inv * ybar).iter().copied().collect();
        condition[d] = one_norm(&lam) * one_norm(&inv);
    }
    Ok(SaturatedSolve { delta, condition })
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

impl PolyCfFit {
    /// Fitted `E[Y | D = d, Z = z]`.
    pub fn fitted(&self, d: usize, z: usize) -> Result<f64> {
        let mut s = NeumaierSum::new();
        s.add(self.delta[d][0]);
        for ell in 1..=self.order {
            s.add(self.delta[d][ell] * self.link.lambda_poly(d, ell as u32, self.p_hat[z])?);
        }
        Ok(s.value())
    }
}

/// `(α̂₁ − α̂₀) + Σ_ℓ (γ̂_{1ℓ} − γ̂_{0ℓ}) Γ_ℓ(P̂(z − 1), P̂(z))`.
pub fn poly_cf_late(fit: &PolyCfFit, z: usize) -> Result<f64> {
    check_level(z, fit.p_hat.len() - 1)?;
    let mut s = NeumaierSum::new();
    s.add(fit.delta[1][0] - fit.delta[0][0]);
    for ell in 1..=fit.order {
        let g = fit.link.gamma_poly(ell as u32, fit.p_hat[z - 1], fit.p_hat[z])?;
        s.add((fit.delta[1][ell] - fit.delta[0][ell]) * g);
    }
    Ok(s.value())
}

/// IV using the scalar instrument `g(Z)`: `cov(g(Z), Y) / cov(g(Z), D)`.
pub fn weighted_iv_late<G: Fn(usize) -> f64>(sample: &Sample, g: G) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let obs = sample.observations();
    let n = obs.len() as f64;
    let gs: Vec<f64> = obs.iter().map(|o| g(o.z)).collect();
    let mean = |v: &mut dyn Iterator<Item = f64>| v.collect::<NeumaierSum>().value() / n;
    let gbar = mean(&mut gs.iter().copied());
    let ybar = mean(&mut obs.iter().map(|o| o.y));
    let dbar = mean(&mut obs.iter().map(|o| o.d_index() as f64));
    let cov = |f: &dyn Fn(usize) -> f64| (0..obs.len()).map(|i| (gs[i] - gbar) * f(i)).collect::<NeumaierSum>().value();
    let c_y = cov(&|i| obs[i].y - ybar);
    let c_d = cov(&|i| obs[i].d_index() as f64 - dbar);
    let var_g = cov(&|i| gs[i] - gbar);
    let var_d = cov(&|i| obs[i].d_index() as f64 - dbar);
    if gs.iter().all(|&v| v == gs[0]) || c_d.abs() <= 1e-12 * (var_g * var_d).sqrt() || c_d == 0.0 {
        return Err(Error::Degenerate("instrument index has zero first-stage covariance with D".into()));
    }
    Ok(c_y / c_d)
}

/// Per-level cell sums sufficient for the pairwise Wald estimates.
#[derive(Debug, Clone)]
struct CellSums {
    n: Vec<[usize; 2]>,
    s: Vec<[f64; 2]>,
}

impl CellSums {
    fn walds(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let levels = self.n.len();
        let mut p = Vec::with_capacity(levels);
        let mut ybar = Vec::with_capacity(levels);
        for z in 0..levels {
            if self.n[z][0] == 0 || self.n[z][1] == 0 {
                return None;
            }
            let nz = (self.n[z][0] + self.n[z][1]) as f64;
            p.push(self.n[z][1] as f64 / nz);
            ybar.push((self.s[z][0] + self.s[z][1]) / nz);
        }
        if p.windows(2).any(|w| w[1] <= w[0]) {
            return None;
        }
        let walds = (1..levels).map(|z| (ybar[z] - ybar[z - 1]) / (p[z] - p[z - 1])).collect();
        Some((walds, p))
    }
}

/// Interpolation weight `w₃` on `LATE₃` when `LATE₂` is interpolated
/// linearly in `Γ` between `LATE₁` and `LATE₃`.
fn interpolation_weight(link: &LinkFamily, p: &[f64]) -> Result<f64> {
    let g1 = link.gamma(p[0], p[1])?;
    let g2 = link.gamma(p[1], p[2])?;
    let g3 = link.gamma(p[2], p[3])?;
    let den = g3 - g1;
    if !(den.abs() > 1e-12 * (1.0 + g1.abs() + g3.abs())) {
        return Err(Error::Degenerate(format!(
            "interpolation weight undefined: Γ over (P(2), P(3)) equals Γ over (P(0), P(1)) = {g1}"
        )));
    }
    Ok((g2 - g1) / den)
}

/// `ξ · LATE₂ + (1 − ξ) · (w₃ LATE₃ + w₁ LATE₁)` for a four-level instrument.
///
/// Without `xi`, `ξ` minimises the bootstrap variance of the combination
/// using `bootstrap_b` resamples stratified by instrument level. Replicate
/// `b` draws from ChaCha8 stream `b` under `seed`, so results do not depend
/// on thread scheduling.
pub fn combination_late2(
    sample: &Sample,
    link: &LinkFamily,
    xi: Option<f64>,
    bootstrap_b: usize,
    seed: u64,
) -> Result<Combination> {
    if sample.k_max() != 3 {
        return Err(Error::Domain {
            what: "instrument support size K",
            value: sample.k_max() as f64,
            domain: "{3}",
        });
    }
    let stats = CellStats::from_sample(sample)?;
    stats.require_adjacent_conditions()?;
    let late: Vec<f64> = (1..=3).map(|z| pairwise_iv_late(&stats, z)).collect::<Result<_>>()?;
    let w3 = interpolation_weight(link, stats.p_hats())?;
    let interp = |l: &[f64], w3: f64| w3 * l[2] + (1.0 - w3) * l[0];

    let mut warnings = Vec::new();
    let (xi_used, v1, v2, v12, discarded) = match xi {
        Some(x) => {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::Domain {
                    what: "xi",
                    value: x,
                    domain: "[0, 1]",
                });
            }
            (x, None, None, None, 0)
        }
        None => {
            if bootstrap_b < 2 {
                return Err(Error::Domain {
                    what: "bootstrap replicates",
                    value: bootstrap_b as f64,
                    domain: ">= 2",
                });
            }
            let draws = bootstrap(sample, link, bootstrap_b, seed)?;
            let discarded = draws.iter().map(|d| d.2).sum();
            let a: Vec<f64> = draws.iter().map(|d| d.0).collect();
            let b: Vec<f64> = draws.iter().map(|d| d.1).collect();
            let (v1, v2, v12) = moments2(&a, &b);
            let den = v1 + v2 - 2.0 * v12;
            let mut x = (v2 - v12) / den;
            if !(den > 0.0) || !x.is_finite() {
                warnings.push("bootstrap variances are degenerate; using xi = 0.5".to_string());
                x = 0.5;
            } else if !(x > 0.0 && x < 1.0) {
                warnings.push(format!("estimated xi = {x} lies outside (0, 1); clamped to [0.01, 0.99]"));
                x = x.clamp(0.01, 0.99);
            }
            (x, Some(v1), Some(v2), Some(v12), discarded)
        }
    };
    if discarded > 0 {
        warnings.push(format!("{discarded} bootstrap resamples violated the validity conditions and were redrawn"));
    }
    Ok(Combination {
        estimate: xi_used * late[1] + (1.0 - xi_used) * interp(&late, w3),
        xi_used,
        v1,
        v2,
        v12,
        pairwise: [late[0], late[1], late[2]],
        w3,
        replicates: if xi.is_some() { 0 } else { bootstrap_b },
        discarded,
        warnings,
    })
}

/// Sample variances and covariance with divisor `B − 1`.
fn moments2(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let n = a.len() as f64;
    let ma = a.iter().copied().collect::<NeumaierSum>().value() / n;
    let mb = b.iter().copied().collect::<NeumaierSum>().value() / n;
    let s = |f: &dyn Fn(usize) -> f64| (0..a.len()).map(f).collect::<NeumaierSum>().value() / (n - 1.0);
    (
        s(&|i| (a[i] - ma).powi(2)),
        s(&|i| (b[i] - mb).powi(2)),
        s(&|i| (a[i] - ma) * (b[i] - mb)),
    )
}

/// Replicates of `(LATE₂, interpolated LATE₂, discarded draws)`.
fn bootstrap(sample: &Sample, link: &LinkFamily, b: usize, seed: u64) -> Result<Vec<(f64, f64, usize)>> {
    let levels = sample.k_max() + 1;
    let mut groups: Vec<Vec<(usize, f64)>> = vec![Vec::new(); levels];
    for o in sample.observations() {
        groups[o.z].push((o.d_index(), o.y));
    }
    (0..b)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(rep as u64);
            for attempt in 0..MAX_ATTEMPTS {
                let mut sums = CellSums {
                    n: vec![[0; 2]; levels],
                    s: vec![[0.0; 2]; levels],
                };
                for (z, g) in groups.iter().enumerate() {
                    let mut acc = [NeumaierSum::new(); 2];
                    for _ in 0..g.len() {
                        let (d, y) = g[rng.random_range(0..g.len())];
                        sums.n[z][d] += 1;
                        acc[d].add(y);
                    }
                    sums.s[z] = [acc[0].value(), acc[1].value()];
                }
                let Some((walds, p)) = sums.walds() else { continue };
                let Ok(w3) = interpolation_weight(link, &p) else { continue };
                return Ok((walds[1], w3 * walds[2] + (1.0 - w3) * walds[0], attempt));
            }
            Err(Error::Degenerate(format!(
                "bootstrap replicate {rep} violated the validity conditions in {MAX_ATTEMPTS} consecutive draws"
            )))
        })
        .collect()
}
