//! Maximum likelihood for a binary outcome in the saturated LATE model,
//! parameterised directly by the six identified quantities
//! `(π_at, π_c, μ₁at, μ₀nt, μ₁c, μ₀c)`.
//!
//! The likelihood is conditional on `Z` and depends on the data only through
//! the eight `(z, d, y)` counts. When the IV plug-in estimates are feasible
//! they solve the first-order conditions and are returned directly;
//! otherwise a multi-start projected BFGS searches the feasible region.

use rayon::prelude::*;
use serde::Serialize;

use crate::binary::iv_po_means;
use crate::data::{CellStats, Sample};
use crate::error::{Error, Result};

/// Projected-gradient tolerance on the per-observation log likelihood.
pub const PG_TOL: f64 = 1e-9;
const MAX_ITER: usize = 5000;
const N_STARTS: usize = 16;
const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FimlParams {
    pub pi_at: f64,
    pub pi_c: f64,
    pub mu_1at: f64,
    pub mu_0nt: f64,
    pub mu_1c: f64,
    pub mu_0c: f64,
}

impl FimlParams {
    pub fn pi_nt(&self) -> f64 {
        1.0 - self.pi_at - self.pi_c
    }

    pub fn as_array(&self) -> [f64; 6] {
        [self.pi_at, self.pi_c, self.mu_1at, self.mu_0nt, self.mu_1c, self.mu_0c]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        FimlParams {
            pi_at: a[0],
            pi_c: a[1],
            mu_1at: a[2],
            mu_0nt: a[3],
            mu_1c: a[4],
            mu_0c: a[5],
        }
    }

    pub fn is_feasible(&self) -> bool {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        self.pi_at >= 0.0
            && self.pi_c >= 0.0
            && self.pi_at + self.pi_c <= 1.0 + 1e-15
            && [self.mu_1at, self.mu_0nt, self.mu_1c, self.mu_0c].into_iter().all(unit)
    }

    /// Box coordinates `(s, t, μ…)` with `π_at = s`, `π_c = (1 − s) t`.
    fn to_box(self) -> [f64; 6] {
        let s = self.pi_at;
        let t = if s < 1.0 { (self.pi_c / (1.0 - s)).clamp(0.0, 1.0) } else { 0.0 };
        [s, t, self.mu_1at, self.mu_0nt, self.mu_1c, self.mu_0c]
    }

    fn from_box(x: &[f64; 6]) -> Self {
        FimlParams {
            pi_at: x[0],
            pi_c: (1.0 - x[0]) * x[1],
            mu_1at: x[2],
            mu_0nt: x[3],
            mu_1c: x[4],
            mu_0c: x[5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FimlResult {
    pub params: FimlParams,
    pub loglik: f64,
    /// True when the IV plug-ins are feasible and therefore the maximiser.
    pub interior: bool,
    pub late: f64,
    pub converged: bool,
    /// Largest projected-gradient component at the returned point, on the
    /// per-observation scale.
    pub proj_grad: f64,
    /// Set when starts reaching the best log likelihood disagree on the
    /// parameters by more than 1e-6.
    pub tie: bool,
}

/// Counts `n[z][d][y]` of a binary-outcome sample with a binary instrument.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BinaryCounts {
    pub n: [[[u64; 2]; 2]; 2],
}

impl BinaryCounts {
    pub fn from_sample(sample: &Sample) -> Result<Self> {
        if sample.k_max() != 1 {
            return Err(Error::NotBinaryInstrument {
                context: "binary-outcome likelihood",
                k_max: sample.k_max(),
            });
        }
        let mut n = [[[0u64; 2]; 2]; 2];
        for (index, o) in sample.observations().iter().enumerate() {
            let y = match o.y {
                v if v == 0.0 => 0,
                v if v == 1.0 => 1,
                value => return Err(Error::NonBinaryOutcome { index, value }),
            };
            n[o.z][o.d_index()][y] += 1;
        }
        Ok(BinaryCounts { n })
    }

    pub fn total(&self) -> u64 {
        self.n.iter().flatten().flatten().sum()
    }
}

#[inline]
fn bern(mu: f64, y: usize) -> f64 {
    if y == 1 {
        mu
    } else {
        1.0 - mu
    }
}

#[inline]
fn sign(y: usize) -> f64 {
    if y == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Cell probability `Pr(D = d, Y = y | Z = z)`.
fn cell_prob(p: &FimlParams, z: usize, d: usize, y: usize) -> f64 {
    match (z, d) {
        (1, 1) => p.pi_at * bern(p.mu_1at, y) + p.pi_c * bern(p.mu_1c, y),
        (0, 1) => p.pi_at * bern(p.mu_1at, y),
        (1, 0) => p.pi_nt() * bern(p.mu_0nt, y),
        _ => p.pi_nt() * bern(p.mu_0nt, y) + p.pi_c * bern(p.mu_0c, y),
    }
}

/// Log likelihood from the eight counts. A zero-probability cell with a
/// positive count yields `−∞`.
pub fn log_likelihood(params: &FimlParams, counts: &BinaryCounts) -> Result<f64> {
    if !params.is_feasible() {
        return Err(Error::Infeasible(format!("{params:?}")));
    }
    Ok(loglik_unchecked(params, counts))
}

fn loglik_unchecked(p: &FimlParams, c: &BinaryCounts) -> f64 {
    let mut ll = 0.0;
    for z in 0..2 {
        for d in 0..2 {
            for y in 0..2 {
                let n = c.n[z][d][y];
                if n == 0 {
                    continue;
                }
                let q = cell_prob(p, z, d, y);
                if q <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                ll += n as f64 * q.ln();
            }
        }
    }
    ll
}

/// Gradient of the log likelihood in `(π_at, π_c, μ₁at, μ₀nt, μ₁c, μ₀c)`.
fn gradient(p: &FimlParams, c: &BinaryCounts) -> [f64; 6] {
    let mut g = [0.0; 6];
    for z in 0..2 {
        for d in 0..2 {
            for y in 0..2 {
                let n = c.n[z][d][y] as f64;
                if n == 0.0 {
                    continue;
                }
                let w = n / cell_prob(p, z, d, y);
                let s = sign(y);
                match (z, d) {
                    (1, 1) => {
                        g[0] += w * bern(p.mu_1at, y);
                        g[1] += w * bern(p.mu_1c, y);
                        g[2] += w * p.pi_at * s;
                        g[4] += w * p.pi_c * s;
                    }
                    (0, 1) => {
                        g[0] += w * bern(p.mu_1at, y);
                        g[2] += w * p.pi_at * s;
                    }
                    (1, 0) => {
                        g[0] -= w * bern(p.mu_0nt, y);
                        g[1] -= w * bern(p.mu_0nt, y);
                        g[3] += w * p.pi_nt() * s;
                    }
                    _ => {
                        g[0] -= w * bern(p.mu_0nt, y);
                        g[1] += w * (bern(p.mu_0c, y) - bern(p.mu_0nt, y));
                        g[3] += w * p.pi_nt() * s;
                        g[5] += w * p.pi_c * s;
                    }
                }
            }
        }
    }
    g
}

/// Objective for the box optimiser: a subset of the box coordinates is free,
/// the rest are held at `fixed`.
struct Problem<'a> {
    counts: &'a BinaryCounts,
    scale: f64,
    free: Vec<usize>,
    fixed: [f64; 6],
}

impl Problem<'_> {
    fn expand(&self, v: &[f64]) -> [f64; 6] {
        let mut x = self.fixed;
        for (k, &i) in self.free.iter().enumerate() {
            x[i] = v[k];
        }
        x
    }

    /// Negative mean log likelihood and its gradient in the free box coordinates.
    fn eval(&self, v: &[f64]) -> (f64, Vec<f64>) {
        let x = self.expand(v);
        let p = FimlParams::from_box(&x);
        let f = -loglik_unchecked(&p, self.counts) * self.scale;
        if !f.is_finite() {
            return (f64::INFINITY, vec![0.0; v.len()]);
        }
        let g = gradient(&p, self.counts);
        // π_at = s, π_c = (1 − s) t.
        let full = [
            g[0] - x[1] * g[1],
            (1.0 - x[0]) * g[1],
            g[2],
            g[3],
            g[4],
            g[5],
        ];
        (f, self.free.iter().map(|&i| -full[i] * self.scale).collect())
    }
}

fn project(v: &mut [f64]) {
    for x in v.iter_mut() {
        *x = x.clamp(0.0, 1.0);
    }
}

fn proj_grad_norm(v: &[f64], g: &[f64]) -> f64 {
    v.iter()
        .zip(g)
        .map(|(&x, &gi)| ((x - gi).clamp(0.0, 1.0) - x).abs())
        .fold(0.0, f64::max)
}

struct Solution {
    v: Vec<f64>,
    f: f64,
    pg: f64,
    converged: bool,
}

/// Projected BFGS on `[0, 1]^m` with an Armijo search along the projection arc.
fn minimize(prob: &Problem, start: Vec<f64>) -> Solution {
    let m = start.len();
    let mut v = start;
    project(&mut v);
    let (mut f, mut g) = prob.eval(&v);
    if !f.is_finite() {
        return Solution {
            v,
            f,
            pg: f64::INFINITY,
            converged: false,
        };
    }
    let identity = || {
        let mut h = vec![0.0; m * m];
        for i in 0..m {
            h[i * m + i] = 1.0;
        }
        h
    };
    let mut h = identity();
    let mut pg = proj_grad_norm(&v, &g);
    for _ in 0..MAX_ITER {
        if pg <= PG_TOL {
            return Solution {
                v,
                f,
                pg,
                converged: true,
            };
        }
        let bound = 1e-12;
        let active: Vec<bool> = (0..m)
            .map(|i| (v[i] <= bound && g[i] > 0.0) || (v[i] >= 1.0 - bound && g[i] < 0.0))
            .collect();
        let direction = |h: &[f64]| -> Vec<f64> {
            (0..m)
                .map(|i| {
                    if active[i] {
                        return 0.0;
                    }
                    -(0..m).filter(|&j| !active[j]).map(|j| h[i * m + j] * g[j]).sum::<f64>()
                })
                .collect()
        };
        let mut dir = direction(&h);
        if dir.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() >= 0.0 {
            h = identity();
            dir = direction(&h);
        }

        let mut step = line_search(prob, &v, f, &g, &dir);
        if step.is_none() {
            h = identity();
            dir = direction(&h);
            step = line_search(prob, &v, f, &g, &dir);
        }
        let Some((v_new, f_new, g_new)) = step else {
            break;
        };

        let s: Vec<f64> = v_new.iter().zip(&v).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|a| a * a).sum();
        let yy: f64 = y.iter().map(|a| a * a).sum();
        if sy > 1e-12 * (ss * yy).sqrt() {
            bfgs_update(&mut h, &s, &y, sy);
        }
        v = v_new;
        f = f_new;
        g = g_new;
        pg = proj_grad_norm(&v, &g);
    }
    Solution {
        converged: pg <= PG_TOL,
        v,
        f,
        pg,
    }
}

fn line_search(prob: &Problem, v: &[f64], f: f64, g: &[f64], dir: &[f64]) -> Option<(Vec<f64>, f64, Vec<f64>)> {
    let mut alpha = 1.0;
    for _ in 0..80 {
        let mut cand: Vec<f64> = v.iter().zip(dir).map(|(x, d)| x + alpha * d).collect();
        project(&mut cand);
        let decrease: f64 = cand.iter().zip(v).zip(g).map(|((c, x), gi)| gi * (c - x)).sum();
        if decrease < 0.0 {
            let (fc, gc) = prob.eval(&cand);
            if fc <= f + 1e-4 * decrease {
                return Some((cand, fc, gc));
            }
        } else if cand.iter().zip(v).all(|(a, b)| a == b) {
            return None;
        }
        alpha *= 0.5;
    }
    None
}

/// `H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let m = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..m).map(|i| (0..m).map(|j| h[i * m + j] * y[j]).sum()).collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..m {
        for j in 0..m {
            h[i * m + j] += -rho * (s[i] * hy[j] + hy[i] * s[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * inv;
        i /= base;
        inv /= base as f64;
    }
    out
}

/// Halton point `i` in `[0, 1]^m` (first six prime bases).
fn halton(i: u64, m: usize) -> Vec<f64> {
    const BASES: [u64; 6] = [2, 3, 5, 7, 11, 13];
    (0..m).map(|k| radical_inverse(i, BASES[k])).collect()
}

/// IV plug-ins for the six parameters; complier means may fall outside `[0, 1]`.
pub fn iv_candidate(stats: &CellStats) -> Result<FimlParams> {
    let m = iv_po_means(stats)?;
    let (p0, p1) = (stats.p_hat(0), stats.p_hat(1));
    Ok(FimlParams {
        pi_at: p0,
        pi_c: p1 - p0,
        mu_1at: m.mu_1at,
        mu_0nt: m.mu_0nt,
        mu_1c: m.mu_1c,
        mu_0c: m.mu_0c,
    })
}

fn clamp_mus(mut p: FimlParams) -> FimlParams {
    p.mu_1c = p.mu_1c.clamp(0.0, 1.0);
    p.mu_0c = p.mu_0c.clamp(0.0, 1.0);
    p
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FimlOptions {
    /// Run the numerical search even when the IV plug-ins are feasible.
    pub force_search: bool,
}

/// Full-information maximum likelihood over all six parameters.
pub fn fiml_fit(sample: &Sample) -> Result<FimlResult> {
    fiml_fit_with(sample, FimlOptions::default())
}

pub fn fiml_fit_with(sample: &Sample, opts: FimlOptions) -> Result<FimlResult> {
    let counts = BinaryCounts::from_sample(sample)?;
    let stats = CellStats::from_sample(sample)?;
    let iv = iv_candidate(&stats)?;
    let interior = iv.is_feasible();
    if interior && !opts.force_search {
        let loglik = loglik_unchecked(&iv, &counts);
        let prob = Problem {
            counts: &counts,
            scale: 1.0 / counts.total() as f64,
            free: (0..6).collect(),
            fixed: [0.0; 6],
        };
        let v = iv.to_box().to_vec();
        let (_, g) = prob.eval(&v);
        return Ok(FimlResult {
            params: iv,
            loglik,
            interior: true,
            late: iv.mu_1c - iv.mu_0c,
            converged: true,
            proj_grad: proj_grad_norm(&v, &g),
            tie: false,
        });
    }
    let mut starts = vec![clamp_mus(iv).to_box().to_vec()];
    starts.extend((1..N_STARTS as u64).map(|i| halton(i, 6)));
    let prob = Problem {
        counts: &counts,
        scale: 1.0 / counts.total() as f64,
        free: (0..6).collect(),
        fixed: [0.0; 6],
    };
    let mut result = best_of(&prob, starts, counts.total() as f64);
    result.interior = interior;
    Ok(result)
}

/// Runs every start in parallel and merges deterministically: highest log
/// likelihood, then lexicographically smallest parameters among ties.
fn best_of(prob: &Problem, starts: Vec<Vec<f64>>, n: f64) -> FimlResult {
    let sols: Vec<Solution> = starts.into_par_iter().map(|s| minimize(prob, s)).collect();
    let to_params = |s: &Solution| FimlParams::from_box(&prob.expand(&s.v));
    let best_f = sols.iter().map(|s| s.f).fold(f64::INFINITY, f64::min);
    let mut tied: Vec<&Solution> = sols.iter().filter(|s| s.f <= best_f + TIE_TOL).collect();
    tied.sort_by(|a, b| {
        let (pa, pb) = (to_params(a).as_array(), to_params(b).as_array());
        pa.iter()
            .zip(&pb)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let chosen = tied[0];
    let params = to_params(chosen);
    let tie = tied.iter().any(|s| {
        to_params(s)
            .as_array()
            .iter()
            .zip(params.as_array())
            .any(|(a, b)| (a - b).abs() > 1e-6)
    });
    FimlResult {
        params,
        loglik: -chosen.f * n,
        interior: false,
        late: params.mu_1c - params.mu_0c,
        converged: chosen.converged,
        proj_grad: chosen.pg,
        tie,
    }
}

pub fn fiml_late(result: &FimlResult) -> f64 {
    result.params.mu_1c - result.params.mu_0c
}

/// Plug-in likelihood: `π_at = P̂(0)`, `π_c = P̂(1) − P̂(0)` held fixed and
/// the four means maximised over `[0, 1]`.
pub fn limited_info_fit(sample: &Sample) -> Result<FimlResult> {
    let counts = BinaryCounts::from_sample(sample)?;
    let stats = CellStats::from_sample(sample)?;
    let iv = iv_candidate(&stats)?;
    let fixed = iv.to_box();
    let prob = Problem {
        counts: &counts,
        scale: 1.0 / counts.total() as f64,
        free: vec![2, 3, 4, 5],
        fixed,
    };
    let mut starts = vec![clamp_mus(iv).to_box()[2..].to_vec()];
    starts.extend((1..4).map(|i| halton(i, 4)));
    let mut result = best_of(&prob, starts, counts.total() as f64);
    result.interior = iv.is_feasible();
    Ok(result)
}
