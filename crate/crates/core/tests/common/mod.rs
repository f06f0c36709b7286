//! Fixtures and oracles shared by the integration suites and the CLI
//! acceptance harness.
#![allow(dead_code)]

use late_core::dgp::{self, CovariateSpec, DgpSpec, OutcomeModel};
use late_core::{CellStats, Observation, Sample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn sample(rows: &[(f64, bool, usize)]) -> Sample {
    Sample::new(rows.iter().map(|&(y, d, z)| Observation::new(y, d, z)).collect()).unwrap()
}

/// Eight observations with every estimator's LATE equal to one.
pub fn toy8() -> Sample {
    sample(&[
        (2.0, true, 0),
        (0.0, false, 0),
        (1.0, false, 0),
        (-1.0, false, 0),
        (2.0, true, 1),
        (1.0, true, 1),
        (0.0, true, 1),
        (1.0, false, 1),
    ])
}

/// `cells[z][d] = (n, number with Y = 1)`.
pub fn binary_cells(cells: [[(usize, usize); 2]; 2]) -> Sample {
    let mut rows = Vec::new();
    for (z, row) in cells.iter().enumerate() {
        for (d, &(n, ones)) in row.iter().enumerate() {
            rows.extend((0..n).map(|i| ((i < ones) as u8 as f64, d == 1, z)));
        }
    }
    sample(&rows)
}

/// IV complier mean of `Y(1)` equals `(0.6 · 1 − 0.5 · 0.8) / 0.1 = 2`.
pub fn corner_fixture() -> Sample {
    binary_cells([[(5, 2), (5, 4)], [(4, 2), (6, 6)]])
}

/// Ten observations per instrument value, the first `n1[z]` treated;
/// outcomes cycle through `ys`.
pub fn grouped(n1: [usize; 2], ys: &[f64]) -> Sample {
    let mut rows = Vec::new();
    let mut k = 0;
    for (z, &m) in n1.iter().enumerate() {
        for i in 0..10 {
            rows.push((ys[k % ys.len()], i < m, z));
            k += 1;
        }
    }
    sample(&rows)
}

/// `P̂(0) = 0.3`, `P̂(1) = 0.7`.
pub fn lalonde_symmetric() -> Sample {
    grouped([3, 7], &[1.3, -0.4, 2.8, 0.1, 0.7, 3.3, -1.2])
}

/// `P̂(0) = 0.2`, `P̂(1) = 0.5`.
pub fn lalonde_asymmetric() -> Sample {
    grouped([2, 5], &[1.3, -0.4, 2.8, 0.1, 0.7, 3.3, -1.2])
}

/// `P̂(0) = 0.4`, `P̂(1) = 0.6` with distinct outcomes in every cell.
pub fn defier_fixture() -> Sample {
    let mut rows = Vec::new();
    let cells: [(usize, bool, &[f64]); 4] = [
        (0, true, &[2.0, 3.0, 2.5, 4.0]),
        (0, false, &[1.0, 0.5, 1.5, 0.0, 2.0, 1.0]),
        (1, true, &[5.0, 4.5, 6.0, 3.5, 5.5, 4.0]),
        (1, false, &[0.0, -1.0, 0.5, 1.0]),
    ];
    for (z, d, ys) in cells {
        rows.extend(ys.iter().map(|&y| (y, d, z)));
    }
    sample(&rows)
}

fn sorted_propensities<R: Rng>(r: &mut R, levels: usize) -> Vec<f64> {
    loop {
        let mut p: Vec<f64> = (0..levels).map(|_| r.random_range(0.05..0.95)).collect();
        p.sort_by(f64::total_cmp);
        if p.windows(2).all(|w| w[1] - w[0] > 0.05) {
            return p;
        }
    }
}

fn means<R: Rng>(r: &mut R) -> [f64; 2] {
    [r.random_range(-3.0..3.0), r.random_range(-3.0..3.0)]
}

fn valid(s: &Sample) -> bool {
    CellStats::from_sample(s).is_ok_and(|st| st.require_adjacent_conditions().is_ok())
}

/// Draws candidate specs from `seed, seed + 1, …` and keeps the first
/// `count` samples passing the validity conditions.
fn collect<F: Fn(u64) -> Option<Sample>>(count: usize, draw: F) -> Vec<Sample> {
    let mut out = Vec::with_capacity(count);
    let mut seed = 0;
    while out.len() < count {
        if let Some(s) = draw(seed) {
            if valid(&s) {
                out.push(s);
            }
        }
        seed += 1;
        assert!(seed < 100 * count as u64 + 1000, "fixture generator stalled");
    }
    out
}

/// Nonparametric LATE-model samples with a binary instrument, `n ∈ [20, 500]`.
pub fn late_fixtures(count: usize) -> Vec<Sample> {
    collect(count, |seed| {
        let mut r = rng(seed);
        let n = r.random_range(20..=500);
        let mut spec = DgpSpec::binary(
            0.0,
            0.0,
            OutcomeModel::LateNonparametric {
                always: means(&mut r),
                complier: means(&mut r),
                never: means(&mut r),
                sigma: r.random_range(0.0..2.0),
                u_slope: [0.0, 0.0],
            },
        );
        spec.propensities = sorted_propensities(&mut r, 2);
        let z1 = r.random_range(0.2..0.8);
        spec.z_probs = vec![1.0 - z1, z1];
        dgp::gen_late_sample(&spec, n, seed ^ 0x5eed).ok()
    })
}

/// Multi-valued instrument samples with `K + 1` levels.
pub fn multi_fixtures(k: usize, count: usize) -> Vec<Sample> {
    collect(count, |seed| {
        let mut r = rng(seed.wrapping_mul(31).wrapping_add(k as u64));
        let n = r.random_range(100..=600);
        let spec = DgpSpec {
            z_probs: vec![1.0 / (k + 1) as f64; k + 1],
            propensities: sorted_propensities(&mut r, k + 1),
            outcome: OutcomeModel::LateNonparametric {
                always: means(&mut r),
                complier: means(&mut r),
                never: means(&mut r),
                sigma: r.random_range(0.0..1.5),
                u_slope: [r.random_range(-3.0..3.0), r.random_range(-3.0..3.0)],
            },
            covariate: None,
        };
        dgp::gen_late_sample(&spec, n, seed ^ 0xabc).ok()
    })
}

/// Binary instrument, scalar binary covariate with its own propensities
/// and instrument law.
pub fn binary_x_fixtures(count: usize) -> Vec<Sample> {
    let mut out = Vec::with_capacity(count);
    let mut seed = 0u64;
    while out.len() < count {
        let mut r = rng(seed.wrapping_add(7_000));
        let n = r.random_range(120..=600);
        let zx = [r.random_range(0.25..0.75), r.random_range(0.25..0.75)];
        let spec = DgpSpec {
            z_probs: vec![0.5, 0.5],
            propensities: Vec::new(),
            outcome: OutcomeModel::ParametricHeckit {
                alpha: means(&mut r),
                gamma: means(&mut r),
                sigma: [r.random_range(0.2..1.5), r.random_range(0.2..1.5)],
            },
            covariate: Some(CovariateSpec {
                p_x1: r.random_range(0.3..0.7),
                propensities: [sorted_propensities(&mut r, 2), sorted_propensities(&mut r, 2)],
                z_probs: Some([vec![1.0 - zx[0], zx[0]], vec![1.0 - zx[1], zx[1]]]),
                shift: r.random_range(-2.0..2.0),
            }),
        };
        if let Ok(s) = dgp::generate(&spec, n, seed ^ 0x77) {
            let ok = (0..2).all(|x| s.filter(|o| o.x[0] == x as f64).is_ok_and(|c| valid(&c.with_k_max(1))));
            if ok && valid(&s) {
                out.push(s);
            }
        }
        seed += 1;
        assert!(seed < 100 * count as u64 + 1000, "fixture generator stalled");
    }
    out
}

/// Binary-outcome samples whose IV complier means lie in `[0, 1]`.
pub fn interior_binary_fixtures(count: usize) -> Vec<Sample> {
    collect(count, |seed| {
        let mut r = rng(seed.wrapping_add(90_000));
        let n = r.random_range(60..=500);
        let mut u = || r.random_range(0.1..0.9);
        let spec = DgpSpec::binary(
            0.0,
            0.0,
            OutcomeModel::BinaryOutcome {
                always: [u(), u()],
                complier: [u(), u()],
                never: [u(), u()],
            },
        );
        let mut spec = spec;
        spec.propensities = sorted_propensities(&mut r, 2);
        if spec.propensities[1] - spec.propensities[0] < 0.25 {
            return None;
        }
        let s = dgp::gen_binary_sample(&spec, n, seed ^ 0xb1).ok()?;
        let st = CellStats::from_sample(&s).ok()?;
        let m = late_core::binary::iv_po_means(&st).ok()?;
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        (unit(m.mu_1c) && unit(m.mu_0c)).then_some(s)
    })
}

/// `n[z][d][y]`.
pub fn binary_counts(s: &Sample) -> [[[f64; 2]; 2]; 2] {
    let mut n = [[[0.0; 2]; 2]; 2];
    for o in s.observations() {
        n[o.z][o.d as usize][o.y as usize] += 1.0;
    }
    n
}

/// Parameters ordered `(π_at, π_c, μ₁at, μ₀nt, μ₁c, μ₀c)`.
pub type Theta = [f64; 6];
type Counts = [[[f64; 2]; 2]; 2];

fn cell_prob(t: &Theta, z: usize, d: usize, y: usize) -> f64 {
    let b = |mu: f64| if y == 1 { mu } else { 1.0 - mu };
    let nt = 1.0 - t[0] - t[1];
    match (z, d) {
        (1, 1) => t[0] * b(t[2]) + t[1] * b(t[4]),
        (0, 1) => t[0] * b(t[2]),
        (1, 0) => nt * b(t[3]),
        _ => nt * b(t[3]) + t[1] * b(t[5]),
    }
}

/// Brute-force per-observation log likelihood.
pub fn loglik_by_observation(s: &Sample, t: &Theta) -> f64 {
    s.observations()
        .iter()
        .map(|o| cell_prob(t, o.z, o.d as usize, o.y as usize).ln())
        .sum()
}

fn loglik_counts(n: &[[[f64; 2]; 2]; 2], t: &Theta) -> f64 {
    let mut ll = 0.0;
    for z in 0..2 {
        for d in 0..2 {
            for y in 0..2 {
                if n[z][d][y] > 0.0 {
                    let q = cell_prob(t, z, d, y);
                    if q <= 0.0 {
                        return f64::NEG_INFINITY;
                    }
                    ll += n[z][d][y] * q.ln();
                }
            }
        }
    }
    ll
}

fn feasible(t: &Theta) -> bool {
    t.iter().all(|v| (0.0..=1.0).contains(v)) && t[0] + t[1] <= 1.0
}

/// Lattice pattern search over the feasible region.
///
/// From each start (snapped to the lattice of the coarsest step) it moves to
/// the best improving neighbour among single-axis and two-axis steps of
/// size `h`, clamping at the box faces, then shrinks `h` tenfold until
/// `finest` has been searched.
pub fn grid_search(s: &Sample, starts: &[Theta], finest: f64) -> (Theta, f64) {
    let n = binary_counts(s);
    let mut best: Option<(Theta, f64)> = None;
    for start in starts {
        let mut t = start.map(|v| (v.clamp(0.0, 1.0) * 10.0).round() / 10.0);
        if t[0] + t[1] > 1.0 {
            t[1] = 1.0 - t[0];
        }
        let (t, f) = pattern_search(&n, t, 0.1, finest);
        if best.is_none_or(|(_, bf)| f > bf) {
            best = Some((t, f));
        }
    }
    best.unwrap()
}

/// Lattice search with fixed `step` on the lattice through `center`
/// itself (clipped to the feasible box).
pub fn refine_near(s: &Sample, center: Theta, step: f64) -> (Theta, f64) {
    let n = binary_counts(s);
    let mut t = center.map(|v| v.clamp(0.0, 1.0));
    if t[0] + t[1] > 1.0 {
        t[1] = 1.0 - t[0];
    }
    pattern_search(&n, t, step, step)
}

fn pattern_search(n: &Counts, mut t: Theta, mut h: f64, finest: f64) -> (Theta, f64) {
    let mut f = loglik_counts(n, &t);
    while h >= finest * 0.999 {
        loop {
            let mut improved: Option<(Theta, f64)> = None;
            for i in 0..6 {
                for j in i..6 {
                    for si in [-1.0, 1.0] {
                        for sj in [-1.0, 1.0] {
                            if i == j && sj < 0.0 {
                                continue;
                            }
                            let mut c = t;
                            c[i] = (c[i] + si * h).clamp(0.0, 1.0);
                            if j != i {
                                c[j] = (c[j] + sj * h).clamp(0.0, 1.0);
                            }
                            if c == t || !feasible(&c) {
                                continue;
                            }
                            let fc = loglik_counts(n, &c);
                            if fc > improved.map_or(f, |(_, v)| v) {
                                improved = Some((c, fc));
                            }
                        }
                    }
                }
            }
            match improved {
                Some((c, fc)) => {
                    t = c;
                    f = fc;
                }
                None => break,
            }
        }
        h /= 10.0;
    }
    (t, f)
}

/// Default starting points for the lattice oracle: the centre of the
/// region, the clamped IV plug-ins, and the supplied incumbent.
pub fn oracle_starts(s: &Sample, incumbent: Theta) -> Vec<Theta> {
    let st = CellStats::from_sample(s).unwrap();
    let m = late_core::binary::iv_po_means(&st).unwrap();
    let (p0, p1) = (st.p_hat(0), st.p_hat(1));
    let iv = [p0, p1 - p0, m.mu_1at, m.mu_0nt, m.mu_1c, m.mu_0c].map(|v| v.clamp(0.0, 1.0));
    vec![[1.0 / 3.0, 1.0 / 3.0, 0.5, 0.5, 0.5, 0.5], iv, incumbent]
}
