//! Link functions `J(·)` on `(0, 1)` and the truncated moments of
//! `J(U) − μ_J` that serve as control functions.
//!
//! For `U` uniform on `(0, 1)`:
//!
//! * `λ_{1ℓ}(p) = E[(J(U) − μ_J)^ℓ | U ≤ p]`
//! * `λ_{0ℓ}(p) = E[(J(U) − μ_J)^ℓ | U > p]`
//! * `Γ_ℓ(p, p′) = [p′ λ_{1ℓ}(p′) − p λ_{1ℓ}(p)] / (p′ − p)`
//!
//! `λ₁ = λ_{11}`, `λ₀ = λ_{01}` and `Γ = Γ_1`. Closed forms are used where
//! they exist; everything else goes through adaptive Gauss–Kronrod
//! quadrature in `u`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;
use crate::quad;

/// Probabilities are clamped into `[PROB_FLOOR, 1 − PROB_FLOOR]` before evaluation.
pub const PROB_FLOOR: f64 = 1e-12;

/// Largest supported polynomial order for [`LinkFamily::lambda_poly`].
pub const MAX_ORDER: u32 = 12;

const MOMENT_ABS_TOL: f64 = 1e-12;
const MOMENT_REL_TOL: f64 = 1e-13;
const MAX_INTERVALS: usize = 4000;

/// Built-in link kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkKind {
    Probit,
    Linear,
    Logit,
    Custom,
}

impl LinkKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LinkKind::Probit => "probit",
            LinkKind::Linear => "linear",
            LinkKind::Logit => "logit",
            LinkKind::Custom => "custom",
        }
    }
}

impl fmt::Display for LinkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LinkKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "probit" | "heckit" | "normal" => Ok(LinkKind::Probit),
            "linear" | "identity" => Ok(LinkKind::Linear),
            "logit" | "logistic" => Ok(LinkKind::Logit),
            other => Err(Error::InvalidLink(format!("unknown link '{other}'"))),
        }
    }
}

type LinkFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A strictly increasing `J: (0, 1) → ℝ` together with `μ_J = E[J(U)]`.
#[derive(Clone)]
pub struct LinkFamily {
    kind: LinkKind,
    name: String,
    custom: Option<LinkFn>,
    mu_j: f64,
}

impl fmt::Debug for LinkFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinkFamily")
            .field("kind", &self.kind)
            .field("name", &self.name)
            .field("mu_j", &self.mu_j)
            .finish()
    }
}

impl PartialEq for LinkFamily {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.name == other.name && self.mu_j == other.mu_j
    }
}

/// A probability after clamping into the evaluable range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clamped {
    pub value: f64,
    pub clamped: bool,
}

/// Rejects `p ∉ (0, 1)` and clamps the rest into `[1e−12, 1 − 1e−12]`.
pub fn clamp_probability(p: f64) -> Result<Clamped> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain {
            what: "probability",
            value: p,
            domain: "(0, 1)",
        });
    }
    let value = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    Ok(Clamped {
        value,
        clamped: value != p,
    })
}

/// True when `p` lies in `(0, 1)` but outside the unclamped range.
pub fn needs_clamp(p: f64) -> bool {
    p > 0.0 && p < 1.0 && !(PROB_FLOOR..=1.0 - PROB_FLOOR).contains(&p)
}

/// A truncated moment with its quadrature error bound (zero for closed forms).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedMoment {
    pub value: f64,
    pub abs_err: f64,
    pub clamped: bool,
}

impl LinkFamily {
    /// Heckit link, `J = Φ⁻¹`, `μ_J = 0`.
    pub fn probit() -> Self {
        Self::builtin(LinkKind::Probit, 0.0)
    }

    /// Identity link, `J(u) = u`, `μ_J = 1/2`.
    pub fn linear() -> Self {
        Self::builtin(LinkKind::Linear, 0.5)
    }

    /// Log-odds link, `J(u) = log(u / (1 − u))`, `μ_J = 0`.
    pub fn logit() -> Self {
        Self::builtin(LinkKind::Logit, 0.0)
    }

    fn builtin(kind: LinkKind, mu_j: f64) -> Self {
        LinkFamily {
            kind,
            name: kind.as_str().to_string(),
            custom: None,
            mu_j,
        }
    }

    /// Built-in link by kind.
    pub fn from_kind(kind: LinkKind) -> Result<Self> {
        match kind {
            LinkKind::Probit => Ok(Self::probit()),
            LinkKind::Linear => Ok(Self::linear()),
            LinkKind::Logit => Ok(Self::logit()),
            LinkKind::Custom => Err(Error::InvalidLink("custom links need a function; use LinkFamily::custom".into())),
        }
    }

    /// All built-in links.
    pub fn builtins() -> [LinkFamily; 3] {
        [Self::probit(), Self::linear(), Self::logit()]
    }

    /// A user-supplied link. `J` must be finite and strictly increasing on a
    /// 99-point grid; `μ_J` is computed once by quadrature.
    pub fn custom<F>(name: impl Into<String>, j: F) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let name = name.into();
        let mut prev = f64::NEG_INFINITY;
        for i in 1..100 {
            let u = i as f64 / 100.0;
            let v = j(u);
            if !v.is_finite() {
                return Err(Error::InvalidLink(format!("{name}: J({u}) = {v} is not finite")));
            }
            if v <= prev {
                return Err(Error::InvalidLink(format!("{name}: J is not strictly increasing near u = {u}")));
            }
            prev = v;
        }
        let lower = quad::integrate_mixed(&j, 0.0, 0.5, 1e-13, 1e-14, MAX_INTERVALS)?;
        let upper = quad::integrate_mixed(&j, 0.5, 1.0, 1e-13, 1e-14, MAX_INTERVALS)?;
        let mu_j = lower.value + upper.value;
        if !mu_j.is_finite() {
            return Err(Error::InvalidLink(format!("{name}: E[J(U)] is not finite")));
        }
        Ok(LinkFamily {
            kind: LinkKind::Custom,
            name,
            custom: Some(Arc::new(j)),
            mu_j,
        })
    }

    pub fn kind(&self) -> LinkKind {
        self.kind
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// `μ_J = E[J(U)]`.
    pub fn mu_j(&self) -> f64 {
        self.mu_j
    }

    /// Raw link value `J(u)`.
    pub fn j(&self, u: f64) -> f64 {
        match self.kind {
            LinkKind::Probit => normal::quantile(u),
            LinkKind::Linear => u,
            LinkKind::Logit => u.ln() - (-u).ln_1p(),
            LinkKind::Custom => (self.custom.as_ref().expect("custom link carries J"))(u),
        }
    }

    /// Centered link `J(u) − μ_J`.
    pub fn centered(&self, u: f64) -> f64 {
        self.j(u) - self.mu_j
    }

    /// `J(1 − v) − μ_J`, evaluated without forming `1 − v` where the link allows.
    fn centered_reflected(&self, v: f64) -> f64 {
        let j = match self.kind {
            LinkKind::Probit => -normal::quantile(v),
            LinkKind::Linear => 1.0 - v,
            LinkKind::Logit => (-v).ln_1p() - v.ln(),
            // Below v = ε/2, 1 − v rounds to 1 where J may be infinite.
            LinkKind::Custom => (self.custom.as_ref().expect("custom link carries J"))((1.0 - v).min(1.0 - f64::EPSILON / 2.0)),
        };
        j - self.mu_j
    }

    /// `λ₁(p) = E[J(U) − μ_J | U ≤ p]`.
    pub fn lambda1(&self, p: f64) -> Result<f64> {
        let p = clamp_probability(p)?.value;
        self.lambda1_inner(p)
    }

    /// `λ₀(p) = E[J(U) − μ_J | U > p] = −λ₁(p) p / (1 − p)`.
    pub fn lambda0(&self, p: f64) -> Result<f64> {
        let p = clamp_probability(p)?.value;
        self.lambda0_inner(p)
    }

    /// `λ_d(p)`: `λ₁` for the treated arm, `λ₀` for the untreated arm.
    pub fn lambda(&self, d: usize, p: f64) -> Result<f64> {
        if d == 1 {
            self.lambda1(p)
        } else {
            self.lambda0(p)
        }
    }

    /// `p` must already be clamped.
    fn lambda1_inner(&self, p: f64) -> Result<f64> {
        Ok(match self.kind {
            LinkKind::Probit => -normal::pdf(normal::quantile(p)) / p,
            LinkKind::Linear => 0.5 * (p - 1.0),
            LinkKind::Logit => (p * p.ln() + (1.0 - p) * (-p).ln_1p()) / p,
            LinkKind::Custom => {
                // Integrate over the shorter side; the two sides sum to zero.
                if p <= 0.5 {
                    self.raw_integral(1, 1, p)?.value / p
                } else {
                    -self.raw_integral(0, 1, p)?.value / p
                }
            }
        })
    }

    fn lambda0_inner(&self, p: f64) -> Result<f64> {
        Ok(-self.lambda1_inner(p)? * p / (1.0 - p))
    }

    /// `Γ(p, p′) = E[J(U) − μ_J | p < U ≤ p′]`.
    pub fn gamma(&self, p: f64, p_prime: f64) -> Result<f64> {
        let lo = clamp_probability(p)?.value;
        let hi = clamp_probability(p_prime)?.value;
        if !(lo < hi) {
            return Err(Error::Ordering { p, p_prime });
        }
        let a = self.lambda1_inner(lo)?;
        let b = self.lambda1_inner(hi)?;
        Ok((hi * b - lo * a) / (hi - lo))
    }

    /// `λ_{dℓ}(p)`, the ℓ-th truncated moment of `J(U) − μ_J`.
    pub fn lambda_poly(&self, d: usize, ell: u32, p: f64) -> Result<f64> {
        self.lambda_poly_moment(d, ell, p).map(|m| m.value)
    }

    /// [`lambda_poly`](Self::lambda_poly) with quadrature diagnostics.
    pub fn lambda_poly_moment(&self, d: usize, ell: u32, p: f64) -> Result<TruncatedMoment> {
        check_order(ell)?;
        let c = clamp_probability(p)?;
        let p = c.value;
        if ell == 1 {
            let value = if d == 1 {
                self.lambda1_inner(p)?
            } else {
                self.lambda0_inner(p)?
            };
            let abs_err = if self.kind == LinkKind::Custom { MOMENT_ABS_TOL } else { 0.0 };
            return Ok(TruncatedMoment {
                value,
                abs_err,
                clamped: c.clamped,
            });
        }
        if self.kind == LinkKind::Linear {
            return Ok(TruncatedMoment {
                value: linear_moment(d, ell, p),
                abs_err: 0.0,
                clamped: c.clamped,
            });
        }
        let width = if d == 1 { p } else { 1.0 - p };
        let m = self.raw_integral(d, ell, p)?;
        Ok(TruncatedMoment {
            value: m.value / width,
            abs_err: m.abs_err / width,
            clamped: c.clamped,
        })
    }

    /// `Γ_ℓ(p, p′) = [p′ λ_{1ℓ}(p′) − p λ_{1ℓ}(p)] / (p′ − p)`.
    pub fn gamma_poly(&self, ell: u32, p: f64, p_prime: f64) -> Result<f64> {
        check_order(ell)?;
        let lo = clamp_probability(p)?.value;
        let hi = clamp_probability(p_prime)?.value;
        if !(lo < hi) {
            return Err(Error::Ordering { p, p_prime });
        }
        if ell == 1 {
            return self.gamma(p, p_prime);
        }
        let a = self.lambda_poly(1, ell, lo)?;
        let b = self.lambda_poly(1, ell, hi)?;
        Ok((hi * b - lo * a) / (hi - lo))
    }

    /// `∫ (J(u) − μ_J)^ℓ du` over `(0, p)` for `d = 1` or `(p, 1)` for `d = 0`,
    /// to an absolute error of `1e−12` times the interval width.
    fn raw_integral(&self, d: usize, ell: u32, p: f64) -> Result<quad::Estimate> {
        // The upper interval is integrated in v = 1 − u so that abscissae
        // accumulate at v = 0, where doubles are dense.
        if d == 1 {
            let f = |u: f64| self.centered(u).powi(ell as i32);
            quad::integrate_mixed(f, 0.0, p, MOMENT_ABS_TOL * p, MOMENT_REL_TOL, MAX_INTERVALS)
        } else {
            let width = 1.0 - p;
            let f = |v: f64| self.centered_reflected(v).powi(ell as i32);
            quad::integrate_mixed(f, 0.0, width, MOMENT_ABS_TOL * width, MOMENT_REL_TOL, MAX_INTERVALS)
        }
    }
}

fn check_order(ell: u32) -> Result<()> {
    if ell == 0 || ell > MAX_ORDER {
        return Err(Error::Domain {
            what: "polynomial order",
            value: ell as f64,
            domain: "1..=12",
        });
    }
    Ok(())
}

/// Closed form for `J(u) = u`: with `a = p − 1/2`,
/// `λ_{1ℓ} = Σ_{k=0}^{ℓ} a^k (−1/2)^{ℓ−k} / (ℓ + 1)` and
/// `λ_{0ℓ} = Σ_{k=0}^{ℓ} (1/2)^k a^{ℓ−k} / (ℓ + 1)`; the telescoped sums
/// avoid dividing by `p` or `1 − p`.
fn linear_moment(d: usize, ell: u32, p: f64) -> f64 {
    let a = p - 0.5;
    let other = if d == 1 { -0.5 } else { 0.5 };
    let (x, y) = if d == 1 { (a, other) } else { (other, a) };
    let mut s = 0.0;
    for k in 0..=ell as i32 {
        s += x.powi(k) * y.powi(ell as i32 - k);
    }
    s / (ell as f64 + 1.0)
}
