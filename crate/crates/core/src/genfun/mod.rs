//! Generating functions of monotone twists.
//!
//! A positive monotone twist is built from a seed `H(ω, a)` with
//! `H(ω, 0) = 0`, `H > 0` up to `η(ω) = inf{a > 0 : H(ω, a) = 2}`:
//!
//! ```text
//! σ(ω) = η − ½∫₀^η H da,   Q⁻ = −σ,   Q⁺ = η − σ,
//! L(ω, v) = ∫₀^{v+σ} H da − v,   𝒢(q, Q) = L(τ_q ω, Q − q),
//! F(q, −𝒢_q) = (Q, 𝒢_Q).
//! ```

mod composite;
mod extract;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::environment::{Environment, FourierObservable, Profile, StationaryObservable};
use crate::error::{Error, Result};
use crate::numerics::{adaptive_simpson, bisect, newton_bracketed, BISECTION_TOL, SIMPSON_TOL};
use crate::twist::{MonotoneSign, Provenance, StripMap, StripPoint, TwistMapHandle};

pub use composite::{
    compose_genfuns, Action, CompositeGenFun, DomainStrata, Factor, InclusionMargins, KMap, KValue, Side,
    Stratum, STRATUM_TOL,
};
pub use extract::{genfun_from_twist, ExtractedGenFun};

/// Largest `a` searched for `H(ω, a) = 2`.
pub const A_MAX: f64 = 1e6;
/// Slack on the closed domain `[Q⁻, Q⁺]`.
pub const DOMAIN_SLACK: f64 = 1e-12;
const ETA_SCAN: usize = 64;

/// Value and first partials of `L(τ_q ω, v)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LValue {
    pub l: f64,
    pub l_v: f64,
    pub l_w: f64,
}

/// `𝒢(x, y)` with `g_x = ∂𝒢/∂x`, `g_y = ∂𝒢/∂y`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GValue {
    pub g: f64,
    pub g_x: f64,
    pub g_y: f64,
}

/// Generating function of a positive monotone twist.
pub trait GeneratingFunction: Send + Sync {
    /// `L(τ_q ω, v)` and its partials.
    fn eval_l(&self, env: &Environment, q: f64, v: f64) -> Result<LValue>;

    /// `[Q⁻(τ_q ω), Q⁺(τ_q ω)]`.
    fn domain(&self, env: &Environment, q: f64) -> Result<[f64; 2]>;

    /// The positive monotone twist generated.
    fn twist(&self) -> TwistMapHandle;

    fn describe(&self) -> String;

    /// `𝒢(x, y) = L(τ_x ω, y − x)`.
    fn eval_g(&self, env: &Environment, x: f64, y: f64) -> Result<GValue> {
        let l = self.eval_l(env, x, y - x)?;
        Ok(GValue { g: l.l, g_x: l.l_w - l.l_v, g_y: l.l_v })
    }
}

/// Dependence of a seed term on `a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AProfile {
    /// `c a`.
    Linear { c: f64 },
    /// `c a^k`, `k > 0`.
    Power { c: f64, k: f64 },
    /// `c a / (1 + a)`.
    Saturating { c: f64 },
    /// `Σ coeffs[j] a^j` with `coeffs[0] = 0`.
    Poly { coeffs: Vec<f64> },
}

impl AProfile {
    fn validate(&self) -> Result<()> {
        let ok = match self {
            AProfile::Linear { c } | AProfile::Saturating { c } => c.is_finite(),
            AProfile::Power { c, k } => c.is_finite() && k.is_finite() && *k > 0.0,
            AProfile::Poly { coeffs } => {
                if coeffs.first().is_some_and(|&c0| c0 != 0.0) {
                    return Err(Error::SeedInvalid("polynomial a-profile must vanish at a = 0".into()));
                }
                !coeffs.is_empty() && coeffs.iter().all(|c| c.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::SeedInvalid(format!("bad a-profile {self:?}")))
        }
    }

    /// Value and derivative at `a ≥ 0`.
    pub fn eval(&self, a: f64) -> (f64, f64) {
        match self {
            AProfile::Linear { c } => (c * a, *c),
            AProfile::Power { c, k } => {
                if a <= 0.0 {
                    (0.0, if *k == 1.0 { *c } else if *k > 1.0 { 0.0 } else { f64::INFINITY })
                } else {
                    (c * a.powf(*k), c * k * a.powf(k - 1.0))
                }
            }
            AProfile::Saturating { c } => (c * a / (1.0 + a), c / ((1.0 + a) * (1.0 + a))),
            AProfile::Poly { coeffs } => {
                let (mut v, mut d) = (0.0, 0.0);
                for &c in coeffs.iter().rev() {
                    d = d * a + v;
                    v = v * a + c;
                }
                (v, d)
            }
        }
    }
}

/// One term `A(a) · m(τ_q ω)` of a seed; `m ≡ 1` when absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedTerm {
    pub profile: AProfile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modulation: Option<StationaryObservable>,
}

/// `H(ω, a) = Σ_k A_k(a) m_k(ω)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSpec {
    pub terms: Vec<SeedTerm>,
}

impl SeedSpec {
    pub fn validate(&self) -> Result<()> {
        if self.terms.is_empty() {
            return Err(Error::SeedInvalid("seed has no terms".into()));
        }
        for t in &self.terms {
            t.profile.validate()?;
            if let Some(m) = &t.modulation {
                if m.needs_p() {
                    return Err(Error::SeedInvalid("seed modulations may not depend on p".into()));
                }
                if !m.differentiable() {
                    return Err(Error::SeedInvalid("seed modulations must be C¹".into()));
                }
            }
        }
        Ok(())
    }

    /// `H(ω, a) = a`.
    pub fn linear() -> Self {
        Self { terms: vec![SeedTerm { profile: AProfile::Linear { c: 1.0 }, modulation: None }] }
    }

    /// `H(ω, a) = a · c₀ (1 + ε cos 2πθ₁)` on a `k`-torus.
    pub fn cosine_modulated(c0: f64, eps: f64, k: usize) -> Self {
        let mut mode = vec![0; k];
        mode[0] = 1;
        let mut c = FourierObservable::constant(k, c0);
        c.push_cosine(mode, c0 * eps, 0.0, Profile::One);
        Self::modulated_linear(c.into())
    }

    /// `H(ω, a) = a · c(ω)`.
    pub fn modulated_linear(c: StationaryObservable) -> Self {
        Self { terms: vec![SeedTerm { profile: AProfile::Linear { c: 1.0 }, modulation: Some(c) }] }
    }
}

/// Seed data frozen at one base point `τ_q ω`, with `η`, `σ` and `σ′`.
#[derive(Clone, Debug)]
pub struct Fiber<'a> {
    profiles: Vec<&'a AProfile>,
    coef: Vec<f64>,
    dcoef: Vec<f64>,
    pub eta: f64,
    pub sigma: f64,
    /// `σ′ = −½ ∫₀^η H_ω da`.
    pub dsigma: f64,
}

impl Fiber<'_> {
    pub fn h(&self, a: f64) -> f64 {
        self.profiles.iter().zip(&self.coef).map(|(p, c)| c * p.eval(a).0).sum()
    }

    pub fn h_a(&self, a: f64) -> f64 {
        self.profiles.iter().zip(&self.coef).map(|(p, c)| c * p.eval(a).1).sum()
    }

    pub fn h_w(&self, a: f64) -> f64 {
        self.profiles.iter().zip(&self.dcoef).map(|(p, c)| c * p.eval(a).0).sum()
    }

    pub fn q_minus(&self) -> f64 {
        -self.sigma
    }

    pub fn q_plus(&self) -> f64 {
        self.eta - self.sigma
    }
}

/// Generating function built from a seed.
#[derive(Clone, Debug, PartialEq)]
pub struct MonotoneGenFun {
    seed: SeedSpec,
    tol: f64,
}

impl MonotoneGenFun {
    pub fn new(seed: SeedSpec) -> Result<Self> {
        Self::with_tolerance(seed, SIMPSON_TOL)
    }

    pub fn with_tolerance(seed: SeedSpec, tol: f64) -> Result<Self> {
        seed.validate()?;
        if !(tol > 0.0) {
            return Err(Error::InvalidSpec(format!("quadrature tolerance must be positive, got {tol}")));
        }
        Ok(Self { seed, tol })
    }

    pub fn seed(&self) -> &SeedSpec {
        &self.seed
    }

    pub fn tolerance(&self) -> f64 {
        self.tol
    }

    /// Seed data at `τ_q ω`.
    pub fn fiber(&self, env: &Environment, q: f64) -> Result<Fiber<'_>> {
        let n = self.seed.terms.len();
        let mut coef = Vec::with_capacity(n);
        let mut dcoef = Vec::with_capacity(n);
        for t in &self.seed.terms {
            match &t.modulation {
                None => {
                    coef.push(1.0);
                    dcoef.push(0.0);
                }
                Some(m) => {
                    let jet = m.jet(env, q, None)?;
                    coef.push(jet.f);
                    dcoef.push(jet.f_q);
                }
            }
        }
        let mut fiber = Fiber {
            profiles: self.seed.terms.iter().map(|t| &t.profile).collect(),
            coef,
            dcoef,
            eta: 0.0,
            sigma: 0.0,
            dsigma: 0.0,
        };
        fiber.eta = find_eta(&fiber)?;
        let eta = fiber.eta;
        let int_h = adaptive_simpson(|a| fiber.h(a), 0.0, eta, self.tol)?;
        let int_hw = adaptive_simpson(|a| fiber.h_w(a), 0.0, eta, self.tol)?;
        fiber.sigma = eta - 0.5 * int_h;
        fiber.dsigma = -0.5 * int_hw;
        Ok(fiber)
    }

    /// `(η, σ)` at `τ_q ω`.
    pub fn eta_sigma(&self, env: &Environment, q: f64) -> Result<(f64, f64)> {
        let f = self.fiber(env, q)?;
        Ok((f.eta, f.sigma))
    }

    /// `L(τ_q ω, v)` on a precomputed fiber.
    pub fn eval_on(&self, fiber: &Fiber<'_>, v: f64) -> Result<LValue> {
        let v = check_domain(v, fiber.q_minus(), fiber.q_plus())?;
        let x = v + fiber.sigma;
        let int_h = adaptive_simpson(|a| fiber.h(a), 0.0, x, self.tol)?;
        let int_hw = adaptive_simpson(|a| fiber.h_w(a), 0.0, x, self.tol)?;
        let hx = fiber.h(x);
        Ok(LValue { l: int_h - v, l_v: hx - 1.0, l_w: int_hw + hx * fiber.dsigma })
    }

    /// `𝒢_q(q, q + v) + p` and its derivative in `v`.
    fn momentum_residual(&self, fiber: &Fiber<'_>, v: f64, p: f64) -> Result<(f64, f64)> {
        let l = self.eval_on(fiber, v)?;
        let b = v + fiber.sigma;
        let ha = fiber.h_a(b);
        let dg = fiber.h_w(b) + ha * fiber.dsigma - ha;
        if dg > 0.0 {
            return Err(Error::SeedInvalid(format!(
                "G_q increases at v = {v} (H_ω ≥ H_a (1 − σ′)); the map is not a monotone twist"
            )));
        }
        Ok((l.l_w - l.l_v + p, dg))
    }

    /// Forward map `F(q, p)`.
    pub fn forward(&self, env: &Environment, x: StripPoint) -> Result<StripPoint> {
        let fiber = self.fiber(env, x.q)?;
        if x.p >= 1.0 {
            return Ok(StripPoint { q: x.q + fiber.q_plus(), p: 1.0 });
        }
        if x.p <= -1.0 {
            return Ok(StripPoint { q: x.q + fiber.q_minus(), p: -1.0 });
        }
        let v = newton_bracketed(
            |v| self.momentum_residual(&fiber, v, x.p),
            fiber.q_minus(),
            fiber.q_plus(),
            1e-14,
        )
        .map_err(seed_error)?;
        StripPoint::new(x.q + v, fiber.h(v + fiber.sigma) - 1.0)
    }

    /// Solves `q + Q^±(τ_q ω) = target` for `q`.
    pub fn boundary_preimage(&self, env: &Environment, target: f64, top: bool) -> Result<f64> {
        let offset = |q: f64| -> Result<f64> {
            let f = self.fiber(env, q)?;
            Ok(q + if top { f.q_plus() } else { f.q_minus() } - target)
        };
        let guess = target - offset(target)?;
        let mut lo = guess - 0.5;
        let mut hi = guess + 0.5;
        let mut step = 0.5;
        while offset(lo)? > 0.0 {
            step *= 2.0;
            lo -= step;
            if step > A_MAX {
                return Err(Error::NoBracket { lo, hi, flo: f64::NAN, fhi: f64::NAN });
            }
        }
        step = 0.5;
        while offset(hi)? < 0.0 {
            step *= 2.0;
            hi += step;
            if step > A_MAX {
                return Err(Error::NoBracket { lo, hi, flo: f64::NAN, fhi: f64::NAN });
            }
        }
        let tol = BISECTION_TOL.max(4.0 * f64::EPSILON * target.abs());
        let mut failure = None;
        let q = bisect(
            |q| match offset(q) {
                Ok(v) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            },
            lo,
            hi,
            tol,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        q
    }

    /// Inverse map: `(q, p)` with `F(q, p) = y`.
    pub fn backward(&self, env: &Environment, y: StripPoint) -> Result<StripPoint> {
        if y.p >= 1.0 {
            return Ok(StripPoint { q: self.boundary_preimage(env, y.q, true)?, p: 1.0 });
        }
        if y.p <= -1.0 {
            return Ok(StripPoint { q: self.boundary_preimage(env, y.q, false)?, p: -1.0 });
        }
        // 𝒢_Q(q, Q) decreases in q from +1 (v = Q⁺) to −1 (v = Q⁻).
        let lo = self.boundary_preimage(env, y.q, true)?;
        let hi = self.boundary_preimage(env, y.q, false)?;
        let resid = |q: f64| -> Result<f64> {
            let f = self.fiber(env, q)?;
            let v = (y.q - q).clamp(f.q_minus(), f.q_plus());
            Ok(f.h(v + f.sigma) - 1.0 - y.p)
        };
        let mut failure = None;
        let q = bisect(
            |q| match resid(q) {
                Ok(v) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            },
            lo,
            hi,
            BISECTION_TOL.max(4.0 * f64::EPSILON * y.q.abs()),
        );
        if let Some(e) = failure {
            return Err(e);
        }
        let q = q.map_err(seed_error)?;
        let g = self.eval_g(env, q, y.q)?;
        StripPoint::new(q, -g.g_x)
    }
}

fn seed_error(e: Error) -> Error {
    match e {
        Error::NoBracket { lo, hi, .. } => {
            Error::SeedInvalid(format!("monotonicity violated: no sign change on [{lo}, {hi}]"))
        }
        other => other,
    }
}

fn check_domain(v: f64, lo: f64, hi: f64) -> Result<f64> {
    if v < lo - DOMAIN_SLACK || v > hi + DOMAIN_SLACK || !v.is_finite() {
        return Err(Error::OutsideDomain { v, lo, hi });
    }
    Ok(v.clamp(lo, hi))
}

fn find_eta(f: &Fiber<'_>) -> Result<f64> {
    let mut a = 1.0;
    while !(f.h(a) >= 2.0) {
        a *= 2.0;
        if a > A_MAX || !f.h(a).is_finite() {
            return Err(Error::UnboundedSeed { a_max: A_MAX });
        }
    }
    // The first crossing is wanted: scan before bisecting, checking positivity.
    let mut lo = 0.0;
    let mut hi = a;
    for j in 1..=ETA_SCAN {
        let x = a * j as f64 / ETA_SCAN as f64;
        let hx = f.h(x);
        if hx >= 2.0 {
            hi = x;
            break;
        }
        if hx <= 0.0 {
            return Err(Error::SeedInvalid(format!("H(ω, {x}) = {hx} is not positive")));
        }
        lo = x;
    }
    let mut eta = bisect(|x| f.h(x) - 2.0, lo, hi, BISECTION_TOL)?;
    for _ in 0..2 {
        let d = f.h_a(eta);
        if d > 0.0 && d.is_finite() {
            let next = eta - (f.h(eta) - 2.0) / d;
            if next > lo && next < hi {
                eta = next;
            }
        }
    }
    Ok(eta)
}

impl GeneratingFunction for MonotoneGenFun {
    fn eval_l(&self, env: &Environment, q: f64, v: f64) -> Result<LValue> {
        let fiber = self.fiber(env, q)?;
        self.eval_on(&fiber, v)
    }

    fn domain(&self, env: &Environment, q: f64) -> Result<[f64; 2]> {
        let f = self.fiber(env, q)?;
        Ok([f.q_minus(), f.q_plus()])
    }

    fn twist(&self) -> TwistMapHandle {
        twist_from_h(self, MonotoneSign::Positive)
    }

    fn describe(&self) -> String {
        format!("seed({} terms)", self.seed.terms.len())
    }
}

/// `(η, σ)` of a seed at `τ_q ω`.
pub fn eta_sigma(seed: &SeedSpec, env: &Environment, q: f64) -> Result<(f64, f64)> {
    MonotoneGenFun::new(seed.clone())?.eta_sigma(env, q)
}

/// `(L, L_v, L_ω)` at `(τ_q ω, v)`.
pub fn eval_l(g: &dyn GeneratingFunction, env: &Environment, q: f64, v: f64) -> Result<LValue> {
    g.eval_l(env, q, v)
}

struct HTwist {
    gf: Arc<MonotoneGenFun>,
    sign: MonotoneSign,
}

impl StripMap for HTwist {
    fn eval(&self, env: &Environment, x: StripPoint) -> Result<StripPoint> {
        match self.sign {
            MonotoneSign::Negative => self.gf.backward(env, x),
            _ => self.gf.forward(env, x),
        }
    }

    fn monotone_sign(&self) -> MonotoneSign {
        self.sign
    }

    fn provenance(&self) -> Provenance {
        match self.sign {
            MonotoneSign::Negative => Provenance::InverseOf,
            _ => Provenance::FromH,
        }
    }

    fn inverse(&self) -> Option<TwistMapHandle> {
        Some(TwistMapHandle::new(HTwist { gf: self.gf.clone(), sign: self.sign.flip() }))
    }

    fn describe(&self) -> String {
        let dir = if self.sign == MonotoneSign::Negative { "inverse " } else { "" };
        format!("{dir}twist from {}", self.gf.describe())
    }
}

/// The monotone twist generated by `gf`; `Negative` returns its inverse.
pub fn twist_from_h(gf: &MonotoneGenFun, sign: MonotoneSign) -> TwistMapHandle {
    let sign = if sign == MonotoneSign::None { MonotoneSign::Positive } else { sign };
    TwistMapHandle::new(HTwist { gf: Arc::new(gf.clone()), sign })
}

pub const GENFUN_SCHEMA: &str = "genfun/1";

fn default_tol() -> f64 {
    SIMPSON_TOL
}

/// Serialized generating-function description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenfunSpec {
    #[serde(default = "genfun_schema")]
    pub schema: String,
    pub seed: SeedSpec,
    #[serde(default = "positive")]
    pub sign: MonotoneSign,
    #[serde(default = "default_tol")]
    pub quadrature_tol: f64,
}

fn genfun_schema() -> String {
    GENFUN_SCHEMA.into()
}

fn positive() -> MonotoneSign {
    MonotoneSign::Positive
}

impl GenfunSpec {
    pub fn build(&self) -> Result<MonotoneGenFun> {
        if self.schema != GENFUN_SCHEMA {
            return Err(Error::InvalidSpec(format!("unsupported schema {:?}", self.schema)));
        }
        MonotoneGenFun::with_tolerance(self.seed.clone(), self.quadrature_tol)
    }
}

#[cfg(test)]
mod tests;
