//! Generalized generating functions of alternating chains
//! `F = F_N ∘ … ∘ F_0` with `F_j` negative for even `j`.
//!
//! Factor `j` acts on `(x_j, x_{j+1})` with `x_0 = q`, `x_{N+1} = Q` and
//! `x_i = ξ_i` otherwise. Negative factors are carried by the generating
//! function `𝒢⁺` of their positive inverse and enter through the reflection
//! `𝒢̂(x, y) = −𝒢⁺(y, x)`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::twist::{compose, MonotoneSign, StripPoint, TwistMapHandle};

use super::{GValue, GeneratingFunction, DOMAIN_SLACK};

/// Margins below this are labelled as boundary strata.
pub const STRATUM_TOL: f64 = 1e-10;
const B_STEP: f64 = 1e-6;

/// One factor of a chain.
#[derive(Clone)]
pub struct Factor {
    pub gf: Arc<dyn GeneratingFunction>,
    pub sign: MonotoneSign,
}

impl fmt::Debug for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Factor({:?}, {})", self.sign, self.gf.describe())
    }
}

impl Factor {
    pub fn positive<G: GeneratingFunction + 'static>(gf: G) -> Self {
        Self { gf: Arc::new(gf), sign: MonotoneSign::Positive }
    }

    /// The inverse of the twist generated by `gf`.
    pub fn negative<G: GeneratingFunction + 'static>(gf: G) -> Self {
        Self { gf: Arc::new(gf), sign: MonotoneSign::Negative }
    }

    pub fn map(&self) -> TwistMapHandle {
        match self.sign {
            MonotoneSign::Negative => self.gf.twist().inverse(),
            _ => self.gf.twist(),
        }
    }

    /// Factor generating function at `(x, y)`, reflected for negative factors.
    pub fn eval(&self, env: &Environment, x: f64, y: f64) -> Result<GValue> {
        match self.sign {
            MonotoneSign::Negative => {
                let g = self.gf.eval_g(env, y, x)?;
                Ok(GValue { g: -g.g, g_x: -g.g_y, g_y: -g.g_x })
            }
            _ => self.gf.eval_g(env, x, y),
        }
    }

    /// Distances `[to ∂⁺, to ∂⁻]` of `(x, y)` from the factor's domain
    /// boundary; negative outside.
    pub fn margins(&self, env: &Environment, x: f64, y: f64) -> Result<[f64; 2]> {
        match self.sign {
            MonotoneSign::Negative => {
                let [lo, hi] = self.gf.domain(env, y)?;
                let d = x - y;
                Ok([d - lo, hi - d])
            }
            _ => {
                let [lo, hi] = self.gf.domain(env, x)?;
                let d = y - x;
                Ok([hi - d, d - lo])
            }
        }
    }
}

/// Sign of a boundary stratum.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    Plus,
    Minus,
}

/// Boundary stratum `∂^±_j D`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stratum {
    pub factor: usize,
    pub side: Side,
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = if self.side == Side::Plus { '+' } else { '-' };
        write!(f, "∂{s}{}", self.factor)
    }
}

/// `D₀ ⊊ D₁` margins for chains with `N = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InclusionMargins {
    /// `Q₁⁻(q) − Q₀⁻(q)`.
    pub upper: f64,
    /// `Q₀⁺(q) − Q₁⁺(q)`.
    pub lower: f64,
}

/// Position of `(q, ξ)` relative to the domain `D`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainStrata {
    pub inside: bool,
    /// Empty for interior points.
    pub strata: Vec<Stratum>,
    /// Per factor `[to ∂⁺, to ∂⁻]`.
    pub margins: Vec<[f64; 2]>,
    pub inclusion: Option<InclusionMargins>,
}

impl DomainStrata {
    pub fn is_interior(&self) -> bool {
        self.inside && self.strata.is_empty()
    }

    pub fn min_margin(&self) -> f64 {
        self.margins.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Value and gradient of the action `I(q, ξ) = 𝒢(q, q; ξ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Action {
    pub value: f64,
    /// `(I_q, I_ξ1, …, I_ξN)`.
    pub grad: Vec<f64>,
}

/// Chain of alternating monotone factors.
#[derive(Clone, Debug)]
pub struct CompositeGenFun {
    factors: Vec<Factor>,
}

/// Builds a chain; signs must alternate starting negative.
pub fn compose_genfuns(chain: Vec<Factor>) -> Result<CompositeGenFun> {
    if chain.is_empty() {
        return Err(Error::SignPattern("empty chain".into()));
    }
    for (j, f) in chain.iter().enumerate() {
        let want = if j % 2 == 0 { MonotoneSign::Negative } else { MonotoneSign::Positive };
        if f.sign != want {
            return Err(Error::SignPattern(format!(
                "factor {j} is {:?}; even factors must be negative and odd factors positive",
                f.sign
            )));
        }
    }
    Ok(CompositeGenFun { factors: chain })
}

impl CompositeGenFun {
    /// A single positive factor: the complexity-zero case.
    pub fn single<G: GeneratingFunction + 'static>(gf: G) -> Self {
        Self { factors: vec![Factor::positive(gf)] }
    }

    pub fn from_factor(f: Factor) -> Result<Self> {
        if f.sign != MonotoneSign::Positive {
            return Err(Error::SignPattern("a single factor must be positive".into()));
        }
        Ok(Self { factors: vec![f] })
    }

    /// Complexity `N`: number of auxiliary variables.
    pub fn n(&self) -> usize {
        self.factors.len() - 1
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    /// The composite map, factor 0 applied first.
    pub fn map(&self) -> Result<TwistMapHandle> {
        compose(&self.factors.iter().map(|f| f.map()).collect::<Vec<_>>())
    }

    fn args(&self, q: f64, qq: f64, xi: &[f64]) -> Result<Vec<f64>> {
        if xi.len() != self.n() {
            return Err(Error::InvalidSpec(format!("expected {} auxiliary variables, got {}", self.n(), xi.len())));
        }
        let mut x = Vec::with_capacity(xi.len() + 2);
        x.push(q);
        x.extend_from_slice(xi);
        x.push(qq);
        Ok(x)
    }

    /// `𝒢(q, Q; ξ)` and the factor values at each link.
    pub fn eval(&self, env: &Environment, q: f64, qq: f64, xi: &[f64]) -> Result<(f64, Vec<GValue>)> {
        let x = self.args(q, qq, xi)?;
        let mut total = 0.0;
        let mut parts = Vec::with_capacity(self.factors.len());
        for (j, f) in self.factors.iter().enumerate() {
            let g = f.eval(env, x[j], x[j + 1])?;
            total += g.g;
            parts.push(g);
        }
        Ok((total, parts))
    }

    /// Stratum labels and margins of `(q, ξ)` on the diagonal `Q = q`.
    pub fn domain_strata(&self, env: &Environment, q: f64, xi: &[f64]) -> Result<DomainStrata> {
        let x = self.args(q, q, xi)?;
        let mut margins = Vec::with_capacity(self.factors.len());
        let mut strata = Vec::new();
        let mut inside = true;
        for (j, f) in self.factors.iter().enumerate() {
            let m = f.margins(env, x[j], x[j + 1])?;
            inside &= m[0] >= -DOMAIN_SLACK && m[1] >= -DOMAIN_SLACK;
            if m[0].abs() <= STRATUM_TOL {
                strata.push(Stratum { factor: j, side: Side::Plus });
            }
            if m[1].abs() <= STRATUM_TOL {
                strata.push(Stratum { factor: j, side: Side::Minus });
            }
            margins.push(m);
        }
        let inclusion = if self.n() == 1 { Some(self.inclusion_margins(env, q)?) } else { None };
        Ok(DomainStrata { inside, strata, margins, inclusion })
    }

    /// `Q₀^±(q)` from `F₀(q, ±1)` and `Q₁^±(q)` from `F₁⁻¹(q, ±1)`.
    pub fn inclusion_margins(&self, env: &Environment, q: f64) -> Result<InclusionMargins> {
        if self.n() != 1 {
            return Err(Error::InvalidSpec("inclusion margins are defined for N = 1".into()));
        }
        let f0 = self.factors[0].map();
        let g1 = self.factors[1].map().inverse();
        let q0p = f0.apply(env, StripPoint { q, p: 1.0 })?.q;
        let q0m = f0.apply(env, StripPoint { q, p: -1.0 })?.q;
        let q1p = g1.apply(env, StripPoint { q, p: 1.0 })?.q;
        let q1m = g1.apply(env, StripPoint { q, p: -1.0 })?.q;
        Ok(InclusionMargins { upper: q1m - q0m, lower: q0p - q1p })
    }

    /// Range of `ξ₁` allowed by factor 0 at `q`: `[Q₀⁺(q), Q₀⁻(q)]`.
    pub fn first_range(&self, env: &Environment, q: f64) -> Result<[f64; 2]> {
        let f0 = self.factors[0].map();
        Ok([f0.apply(env, StripPoint { q, p: 1.0 })?.q, f0.apply(env, StripPoint { q, p: -1.0 })?.q])
    }

    /// `I(q, ξ)` and its gradient.
    pub fn action(&self, env: &Environment, q: f64, xi: &[f64]) -> Result<Action> {
        let x = self.args(q, q, xi)?;
        for (j, f) in self.factors.iter().enumerate() {
            let m = f.margins(env, x[j], x[j + 1])?;
            if m[0] < -DOMAIN_SLACK || m[1] < -DOMAIN_SLACK {
                return Err(Error::OutsideActionDomain(format!(
                    "(q, ξ) = ({q}, {xi:?}) leaves the domain of factor {j} (margins {m:?})"
                )));
            }
        }
        self.action_unchecked(env, q, xi)
    }

    /// `I` and `∇I` without the membership test.
    pub fn action_unchecked(&self, env: &Environment, q: f64, xi: &[f64]) -> Result<Action> {
        let (value, parts) = self.eval(env, q, q, xi)?;
        let n = self.n();
        let mut grad = vec![0.0; n + 1];
        grad[0] = parts[0].g_x + parts[n].g_y;
        for i in 1..=n {
            grad[i] = parts[i - 1].g_y + parts[i].g_x;
        }
        Ok(Action { value, grad })
    }

    /// `x = (q, −𝒢_q(q, q; ξ))`.
    pub fn fixed_point_candidate(&self, env: &Environment, q: f64, xi: &[f64]) -> Result<StripPoint> {
        let (_, parts) = self.eval(env, q, q, xi)?;
        StripPoint::new(q, -parts[0].g_x)
    }

    /// Checks `F(q, −𝒢_q) = (Q, 𝒢_Q)` after solving `∇_ξ 𝒢 = 0`. Only
    /// meaningful for chains whose `ξ` are determined by `(q, Q)`; returns
    /// the residual at given `(q, Q, ξ)` with `∇_ξ 𝒢 = 0` assumed.
    pub fn generating_residual(&self, env: &Environment, q: f64, qq: f64, xi: &[f64]) -> Result<f64> {
        let (_, parts) = self.eval(env, q, qq, xi)?;
        let n = self.n();
        let x = StripPoint::new(q, -parts[0].g_x)?;
        let y = self.map()?.apply(env, x)?;
        Ok((y.q - qq).abs().max((y.p - parts[n].g_y).abs()))
    }
}

/// The reparameterised action `K(q, p₁, p₂) = I(q, ξ(q, p))` of an `N = 2`
/// chain on `ℝ × [−1, 1]²`.
#[derive(Clone, Debug)]
pub struct KMap<'a> {
    chain: &'a CompositeGenFun,
}

/// Value and gradient `(K_q, K_p1, K_p2)` together with the underlying
/// action gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct KValue {
    pub value: f64,
    pub grad: [f64; 3],
    pub xi: [f64; 2],
    pub action_grad: [f64; 3],
    /// `(B₀⁺, B₀⁻, B₂⁺, B₂⁻)`.
    pub b: [f64; 4],
}

impl<'a> KMap<'a> {
    pub fn new(chain: &'a CompositeGenFun) -> Result<Self> {
        if chain.n() != 2 {
            return Err(Error::InvalidSpec(format!("K is defined for N = 2, got N = {}", chain.n())));
        }
        Ok(Self { chain })
    }

    /// `(B₀⁺, B₀⁻, B₂⁺, B₂⁻)` at `τ_q ω`.
    pub fn b(&self, env: &Environment, q: f64) -> Result<[f64; 4]> {
        let [q0p, q0m] = self.chain.first_range(env, q)?;
        let [lo, hi] = self.chain.factors[2].gf.domain(env, q)?;
        Ok([q - q0p, q0m - q, hi, -lo])
    }

    fn xi_bar(b: &[f64; 4], p1: f64, p2: f64) -> [f64; 2] {
        [
            0.5 * (p1 + 1.0) * b[1] + 0.5 * (p1 - 1.0) * b[0],
            0.5 * (p2 + 1.0) * b[2] + 0.5 * (p2 - 1.0) * b[3],
        ]
    }

    /// `ξ(q, p)`.
    pub fn xi(&self, env: &Environment, q: f64, p1: f64, p2: f64) -> Result<[f64; 2]> {
        let b = self.b(env, q)?;
        let xb = Self::xi_bar(&b, p1, p2);
        Ok([q + xb[0], q + xb[1]])
    }

    pub fn eval(&self, env: &Environment, q: f64, p1: f64, p2: f64) -> Result<KValue> {
        let b = self.b(env, q)?;
        let xb = Self::xi_bar(&b, p1, p2);
        let xi = [q + xb[0], q + xb[1]];
        let a = self.chain.action_unchecked(env, q, &xi)?;
        let bp = self.b(env, q + B_STEP)?;
        let bm = self.b(env, q - B_STEP)?;
        let xp = Self::xi_bar(&bp, p1, p2);
        let xm = Self::xi_bar(&bm, p1, p2);
        let dx1 = (xp[0] - xm[0]) / (2.0 * B_STEP);
        let dx2 = (xp[1] - xm[1]) / (2.0 * B_STEP);
        let (iq, i1, i2) = (a.grad[0], a.grad[1], a.grad[2]);
        let grad = [
            iq + i1 * (1.0 + dx1) + i2 * (1.0 + dx2),
            0.5 * i1 * (b[0] + b[1]),
            0.5 * i2 * (b[2] + b[3]),
        ];
        Ok(KValue { value: a.value, grad, xi, action_grad: [iq, i1, i2], b })
    }
}
