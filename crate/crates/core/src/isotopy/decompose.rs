//! Factorisation `F = ψ_n ∘ … ∘ ψ_1` with `ψ_j = Λ^{(j−1)/n, j/n}` and
//! `ψ_j = η_j ∘ (φ⁰)⁻¹`, `η_j = ψ_j ∘ φ⁰` positive monotone when
//! `‖ψ_j − id‖_{C¹} < 1`.

use serde::{Deserialize, Serialize};

use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::twist::{compose, jacobian, MonotoneSign, StripPoint, TwistMapHandle, JACOBIAN_STEP};

use super::IsotopyPath;

pub const DECOMP_SCHEMA: &str = "decomp/1";

/// Sampling grid for C¹ deviations and monotonicity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecomposeOptions {
    #[serde(default = "default_q_range")]
    pub q_range: [f64; 2],
    #[serde(default = "default_nq")]
    pub nq: usize,
    #[serde(default = "default_np")]
    pub np: usize,
}

fn default_q_range() -> [f64; 2] {
    [-2.0, 2.0]
}
fn default_nq() -> usize {
    21
}
fn default_np() -> usize {
    11
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        Self { q_range: default_q_range(), nq: default_nq(), np: default_np() }
    }
}

impl DecomposeOptions {
    fn grid(&self) -> Vec<StripPoint> {
        let mut out = Vec::with_capacity(self.nq * self.np);
        for i in 0..self.nq {
            let q = self.q_range[0] + (self.q_range[1] - self.q_range[0]) * i as f64 / (self.nq - 1).max(1) as f64;
            for j in 0..self.np {
                let p = -1.0 + 2.0 * j as f64 / (self.np - 1).max(1) as f64;
                out.push(StripPoint { q, p });
            }
        }
        out
    }
}

/// Sampled `max(sup |ψ − id|, sup |Dψ − I|)` with entrywise sup norms.
pub fn c1_deviation(map: &TwistMapHandle, env: &Environment, opts: &DecomposeOptions) -> Result<f64> {
    let mut d = 0.0f64;
    for x in opts.grid() {
        let y = map.apply(env, x)?;
        d = d.max((y.q - x.q).abs()).max((y.p - x.p).abs());
        let j = jacobian(map, env, x, JACOBIAN_STEP)?;
        d = d.max(j.max_abs_diff(&crate::numerics::Mat2::IDENTITY));
    }
    Ok(d)
}

/// Result of [`decompose_isotopy`].
#[derive(Clone, Debug)]
pub struct Decomposition {
    pub n: usize,
    /// `max_j δ_j`.
    pub delta: f64,
    pub deltas: Vec<f64>,
    /// `ψ_j`, in application order.
    pub steps: Vec<TwistMapHandle>,
    /// `η_j = ψ_j ∘ φ⁰`.
    pub etas: Vec<TwistMapHandle>,
    /// Smallest sampled `∂Q/∂p` of each `η_j`.
    pub eta_min_dq_dp: Vec<f64>,
    /// `[(φ⁰)⁻¹, η_1, (φ⁰)⁻¹, η_2, …]`, index 0 applied first.
    pub factors: Vec<(TwistMapHandle, MonotoneSign)>,
    pub target: TwistMapHandle,
}

impl Decomposition {
    /// The composition of all factors.
    pub fn recompose(&self) -> Result<TwistMapHandle> {
        compose(&self.factors.iter().map(|f| f.0.clone()).collect::<Vec<_>>())
    }

    /// Sup-norm distance between the recomposition and `F` on `points`.
    pub fn recomposition_error(&self, env: &Environment, points: &[StripPoint]) -> Result<f64> {
        let r = self.recompose()?;
        points.iter().try_fold(0.0f64, |m, &x| Ok(m.max(r.apply(env, x)?.dist(&self.target.apply(env, x)?))))
    }

    pub fn record(&self, recomposition_error: Option<f64>) -> DecompositionRecord {
        let mut factors = Vec::with_capacity(self.factors.len());
        for j in 0..self.n {
            factors.push(FactorRecord {
                index: 2 * j,
                kind: "phi0-inverse".into(),
                sign: "negative".into(),
                segment: None,
                min_dq_dp: None,
            });
            factors.push(FactorRecord {
                index: 2 * j + 1,
                kind: "eta".into(),
                sign: "positive".into(),
                segment: Some([j as f64 / self.n as f64, (j + 1) as f64 / self.n as f64]),
                min_dq_dp: Some(self.eta_min_dq_dp[j]),
            });
        }
        DecompositionRecord {
            schema: DECOMP_SCHEMA.into(),
            n: self.n,
            delta: self.delta,
            deltas: self.deltas.clone(),
            order: "application".into(),
            factors,
            recomposition_error,
        }
    }
}

/// One factor in the `decomp/1` record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorRecord {
    pub index: usize,
    pub kind: String,
    pub sign: String,
    /// Path segment `[s, t]` with `η = Λ^{s,t} ∘ φ⁰`.
    pub segment: Option<[f64; 2]>,
    pub min_dq_dp: Option<f64>,
}

/// Serialized decomposition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionRecord {
    pub schema: String,
    pub n: usize,
    pub delta: f64,
    pub deltas: Vec<f64>,
    /// Factors are listed with index 0 applied first.
    pub order: String,
    pub factors: Vec<FactorRecord>,
    pub recomposition_error: Option<f64>,
}

fn min_dq_dp(map: &TwistMapHandle, env: &Environment, opts: &DecomposeOptions) -> Result<f64> {
    opts.grid().into_iter().try_fold(f64::INFINITY, |m, x| Ok(m.min(jacobian(map, env, x, JACOBIAN_STEP)?.0[0][1])))
}

/// Splits the path into `n` steps and each step into `η_j ∘ (φ⁰)⁻¹`.
pub fn decompose_isotopy(
    path: &IsotopyPath,
    env: &Environment,
    n: usize,
    opts: &DecomposeOptions,
) -> Result<Decomposition> {
    if n == 0 {
        return Err(Error::InvalidSpec("the step count must be at least 1".into()));
    }
    let path = &path.aligned(n);
    let steps: Vec<TwistMapHandle> = (1..=n)
        .map(|j| path.segment((j - 1) as f64 / n as f64, j as f64 / n as f64))
        .collect::<Result<_>>()?;
    let deltas: Vec<f64> = steps.iter().map(|s| c1_deviation(s, env, opts)).collect::<Result<_>>()?;
    let delta = deltas.iter().copied().fold(0.0, f64::max);
    if delta >= 1.0 {
        // δ scales like 1/n; ask for the first n with δ below 1
        let rate = delta * n as f64;
        return Err(Error::DecompositionStep { delta, hint: rate.floor() as usize + 1 });
    }
    let mut etas = Vec::with_capacity(n);
    let mut mins = Vec::with_capacity(n);
    let mut factors = Vec::with_capacity(2 * n);
    for (j, psi) in steps.iter().enumerate() {
        let inner = compose(&[TwistMapHandle::phi0(), psi.clone()])?;
        let eta = TwistMapHandle::from_fn(&format!("eta_{}", j + 1), MonotoneSign::Positive, move |env, x| {
            inner.apply(env, x)
        });
        let m = min_dq_dp(&eta, env, opts)?;
        if !(m > 0.0) {
            return Err(Error::NotMonotone(format!("η_{} has ∂Q/∂p = {m} on the sample grid", j + 1)));
        }
        factors.push((TwistMapHandle::phi0_inv(), MonotoneSign::Negative));
        factors.push((eta.clone(), MonotoneSign::Positive));
        etas.push(eta);
        mins.push(m);
    }
    Ok(Decomposition { n, delta, deltas, steps, etas, eta_min_dq_dp: mins, factors, target: path.endpoint()? })
}

/// Smallest `n ≤ max_n` with `δ ≤ target`.
pub fn choose_steps(
    path: &IsotopyPath,
    env: &Environment,
    target: f64,
    max_n: usize,
    opts: &DecomposeOptions,
) -> Result<usize> {
    for n in 1..=max_n {
        let path = &path.aligned(n);
        let mut worst = 0.0f64;
        for j in 1..=n {
            let s = path.segment((j - 1) as f64 / n as f64, j as f64 / n as f64)?;
            worst = worst.max(c1_deviation(&s, env, opts)?);
            if worst > target {
                break;
            }
        }
        if worst <= target {
            return Ok(n);
        }
    }
    Err(Error::DecompositionStep { delta: f64::NAN, hint: max_n + 1 })
}
