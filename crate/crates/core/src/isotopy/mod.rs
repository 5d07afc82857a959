//! Stationary Hamiltonian isotopies of the strip, the Moser corrector for
//! paths with trigonometric densities and the factorisation of a path into
//! alternating monotone twists.

mod decompose;
mod moser;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::environment::{Environment, Jet, Profile, StationaryObservable};
use crate::error::{Error, Result};
use crate::numerics::{gauss_legendre, Mat2};
use crate::rice::sample_like;
use crate::seed;
use crate::twist::{jacobian, MonotoneSign, Provenance, StripMap, StripPoint, TwistMapHandle, JACOBIAN_STEP};

pub use decompose::{
    c1_deviation, choose_steps, decompose_isotopy, DecomposeOptions, Decomposition, DecompositionRecord, FactorRecord,
    DECOMP_SCHEMA,
};
pub use moser::{
    moser_correct, moser_residuals, solve_moser, Atom, CorrectedPath, DensityPath, MoserOptions, MoserRecord, MoserResiduals,
    MoserSolution, MOSER_SCHEMA,
};

/// Fixed-point iteration tolerance of the implicit midpoint rule.
pub const MIDPOINT_TOL: f64 = 1e-12;
const MIDPOINT_MAX_ITER: usize = 100;
/// Step-size safeguard `dt · Lip(J∇H) < 1/2`.
const LIPSCHITZ_SAFETY: f64 = 0.5;
/// Normalisation values further than this from 1 are flagged.
pub const NORMALIZATION_TOL: f64 = 1e-6;

/// Time dependence of one Hamiltonian term.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TimeProfile {
    #[default]
    Constant,
    Poly { coeffs: Vec<f64> },
}

impl TimeProfile {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TimeProfile::Constant => 1.0,
            TimeProfile::Poly { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c),
        }
    }
}

/// `f(τ_q ω, p) · g(p) · τ(t)`; a missing observable stands for `1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianTerm {
    #[serde(default)]
    pub observable: Option<StationaryObservable>,
    #[serde(default)]
    pub profile: Profile,
    #[serde(default)]
    pub time: TimeProfile,
}

/// `H(q, p, t) = Σ_k f_k(τ_q ω, p) g_k(p) τ_k(t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StationaryHamiltonian {
    terms: Vec<HamiltonianTerm>,
}

fn times_profile(j: Jet, g: [f64; 3]) -> Jet {
    Jet {
        f: j.f * g[0],
        f_q: j.f_q * g[0],
        f_qq: j.f_qq * g[0],
        f_p: j.f_p * g[0] + j.f * g[1],
        f_pp: j.f_pp * g[0] + 2.0 * j.f_p * g[1] + j.f * g[2],
        f_qp: j.f_qp * g[0] + j.f_q * g[1],
    }
}

impl StationaryHamiltonian {
    pub fn new(terms: Vec<HamiltonianTerm>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidSpec("empty Hamiltonian".into()));
        }
        for t in &terms {
            if let Some(o) = &t.observable {
                if !o.differentiable() {
                    return Err(Error::NonDifferentiable("Hamiltonian terms need two derivatives".into()));
                }
            }
        }
        Ok(Self { terms })
    }

    /// `H = p²/2`.
    pub fn kinetic() -> Self {
        Self { terms: vec![HamiltonianTerm { observable: None, profile: Profile::poly(&[0.0, 0.0, 0.5]), time: TimeProfile::Constant }] }
    }

    /// Adds `f(τ_q ω) (1 − p²)²`, which keeps `H_q = H_p = 0` on `p = ±1`.
    pub fn with_boundary_flat(mut self, observable: StationaryObservable) -> Self {
        self.terms.push(HamiltonianTerm {
            observable: Some(observable),
            profile: Profile::poly(&[1.0, 0.0, -2.0, 0.0, 1.0]),
            time: TimeProfile::Constant,
        });
        self
    }

    pub fn terms(&self) -> &[HamiltonianTerm] {
        &self.terms
    }

    /// Jet of `H` in `(q, p)` at time `t`.
    pub fn jet(&self, env: &Environment, q: f64, p: f64, t: f64) -> Result<Jet> {
        let mut out = Jet::default();
        for term in &self.terms {
            let base = match &term.observable {
                Some(o) => o.jet(env, q, Some(p))?,
                None => Jet { f: 1.0, ..Jet::default() },
            };
            let j = times_profile(base, term.profile.eval(p));
            let s = term.time.eval(t);
            out.f += s * j.f;
            out.f_q += s * j.f_q;
            out.f_qq += s * j.f_qq;
            out.f_p += s * j.f_p;
            out.f_pp += s * j.f_pp;
            out.f_qp += s * j.f_qp;
        }
        Ok(out)
    }

    /// Checks `H_q(q, ±1, t) = 0` and `±H_p(q, ±1, t) > 0` on a sample grid.
    pub fn certify(&self, env: &Environment, q_range: [f64; 2], samples: usize) -> Result<()> {
        let n = samples.max(2);
        for i in 0..n {
            let q = q_range[0] + (q_range[1] - q_range[0]) * i as f64 / (n - 1) as f64;
            for k in 0..=4 {
                let t = k as f64 / 4.0;
                for side in [1.0, -1.0] {
                    let j = self.jet(env, q, side, t)?;
                    if j.f_q.abs() > 1e-12 {
                        return Err(Error::InvalidSpec(format!(
                            "H_q(q, {side}, t) = {:e} ≠ 0 at q = {q}, t = {t}",
                            j.f_q
                        )));
                    }
                    if !(side * j.f_p > 0.0) {
                        return Err(Error::InvalidSpec(format!(
                            "±H_p(q, ±1, t) must be positive; got H_p = {} at q = {q}, p = {side}, t = {t}",
                            j.f_p
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn clamp_p(p: f64) -> f64 {
    p.clamp(-1.0, 1.0)
}

/// One implicit-midpoint step from `x` at time `t` with step `h`, and its
/// Jacobian (the Cayley transform of `h J D²H` at the midpoint).
fn midpoint_step(ham: &StationaryHamiltonian, env: &Environment, x: [f64; 2], t: f64, h: f64) -> Result<([f64; 2], Mat2)> {
    let tm = t + 0.5 * h;
    let j0 = ham.jet(env, x[0], clamp_p(x[1]), tm)?;
    let lip = j0.f_qq.abs().max(j0.f_pp.abs()) + j0.f_qp.abs();
    if h.abs() * lip >= LIPSCHITZ_SAFETY {
        return Err(Error::MidpointNonConvergence { dt: h });
    }
    let mut y = [x[0] + h * j0.f_p, x[1] - h * j0.f_q];
    let mut converged = false;
    for _ in 0..MIDPOINT_MAX_ITER {
        let m = [0.5 * (x[0] + y[0]), clamp_p(0.5 * (x[1] + y[1]))];
        let j = ham.jet(env, m[0], m[1], tm)?;
        let next = [x[0] + h * j.f_p, x[1] - h * j.f_q];
        let diff = (next[0] - y[0]).abs().max((next[1] - y[1]).abs());
        y = next;
        if diff <= MIDPOINT_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::MidpointNonConvergence { dt: h });
    }
    let m = [0.5 * (x[0] + y[0]), clamp_p(0.5 * (x[1] + y[1]))];
    let j = ham.jet(env, m[0], m[1], tm)?;
    // A = J D²H with J = [[0, 1], [−1, 0]].
    let a = Mat2([[j.f_qp, j.f_pp], [-j.f_qq, -j.f_qp]]);
    let half = |s: f64| Mat2([[1.0 + s * a.0[0][0], s * a.0[0][1]], [s * a.0[1][0], 1.0 + s * a.0[1][1]]]);
    let lhs = half(-0.5 * h).inverse().ok_or(Error::MidpointNonConvergence { dt: h })?;
    Ok(([y[0], clamp_p(y[1])], lhs.mul(&half(0.5 * h))))
}

/// Step boundaries between `t0` and `t1` on the global grid `k · dt`.
fn time_nodes(t0: f64, t1: f64, dt: f64) -> Vec<f64> {
    let mut nodes = vec![t0];
    if t0 == t1 {
        return nodes;
    }
    let eps = 1e-9 * dt;
    if t1 > t0 {
        let mut k = (t0 / dt + 1e-9).floor() as i64 + 1;
        while (k as f64) * dt < t1 - eps {
            nodes.push(k as f64 * dt);
            k += 1;
        }
    } else {
        let mut k = (t0 / dt - 1e-9).ceil() as i64 - 1;
        while (k as f64) * dt > t1 + eps {
            nodes.push(k as f64 * dt);
            k -= 1;
        }
    }
    nodes.push(t1);
    nodes
}

/// Flow of `J∇H` from `t0` to `t1` (either direction) by implicit midpoint
/// steps on the global grid `k · dt`, with the tangent map.
pub fn hamiltonian_flow_with_tangent(
    ham: &StationaryHamiltonian,
    env: &Environment,
    x: StripPoint,
    t0: f64,
    t1: f64,
    dt: f64,
) -> Result<(StripPoint, Mat2)> {
    if !(dt > 0.0) {
        return Err(Error::InvalidSpec(format!("time step must be positive, got {dt}")));
    }
    let nodes = time_nodes(t0, t1, dt);
    let mut y = [x.q, x.p];
    let mut d = Mat2::IDENTITY;
    for w in nodes.windows(2) {
        let (next, step) = midpoint_step(ham, env, y, w[0], w[1] - w[0])?;
        y = next;
        d = step.mul(&d);
    }
    Ok((StripPoint::new(y[0], y[1])?, d))
}

/// Flow of `J∇H` from `t0` to `t1`.
pub fn hamiltonian_flow(
    ham: &StationaryHamiltonian,
    env: &Environment,
    x: StripPoint,
    t0: f64,
    t1: f64,
    dt: f64,
) -> Result<StripPoint> {
    Ok(hamiltonian_flow_with_tangent(ham, env, x, t0, t1, dt)?.0)
}

/// `Λ^{t0, t1}` of a Hamiltonian as a strip map.
#[derive(Clone, Debug)]
struct FlowMap {
    ham: Arc<StationaryHamiltonian>,
    t0: f64,
    t1: f64,
    dt: f64,
}

impl StripMap for FlowMap {
    fn eval(&self, env: &Environment, x: StripPoint) -> Result<StripPoint> {
        hamiltonian_flow(&self.ham, env, x, self.t0, self.t1, self.dt)
    }

    fn analytic_jacobian(&self, env: &Environment, x: StripPoint) -> Option<Result<Mat2>> {
        Some(hamiltonian_flow_with_tangent(&self.ham, env, x, self.t0, self.t1, self.dt).map(|r| r.1))
    }

    fn monotone_sign(&self) -> MonotoneSign {
        MonotoneSign::None
    }

    fn provenance(&self) -> Provenance {
        Provenance::FromFlow
    }

    fn inverse(&self) -> Option<TwistMapHandle> {
        Some(TwistMapHandle::new(FlowMap { ham: self.ham.clone(), t0: self.t1, t1: self.t0, dt: self.dt }))
    }

    fn describe(&self) -> String {
        format!("hamiltonian flow [{}, {}] (dt {})", self.t0, self.t1, self.dt)
    }
}

/// Map-valued function `t ↦ Λ^t` for explicit paths.
pub type PathFn = Arc<dyn Fn(f64) -> Result<TwistMapHandle> + Send + Sync>;

#[derive(Clone)]
enum PathKind {
    Hamiltonian { ham: Arc<StationaryHamiltonian>, dt: f64 },
    Explicit { name: String, at: PathFn },
}

/// A path `t ↦ Λ^t`, `t ∈ [0, 1]`, with `Λ^0 = id`.
#[derive(Clone)]
pub struct IsotopyPath {
    kind: PathKind,
}

impl std::fmt::Debug for IsotopyPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.describe())
    }
}

impl IsotopyPath {
    /// Flow of `H`; the boundary certificate is checked on `q ∈ [−10, 10]`.
    pub fn hamiltonian(ham: StationaryHamiltonian, env: &Environment, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt <= 1.0) {
            return Err(Error::InvalidSpec(format!("time step must lie in (0, 1], got {dt}")));
        }
        ham.certify(env, [-10.0, 10.0], 64)?;
        Ok(Self { kind: PathKind::Hamiltonian { ham: Arc::new(ham), dt } })
    }

    pub fn explicit(name: &str, at: PathFn) -> Self {
        Self { kind: PathKind::Explicit { name: name.to_string(), at } }
    }

    /// The constant identity path.
    pub fn identity() -> Self {
        Self::explicit("identity", Arc::new(|_| Ok(TwistMapHandle::identity())))
    }

    /// `Λ^t`.
    pub fn at(&self, t: f64) -> Result<TwistMapHandle> {
        self.segment(0.0, t)
    }

    /// `Λ^{s,t}`, so that `Λ^{s,u} = Λ^{t,u} ∘ Λ^{s,t}`.
    pub fn segment(&self, s: f64, t: f64) -> Result<TwistMapHandle> {
        match &self.kind {
            PathKind::Hamiltonian { ham, dt } => {
                Ok(TwistMapHandle::new(FlowMap { ham: ham.clone(), t0: s, t1: t, dt: *dt }))
            }
            PathKind::Explicit { at, .. } => {
                if s == 0.0 {
                    return at(t);
                }
                crate::twist::compose(&[at(s)?.inverse(), at(t)?])
            }
        }
    }

    /// The same path with the time step refined to `1 / (n k) ≤ dt`, so that
    /// the breakpoints `j / n` are integration nodes.
    pub fn aligned(&self, n: usize) -> Self {
        match &self.kind {
            PathKind::Hamiltonian { ham, dt } => {
                let k = (1.0 / (n as f64 * dt) - 1e-9).ceil().max(1.0);
                Self { kind: PathKind::Hamiltonian { ham: ham.clone(), dt: 1.0 / (n as f64 * k) } }
            }
            PathKind::Explicit { .. } => self.clone(),
        }
    }

    pub fn endpoint(&self) -> Result<TwistMapHandle> {
        self.at(1.0)
    }

    pub fn describe(&self) -> String {
        match &self.kind {
            PathKind::Hamiltonian { dt, .. } => format!("hamiltonian path (dt {dt})"),
            PathKind::Explicit { name, .. } => format!("path {name}"),
        }
    }
}

/// `½ ∫ E det DΛ^t dp` at one mesh time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationValue {
    pub t: f64,
    pub value: f64,
    pub mc_sd: f64,
    pub flagged: bool,
}

/// Gauss–Legendre in `p` (16 nodes) and Monte Carlo over `ω` at `q = 0`.
pub fn normalization_check(
    path: &IsotopyPath,
    env: &Environment,
    mesh: &[f64],
    mc_samples: usize,
    seed_value: u64,
) -> Result<Vec<NormalizationValue>> {
    let (nodes, weights) = gauss_legendre(16);
    let samples = mc_samples.max(2);
    let base = seed::substream(seed_value, "isotopy/normalization");
    let mut rng = seed::rng(base);
    let envs: Vec<Environment> = (0..samples).map(|_| sample_like(env, &mut rng)).collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(mesh.len());
    for &t in mesh {
        let map = path.at(t)?;
        let vals: Vec<f64> = envs
            .iter()
            .map(|e| {
                let mut acc = 0.0;
                for (x, w) in nodes.iter().zip(&weights) {
                    acc += w * jacobian(&map, e, StripPoint { q: 0.0, p: *x }, JACOBIAN_STEP)?.det();
                }
                Ok(0.5 * acc)
            })
            .collect::<Result<_>>()?;
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        out.push(NormalizationValue { t, value: mean, mc_sd: (var / n).sqrt(), flagged: (mean - 1.0).abs() > NORMALIZATION_TOL });
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
