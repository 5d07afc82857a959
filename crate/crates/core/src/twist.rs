//! Maps of the strip `S = ℝ × [−1, 1]`: evaluation, Jacobians, composition,
//! inversion, verification of the twist axioms and fixed-point typing.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::numerics::{Eigen2, Mat2};
use crate::seed;

/// Excess `|p| − 1` that is silently clamped.
pub const CLAMP_SILENT: f64 = 1e-12;
/// Excess `|p| − 1` beyond which construction fails.
pub const CLAMP_HARD: f64 = 1e-9;
/// Default finite-difference step for Jacobians.
pub const JACOBIAN_STEP: f64 = 1e-5;
/// Fixed-point admission tolerance for classification.
pub const FIXED_POINT_TOL: f64 = 1e-6;
/// Eigenvalues within this distance of 1 are reported as marginal.
pub const MARGINAL_BAND: f64 = 1e-3;

/// A point of the strip.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StripPoint {
    pub q: f64,
    pub p: f64,
}

impl StripPoint {
    /// Builds a point, clamping `p` into `[−1, 1]` when it overshoots by at
    /// most [`CLAMP_HARD`].
    pub fn new(q: f64, p: f64) -> Result<Self> {
        if !q.is_finite() || !p.is_finite() {
            return Err(Error::InvalidSpec(format!("non-finite strip point ({q}, {p})")));
        }
        let excess = p.abs() - 1.0;
        if excess > CLAMP_HARD {
            return Err(Error::OutsideStrip { p });
        }
        if excess > CLAMP_SILENT {
            log::warn!("clamping p = {p} into the strip");
        }
        Ok(Self { q, p: p.clamp(-1.0, 1.0) })
    }

    pub fn dist(&self, other: &StripPoint) -> f64 {
        (self.q - other.q).abs().max((self.p - other.p).abs())
    }
}

/// Monotonicity of `p ↦ Q(q, p)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MonotoneSign {
    Positive,
    Negative,
    None,
}

impl MonotoneSign {
    pub fn flip(self) -> Self {
        match self {
            MonotoneSign::Positive => MonotoneSign::Negative,
            MonotoneSign::Negative => MonotoneSign::Positive,
            MonotoneSign::None => MonotoneSign::None,
        }
    }
}

/// How a map was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Explicit,
    FromH,
    FromTwistComposition,
    FromFlow,
    InverseOf,
}

/// A map of the strip parameterised by an environment.
pub trait StripMap: Send + Sync {
    fn eval(&self, env: &Environment, x: StripPoint) -> Result<StripPoint>;

    /// Exact Jacobian, when the map knows one.
    fn analytic_jacobian(&self, _env: &Environment, _x: StripPoint) -> Option<Result<Mat2>> {
        None
    }

    fn monotone_sign(&self) -> MonotoneSign;

    fn provenance(&self) -> Provenance;

    /// A specialised inverse, if cheaper than Newton inversion.
    fn inverse(&self) -> Option<TwistMapHandle> {
        None
    }

    fn describe(&self) -> String;
}

/// Shared handle to a strip map.
#[derive(Clone)]
pub struct TwistMapHandle(Arc<dyn StripMap>);

impl fmt::Debug for TwistMapHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TwistMapHandle({})", self.0.describe())
    }
}

impl TwistMapHandle {
    pub fn new<M: StripMap + 'static>(map: M) -> Self {
        Self(Arc::new(map))
    }

    /// `(q, p) ↦ (q + s p, p)`.
    pub fn shear(s: f64) -> Self {
        Self::new(Shear { s })
    }

    /// The standard shear `φ⁰(q, p) = (q + p, p)`.
    pub fn phi0() -> Self {
        Self::shear(1.0)
    }

    /// `(φ⁰)⁻¹(q, p) = (q − p, p)`.
    pub fn phi0_inv() -> Self {
        Self::shear(-1.0)
    }

    pub fn identity() -> Self {
        Self::shear(0.0)
    }

    /// Wraps a closure as a map without an analytic Jacobian.
    pub fn from_fn<F>(name: &str, sign: MonotoneSign, f: F) -> Self
    where
        F: Fn(&Environment, StripPoint) -> Result<StripPoint> + Send + Sync + 'static,
    {
        Self::new(FnMap { name: name.to_string(), sign, f: Box::new(f) })
    }

    pub fn apply(&self, env: &Environment, x: StripPoint) -> Result<StripPoint> {
        self.0.eval(env, x)
    }

    pub fn analytic_jacobian(&self, env: &Environment, x: StripPoint) -> Option<Result<Mat2>> {
        self.0.analytic_jacobian(env, x)
    }

    pub fn monotone_sign(&self) -> MonotoneSign {
        self.0.monotone_sign()
    }

    pub fn provenance(&self) -> Provenance {
        self.0.provenance()
    }

    pub fn describe(&self) -> String {
        self.0.describe()
    }

    /// The inverse map, specialised when the map provides one.
    pub fn inverse(&self) -> TwistMapHandle {
        self.0.inverse().unwrap_or_else(|| Self::new(Inverse { of: self.clone() }))
    }
}

struct Shear {
    s: f64,
}

impl StripMap for Shear {
    fn eval(&self, _env: &Environment, x: StripPoint) -> Result<StripPoint> {
        Ok(StripPoint { q: x.q + self.s * x.p, p: x.p })
    }

    fn analytic_jacobian(&self, _env: &Environment, _x: StripPoint) -> Option<Result<Mat2>> {
        Some(Ok(Mat2([[1.0, self.s], [0.0, 1.0]])))
    }

    fn monotone_sign(&self) -> MonotoneSign {
        if self.s > 0.0 {
            MonotoneSign::Positive
        } else if self.s < 0.0 {
            MonotoneSign::Negative
        } else {
            MonotoneSign::None
        }
    }

    fn provenance(&self) -> Provenance {
        Provenance::Explicit
    }

    fn inverse(&self) -> Option<TwistMapHandle> {
        Some(TwistMapHandle::shear(-self.s))
    }

    fn describe(&self) -> String {
        format!("shear(s = {})", self.s)
    }
}

type MapFn = dyn Fn(&Environment, StripPoint) -> Result<StripPoint> + Send + Sync;

struct FnMap {
    name: String,
    sign: MonotoneSign,
    f: Box<MapFn>,
}

impl StripMap for FnMap {
    fn eval(&self, env: &Environment, x: StripPoint) -> Result<StripPoint> {
        (self.f)(env, x)
    }

    fn monotone_sign(&self) -> MonotoneSign {
        self.sign
    }

    fn provenance(&self) -> Provenance {
        Provenance::Explicit
    }

    fn describe(&self) -> String {
        self.name.clone()
    }
}

struct Composite {
    maps: Vec<TwistMapHandle>,
}

impl StripMap for Composite {
    fn eval(&self, env: &Environment, x: StripPoint) -> Result<StripPoint> {
        self.maps.iter().try_fold(x, |y, m| m.apply(env, y))
    }

    fn analytic_jacobian(&self, env: &Environment, x: StripPoint) -> Option<Result<Mat2>> {
        let mut y = x;
        let mut acc = Mat2::IDENTITY;
        for m in &self.maps {
            let j = match m.analytic_jacobian(env, y)? {
                Ok(j) => j,
                Err(e) => return Some(Err(e)),
            };
            acc = j.mul(&acc);
            y = match m.apply(env, y) {
                Ok(y) => y,
                Err(e) => return Some(Err(e)),
            };
        }
        Some(Ok(acc))
    }

    fn monotone_sign(&self) -> MonotoneSign {
        if self.maps.len() == 1 {
            self.maps[0].monotone_sign()
        } else {
            MonotoneSign::None
        }
    }

    fn provenance(&self) -> Provenance {
        Provenance::FromTwistComposition
    }

    fn inverse(&self) -> Option<TwistMapHandle> {
        Some(TwistMapHandle::new(Composite { maps: self.maps.iter().rev().map(|m| m.inverse()).collect() }))
    }

    fn describe(&self) -> String {
        let parts: Vec<String> = self.maps.iter().map(|m| m.describe()).collect();
        format!("compose[{}]", parts.join(", "))
    }
}

struct Inverse {
    of: TwistMapHandle,
}

impl StripMap for Inverse {
    fn eval(&self, env: &Environment, y: StripPoint) -> Result<StripPoint> {
        invert(&self.of, env, y, INVERT_TOL)
    }

    fn analytic_jacobian(&self, env: &Environment, y: StripPoint) -> Option<Result<Mat2>> {
        let x = match self.eval(env, y) {
            Ok(x) => x,
            Err(e) => return Some(Err(e)),
        };
        let j = self.of.analytic_jacobian(env, x)?;
        Some(j.and_then(|j| j.inverse().ok_or_else(|| Error::InvalidSpec("singular Jacobian".into()))))
    }

    fn monotone_sign(&self) -> MonotoneSign {
        self.of.monotone_sign().flip()
    }

    fn provenance(&self) -> Provenance {
        Provenance::InverseOf
    }

    fn inverse(&self) -> Option<TwistMapHandle> {
        Some(self.of.clone())
    }

    fn describe(&self) -> String {
        format!("inverse({})", self.of.describe())
    }
}

const INVERT_TOL: f64 = 1e-12;

/// `F(x)`.
pub fn apply(map: &TwistMapHandle, env: &Environment, x: StripPoint) -> Result<StripPoint> {
    map.apply(env, x)
}

/// Jacobian of `map` at `x`: analytic when available, otherwise central
/// differences with step `h`, one-sided in `p` at the boundary lines.
pub fn jacobian(map: &TwistMapHandle, env: &Environment, x: StripPoint, h: f64) -> Result<Mat2> {
    if let Some(j) = map.analytic_jacobian(env, x) {
        return j;
    }
    fd_jacobian(map, env, x, h)
}

/// Finite-difference Jacobian, ignoring any analytic form.
pub fn fd_jacobian(map: &TwistMapHandle, env: &Environment, x: StripPoint, h: f64) -> Result<Mat2> {
    let at = |q: f64, p: f64| map.apply(env, StripPoint { q, p });
    let qp = at(x.q + h, x.p)?;
    let qm = at(x.q - h, x.p)?;
    let dq = [(qp.q - qm.q) / (2.0 * h), (qp.p - qm.p) / (2.0 * h)];
    let dp = if x.p + h <= 1.0 && x.p - h >= -1.0 {
        let a = at(x.q, x.p + h)?;
        let b = at(x.q, x.p - h)?;
        [(a.q - b.q) / (2.0 * h), (a.p - b.p) / (2.0 * h)]
    } else {
        // Second-order one-sided stencil pointing into the strip.
        let s = if x.p + h > 1.0 { -1.0 } else { 1.0 };
        let f0 = at(x.q, x.p)?;
        let f1 = at(x.q, x.p + s * h)?;
        let f2 = at(x.q, x.p + 2.0 * s * h)?;
        let d = |a: f64, b: f64, c: f64| s * (-3.0 * a + 4.0 * b - c) / (2.0 * h);
        [d(f0.q, f1.q, f2.q), d(f0.p, f1.p, f2.p)]
    };
    Ok(Mat2([[dq[0], dp[0]], [dq[1], dp[1]]]))
}

/// Composition with index 0 applied first.
pub fn compose(maps: &[TwistMapHandle]) -> Result<TwistMapHandle> {
    match maps.len() {
        0 => Err(Error::InvalidSpec("cannot compose an empty list".into())),
        1 => Ok(maps[0].clone()),
        _ => Ok(TwistMapHandle::new(Composite { maps: maps.to_vec() })),
    }
}

/// Solves `F(x) = y` by damped Newton seeded at `y`.
pub fn invert(map: &TwistMapHandle, env: &Environment, y: StripPoint, tol: f64) -> Result<StripPoint> {
    let mut x = y;
    let mut fx = map.apply(env, x)?;
    let mut res = fx.dist(&y);
    for _ in 0..100 {
        if res <= tol {
            return Ok(x);
        }
        let j = jacobian(map, env, x, 1e-7)?;
        let jinv = j.inverse().ok_or(Error::Divergence { iterations: 0, residual: res })?;
        let d = jinv.apply([fx.q - y.q, fx.p - y.p]);
        let mut lambda = 1.0;
        loop {
            let cand = StripPoint { q: x.q - lambda * d[0], p: (x.p - lambda * d[1]).clamp(-1.0, 1.0) };
            let fc = map.apply(env, cand)?;
            let rc = fc.dist(&y);
            if rc < res || lambda < 1e-4 {
                x = cand;
                fx = fc;
                res = rc;
                break;
            }
            lambda *= 0.5;
        }
    }
    if res <= tol {
        Ok(x)
    } else {
        Err(Error::Divergence { iterations: 100, residual: res })
    }
}

/// Tolerances and sampling setup for [`verify_twist`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyOptions {
    #[serde(default = "default_q_range")]
    pub q_range: [f64; 2],
    #[serde(default = "default_det_tol")]
    pub det_tol: f64,
    #[serde(default = "default_boundary_tol")]
    pub boundary_tol: f64,
    #[serde(default = "default_stationarity_tol")]
    pub stationarity_tol: f64,
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_q_range() -> [f64; 2] {
    [-5.0, 5.0]
}
fn default_det_tol() -> f64 {
    1e-4
}
fn default_boundary_tol() -> f64 {
    1e-8
}
fn default_stationarity_tol() -> f64 {
    1e-8
}
fn default_h() -> f64 {
    JACOBIAN_STEP
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            q_range: default_q_range(),
            det_tol: default_det_tol(),
            boundary_tol: default_boundary_tol(),
            stationarity_tol: default_stationarity_tol(),
            h: default_h(),
            seed: 0,
        }
    }
}

pub const REPORT_SCHEMA: &str = "report/1";

/// Pass/fail per clause of the twist definition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwistClauses {
    pub area: bool,
    pub boundary: bool,
    pub twist: bool,
    /// `None` when the map carries no monotonicity claim.
    pub monotone: Option<bool>,
    pub stationarity: bool,
}

/// Outcome of [`verify_twist`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwistReport {
    pub schema: String,
    pub map: String,
    pub n_samples: usize,
    pub det_residual: f64,
    pub boundary_residual: f64,
    /// `min_q Q̄(τ_q ω, 1)`.
    pub twist_margin_top: f64,
    /// `min_q −Q̄(τ_q ω, −1)`.
    pub twist_margin_bottom: f64,
    pub monotone_sign: MonotoneSign,
    /// `min ∂Q/∂p`, multiplied by −1 for negative maps.
    pub monotone_margin: f64,
    pub stationarity_residual: f64,
    /// Empirical mean of `Q̄² + P̄²`; informational only.
    pub second_moment: f64,
    pub clauses: TwistClauses,
    pub failing: Vec<String>,
    pub pass: bool,
}

/// Checks the twist axioms on a stratified sample.
pub fn verify_twist(
    map: &TwistMapHandle,
    env: &Environment,
    n_samples: usize,
    opts: &VerifyOptions,
) -> Result<TwistReport> {
    if n_samples == 0 {
        return Err(Error::InvalidSpec("verify_twist needs at least one sample".into()));
    }
    let mut rng = seed::rng(seed::substream(opts.seed, "verify"));
    let [lo, hi] = opts.q_range;
    let nq = (n_samples as f64).sqrt().ceil() as usize;
    let np = n_samples.div_ceil(nq);
    let dq = (hi - lo) / nq as f64;

    let mut det_res: f64 = 0.0;
    let mut mono: f64 = f64::INFINITY;
    let mut moment = 0.0;
    let mut count = 0usize;
    let sign = map.monotone_sign();
    let orient = if sign == MonotoneSign::Negative { -1.0 } else { 1.0 };
    'outer: for i in 0..nq {
        for j in 0..np {
            if count == n_samples {
                break 'outer;
            }
            let q = lo + (i as f64 + rng.random::<f64>()) * dq;
            let p = -1.0 + (j as f64 + rng.random::<f64>()) * 2.0 / np as f64;
            let x = StripPoint { q, p };
            let y = map.apply(env, x)?;
            let jac = jacobian(map, env, x, opts.h)?;
            det_res = det_res.max((jac.det() - 1.0).abs());
            mono = mono.min(orient * jac.0[0][1]);
            moment += (y.q - q).powi(2) + y.p * y.p;
            count += 1;
        }
    }

    let mut boundary: f64 = 0.0;
    let mut top = f64::INFINITY;
    let mut bottom = f64::INFINITY;
    for i in 0..nq {
        let q = lo + (i as f64 + rng.random::<f64>()) * dq;
        let up = map.apply(env, StripPoint { q, p: 1.0 })?;
        let down = map.apply(env, StripPoint { q, p: -1.0 })?;
        boundary = boundary.max((up.p - 1.0).abs()).max((down.p + 1.0).abs());
        top = top.min(up.q - q);
        bottom = bottom.min(q - down.q);
    }

    let mut stationarity: f64 = 0.0;
    for _ in 0..nq.min(64) {
        let q = rng.random_range(lo..hi);
        let a = rng.random_range(-1.0..1.0);
        let p = rng.random_range(-1.0..=1.0);
        let lhs = map.apply(env, StripPoint { q: q + a, p })?;
        let rhs = map.apply(&env.shift(a), StripPoint { q, p })?;
        stationarity = stationarity.max((lhs.q - a - rhs.q).abs()).max((lhs.p - rhs.p).abs());
    }

    let clauses = TwistClauses {
        area: det_res <= opts.det_tol,
        boundary: boundary <= opts.boundary_tol,
        twist: top > 0.0 && bottom > 0.0,
        monotone: (sign != MonotoneSign::None).then_some(mono > 0.0),
        stationarity: stationarity <= opts.stationarity_tol,
    };
    let mut failing = Vec::new();
    for (name, ok) in [
        ("area", clauses.area),
        ("boundary", clauses.boundary),
        ("twist", clauses.twist),
        ("monotone", clauses.monotone.unwrap_or(true)),
        ("stationarity", clauses.stationarity),
    ] {
        if !ok {
            failing.push(name.to_string());
        }
    }
    Ok(TwistReport {
        schema: REPORT_SCHEMA.into(),
        map: map.describe(),
        n_samples: count,
        det_residual: det_res,
        boundary_residual: boundary,
        twist_margin_top: top,
        twist_margin_bottom: bottom,
        monotone_sign: sign,
        monotone_margin: mono,
        stationarity_residual: stationarity,
        second_moment: moment / count as f64,
        pass: failing.is_empty(),
        clauses,
        failing,
    })
}

/// Type of a fixed point from the eigenvalues of its Jacobian.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FixedPointType {
    Positive,
    Negative,
    NonRealOrMixed,
}

impl fmt::Display for FixedPointType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FixedPointType::Positive => "positive",
            FixedPointType::Negative => "negative",
            FixedPointType::NonRealOrMixed => "non-real-or-mixed",
        })
    }
}

/// Eigen-data of a 2×2 Jacobian and its type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixClass {
    pub kind: FixedPointType,
    /// Real eigenvalues in decreasing order, or the real part twice.
    pub lambda: [f64; 2],
    /// Imaginary part of a complex pair, 0 for real spectra.
    pub im: f64,
    pub trace: f64,
    pub det: f64,
    /// Some eigenvalue lies within [`MARGINAL_BAND`] of 1.
    pub marginal: bool,
}

/// Classifies a matrix by the signs of its eigenvalues.
pub fn classify_matrix(m: &Mat2) -> MatrixClass {
    let (kind, lambda, im) = match m.eigenvalues() {
        Eigen2::Real(a, b) => {
            let kind = if a > 0.0 && b > 0.0 {
                FixedPointType::Positive
            } else if a < 0.0 && b < 0.0 {
                FixedPointType::Negative
            } else {
                FixedPointType::NonRealOrMixed
            };
            (kind, [a, b], 0.0)
        }
        Eigen2::Complex { re, im } => (FixedPointType::NonRealOrMixed, [re, re], im),
    };
    let marginal = im == 0.0 && lambda.iter().any(|l| (l - 1.0).abs() <= MARGINAL_BAND)
        || im != 0.0 && ((lambda[0] - 1.0).powi(2) + im * im).sqrt() <= MARGINAL_BAND;
    MatrixClass { kind, lambda, im, trace: m.trace(), det: m.det(), marginal }
}

/// A classified fixed point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointClass {
    pub point: StripPoint,
    pub residual: f64,
    pub class: MatrixClass,
}

/// Classifies a fixed point of `map` from its Jacobian.
pub fn classify_fixed_point(
    map: &TwistMapHandle,
    env: &Environment,
    x: StripPoint,
    h: f64,
) -> Result<FixedPointClass> {
    let y = map.apply(env, x)?;
    let residual = y.dist(&x);
    if residual > FIXED_POINT_TOL {
        return Err(Error::NotFixed { residual });
    }
    let j = jacobian(map, env, x, h)?;
    Ok(FixedPointClass { point: x, residual, class: classify_matrix(&j) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{PoissonEnv, QuasiPeriodicEnv};

    fn env() -> Environment {
        Environment::QuasiPeriodic(QuasiPeriodicEnv::new(vec![1.0, 2f64.sqrt()], vec![0.0, 0.0]).unwrap())
    }

    fn pt(q: f64, p: f64) -> StripPoint {
        StripPoint { q, p }
    }

    fn bent() -> TwistMapHandle {
        TwistMapHandle::from_fn("bent", MonotoneSign::Positive, |_, x| {
            StripPoint::new(x.q + x.p, x.p + 0.1 * (1.0 - x.p * x.p))
        })
    }

    #[test]
    fn strip_point_clamps() {
        assert_eq!(StripPoint::new(0.0, 1.0 + 1e-13).unwrap().p, 1.0);
        assert_eq!(StripPoint::new(0.0, -1.0 - 5e-10).unwrap().p, -1.0);
        assert!(StripPoint::new(0.0, 1.0 + 1e-8).is_err());
    }

    #[test]
    fn shear_examples() {
        let f = TwistMapHandle::phi0();
        assert_eq!(f.apply(&env(), pt(0.0, 0.5)).unwrap(), pt(0.5, 0.5));
        assert_eq!(f.apply(&env(), pt(3.0, -1.0)).unwrap(), pt(2.0, -1.0));
        let round = compose(&[TwistMapHandle::phi0_inv(), f.clone()]).unwrap();
        let y = round.apply(&env(), pt(1.2, 0.3)).unwrap();
        assert!(y.dist(&pt(1.2, 0.3)) < 1e-15);
    }

    #[test]
    fn jacobians() {
        let j = jacobian(&TwistMapHandle::phi0(), &env(), pt(0.3, 0.2), 1e-5).unwrap();
        assert_eq!(j, Mat2([[1.0, 1.0], [0.0, 1.0]]));
        let j = jacobian(&TwistMapHandle::identity(), &env(), pt(0.3, 0.2), 1e-5).unwrap();
        assert_eq!(j, Mat2::IDENTITY);
        let fd = fd_jacobian(&bent(), &env(), pt(0.0, 1.0), 1e-5).unwrap();
        // det = 1 − 0.2p
        assert!((fd.det() - 0.8).abs() < 1e-8);
    }

    #[test]
    fn composition_order_is_index_zero_first() {
        let f = compose(&[TwistMapHandle::shear(-1.0), TwistMapHandle::shear(1.5)]).unwrap();
        let y = f.apply(&env(), pt(0.0, 0.4)).unwrap();
        assert!(y.dist(&pt(0.2, 0.4)) < 1e-15);
        let single = compose(&[TwistMapHandle::phi0()]).unwrap();
        assert_eq!(single.apply(&env(), pt(1.0, 0.5)).unwrap(), pt(1.5, 0.5));
        assert!(compose(&[]).is_err());
    }

    #[test]
    fn inversion() {
        let x = invert(&TwistMapHandle::phi0(), &env(), pt(1.0, 0.4), 1e-10).unwrap();
        assert!(x.dist(&pt(0.6, 0.4)) < 1e-12);
        let y = invert(&TwistMapHandle::identity(), &env(), pt(1.0, 0.4), 1e-10).unwrap();
        assert_eq!(y, pt(1.0, 0.4));
        let generic = TwistMapHandle::new(Inverse { of: bent() });
        assert_eq!(generic.monotone_sign(), MonotoneSign::Negative);
        assert_eq!(generic.provenance(), Provenance::InverseOf);
        for &(q, p) in &[(0.0, 0.0), (1.0, 0.9), (-2.0, -1.0), (0.5, 1.0)] {
            let x = pt(q, p);
            let back = generic.apply(&env(), bent().apply(&env(), x).unwrap()).unwrap();
            assert!(back.dist(&x) < 1e-10, "{x:?} -> {back:?}");
        }
    }

    #[test]
    fn verify_shear_passes() {
        let r = verify_twist(&TwistMapHandle::phi0(), &env(), 100, &VerifyOptions::default()).unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(r.det_residual, 0.0);
        assert_eq!(r.twist_margin_top, 1.0);
        assert_eq!(r.twist_margin_bottom, 1.0);
        assert_eq!(r.schema, "report/1");
    }

    #[test]
    fn verify_flags_failures() {
        let r = verify_twist(&bent(), &env(), 400, &VerifyOptions::default()).unwrap();
        assert!(!r.clauses.area);
        assert!(r.det_residual > 0.19 && r.det_residual <= 0.2 + 1e-8, "{}", r.det_residual);
        assert!(r.failing.contains(&"area".to_string()));
        let r = verify_twist(&TwistMapHandle::identity(), &env(), 50, &VerifyOptions::default()).unwrap();
        assert!(!r.clauses.twist);
        assert_eq!(r.clauses.monotone, None);
    }

    #[test]
    fn loosening_tolerances_never_fails_more() {
        let strict = VerifyOptions { det_tol: 0.1, ..Default::default() };
        let loose = VerifyOptions { det_tol: 0.3, ..Default::default() };
        let a = verify_twist(&bent(), &env(), 100, &strict).unwrap();
        let b = verify_twist(&bent(), &env(), 100, &loose).unwrap();
        assert!(!a.clauses.area && b.clauses.area);
    }

    #[test]
    fn classification() {
        let c = classify_fixed_point(&TwistMapHandle::phi0(), &env(), pt(0.0, 0.0), 1e-5).unwrap();
        assert_eq!(c.class.kind, FixedPointType::Positive);
        assert_eq!(c.class.lambda, [1.0, 1.0]);
        assert!(c.class.marginal);
        let rot = classify_matrix(&Mat2([[0.0, -1.0], [1.0, 0.0]]));
        assert_eq!(rot.kind, FixedPointType::NonRealOrMixed);
        assert!((rot.im - 1.0).abs() < 1e-15);
        let neg = classify_matrix(&Mat2([[-2.0, 0.0], [0.0, -0.5]]));
        assert_eq!(neg.kind, FixedPointType::Negative);
        assert!(matches!(
            classify_fixed_point(&TwistMapHandle::phi0(), &env(), pt(0.0, 0.5), 1e-5),
            Err(Error::NotFixed { .. })
        ));
    }

    #[test]
    fn poisson_environment_shear_is_stationary() {
        let env = Environment::Poisson(PoissonEnv::from_cells(1.0, 3).unwrap());
        let r = verify_twist(&TwistMapHandle::phi0(), &env, 25, &VerifyOptions::default()).unwrap();
        assert_eq!(r.stationarity_residual, 0.0);
    }
}
