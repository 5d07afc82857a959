//! Stationary ergodic environments.
//!
//! Two families are supported: translations on a torus (`θ ↦ θ + a·v mod 1`)
//! and Poisson point configurations shifted by adding `a` to every point.
//! Observables evaluated at `τ_q ω` live in [`observable`].

pub mod observable;

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub use observable::{
    observe, omega_derivative, BumpShape, BumpSum, FourierObservable, FourierTerm, Jet, Profile,
    StationaryObservable, VectorObservable,
};

/// Default lattice bound for the irrationality certificate.
pub const DEFAULT_N_MAX: u64 = 1_000_000;
/// Number of lattice points the brute-force part of the certificate may visit.
const LATTICE_BUDGET: f64 = 2.0e6;
const CELL_CACHE_LIMIT: usize = 1 << 16;

/// Fractional part in `[0, 1)`.
pub fn frac(x: f64) -> f64 {
    let r = x - x.floor();
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Torus translation environment.
#[derive(Clone, Debug, PartialEq)]
pub struct QuasiPeriodicEnv {
    v: Vec<f64>,
    phase: Vec<f64>,
    n_max: u64,
}

impl QuasiPeriodicEnv {
    pub fn new(v: Vec<f64>, phase: Vec<f64>) -> Result<Self> {
        Self::with_bound(v, phase, DEFAULT_N_MAX)
    }

    /// Builds the environment after certifying `⟨v,n⟩ ≠ 0` for all nonzero
    /// integer vectors with `|n|∞ ≤ n_max` (see [`certify_frequencies`]).
    pub fn with_bound(v: Vec<f64>, phase: Vec<f64>, n_max: u64) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::InvalidSpec("empty frequency vector".into()));
        }
        if v.len() != phase.len() {
            return Err(Error::InvalidSpec(format!(
                "frequency vector has {} entries but phase has {}",
                v.len(),
                phase.len()
            )));
        }
        if v.iter().chain(&phase).any(|x| !x.is_finite()) {
            return Err(Error::InvalidSpec("non-finite frequency or phase".into()));
        }
        certify_frequencies(&v, n_max)?;
        let phase = phase.into_iter().map(frac).collect();
        Ok(Self { v, phase, n_max })
    }

    pub fn k(&self) -> usize {
        self.v.len()
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn phase(&self) -> &[f64] {
        &self.phase
    }

    pub fn n_max(&self) -> u64 {
        self.n_max
    }

    /// Phase of `τ_q ω`, reduced mod 1 componentwise.
    pub fn phase_at(&self, q: f64) -> Vec<f64> {
        self.phase.iter().zip(&self.v).map(|(t, v)| frac(t + q * v)).collect()
    }

    pub fn shift(&self, a: f64) -> Self {
        Self { v: self.v.clone(), phase: self.phase_at(a), n_max: self.n_max }
    }

    /// Same frequencies, different phase.
    pub fn with_phase(&self, phase: Vec<f64>) -> Result<Self> {
        if phase.len() != self.v.len() {
            return Err(Error::InvalidSpec("phase dimension mismatch".into()));
        }
        Ok(Self { v: self.v.clone(), phase: phase.into_iter().map(frac).collect(), n_max: self.n_max })
    }
}

/// Certifies that no nonzero `n ∈ ℤᵏ` with `|n|∞ ≤ n_max` has `⟨v,n⟩ = 0`
/// up to rounding.
///
/// Pairs of coordinates are checked with continued fractions up to the full
/// bound. For `k ≥ 3` a brute-force search over a smaller box covers mixed
/// relations; its radius is limited by a fixed lattice budget.
pub fn certify_frequencies(v: &[f64], n_max: u64) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InvalidSpec("empty frequency vector".into()));
    }
    if let Some(i) = v.iter().position(|&x| x == 0.0) {
        return Err(Error::InvalidSpec(format!("frequency v[{i}] is zero")));
    }
    for i in 0..v.len() {
        for j in (i + 1)..v.len() {
            if let Some((a, b)) = small_rational(v[i] / v[j], n_max) {
                return Err(Error::InvalidSpec(format!(
                    "frequencies are rationally dependent: v[{i}]/v[{j}] = {a}/{b}"
                )));
            }
        }
    }
    let k = v.len();
    if k >= 3 {
        let radius = ((LATTICE_BUDGET.powf(1.0 / k as f64) - 1.0) / 2.0).floor() as i64;
        let radius = radius.min(n_max as i64);
        if radius >= 1 {
            let mut n = vec![-radius; k];
            loop {
                let dot: f64 = n.iter().zip(v).map(|(&ni, &vi)| ni as f64 * vi).sum();
                let scale: f64 = n.iter().zip(v).map(|(&ni, &vi)| (ni as f64 * vi).abs()).sum();
                if n.iter().any(|&x| x != 0) && dot.abs() <= 8.0 * f64::EPSILON * scale {
                    return Err(Error::InvalidSpec(format!(
                        "frequencies are rationally dependent: n = {n:?}"
                    )));
                }
                let mut idx = 0;
                loop {
                    if idx == k {
                        return Ok(());
                    }
                    n[idx] += 1;
                    if n[idx] > radius {
                        n[idx] = -radius;
                        idx += 1;
                    } else {
                        break;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Returns `(p, q)` if `x` equals `p/q` to rounding with `0 < q ≤ n_max`
/// and `|p| ≤ n_max`.
fn small_rational(x: f64, n_max: u64) -> Option<(i64, i64)> {
    let bound = n_max as f64;
    let (mut p_prev, mut q_prev) = (1.0f64, 0.0f64);
    let a0 = x.floor();
    let (mut p, mut q) = (a0, 1.0f64);
    let mut r = x - a0;
    loop {
        if p.abs() > bound || q > bound {
            return None;
        }
        if (q * x - p).abs() <= 8.0 * f64::EPSILON * (q * x.abs() + p.abs()) || r == 0.0 {
            return Some((p as i64, q as i64));
        }
        let inv = 1.0 / r;
        let a = inv.floor();
        r = inv - a;
        let (pn, qn) = (a * p + p_prev, a * q + q_prev);
        p_prev = p;
        q_prev = q;
        p = pn;
        q = qn;
    }
}

#[derive(Debug)]
struct CellSource {
    intensity: f64,
    cell_seed: u64,
    cache: RwLock<HashMap<i64, Arc<[f64]>>>,
}

impl CellSource {
    fn cell(&self, i: i64) -> Arc<[f64]> {
        if let Some(c) = self.cache.read().expect("cell cache poisoned").get(&i) {
            return c.clone();
        }
        let mut rng = seed::rng(seed::substream_index(self.cell_seed, i));
        let count = Poisson::new(self.intensity).map(|d| d.sample(&mut rng)).unwrap_or(0.0) as usize;
        let mut pts: Vec<f64> = (0..count).map(|_| i as f64 + rng.random::<f64>()).collect();
        pts.sort_by(f64::total_cmp);
        let pts: Arc<[f64]> = pts.into();
        let mut cache = self.cache.write().expect("cell cache poisoned");
        if cache.len() >= CELL_CACHE_LIMIT {
            cache.clear();
        }
        cache.insert(i, pts.clone());
        pts
    }
}

#[derive(Clone, Debug)]
enum PointSource {
    Cells(Arc<CellSource>),
    Explicit(Arc<Vec<f64>>),
}

/// Poisson point environment.
///
/// Points are either regenerated per unit cell from `(cell_seed, i)` or
/// given explicitly. The shift is carried as an offset added to every point.
#[derive(Clone, Debug)]
pub struct PoissonEnv {
    source: PointSource,
    offset: f64,
}

impl PartialEq for PoissonEnv {
    fn eq(&self, other: &Self) -> bool {
        let same_source = match (&self.source, &other.source) {
            (PointSource::Cells(a), PointSource::Cells(b)) => {
                a.intensity == b.intensity && a.cell_seed == b.cell_seed
            }
            (PointSource::Explicit(a), PointSource::Explicit(b)) => a == b,
            _ => false,
        };
        same_source && self.offset == other.offset
    }
}

impl PoissonEnv {
    pub fn from_cells(intensity: f64, cell_seed: u64) -> Result<Self> {
        if !(intensity > 0.0) || !intensity.is_finite() {
            return Err(Error::InvalidSpec(format!("Poisson intensity must be positive, got {intensity}")));
        }
        Ok(Self {
            source: PointSource::Cells(Arc::new(CellSource {
                intensity,
                cell_seed,
                cache: RwLock::new(HashMap::new()),
            })),
            offset: 0.0,
        })
    }

    pub fn from_points(mut points: Vec<f64>) -> Result<Self> {
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidSpec("non-finite Poisson point".into()));
        }
        points.sort_by(f64::total_cmp);
        if points.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidSpec("Poisson points must be distinct".into()));
        }
        Ok(Self { source: PointSource::Explicit(Arc::new(points)), offset: 0.0 })
    }

    pub fn intensity(&self) -> Option<f64> {
        match &self.source {
            PointSource::Cells(c) => Some(c.intensity),
            PointSource::Explicit(_) => None,
        }
    }

    pub fn cell_seed(&self) -> Option<u64> {
        match &self.source {
            PointSource::Cells(c) => Some(c.cell_seed),
            PointSource::Explicit(_) => None,
        }
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn shift(&self, a: f64) -> Self {
        Self { source: self.source.clone(), offset: self.offset + a }
    }

    /// Sorted points of the (shifted) configuration inside `[lo, hi]`.
    pub fn points_in(&self, lo: f64, hi: f64) -> Vec<f64> {
        let (blo, bhi) = (lo - self.offset, hi - self.offset);
        let mut out = Vec::new();
        match &self.source {
            PointSource::Cells(src) => {
                let first = blo.floor() as i64;
                let last = bhi.floor() as i64;
                for i in first..=last {
                    for &x in src.cell(i).iter() {
                        let y = x + self.offset;
                        if y >= lo && y <= hi {
                            out.push(y);
                        }
                    }
                }
            }
            PointSource::Explicit(pts) => {
                let start = pts.partition_point(|&x| x + self.offset < lo);
                for &x in &pts[start..] {
                    let y = x + self.offset;
                    if y > hi {
                        break;
                    }
                    out.push(y);
                }
            }
        }
        out
    }
}

/// A sample point ω of one of the supported environments.
#[derive(Clone, Debug, PartialEq)]
pub enum Environment {
    QuasiPeriodic(QuasiPeriodicEnv),
    Poisson(PoissonEnv),
}

impl Environment {
    /// `τ_a ω`.
    pub fn shift(&self, a: f64) -> Environment {
        match self {
            Environment::QuasiPeriodic(e) => Environment::QuasiPeriodic(e.shift(a)),
            Environment::Poisson(e) => Environment::Poisson(e.shift(a)),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Environment::QuasiPeriodic(_) => "quasi-periodic",
            Environment::Poisson(_) => "poisson",
        }
    }

    pub fn as_torus(&self) -> Result<&QuasiPeriodicEnv> {
        match self {
            Environment::QuasiPeriodic(e) => Ok(e),
            Environment::Poisson(_) => Err(Error::Incompatible("torus environment required".into())),
        }
    }
}

/// `τ_a ω` as a free function.
pub fn shift(env: &Environment, a: f64) -> Environment {
    env.shift(a)
}

fn default_n_max() -> u64 {
    DEFAULT_N_MAX
}

fn default_window() -> [f64; 2] {
    [-10.0, 10.0]
}

fn default_margin() -> f64 {
    1.0
}

/// Description of an environment to sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnvSpec {
    QuasiPeriodic {
        v: Vec<f64>,
        /// Fixed phase; sampled uniformly when absent.
        #[serde(default)]
        phase: Option<Vec<f64>>,
        #[serde(default = "default_n_max")]
        n_max: u64,
    },
    Poisson {
        lambda: f64,
        /// Explicit configuration; cells are regenerated from the seed when absent.
        #[serde(default)]
        points: Option<Vec<f64>>,
        /// Window materialised into serialized samples.
        #[serde(default = "default_window")]
        window: [f64; 2],
        /// Extra margin around the window (the bump radius).
        #[serde(default = "default_margin")]
        margin: f64,
    },
}

/// Deterministic environment for `(spec, seed)`.
pub fn sample_env(spec: &EnvSpec, seed_value: u64) -> Result<Environment> {
    match spec {
        EnvSpec::QuasiPeriodic { v, phase, n_max } => {
            if v.is_empty() {
                return Err(Error::InvalidSpec("empty frequency vector".into()));
            }
            let phase = match phase {
                Some(p) => p.clone(),
                None => {
                    let mut rng = seed::rng(seed::substream(seed_value, "env/phase"));
                    (0..v.len()).map(|_| rng.random::<f64>()).collect()
                }
            };
            Ok(Environment::QuasiPeriodic(QuasiPeriodicEnv::with_bound(v.clone(), phase, *n_max)?))
        }
        EnvSpec::Poisson { lambda, points, .. } => {
            if !(*lambda > 0.0) {
                return Err(Error::InvalidSpec(format!("Poisson intensity must be positive, got {lambda}")));
            }
            match points {
                Some(p) => Ok(Environment::Poisson(PoissonEnv::from_points(p.clone())?)),
                None => Ok(Environment::Poisson(PoissonEnv::from_cells(
                    *lambda,
                    seed::substream(seed_value, "env/cells"),
                )?)),
            }
        }
    }
}

/// Schema tag of serialized environments.
pub const ENV_SCHEMA: &str = "env/1";

/// Serialized environment sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvDocument {
    pub schema: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<f64>>,
}

impl EnvDocument {
    /// Serializes `env`; Poisson samples materialise their points on `window`.
    pub fn from_env(env: &Environment, window: Option<[f64; 2]>) -> Self {
        match env {
            Environment::QuasiPeriodic(e) => EnvDocument {
                schema: ENV_SCHEMA.into(),
                kind: "quasi-periodic".into(),
                k: Some(e.k()),
                v: Some(e.v().to_vec()),
                phase: Some(e.phase().to_vec()),
                n_max: Some(e.n_max()),
                lambda: None,
                cell_seed: None,
                offset: None,
                window: None,
                points: None,
            },
            Environment::Poisson(e) => {
                let points = match (window, e.cell_seed()) {
                    (Some([lo, hi]), _) => Some(e.points_in(lo, hi)),
                    (None, None) => Some(e.points_in(f64::NEG_INFINITY, f64::INFINITY)),
                    (None, Some(_)) => None,
                };
                EnvDocument {
                    schema: ENV_SCHEMA.into(),
                    kind: "poisson".into(),
                    k: None,
                    v: None,
                    phase: None,
                    n_max: None,
                    lambda: e.intensity(),
                    cell_seed: e.cell_seed(),
                    offset: Some(e.offset()),
                    window,
                    points,
                }
            }
        }
    }

    pub fn to_env(&self) -> Result<Environment> {
        if self.schema != ENV_SCHEMA {
            return Err(Error::InvalidSpec(format!("expected schema {ENV_SCHEMA}, got {}", self.schema)));
        }
        match self.kind.as_str() {
            "quasi-periodic" => {
                let v = self.v.clone().ok_or_else(|| Error::InvalidSpec("missing v".into()))?;
                let phase = self.phase.clone().ok_or_else(|| Error::InvalidSpec("missing phase".into()))?;
                Ok(Environment::QuasiPeriodic(QuasiPeriodicEnv::with_bound(
                    v,
                    phase,
                    self.n_max.unwrap_or(DEFAULT_N_MAX),
                )?))
            }
            "poisson" => {
                let offset = self.offset.unwrap_or(0.0);
                let env = match (self.cell_seed, &self.points) {
                    (Some(seed_value), _) => {
                        let lambda = self.lambda.ok_or_else(|| Error::InvalidSpec("missing lambda".into()))?;
                        PoissonEnv::from_cells(lambda, seed_value)?.shift(offset)
                    }
                    // Explicit points are stored at their shifted positions.
                    (None, Some(points)) => PoissonEnv::from_points(points.clone())?,
                    (None, None) => {
                        return Err(Error::InvalidSpec("poisson sample without points or cell_seed".into()))
                    }
                };
                Ok(Environment::Poisson(env))
            }
            other => Err(Error::InvalidSpec(format!("unknown environment kind {other}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn torus(phase: [f64; 2]) -> QuasiPeriodicEnv {
        QuasiPeriodicEnv::new(vec![1.0, 2f64.sqrt()], phase.to_vec()).unwrap()
    }

    #[test]
    fn torus_shift_by_one() {
        let e = torus([0.0, 0.0]).shift(1.0);
        assert_eq!(e.phase()[0], 0.0);
        assert!((e.phase()[1] - (2f64.sqrt() - 1.0)).abs() < 1e-15);
        assert!((e.phase()[1] - 0.41421356).abs() < 1e-8);
    }

    #[test]
    fn shift_by_zero_is_identity() {
        let e = Environment::QuasiPeriodic(torus([0.3, 0.7]));
        assert_eq!(e.shift(0.0), e);
        let p = Environment::Poisson(PoissonEnv::from_points(vec![-0.3, 1.2]).unwrap());
        assert_eq!(p.shift(0.0), p);
    }

    #[test]
    fn poisson_explicit_shift() {
        let e = PoissonEnv::from_points(vec![-0.3, 1.2]).unwrap().shift(0.5);
        let pts = e.points_in(-10.0, 10.0);
        assert_eq!(pts.len(), 2);
        assert!((pts[0] - 0.2).abs() < 1e-15 && (pts[1] - 1.7).abs() < 1e-15);
    }

    #[test]
    fn rational_frequencies_rejected() {
        assert!(QuasiPeriodicEnv::new(vec![1.0, 1.5], vec![0.0, 0.0]).is_err());
        assert!(QuasiPeriodicEnv::new(vec![2.0, 0.0], vec![0.0, 0.0]).is_err());
        assert!(QuasiPeriodicEnv::new(vec![], vec![]).is_err());
        assert!(certify_frequencies(&[1.0, 2f64.sqrt(), 1.0 + 2f64.sqrt()], 1000).is_err());
        assert!(certify_frequencies(&[1.0, 2f64.sqrt(), 3f64.sqrt()], 1000).is_ok());
        assert!(certify_frequencies(&[1.0, 2f64.sqrt()], DEFAULT_N_MAX).is_ok());
        // Rational only beyond the bound.
        assert!(certify_frequencies(&[1.0, 1.0 + 1.0 / 1_000_003.0], 1000).is_ok());
    }

    #[test]
    fn cells_are_reproducible() {
        let a = PoissonEnv::from_cells(1.5, 42).unwrap();
        let b = PoissonEnv::from_cells(1.5, 42).unwrap();
        let pa = a.points_in(-20.0, 20.0);
        let pb = b.points_in(-20.0, 20.0);
        assert_eq!(pa.len(), pb.len());
        assert!(pa.iter().zip(&pb).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(pa.windows(2).all(|w| w[0] < w[1]));
        // Regeneration order does not matter.
        let c = PoissonEnv::from_cells(1.5, 42).unwrap();
        let late = c.points_in(10.0, 20.0);
        let early = c.points_in(-20.0, 10.0);
        assert_eq!(early.len() + late.len(), pa.len());
    }

    #[test]
    fn sample_env_errors_and_determinism() {
        let spec = EnvSpec::QuasiPeriodic { v: vec![1.0, 2f64.sqrt()], phase: None, n_max: DEFAULT_N_MAX };
        let a = sample_env(&spec, 7).unwrap();
        let b = sample_env(&spec, 7).unwrap();
        assert_eq!(a, b);
        let th = a.as_torus().unwrap().phase();
        assert!(th.iter().all(|t| (0.0..1.0).contains(t)));
        let bad = EnvSpec::Poisson { lambda: 0.0, points: None, window: [-1.0, 1.0], margin: 1.0 };
        assert!(sample_env(&bad, 1).is_err());
        let empty = EnvSpec::QuasiPeriodic { v: vec![], phase: None, n_max: 10 };
        assert!(sample_env(&empty, 1).is_err());
    }

    #[test]
    fn env_document_round_trip() {
        let spec = EnvSpec::Poisson { lambda: 1.0, points: None, window: [-5.0, 5.0], margin: 1.0 };
        let env = sample_env(&spec, 3).unwrap().shift(0.25);
        let doc = EnvDocument::from_env(&env, Some([-6.0, 6.0]));
        let text = serde_json::to_string(&doc).unwrap();
        let back: EnvDocument = serde_json::from_str(&text).unwrap();
        let env2 = back.to_env().unwrap();
        assert_eq!(env, env2);
        let t = Environment::QuasiPeriodic(torus([0.1, 0.9]));
        let doc = EnvDocument::from_env(&t, None);
        assert_eq!(doc.to_env().unwrap(), t);
    }

    #[test]
    fn env_spec_rejects_unknown_keys() {
        let bad = r#"{"kind":"quasi-periodic","v":[1.0,1.4142],"colour":3}"#;
        assert!(serde_json::from_str::<EnvSpec>(bad).is_err());
        let good = r#"{"kind":"poisson","lambda":2.0}"#;
        let spec: EnvSpec = serde_json::from_str(good).unwrap();
        assert!(matches!(spec, EnvSpec::Poisson { margin, .. } if margin == 1.0));
    }
}
