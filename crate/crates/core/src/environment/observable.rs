//! Stationary observables `f(q, ω) = f̄(τ_q ω)`, optionally with a `p`
//! dependence carried by a polynomial profile.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::{frac, Environment, QuasiPeriodicEnv};
use crate::error::{Error, Result};

/// Central-difference step for ω-derivatives of bump sums.
pub const OMEGA_FD_STEP: f64 = 1e-6;
const CONJUGATE_TOL: f64 = 1e-12;

/// Value and derivatives of an observable at `(q, p)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Jet {
    pub f: f64,
    pub f_q: f64,
    pub f_qq: f64,
    pub f_p: f64,
    pub f_pp: f64,
    pub f_qp: f64,
}

impl Jet {
    fn add_product(&mut self, q: [f64; 3], p: [f64; 3], scale: f64) {
        self.f += scale * q[0] * p[0];
        self.f_q += scale * q[1] * p[0];
        self.f_qq += scale * q[2] * p[0];
        self.f_p += scale * q[0] * p[1];
        self.f_pp += scale * q[0] * p[2];
        self.f_qp += scale * q[1] * p[1];
    }
}

/// Dependence on the momentum coordinate.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Profile {
    #[default]
    One,
    /// `Σ coeffs[j] p^j`.
    Poly { coeffs: Vec<f64> },
}

impl Profile {
    pub fn poly(coeffs: &[f64]) -> Self {
        Profile::Poly { coeffs: coeffs.to_vec() }
    }

    /// `1 − p²`.
    pub fn one_minus_p2() -> Self {
        Self::poly(&[1.0, 0.0, -1.0])
    }

    pub fn needs_p(&self) -> bool {
        matches!(self, Profile::Poly { .. })
    }

    /// Value, first and second derivative in `p`.
    pub fn eval(&self, p: f64) -> [f64; 3] {
        match self {
            Profile::One => [1.0, 0.0, 0.0],
            Profile::Poly { coeffs } => {
                let (mut v, mut d, mut dd) = (0.0, 0.0, 0.0);
                for (j, &c) in coeffs.iter().enumerate().rev() {
                    dd = dd * p + 2.0 * d;
                    d = d * p + v;
                    v = v * p + c;
                    let _ = j;
                }
                [v, d, dd]
            }
        }
    }

    fn key(&self) -> String {
        match self {
            Profile::One => "one".into(),
            Profile::Poly { coeffs } => {
                coeffs.iter().map(|c| format!("{:016x}", c.to_bits())).collect::<Vec<_>>().join(",")
            }
        }
    }
}

/// One term `c · e^{2πi⟨n,θ⟩} · profile(p)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierTerm {
    pub mode: Vec<i64>,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
    #[serde(default)]
    pub profile: Profile,
}

/// Real trigonometric polynomial on the torus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<FourierTerm>", into = "Vec<FourierTerm>")]
pub struct FourierObservable {
    terms: Vec<FourierTerm>,
}

impl TryFrom<Vec<FourierTerm>> for FourierObservable {
    type Error = Error;
    fn try_from(terms: Vec<FourierTerm>) -> Result<Self> {
        Self::new(terms)
    }
}

impl From<FourierObservable> for Vec<FourierTerm> {
    fn from(o: FourierObservable) -> Self {
        o.terms
    }
}

impl FourierObservable {
    /// Validates conjugate symmetry so the sum is real.
    pub fn new(terms: Vec<FourierTerm>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidSpec("empty Fourier term list".into()));
        }
        let k = terms[0].mode.len();
        if k == 0 || terms.iter().any(|t| t.mode.len() != k) {
            return Err(Error::InvalidSpec("inconsistent Fourier mode dimensions".into()));
        }
        let mut sums: BTreeMap<(Vec<i64>, String), (f64, f64)> = BTreeMap::new();
        for t in &terms {
            if !t.re.is_finite() || !t.im.is_finite() {
                return Err(Error::InvalidSpec("non-finite Fourier coefficient".into()));
            }
            let e = sums.entry((t.mode.clone(), t.profile.key())).or_insert((0.0, 0.0));
            e.0 += t.re;
            e.1 += t.im;
        }
        for ((mode, key), (re, im)) in &sums {
            let neg: Vec<i64> = mode.iter().map(|m| -m).collect();
            let (cre, cim) = sums.get(&(neg, key.clone())).copied().unwrap_or((0.0, 0.0));
            let scale = 1.0 + re.abs() + im.abs();
            if (re - cre).abs() > CONJUGATE_TOL * scale || (im + cim).abs() > CONJUGATE_TOL * scale {
                return Err(Error::InvalidSpec(format!(
                    "Fourier coefficients are not conjugate-symmetric at mode {mode:?}"
                )));
            }
        }
        Ok(Self { terms })
    }

    /// `amplitude · cos(2π⟨n,θ⟩ + phase) · profile(p)`.
    pub fn cosine(mode: Vec<i64>, amplitude: f64, phase: f64, profile: Profile) -> Self {
        let mut out = Self { terms: Vec::new() };
        out.push_cosine(mode, amplitude, phase, profile);
        out
    }

    /// Constant `c` on a `k`-torus.
    pub fn constant(k: usize, c: f64) -> Self {
        Self { terms: vec![FourierTerm { mode: vec![0; k], re: c, im: 0.0, profile: Profile::One }] }
    }

    /// Adds `amplitude · cos(2π⟨n,θ⟩ + phase) · profile(p)`.
    pub fn push_cosine(&mut self, mode: Vec<i64>, amplitude: f64, phase: f64, profile: Profile) {
        if mode.iter().all(|&m| m == 0) {
            self.terms.push(FourierTerm { mode, re: amplitude * phase.cos(), im: 0.0, profile });
            return;
        }
        let half = 0.5 * amplitude;
        let neg: Vec<i64> = mode.iter().map(|m| -m).collect();
        self.terms.push(FourierTerm {
            mode,
            re: half * phase.cos(),
            im: half * phase.sin(),
            profile: profile.clone(),
        });
        self.terms.push(FourierTerm { mode: neg, re: half * phase.cos(), im: -half * phase.sin(), profile });
    }

    pub fn terms(&self) -> &[FourierTerm] {
        &self.terms
    }

    pub fn k(&self) -> usize {
        self.terms[0].mode.len()
    }

    pub fn needs_p(&self) -> bool {
        self.terms.iter().any(|t| t.profile.needs_p())
    }

    /// Angular frequency `z = 2π⟨n,v⟩` of a mode.
    pub fn frequency(mode: &[i64], v: &[f64]) -> f64 {
        TAU * mode.iter().zip(v).map(|(&n, &x)| n as f64 * x).sum::<f64>()
    }

    /// Phase angle `2π⟨n, θ + q v⟩` reduced to `[0, 2π)`.
    pub fn angle(mode: &[i64], reduced_phase: &[f64]) -> f64 {
        let s: f64 = mode.iter().zip(reduced_phase).map(|(&n, &x)| n as f64 * x).sum();
        TAU * frac(s)
    }

    fn jet(&self, env: &QuasiPeriodicEnv, q: f64, p: f64) -> Result<Jet> {
        if env.k() != self.k() {
            return Err(Error::Incompatible(format!(
                "observable on a {}-torus, environment on a {}-torus",
                self.k(),
                env.k()
            )));
        }
        let x = env.phase_at(q);
        let mut jet = Jet::default();
        for t in &self.terms {
            let z = Self::frequency(&t.mode, env.v());
            let (s, c) = Self::angle(&t.mode, &x).sin_cos();
            let val = t.re * c - t.im * s;
            let d1 = -z * (t.re * s + t.im * c);
            let d2 = -z * z * val;
            jet.add_product([val, d1, d2], t.profile.eval(p), 1.0);
        }
        Ok(jet)
    }
}

/// Shape of a compactly supported bump of radius `R`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BumpShape {
    /// `(1 − x²/R²)²`, C¹.
    Quartic,
    /// `exp(1 − 1/(1 − x²/R²))`, C^∞.
    Smooth,
    /// `1 − |x|/R`, Lipschitz only.
    Tent,
}

impl BumpShape {
    /// Value and first two derivatives at `x` for radius `r`.
    pub fn eval(self, x: f64, r: f64) -> [f64; 3] {
        if x.abs() >= r {
            return [0.0; 3];
        }
        let s = x * x / (r * r);
        match self {
            BumpShape::Quartic => {
                let u = 1.0 - s;
                [u * u, -4.0 * x / (r * r) * u, -4.0 / (r * r) * u + 8.0 * x * x / r.powi(4)]
            }
            BumpShape::Smooth => {
                let u = 1.0 - s;
                let b = (1.0 - 1.0 / u).exp();
                let ds = 2.0 * x / (r * r);
                let dds = 2.0 / (r * r);
                let g1 = -ds / (u * u);
                let g2 = -dds / (u * u) - 2.0 * ds * ds / (u * u * u);
                [b, b * g1, b * (g2 + g1 * g1)]
            }
            BumpShape::Tent => [1.0 - x.abs() / r, -x.signum() / r, 0.0],
        }
    }

    pub fn differentiable(self) -> bool {
        !matches!(self, BumpShape::Tent)
    }
}

/// `amplitude · Σ_i bump(x_i + q) · profile(p)` over Poisson centers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpSum {
    pub shape: BumpShape,
    pub radius: f64,
    #[serde(default = "unit")]
    pub amplitude: f64,
    #[serde(default)]
    pub profile: Profile,
}

fn unit() -> f64 {
    1.0
}

impl BumpSum {
    pub fn new(shape: BumpShape, radius: f64, amplitude: f64, profile: Profile) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidSpec(format!("bump radius must be positive, got {radius}")));
        }
        Ok(Self { shape, radius, amplitude, profile })
    }

    /// Sum of bump values and derivatives in `q`, without the profile.
    pub fn q_part(&self, env: &super::PoissonEnv, q: f64) -> [f64; 3] {
        let mut acc = [0.0; 3];
        for x in env.points_in(-q - self.radius, -q + self.radius) {
            let b = self.shape.eval(x + q, self.radius);
            for i in 0..3 {
                acc[i] += self.amplitude * b[i];
            }
        }
        acc
    }
}

/// A stationary observable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StationaryObservable {
    Fourier { terms: FourierObservable },
    BumpSum { bump: BumpSum },
}

impl From<FourierObservable> for StationaryObservable {
    fn from(terms: FourierObservable) -> Self {
        StationaryObservable::Fourier { terms }
    }
}

impl From<BumpSum> for StationaryObservable {
    fn from(bump: BumpSum) -> Self {
        StationaryObservable::BumpSum { bump }
    }
}

impl StationaryObservable {
    pub fn needs_p(&self) -> bool {
        match self {
            StationaryObservable::Fourier { terms } => terms.needs_p(),
            StationaryObservable::BumpSum { bump } => bump.profile.needs_p(),
        }
    }

    pub fn differentiable(&self) -> bool {
        match self {
            StationaryObservable::Fourier { .. } => true,
            StationaryObservable::BumpSum { bump } => bump.shape.differentiable(),
        }
    }

    /// Value and analytic derivatives at `(q, p)`.
    ///
    /// `p` may be omitted only when no term depends on it.
    pub fn jet(&self, env: &Environment, q: f64, p: Option<f64>) -> Result<Jet> {
        let p = match p {
            Some(p) if !(-1.0..=1.0).contains(&p) => return Err(Error::OutsideStrip { p }),
            Some(p) => p,
            None if self.needs_p() => {
                return Err(Error::InvalidSpec("observable requires a p argument".into()))
            }
            None => 0.0,
        };
        match (self, env) {
            (StationaryObservable::Fourier { terms }, Environment::QuasiPeriodic(e)) => terms.jet(e, q, p),
            (StationaryObservable::BumpSum { bump }, Environment::Poisson(e)) => {
                let mut jet = Jet::default();
                jet.add_product(bump.q_part(e, q), bump.profile.eval(p), 1.0);
                Ok(jet)
            }
            (StationaryObservable::Fourier { .. }, Environment::Poisson(_)) => {
                Err(Error::Incompatible("Fourier observable needs a torus environment".into()))
            }
            (StationaryObservable::BumpSum { .. }, Environment::QuasiPeriodic(_)) => {
                Err(Error::Incompatible("bump sum needs a Poisson environment".into()))
            }
        }
    }
}

/// `f̄(τ_q ω)` at momentum `p`.
pub fn observe(obs: &StationaryObservable, env: &Environment, q: f64, p: Option<f64>) -> Result<f64> {
    Ok(obs.jet(env, q, p)?.f)
}

/// `∇f̄(τ_q ω) = d/da f(q + a, ω)` at `a = 0`.
///
/// Analytic for Fourier observables; a central difference with step
/// [`OMEGA_FD_STEP`] for bump sums.
pub fn omega_derivative(obs: &StationaryObservable, env: &Environment, q: f64, p: Option<f64>) -> Result<f64> {
    match obs {
        StationaryObservable::Fourier { .. } => Ok(obs.jet(env, q, p)?.f_q),
        StationaryObservable::BumpSum { bump } => {
            if !bump.shape.differentiable() {
                return Err(Error::NonDifferentiable(format!("{:?} bump", bump.shape)));
            }
            let h = OMEGA_FD_STEP;
            let plus = observe(obs, env, q + h, p)?;
            let minus = observe(obs, env, q - h, p)?;
            Ok((plus - minus) / (2.0 * h))
        }
    }
}

/// An ℝ²-valued observable made of two scalar components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorObservable(pub StationaryObservable, pub StationaryObservable);

impl VectorObservable {
    pub fn observe(&self, env: &Environment, q: f64, p: Option<f64>) -> Result<[f64; 2]> {
        Ok([observe(&self.0, env, q, p)?, observe(&self.1, env, q, p)?])
    }
}
