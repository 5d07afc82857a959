//! Moser correction of a path `F^t` whose density `ρ^t = det DF^t = 1 − tη`
//! is a trigonometric polynomial in `q`.
//!
//! For fixed `t` we solve `Δu = η` with `u_p(q, ±1) = 0`:
//! `η = k(p) + Σ_n e^{iθ_n(q)} Y_n(p)` with atoms at `z_n = 2π⟨n, v⟩`,
//! `u = h₀(p) + Σ_n e^{iθ_n(q)} (W_n(p) + H_n(p))` where
//! `W_n(p) = ∫_{−1}^p sinh((p − a) z)/z · Y_n(a) da` and `H_n` is the
//! harmonic correction `e^{zp} Γ₁ + e^{−zp} Γ₂` with
//! `Γ₂ = −z⁻¹ e^{−z} (e^{2z} − e^{−2z})⁻¹ Y′`, `Γ₁ = e^{2z} Γ₂`,
//! `Y′ = ∫_{−1}^{1} cosh((1 − a) z) Y_n(a) da`.
//! The flow of `X = ∇u / (θρ + 1 − θ)` for `θ ∈ [0, 1]` is `G^t`, and
//! `Λ^t = F^t ∘ G^t` is area preserving.
//!
//! `W_n` and `H_n` grow like `e^{2|z|}` and cancel in the sum, so roughly
//! `2|z| / ln 10` digits are lost per atom.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{Environment, FourierObservable, FourierTerm, Profile, QuasiPeriodicEnv, StationaryObservable};
use crate::error::{Error, Result};
use crate::numerics::gauss_legendre;
use crate::twist::{MonotoneSign, StripPoint, TwistMapHandle};

use super::IsotopyPath;

pub const MOSER_SCHEMA: &str = "moser/1";
const GL_NODES: usize = 64;
const ZERO_FREQUENCY: f64 = 1e-12;

fn poly_coeffs(profile: &Profile) -> Vec<f64> {
    match profile {
        Profile::One => vec![1.0],
        Profile::Poly { coeffs } => coeffs.clone(),
    }
}

fn poly_eval(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, a| acc * x + a)
}

/// Antiderivative vanishing at `−1`.
fn poly_integrate(c: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; c.len() + 1];
    for (j, a) in c.iter().enumerate() {
        out[j + 1] = a / (j + 1) as f64;
    }
    out[0] = -poly_eval(&out, -1.0);
    out
}

/// One spectral atom `Y_n(p; ω) = e^{2πi⟨n, θ⟩} Σ c_k P_k(p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub mode: Vec<i64>,
    pub z: f64,
    pub weights: Vec<(Complex64, Profile)>,
    /// `Y′` per unit phase factor.
    pub y_prime: Complex64,
    pub gamma1: Complex64,
    pub gamma2: Complex64,
}

impl Atom {
    fn weight(&self, a: f64) -> Complex64 {
        self.weights.iter().map(|(c, p)| c * p.eval(a)[0]).sum()
    }

    /// Phase factor `e^{2πi⟨n, θ + q v⟩}` of the atom at `q`.
    pub fn phase(&self, env: &QuasiPeriodicEnv, q: f64) -> Complex64 {
        Complex64::from_polar(1.0, FourierObservable::angle(&self.mode, &env.phase_at(q)))
    }

    /// `Y_n(p; τ_q ω)`.
    pub fn y(&self, env: &QuasiPeriodicEnv, q: f64, p: f64) -> Complex64 {
        self.phase(env, q) * self.weight(p)
    }
}

/// Solution of `Δu = η`, `u_p(·, ±1) = 0`, for unit time; `scale` multiplies
/// both `η` and `u`.
#[derive(Clone, Debug)]
pub struct MoserSolution {
    pub k_coeffs: Vec<f64>,
    pub h0_coeffs: Vec<f64>,
    pub atoms: Vec<Atom>,
    pub scale: f64,
    nodes: Arc<(Vec<f64>, Vec<f64>)>,
}

/// `(value, p-derivative)` of the atom bracket `W_n + H_n` per unit phase.
fn bracket(atom: &Atom, nodes: &(Vec<f64>, Vec<f64>), p: f64) -> (Complex64, Complex64) {
    let z = atom.z;
    let half = 0.5 * (p + 1.0);
    let (mut w, mut wp) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
    if half != 0.0 {
        for (x, wt) in nodes.0.iter().zip(&nodes.1) {
            let a = -1.0 + half * (x + 1.0);
            let y = atom.weight(a) * (wt * half);
            let d = (p - a) * z;
            w += y * (d.sinh() / z);
            wp += y * d.cosh();
        }
    }
    // H_n = Y′ e^{zp}Γ₁/Y′ + ... written stably in |z|.
    let zz = z.abs();
    let den = 1.0 - (-4.0 * zz).exp();
    let kh = -((zz * (p - 1.0)).exp() + (-zz * (3.0 + p)).exp()) / (zz * den);
    let khp = -((zz * (p - 1.0)).exp() - (-zz * (3.0 + p)).exp()) / den;
    (w + atom.y_prime * kh, wp + atom.y_prime * khp)
}

impl MoserSolution {
    fn torus<'a>(&self, env: &'a Environment) -> Result<&'a QuasiPeriodicEnv> {
        env.as_torus()
    }

    pub fn scaled(&self, scale: f64) -> Self {
        Self { scale, ..self.clone() }
    }

    /// `k(p)` (unit time).
    pub fn k(&self, p: f64) -> f64 {
        poly_eval(&self.k_coeffs, p)
    }

    /// `η(q, p)` at the current scale.
    pub fn eta(&self, env: &Environment, q: f64, p: f64) -> Result<f64> {
        let e = self.torus(env)?;
        let s: f64 = self.atoms.iter().map(|a| a.y(e, q, p).re).sum();
        Ok(self.scale * (self.k(p) + s))
    }

    /// `u(q, p)`; accepts `p` slightly outside the strip for stencils.
    pub fn u(&self, env: &Environment, q: f64, p: f64) -> Result<f64> {
        let e = self.torus(env)?;
        let s: f64 = self.atoms.iter().map(|a| (a.phase(e, q) * bracket(a, &self.nodes, p).0).re).sum();
        Ok(self.scale * (poly_eval(&self.h0_coeffs, p) + s))
    }

    /// Harmonic part `h = Σ e^{iθ_n} H_n`.
    pub fn harmonic(&self, env: &Environment, q: f64, p: f64) -> Result<f64> {
        let e = self.torus(env)?;
        let s: f64 = self
            .atoms
            .iter()
            .map(|a| {
                let zz = a.z.abs();
                let den = 1.0 - (-4.0 * zz).exp();
                let kh = -((zz * (p - 1.0)).exp() + (-zz * (3.0 + p)).exp()) / (zz * den);
                (a.phase(e, q) * a.y_prime * kh).re
            })
            .sum();
        Ok(self.scale * s)
    }

    /// `(u_q, u_p)`.
    pub fn grad_u(&self, env: &Environment, q: f64, p: f64) -> Result<[f64; 2]> {
        let e = self.torus(env)?;
        let h0p = poly_eval(&poly_derivative(&self.h0_coeffs), p);
        let (mut uq, mut up) = (0.0, h0p);
        for a in &self.atoms {
            let ph = a.phase(e, q);
            let (b, bp) = bracket(a, &self.nodes, p);
            uq += (Complex64::new(0.0, a.z) * ph * b).re;
            up += (ph * bp).re;
        }
        Ok([self.scale * uq, self.scale * up])
    }

    /// `X = ∇u / (θρ + 1 − θ)` with `ρ = 1 − η`.
    pub fn field(&self, env: &Environment, x: [f64; 2], theta: f64) -> Result<[f64; 2]> {
        let p = x[1].clamp(-1.0, 1.0);
        let g = self.grad_u(env, x[0], p)?;
        let m = 1.0 - theta * self.eta(env, x[0], p)?;
        if !(m > 0.0) {
            return Err(Error::InvalidSpec(format!("density θρ + 1 − θ = {m} is not positive")));
        }
        Ok([g[0] / m, g[1] / m])
    }

    /// Time-one map of `X` by RK4 with `steps` steps.
    pub fn flow(&self, env: &Environment, x: StripPoint, steps: usize) -> Result<StripPoint> {
        let h = 1.0 / steps as f64;
        let mut y = [x.q, x.p];
        for i in 0..steps {
            let th = i as f64 * h;
            let k1 = self.field(env, y, th)?;
            let k2 = self.field(env, [y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]], th + 0.5 * h)?;
            let k3 = self.field(env, [y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]], th + 0.5 * h)?;
            let k4 = self.field(env, [y[0] + h * k3[0], y[1] + h * k3[1]], th + h)?;
            for c in 0..2 {
                y[c] += h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
            }
        }
        StripPoint::new(y[0], y[1].clamp(-1.0, 1.0))
    }
}

fn poly_derivative(c: &[f64]) -> Vec<f64> {
    if c.len() <= 1 {
        return vec![0.0];
    }
    c.iter().enumerate().skip(1).map(|(j, a)| j as f64 * a).collect()
}

/// Solves `Δu = η` for a Fourier density perturbation `η`.
///
/// `h₀` uses Neumann data `h₀′(±1) = 0`, `h₀(−1) = 0`; this is what makes
/// `u_p(·, ±1) = 0` and is possible because `∫ k = 0`.
pub fn solve_moser(eta: &FourierObservable, v: &[f64]) -> Result<MoserSolution> {
    if eta.k() != v.len() {
        return Err(Error::Incompatible(format!("η lives on a {}-torus, v has {} entries", eta.k(), v.len())));
    }
    let mut k_coeffs: Vec<f64> = vec![0.0];
    let mut atoms: Vec<Atom> = Vec::new();
    for t in eta.terms() {
        let c = Complex64::new(t.re, t.im);
        if t.mode.iter().all(|&m| m == 0) {
            let pc = poly_coeffs(&t.profile);
            if k_coeffs.len() < pc.len() {
                k_coeffs.resize(pc.len(), 0.0);
            }
            for (j, a) in pc.iter().enumerate() {
                k_coeffs[j] += t.re * a;
            }
            continue;
        }
        let z = FourierObservable::frequency(&t.mode, v);
        if z.abs() < ZERO_FREQUENCY {
            return Err(Error::InvalidSpectrum(format!(
                "mode {:?} has frequency {z:e}; zero-frequency content must be the mean mode",
                t.mode
            )));
        }
        match atoms.iter_mut().find(|a| a.mode == t.mode) {
            Some(a) => a.weights.push((c, t.profile.clone())),
            None => atoms.push(Atom {
                mode: t.mode.clone(),
                z,
                weights: vec![(c, t.profile.clone())],
                y_prime: Complex64::new(0.0, 0.0),
                gamma1: Complex64::new(0.0, 0.0),
                gamma2: Complex64::new(0.0, 0.0),
            }),
        }
    }
    let mean = poly_eval(&poly_integrate(&k_coeffs), 1.0);
    if mean.abs() > 1e-10 * (1.0 + k_coeffs.iter().map(|c| c.abs()).sum::<f64>()) {
        return Err(Error::InvalidSpec(format!("½∫E η dp = {} must vanish", 0.5 * mean)));
    }
    let h0_coeffs = poly_integrate(&poly_integrate(&k_coeffs));
    let (nodes, weights) = gauss_legendre(GL_NODES);
    atoms.par_iter_mut().for_each(|a| {
        let z = a.z;
        let yp: Complex64 = nodes
            .iter()
            .zip(&weights)
            .map(|(x, w)| a.weight(*x) * (w * ((1.0 - x) * z).cosh()))
            .sum();
        a.y_prime = yp;
        a.gamma2 = -yp / (z * ((3.0 * z).exp() - (-z).exp()));
        a.gamma1 = -yp / (z * (z.exp() - (-3.0 * z).exp()));
    });
    Ok(MoserSolution { k_coeffs, h0_coeffs, atoms, scale: 1.0, nodes: Arc::new((nodes, weights)) })
}

/// Synthetic path `F^t(q, p) = (q − t A(τ_q ω, p), p)` with `A_q = η`, so
/// that `det DF^t = 1 − tη`.
#[derive(Clone, Debug)]
pub struct DensityPath {
    pub eta: FourierObservable,
    antiderivative: StationaryObservable,
}

impl DensityPath {
    pub fn new(eta: FourierObservable, v: &[f64]) -> Result<Self> {
        let mut terms = Vec::new();
        for t in eta.terms() {
            if t.mode.iter().all(|&m| m == 0) {
                return Err(Error::InvalidSpec("a density path needs η without a q-mean mode".into()));
            }
            let z = FourierObservable::frequency(&t.mode, v);
            if z.abs() < ZERO_FREQUENCY {
                return Err(Error::InvalidSpectrum(format!("mode {:?} has zero frequency", t.mode)));
            }
            terms.push(FourierTerm { mode: t.mode.clone(), re: t.im / z, im: -t.re / z, profile: t.profile.clone() });
        }
        Ok(Self { eta, antiderivative: FourierObservable::new(terms)?.into() })
    }

    /// `F^t`.
    pub fn map_at(&self, t: f64) -> TwistMapHandle {
        let a = self.antiderivative.clone();
        TwistMapHandle::from_fn(&format!("density path F^{t}"), MonotoneSign::None, move |env, x| {
            let s = a.jet(env, x.q, Some(x.p))?.f;
            StripPoint::new(x.q - t * s, x.p)
        })
    }
}

/// Grid and integration parameters of the Moser corrector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoserOptions {
    #[serde(default = "default_nq")]
    pub nq: usize,
    #[serde(default = "default_np")]
    pub np: usize,
    #[serde(default = "default_q_span")]
    pub q_span: f64,
    #[serde(default = "default_flow_steps")]
    pub flow_steps: usize,
}

fn default_nq() -> usize {
    256
}
fn default_np() -> usize {
    64
}
fn default_q_span() -> f64 {
    1.0
}
fn default_flow_steps() -> usize {
    64
}

impl Default for MoserOptions {
    fn default() -> Self {
        Self { nq: default_nq(), np: default_np(), q_span: default_q_span(), flow_steps: default_flow_steps() }
    }
}

/// Residuals of the assembled solution on the option grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoserResiduals {
    /// `sup |Δu − η|` with a fourth-order finite-difference Laplacian.
    pub laplacian: f64,
    /// `sup |u_p(q, ±1)|`.
    pub neumann: f64,
    /// `sup |Δh|` of the harmonic part.
    pub harmonic: f64,
}

const FD_STEP: f64 = 2e-3;

fn fd_laplacian(f: impl Fn(f64, f64) -> Result<f64>, q: f64, p: f64) -> Result<f64> {
    let h = FD_STEP;
    let c = f(q, p)?;
    let d2 = |a: f64, b: f64, m2: f64, m1: f64| (-a + 16.0 * b - 30.0 * c + 16.0 * m1 - m2) / (12.0 * h * h);
    let qq = d2(f(q + 2.0 * h, p)?, f(q + h, p)?, f(q - 2.0 * h, p)?, f(q - h, p)?);
    let pp = d2(f(q, p + 2.0 * h)?, f(q, p + h)?, f(q, p - 2.0 * h)?, f(q, p - h)?);
    Ok(qq + pp)
}

/// Finite-difference residuals of `u` on an `nq × np` grid.
pub fn moser_residuals(sol: &MoserSolution, env: &Environment, opts: &MoserOptions) -> Result<MoserResiduals> {
    let rows: Vec<[f64; 3]> = (0..opts.nq)
        .into_par_iter()
        .map(|i| -> Result<[f64; 3]> {
            let q = opts.q_span * i as f64 / opts.nq as f64;
            let mut r = [0.0f64; 3];
            for j in 0..opts.np {
                let p = -1.0 + 2.0 * j as f64 / (opts.np - 1).max(1) as f64;
                let lap = fd_laplacian(|a, b| sol.u(env, a, b), q, p)?;
                r[0] = r[0].max((lap - sol.eta(env, q, p)?).abs());
                r[2] = r[2].max(fd_laplacian(|a, b| sol.harmonic(env, a, b), q, p)?.abs());
            }
            for p in [-1.0, 1.0] {
                r[1] = r[1].max(sol.grad_u(env, q, p)?[1].abs());
            }
            Ok(r)
        })
        .collect::<Result<_>>()?;
    let fold = |k: usize| rows.iter().fold(0.0f64, |m, r| m.max(r[k]));
    Ok(MoserResiduals { laplacian: fold(0), neumann: fold(1), harmonic: fold(2) })
}

/// Corrected area-preserving path `Λ^t = F^t ∘ G^t`.
#[derive(Clone, Debug)]
pub struct CorrectedPath {
    pub density: DensityPath,
    pub solution: MoserSolution,
    pub residuals: MoserResiduals,
    pub flow_steps: usize,
}

impl CorrectedPath {
    /// `G^t`.
    pub fn corrector(&self, t: f64) -> TwistMapHandle {
        let sol = self.solution.scaled(t);
        let steps = self.flow_steps;
        TwistMapHandle::from_fn(&format!("moser corrector G^{t}"), MonotoneSign::None, move |env, x| {
            sol.flow(env, x, steps)
        })
    }

    /// `Λ^t`.
    pub fn at(&self, t: f64) -> Result<TwistMapHandle> {
        crate::twist::compose(&[self.corrector(t), self.density.map_at(t)])
    }

    pub fn into_path(self) -> IsotopyPath {
        let me = Arc::new(self);
        IsotopyPath::explicit("moser-corrected", Arc::new(move |t| me.at(t)))
    }

    pub fn record(&self) -> MoserRecord {
        MoserRecord::new(&self.solution, &self.residuals)
    }
}

/// Solves the corrector for `path` after checking that `ρ^t = 1 − tη`
/// stays positive on the option grid for `t ∈ [0, 1]`.
pub fn moser_correct(path: &DensityPath, env: &Environment, opts: &MoserOptions) -> Result<CorrectedPath> {
    let torus = env.as_torus()?;
    let sol = solve_moser(&path.eta, torus.v())?;
    for i in 0..opts.nq {
        let q = opts.q_span * i as f64 / opts.nq as f64;
        for j in 0..opts.np {
            let p = -1.0 + 2.0 * j as f64 / (opts.np - 1).max(1) as f64;
            let eta = sol.eta(env, q, p)?;
            if eta >= 1.0 {
                return Err(Error::InvalidSpec(format!("ρ¹ = 1 − η = {} is not positive at ({q}, {p})", 1.0 - eta)));
            }
        }
    }
    let residuals = moser_residuals(&sol, env, opts)?;
    Ok(CorrectedPath { density: path.clone(), solution: sol, residuals, flow_steps: opts.flow_steps })
}

/// One atom in the `moser/1` record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomRecord {
    pub mode: Vec<i64>,
    pub z: f64,
    pub y_prime: [f64; 2],
    pub gamma1: [f64; 2],
    pub gamma2: [f64; 2],
}

/// Serialized Moser solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoserRecord {
    pub schema: String,
    pub k_coeffs: Vec<f64>,
    pub h0_coeffs: Vec<f64>,
    pub atoms: Vec<AtomRecord>,
    pub residuals: MoserResiduals,
}

impl MoserRecord {
    pub fn new(sol: &MoserSolution, residuals: &MoserResiduals) -> Self {
        let c = |z: Complex64| [z.re, z.im];
        Self {
            schema: MOSER_SCHEMA.into(),
            k_coeffs: sol.k_coeffs.clone(),
            h0_coeffs: sol.h0_coeffs.clone(),
            atoms: sol
                .atoms
                .iter()
                .map(|a| AtomRecord { mode: a.mode.clone(), z: a.z, y_prime: c(a.y_prime), gamma1: c(a.gamma1), gamma2: c(a.gamma2) })
                .collect(),
            residuals: residuals.clone(),
        }
    }
}
