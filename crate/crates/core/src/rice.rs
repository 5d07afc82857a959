//! Critical points of stationary scalar processes `ψ(q, ω) = ψ̄(τ_q ω)`:
//! counting, the mollified lower bound and the Rice density estimate.

use std::f64::consts::TAU;
use std::sync::OnceLock;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{
    certify_frequencies, Environment, FourierObservable, PoissonEnv, DEFAULT_N_MAX, Profile, QuasiPeriodicEnv, StationaryObservable,
};
use crate::error::{Error, Result};
use crate::numerics::{adaptive_simpson, bisect, gauss_legendre};
use crate::seed;

/// Zero refinement tolerance.
pub const ZERO_TOL: f64 = 1e-10;
/// Zeros with `|ψ″|` below this are degenerate.
pub const DEGENERATE_TOL: f64 = 1e-8;
/// Number of Monte Carlo batches.
pub const BATCHES: usize = 20;
/// Points per scanning chunk; each chunk re-anchors the recurrence.
const CHUNK: usize = 4096;
const WINDOW_EPS: f64 = 1e-9;
/// Local PCA eigenvalue ratio below which the sample support is curve-like.
pub const SINGULAR_RATIO: f64 = 1e-3;

pub const RICE_SCHEMA: &str = "rice/1";

/// One cosine wave `A cos(z q + φ)` of a Fourier process bound to a torus.
#[derive(Clone, Copy, Debug)]
struct Wave {
    amp: f64,
    z: f64,
    phase: f64,
}

/// A stationary scalar observable read along the orbit, without `p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScalarProcess {
    obs: StationaryObservable,
}

impl ScalarProcess {
    pub fn new(obs: StationaryObservable) -> Result<Self> {
        if obs.needs_p() {
            return Err(Error::InvalidSpec("a scalar process cannot depend on p".into()));
        }
        if !obs.differentiable() {
            return Err(Error::NonDifferentiable("a scalar process needs two derivatives".into()));
        }
        Ok(Self { obs })
    }

    pub fn observable(&self) -> &StationaryObservable {
        &self.obs
    }

    /// `Σ_k a_k cos(2π θ_k)` on a `k`-torus; returns the process and the
    /// frequency vector.
    pub fn trigonometric(amplitudes: &[f64]) -> Result<Self> {
        let k = amplitudes.len();
        if k == 0 {
            return Err(Error::InvalidSpec("empty amplitude list".into()));
        }
        let mut obs: Option<FourierObservable> = None;
        for (i, &a) in amplitudes.iter().enumerate() {
            let mut mode = vec![0; k];
            mode[i] = 1;
            match obs.as_mut() {
                None => obs = Some(FourierObservable::cosine(mode, a, 0.0, Profile::One)),
                Some(o) => o.push_cosine(mode, a, 0.0, Profile::One),
            }
        }
        Self::new(obs.expect("k ≥ 1").into())
    }

    /// Random trigonometric process with `modes` waves: amplitudes uniform
    /// on `[0.5, 1.5]/√modes`, frequencies uniform on `[0.5, 1.5]`.
    /// Returns the process and its frequency vector.
    pub fn random_trigonometric(modes: usize, seed_value: u64) -> Result<(Self, Vec<f64>)> {
        let mut rng = seed::rng(seed::substream(seed_value, "rice/process"));
        let scale = 1.0 / (modes.max(1) as f64).sqrt();
        let amps: Vec<f64> = (0..modes).map(|_| scale * rng.random_range(0.5..1.5)).collect();
        // Redraw until the frequencies pass the irrationality certificate.
        for _ in 0..1000 {
            let v: Vec<f64> = (0..modes).map(|_| rng.random_range(0.5..1.5)).collect();
            if certify_frequencies(&v, DEFAULT_N_MAX).is_ok() {
                return Ok((Self::trigonometric(&amps)?, v));
            }
        }
        Err(Error::InvalidSpec(format!("no certified frequency vector with {modes} modes")))
    }

    /// `(ψ, ψ′, ψ″)` at `q`.
    pub fn jet(&self, env: &Environment, q: f64) -> Result<[f64; 3]> {
        let j = self.obs.jet(env, q, None)?;
        Ok([j.f, j.f_q, j.f_qq])
    }

    /// Waves of a Fourier process on a torus, conjugate pairs merged.
    fn waves(&self, env: &Environment) -> Result<Option<Vec<Wave>>> {
        let (StationaryObservable::Fourier { terms }, Environment::QuasiPeriodic(e)) = (&self.obs, env) else {
            return Ok(None);
        };
        if terms.k() != e.k() {
            return Err(Error::Incompatible(format!(
                "observable on a {}-torus, environment on a {}-torus",
                terms.k(),
                e.k()
            )));
        }
        let phase = e.phase();
        let mut out = Vec::new();
        for t in terms.terms() {
            let Some(lead) = t.mode.iter().copied().find(|&m| m != 0) else { continue };
            if lead < 0 {
                continue;
            }
            let amp = 2.0 * t.re.hypot(t.im);
            if amp == 0.0 {
                continue;
            }
            out.push(Wave {
                amp,
                z: FourierObservable::frequency(&t.mode, e.v()),
                phase: t.im.atan2(t.re) + FourierObservable::angle(&t.mode, phase),
            });
        }
        Ok(Some(out))
    }

    /// Largest angular frequency, if the process is a Fourier sum.
    pub fn max_frequency(&self, env: &Environment) -> Result<Option<f64>> {
        Ok(self.waves(env)?.map(|w| w.iter().fold(0.0f64, |m, w| m.max(w.z.abs()))))
    }

    /// `1/16` of the shortest period; `1e−3` for bump processes.
    pub fn default_scan_step(&self, env: &Environment) -> Result<f64> {
        Ok(match self.max_frequency(env)? {
            Some(z) if z > 0.0 => TAU / z / 16.0,
            _ => 1e-3,
        })
    }
}

fn wave_derivs(waves: &[Wave], q: f64) -> (f64, f64) {
    let (mut d1, mut d2) = (0.0, 0.0);
    for w in waves {
        let (s, c) = (w.z * q + w.phase).sin_cos();
        d1 -= w.amp * w.z * s;
        d2 -= w.amp * w.z * w.z * c;
    }
    (d1, d2)
}

/// `(ψ′, ψ″)` at `q0 + i h` for `i < n`, using a rotation recurrence from a
/// direct evaluation at `q0`.
fn wave_grid(waves: &[Wave], q0: f64, h: f64, n: usize) -> Vec<(f64, f64)> {
    let mut state: Vec<(f64, f64)> = waves.iter().map(|w| (w.z * q0 + w.phase).sin_cos()).collect();
    let rot: Vec<(f64, f64)> = waves.iter().map(|w| (w.z * h).sin_cos()).collect();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let (mut d1, mut d2) = (0.0, 0.0);
        for ((s, c), (w, (rs, rc))) in state.iter_mut().zip(waves.iter().zip(&rot)) {
            d1 -= w.amp * w.z * *s;
            d2 -= w.amp * w.z * w.z * *c;
            let (ns, nc) = (*s * rc + *c * rs, *c * rc - *s * rs);
            *s = ns;
            *c = nc;
        }
        out.push((d1, d2));
    }
    out
}

/// Evaluator of `(ψ′, ψ″)` used by the scanner.
enum Derivs<'a> {
    Waves(Vec<Wave>),
    Generic(&'a ScalarProcess, &'a Environment),
}

impl Derivs<'_> {
    fn at(&self, q: f64) -> Result<(f64, f64)> {
        match self {
            Derivs::Waves(w) => Ok(wave_derivs(w, q)),
            Derivs::Generic(p, e) => {
                let j = p.jet(e, q)?;
                Ok((j[1], j[2]))
            }
        }
    }

    fn grid(&self, q0: f64, h: f64, n: usize) -> Result<Vec<(f64, f64)>> {
        match self {
            Derivs::Waves(w) => Ok(wave_grid(w, q0, h, n)),
            Derivs::Generic(..) => (0..n).map(|i| self.at(q0 + i as f64 * h)).collect(),
        }
    }
}

fn derivs<'a>(proc_: &'a ScalarProcess, env: &'a Environment) -> Result<Derivs<'a>> {
    Ok(match proc_.waves(env)? {
        Some(w) => Derivs::Waves(w),
        None => Derivs::Generic(proc_, env),
    })
}

/// A sign change of `ψ′`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Zero {
    pub q: f64,
    pub psi2: f64,
    /// `+1` where `ψ′` goes from negative to positive.
    pub jump: i8,
}

/// Result of [`count_critical`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalCount {
    pub ell: f64,
    pub scan_step: f64,
    /// Nondegenerate zeros of `ψ′` in `[−ℓ, ℓ)`.
    pub count: usize,
    /// Zeros with `|ψ″| < 1e−8`, including grid points where `ψ′` vanishes
    /// identically.
    pub degenerate: usize,
    /// Every sign change found in `[−ℓ, ℓ)`, degenerate or not.
    pub zeros: Vec<Zero>,
}

impl CriticalCount {
    pub fn density(&self) -> f64 {
        self.count as f64 / (2.0 * self.ell)
    }

    pub fn locations(&self) -> Vec<f64> {
        self.zeros.iter().filter(|z| z.psi2.abs() >= DEGENERATE_TOL).map(|z| z.q).collect()
    }
}

fn in_window(q: f64, ell: f64) -> bool {
    q >= -ell - WINDOW_EPS && q < ell - WINDOW_EPS
}

/// Counts zeros of `ψ′` in `[−ℓ, ℓ)` by sign changes on a grid, refined by
/// bisection to `1e−10`.
pub fn count_critical(proc_: &ScalarProcess, env: &Environment, ell: f64, scan_step: f64) -> Result<CriticalCount> {
    if !(ell > 0.0 && scan_step > 0.0) {
        return Err(Error::InvalidSpec(format!("need ℓ > 0 and a positive scan step, got {ell}, {scan_step}")));
    }
    let d = derivs(proc_, env)?;
    let start = -ell - 2.0 * scan_step;
    let total = ((2.0 * ell + 4.0 * scan_step) / scan_step).ceil() as usize + 1;
    let chunks = total.div_ceil(CHUNK);
    let per_chunk: Vec<(Vec<Zero>, usize)> = (0..chunks)
        .into_par_iter()
        .map(|c| -> Result<(Vec<Zero>, usize)> {
            let i0 = c * CHUNK;
            let n = (CHUNK + 1).min(total - i0);
            let q0 = start + i0 as f64 * scan_step;
            let vals = d.grid(q0, scan_step, n)?;
            let mut zeros = Vec::new();
            let mut flat = 0;
            for i in 0..n - 1 {
                let (a, b) = (vals[i].0, vals[i + 1].0);
                let qa = q0 + i as f64 * scan_step;
                if a == 0.0 && vals[i].1.abs() < DEGENERATE_TOL && in_window(qa, ell) {
                    flat += 1;
                }
                if (a < 0.0) == (b < 0.0) {
                    continue;
                }
                let qb = qa + scan_step;
                let z = match bisect(|q| d.at(q).map(|v| v.0).unwrap_or(f64::NAN), qa, qb, ZERO_TOL) {
                    Ok(z) => z,
                    // The recurrence and direct evaluation disagree in sign
                    // at an endpoint: the zero sits on it.
                    Err(Error::NoBracket { flo, fhi, .. }) => {
                        if flo.abs() <= fhi.abs() {
                            qa
                        } else {
                            qb
                        }
                    }
                    Err(e) => return Err(e),
                };
                if in_window(z, ell) {
                    zeros.push(Zero { q: z, psi2: d.at(z)?.1, jump: if a < 0.0 { 1 } else { -1 } });
                }
            }
            Ok((zeros, flat))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut zeros = Vec::new();
    let mut flat = 0;
    for (z, f) in per_chunk {
        zeros.extend(z);
        flat += f;
    }
    let degenerate = flat + zeros.iter().filter(|z| z.psi2.abs() < DEGENERATE_TOL).count();
    let count = zeros.iter().filter(|z| z.psi2.abs() >= DEGENERATE_TOL).count();
    Ok(CriticalCount { ell, scan_step, count, degenerate, zeros })
}

/// Normalised bump `ζ(a) = exp(−1/(1−a²))/M` on `(−1, 1)` at scale `ε`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mollifier {
    pub eps: f64,
}

fn bump_mass() -> f64 {
    static MASS: OnceLock<f64> = OnceLock::new();
    *MASS.get_or_init(|| {
        adaptive_simpson(raw_bump, -1.0, 1.0, 1e-13).expect("bump mass quadrature converges")
    })
}

fn raw_bump(a: f64) -> f64 {
    let t = 1.0 - a * a;
    if t <= 0.0 {
        0.0
    } else {
        (-1.0 / t).exp()
    }
}

impl Mollifier {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::InvalidSpec(format!("mollifier scale must be positive, got {eps}")));
        }
        Ok(Self { eps })
    }

    /// `ζ(a)`.
    pub fn zeta(a: f64) -> f64 {
        raw_bump(a.abs()) / bump_mass()
    }

    /// `ζ_ε(x) = ζ(x/ε)/ε`.
    pub fn eval(&self, x: f64) -> f64 {
        Self::zeta(x / self.eps) / self.eps
    }
}

/// Mollified count `X_ε = (1/2ℓ) ∫_{−ℓ+ε}^{ℓ−ε} |ζ′_ε ∗ ψ̂|` with
/// `ψ̂ = 1(ψ′ > 0)`.
///
/// `ζ′_ε ∗ ψ̂ = Σ_j s_j ζ_ε(· − z_j)` over the jumps of `ψ̂`. A bump whose
/// support lies inside the range and meets no other bump contributes exactly
/// one; overlapping clusters are integrated by 8-point Gauss panels of width
/// at most `ε/20`.
pub fn mollified_count(count: &CriticalCount, mollifier: Mollifier) -> Result<f64> {
    let (ell, eps) = (count.ell, mollifier.eps);
    if !(eps < ell / 10.0) {
        return Err(Error::InvalidSpec(format!("mollifier scale {eps} must be below ℓ/10 = {}", ell / 10.0)));
    }
    let (a, b) = (-ell + eps, ell - eps);
    let zs: Vec<&Zero> = count.zeros.iter().filter(|z| z.q + eps > a && z.q - eps < b).collect();
    let (nodes, weights) = gauss_legendre(8);
    let mut total = 0.0;
    let mut i = 0;
    while i < zs.len() {
        let mut j = i + 1;
        while j < zs.len() && zs[j].q - zs[j - 1].q < 2.0 * eps {
            j += 1;
        }
        let cluster = &zs[i..j];
        let lo = (cluster[0].q - eps).max(a);
        let hi = (cluster[cluster.len() - 1].q + eps).min(b);
        if cluster.len() == 1 && lo == cluster[0].q - eps && hi == cluster[0].q + eps {
            total += 1.0;
        } else if hi > lo {
            let panels = ((hi - lo) / (eps / 20.0)).ceil() as usize;
            let w = (hi - lo) / panels as f64;
            for k in 0..panels {
                let c = lo + (k as f64 + 0.5) * w;
                for (x, wt) in nodes.iter().zip(&weights) {
                    let q = c + 0.5 * w * x;
                    let s: f64 = cluster.iter().map(|z| z.jump as f64 * mollifier.eval(q - z.q)).sum();
                    total += 0.5 * w * wt * s.abs();
                }
            }
        }
        i = j;
    }
    Ok(total / (2.0 * ell))
}

/// Draws an independent environment of the same kind and parameters.
pub fn sample_like(env: &Environment, rng: &mut impl Rng) -> Result<Environment> {
    Ok(match env {
        Environment::QuasiPeriodic(e) => {
            let phase: Vec<f64> = (0..e.k()).map(|_| rng.random::<f64>()).collect();
            Environment::QuasiPeriodic(e.with_phase(phase)?)
        }
        Environment::Poisson(p) => {
            let lambda = p
                .intensity()
                .ok_or_else(|| Error::InvalidSpec("cannot resample an explicit point configuration".into()))?;
            Environment::Poisson(PoissonEnv::from_cells(lambda, rng.random())?)
        }
    })
}

/// Monte Carlo estimate of `∫ ρ(0, y)|y| dy`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiceEstimate {
    pub rice: f64,
    pub mc_sd: f64,
    pub bandwidth: f64,
    pub sigma_psi1: f64,
    pub n_mc: usize,
    pub batch_means: Vec<f64>,
    /// Median local-PCA eigenvalue ratio of the standardised `(ψ′, ψ″)` cloud.
    pub pca_ratio: f64,
    pub singular_warning: bool,
}

fn sample_pairs(proc_: &ScalarProcess, env: &Environment, n: usize, seed_value: u64) -> Result<Vec<Vec<(f64, f64)>>> {
    if n < BATCHES {
        return Err(Error::InvalidSpec(format!("need at least {BATCHES} Monte Carlo draws, got {n}")));
    }
    let base = seed::substream(seed_value, "rice/mc");
    (0..BATCHES)
        .into_par_iter()
        .map(|b| {
            let size = n / BATCHES + usize::from(b < n % BATCHES);
            let mut rng = seed::rng(seed::substream_index(base, b as i64));
            let mut out = Vec::with_capacity(size);
            for _ in 0..size {
                let e = sample_like(env, &mut rng)?;
                let j = proc_.jet(&e, 0.0)?;
                out.push((j[1], j[2]));
            }
            Ok(out)
        })
        .collect()
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, var.sqrt())
}

/// Median ratio `λ_min/λ_max` of local covariances of the standardised
/// pairs over 64 anchors with 24 nearest neighbours in a subsample.
fn local_pca_ratio(pairs: &[(f64, f64)]) -> f64 {
    let sub: Vec<(f64, f64)> = pairs.iter().step_by((pairs.len() / 4000).max(1)).copied().collect();
    let (_, s1) = mean_sd(&sub.iter().map(|p| p.0).collect::<Vec<_>>());
    let (_, s2) = mean_sd(&sub.iter().map(|p| p.1).collect::<Vec<_>>());
    if !(s1 > 0.0 && s2 > 0.0) {
        return 0.0;
    }
    let pts: Vec<(f64, f64)> = sub.iter().map(|p| (p.0 / s1, p.1 / s2)).collect();
    let anchors = pts.len().min(64);
    let mut ratios: Vec<f64> = (0..anchors)
        .map(|a| {
            let c = pts[a * pts.len() / anchors];
            let mut d: Vec<(f64, (f64, f64))> =
                pts.iter().map(|p| ((p.0 - c.0).powi(2) + (p.1 - c.1).powi(2), *p)).collect();
            let k = 24.min(d.len());
            d.select_nth_unstable_by(k - 1, |x, y| x.0.total_cmp(&y.0));
            let nb = &d[..k];
            let mx = nb.iter().map(|x| x.1 .0).sum::<f64>() / k as f64;
            let my = nb.iter().map(|x| x.1 .1).sum::<f64>() / k as f64;
            let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
            for (_, (x, y)) in nb {
                sxx += (x - mx).powi(2);
                syy += (y - my).powi(2);
                sxy += (x - mx) * (y - my);
            }
            let tr = sxx + syy;
            let disc = ((sxx - syy).powi(2) + 4.0 * sxy * sxy).sqrt();
            let (hi, lo) = (0.5 * (tr + disc), 0.5 * (tr - disc));
            if hi > 0.0 {
                lo.max(0.0) / hi
            } else {
                0.0
            }
        })
        .collect();
    ratios.sort_by(f64::total_cmp);
    ratios[ratios.len() / 2]
}

/// Ratio estimator `E[|ψ″| 1(|ψ′| < h)] / (2h)` at `q = 0` over independent
/// environments. The default bandwidth is `σ(ψ′) n^{−1/5}`.
pub fn rice_estimate(
    proc_: &ScalarProcess,
    env: &Environment,
    n_mc: usize,
    bandwidth: Option<f64>,
    seed_value: u64,
) -> Result<RiceEstimate> {
    let batches = sample_pairs(proc_, env, n_mc, seed_value)?;
    let all: Vec<(f64, f64)> = batches.iter().flatten().copied().collect();
    let (_, sigma) = mean_sd(&all.iter().map(|p| p.0).collect::<Vec<_>>());
    let pca_ratio = local_pca_ratio(&all);
    let singular_warning = pca_ratio < SINGULAR_RATIO;
    if singular_warning {
        log::warn!("(ψ′, ψ″) has curve-like support (local PCA ratio {pca_ratio:e}); ρ is singular");
    }
    let h = bandwidth.unwrap_or(sigma * (n_mc as f64).powf(-0.2));
    let batch_means: Vec<f64> = if all.iter().all(|p| p.1 == 0.0) {
        vec![0.0; BATCHES]
    } else {
        if !(h > 0.0) {
            return Err(Error::InvalidSpec(format!("bandwidth must be positive, got {h}")));
        }
        batches
            .iter()
            .map(|b| b.iter().filter(|p| p.0.abs() < h).map(|p| p.1.abs()).sum::<f64>() / (2.0 * h * b.len() as f64))
            .collect()
    };
    let weights: Vec<f64> = batches.iter().map(|b| b.len() as f64 / n_mc as f64).collect();
    let rice = batch_means.iter().zip(&weights).map(|(m, w)| m * w).sum();
    let (_, sd) = mean_sd(&batch_means);
    Ok(RiceEstimate {
        rice,
        mc_sd: sd / (BATCHES as f64).sqrt(),
        bandwidth: h,
        sigma_psi1: sigma,
        n_mc,
        batch_means,
        pca_ratio,
        singular_warning,
    })
}

/// Empirical count, mollified bound and Rice estimate for one environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub schema: String,
    pub ell: f64,
    pub count: usize,
    pub degenerate: usize,
    pub empirical: f64,
    pub x_eps: f64,
    pub eps: f64,
    pub rice: f64,
    pub mc_sd: f64,
    pub bandwidth: f64,
    pub n_mc: usize,
    pub scan_step: f64,
    pub seed: u64,
    pub relative_error: f64,
    pub lower_bound_holds: bool,
    pub singular_warning: bool,
}

/// Parameters of [`density_report`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityOptions {
    pub ell: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_n_mc")]
    pub n_mc: usize,
    #[serde(default)]
    pub bandwidth: Option<f64>,
    #[serde(default)]
    pub scan_step: Option<f64>,
}

fn default_eps() -> f64 {
    1e-2
}
fn default_n_mc() -> usize {
    200_000
}

impl DensityOptions {
    pub fn new(ell: f64) -> Self {
        Self { ell, eps: default_eps(), n_mc: default_n_mc(), bandwidth: None, scan_step: None }
    }
}

pub fn density_report(
    proc_: &ScalarProcess,
    env: &Environment,
    opts: &DensityOptions,
    seed_value: u64,
) -> Result<DensityReport> {
    let step = match opts.scan_step {
        Some(s) => s,
        None => proc_.default_scan_step(env)?,
    };
    let count = count_critical(proc_, env, opts.ell, step)?;
    let x_eps = mollified_count(&count, Mollifier::new(opts.eps)?)?;
    let est = rice_estimate(proc_, env, opts.n_mc, opts.bandwidth, seed_value)?;
    let empirical = count.density();
    Ok(DensityReport {
        schema: RICE_SCHEMA.into(),
        ell: opts.ell,
        count: count.count,
        degenerate: count.degenerate,
        empirical,
        x_eps,
        eps: opts.eps,
        rice: est.rice,
        mc_sd: est.mc_sd,
        bandwidth: est.bandwidth,
        n_mc: opts.n_mc,
        scan_step: step,
        seed: seed_value,
        relative_error: if empirical > 0.0 { (empirical - est.rice).abs() / empirical } else { f64::NAN },
        lower_bound_holds: empirical >= x_eps - 1e-9,
        singular_warning: est.singular_warning,
    })
}

/// Hypothesis diagnostics: modulus of continuity of `ψ″`, a density proxy
/// near `ψ′ = 0` and the singularity detector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub ell: f64,
    /// `(δ, E φ_ℓ(δ))`.
    pub modulus: Vec<(f64, f64)>,
    /// Successive ratios `E φ_ℓ(δ/10) / E φ_ℓ(δ)`.
    pub modulus_ratios: Vec<f64>,
    /// Kernel estimates of the density of `ψ′` at `x = k h`, `k = −2..=2`.
    pub density_near_zero: Vec<(f64, f64)>,
    /// Largest second difference of the density proxy relative to its value at 0.
    pub density_roughness: f64,
    pub density_smooth: bool,
    pub pca_ratio: f64,
    pub singular: bool,
}

pub const MODULUS_DELTAS: [f64; 3] = [1e-2, 1e-3, 1e-4];

/// `φ_ℓ(δ) = sup{|ψ″(q) − ψ″(q̂)| : q, q̂ ∈ [−ℓ, ℓ], |q − q̂| ≤ δ}` on a grid
/// of spacing `δ/4`.
pub fn modulus_of_continuity(proc_: &ScalarProcess, env: &Environment, ell: f64, delta: f64) -> Result<f64> {
    let d = derivs(proc_, env)?;
    let h = delta / 4.0;
    let n = (2.0 * ell / h).ceil() as usize + 1;
    let mut best = 0.0f64;
    let mut i0 = 0;
    while i0 < n {
        let m = (CHUNK + 4).min(n - i0);
        let vals = d.grid(-ell + i0 as f64 * h, h, m)?;
        for i in 0..m {
            for j in (i + 1)..(i + 5).min(m) {
                best = best.max((vals[i].1 - vals[j].1).abs());
            }
        }
        i0 += CHUNK;
    }
    Ok(best)
}

pub fn hypothesis_diagnostics(
    proc_: &ScalarProcess,
    env: &Environment,
    samples: usize,
    ell: f64,
    seed_value: u64,
) -> Result<HypothesisReport> {
    let samples = samples.max(BATCHES);
    let base = seed::substream(seed_value, "rice/hypothesis");
    let envs: Vec<Environment> = (0..samples)
        .map(|i| sample_like(env, &mut seed::rng(seed::substream_index(base, i as i64))))
        .collect::<Result<_>>()?;
    let mut modulus = Vec::new();
    for &delta in &MODULUS_DELTAS {
        let vals: Vec<f64> =
            envs.par_iter().map(|e| modulus_of_continuity(proc_, e, ell, delta)).collect::<Result<_>>()?;
        modulus.push((delta, vals.iter().sum::<f64>() / vals.len() as f64));
    }
    let modulus_ratios = modulus.windows(2).map(|w| w[1].1 / w[0].1).collect();

    let n_pairs = (samples * 200).max(20_000);
    let pairs: Vec<(f64, f64)> = sample_pairs(proc_, env, n_pairs, seed_value)?.into_iter().flatten().collect();
    let (_, sigma) = mean_sd(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let h = sigma * (n_pairs as f64).powf(-0.2);
    let density_near_zero: Vec<(f64, f64)> = (-2..=2)
        .map(|k| {
            let x = k as f64 * h;
            let hits = pairs.iter().filter(|p| (p.0 - x).abs() < h).count();
            (x, hits as f64 / (2.0 * h * pairs.len() as f64))
        })
        .collect();
    let centre = density_near_zero[2].1;
    let density_roughness = if centre > 0.0 {
        density_near_zero.windows(3).map(|w| (w[0].1 - 2.0 * w[1].1 + w[2].1).abs()).fold(0.0, f64::max) / centre
    } else {
        f64::INFINITY
    };
    let pca_ratio = local_pca_ratio(&pairs);
    Ok(HypothesisReport {
        ell,
        modulus,
        modulus_ratios,
        density_near_zero,
        density_roughness,
        density_smooth: density_roughness < 0.5,
        pca_ratio,
        singular: pca_ratio < SINGULAR_RATIO,
    })
}

/// Torus environment for a process built by [`ScalarProcess::trigonometric`].
pub fn trigonometric_env(v: Vec<f64>, phase: Vec<f64>) -> Result<Environment> {
    Ok(Environment::QuasiPeriodic(QuasiPeriodicEnv::new(v, phase)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(theta: f64) -> (ScalarProcess, Environment) {
        (ScalarProcess::trigonometric(&[1.0]).unwrap(), trigonometric_env(vec![1.0], vec![theta]).unwrap())
    }

    fn two_mode(theta: [f64; 2]) -> (ScalarProcess, Environment) {
        (
            ScalarProcess::trigonometric(&[1.0, 1.0]).unwrap(),
            trigonometric_env(vec![1.0, 2f64.sqrt()], theta.to_vec()).unwrap(),
        )
    }

    #[test]
    fn waves_match_jets() {
        let (p, e) = two_mode([0.3, 0.7]);
        let d = derivs(&p, &e).unwrap();
        let grid = d.grid(-3.0, 0.37, 50).unwrap();
        for (i, (d1, d2)) in grid.iter().enumerate() {
            let j = p.jet(&e, -3.0 + 0.37 * i as f64).unwrap();
            assert!((d1 - j[1]).abs() < 1e-10 && (d2 - j[2]).abs() < 1e-9);
        }
    }

    #[test]
    fn single_cosine_count() {
        let (p, e) = single(0.0);
        let c = count_critical(&p, &e, 5.0, 1e-3).unwrap();
        assert_eq!(c.count, 20);
        assert_eq!(c.degenerate, 0);
        assert!((c.density() - 2.0).abs() < 1e-12);
        for (i, q) in c.locations().iter().enumerate() {
            assert!((q - (-5.0 + 0.5 * i as f64)).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_process_is_all_degenerate() {
        let obs: StationaryObservable = FourierObservable::constant(1, 2.0).into();
        let p = ScalarProcess::new(obs).unwrap();
        let e = trigonometric_env(vec![1.0], vec![0.0]).unwrap();
        let c = count_critical(&p, &e, 1.0, 0.1).unwrap();
        assert_eq!(c.count, 0);
        assert!(c.degenerate > 0);
        assert_eq!(mollified_count(&c, Mollifier::new(0.01).unwrap()).unwrap(), 0.0);
        let r = rice_estimate(&p, &e, 10_000, None, 1).unwrap();
        assert_eq!(r.rice, 0.0);
    }

    #[test]
    fn two_mode_count_is_refinement_stable() {
        let (p, e) = two_mode([0.13, 0.58]);
        let coarse = count_critical(&p, &e, 50.0, 0.01).unwrap();
        let fine = count_critical(&p, &e, 50.0, 0.001).unwrap();
        assert_eq!(coarse.count, fine.count);
        assert_eq!(coarse.count, count_critical(&p, &e, 50.0, 0.005).unwrap().count);
    }

    #[test]
    fn mollifier_is_even_unit_mass() {
        let m = Mollifier::new(0.1).unwrap();
        let mass = adaptive_simpson(|x| m.eval(x), -0.1, 0.1, 1e-12).unwrap();
        assert!((mass - 1.0).abs() < 1e-10);
        for x in [0.01, 0.05, 0.099] {
            assert_eq!(m.eval(x), m.eval(-x));
        }
    }

    #[test]
    fn mollified_count_single_cosine() {
        let (p, e) = single(0.0);
        let c = count_critical(&p, &e, 50.0, 1e-3).unwrap();
        let x = mollified_count(&c, Mollifier::new(1e-2).unwrap()).unwrap();
        assert!((1.9..=2.0).contains(&x), "{x}");
        assert!(c.density() >= x - 1e-9);
    }

    #[test]
    fn mollified_count_converges_as_eps_shrinks() {
        let (p, e) = two_mode([0.21, 0.4]);
        let c = count_critical(&p, &e, 100.0, 1e-3).unwrap();
        let xs: Vec<f64> =
            [0.4, 0.2, 0.1, 0.05].iter().map(|&eps| mollified_count(&c, Mollifier::new(eps).unwrap()).unwrap()).collect();
        for w in xs.windows(3) {
            assert!((w[2] - w[1]).abs() <= (w[1] - w[0]).abs() + 1e-12, "{xs:?}");
        }
        assert!(xs.iter().all(|&x| c.density() >= x - 1e-9));
    }

    #[test]
    fn overlapping_jumps_cancel() {
        let c = CriticalCount {
            ell: 10.0,
            scan_step: 1e-3,
            count: 2,
            degenerate: 0,
            zeros: vec![Zero { q: 0.0, psi2: 1.0, jump: 1 }, Zero { q: 0.005, psi2: -1.0, jump: -1 }],
        };
        let x = mollified_count(&c, Mollifier::new(0.01).unwrap()).unwrap();
        assert!(x < 2.0 / 20.0 && x > 0.0);
    }

    #[test]
    fn rice_matches_two_mode_density() {
        let (p, e) = two_mode([0.1, 0.2]);
        let r = rice_estimate(&p, &e, 100_000, None, 3).unwrap();
        assert!(!r.singular_warning, "{}", r.pca_ratio);
        let c = count_critical(&p, &e, 1000.0, 0.005).unwrap();
        let rel = (c.density() - r.rice).abs() / c.density();
        assert!(rel < 0.05, "{} {}", c.density(), r.rice);
    }

    #[test]
    fn single_mode_is_singular() {
        let (p, e) = single(0.0);
        let r = rice_estimate(&p, &e, 20_000, None, 4).unwrap();
        assert!(r.singular_warning, "{}", r.pca_ratio);
    }

    #[test]
    fn rice_estimate_is_reproducible() {
        let (p, e) = two_mode([0.0, 0.0]);
        let a = rice_estimate(&p, &e, 20_000, None, 9).unwrap();
        let b = rice_estimate(&p, &e, 20_000, None, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn diagnostics_for_fourier_families() {
        let (p, e) = two_mode([0.0, 0.0]);
        let d = hypothesis_diagnostics(&p, &e, 24, 1.0, 5).unwrap();
        assert!(d.modulus_ratios.iter().all(|&r| r < 0.5), "{:?}", d.modulus);
        assert!(!d.singular && d.density_smooth, "{d:?}");
        let (p, e) = single(0.0);
        assert!(hypothesis_diagnostics(&p, &e, 24, 1.0, 5).unwrap().singular);
    }
}
