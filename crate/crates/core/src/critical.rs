//! Critical points of the action `I(q, ξ)`: multistart gradient flow,
//! Newton refinement, conversion to fixed points and classification.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::genfun::CompositeGenFun;
use crate::numerics::{determinant, solve_linear, symmetric_eigenvalues};
use crate::twist::{classify_matrix, jacobian, FixedPointType, MatrixClass, StripPoint, TwistMapHandle};

/// Flow termination threshold on `|∇I|`.
pub const FLOW_GRAD_TOL: f64 = 1e-6;
/// Acceptance threshold on `|∇I|` after Newton.
pub const ACCEPT_GRAD_TOL: f64 = 1e-8;
/// Newton step tolerance.
pub const NEWTON_TOL: f64 = 1e-10;
/// Finite-difference step of the Hessian.
pub const HESSIAN_STEP: f64 = 1e-5;
/// Hessian eigenvalues below this are degenerate.
pub const DEGENERACY_BAND: f64 = 1e-6;
/// Smallest flow step before the flow is declared stalled.
pub const MIN_DT: f64 = 1e-12;
/// `max I − min I` below this flags a constant action.
pub const CONSTANCY_TOL: f64 = 1e-10;
/// Fixed points with larger residual signal an inconsistency.
pub const INCONSISTENCY_TOL: f64 = 1e-6;
const WINDOW_EPS: f64 = 1e-9;
const MAX_DT: f64 = 1.0;

/// Search window `[−ℓ, ℓ)` with seed spacing and dedupe radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchWindow {
    pub ell: f64,
    #[serde(default = "default_grid")]
    pub grid: f64,
    #[serde(default = "default_dedupe")]
    pub dedupe_radius: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
}

fn default_grid() -> f64 {
    0.01
}
fn default_dedupe() -> f64 {
    1e-4
}
fn default_dt() -> f64 {
    0.1
}
fn default_t_max() -> f64 {
    200.0
}

impl SearchWindow {
    pub fn new(ell: f64, grid: f64) -> Self {
        Self { ell, grid, dedupe_radius: default_dedupe(), dt: default_dt(), t_max: default_t_max() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.ell > 0.0 && self.grid > 0.0 && self.dedupe_radius > 0.0 && self.dt > 0.0 && self.t_max > 0.0) {
            return Err(Error::InvalidSpec(format!("invalid search window {self:?}")));
        }
        Ok(())
    }

    /// `−ℓ ≤ q < ℓ` with a `1e−9` shift absorbing rounding.
    pub fn contains(&self, q: f64) -> bool {
        q >= -self.ell - WINDOW_EPS && q < self.ell - WINDOW_EPS
    }
}

/// Sign pattern of the Hessian of `I`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HessianClass {
    Max,
    Min,
    Saddle,
    Degenerate,
}

impl std::fmt::Display for HessianClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            HessianClass::Max => "max",
            HessianClass::Min => "min",
            HessianClass::Saddle => "saddle",
            HessianClass::Degenerate => "degenerate",
        })
    }
}

/// A located critical point of `I` and its fixed point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub q: f64,
    pub xi: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub hessian: Vec<Vec<f64>>,
    pub hessian_eigenvalues: Vec<f64>,
    pub hessian_class: HessianClass,
    pub det_hessian: f64,
    pub fixed_point: StripPoint,
    pub fp_residual: f64,
    pub df_trace: f64,
}

/// Why a flow stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowStatus {
    Converged,
    ExitedWindow,
    TimeLimit,
    Stalled,
    /// Zero gradient at the start.
    Degenerate,
}

/// Discrete gradient-flow trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub status: FlowStatus,
    pub grad_norm: f64,
}

impl Trajectory {
    pub fn last(&self) -> &[f64] {
        self.points.last().expect("trajectory holds its start")
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn eval(comp: &CompositeGenFun, env: &Environment, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    let a = comp.action(env, x[0], &x[1..])?;
    Ok((a.value, a.grad))
}

/// RK4 on `x′ = ±∇I` with step halving to stay in `D` and keep `±I`
/// non-decreasing. Stops when `|∇I| < FLOW_GRAD_TOL`, when `q` leaves
/// `[−bound, bound]` or when `t > t_max`.
pub fn gradient_flow(
    comp: &CompositeGenFun,
    env: &Environment,
    start: &[f64],
    dt: f64,
    t_max: f64,
    bound: f64,
    ascend: bool,
) -> Result<Trajectory> {
    let s = if ascend { 1.0 } else { -1.0 };
    let (mut value, mut grad) = eval(comp, env, start)?;
    let mut traj = Trajectory { points: vec![start.to_vec()], values: vec![value], status: FlowStatus::Converged, grad_norm: norm(&grad) };
    if traj.grad_norm == 0.0 {
        traj.status = FlowStatus::Degenerate;
        return Ok(traj);
    }
    let mut x = start.to_vec();
    let mut t = 0.0;
    let mut h = dt;
    let n = x.len();
    let axpy = |x: &[f64], k: &[f64], c: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + c * s * b).collect() };
    loop {
        if norm(&grad) < FLOW_GRAD_TOL {
            traj.status = FlowStatus::Converged;
            break;
        }
        if x[0].abs() > bound {
            traj.status = FlowStatus::ExitedWindow;
            break;
        }
        if t > t_max {
            traj.status = FlowStatus::TimeLimit;
            break;
        }
        let step = (|| -> Result<(Vec<f64>, f64, Vec<f64>)> {
            let k1 = &grad;
            let (_, k2) = eval(comp, env, &axpy(&x, k1, 0.5 * h))?;
            let (_, k3) = eval(comp, env, &axpy(&x, &k2, 0.5 * h))?;
            let (_, k4) = eval(comp, env, &axpy(&x, &k3, h))?;
            let next: Vec<f64> =
                (0..n).map(|i| x[i] + s * h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect();
            let (v, g) = eval(comp, env, &next)?;
            Ok((next, v, g))
        })();
        match step {
            Ok((next, v, g)) if s * (v - value) >= -1e-12 => {
                x = next;
                value = v;
                grad = g;
                t += h;
                traj.points.push(x.clone());
                traj.values.push(value);
                h = (h * 1.5).min(MAX_DT);
            }
            Ok(_) | Err(Error::OutsideActionDomain(_)) | Err(Error::OutsideDomain { .. }) => {
                h *= 0.5;
                if h < MIN_DT {
                    traj.status = FlowStatus::Stalled;
                    break;
                }
            }
            Err(e) => return Err(e),
        }
    }
    traj.grad_norm = norm(&grad);
    Ok(traj)
}

/// Central-difference Hessian of `I`, symmetrised.
pub fn hessian(comp: &CompositeGenFun, env: &Environment, x: &[f64], h: f64) -> Result<Vec<Vec<f64>>> {
    let n = x.len();
    let mut hess = vec![vec![0.0; n]; n];
    for j in 0..n {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h;
        xm[j] -= h;
        let gp = comp.action_unchecked(env, xp[0], &xp[1..])?.grad;
        let gm = comp.action_unchecked(env, xm[0], &xm[1..])?.grad;
        for i in 0..n {
            hess[i][j] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (hess[i][j] + hess[j][i]);
            hess[i][j] = m;
            hess[j][i] = m;
        }
    }
    Ok(hess)
}

/// Hessian class from eigenvalues with the degeneracy band.
pub fn hessian_class(eigenvalues: &[f64]) -> HessianClass {
    if eigenvalues.iter().any(|l| l.abs() <= DEGENERACY_BAND) {
        HessianClass::Degenerate
    } else if eigenvalues.iter().all(|&l| l < 0.0) {
        HessianClass::Max
    } else if eigenvalues.iter().all(|&l| l > 0.0) {
        HessianClass::Min
    } else {
        HessianClass::Saddle
    }
}

/// Damped Newton on `∇I = 0`. Returns the point and its gradient norm.
pub fn newton_refine(comp: &CompositeGenFun, env: &Environment, start: &[f64]) -> Result<Option<(Vec<f64>, f64)>> {
    let mut x = start.to_vec();
    let (_, mut g) = match eval(comp, env, &x) {
        Ok(v) => v,
        Err(Error::OutsideActionDomain(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    for _ in 0..60 {
        let gn = norm(&g);
        if gn <= 1e-13 {
            break;
        }
        let hess = match hessian(comp, env, &x, HESSIAN_STEP) {
            Ok(h) => h,
            Err(Error::OutsideDomain { .. }) | Err(Error::OutsideActionDomain(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        let Some(d) = solve_linear(&hess, &g) else { return Ok(None) };
        let mut lambda = 1.0;
        let mut moved = false;
        while lambda >= 1.0 / 64.0 {
            let cand: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a - lambda * b).collect();
            match eval(comp, env, &cand) {
                Ok((_, gc)) if norm(&gc) < gn || lambda < 1.0 / 32.0 => {
                    x = cand;
                    g = gc;
                    moved = true;
                    break;
                }
                Ok(_) | Err(Error::OutsideActionDomain(_)) | Err(Error::OutsideDomain { .. }) => lambda *= 0.5,
                Err(e) => return Err(e),
            }
        }
        if !moved {
            return Ok(None);
        }
        if lambda * norm(&d) < NEWTON_TOL {
            break;
        }
    }
    let gn = norm(&g);
    Ok((gn <= ACCEPT_GRAD_TOL).then_some((x, gn)))
}

/// `x = (q, −𝒢_q(q, q; ξ))` and the residual `|F(x) − x|`.
pub fn fixed_point_from_critical(
    comp: &CompositeGenFun,
    env: &Environment,
    q: f64,
    xi: &[f64],
) -> Result<(StripPoint, f64)> {
    let map = comp.map()?;
    fixed_point_with_map(comp, &map, env, q, xi)
}

fn fixed_point_with_map(
    comp: &CompositeGenFun,
    map: &TwistMapHandle,
    env: &Environment,
    q: f64,
    xi: &[f64],
) -> Result<(StripPoint, f64)> {
    let x = comp.fixed_point_candidate(env, q, xi)?;
    let y = map.apply(env, x)?;
    let residual = y.dist(&x);
    if residual > INCONSISTENCY_TOL {
        return Err(Error::Inconsistency { residual });
    }
    Ok((x, residual))
}

fn build_point(
    comp: &CompositeGenFun,
    map: &TwistMapHandle,
    env: &Environment,
    x: &[f64],
    grad_norm: f64,
) -> Result<CriticalPoint> {
    let value = comp.action(env, x[0], &x[1..])?.value;
    let hess = hessian(comp, env, x, HESSIAN_STEP)?;
    let ev = symmetric_eigenvalues(&hess);
    let (fp, residual) = fixed_point_with_map(comp, map, env, x[0], &x[1..])?;
    let df = jacobian(map, env, fp, crate::twist::JACOBIAN_STEP)?;
    Ok(CriticalPoint {
        q: x[0],
        xi: x[1..].to_vec(),
        value,
        grad_norm,
        det_hessian: determinant(&hess),
        hessian_class: hessian_class(&ev),
        hessian_eigenvalues: ev,
        hessian: hess,
        fixed_point: fp,
        fp_residual: residual,
        df_trace: df.trace(),
    })
}

/// Result of [`find_critical_points`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalSearch {
    pub points: Vec<CriticalPoint>,
    /// `max I − min I` over the seeds fell below [`CONSTANCY_TOL`].
    pub constant: bool,
    /// Critical points are not isolated: constant action or a majority of
    /// degenerate limits.
    pub continuum: bool,
    pub stalled_flows: usize,
    pub seeds: usize,
}

impl CriticalSearch {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn dedupe(mut cands: Vec<(Vec<f64>, f64)>, radius: f64) -> Vec<(Vec<f64>, f64)> {
    cands.sort_by(|a, b| {
        a.0.iter().zip(&b.0).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut out: Vec<(Vec<f64>, f64)> = Vec::new();
    for c in cands {
        let dup = out.iter().rev().take_while(|k| c.0[0] - k.0[0] <= radius).any(|k| {
            k.0.iter().zip(&c.0).all(|(a, b)| (a - b).abs() <= radius)
        });
        if !dup {
            out.push(c);
        }
    }
    out
}

/// Multistart search for critical points with `q ∈ [−ℓ, ℓ)`.
pub fn find_critical_points(
    comp: &CompositeGenFun,
    env: &Environment,
    window: &SearchWindow,
) -> Result<CriticalSearch> {
    window.validate()?;
    let n = comp.n();
    let bound = window.ell + 1.0;
    let count = (2.0 * bound / window.grid).round() as usize + 1;
    let seeds: Vec<Vec<f64>> =
        (0..count).map(|i| vec![-bound + i as f64 * window.grid; n + 1]).collect();

    let values: Vec<f64> = seeds
        .par_iter()
        .map(|s| eval(comp, env, s).map(|(v, _)| v))
        .collect::<Result<Vec<_>>>()?;
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi - lo < CONSTANCY_TOL {
        log::info!("action is constant to {:e} on the window", hi - lo);
        return Ok(CriticalSearch { points: vec![], constant: true, continuum: true, stalled_flows: 0, seeds: count });
    }

    let limits: Vec<(Option<(Vec<f64>, f64)>, bool)> = seeds
        .par_iter()
        .flat_map_iter(|s| [(s.clone(), true), (s.clone(), false)])
        .map(|(s, up)| -> Result<(Option<(Vec<f64>, f64)>, bool)> {
            let tr = gradient_flow(comp, env, &s, window.dt, window.t_max, bound, up)?;
            match tr.status {
                FlowStatus::Converged | FlowStatus::TimeLimit | FlowStatus::Degenerate => {
                    Ok((newton_refine(comp, env, tr.last())?, false))
                }
                FlowStatus::Stalled => Ok((None, true)),
                FlowStatus::ExitedWindow => Ok((None, false)),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let stalled = limits.iter().filter(|(_, s)| *s).count();
    let mut found = dedupe(limits.into_iter().filter_map(|(c, _)| c).collect(), window.dedupe_radius);

    // Saddles sit between flow limits: Newton from midpoints.
    let mids: Vec<Vec<f64>> = found
        .windows(2)
        .map(|w| w[0].0.iter().zip(&w[1].0).map(|(a, b)| 0.5 * (a + b)).collect())
        .collect();
    let extra: Vec<Option<(Vec<f64>, f64)>> =
        mids.par_iter().map(|m| newton_refine(comp, env, m)).collect::<Result<Vec<_>>>()?;
    found.extend(extra.into_iter().flatten());
    let found = dedupe(found, window.dedupe_radius);

    let map = comp.map()?;
    let mut points: Vec<CriticalPoint> = found
        .par_iter()
        .filter(|(x, _)| window.contains(x[0]))
        .map(|(x, gn)| build_point(comp, &map, env, x, *gn))
        .collect::<Result<Vec<_>>>()?;
    points.sort_by(|a, b| a.q.total_cmp(&b.q).then_with(|| {
        a.xi.iter().zip(&b.xi).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    }));
    let degenerate = points.iter().filter(|p| p.hessian_class == HessianClass::Degenerate).count();
    let continuum = degenerate >= 3 && 2 * degenerate > points.len();
    Ok(CriticalSearch { points, constant: false, continuum, stalled_flows: stalled, seeds: count })
}

/// Classification of a critical point by the second-derivative rule and by
/// the Jacobian of the map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalClassification {
    pub hessian_class: HessianClass,
    /// Type predicted by the generating-function rule; `None` when the
    /// Hessian is degenerate or no rule applies.
    pub predicted: Option<FixedPointType>,
    /// `ψ″` for `N = 0`, `det D²I` for `N = 1`.
    pub rule_value: Option<f64>,
    pub df: MatrixClass,
    pub agreement: Option<bool>,
}

/// Applies the `N = 0` rule (`ψ″ > 0` ⇒ positive, `ψ″ < 0` ⇒ negative) or
/// the `N = 1` rule (`det D²I ≥ 0` ⇔ positive) and compares with the
/// eigenvalues of `DF` at the fixed point.
pub fn classify_critical(
    comp: &CompositeGenFun,
    env: &Environment,
    cp: &CriticalPoint,
) -> Result<CriticalClassification> {
    let map = comp.map()?;
    let df = classify_matrix(&jacobian(&map, env, cp.fixed_point, crate::twist::JACOBIAN_STEP)?);
    let (predicted, rule_value) = match comp.n() {
        0 => {
            let psi2 = cp.hessian[0][0];
            if psi2.abs() <= DEGENERACY_BAND {
                (None, Some(psi2))
            } else if psi2 > 0.0 {
                (Some(FixedPointType::Positive), Some(psi2))
            } else {
                (Some(FixedPointType::Negative), Some(psi2))
            }
        }
        1 => {
            let det = cp.det_hessian;
            if cp.hessian[1][1].abs() <= DEGENERACY_BAND || cp.hessian_class == HessianClass::Degenerate {
                (None, Some(det))
            } else if det >= 0.0 {
                (Some(FixedPointType::Positive), Some(det))
            } else {
                (Some(FixedPointType::Negative), Some(det))
            }
        }
        _ => (None, None),
    };
    let agreement = predicted.map(|p| p == df.kind);
    Ok(CriticalClassification { hessian_class: cp.hessian_class, predicted, rule_value, df, agreement })
}

pub const FP_SCHEMA: &str = "fp/1";

/// One row of the `fp/1` table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointRecord {
    pub q: f64,
    pub p: f64,
    #[serde(rename = "N")]
    pub n: usize,
    /// Rule prediction when one applies, otherwise the Jacobian type.
    pub class: String,
    pub det_hessian: f64,
    pub df_trace: f64,
    pub residual: f64,
}

impl FixedPointRecord {
    pub fn new(cp: &CriticalPoint, n: usize, class: &CriticalClassification) -> Self {
        let class = match (class.predicted, class.hessian_class) {
            (Some(t), _) => t.to_string(),
            (None, HessianClass::Degenerate) => "degenerate".to_string(),
            (None, _) => class.df.kind.to_string(),
        };
        Self {
            q: cp.fixed_point.q,
            p: cp.fixed_point.p,
            n,
            class,
            det_hessian: cp.det_hessian,
            df_trace: cp.df_trace,
            residual: cp.fp_residual,
        }
    }
}

pub const CENSUS_SCHEMA: &str = "census/1";

/// One census row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CensusRow {
    pub ell: f64,
    pub count: usize,
    pub density: f64,
    pub min_q: Option<f64>,
    pub max_q: Option<f64>,
}

/// Fixed-point counts over growing windows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Census {
    pub schema: String,
    pub rows: Vec<CensusRow>,
    pub constant: bool,
    /// `max q` and `−min q` increase strictly with `ℓ`.
    pub grows_both_sides: bool,
    /// Successive count ratios.
    pub ratios: Vec<f64>,
}

/// Counts deduplicated fixed points in `[−ℓ, ℓ)` for each `ℓ`.
pub fn growth_census(
    comp: &CompositeGenFun,
    env: &Environment,
    ells: &[f64],
    grid: f64,
) -> Result<Census> {
    if ells.is_empty() || ells.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidSpec("window list must be nonempty and increasing".into()));
    }
    let largest = *ells.last().unwrap();
    let search = find_critical_points(comp, env, &SearchWindow::new(largest, grid))?;
    census_from_points(&search, ells)
}

/// Builds census rows from a search over the largest window.
pub fn census_from_points(search: &CriticalSearch, ells: &[f64]) -> Result<Census> {
    let mut rows = Vec::with_capacity(ells.len());
    for &ell in ells {
        let w = SearchWindow::new(ell, 1.0);
        let qs: Vec<f64> = search.points.iter().map(|p| p.q).filter(|&q| w.contains(q)).collect();
        rows.push(CensusRow {
            ell,
            count: qs.len(),
            density: qs.len() as f64 / (2.0 * ell),
            min_q: qs.iter().copied().reduce(f64::min),
            max_q: qs.iter().copied().reduce(f64::max),
        });
    }
    let grows_both_sides = rows.windows(2).all(|w| match (w[0].max_q, w[1].max_q, w[0].min_q, w[1].min_q) {
        (Some(a), Some(b), Some(c), Some(d)) => b > a && d < c,
        _ => false,
    });
    let ratios = rows
        .windows(2)
        .map(|w| if w[0].count == 0 { f64::NAN } else { w[1].count as f64 / w[0].count as f64 })
        .collect();
    Ok(Census { schema: CENSUS_SCHEMA.into(), rows, constant: search.constant, grows_both_sides, ratios })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::QuasiPeriodicEnv;
    use crate::genfun::{compose_genfuns, Factor, MonotoneGenFun, SeedSpec};

    fn torus() -> Environment {
        Environment::QuasiPeriodic(QuasiPeriodicEnv::new(vec![1.0, 2f64.sqrt()], vec![0.0, 0.0]).unwrap())
    }

    fn n0(eps: f64) -> CompositeGenFun {
        CompositeGenFun::single(MonotoneGenFun::new(SeedSpec::cosine_modulated(1.0, eps, 2)).unwrap())
    }

    #[test]
    fn flow_reaches_nearest_maximum_monotonically() {
        let comp = n0(0.1);
        let tr = gradient_flow(&comp, &torus(), &[0.3], 0.1, 100.0, 5.0, true).unwrap();
        assert_eq!(tr.status, FlowStatus::Converged);
        assert!((tr.last()[0] - 0.5).abs() < 1e-5, "{:?}", tr.last());
        assert!(tr.values.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }

    #[test]
    fn flow_at_critical_point_is_trivial() {
        let comp = n0(0.1);
        let tr = gradient_flow(&comp, &torus(), &[0.5], 0.1, 100.0, 5.0, true).unwrap();
        assert_eq!(tr.points.len(), 1);
    }

    #[test]
    fn flow_on_constant_action_is_degenerate() {
        let comp = n0(0.0);
        let tr = gradient_flow(&comp, &torus(), &[0.3], 0.1, 100.0, 5.0, true).unwrap();
        assert_eq!(tr.status, FlowStatus::Degenerate);
    }

    #[test]
    fn search_on_small_window() {
        let comp = n0(0.1);
        let found = find_critical_points(&comp, &torus(), &SearchWindow::new(2.0, 0.05)).unwrap();
        let qs: Vec<f64> = found.points.iter().map(|p| p.q).collect();
        assert_eq!(qs.len(), 8, "{qs:?}");
        for (i, q) in qs.iter().enumerate() {
            assert!((q - (-2.0 + 0.5 * i as f64)).abs() < 1e-8);
        }
        for w in found.points.windows(2) {
            assert_ne!(w[0].hessian_class, w[1].hessian_class);
        }
        for p in &found.points {
            assert!(p.grad_norm <= ACCEPT_GRAD_TOL && p.fp_residual < 1e-8 && p.fixed_point.p.abs() < 1e-8);
        }
    }

    #[test]
    fn constant_action_is_flagged() {
        let found = find_critical_points(&n0(0.0), &torus(), &SearchWindow::new(2.0, 0.1)).unwrap();
        assert!(found.is_empty() && found.constant);
        let lin = || MonotoneGenFun::new(SeedSpec::linear()).unwrap();
        let pair = compose_genfuns(vec![Factor::negative(lin()), Factor::positive(lin())]).unwrap();
        let found = find_critical_points(&pair, &torus(), &SearchWindow::new(1.0, 0.1)).unwrap();
        assert!(found.constant && found.continuum);
    }

    #[test]
    fn fixed_points_of_the_n0_family() {
        let comp = n0(0.1);
        for q in [0.5, 0.0] {
            let (x, r) = fixed_point_from_critical(&comp, &torus(), q, &[]).unwrap();
            assert!(x.p.abs() < 1e-12 && r < 1e-10);
        }
    }

    #[test]
    fn n0_rule_and_eigenvalues() {
        let comp = n0(0.1);
        let found = find_critical_points(&comp, &torus(), &SearchWindow::new(0.6, 0.05)).unwrap();
        let at0 = found.points.iter().find(|p| p.q.abs() < 1e-6).unwrap();
        let c = classify_critical(&comp, &torus(), at0).unwrap();
        // ψ″(0) = 0.1 (2π)² / (2 · 1.1²)
        let psi2 = 0.1 * (2.0 * std::f64::consts::PI).powi(2) / (2.0 * 1.21);
        assert!((c.rule_value.unwrap() - psi2).abs() < 1e-4);
        assert_eq!(c.predicted, Some(FixedPointType::Positive));
        assert_eq!(c.df.kind, FixedPointType::Positive);
        assert!((c.df.trace - (2.0 + psi2 / 1.1)).abs() < 1e-4, "{}", c.df.trace);
        let at_half = found.points.iter().find(|p| (p.q - 0.5).abs() < 1e-6).unwrap();
        let c = classify_critical(&comp, &torus(), at_half).unwrap();
        assert_eq!(c.predicted, Some(FixedPointType::Negative));
    }

    #[test]
    fn census_counts_scale_with_window() {
        let census = growth_census(&n0(0.1), &torus(), &[1.0, 2.0], 0.05).unwrap();
        let counts: Vec<usize> = census.rows.iter().map(|r| r.count).collect();
        assert_eq!(counts, vec![4, 8]);
        assert!(census.grows_both_sides);
        assert_eq!(census.ratios, vec![2.0]);
    }

    #[test]
    fn dedupe_merges_close_points() {
        let c = vec![(vec![0.0], 0.0), (vec![5e-5], 0.0), (vec![1.0], 0.0)];
        assert_eq!(dedupe(c, 1e-4).len(), 2);
    }
}

#[cfg(test)]
mod chain_tests {
    use super::*;
    use crate::environment::QuasiPeriodicEnv;
    use crate::genfun::{compose_genfuns, Factor, MonotoneGenFun, SeedSpec};

    #[test]
    fn n1_chain_critical_points() {
        let env = Environment::QuasiPeriodic(QuasiPeriodicEnv::new(vec![1.0, 2f64.sqrt()], vec![0.0, 0.0]).unwrap());
        let chain = compose_genfuns(vec![
            Factor::negative(MonotoneGenFun::new(SeedSpec::linear()).unwrap()),
            Factor::positive(MonotoneGenFun::new(SeedSpec::cosine_modulated(0.8, 0.05, 2)).unwrap()),
        ])
        .unwrap();
        let found = find_critical_points(&chain, &env, &SearchWindow::new(1.0, 0.05)).unwrap();
        let qs: Vec<f64> = found.points.iter().map(|p| p.q).collect();
        assert_eq!(qs.len(), 4, "{qs:?}");
        for (i, p) in found.points.iter().enumerate() {
            assert!((p.q - (-1.0 + 0.5 * i as f64)).abs() < 1e-7);
            assert!((p.xi[0] - p.q).abs() < 1e-7);
            assert!(p.fp_residual < 1e-8);
            assert!(classify_critical(&chain, &env, p).unwrap().rule_value.is_some());
        }
        assert_eq!(found.points[0].hessian_class, HessianClass::Saddle);
        assert_eq!(found.points[1].hessian_class, HessianClass::Max);
    }
}
