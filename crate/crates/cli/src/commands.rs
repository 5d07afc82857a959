//! One pipeline per subcommand. Pipelines return their artifacts in memory;
//! the runner writes them.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use twistlab::critical::{
    census_from_points, classify_critical, find_critical_points, FixedPointRecord, SearchWindow,
};
use twistlab::environment::{sample_env, EnvDocument, EnvSpec, Environment, DEFAULT_N_MAX};
use twistlab::genfun::{compose_genfuns, twist_from_h, CompositeGenFun, Factor, GenfunSpec};
use twistlab::isotopy::{
    choose_steps, decompose_isotopy, moser_correct, DensityPath, IsotopyPath,
};
use twistlab::rice::{density_report, hypothesis_diagnostics, HypothesisReport, ScalarProcess};
use twistlab::seed;
use twistlab::twist::{compose, jacobian, verify_twist, MonotoneSign, StripPoint, TwistMapHandle, JACOBIAN_STEP};

use crate::config::*;
use crate::error::CliError;
use crate::output::{emit_plot_data, to_json, Cell, CsvTable, PlotKind, PlotRecord};

/// A pass/fail criterion evaluated by a pipeline; any failure gives exit 2.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: Option<f64>,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: &str, value: f64, tolerance: f64) -> Self {
        Self { name: name.into(), value, tolerance: Some(tolerance), pass: value <= tolerance }
    }

    pub fn flag(name: &str, pass: bool) -> Self {
        Self { name: name.into(), value: if pass { 1.0 } else { 0.0 }, tolerance: None, pass }
    }
}

#[derive(Default)]
pub struct Outcome {
    pub files: Vec<(String, Vec<u8>)>,
    pub checks: Vec<Check>,
    pub seeds: BTreeMap<String, u64>,
}

impl Outcome {
    fn file(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    fn seed(&mut self, label: &str, value: u64) {
        self.seeds.insert(label.into(), value);
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let mut out = Outcome::default();
    out.seed("master", cfg.seed);
    match &cfg.params {
        Params::EnvSample(p) => env_sample(cfg, p, &mut out)?,
        Params::TwistBuild(p) => twist_build(cfg, p, &mut out)?,
        Params::TwistVerify(p) => twist_verify(cfg, p, &mut out)?,
        Params::FixedPoints(p) => fixed_points(cfg, p, &mut out)?,
        Params::Density(p) => density(cfg, p, &mut out)?,
        Params::Decompose(p) => decompose(cfg, p, &mut out)?,
        Params::Moser(p) => moser(cfg, p, &mut out)?,
        Params::Flow(p) => flow(cfg, p, &mut out)?,
    }
    Ok(out)
}

fn environment(cfg: &ExperimentConfig, out: &mut Outcome) -> Result<Environment, CliError> {
    let env = sample_env(cfg.env_spec()?, cfg.seed)?;
    out.file("env.json", to_json(&EnvDocument::from_env(&env, None)));
    Ok(env)
}

/// Builds the strip map described by `spec`.
pub fn build_map(spec: &MapSpec, env: &Environment) -> Result<TwistMapHandle, CliError> {
    Ok(match spec {
        MapSpec::Genfun { genfun } => twist_from_h(&genfun.build()?, genfun.sign),
        MapSpec::Shear { s } => TwistMapHandle::shear(*s),
        MapSpec::Identity => TwistMapHandle::identity(),
        MapSpec::BoundaryBulge { c } => {
            let c = *c;
            TwistMapHandle::from_fn("boundary bulge", MonotoneSign::Positive, move |_, x| {
                StripPoint::new(x.q + x.p, x.p + c * (1.0 - x.p * x.p))
            })
        }
        MapSpec::Flow { hamiltonian, t, dt } => IsotopyPath::hamiltonian(hamiltonian.clone(), env, *dt)?.at(*t)?,
        MapSpec::Inverse { map } => build_map(map, env)?.inverse(),
        MapSpec::Compose { maps } => {
            let built = maps.iter().map(|m| build_map(m, env)).collect::<Result<Vec<_>, _>>()?;
            compose(&built)?
        }
    })
}

fn strip_points(grid: &GridSpec) -> Vec<StripPoint> {
    grid.points().into_iter().map(|[q, p]| StripPoint { q, p }).collect()
}

fn env_sample(cfg: &ExperimentConfig, p: &EnvSampleParams, out: &mut Outcome) -> Result<(), CliError> {
    let env = sample_env(cfg.env_spec()?, cfg.seed)?;
    let doc = EnvDocument::from_env(&env, p.window);
    let back = doc.to_env()?;
    let same = match (&env, p.window) {
        (Environment::Poisson(_), Some(w)) => {
            EnvDocument::from_env(&back, Some(w)).points == doc.points
        }
        _ => back == env,
    };
    out.checks.push(Check::flag("env-round-trip", same));
    out.file("env.json", to_json(&doc));
    Ok(())
}

fn twist_build(cfg: &ExperimentConfig, p: &TwistBuildParams, out: &mut Outcome) -> Result<(), CliError> {
    let env = environment(cfg, out)?;
    let map = build_map(&p.map, &env)?;
    if let MapSpec::Genfun { genfun } = &p.map {
        out.file("genfun.json", to_json(genfun));
    }
    let images: Vec<(StripPoint, StripPoint)> = strip_points(&p.grid)
        .into_par_iter()
        .map(|x| Ok((x, map.apply(&env, x)?)))
        .collect::<Result<_, twistlab::Error>>()?;
    let mut t = CsvTable::new("twist/1", &["q", "p", "Q", "P"]);
    for (x, y) in &images {
        t.push(vec![x.q.into(), x.p.into(), y.q.into(), y.p.into()]);
    }
    out.file("twist.csv", t.to_bytes());
    let pts: Vec<PlotRecord> = images.iter().map(|(_, y)| PlotRecord::Point { q: y.q, p: y.p }).collect();
    out.file("phase_portrait.csv", emit_plot_data(&pts, PlotKind::PhasePortrait)?);
    Ok(())
}

fn twist_verify(cfg: &ExperimentConfig, p: &TwistVerifyParams, out: &mut Outcome) -> Result<(), CliError> {
    let env = environment(cfg, out)?;
    let map = build_map(&p.map, &env)?;
    let s = seed::substream(cfg.seed, "cli/twist-verify");
    out.seed("twist-verify", s);
    let report = verify_twist(&map, &env, p.n_samples, &p.tolerances.options(s))?;
    for clause in &report.failing {
        out.checks.push(Check::flag(&format!("clause:{clause}"), false));
    }
    out.checks.push(Check::flag("twist-axioms", report.pass));
    out.file("report.json", to_json(&report));
    Ok(())
}

/// Alternating chain from generating-function specs.
pub fn build_chain(factors: &[GenfunSpec]) -> Result<CompositeGenFun, CliError> {
    let built = factors
        .iter()
        .map(|s| {
            let gf = s.build()?;
            Ok(if s.sign == MonotoneSign::Negative { Factor::negative(gf) } else { Factor::positive(gf) })
        })
        .collect::<Result<Vec<_>, twistlab::Error>>()?;
    if built.len() == 1 {
        Ok(CompositeGenFun::from_factor(built.into_iter().next().expect("one factor"))?)
    } else {
        Ok(compose_genfuns(built)?)
    }
}

fn fixed_points(cfg: &ExperimentConfig, p: &FixedPointParams, out: &mut Outcome) -> Result<(), CliError> {
    let env = environment(cfg, out)?;
    let chain = build_chain(&p.factors)?;
    let mut window = p.window.clone();
    if let Some(ells) = &p.census {
        let top = ells.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        window.ell = window.ell.max(top);
    }
    let search = find_critical_points(&chain, &env, &window)?;
    let inside = SearchWindow { ell: p.window.ell, ..window.clone() };
    let points: Vec<_> = search.points.iter().filter(|c| inside.contains(c.q)).collect();

    let mut t = CsvTable::new(
        twistlab::critical::FP_SCHEMA,
        &["q", "p", "N", "class", "det_hessian", "df_trace", "residual", "agreement"],
    );
    let mut max_res = 0.0f64;
    let mut portrait = Vec::with_capacity(points.len());
    for cp in &points {
        let class = classify_critical(&chain, &env, cp)?;
        let r = FixedPointRecord::new(cp, chain.n(), &class);
        max_res = max_res.max(r.residual);
        let agreement = match class.agreement {
            Some(true) => "agree",
            Some(false) => "disagree",
            None => "n/a",
        };
        t.push(vec![
            r.q.into(),
            r.p.into(),
            r.n.into(),
            r.class.into(),
            r.det_hessian.into(),
            r.df_trace.into(),
            r.residual.into(),
            agreement.into(),
        ]);
        portrait.push(PlotRecord::Point { q: r.q, p: r.p });
    }
    out.file("fp.csv", t.to_bytes());
    if !portrait.is_empty() {
        out.file("phase_portrait.csv", emit_plot_data(&portrait, PlotKind::PhasePortrait)?);
    }
    if chain.n() == 0 && p.psi_samples >= 2 {
        let ell = p.window.ell;
        let graph = (0..p.psi_samples)
            .map(|i| {
                let q = -ell + 2.0 * ell * i as f64 / (p.psi_samples - 1) as f64;
                Ok(PlotRecord::Graph { q, psi: chain.action(&env, q, &[])?.value })
            })
            .collect::<Result<Vec<_>, twistlab::Error>>()?;
        out.file("psi_graph.csv", emit_plot_data(&graph, PlotKind::PsiGraph)?);
    }
    if let Some(ells) = &p.census {
        let census = census_from_points(&search, ells)?;
        let rows: Vec<PlotRecord> = census
            .rows
            .iter()
            .map(|r| PlotRecord::Census { ell: r.ell, count: r.count, density: r.density })
            .collect();
        out.file("census.json", to_json(&census));
        out.file("density_vs_ell.csv", emit_plot_data(&rows, PlotKind::DensityVsEll)?);
    }
    out.checks.push(Check::flag("isolated", !search.constant && !search.continuum));
    out.checks.push(Check::at_most("fixed-point-residual", max_res, 1e-8));
    Ok(())
}

/// `hypothesis/1` wrapper around the diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisDocument {
    pub schema: String,
    #[serde(flatten)]
    pub report: HypothesisReport,
}

fn density(cfg: &ExperimentConfig, p: &DensityParams, out: &mut Outcome) -> Result<(), CliError> {
    let (process, frequencies) = match &p.process {
        ProcessSpec::Observable { observable } => (ScalarProcess::new(observable.clone())?, None),
        ProcessSpec::Trigonometric { amplitudes } => (ScalarProcess::trigonometric(amplitudes)?, None),
        ProcessSpec::RandomTrigonometric { modes } => {
            let (proc_, v) = ScalarProcess::random_trigonometric(*modes, cfg.seed)?;
            (proc_, Some(v))
        }
    };
    out.file("process.json", to_json(&serde_json::json!({ "schema": "process/1", "process": process })));
    let env = match (&cfg.env, frequencies) {
        (Some(_), _) => environment(cfg, out)?,
        (None, Some(v)) => {
            let spec = EnvSpec::QuasiPeriodic { v, phase: None, n_max: DEFAULT_N_MAX };
            let env = sample_env(&spec, cfg.seed)?;
            out.file("env.json", to_json(&EnvDocument::from_env(&env, None)));
            env
        }
        (None, None) => {
            return Err(CliError::Config { path: "env".into(), message: "this process needs an environment".into() })
        }
    };
    let report = density_report(&process, &env, &p.options, cfg.seed)?;
    out.checks.push(Check::flag("mollified-lower-bound", report.lower_bound_holds));
    out.file("rice.json", to_json(&report));
    if p.hypothesis {
        let h = hypothesis_diagnostics(&process, &env, p.hypothesis_samples, p.hypothesis_ell, cfg.seed)?;
        out.file("hypothesis.json", to_json(&HypothesisDocument { schema: "hypothesis/1".into(), report: h }));
    }
    if p.psi_samples >= 2 {
        let w = p.psi_window;
        let graph = (0..p.psi_samples)
            .map(|i| {
                let q = -w + 2.0 * w * i as f64 / (p.psi_samples - 1) as f64;
                Ok(PlotRecord::Graph { q, psi: process.jet(&env, q)?[0] })
            })
            .collect::<Result<Vec<_>, twistlab::Error>>()?;
        out.file("psi_graph.csv", emit_plot_data(&graph, PlotKind::PsiGraph)?);
    }
    Ok(())
}

fn decompose(cfg: &ExperimentConfig, p: &DecomposeParams, out: &mut Outcome) -> Result<(), CliError> {
    let env = environment(cfg, out)?;
    let path = IsotopyPath::hamiltonian(p.hamiltonian.clone(), &env, p.dt)?;
    let n = match p.n {
        Some(n) => n,
        None => choose_steps(&path, &env, p.target_delta, p.max_n, &p.sampling)?,
    };
    let d = decompose_isotopy(&path, &env, n, &p.sampling)?;
    let err = d.recomposition_error(&env, &strip_points(&p.check))?;
    out.checks.push(Check::at_most("recomposition", err, p.recompose_tol));
    out.checks.push(Check::at_most("delta", d.delta, 1.0 - f64::EPSILON));
    out.checks.push(Check::flag("eta-monotone", d.eta_min_dq_dp.iter().all(|&m| m > 0.0)));
    out.file("decomp.json", to_json(&d.record(Some(err))));
    Ok(())
}

fn moser(cfg: &ExperimentConfig, p: &MoserParams, out: &mut Outcome) -> Result<(), CliError> {
    let env = environment(cfg, out)?;
    let v = env.as_torus()?.v().to_vec();
    let path = DensityPath::new(p.eta.clone(), &v)?;
    let corrected = moser_correct(&path, &env, &p.options)?;
    let pts = strip_points(&p.det_grid);
    let mut det = 0.0f64;
    for &t in &p.times {
        let lam = corrected.at(t)?;
        let worst = pts
            .par_iter()
            .map(|&x| Ok((jacobian(&lam, &env, x, JACOBIAN_STEP)?.det() - 1.0).abs()))
            .collect::<Result<Vec<f64>, twistlab::Error>>()?
            .into_iter()
            .fold(0.0, f64::max);
        det = det.max(worst);
    }
    out.checks.push(Check::at_most("laplacian", corrected.residuals.laplacian, p.laplacian_tol));
    out.checks.push(Check::at_most("neumann", corrected.residuals.neumann, p.neumann_tol));
    out.checks.push(Check::at_most("area", det, p.det_tol));
    out.file("moser.json", to_json(&corrected.record()));
    Ok(())
}

fn flow(cfg: &ExperimentConfig, p: &FlowParams, out: &mut Outcome) -> Result<(), CliError> {
    let env = environment(cfg, out)?;
    let map = IsotopyPath::hamiltonian(p.hamiltonian.clone(), &env, p.dt)?.segment(0.0, p.t)?;
    let starts = strip_points(&p.starts);
    let orbits: Vec<(Vec<StripPoint>, f64)> = starts
        .par_iter()
        .map(|&x0| {
            let mut orbit = vec![x0];
            let mut det = 0.0f64;
            let mut x = x0;
            for _ in 0..p.iterations {
                det = det.max((jacobian(&map, &env, x, JACOBIAN_STEP)?.det() - 1.0).abs());
                x = map.apply(&env, x)?;
                orbit.push(x);
            }
            Ok((orbit, det))
        })
        .collect::<Result<_, twistlab::Error>>()?;
    let mut t = CsvTable::new("flow/1", &["start", "k", "q", "p"]);
    let mut portrait = Vec::new();
    let mut det = 0.0f64;
    for (i, (orbit, d)) in orbits.iter().enumerate() {
        det = det.max(*d);
        for (k, x) in orbit.iter().enumerate() {
            t.push(vec![Cell::from(i), k.into(), x.q.into(), x.p.into()]);
            portrait.push(PlotRecord::Point { q: x.q, p: x.p });
        }
    }
    out.checks.push(Check::at_most("symplectic", det, p.symplectic_tol));
    out.file("orbit.csv", t.to_bytes());
    out.file("phase_portrait.csv", emit_plot_data(&portrait, PlotKind::PhasePortrait)?);
    Ok(())
}
