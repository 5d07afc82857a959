//! Acceptance checks for twistlab. Each criterion builds its own fixture,
//! measures the quantities it constrains and reports one line.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use rand::Rng;
use twistlab::critical::{classify_critical, find_critical_points, growth_census, HessianClass, SearchWindow};
use twistlab::environment::{
    observe, omega_derivative, sample_env, BumpShape, BumpSum, EnvSpec, Environment, FourierObservable,
    PoissonEnv, Profile, QuasiPeriodicEnv, StationaryObservable, DEFAULT_N_MAX,
};
use twistlab::genfun::{
    compose_genfuns, twist_from_h, CompositeGenFun, Factor, GeneratingFunction, MonotoneGenFun, SeedSpec,
};
use twistlab::isotopy::{
    choose_steps, decompose_isotopy, moser_correct, DecomposeOptions, Decomposition, DensityPath, IsotopyPath,
    MoserOptions, StationaryHamiltonian,
};
use twistlab::rice::{density_report, DensityOptions, ScalarProcess};
use twistlab::seed;
use twistlab::twist::{
    compose, jacobian, verify_twist, FixedPointType, MonotoneSign, StripPoint, TwistMapHandle, VerifyOptions,
    JACOBIAN_STEP,
};

/// Outcome of one criterion.
#[derive(Clone, Debug)]
pub struct Report {
    pub id: u8,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

/// Criteria that fail by construction; the harness still prints FAIL for them.
pub const EXPECTED_FAILURES: &[u8] = &[5, 10];

pub const CRITERIA: &[(u8, &str, fn() -> Result<(bool, String)>)] = &[
    (1, "shear recovery", shear_recovery),
    (2, "generating identity", generating_identity),
    (3, "area preservation", area_preservation),
    (4, "boundary identities", boundary_identities),
    (5, "fixed-point census", fixed_point_census),
    (6, "census growth", census_growth),
    (7, "rice density", rice_density),
    (8, "moser corrector", moser_corrector),
    (9, "decomposition", decomposition),
    (10, "N=1 pipeline", n1_pipeline),
    (11, "stationarity and lift laws", lift_laws),
    (12, "reproducibility", reproducibility),
];

/// Runs criterion `id`; an error counts as a failure.
pub fn run(id: u8) -> Report {
    let &(id, name, f) = CRITERIA.iter().find(|c| c.0 == id).expect("known criterion");
    let start = Instant::now();
    let (pass, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e:#}")),
    };
    Report { id, name, pass, detail, seconds: start.elapsed().as_secs_f64() }
}

pub fn torus(phase: [f64; 2]) -> Environment {
    Environment::QuasiPeriodic(QuasiPeriodicEnv::new(vec![1.0, 2f64.sqrt()], phase.to_vec()).expect("certified"))
}

fn family(c0: f64, eps: f64) -> MonotoneGenFun {
    MonotoneGenFun::new(SeedSpec::cosine_modulated(c0, eps, 2)).expect("valid seed")
}

fn linear() -> MonotoneGenFun {
    MonotoneGenFun::new(SeedSpec::linear()).expect("valid seed")
}

fn grid(nq: usize, np: usize, q_range: [f64; 2]) -> Vec<StripPoint> {
    let mut out = Vec::with_capacity(nq * np);
    for i in 0..nq {
        for j in 0..np {
            let q = q_range[0] + (q_range[1] - q_range[0]) * i as f64 / (nq - 1) as f64;
            out.push(StripPoint { q, p: -1.0 + 2.0 * j as f64 / (np - 1) as f64 });
        }
    }
    out
}

fn fmt_bool(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "no"
    }
}

fn shear_recovery() -> Result<(bool, String)> {
    let start = Instant::now();
    let env = torus([0.2, 0.7]);
    let f = twist_from_h(&linear(), MonotoneSign::Positive);
    let mut worst = 0.0f64;
    for x in grid(40, 25, [-10.0, 10.0]) {
        let y = f.apply(&env, x)?;
        worst = worst.max((y.q - x.q - x.p).abs()).max((y.p - x.p).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((worst < 1e-9 && secs < 1.0, format!("sup dist {worst:.2e} (< 1e-9), {secs:.2}s (< 1s)")))
}

fn generating_identity() -> Result<(bool, String)> {
    let start = Instant::now();
    let env = torus([0.0, 0.0]);
    let g = family(1.0, 0.1);
    let f = g.twist();
    let mut rng = seed::rng(seed::substream(2, "acceptance/genid"));
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let q = rng.random_range(-20.0..20.0);
        let [lo, hi] = g.domain(&env, q)?;
        let qq = q + lo + (hi - lo) * rng.random_range(0.001..0.999);
        let gv = g.eval_g(&env, q, qq)?;
        let y = f.apply(&env, StripPoint::new(q, -gv.g_x)?)?;
        worst = worst.max((y.q - qq).abs()).max((y.p - gv.g_y).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((worst < 1e-7 && secs < 5.0, format!("residual {worst:.2e} (< 1e-7), {secs:.2}s (< 5s)")))
}

fn poisson() -> Environment {
    Environment::Poisson(PoissonEnv::from_cells(0.5, 7).expect("valid intensity"))
}

fn bump_hamiltonian() -> StationaryHamiltonian {
    let bump = BumpSum::new(BumpShape::Smooth, 0.8, 0.3, Profile::One).expect("valid bump");
    StationaryHamiltonian::kinetic().with_boundary_flat(bump.into())
}

const BUMP_OPTS: DecomposeOptions = DecomposeOptions { q_range: [-3.0, 3.0], nq: 31, np: 9 };

/// Decomposition of the bump flow with `δ ≤ 1/2`, shared by criteria 3 and 9.
fn bump_decomposition() -> Result<&'static Decomposition> {
    static CELL: OnceLock<std::result::Result<Decomposition, String>> = OnceLock::new();
    let r = CELL.get_or_init(|| {
        let env = poisson();
        let run = || -> twistlab::Result<Decomposition> {
            let path = IsotopyPath::hamiltonian(bump_hamiltonian(), &env, 0.01)?;
            let n = choose_steps(&path, &env, 0.5, 64, &BUMP_OPTS)?;
            decompose_isotopy(&path, &env, n, &BUMP_OPTS)
        };
        run().map_err(|e| e.to_string())
    });
    r.as_ref().map_err(|e| anyhow::anyhow!("bump decomposition: {e}"))
}

fn kinetic_decomposition(env: &Environment) -> Result<Decomposition> {
    let path = IsotopyPath::hamiltonian(StationaryHamiltonian::kinetic(), env, 0.05)?;
    Ok(decompose_isotopy(&path, env, 2, &DecomposeOptions::default())?)
}

fn area_preservation() -> Result<(bool, String)> {
    let opts = VerifyOptions { q_range: [-5.0, 5.0], ..VerifyOptions::default() };
    let tori = torus([0.3, 0.1]);
    let mut maps: Vec<(String, TwistMapHandle, Environment)> = vec![
        ("shear seed".into(), twist_from_h(&linear(), MonotoneSign::Positive), tori.clone()),
        ("a·c(θ), ε=0.1".into(), family(1.0, 0.1).twist(), tori.clone()),
        ("a·c(θ), ε=0.1, inverse".into(), twist_from_h(&family(1.0, 0.1), MonotoneSign::Negative), tori.clone()),
        ("0.8·a·c(θ), ε=0.05".into(), family(0.8, 0.05).twist(), tori.clone()),
    ];
    let kin = kinetic_decomposition(&tori)?;
    for (i, (m, _)) in kin.factors.iter().enumerate() {
        maps.push((format!("kinetic factor {i}"), m.clone(), tori.clone()));
    }
    let bump = bump_decomposition()?;
    for (i, (m, _)) in bump.factors.iter().enumerate() {
        maps.push((format!("bump factor {i}"), m.clone(), poisson()));
    }
    let mut worst = (0.0f64, String::new());
    for (name, m, env) in &maps {
        let r = verify_twist(m, env, 1000, &opts)?;
        if r.det_residual >= worst.0 {
            worst = (r.det_residual, name.clone());
        }
    }
    Ok((worst.0 < 1e-4, format!("{} maps, max |det DF − 1| {:.2e} ({}) (< 1e-4)", maps.len(), worst.0, worst.1)))
}

fn boundary_identities() -> Result<(bool, String)> {
    let g = family(1.0, 0.1);
    let mut rng = seed::rng(seed::substream(4, "acceptance/boundary"));
    let (mut lv, mut lw, mut l) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let env = torus([rng.random(), rng.random()]);
        let [lo, hi] = g.domain(&env, 0.0)?;
        let a = g.eval_l(&env, 0.0, lo)?;
        let b = g.eval_l(&env, 0.0, hi)?;
        lv = lv.max((a.l_v + 1.0).abs()).max((b.l_v - 1.0).abs());
        lw = lw.max(a.l_w.abs()).max(b.l_w.abs());
        l = l.max((a.l + lo).abs()).max((b.l - hi).abs());
    }
    let pass = lv < 1e-8 && l < 1e-8 && lw < 1e-6;
    Ok((pass, format!("L_v {lv:.2e}, L ∓ Q± {l:.2e} (< 1e-8); L_ω {lw:.2e} (< 1e-6)")))
}

fn fixed_point_census() -> Result<(bool, String)> {
    let start = Instant::now();
    let env = torus([0.0, 0.0]);
    let chain = CompositeGenFun::single(family(1.0, 0.1));
    let search = find_critical_points(&chain, &env, &SearchWindow::new(20.0, 0.01))?;
    let pts = &search.points;
    let max_p = pts.iter().map(|c| c.fixed_point.p.abs()).fold(0.0, f64::max);
    let max_res = pts.iter().map(|c| c.fp_residual).fold(0.0, f64::max);
    let classes = pts.iter().map(|c| classify_critical(&chain, &env, c)).collect::<twistlab::Result<Vec<_>>>()?;
    let alternates = classes.windows(2).all(|w| {
        matches!(
            (w[0].predicted, w[1].predicted),
            (Some(FixedPointType::Positive), Some(FixedPointType::Negative))
                | (Some(FixedPointType::Negative), Some(FixedPointType::Positive))
        )
    });
    let agree = classes.iter().filter(|c| c.agreement == Some(true)).count();
    let elliptic = classes.iter().filter(|c| c.df.im != 0.0).count();
    let secs = start.elapsed().as_secs_f64();
    let pass = pts.len() == 80 && max_p < 1e-8 && max_res < 1e-8 && alternates && agree == pts.len() && secs < 30.0;
    Ok((
        pass,
        format!(
            "{} points (80), |p| {max_p:.1e}, residual {max_res:.1e}, alternation {}, rule/eigenvalue agreement {agree}/{} ({elliptic} with complex eigenvalues), {secs:.1}s",
            pts.len(),
            fmt_bool(alternates),
            pts.len()
        ),
    ))
}

fn census_growth() -> Result<(bool, String)> {
    let env = torus([0.0, 0.0]);
    let census = growth_census(&CompositeGenFun::single(family(1.0, 0.1)), &env, &[5.0, 10.0, 20.0], 0.01)?;
    let counts: Vec<usize> = census.rows.iter().map(|r| r.count).collect();
    let max_q: Vec<f64> = census.rows.iter().map(|r| r.max_q.unwrap_or(f64::NAN)).collect();
    let grows = max_q.windows(2).all(|w| w[1] > w[0]);
    let pass = counts == [20, 40, 80] && census.ratios.iter().all(|&r| r == 2.0) && grows;
    Ok((pass, format!("counts {counts:?}, ratios {:?}, max q {max_q:.2?}", census.ratios)))
}

fn rice_density() -> Result<(bool, String)> {
    let opts = DensityOptions { n_mc: 200_000, ..DensityOptions::new(2000.0) };
    let mut errors = Vec::new();
    let mut bound = true;
    let mut slowest = 0.0f64;
    for s in 1..=20u64 {
        let start = Instant::now();
        let (process, v) = ScalarProcess::random_trigonometric(40, s)?;
        let env = sample_env(&EnvSpec::QuasiPeriodic { v, phase: None, n_max: DEFAULT_N_MAX }, s)?;
        let r = density_report(&process, &env, &opts, s)?;
        errors.push(r.relative_error);
        bound &= r.lower_bound_holds;
        slowest = slowest.max(start.elapsed().as_secs_f64());
    }
    errors.sort_by(f64::total_cmp);
    let median = 0.5 * (errors[9] + errors[10]);
    let pass = median < 0.05 && bound && slowest < 60.0;
    Ok((
        pass,
        format!(
            "median relative error {:.2}% (< 5%), max {:.2}%, mollified bound {}, slowest seed {slowest:.1}s",
            100.0 * median,
            100.0 * errors[19],
            fmt_bool(bound)
        ),
    ))
}

fn moser_corrector() -> Result<(bool, String)> {
    let start = Instant::now();
    let env = torus([0.0, 0.0]);
    let v = env.as_torus()?.v().to_vec();
    let eta = FourierObservable::cosine(vec![1, 0], 0.2, 0.0, Profile::one_minus_p2());
    let path = DensityPath::new(eta, &v)?;
    let corrected = moser_correct(&path, &env, &MoserOptions::default())?;
    let mut det = 0.0f64;
    for t in [0.25, 0.5, 1.0] {
        let lam = corrected.at(t)?;
        for x in grid(11, 9, [-2.0, 2.0]) {
            det = det.max((jacobian(&lam, &env, x, JACOBIAN_STEP)?.det() - 1.0).abs());
        }
    }
    let res = &corrected.residuals;
    let secs = start.elapsed().as_secs_f64();
    let pass = res.laplacian < 1e-5 && res.neumann < 1e-6 && det < 1e-4 && secs < 30.0;
    Ok((
        pass,
        format!(
            "|Δu − η| {:.1e} (< 1e-5), |u_p(±1)| {:.1e} (< 1e-6), |det − 1| {det:.1e} (< 1e-4), {secs:.1}s",
            res.laplacian, res.neumann
        ),
    ))
}

fn decomposition() -> Result<(bool, String)> {
    let start = Instant::now();
    let env = torus([0.1, 0.3]);
    let kin = kinetic_decomposition(&env)?;
    let pts = grid(40, 25, [-5.0, 5.0]);
    let mut shape = 0.0f64;
    for &x in &pts {
        let a = kin.factors[0].0.apply(&env, x)?;
        let b = kin.factors[1].0.apply(&env, x)?;
        shape = shape.max((a.q - x.q + x.p).abs()).max((a.p - x.p).abs());
        shape = shape.max((b.q - x.q - 1.5 * x.p).abs()).max((b.p - x.p).abs());
    }
    let kin_err = kin.recomposition_error(&env, &pts)?;

    let d = bump_decomposition()?;
    let penv = poisson();
    let bump_err = d.recomposition_error(&penv, &grid(40, 25, [-3.0, 3.0]))?;
    let vopts = VerifyOptions { q_range: [-3.0, 3.0], ..VerifyOptions::default() };
    let mut monotone = true;
    for eta in &d.etas {
        let r = verify_twist(eta, &penv, 1000, &vopts)?;
        monotone &= r.pass && r.clauses.monotone == Some(true) && r.monotone_sign == MonotoneSign::Positive;
    }
    let alternating = d.factors.iter().enumerate().all(|(i, f)| {
        f.1 == if i % 2 == 0 { MonotoneSign::Negative } else { MonotoneSign::Positive }
    });
    let secs = start.elapsed().as_secs_f64();
    let pass = shape < 1e-12
        && kin_err < 1e-12
        && d.delta <= 0.5
        && bump_err < 1e-6
        && monotone
        && alternating
        && secs < 60.0;
    Ok((
        pass,
        format!(
            "kinetic n=2: factor error {shape:.1e}, recomposition {kin_err:.1e} (< 1e-12); bump n={} δ={:.3}: recomposition {bump_err:.1e} (< 1e-6), η monotone {}, signs alternate {}, {secs:.1}s",
            d.n,
            d.delta,
            fmt_bool(monotone),
            fmt_bool(alternating)
        ),
    ))
}

fn n1_pipeline() -> Result<(bool, String)> {
    let env = torus([0.0, 0.0]);
    let chain = compose_genfuns(vec![Factor::negative(linear()), Factor::positive(family(0.8, 0.05))])?;
    let search = find_critical_points(&chain, &env, &SearchWindow::new(5.0, 0.05))?;
    let max_res = search.points.iter().map(|c| c.fp_residual).fold(0.0, f64::max);
    let mut decided = 0;
    let mut agree = 0;
    for cp in &search.points {
        if cp.hessian_class == HessianClass::Degenerate {
            continue;
        }
        if let Some(a) = classify_critical(&chain, &env, cp)?.agreement {
            decided += 1;
            agree += usize::from(a);
        }
    }
    let pair = compose_genfuns(vec![Factor::negative(linear()), Factor::positive(linear())])?;
    let degenerate = find_critical_points(&pair, &env, &SearchWindow::new(2.0, 0.1))?;
    let flagged = degenerate.continuum || degenerate.constant;
    ensure!(!search.points.is_empty(), "no critical points found");
    let pass = max_res < 1e-8 && decided > 0 && agree == decided && flagged;
    Ok((
        pass,
        format!(
            "{} critical points, residual {max_res:.1e} (< 1e-8), sign rule agreement {agree}/{decided}, degenerate chain flagged {}",
            search.points.len(),
            fmt_bool(flagged)
        ),
    ))
}

fn lift_laws() -> Result<(bool, String)> {
    let mut rng = seed::rng(seed::substream(11, "acceptance/lifts"));
    // Stationary-lift identity for a map, its inverse and a composition.
    let g = family(1.0, 0.1).twist();
    let comp = compose(&[g.clone(), TwistMapHandle::phi0(), g.inverse()])?;
    let mut lift = 0.0f64;
    for _ in 0..200 {
        let env = torus([rng.random(), rng.random()]);
        let (q, p, a) = (rng.random_range(-10.0..10.0), rng.random_range(-1.0..1.0), rng.random_range(-10.0..10.0));
        for m in [&g, &comp] {
            let y = m.apply(&env, StripPoint { q: q + a, p })?;
            let z = m.apply(&env.shift(a), StripPoint { q, p })?;
            lift = lift.max((y.q - a - z.q).abs()).max((y.p - z.p).abs());
        }
    }
    // Shift group law.
    let mut group = 0.0f64;
    for _ in 0..200 {
        let env = torus([rng.random(), rng.random()]);
        let (a, b) = (rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
        let (x, y) = (env.shift(a).shift(b), env.shift(a + b));
        for (u, v) in x.as_torus()?.phase().iter().zip(y.as_torus()?.phase()) {
            let d = (u - v).abs();
            group = group.max(d.min(1.0 - d));
        }
    }
    // E ∇f̄ = 0 over sampled environments.
    let n = 100_000;
    let mut fourier = FourierObservable::cosine(vec![1, 0], 0.7, 0.3, Profile::One);
    fourier.push_cosine(vec![1, -2], 0.2, 1.1, Profile::One);
    let fourier: StationaryObservable = fourier.into();
    let bump: StationaryObservable = BumpSum::new(BumpShape::Smooth, 0.8, 1.0, Profile::One)?.into();
    let mut zscores = Vec::new();
    for (obs, is_torus) in [(&fourier, true), (&bump, false)] {
        let mut xs = Vec::with_capacity(n);
        for _ in 0..n {
            let env = if is_torus {
                torus([rng.random(), rng.random()])
            } else {
                Environment::Poisson(PoissonEnv::from_cells(0.5, rng.random())?)
            };
            xs.push(omega_derivative(obs, &env, 0.0, None)?);
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        zscores.push(mean.abs() / (sd / (n as f64).sqrt()));
    }
    // Sanity: the observable is not trivially constant.
    let env = torus([0.1, 0.2]);
    let spread = (observe(&fourier, &env, 0.0, None)? - observe(&fourier, &env, 0.37, None)?).abs();
    let pass = lift < 1e-8 && group < 1e-10 && zscores.iter().all(|&z| z < 4.0) && spread > 0.0;
    Ok((
        pass,
        format!(
            "lift identity {lift:.1e} (< 1e-8), group law {group:.1e}, |E∇f̄| in standard errors {:.2?} (< 4)",
            zscores
        ),
    ))
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn reproducibility() -> Result<(bool, String)> {
    let scratch = std::env::temp_dir().join(format!("twistlab-acceptance-{}", std::process::id()));
    let runs = [
        ("fixed-points", "fixed_points.json", twistlab_cli::Command::FixedPoints),
        ("density", "density.json", twistlab_cli::Command::Density),
        ("decompose", "decompose.json", twistlab_cli::Command::Decompose),
        ("twist-verify", "twist_verify.json", twistlab_cli::Command::TwistVerify),
    ];
    let mut pass = true;
    let mut notes = Vec::new();
    for (name, file, command) in runs {
        let mut digests = Vec::new();
        for threads in [1, 2, 8] {
            let inv = twistlab_cli::Invocation {
                command: Some(command),
                config: configs_dir().join(file),
                out: Some(scratch.join(format!("{name}-{threads}"))),
                seed: None,
                threads: Some(threads),
            };
            let r = twistlab_cli::execute(&inv);
            let m = r.manifest.with_context(|| format!("{name} with {threads} workers: {:?}", r.error))?;
            digests.push(m.outputs.iter().map(|o| (o.file.clone(), o.sha256.clone())).collect::<Vec<_>>());
        }
        let same = digests.windows(2).all(|w| w[0] == w[1]);
        pass &= same;
        notes.push(format!("{name} {}", if same { "identical" } else { "DIFFER" }));
    }
    let _ = std::fs::remove_dir_all(&scratch);
    Ok((pass, format!("digests across 1/2/8 workers: {}", notes.join(", "))))
}
