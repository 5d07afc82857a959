use super::*;
use crate::environment::{BumpShape, BumpSum, FourierObservable, PoissonEnv, QuasiPeriodicEnv};

fn torus() -> Environment {
    Environment::QuasiPeriodic(QuasiPeriodicEnv::new(vec![1.0, 2f64.sqrt()], vec![0.1, 0.3]).unwrap())
}

fn poisson() -> Environment {
    Environment::Poisson(PoissonEnv::from_cells(0.5, 7).unwrap())
}

fn bump_hamiltonian(amplitude: f64) -> StationaryHamiltonian {
    let bump = BumpSum::new(BumpShape::Smooth, 0.8, amplitude, Profile::One).unwrap();
    StationaryHamiltonian::kinetic().with_boundary_flat(bump.into())
}

fn grid(nq: usize, np: usize, span: f64) -> Vec<StripPoint> {
    let mut out = Vec::new();
    for i in 0..nq {
        for j in 0..np {
            let q = -span + 2.0 * span * i as f64 / (nq - 1) as f64;
            let p = -1.0 + 2.0 * j as f64 / (np - 1) as f64;
            out.push(StripPoint { q, p });
        }
    }
    out
}

fn single_mode(eps: f64) -> FourierObservable {
    FourierObservable::cosine(vec![1, 0], eps, 0.0, Profile::one_minus_p2())
}

#[test]
fn kinetic_flow_is_the_shear() {
    let env = torus();
    let h = StationaryHamiltonian::kinetic();
    let y = hamiltonian_flow(&h, &env, StripPoint { q: 0.0, p: 0.5 }, 0.0, 1.0, 0.05).unwrap();
    assert!((y.q - 0.5).abs() < 1e-13 && (y.p - 0.5).abs() < 1e-15);
    let y = hamiltonian_flow(&h, &env, StripPoint { q: 0.0, p: 1.0 }, 0.0, 1.0, 0.05).unwrap();
    assert!((y.q - 1.0).abs() < 1e-13 && y.p == 1.0);
}

#[test]
fn flow_is_reversible_and_symplectic() {
    let env = poisson();
    let h = bump_hamiltonian(0.3);
    h.certify(&env, [-5.0, 5.0], 50).unwrap();
    for x in grid(7, 5, 3.0) {
        let (y, d) = hamiltonian_flow_with_tangent(&h, &env, x, 0.0, 1.0, 0.01).unwrap();
        let back = hamiltonian_flow(&h, &env, y, 1.0, 0.0, 0.01).unwrap();
        assert!(back.dist(&x) < 1e-10, "{x:?} -> {y:?} -> {back:?}");
        assert!((d.det() - 1.0).abs() < 1e-12);
        assert!(y.p.abs() <= 1.0);
    }
}

#[test]
fn segments_compose() {
    let env = poisson();
    let path = IsotopyPath::hamiltonian(bump_hamiltonian(0.3), &env, 0.01).unwrap();
    let a = path.segment(0.0, 0.5).unwrap();
    let b = path.segment(0.5, 1.0).unwrap();
    let full = path.endpoint().unwrap();
    for x in grid(5, 5, 2.0) {
        let y = b.apply(&env, a.apply(&env, x).unwrap()).unwrap();
        assert!(y.dist(&full.apply(&env, x).unwrap()) < 1e-12);
    }
}

#[test]
fn midpoint_rejects_large_steps() {
    let env = poisson();
    let h = bump_hamiltonian(50.0);
    let err = hamiltonian_flow(&h, &env, StripPoint { q: 0.0, p: 0.0 }, 0.0, 1.0, 0.5).unwrap_err();
    assert!(matches!(err, Error::MidpointNonConvergence { .. }), "{err}");
}

#[test]
fn moser_single_mode_residuals() {
    let env = torus();
    let sol = solve_moser(&single_mode(1.0), env.as_torus().unwrap().v()).unwrap();
    assert_eq!(sol.atoms.len(), 2);
    for a in &sol.atoms {
        assert!((a.z.abs() - std::f64::consts::TAU).abs() < 1e-12);
        let ratio = a.gamma1 / a.gamma2;
        assert!((ratio.re - (2.0 * a.z).exp()).abs() < 1e-9 * (2.0 * a.z).exp());
    }
    let opts = MoserOptions { nq: 32, np: 16, ..MoserOptions::default() };
    let r = moser_residuals(&sol, &env, &opts).unwrap();
    assert!(r.laplacian < 1e-5, "{r:?}");
    assert!(r.neumann < 1e-6, "{r:?}");
    assert!(r.harmonic < 1e-6, "{r:?}");
}

#[test]
fn moser_mode_zero_density() {
    let env = torus();
    let mut eta = single_mode(0.5);
    eta.push_cosine(vec![0, 0], 1.0, 0.0, Profile::poly(&[0.0, 0.0, 0.3, 0.0, 0.0]));
    // shift by the mean of 0.3p² so that ∫k = 0
    eta.push_cosine(vec![0, 0], -0.1, 0.0, Profile::One);
    let sol = solve_moser(&eta, env.as_torus().unwrap().v()).unwrap();
    let opts = MoserOptions { nq: 16, np: 16, ..MoserOptions::default() };
    let r = moser_residuals(&sol, &env, &opts).unwrap();
    assert!(r.laplacian < 1e-5 && r.neumann < 1e-6, "{r:?}");
}

#[test]
fn moser_rejects_unbalanced_mean() {
    let eta = FourierObservable::constant(2, 0.1);
    assert!(solve_moser(&eta, &[1.0, 2f64.sqrt()]).is_err());
}

#[test]
fn moser_rejects_zero_frequency() {
    let eta = FourierObservable::cosine(vec![1, 0], 0.1, 0.0, Profile::one_minus_p2());
    let err = solve_moser(&eta, &[0.0, 1.0]).unwrap_err();
    assert!(matches!(err, Error::InvalidSpectrum(_)), "{err}");
}

#[test]
fn corrected_path_preserves_area() {
    let env = torus();
    let v = env.as_torus().unwrap().v().to_vec();
    let path = DensityPath::new(single_mode(0.2), &v).unwrap();
    let opts = MoserOptions { nq: 16, np: 8, flow_steps: 32, ..MoserOptions::default() };
    let corrected = moser_correct(&path, &env, &opts).unwrap();
    for t in [0.5, 1.0] {
        let f = path.map_at(t);
        let lam = corrected.at(t).unwrap();
        for x in grid(5, 5, 0.5) {
            let df = jacobian(&f, &env, x, JACOBIAN_STEP).unwrap().det();
            let eta = corrected.solution.eta(&env, x.q, x.p).unwrap();
            assert!((df - (1.0 - t * eta)).abs() < 1e-8);
            let d = jacobian(&lam, &env, x, JACOBIAN_STEP).unwrap().det();
            assert!((d - 1.0).abs() < 1e-4, "t={t} {x:?} det={d}");
        }
    }
}

#[test]
fn corrector_is_a_stationary_lift() {
    let env = torus();
    let v = env.as_torus().unwrap().v().to_vec();
    let path = DensityPath::new(single_mode(0.2), &v).unwrap();
    let opts = MoserOptions { nq: 8, np: 8, flow_steps: 16, ..MoserOptions::default() };
    let g = moser_correct(&path, &env, &opts).unwrap().corrector(1.0);
    let x = StripPoint { q: 0.3, p: 0.2 };
    for a in [0.7, -1.3] {
        let y = g.apply(&env, StripPoint { q: x.q + a, p: x.p }).unwrap();
        let z = g.apply(&env.shift(a), x).unwrap();
        assert!((y.q - a - z.q).abs() < 1e-10 && (y.p - z.p).abs() < 1e-10);
    }
}

#[test]
fn trivial_density_gives_identity_corrector() {
    let env = torus();
    let eta = FourierObservable::constant(2, 0.0);
    let sol = solve_moser(&eta, env.as_torus().unwrap().v()).unwrap();
    let x = StripPoint { q: 0.4, p: -0.3 };
    assert_eq!(sol.flow(&env, x, 8).unwrap(), x);
}

#[test]
fn kinetic_decomposition_is_exact() {
    let env = torus();
    let path = IsotopyPath::hamiltonian(StationaryHamiltonian::kinetic(), &env, 0.05).unwrap();
    let d = decompose_isotopy(&path, &env, 2, &DecomposeOptions::default()).unwrap();
    assert!((d.delta - 0.5).abs() < 1e-9, "δ = {}", d.delta);
    assert_eq!(d.factors.len(), 4);
    for x in grid(11, 11, 3.0) {
        let e = d.etas[0].apply(&env, x).unwrap();
        assert!((e.q - (x.q + 1.5 * x.p)).abs() < 1e-12 && e.p == x.p);
    }
    assert!(d.recomposition_error(&env, &grid(11, 11, 3.0)).unwrap() < 1e-12);
    let signs: Vec<MonotoneSign> = d.factors.iter().map(|f| f.1).collect();
    assert_eq!(signs, [MonotoneSign::Negative, MonotoneSign::Positive, MonotoneSign::Negative, MonotoneSign::Positive]);
    let rec = d.record(None);
    assert_eq!(rec.schema, DECOMP_SCHEMA);
    assert_eq!(rec.factors[1].segment, Some([0.0, 0.5]));
}

#[test]
fn single_step_kinetic_needs_more_steps() {
    let env = torus();
    let path = IsotopyPath::hamiltonian(StationaryHamiltonian::kinetic(), &env, 0.05).unwrap();
    let err = decompose_isotopy(&path, &env, 1, &DecomposeOptions::default()).unwrap_err();
    match err {
        Error::DecompositionStep { delta, hint } => {
            assert!((delta - 1.0).abs() < 1e-9);
            assert_eq!(hint, 2);
        }
        e => panic!("{e}"),
    }
    assert_eq!(choose_steps(&path, &env, 0.6, 8, &DecomposeOptions::default()).unwrap(), 2);
}

#[test]
fn identity_path_decomposes() {
    let env = torus();
    let d = decompose_isotopy(&IsotopyPath::identity(), &env, 1, &DecomposeOptions::default()).unwrap();
    assert_eq!(d.delta, 0.0);
    assert!(d.recomposition_error(&env, &grid(5, 5, 1.0)).unwrap() < 1e-15);
}

#[test]
fn bump_decomposition_recomposes() {
    let env = poisson();
    let path = IsotopyPath::hamiltonian(bump_hamiltonian(0.3), &env, 0.01).unwrap();
    let opts = DecomposeOptions { q_range: [-3.0, 3.0], nq: 31, np: 9 };
    let n = choose_steps(&path, &env, 0.5, 16, &opts).unwrap();
    let d = decompose_isotopy(&path, &env, n, &opts).unwrap();
    assert!(d.delta <= 0.5);
    assert!(d.eta_min_dq_dp.iter().all(|&m| m >= 1.0 - d.delta - 1e-6));
    assert!(d.recomposition_error(&env, &grid(9, 9, 3.0)).unwrap() < 1e-6);
}

#[test]
fn normalization_flags_non_conservative_paths() {
    let env = poisson();
    let good: PathFn = Arc::new(|t| {
        Ok(TwistMapHandle::from_fn("mass-preserving", MonotoneSign::None, move |_, x| {
            StripPoint::new(x.q, x.p + 0.1 * t * (1.0 - x.p * x.p))
        }))
    });
    let bad: PathFn = Arc::new(|t| {
        Ok(TwistMapHandle::from_fn("expanding", MonotoneSign::None, move |_, x| StripPoint::new((1.0 + 0.1 * t) * x.q, x.p)))
    });
    let mesh = [0.0, 0.5, 1.0];
    let ok = normalization_check(&IsotopyPath::explicit("good", good), &env, &mesh, 4, 1).unwrap();
    assert!(ok.iter().all(|v| !v.flagged), "{ok:?}");
    let flagged = normalization_check(&IsotopyPath::explicit("bad", bad), &env, &mesh, 4, 1).unwrap();
    assert!(!flagged[0].flagged && flagged[2].flagged);
    assert!((flagged[2].value - 1.1).abs() < 1e-8);
}
