use std::f64::consts::TAU;

use super::*;
use crate::environment::QuasiPeriodicEnv;
use crate::twist::{compose, jacobian};

fn torus(phase: [f64; 2]) -> Environment {
    Environment::QuasiPeriodic(QuasiPeriodicEnv::new(vec![1.0, 2f64.sqrt()], phase.to_vec()).unwrap())
}

fn c_of(c0: f64, eps: f64, env: &Environment, q: f64) -> f64 {
    let th = env.as_torus().unwrap().phase_at(q);
    c0 * (1.0 + eps * (TAU * th[0]).cos())
}

fn linear() -> MonotoneGenFun {
    MonotoneGenFun::new(SeedSpec::linear()).unwrap()
}

fn family(c0: f64, eps: f64) -> MonotoneGenFun {
    MonotoneGenFun::new(SeedSpec::cosine_modulated(c0, eps, 2)).unwrap()
}

fn profile_seed(p: AProfile) -> SeedSpec {
    SeedSpec { terms: vec![SeedTerm { profile: p, modulation: None }] }
}

#[test]
fn eta_sigma_closed_forms() {
    let env = torus([0.0, 0.0]);
    let (eta, sigma) = eta_sigma(&SeedSpec::linear(), &env, 0.3).unwrap();
    assert!((eta - 2.0).abs() < 1e-12 && (sigma - 1.0).abs() < 1e-12);
    let (eta, sigma) = eta_sigma(&profile_seed(AProfile::Poly { coeffs: vec![0.0, 0.0, 2.0] }), &env, 0.0).unwrap();
    assert!((eta - 1.0).abs() < 1e-12);
    assert!((sigma - 2.0 / 3.0).abs() < 1e-10);
    let err = eta_sigma(&profile_seed(AProfile::Saturating { c: 1.0 }), &env, 0.0).unwrap_err();
    assert_eq!(err, Error::UnboundedSeed { a_max: A_MAX });
}

#[test]
fn seed_validation() {
    assert!(MonotoneGenFun::new(SeedSpec { terms: vec![] }).is_err());
    assert!(MonotoneGenFun::new(profile_seed(AProfile::Poly { coeffs: vec![1.0, 1.0] })).is_err());
    assert!(MonotoneGenFun::new(profile_seed(AProfile::Power { c: 1.0, k: -1.0 })).is_err());
}

#[test]
fn shear_seed_generating_function() {
    let env = torus([0.1, 0.2]);
    let g = linear();
    let l = g.eval_l(&env, 0.0, 0.0).unwrap();
    assert!((l.l - 0.5).abs() < 1e-12);
    let top = g.eval_l(&env, 0.0, 1.0).unwrap();
    assert!((top.l - 1.0).abs() < 1e-12 && (top.l_v - 1.0).abs() < 1e-12);
    let bottom = g.eval_l(&env, 0.0, -1.0).unwrap();
    assert!((bottom.l - 1.0).abs() < 1e-12 && (bottom.l_v + 1.0).abs() < 1e-12);
    assert!(matches!(g.eval_l(&env, 0.0, 1.5), Err(Error::OutsideDomain { .. })));
}

#[test]
fn shear_seed_twist_is_phi0() {
    let env = torus([0.1, 0.2]);
    let f = twist_from_h(&linear(), MonotoneSign::Positive);
    let finv = twist_from_h(&linear(), MonotoneSign::Negative);
    for i in 0..20 {
        for j in 0..=10 {
            let x = StripPoint { q: -3.0 + 0.3 * i as f64, p: -1.0 + 0.2 * j as f64 };
            let y = f.apply(&env, x).unwrap();
            assert!((y.q - x.q - x.p).abs() < 1e-12 && (y.p - x.p).abs() < 1e-12, "{x:?} {y:?}");
            let z = finv.apply(&env, x).unwrap();
            assert!((z.q - x.q + x.p).abs() < 1e-11 && (z.p - x.p).abs() < 1e-11, "{x:?} {z:?}");
        }
    }
    assert_eq!(finv.monotone_sign(), MonotoneSign::Negative);
}

#[test]
fn modulated_family_boundary_images() {
    let env = torus([0.0, 0.0]);
    let g = family(1.0, 0.1);
    let f = g.twist();
    for &q in &[0.0, 0.2, 0.5, 1.7] {
        let c = c_of(1.0, 0.1, &env, q);
        let (eta, sigma) = g.eta_sigma(&env, q).unwrap();
        assert!((eta - 2.0 / c).abs() < 1e-12 && (sigma - 1.0 / c).abs() < 1e-10);
        let top = f.apply(&env, StripPoint { q, p: 1.0 }).unwrap();
        let bottom = f.apply(&env, StripPoint { q, p: -1.0 }).unwrap();
        assert!((top.q - q - 1.0 / c).abs() < 1e-10 && top.p == 1.0);
        assert!((bottom.q - q + 1.0 / c).abs() < 1e-10 && bottom.p == -1.0);
    }
}

#[test]
fn boundary_identities_hold() {
    let g = family(1.0, 0.1);
    for k in 0..25 {
        let env = torus([0.04 * k as f64, 0.37 * k as f64 % 1.0]);
        let [lo, hi] = g.domain(&env, 0.0).unwrap();
        let a = g.eval_l(&env, 0.0, lo).unwrap();
        let b = g.eval_l(&env, 0.0, hi).unwrap();
        assert!((a.l_v + 1.0).abs() < 1e-8 && (b.l_v - 1.0).abs() < 1e-8);
        assert!(a.l_w.abs() < 1e-6 && b.l_w.abs() < 1e-6);
        assert!((a.l + lo).abs() < 1e-8 && (b.l - hi).abs() < 1e-8);
    }
}

#[test]
fn generating_identity_and_round_trip() {
    let env = torus([0.3, 0.6]);
    let g = family(1.0, 0.1);
    let f = g.twist();
    let finv = f.inverse();
    for i in 0..30 {
        let q = -2.0 + 0.137 * i as f64;
        let [lo, hi] = g.domain(&env, q).unwrap();
        let qq = q + lo + (hi - lo) * ((i as f64 * 0.618) % 1.0);
        let gv = g.eval_g(&env, q, qq).unwrap();
        let y = f.apply(&env, StripPoint::new(q, -gv.g_x).unwrap()).unwrap();
        assert!((y.q - qq).abs() < 1e-9 && (y.p - gv.g_y).abs() < 1e-9);
        let back = finv.apply(&env, y).unwrap();
        assert!((back.q - q).abs() < 1e-9 && (back.p + gv.g_x).abs() < 1e-9);
    }
}

#[test]
fn twist_area_preservation() {
    let env = torus([0.0, 0.0]);
    let f = family(1.0, 0.1).twist();
    for &(q, p) in &[(0.5, 0.0), (0.1, 0.3), (-1.2, -0.8), (2.0, 0.99)] {
        let j = jacobian(&f, &env, StripPoint { q, p }, 1e-5).unwrap();
        assert!((j.det() - 1.0).abs() < 1e-6, "{q} {p} {}", j.det());
    }
}

#[test]
fn extraction_from_shear() {
    let env = torus([0.0, 0.0]);
    let ext = genfun_from_twist(&TwistMapHandle::phi0()).unwrap();
    for &v in &[-1.0, -0.4, 0.0, 0.7, 1.0] {
        let l = ext.eval_l(&env, 0.3, v).unwrap();
        assert!((l.l - (v * v + 1.0) / 2.0).abs() < 1e-9, "{v} {}", l.l);
        let m = linear().eval_l(&env, 0.3, v).unwrap();
        assert!((l.l_v - m.l_v).abs() < 1e-9 && (l.l_w - m.l_w).abs() < 1e-9);
    }
    assert!(matches!(genfun_from_twist(&TwistMapHandle::phi0_inv()), Err(Error::NotMonotone(_))));
}

#[test]
fn extraction_round_trip_for_modulated_family() {
    let env = torus([0.2, 0.9]);
    let g = family(1.0, 0.1);
    let ext = genfun_from_twist(&g.twist()).unwrap();
    for &(q, s) in &[(0.0, 0.25), (0.4, 0.5), (1.3, 0.8)] {
        let [lo, hi] = g.domain(&env, q).unwrap();
        let v = lo + s * (hi - lo);
        let a = g.eval_l(&env, q, v).unwrap();
        let b = ext.eval_l(&env, q, v).unwrap();
        assert!((a.l - b.l).abs() < 1e-8, "{} {}", a.l, b.l);
        assert!((a.l_v - b.l_v).abs() < 1e-8 && (a.l_w - b.l_w).abs() < 1e-8);
    }
}

#[test]
fn chain_sign_rules() {
    assert!(matches!(compose_genfuns(vec![Factor::positive(linear())]), Err(Error::SignPattern(_))));
    assert!(compose_genfuns(vec![Factor::negative(linear()), Factor::negative(linear())]).is_err());
    let chain = compose_genfuns(vec![Factor::negative(linear()), Factor::positive(linear())]).unwrap();
    assert_eq!(chain.n(), 1);
}

#[test]
fn shear_pair_action_vanishes() {
    let env = torus([0.0, 0.0]);
    let chain = compose_genfuns(vec![Factor::negative(linear()), Factor::positive(linear())]).unwrap();
    for &(q, xi) in &[(0.0, 0.3), (1.0, 0.2), (-0.5, 0.4)] {
        let a = chain.action(&env, q, &[xi]).unwrap();
        assert!(a.value.abs() < 1e-12);
        assert!(a.grad.iter().all(|g| g.abs() < 1e-12));
    }
    let s = chain.domain_strata(&env, 0.0, &[0.1]).unwrap();
    assert!(s.is_interior() && s.min_margin() > 0.0);
    // The two factor domains coincide for the shear pair.
    let s = chain.domain_strata(&env, 0.0, &[1.0]).unwrap();
    assert_eq!(s.strata[0], Stratum { factor: 0, side: Side::Plus });
    let s = chain.domain_strata(&env, 0.0, &[-1.0]).unwrap();
    assert_eq!(s.strata[0], Stratum { factor: 0, side: Side::Minus });
    let perturbed = perturbed_chain();
    let [_, hi] = perturbed.first_range(&env, 0.0).unwrap();
    let s = perturbed.domain_strata(&env, 0.0, &[hi]).unwrap();
    assert_eq!(s.strata, vec![Stratum { factor: 0, side: Side::Plus }]);
    assert!(matches!(chain.action(&env, 0.0, &[1.5]), Err(Error::OutsideActionDomain(_))));
}

fn perturbed_chain() -> CompositeGenFun {
    compose_genfuns(vec![Factor::negative(linear()), Factor::positive(family(0.8, 0.05))]).unwrap()
}

#[test]
fn n0_action_is_inverse_modulation() {
    let env = torus([0.0, 0.0]);
    let single = CompositeGenFun::single(family(1.0, 0.1));
    for &q in &[0.0, 0.2, 0.5, 0.9] {
        let a = single.action(&env, q, &[]).unwrap();
        assert!((a.value - 0.5 / c_of(1.0, 0.1, &env, q)).abs() < 1e-10);
    }
}

#[test]
fn n1_closed_form_action() {
    let env = torus([0.0, 0.0]);
    let chain = perturbed_chain();
    for &(q, a) in &[(0.0, 0.2), (0.3, -0.5), (1.1, 0.9)] {
        let xi = q - a;
        let c = c_of(0.8, 0.05, &env, xi);
        let want = (c - 1.0) * a * a / 2.0 + (1.0 / c - 1.0) / 2.0;
        let got = chain.action(&env, q, &[xi]).unwrap();
        assert!((got.value - want).abs() < 1e-10, "{} {}", got.value, want);
        assert!((got.grad[0] - (c - 1.0) * a).abs() < 1e-9);
    }
}

#[test]
fn n1_inclusion_and_boundary_gradients() {
    let env = torus([0.0, 0.0]);
    let chain = perturbed_chain();
    for i in 0..40 {
        let q = -3.0 + 0.15 * i as f64;
        let m = chain.inclusion_margins(&env, q).unwrap();
        assert!(m.upper > 0.0 && m.lower > 0.0, "{m:?}");
        let [lo, hi] = chain.first_range(&env, q).unwrap();
        let top = chain.action(&env, q, &[hi]).unwrap();
        assert!(top.grad[1] < 0.0 && top.grad[0] > 0.0, "∂+ at {q}: {:?}", top.grad);
        let bottom = chain.action(&env, q, &[lo]).unwrap();
        assert!(bottom.grad[1] > 0.0 && bottom.grad[0] < 0.0, "∂- at {q}: {:?}", bottom.grad);
    }
}

#[test]
fn n1_generating_identity_along_orbits() {
    let env = torus([0.4, 0.1]);
    let chain = perturbed_chain();
    let factors: Vec<TwistMapHandle> = chain.factors().iter().map(|f| f.map()).collect();
    let full = compose(&factors).unwrap();
    for i in 0..20 {
        let x = StripPoint { q: -1.0 + 0.11 * i as f64, p: -0.9 + 0.09 * i as f64 };
        let mid = factors[0].apply(&env, x).unwrap();
        let y = factors[1].apply(&env, mid).unwrap();
        let (_, parts) = chain.eval(&env, x.q, y.q, &[mid.q]).unwrap();
        assert!((parts[0].g_y + parts[1].g_x).abs() < 1e-8, "stationary in ξ");
        assert!((-parts[0].g_x - x.p).abs() < 1e-8 && (parts[1].g_y - y.p).abs() < 1e-8);
        let r = chain.generating_residual(&env, x.q, y.q, &[mid.q]).unwrap();
        assert!(r < 1e-8);
        assert!(full.apply(&env, x).unwrap().dist(&y) < 1e-12);
    }
}

#[test]
fn n2_k_map_signs() {
    let env = torus([0.0, 0.0]);
    let chain = compose_genfuns(vec![
        Factor::negative(linear()),
        Factor::positive(family(0.6, 0.05)),
        Factor::negative(linear()),
    ])
    .unwrap();
    let k = KMap::new(&chain).unwrap();
    for i in 0..10 {
        let q = 0.23 * i as f64;
        for &(p1, p2) in &[(-0.9, 0.3), (0.0, 0.0), (0.7, -0.6), (1.0, 1.0), (-1.0, -1.0)] {
            let v = k.eval(&env, q, p1, p2).unwrap();
            assert!(v.b.iter().all(|b| *b > 0.0));
            assert_eq!(v.grad[1].signum(), v.action_grad[1].signum());
            assert_eq!(v.grad[2].signum(), v.action_grad[2].signum());
            let h = 1e-6;
            let dp1 = |s: f64| k.eval(&env, q, (p1 + s).clamp(-1.0, 1.0), p2).unwrap().value;
            let fd = (dp1(h) - dp1(-h)) / ((p1 + h).min(1.0) - (p1 - h).max(-1.0));
            assert!((fd - v.grad[1]).abs() < 1e-5, "{fd} {}", v.grad[1]);
            let kq = (k.eval(&env, q + h, p1, p2).unwrap().value - k.eval(&env, q - h, p1, p2).unwrap().value)
                / (2.0 * h);
            assert!((kq - v.grad[0]).abs() < 1e-5, "{kq} {}", v.grad[0]);
        }
    }
}

#[test]
fn genfun_spec_round_trip() {
    let spec = GenfunSpec {
        schema: GENFUN_SCHEMA.into(),
        seed: SeedSpec::cosine_modulated(1.0, 0.1, 2),
        sign: MonotoneSign::Positive,
        quadrature_tol: 1e-10,
    };
    let text = serde_json::to_string(&spec).unwrap();
    let back: GenfunSpec = serde_json::from_str(&text).unwrap();
    assert_eq!(spec, back);
    assert!(back.build().is_ok());
    assert!(serde_json::from_str::<GenfunSpec>(r#"{"seed":{"terms":[]},"bogus":1}"#).is_err());
}
