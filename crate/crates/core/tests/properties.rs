use proptest::prelude::*;

use twistlab::environment::{observe, Environment, FourierObservable, PoissonEnv, Profile, QuasiPeriodicEnv};
use twistlab::genfun::{twist_from_h, MonotoneGenFun, SeedSpec};
use twistlab::twist::{MonotoneSign, StripPoint, TwistMapHandle, CLAMP_HARD};

fn torus(phase: [f64; 2]) -> Environment {
    Environment::QuasiPeriodic(QuasiPeriodicEnv::new(vec![1.0, 2f64.sqrt()], phase.to_vec()).unwrap())
}

fn observable() -> FourierObservable {
    let mut f = FourierObservable::cosine(vec![1, 0], 0.7, 0.3, Profile::One);
    f.push_cosine(vec![1, -2], 0.2, 1.1, Profile::One);
    f
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shift_group_law(th0 in 0.0..1.0f64, th1 in 0.0..1.0f64, a in -50.0..50.0f64, b in -50.0..50.0f64) {
        let env = torus([th0, th1]);
        let ab = env.shift(a).shift(b);
        let direct = env.shift(a + b);
        let (x, y) = (ab.as_torus().unwrap().phase(), direct.as_torus().unwrap().phase());
        for k in 0..2 {
            let d = (x[k] - y[k]).abs();
            prop_assert!(d.min(1.0 - d) < 1e-10);
        }
    }

    #[test]
    fn poisson_shift_group_law(a in -20.0..20.0f64, b in -20.0..20.0f64) {
        let env = Environment::Poisson(PoissonEnv::from_cells(0.8, 3).unwrap());
        let pts = |e: &Environment| match e {
            Environment::Poisson(p) => p.points_in(-5.0, 5.0),
            _ => unreachable!(),
        };
        let x = pts(&env.shift(a).shift(b));
        let y = pts(&env.shift(a + b));
        prop_assert_eq!(x.len(), y.len());
        for (u, v) in x.iter().zip(&y) {
            prop_assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn observables_are_stationary(th0 in 0.0..1.0f64, th1 in 0.0..1.0f64, q in -30.0..30.0f64, a in -30.0..30.0f64) {
        let env = torus([th0, th1]);
        let obs = observable().into();
        let lhs = observe(&obs, &env.shift(a), q, None).unwrap();
        let rhs = observe(&obs, &env, q + a, None).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn twist_is_a_stationary_lift(th0 in 0.0..1.0f64, q in -10.0..10.0f64, p in -1.0..1.0f64, a in -10.0..10.0f64) {
        let env = torus([th0, 0.25]);
        let gf = MonotoneGenFun::new(SeedSpec::cosine_modulated(1.0, 0.1, 2)).unwrap();
        let f = twist_from_h(&gf, MonotoneSign::Positive);
        let y = f.apply(&env, StripPoint { q: q + a, p }).unwrap();
        let z = f.apply(&env.shift(a), StripPoint { q, p }).unwrap();
        prop_assert!((y.q - a - z.q).abs() < 1e-8);
        prop_assert!((y.p - z.p).abs() < 1e-8);
    }

    #[test]
    fn twist_preserves_the_strip(th0 in 0.0..1.0f64, q in -10.0..10.0f64, p in -1.0..1.0f64) {
        let env = torus([th0, 0.6]);
        let gf = MonotoneGenFun::new(SeedSpec::cosine_modulated(1.0, 0.1, 2)).unwrap();
        let f = twist_from_h(&gf, MonotoneSign::Positive);
        let y = f.apply(&env, StripPoint { q, p }).unwrap();
        prop_assert!(y.p.abs() <= 1.0);
        let x = StripPoint { q, p };
        let back = f.inverse().apply(&env, y).unwrap();
        prop_assert!(back.dist(&x) < 1e-7);
    }

    #[test]
    fn shear_inverse_roundtrip(s in -3.0..3.0f64, q in -100.0..100.0f64, p in -1.0..1.0f64) {
        let env = torus([0.0, 0.0]);
        let f = TwistMapHandle::shear(s);
        let x = StripPoint { q, p };
        let y = f.inverse().apply(&env, f.apply(&env, x).unwrap()).unwrap();
        prop_assert!(y.dist(&x) < 1e-12);
    }

    #[test]
    fn strip_points_clamp_or_reject(excess in 0.0f64..1e-8) {
        prop_assume!((excess - CLAMP_HARD).abs() > 1e-12);
        let r = StripPoint::new(0.0, 1.0 + excess);
        if excess <= CLAMP_HARD {
            prop_assert_eq!(r.unwrap().p, 1.0);
            prop_assert_eq!(StripPoint::new(0.0, -1.0 - excess).unwrap().p, -1.0);
        } else {
            prop_assert!(r.is_err());
        }
    }
}
