//! Generating function recovered from a positive monotone twist:
//! `L(ω, v) = ∫_{Q⁻}^{v} P̄(ω, p̄(ω, a)) da − Q⁻`, where `p̄` inverts
//! `p ↦ Q̄(ω, p)`.

use std::cell::RefCell;

use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::numerics::{adaptive_simpson, bisect, SIMPSON_TOL};
use crate::twist::{MonotoneSign, StripPoint, TwistMapHandle};

use super::{check_domain, GeneratingFunction, LValue};

const MONOTONE_PROBES: usize = 16;

/// Generating function of an arbitrary positive monotone twist.
#[derive(Clone, Debug)]
pub struct ExtractedGenFun {
    map: TwistMapHandle,
    tol: f64,
}

/// Builds the generating function of `map`.
pub fn genfun_from_twist(map: &TwistMapHandle) -> Result<ExtractedGenFun> {
    if map.monotone_sign() != MonotoneSign::Positive {
        return Err(Error::NotMonotone(format!("{} is not positive monotone", map.describe())));
    }
    Ok(ExtractedGenFun { map: map.clone(), tol: SIMPSON_TOL })
}

impl ExtractedGenFun {
    fn offset(&self, env: &Environment, q: f64, p: f64) -> Result<StripPoint> {
        let y = self.map.apply(env, StripPoint { q, p })?;
        Ok(StripPoint { q: y.q - q, p: y.p })
    }

    /// Checks that `p ↦ Q̄(τ_q ω, p)` increases on a probe grid.
    pub fn check_monotone(&self, env: &Environment, q: f64) -> Result<()> {
        let mut prev = f64::NEG_INFINITY;
        for j in 0..=MONOTONE_PROBES {
            let p = -1.0 + 2.0 * j as f64 / MONOTONE_PROBES as f64;
            let v = self.offset(env, q, p)?.q;
            if !(v > prev) {
                return Err(Error::NotMonotone(format!("Q̄ fails to increase at q = {q}, p = {p}")));
            }
            prev = v;
        }
        Ok(())
    }

    /// `p̄(τ_q ω, v)`: the momentum whose image offset is `v`.
    pub fn momentum(&self, env: &Environment, q: f64, v: f64) -> Result<f64> {
        let mut failure = None;
        let p = bisect(
            |p| match self.offset(env, q, p) {
                Ok(y) => y.q - v,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            },
            -1.0,
            1.0,
            1e-14,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        p.map_err(|_| Error::NotMonotone(format!("offset {v} not attained at q = {q}")))
    }
}

impl GeneratingFunction for ExtractedGenFun {
    fn eval_l(&self, env: &Environment, q: f64, v: f64) -> Result<LValue> {
        let [lo, hi] = self.domain(env, q)?;
        let v = check_domain(v, lo, hi)?;
        let failure = RefCell::new(None);
        let integral = adaptive_simpson(
            |a| {
                let r = self.momentum(env, q, a.clamp(lo, hi)).and_then(|p| self.offset(env, q, p));
                match r {
                    Ok(y) => y.p,
                    Err(e) => {
                        failure.borrow_mut().get_or_insert(e);
                        f64::NAN
                    }
                }
            },
            lo,
            v,
            self.tol,
        );
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        let integral = integral?;
        let p = self.momentum(env, q, v)?;
        let l_v = self.offset(env, q, p)?.p;
        Ok(LValue { l: integral - lo, l_v, l_w: l_v - p })
    }

    fn domain(&self, env: &Environment, q: f64) -> Result<[f64; 2]> {
        let lo = self.offset(env, q, -1.0)?.q;
        let hi = self.offset(env, q, 1.0)?.q;
        if !(hi > lo) {
            return Err(Error::NotMonotone(format!("Q̄(ω, 1) ≤ Q̄(ω, −1) at q = {q}")));
        }
        Ok([lo, hi])
    }

    fn twist(&self) -> TwistMapHandle {
        self.map.clone()
    }

    fn describe(&self) -> String {
        format!("extracted from {}", self.map.describe())
    }
}
