//! Small numerical kernels shared by the modules: quadrature, scalar root
//! finding and dense linear algebra for the tiny systems that show up here.

use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Absolute tolerance for every adaptive Simpson call unless a caller asks for less.
pub const SIMPSON_TOL: f64 = 1e-10;
/// Hard cap on the number of Simpson panels.
pub const SIMPSON_MAX_PANELS: usize = 1 << 20;
/// Bisection tolerance on the bracket width.
pub const BISECTION_TOL: f64 = 1e-12;
/// Nodes of the Gauss-Legendre rule used for smooth p-integrals.
pub const GAUSS_NODES: usize = 64;

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
///
/// Reversed limits give the negated integral. The panel budget is global to
/// the call, so pathological integrands fail loudly instead of recursing
/// forever.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    if b < a {
        return adaptive_simpson(f, b, a, tol).map(|v| -v);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let mut panels = 1usize;
    simpson_step(&f, a, b, fa, fm, fb, whole, tol, 60, &mut panels)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    panels: &mut usize,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    *panels += 1;
    if *panels > SIMPSON_MAX_PANELS {
        return Err(Error::Quadrature(format!(
            "adaptive Simpson exceeded {SIMPSON_MAX_PANELS} panels on [{a}, {b}]"
        )));
    }
    if !delta.is_finite() {
        return Err(Error::Quadrature(format!("non-finite integrand on [{a}, {b}]")));
    }
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    let l = simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, panels)?;
    let r = simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, panels)?;
    Ok(l + r)
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

fn gl64() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(GAUSS_NODES))
}

/// 64-node Gauss-Legendre quadrature over `[a, b]`.
pub fn gauss64<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64) -> f64 {
    let (x, w) = gl64();
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    x.iter()
        .zip(w)
        .map(|(&xi, &wi)| wi * f(mid + half * xi))
        .sum::<f64>()
        * half
}

/// Nodes of the 64-point rule mapped to `[a, b]`, with matching weights.
pub fn gauss64_nodes(a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> {
    let (x, w) = gl64();
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    x.iter().zip(w).map(move |(&xi, &wi)| (mid + half * xi, wi * half))
}

/// Bisection for a root of `f` on a bracket with `f(lo)` and `f(hi)` of
/// opposite sign (zero allowed at either end).
pub fn bisect<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() || !flo.is_finite() || !fhi.is_finite() {
        return Err(Error::NoBracket { lo, hi, flo, fhi });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (hi - lo).abs() <= tol || mid == lo || mid == hi {
            return Ok(mid);
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Safeguarded Newton iteration for a strictly monotone `f` on a bracket.
///
/// `f` returns value and derivative. Steps leaving the current bracket fall
/// back to bisection, so convergence is never worse than plain bisection.
pub fn newton_bracketed<F: FnMut(f64) -> Result<(f64, f64)>>(
    mut f: F,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> Result<f64> {
    let (flo, _) = f(lo)?;
    let (fhi, _) = f(hi)?;
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::NoBracket { lo, hi, flo, fhi });
    }
    let increasing = fhi > flo;
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (fx, dfx) = f(x)?;
        if fx == 0.0 {
            return Ok(x);
        }
        if (fx > 0.0) == increasing {
            hi = x;
        } else {
            lo = x;
        }
        if hi - lo <= tol {
            return Ok(0.5 * (lo + hi));
        }
        let mut next = x - fx / dfx;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 0.25 * tol {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

/// A 2x2 real matrix stored row-major.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Mat2(pub [[f64; 2]; 2]);

/// Eigenvalues of a 2x2 real matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Eigen2 {
    Real(f64, f64),
    Complex { re: f64, im: f64 },
}

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2([[1.0, 0.0], [0.0, 1.0]]);

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn mul(&self, rhs: &Mat2) -> Mat2 {
        let a = &self.0;
        let b = &rhs.0;
        let mut out = [[0.0; 2]; 2];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        Mat2(out)
    }

    pub fn inverse(&self) -> Option<Mat2> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        let m = &self.0;
        Some(Mat2([[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]]))
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        let m = &self.0;
        [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
    }

    pub fn max_abs_diff(&self, other: &Mat2) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                worst = worst.max((self.0[i][j] - other.0[i][j]).abs());
            }
        }
        worst
    }

    pub fn eigenvalues(&self) -> Eigen2 {
        let t = self.trace();
        let d = self.det();
        let disc = 0.25 * t * t - d;
        if disc >= 0.0 {
            let s = disc.sqrt();
            // Avoid cancellation in the smaller root.
            let big = 0.5 * t + s.copysign(t);
            let small = if big != 0.0 { d / big } else { 0.5 * t - s.copysign(t) };
            let (a, b) = if big >= small { (big, small) } else { (small, big) };
            Eigen2::Real(a, b)
        } else {
            Eigen2::Complex { re: 0.5 * t, im: (-disc).sqrt() }
        }
    }
}

/// Eigenvalues of a small symmetric matrix by cyclic Jacobi rotations,
/// returned in ascending order.
pub fn symmetric_eigenvalues(a: &[Vec<f64>]) -> Vec<f64> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i][j] * m[i][j];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn determinant(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let mut m = a.to_vec();
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap_or(col);
        if m[pivot][col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            m.swap(pivot, col);
            det = -det;
        }
        det *= m[col][col];
        for r in (col + 1)..n {
            let factor = m[r][col] / m[col][col];
            for c in col..n {
                m[r][c] -= factor * m[col][c];
            }
        }
    }
    det
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve_linear(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(row, &bi)| {
            let mut r = row.clone();
            r.push(bi);
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(pivot, col);
        for r in (col + 1)..n {
            let factor = m[r][col] / m[col][col];
            for c in col..=n {
                m[r][c] -= factor * m[col][c];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = m[i][n];
        for j in (i + 1)..n {
            s -= m[i][j] * x[j];
        }
        x[i] = s / m[i][i];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_is_exact_on_cubics() {
        let v = adaptive_simpson(|x| x * x * x - 2.0 * x + 1.0, -1.0, 2.0, 1e-12).unwrap();
        // 16/4 - 1/4 - (4 - 1) + 3
        assert!((v - 3.75).abs() < 1e-14);
    }

    #[test]
    fn simpson_reversed_limits_negate() {
        let a = adaptive_simpson(f64::sin, 0.0, 1.0, 1e-12).unwrap();
        let b = adaptive_simpson(f64::sin, 1.0, 0.0, 1e-12).unwrap();
        assert_eq!(a, -b);
        assert!((a - (1.0 - 1f64.cos())).abs() < 1e-11);
    }

    #[test]
    fn gauss_rule_integrates_polynomials_and_exponentials() {
        let v = gauss64(|x| x.powi(20), -1.0, 1.0);
        assert!((v - 2.0 / 21.0).abs() < 1e-14);
        let e = gauss64(f64::exp, -1.0, 0.5);
        assert!((e - (0.5f64.exp() - (-1f64).exp())).abs() < 1e-13);
        let wsum: f64 = gauss64_nodes(0.0, 3.0).map(|(_, w)| w).sum();
        assert!((wsum - 3.0).abs() < 1e-13);
    }

    #[test]
    fn bisect_finds_sqrt_two() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-14).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-13);
        assert!(bisect(|x| x * x + 1.0, 0.0, 2.0, 1e-12).is_err());
    }

    #[test]
    fn newton_bracketed_matches_bisection() {
        let r = newton_bracketed(|x| Ok((x.cos() - x, -x.sin() - 1.0)), 0.0, 1.0, 1e-14).unwrap();
        assert!((r.cos() - r).abs() < 1e-13);
    }

    #[test]
    fn eigen2_cases() {
        let shear = Mat2([[1.0, 1.0], [0.0, 1.0]]);
        assert_eq!(shear.eigenvalues(), Eigen2::Real(1.0, 1.0));
        let rot = Mat2([[0.0, -1.0], [1.0, 0.0]]);
        assert!(matches!(rot.eigenvalues(), Eigen2::Complex { .. }));
        let hyp = Mat2([[2.0, 1.0], [1.0, 1.0]]);
        if let Eigen2::Real(a, b) = hyp.eigenvalues() {
            assert!((a * b - 1.0).abs() < 1e-14);
            assert!((a + b - 3.0).abs() < 1e-14);
        } else {
            panic!("expected real eigenvalues");
        }
    }

    #[test]
    fn jacobi_and_determinant_agree() {
        let a = vec![vec![2.0, 1.0, 0.0], vec![1.0, 3.0, 1.0], vec![0.0, 1.0, 4.0]];
        let ev = symmetric_eigenvalues(&a);
        let prod: f64 = ev.iter().product();
        assert!((prod - determinant(&a)).abs() < 1e-12);
        assert!((ev.iter().sum::<f64>() - 9.0).abs() < 1e-12);
        let x = solve_linear(&a, &[1.0, 2.0, 3.0]).unwrap();
        for (i, row) in a.iter().enumerate() {
            let lhs: f64 = row.iter().zip(&x).map(|(r, v)| r * v).sum();
            assert!((lhs - [1.0, 2.0, 3.0][i]).abs() < 1e-12);
        }
    }
}
