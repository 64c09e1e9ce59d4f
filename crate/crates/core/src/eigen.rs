//! Eigenvalues of 3×3 real matrices and the pole-placement membership test.
//!
//! Roots come from the closed-form cubic solution. The best-isolated real root
//! is polished with Newton steps on the characteristic polynomial and deflated,
//! and the remaining pair is taken from the quadratic factor. This keeps the
//! pass/fail performance checks free of iterative-solver jitter.

use nalgebra::Matrix3;
use num_complex::Complex64;

use crate::model::PerformanceSpec;

/// Default absolute tolerance on both the dominant real part and the damping.
pub const DEFAULT_PERFORMANCE_TOL: f64 = 5e-3;

/// Monic characteristic polynomial `s³ + c2 s² + c1 s + c0`, returned as
/// `[c2, c1, c0]`.
pub fn char_poly_3x3(a: &Matrix3<f64>) -> [f64; 3] {
    let c2 = -a.trace();
    let c1 = (a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)])
        + (a[(0, 0)] * a[(2, 2)] - a[(0, 2)] * a[(2, 0)])
        + (a[(1, 1)] * a[(2, 2)] - a[(1, 2)] * a[(2, 1)]);
    let c0 = -a.determinant();
    [c2, c1, c0]
}

/// All three eigenvalues, sorted by descending real part and then by
/// ascending imaginary part.
pub fn eigenvalues_3x3(a: &Matrix3<f64>) -> [Complex64; 3] {
    let mut roots = cubic_roots(char_poly_3x3(a));
    sort_roots(&mut roots);
    roots
}

pub fn sort_roots(roots: &mut [Complex64]) {
    roots.sort_by(|x, y| {
        y.re.partial_cmp(&x.re)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(x.im.partial_cmp(&y.im).unwrap_or(std::cmp::Ordering::Equal))
    });
}

/// Roots of the monic cubic `s³ + c2 s² + c1 s + c0`.
pub fn cubic_roots([c2, c1, c0]: [f64; 3]) -> [Complex64; 3] {
    let eval = |s: f64| ((s + c2) * s + c1) * s + c0;
    let deriv = |s: f64| (3.0 * s + 2.0 * c2) * s + c1;

    let shift = c2 / 3.0;
    let p = c1 - c2 * c2 / 3.0;
    let q = 2.0 * c2 * c2 * c2 / 27.0 - c2 * c1 / 3.0 + c0;
    let disc = (q / 2.0) * (q / 2.0) + (p / 3.0) * (p / 3.0) * (p / 3.0);

    let mut real_root = if disc > 0.0 {
        let u = -q.signum() * (q.abs() / 2.0 + disc.sqrt()).cbrt();
        let x = if u == 0.0 { 0.0 } else { u - p / (3.0 * u) };
        x - shift
    } else if p == 0.0 {
        -shift
    } else {
        let r = (-p / 3.0).sqrt();
        let arg = (-q / (2.0 * r * r * r)).clamp(-1.0, 1.0);
        let phi = arg.acos() / 3.0;
        let two_pi_3 = 2.0 * std::f64::consts::PI / 3.0;
        (0..3)
            .map(|k| 2.0 * r * (phi - two_pi_3 * k as f64).cos() - shift)
            .max_by(|a, b| deriv(*a).abs().partial_cmp(&deriv(*b).abs()).unwrap_or(std::cmp::Ordering::Equal))
            .unwrap_or(-shift)
    };

    // Newton polish; stops as soon as the residual stops shrinking.
    let mut best = eval(real_root).abs();
    for _ in 0..8 {
        let d = deriv(real_root);
        if d == 0.0 || best == 0.0 {
            break;
        }
        let cand = real_root - eval(real_root) / d;
        let res = eval(cand).abs();
        if res < best {
            real_root = cand;
            best = res;
        } else {
            break;
        }
    }

    // (s - r)(s² + b s + c)
    let b = c2 + real_root;
    let c = c1 + real_root * b;
    let [r1, r2] = quadratic_roots(b, c);
    [Complex64::new(real_root, 0.0), r1, r2]
}

/// Roots of `s² + b s + c`.
pub fn quadratic_roots(b: f64, c: f64) -> [Complex64; 2] {
    let disc = b * b - 4.0 * c;
    if disc >= 0.0 {
        let sq = disc.sqrt();
        let big = -0.5 * (b + if b >= 0.0 { sq } else { -sq });
        if big == 0.0 {
            return [Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)];
        }
        [Complex64::new(big, 0.0), Complex64::new(c / big, 0.0)]
    } else {
        let re = -0.5 * b;
        let im = 0.5 * (-disc).sqrt();
        [Complex64::new(re, -im), Complex64::new(re, im)]
    }
}

/// Damping ratio `-a/|s|` of a complex eigenvalue `s = a + jb`.
pub fn damping(s: Complex64) -> f64 {
    -s.re / s.norm()
}

/// Largest real part and smallest damping over the complex pairs of a
/// spectrum. A purely real spectrum reports a damping of 1.
pub fn spectrum_metrics(roots: &[Complex64]) -> (f64, f64) {
    let dominant = roots.iter().map(|s| s.re).fold(f64::NEG_INFINITY, f64::max);
    let min_damping = roots
        .iter()
        .filter(|s| s.im != 0.0)
        .map(|s| damping(*s))
        .fold(1.0, f64::min);
    (dominant, min_damping)
}

/// Membership of `a` in the performance set: dominant real part equal to
/// `lambda_M` and every complex pair damped by at least `zeta_m`, both up to
/// `tol`.
pub fn check_performance(a: &Matrix3<f64>, spec: &PerformanceSpec, tol: f64) -> bool {
    let roots = eigenvalues_3x3(a);
    let dominant = roots.iter().map(|s| s.re).fold(f64::NEG_INFINITY, f64::max);
    if (dominant - spec.lambda_m).abs() > tol {
        return false;
    }
    roots
        .iter()
        .filter(|s| s.im != 0.0)
        .all(|s| damping(*s) >= spec.zeta_m - tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_error_matrix, Gains};
    use proptest::prelude::*;

    fn ae(kp: f64, kd: f64, td: f64) -> Matrix3<f64> {
        build_error_matrix(Gains { kp, kd }, td).unwrap()
    }

    /// Independent route: Schur-based eigenvalues of the companion matrix.
    fn oracle(a: &Matrix3<f64>) -> Vec<Complex64> {
        let mut v: Vec<Complex64> = a.complex_eigenvalues().iter().copied().collect();
        sort_roots(&mut v);
        v
    }

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn zero_gains() {
        let r = eigenvalues_3x3(&ae(0.0, 0.0, 1.0));
        assert!(close(r[0], Complex64::new(0.0, 0.0), 1e-12));
        assert!(close(r[1], Complex64::new(0.0, 0.0), 1e-12));
        assert!(close(r[2], Complex64::new(-1.0, 0.0), 1e-12));
    }

    #[test]
    fn baseline_gains_frozen_values() {
        // Frozen from numpy eig and np.roots on s³ + 10s² + 7s + 2.
        let r = eigenvalues_3x3(&ae(0.2, 0.7, 0.1));
        assert!(close(r[0], Complex64::new(-0.366_001_618_809_853_5, -0.286_075_477_308_407_4), 1e-10));
        assert!(close(r[1], Complex64::new(-0.366_001_618_809_853_5, 0.286_075_477_308_407_4), 1e-10));
        assert!(close(r[2], Complex64::new(-9.267_996_762_380_296, 0.0), 1e-10));
        assert!((damping(r[1]) - 0.787_881_576_321_220_1).abs() < 1e-9);
        for (x, y) in r.iter().zip(oracle(&ae(0.2, 0.7, 0.1))) {
            assert!(close(*x, y, 1e-9));
        }
    }

    #[test]
    fn tuned_gains_dominant_pole() {
        let r = eigenvalues_3x3(&ae(0.82, 2.6, 0.1));
        assert!((r[0].re + 0.364_666_165_390_761_5).abs() < 1e-10);
        assert!((r[1].re + 3.967_023_179_998_451).abs() < 1e-9);
        assert!((r[2].re + 5.668_310_654_610_791).abs() < 1e-9);
        assert!(r.iter().all(|s| s.im == 0.0));
    }

    #[test]
    fn performance_examples() {
        let spec = PerformanceSpec::new(-0.367, 0.7).unwrap();
        assert!(check_performance(&ae(0.82, 2.6, 0.1), &spec, 5e-3));
        assert!(!check_performance(&ae(0.0, 0.0, 1.0), &spec, 5e-3));
        assert!(check_performance(&ae(0.2, 0.7, 0.1), &spec, 1e-2));
    }

    #[test]
    fn damping_below_threshold_fails() {
        // (s + 5)(s² + 0.2 s + 1): damping 0.1, dominant -0.1
        let a = Matrix3::new(0.0, 1.0, 0.0, 0.0, 0.0, 1.0, -5.0, -2.0, -5.2);
        let spec = PerformanceSpec::new(-0.1, 0.7).unwrap();
        let (dom, zmin) = spectrum_metrics(&eigenvalues_3x3(&a));
        assert!((dom + 0.1).abs() < 1e-9);
        assert!(zmin < 0.2);
        assert!(!check_performance(&a, &spec, 5e-3));
    }

    #[test]
    fn general_matrix_matches_oracle() {
        let a = Matrix3::new(1.0, 2.0, -1.0, 0.5, -3.0, 4.0, 2.0, 0.0, 0.25);
        let r = eigenvalues_3x3(&a);
        for (x, y) in r.iter().zip(oracle(&a)) {
            assert!(close(*x, y, 1e-9), "{x} vs {y}");
        }
    }

    proptest! {
        #[test]
        fn re_expansion_reproduces_coefficients(kp in 0.0f64..20.0, kd in 0.0f64..30.0, td in 0.02f64..2.0) {
            let a = ae(kp, kd, td);
            let r = eigenvalues_3x3(&a);
            // (s-r0)(s-r1)(s-r2)
            let c2 = -(r[0] + r[1] + r[2]);
            let c1 = r[0] * r[1] + r[0] * r[2] + r[1] * r[2];
            let c0 = -(r[0] * r[1] * r[2]);
            let want = [1.0 / td, kd / td, kp / td];
            for (got, w) in [c2, c1, c0].iter().zip(want) {
                prop_assert!((got.re - w).abs() <= 1e-9 * w.abs().max(1.0), "{} vs {}", got.re, w);
                prop_assert!(got.im.abs() <= 1e-9 * w.abs().max(1.0));
            }
        }

        #[test]
        fn sorted_descending(kp in 0.0f64..20.0, kd in 0.0f64..30.0, td in 0.02f64..2.0) {
            let r = eigenvalues_3x3(&ae(kp, kd, td));
            prop_assert!(r[0].re >= r[1].re && r[1].re >= r[2].re);
        }
    }
}
