use deepin_core::numerics::{chi2_sf, std_normal_quantile, std_normal_sf, sym_inv_sqrt};
use deepin_core::{Matrix, Rng};

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adapt(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        adapt(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + adapt(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = simpson(a, b, fa, fm, fb);
    adapt(&f, a, b, fa, fm, fb, whole, 1e-13, 60)
}

/// `Gamma(k / 2)` by the half-integer recurrence.
fn gamma_half(k: usize) -> f64 {
    let mut g = if k % 2 == 0 { 1.0 } else { std::f64::consts::PI.sqrt() };
    let mut s = if k % 2 == 0 { 1.0 } else { 0.5 };
    while s < k as f64 / 2.0 {
        g *= s;
        s += 1.0;
    }
    g
}

fn chi2_density(t: f64, k: usize) -> f64 {
    let h = k as f64 / 2.0;
    t.powf(h - 1.0) * (-t / 2.0).exp() / (2f64.powf(h) * gamma_half(k))
}

fn normal_density(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[test]
fn gamma_recurrence_sanity() {
    assert_eq!(gamma_half(2), 1.0);
    assert_eq!(gamma_half(6), 2.0);
    assert!((gamma_half(3) - std::f64::consts::PI.sqrt() / 2.0).abs() < 1e-15);
}

#[test]
fn chi2_sf_matches_quadrature_on_fifty_points() {
    let dfs = [1usize, 2, 3, 5, 10];
    let xs = [0.05, 0.3, 1.0, 2.0, 3.84, 5.0, 7.5, 11.0, 16.0, 25.0];
    let mut worst: f64 = 0.0;
    for &k in &dfs {
        for &x in &xs {
            let oracle = integrate(|t| chi2_density(t, k), x, x + 150.0);
            let err = (chi2_sf(x, k) - oracle).abs();
            assert!(err <= 1e-7, "k {k} x {x}: {} vs {oracle}", chi2_sf(x, k));
            worst = worst.max(err);
        }
    }
    println!("chi2_sf worst error {worst:e}");
    assert!((chi2_sf(3.84, 1) - 0.05).abs() < 1e-3);
}

#[test]
fn std_normal_sf_matches_quadrature_on_fifty_points() {
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let z = -6.0 + 12.0 * i as f64 / 49.0;
        let oracle = integrate(normal_density, z, 40.0);
        let err = (std_normal_sf(z) - oracle).abs();
        assert!(err <= 1e-7, "z {z}: {} vs {oracle}", std_normal_sf(z));
        worst = worst.max(err);
    }
    println!("std_normal_sf worst error {worst:e}");
}

#[test]
fn quantile_matches_bisection_on_quadrature_cdf() {
    let cdf = |q: f64| 1.0 - integrate(normal_density, q, 40.0);
    let (mut lo, mut hi) = (0.0, 4.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < 0.975 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let q = std_normal_quantile(0.975).unwrap();
    assert!((q - 0.5 * (lo + hi)).abs() < 1e-7, "{q} vs {}", 0.5 * (lo + hi));
    assert!((q - 1.959964).abs() < 1e-6);
}

/// Projector onto the column space of `a` by modified Gram-Schmidt.
fn projector(a: &Matrix) -> Matrix {
    let (n, r) = a.shape();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for j in 0..r {
        let mut v = a.col(j);
        for q in &basis {
            let dot: f64 = v.iter().zip(q).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(q).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-10 {
            basis.push(v.iter().map(|x| x / norm).collect());
        }
    }
    Matrix::from_fn(n, n, |i, j| basis.iter().map(|q| q[i] * q[j]).sum())
}

#[test]
fn inv_sqrt_projector_identity() {
    let m = Matrix::from_rows(&[&[1.0, 1.0], &[1.0, 1.0]]).unwrap();
    let s = sym_inv_sqrt(&m, 1e-8).unwrap();
    let expect = 1.0 / (2.0 * 2f64.sqrt());
    for v in s.as_slice() {
        assert!((v - expect).abs() < 1e-12);
    }
    let mut rng = Rng::new(8);
    for trial in 0..50 {
        let n = 2 + rng.below(9);
        let r = 1 + rng.below(n);
        let a = Matrix::from_fn(n, r, |_, _| rng.normal());
        let m = a.matmul(&a.transpose()).unwrap();
        let s = sym_inv_sqrt(&m, 1e-8).unwrap();
        let p = s.matmul(&m).unwrap().matmul(&s).unwrap();
        let err = p.sub(&projector(&a)).unwrap().frobenius_norm();
        assert!(err <= 1e-7, "trial {trial} ({n}x{n}, rank {r}): {err:e}");
    }
}
