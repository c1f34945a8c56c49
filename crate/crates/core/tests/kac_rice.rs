use spiked_landscape::kac_rice::*;
use spiked_landscape::scalar_core::y_of;
use spiked_landscape::thresholds_gse::{gse_predict, lambda2};
use spiked_landscape::ModelParams;

fn pr(p: u32, k: u32, l: f64) -> ModelParams {
    ModelParams::new(p, k, l).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

// Window around (m*, x*) = (0.957, -3.25) for (p, k, lambda) = (3, 2, 6).
fn tower_window(p: &ModelParams) -> CountWindow {
    CountWindow::new((0.90, 0.99), (-3.5, -3.0), p).unwrap()
}

#[test]
fn n2_exact_matches_independent_quadrature() {
    // Oracle: independent double quadrature of the same integrand (scipy dblquad).
    let p = pr(3, 2, 6.0);
    let w = CountWindow::new((0.3, 0.99), (-4.0, -2.7), &p).unwrap();
    let v = expected_euler_char(&w, 2, &p).unwrap();
    assert!(rel(v, 0.2968962) < 1e-5, "{v}");
}

#[test]
fn n2_full_circle_is_zero() {
    let p = pr(3, 2, 6.0);
    let w = CountWindow::unchecked((-1.0, 1.0), (-30.0, 30.0));
    // the value is zero, so only an absolute tolerance can terminate
    let mut opts = KacRiceOptions::default();
    opts.outer = opts.outer.abs(1e-9);
    opts.inner = opts.inner.abs(1e-11);
    let v = expected_euler_char_with(&w, 2, &p, opts).unwrap();
    assert!(v.abs() < 1e-4, "{v}");
}

#[test]
fn g_n_matches_rank1_path() {
    for &(p, k, lam, n, m, x) in &[
        (3u32, 2u32, 6.0, 6u32, 0.5, -3.0),
        (3, 3, 4.0, 20, 0.7, -2.9),
        (4, 3, 5.0, 50, 0.8, -3.5),
        (5, 1, 3.0, 11, 0.2, -2.5),
    ] {
        let pp = pr(p, k, lam);
        let a = g_n_det(x, m, n, &pp);
        let nm1 = f64::from(n - 1);
        let r = (2.0 * f64::from(n) / nm1).sqrt();
        let y = y_of(x, m, &pp);
        let pf = f64::from(p);
        let b = expected_det_rank1(n - 1, r * theta(m, &pp), r * y).scale(0.5 * nm1 * (nm1 * pf * (pf - 1.0)).ln(), 1);
        assert_eq!(a.sign, b.sign);
        assert!((a.log_abs - b.log_abs).abs() < 1e-8, "{a:?} {b:?}");
    }
}

#[test]
fn g_n_without_spike_is_pure_hermite() {
    let p = pr(3, 2, 0.0);
    let (x, m, n) = (-1.9, 0.3, 12u32);
    let a = g_n_det(x, m, n, &p);
    let y = y_of(x, m, &p);
    let (s, l) = spiked_landscape::scalar_core::hermite_h_log(n - 1, f64::from(n).sqrt() * y);
    let expect = if (n - 1) % 2 == 0 { s } else { -s };
    assert_eq!(a.sign, expect);
    assert!((a.log_abs - (l + 0.5 * f64::from(n - 1) * 3f64.ln())).abs() < 1e-12);
}

#[test]
fn terms_match_independent_quadrature() {
    // Oracle values from an independent scipy implementation.
    let p = pr(3, 2, 6.0);
    let w = tower_window(&p);
    let t = term_integrals(&w, 100, &p).unwrap();
    assert!(rel(t.term_i, 1.09557718262185) < 1e-5, "{t:?}");
    assert!(rel(t.term_ii, -0.09044967910125375) < 1e-5, "{t:?}");
    let e = expected_euler_char(&w, 100, &p).unwrap();
    assert!(rel(e, 0.9924716612252649) < 1e-5, "{e}");
}

#[test]
fn tower_discrepancy_shrinks() {
    let p = pr(3, 2, 6.0);
    let w = tower_window(&p);
    let d: Vec<f64> = [200u32, 400, 800]
        .iter()
        .map(|&n| {
            let t = term_integrals(&w, n, &p).unwrap().total();
            (t / sharp_asymptotic(&w, n, &p).unwrap() - 1.0).abs()
        })
        .collect();
    assert!(d[1] < d[0] && d[2] < d[1], "{d:?}");
    let e200 = expected_euler_char(&w, 200, &p).unwrap();
    let t200 = term_integrals(&w, 200, &p).unwrap().total();
    assert!(rel(t200, e200) < 0.05);
}

#[test]
fn exact_to_sharp_at_large_n() {
    let p = pr(3, 2, 6.0);
    let w = tower_window(&p);
    let e = expected_euler_char(&w, 200, &p).unwrap();
    let s = sharp_asymptotic(&w, 200, &p).unwrap();
    assert!(rel(e, s) < 0.05, "{e} {s}");
}

#[test]
fn saddle_at_ground_state() {
    let p = pr(3, 2, 6.0);
    let w = tower_window(&p);
    let sd = saddle(&w, &p);
    let g = gse_predict(&p).unwrap();
    assert!(sd.interior);
    assert!((sd.m_o - g.m_star).abs() < 1e-6);
    assert!((sd.y_o - g.y_star).abs() < 1e-6);
    assert!(sd.rate.abs() < 1e-10);
}

#[test]
fn saddle_rate_matches_dense_grid() {
    let p = pr(3, 2, 6.0);
    let w = CountWindow::new((0.5, 0.8), (-3.4, -2.9), &p).unwrap();
    let sd = saddle(&w, &p);
    assert!(sd.rate < 0.0);
    let mut best = f64::NEG_INFINITY;
    for i in 0..=200 {
        let m = w.m.0 + (w.m.1 - w.m.0) * f64::from(i) / 200.0;
        let (lo, hi) = w.e_tilde(m, &p);
        for j in 0..=200 {
            let y = lo + (hi - lo) * f64::from(j) / 200.0;
            let s = spiked_landscape::scalar_core::s_tilde(m, y, &p).unwrap();
            best = best.max(s);
        }
    }
    assert!((sd.rate - best).abs() < 1e-4, "{} {best}", sd.rate);
    assert!(sharp_asymptotic(&w, 100, &p).is_err() || !sd.interior);
}

#[test]
fn low_latitude_saddle_sits_on_upper_energy_edge() {
    let p = pr(3, 2, 6.0);
    let w = CountWindow::new((0.05, 0.2), (-3.4, -2.9), &p).unwrap();
    for &m in &[0.06, 0.1, 0.19] {
        let (_, hi) = w.e_tilde(m, &p);
        assert!((y_opt(&w, m, &p) - hi).abs() < 1e-12);
    }
}

#[test]
fn rate_from_terms() {
    let p = pr(3, 2, 6.0);
    let w = CountWindow::new((0.6, 0.85), (-3.3, -3.0), &p).unwrap();
    let sd = saddle(&w, &p);
    let t = term_integrals(&w, 400, &p).unwrap().total();
    assert!(t > 0.0);
    assert!((t.ln() / 400.0 - sd.rate).abs() < 0.05, "{} {}", t.ln() / 400.0, sd.rate);
}

#[test]
fn constant_c_is_one_above_lambda2() {
    for &(p, k) in &[(3u32, 1u32), (3, 2), (3, 3), (4, 3)] {
        let l2 = lambda2::<f64>(p, k).unwrap();
        for &lam in &[1.01 * l2, 10.0, 100.0] {
            let c = constant_c(&pr(p, k, lam)).unwrap();
            assert!(c.c > 0.0);
            assert!((c.c - 1.0).abs() < 1e-8, "({p},{k},{lam}) {c:?}");
            assert!(c.j_verified);
        }
        assert!(constant_c(&pr(p, k, 0.9 * l2)).is_err());
    }
}

#[test]
fn unsquared_reading_breaks_the_limit() {
    // With (1 - m*) in place of (1 - m*^2) the value does not tend to 1.
    // (sqrt(y* - 2) is not even real for y* < 0, so only the first misprint is testable.)
    use spiked_landscape::scalar_core::{g_and_g2, h_edge, s_tilde_partials};
    let p = pr(3, 2, 1000.0);
    let g = gse_predict(&p).unwrap();
    let (m, y) = (g.m_star, g.y_star);
    let (_, g2) = g_and_g2(m, &p).unwrap();
    let d = s_tilde_partials(m, y, &p).unwrap();
    let pf = 3.0f64;
    let num = 2f64.sqrt() * (pf.sqrt() * (1.0 - m).powf(-1.5) - 1000.0 * 1.0) * h_edge(y).unwrap();
    let den = pf * ((y * y - 2.0).sqrt() - y) * (d.dyy * g2).abs().sqrt();
    assert!((num / den - 1.0).abs() > 0.05);
}

#[test]
fn sharp_decays_off_ground_state() {
    let p = pr(3, 2, 6.0);
    let w = CountWindow::new((0.7, 0.9), (-3.2, -2.9), &p).unwrap();
    let sd = saddle(&w, &p);
    assert!(sd.rate < 0.0);
    if sd.interior {
        let a = sharp_asymptotic(&w, 100, &p).unwrap();
        let b = sharp_asymptotic(&w, 400, &p).unwrap();
        assert!(b < a);
    }
}
