use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use spiked_landscape::kac_rice::{expected_euler_char, CountWindow};
use spiked_landscape::landscape_sim::*;
use spiked_landscape::thresholds_gse::gse_predict;
use spiked_landscape::ModelParams;

fn pr(p: u32, k: u32, l: f64) -> ModelParams {
    ModelParams::new(p, k, l).unwrap()
}

fn sphere_point(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let x = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
    x.normalize() * (n as f64).sqrt()
}

fn tangent(sigma: &DVector<f64>, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let x: DVector<f64> = DVector::from_fn(sigma.len(), |_, _| StandardNormal.sample(rng));
    let t = &x - sigma * (x.dot(sigma) / sigma.norm_squared());
    t.normalize()
}

/// Point at arc length `t` along the great circle through `sigma` with unit tangent `u`.
fn geodesic(sigma: &DVector<f64>, u: &DVector<f64>, t: f64) -> DVector<f64> {
    let r = sigma.norm();
    sigma * (t / r).cos() + u * (r * (t / r).sin())
}

#[test]
fn gradient_is_tangent() {
    let inst = sample_instance(7, &pr(3, 2, 4.0), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let s = sphere_point(7, &mut rng);
        let g = inst.grad_sphere(&s).unwrap();
        assert!(g.dot(&s).abs() < 1e-8 * (1.0 + g.norm() * s.norm()));
    }
}

#[test]
fn finite_differences_match_derivatives() {
    for &(p, k, lam) in &[(3u32, 2u32, 4.0), (4, 3, 2.0), (3, 1, 1.5), (5, 4, 3.0)] {
        let inst = sample_instance(6, &pr(p, k, lam), 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(u64::from(p * 10 + k));
        let s = sphere_point(6, &mut rng);
        let g = inst.grad_sphere(&s).unwrap();
        let h = inst.hess_sphere(&s).unwrap();
        assert!((&h - h.transpose()).norm() < 1e-12 * h.norm());
        let step = 1e-5;
        for _ in 0..5 {
            let u = tangent(&s, &mut rng);
            let f = |t: f64| inst.eval_h(&geodesic(&s, &u, t)).unwrap();
            let (fp, f0, fm) = (f(step), f(0.0), f(-step));
            let d1 = (fp - fm) / (2.0 * step);
            let d2 = (fp - 2.0 * f0 + fm) / (step * step);
            let a1 = g.dot(&u);
            let a2 = (u.transpose() * &h * &u)[0];
            let sc = 1.0 + g.norm();
            assert!((d1 - a1).abs() < 1e-5 * sc, "grad ({p},{k}) {d1} {a1}");
            // second differences lose ~eps |f| / step^2
            let hs = 1.0 + h.norm() + f0.abs() * 1e-6;
            assert!((d2 - a2).abs() < 1e-4 * hs, "hess ({p},{k}) {d2} {a2}");
            // gradient change along the geodesic
            let gp = inst.grad_sphere(&geodesic(&s, &u, step)).unwrap();
            let gm = inst.grad_sphere(&geodesic(&s, &u, -step)).unwrap();
            let dg = ((gp - gm) / (2.0 * step)).dot(&u);
            assert!((dg - a2).abs() < 1e-5 * (1.0 + a2.abs()), "dg ({p},{k}) {dg} {a2}");
        }
    }
}

#[test]
fn noise_parity_without_spike() {
    for p in [3u32, 4, 5] {
        let inst = sample_instance(5, &pr(p, 2, 0.0), 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = sphere_point(5, &mut rng);
        let a = inst.eval_h(&s).unwrap();
        let b = inst.eval_h(&(-&s)).unwrap();
        let sign = if p % 2 == 0 { 1.0 } else { -1.0 };
        assert!((b - sign * a).abs() < 1e-12 * (1.0 + a.abs()));
    }
}

#[test]
fn same_seed_same_instance() {
    let a = sample_instance(4, &pr(3, 2, 2.0), 99).unwrap();
    let b = sample_instance(4, &pr(3, 2, 2.0), 99).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let s = sphere_point(4, &mut rng);
        assert_eq!(a.eval_h(&s).unwrap(), b.eval_h(&s).unwrap());
    }
    assert_eq!(a.couplings(), b.couplings());
}

#[test]
fn value_at_spike() {
    // sigma = sqrt(N) v: spike term -lambda N / k, and no spike gradient
    let (n, lam) = (5usize, 3.0);
    let inst = sample_instance(n, &pr(3, 2, lam), 4).unwrap();
    let noise_only = sample_instance(n, &pr(3, 2, 0.0), 4).unwrap();
    let s = inst.spike_direction() * (n as f64).sqrt();
    let h = inst.eval_h(&s).unwrap();
    let h0 = noise_only.eval_h(&s).unwrap();
    assert!((h - (h0 - lam * n as f64 / 2.0)).abs() < 1e-12);
    let g = inst.grad_sphere(&s).unwrap();
    let g0 = noise_only.grad_sphere(&s).unwrap();
    assert!((g - g0).norm() < 1e-12);
}

#[test]
fn rescaled_field_matches() {
    let inst = sample_instance(6, &pr(4, 3, 2.2), 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let s = sphere_point(6, &mut rng);
        let unit = &s / 6f64.sqrt();
        let f = inst.eval_f(&unit).unwrap();
        let h = inst.eval_h(&s).unwrap() / 6f64.sqrt();
        assert!((f - h).abs() <= 1e-10 * f.abs().max(1e-3), "{f} {h}");
    }
}

#[test]
fn blob_roundtrip() {
    let inst = sample_instance(5, &pr(3, 2, 6.5), 123).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("inst.bin");
    inst.write_blob(&path).unwrap();
    let back = HamiltonianInstance::read_blob(&path).unwrap();
    assert_eq!(back.couplings(), inst.couplings());
    assert_eq!(back.seed(), 123);
    assert_eq!(back.params(), inst.params());
    let bytes = inst.to_blob().unwrap();
    assert_eq!(bytes.len(), 56 + 8 * 125);
    assert_eq!(&bytes[16..24], &5u64.to_le_bytes());
    assert!(HamiltonianInstance::from_blob(&bytes[..60]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(HamiltonianInstance::from_blob(&bad).is_err());
}

#[test]
fn census_invariants() {
    let w = CountWindow::unchecked((-0.999, 0.999), (-50.0, 50.0));
    for seed in 0..200 {
        for &(p, k, lam) in &[(3u32, 2u32, 6.0), (4, 3, 1.0), (3, 1, 0.0)] {
            let inst = sample_instance(2, &pr(p, k, lam), seed).unwrap();
            let c = census_n2(&inst, w, &CensusOptions { grid: 20_000, ..Default::default() }).unwrap();
            assert!(c.alternates(), "{seed} {c:?}");
            assert_eq!(c.full_signed_count(), 0);
            assert_eq!(c.degenerate(), 0);
            for pt in &c.points {
                let s = DVector::from_vec(vec![2f64.sqrt() * pt.angle.cos(), 2f64.sqrt() * pt.angle.sin()]);
                let g = inst.grad_sphere(&s).unwrap().norm();
                assert!(g < 1e-10 * (1.0 + lam), "{seed} ({p},{k}) {g} {pt:?}");
            }
        }
    }
}

#[test]
fn census_mean_matches_kac_rice_small() {
    // a reduced version of the acceptance cross-check
    let p = pr(3, 2, 6.0);
    let w = CountWindow::new((0.3, 0.99), (-4.0, -2.7), &p).unwrap();
    let exact = expected_euler_char(&w, 2, &p).unwrap();
    let est = census_mc(&p, w, 20_000, 5, &CensusOptions { grid: 20_000, ..Default::default() }).unwrap();
    assert!(est.agrees(exact, 3.0), "{est:?} {exact}");
}

#[test]
fn covariance_small_run() {
    let r = covariance_mc(4, &pr(3, 2, 2.0), 0.5, 20_000, 17).unwrap();
    assert_eq!(r.checks.len(), 1 + 1 + 3 + 3 + 6 + 6 + 18);
    assert!(r.worst().z() < 4.5, "{:?}", r.worst());
    assert!(r.exceedances(3.0) <= 3);
}

#[test]
fn gse_small_instance() {
    let p = pr(3, 2, 10.0);
    let g = gse_predict(&p).unwrap();
    let est = estimate_gse_batch(24, &p, 4, 20, 1).unwrap();
    let e: f64 = est.iter().map(|e| e.energy_per_site).sum::<f64>() / 4.0;
    let m: f64 = est.iter().map(|e| e.overlap).sum::<f64>() / 4.0;
    assert!((e - g.x_star).abs() < 0.1 * g.x_star.abs(), "{e}");
    assert!((m - g.m_star).abs() < 0.05, "{m}");
    for x in &est {
        assert!((-1.0..=1.0).contains(&x.overlap));
    }
}

#[test]
fn gse_descent_monotone_and_below_probe() {
    let p = pr(3, 2, 4.0);
    let inst = sample_instance(16, &p, 3).unwrap();
    let est = estimate_gse(&inst, 10, &StepRule::default(), None).unwrap();
    let s = inst.spike_direction() * 4.0;
    assert!(est.energy_per_site * 16.0 <= inst.eval_h(&s).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let probe = sphere_point(16, &mut rng);
    assert!(est.energy_per_site * 16.0 <= inst.eval_h(&probe).unwrap());
}

#[test]
fn index_profile_small() {
    let p = pr(3, 2, 10.0);
    let g = gse_predict(&p).unwrap();
    let batch: Vec<_> = (0..5).map(|s| sample_instance(8, &p, s).unwrap()).collect();
    let prof = index_profile(&batch, (-100.0, g.x_star + 0.1), &IndexOptions { starts: 12, ..Default::default() }).unwrap();
    assert!(prof.in_window() > 0);
    assert!(prof.index0_fraction() >= 0.95, "{prof:?}");
    let all = index_profile(&batch, (-100.0, 100.0), &IndexOptions { starts: 12, ..Default::default() }).unwrap();
    assert!(all.histogram.iter().skip(1).sum::<usize>() > 0, "{all:?}");
}
