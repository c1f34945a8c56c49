//! Monte Carlo checks for the random-matrix lemmas: GOE sampling,
//! expected determinants, the Fourier-integral identity, Plancherel-Rotach
//! error curves and the conditional Hessian law.
//!
//! Randomness is organised in chunks of [`CHUNK`] samples; chunk `c` draws
//! from the ChaCha8 substream `(seed, c)`. Results therefore do not depend
//! on the number of rayon workers.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen, SymmetricTridiagonal};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::quad::{integrate, QuadOptions};
use crate::scalar_core::{hermite_phi_log, pr_asymptotic_log, pr_shifted_log};
use crate::ModelParams;

/// Samples per RNG substream.
pub const CHUNK: usize = 4096;

/// Size, seed and sample count of a GOE experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GoeSpec {
    pub n: usize,
    pub seed: u64,
    pub samples: usize,
}

impl GoeSpec {
    pub fn new(n: usize, seed: u64, samples: usize) -> Self {
        Self { n, seed, samples }
    }

    fn chunks(&self) -> usize {
        self.samples.div_ceil(CHUNK)
    }

    fn chunk_len(&self, c: usize) -> usize {
        CHUNK.min(self.samples - c * CHUNK)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl McEstimate {
    /// Deviation from `exact` in units of the standard error.
    pub fn z_score(&self, exact: f64) -> f64 {
        let d = (self.mean - exact).abs();
        if d == 0.0 {
            0.0
        } else {
            d / self.stderr
        }
    }

    /// `|mean - exact| <= k stderr`, with a `1e-12 (1 + |exact|)` floor for
    /// estimators whose samples are all identical.
    pub fn agrees(&self, exact: f64, k: f64) -> bool {
        (self.mean - exact).abs() <= k * self.stderr + 1e-12 * (1.0 + exact.abs())
    }
}

/// Running mean and sum of squared deviations (Welford), mergeable.
#[derive(Debug, Clone, Copy, Default)]
pub struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(self, other: Self) -> Self {
        if self.n == 0 {
            return other;
        }
        if other.n == 0 {
            return self;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        let w = other.n as f64 / n as f64;
        Self {
            n,
            mean: self.mean + d * w,
            m2: self.m2 + other.m2 + d * d * self.n as f64 * w,
        }
    }

    pub fn estimate(&self) -> McEstimate {
        let var = if self.n > 1 { self.m2 / (self.n - 1) as f64 } else { f64::NAN };
        McEstimate { mean: self.mean, stderr: (var / self.n as f64).sqrt(), samples: self.n }
    }
}

/// Ordered pairwise reduction, so the result does not depend on scheduling.
pub(crate) fn pairwise<T: Copy, F: Fn(T, T) -> T + Copy>(xs: &[T], zero: T, f: F) -> T {
    match xs.len() {
        0 => zero,
        1 => xs[0],
        n => {
            let (a, b) = xs.split_at(n / 2);
            f(pairwise(a, zero, f), pairwise(b, zero, f))
        }
    }
}

/// ChaCha8 generator for substream `stream` of `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Overwrite `w` with a GOE draw: off-diagonal variance `1/n`, diagonal `2/n`.
pub fn fill_goe<R: rand::Rng + ?Sized>(w: &mut DMatrix<f64>, rng: &mut R) {
    let n = w.nrows();
    let sd = (1.0 / n as f64).sqrt();
    for j in 0..n {
        let z: f64 = StandardNormal.sample(rng);
        w[(j, j)] = std::f64::consts::SQRT_2 * sd * z;
        for i in 0..j {
            let z: f64 = StandardNormal.sample(rng);
            w[(i, j)] = sd * z;
            w[(j, i)] = sd * z;
        }
    }
}

/// Reproducible stream of GOE matrices.
pub struct GoeStream {
    spec: GoeSpec,
    index: usize,
    rng: ChaCha8Rng,
}

impl Iterator for GoeStream {
    type Item = DMatrix<f64>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.index >= self.spec.samples {
            return None;
        }
        if self.index % CHUNK == 0 {
            self.rng = substream(self.spec.seed, (self.index / CHUNK) as u64);
        }
        self.index += 1;
        let mut w = DMatrix::zeros(self.spec.n, self.spec.n);
        fill_goe(&mut w, &mut self.rng);
        Some(w)
    }
}

pub fn sample_goe(spec: GoeSpec) -> Result<GoeStream> {
    if spec.n == 0 {
        return Err(Error::Domain("GOE size must be positive".into()));
    }
    Ok(GoeStream { spec, index: 0, rng: substream(spec.seed, 0) })
}

/// Diagonal and squared off-diagonal of a tridiagonal form of `w` whose
/// orthogonal change of basis fixes `e_1`.
fn tridiagonal(w: DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = w.nrows();
    if n == 1 {
        return (vec![w[(0, 0)]], Vec::new());
    }
    let (d, b) = SymmetricTridiagonal::new(w).unpack_tridiagonal();
    (d.iter().copied().collect(), b.iter().map(|x| x * x).collect())
}

/// `det(s T - theta e_1 e_1^T - y I)` for `s = +-1` from a tridiagonal form.
fn tridiagonal_det(d: &[f64], b2: &[f64], s: f64, theta: f64, y: f64) -> f64 {
    let n = d.len();
    // trailing continuants D_i = det of rows/cols i..n, with rescaling
    let (mut d_next, mut d_cur) = (1.0, s * d[n - 1] - y);
    let mut log_scale = 0.0;
    for i in (0..n - 1).rev() {
        let v = (s * d[i] - y) * d_cur - b2[i] * d_next;
        d_next = d_cur;
        d_cur = v;
        if i > 0 && d_cur.abs() > 1e150 {
            d_next *= 1e-150;
            d_cur *= 1e-150;
            log_scale += 150.0;
        }
    }
    // d_cur = D_0, d_next = D_1
    let det = d_cur - theta * d_next;
    if log_scale == 0.0 {
        det
    } else {
        det * 10f64.powf(log_scale)
    }
}

/// Monte Carlo estimate of `E det(W_n - theta e e^T - y I)`.
pub fn mc_expected_det(spec: GoeSpec, theta: f64, y: f64) -> Result<McEstimate> {
    Ok(mc_expected_det_grid(spec, &[(theta, y)])?[0])
}

/// [`mc_expected_det`] for several `(theta, y)` pairs from one set of draws.
///
/// Each draw is tridiagonalised once; the rank-one direction is `e_1`,
/// which has the same law as any other coordinate axis. For odd `n` and
/// `theta = 0` the sample is the antithetic average over `W` and `-W`.
pub fn mc_expected_det_grid(spec: GoeSpec, pairs: &[(f64, f64)]) -> Result<Vec<McEstimate>> {
    if spec.n == 0 {
        return Err(Error::Domain("GOE size must be positive".into()));
    }
    if spec.samples < 2 {
        return Err(Error::Domain("need at least 2 samples".into()));
    }
    let odd = spec.n % 2 == 1;
    let per_chunk: Vec<Vec<Welford>> = (0..spec.chunks())
        .into_par_iter()
        .map(|c| {
            let mut rng = substream(spec.seed, c as u64);
            let mut acc = vec![Welford::default(); pairs.len()];
            let mut w = DMatrix::zeros(spec.n, spec.n);
            for _ in 0..spec.chunk_len(c) {
                fill_goe(&mut w, &mut rng);
                let (d, b2) = tridiagonal(w.clone());
                for (a, &(theta, y)) in acc.iter_mut().zip(pairs) {
                    let v = tridiagonal_det(&d, &b2, 1.0, theta, y);
                    if odd && theta == 0.0 {
                        a.push(0.5 * (v + tridiagonal_det(&d, &b2, -1.0, 0.0, y)));
                    } else {
                        a.push(v);
                    }
                }
            }
            acc
        })
        .collect();
    Ok((0..pairs.len())
        .map(|j| {
            let col: Vec<Welford> = per_chunk.iter().map(|a| a[j]).collect();
            pairwise(&col, Welford::default(), Welford::merge).estimate()
        })
        .collect())
}

/// Result of [`char_integral_det`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CharIntegral {
    pub value: f64,
    /// Imaginary part relative to the L1 size of the assembled integral.
    pub imag_residual: f64,
    pub half_width: f64,
}

const CHAR_EPS: f64 = 1e-14;
const CHAR_IMAG_TOL: f64 = 1e-8;

/// `E det(W_n - f e e^T + s I)` from the one-dimensional Fourier integral.
///
/// The oscillating factor is absorbed by moving the contour to
/// `Im u = sqrt(n/2) s`; the integral runs over `[-L, L]` with
/// `L = sqrt(2 log(1/eps)) + 2 sqrt(n) |s| + sqrt(2n)`.
pub fn char_integral_det(n: u32, f: f64, s: f64) -> Result<CharIntegral> {
    if !(1..=40).contains(&n) {
        return Err(Error::Domain(format!("char_integral_det needs 1 <= n <= 40, got {n}")));
    }
    let nf = f64::from(n);
    // the identity is stated for off-diagonal variance 1/(2n)
    let (f2, s2) = (f / std::f64::consts::SQRT_2, s / std::f64::consts::SQRT_2);
    let c = nf.sqrt() * s2;
    let g = |u: f64| {
        let z = Complex64::new(u, c);
        let zn1 = z.powu(n - 1);
        (-u * u).exp() * (zn1 * z - Complex64::new(0.0, nf.sqrt() * f2) * zn1)
    };
    let half_width = (2.0 * (1.0 / CHAR_EPS).ln()).sqrt() + 2.0 * nf.sqrt() * s.abs() + (2.0 * nf).sqrt();
    let l1 = integrate(|u| g(u).norm(), -half_width, half_width, QuadOptions::rel(1e-6).pieces(8))?.value;
    let opts = QuadOptions::rel(1e-13).pieces(8).abs(1e-15 * l1);
    let re = integrate(|u| g(u).re, -half_width, half_width, opts)?.value;
    let im = integrate(|u| g(u).im, -half_width, half_width, opts)?.value;
    let pref = Complex64::new(0.0, -1.0 / nf.sqrt()).powu(n) * (2f64.powf(0.5 * nf) / PI.sqrt());
    let v = pref * Complex64::new(re, im);
    let scale = pref.norm() * l1;
    let imag_residual = v.im.abs() / scale.max(f64::MIN_POSITIVE);
    if imag_residual > CHAR_IMAG_TOL {
        return Err(Error::ImaginaryResidual { imag: imag_residual, tol: CHAR_IMAG_TOL });
    }
    Ok(CharIntegral { value: v.re, imag_residual, half_width })
}

fn check_pr_args(x: f64, ns: &[u32]) -> Result<()> {
    if !(x < -std::f64::consts::SQRT_2 - 0.05) {
        return Err(Error::Domain(format!("x = {x} must be below -sqrt2 - 0.05")));
    }
    if let Some(n) = ns.iter().find(|&&n| n < 10) {
        return Err(Error::Domain(format!("n = {n} below 10")));
    }
    Ok(())
}

fn log_ratio_error(direct: (i8, f64), approx: (i8, f64)) -> f64 {
    let r = (direct.1 - approx.1).exp();
    if direct.0 == approx.0 {
        (r - 1.0).abs()
    } else {
        r + 1.0
    }
}

/// Relative error of the Plancherel-Rotach asymptote of `phi_n(sqrt(n) x)`.
pub fn pr_error_curve(x: f64, ns: &[u32]) -> Result<Vec<(u32, f64)>> {
    check_pr_args(x, ns)?;
    ns.iter()
        .map(|&n| {
            let direct = hermite_phi_log(n, f64::from(n).sqrt() * x);
            Ok((n, log_ratio_error(direct, pr_asymptotic_log(n, x)?)))
        })
        .collect()
}

/// Same for the shifted form `phi_{n-1}(sqrt(n) y)`.
pub fn pr_shifted_error_curve(y: f64, ns: &[u32]) -> Result<Vec<(u32, f64)>> {
    check_pr_args(y, ns)?;
    ns.iter()
        .map(|&n| {
            let direct = hermite_phi_log(n - 1, f64::from(n).sqrt() * y);
            Ok((n, log_ratio_error(direct, pr_shifted_log(n, y)?)))
        })
        .collect()
}

fn check_conditional(m: f64, n_dim: usize, spec: &GoeSpec) -> Result<()> {
    if n_dim < 2 {
        return Err(Error::Domain("N must be at least 2".into()));
    }
    if !(m.abs() < 1.0) {
        return Err(Error::Domain(format!("latitude {m} must satisfy |m| < 1")));
    }
    if spec.n != n_dim - 1 {
        return Err(Error::Domain(format!("GOE size {} must equal N - 1 = {}", spec.n, n_dim - 1)));
    }
    Ok(())
}

/// Coefficients `(a, b, c)` of the law `a W_{N-1} - b e e^T + c I`.
fn conditional_coefficients(m: f64, x: f64, n_dim: usize, params: &ModelParams) -> (f64, f64, f64) {
    let nf = n_dim as f64;
    let p = f64::from(params.p());
    let k = params.k();
    let kf = f64::from(k);
    let lam = params.lambda();
    let a = ((nf - 1.0) * p * (p - 1.0)).sqrt();
    let b = if k == 1 {
        0.0
    } else {
        lam * nf.sqrt() * (kf - 1.0) * m.powi(k as i32 - 2) * (1.0 - m * m)
    };
    let c = nf.sqrt() * (-p * x + (1.0 - p / kf) * lam * m.powi(k as i32));
    (a, b, c)
}

/// Mean of the Hessian conditioned on `grad f = 0`, `f = sqrt(N) x`, at latitude `m`.
pub fn conditional_hessian_mean(m: f64, x: f64, n_dim: usize, params: &ModelParams) -> DMatrix<f64> {
    let (_, b, c) = conditional_coefficients(m, x, n_dim, params);
    let mut h = DMatrix::identity(n_dim - 1, n_dim - 1) * c;
    h[(n_dim - 2, n_dim - 2)] -= b;
    h
}

/// Stream of conditional Hessians; the spike direction is `e_{N-1}`.
pub struct ConditionalHessianStream {
    goe: GoeStream,
    coef: (f64, f64, f64),
}

impl Iterator for ConditionalHessianStream {
    type Item = DMatrix<f64>;

    fn next(&mut self) -> Option<Self::Item> {
        let (a, b, c) = self.coef;
        let mut h = self.goe.next()? * a;
        let n = h.nrows();
        for i in 0..n {
            h[(i, i)] += c;
        }
        h[(n - 1, n - 1)] -= b;
        Some(h)
    }
}

pub fn sample_conditional_hessian(
    m: f64,
    x: f64,
    n_dim: usize,
    params: &ModelParams,
    spec: GoeSpec,
) -> Result<ConditionalHessianStream> {
    check_conditional(m, n_dim, &spec)?;
    Ok(ConditionalHessianStream { goe: sample_goe(spec)?, coef: conditional_coefficients(m, x, n_dim, params) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EdgeCheck {
    /// Predicted bottom of the rescaled spectrum (`-2`, or the outlier).
    pub predicted_edge: f64,
    pub mean_min_eigenvalue: f64,
    /// Fraction of samples whose rescaled minimum lies below `edge - margin`.
    pub fraction_below: f64,
}

/// Smallest eigenvalue of `(H - c I) / a` against the semicircle edge,
/// or the rank-one outlier `-(t + 1/t)` when the spike strength `t` exceeds 1.
pub fn conditional_edge_check(
    m: f64,
    x: f64,
    n_dim: usize,
    params: &ModelParams,
    spec: GoeSpec,
    margin: f64,
) -> Result<EdgeCheck> {
    check_conditional(m, n_dim, &spec)?;
    let (a, b, c) = conditional_coefficients(m, x, n_dim, params);
    // rescaled spike strength; the GOE here has variance 1/(N-1)
    let t = b / a;
    let predicted_edge = if t > 1.0 { -(t + 1.0 / t) } else { -2.0 };
    let mins: Vec<(f64, usize)> = (0..spec.chunks())
        .into_par_iter()
        .map(|ch| {
            let mut rng = substream(spec.seed, ch as u64);
            let mut w = DMatrix::zeros(spec.n, spec.n);
            let (mut sum, mut below) = (0.0, 0);
            for _ in 0..spec.chunk_len(ch) {
                fill_goe(&mut w, &mut rng);
                let mut h = &w * a;
                for i in 0..spec.n {
                    h[(i, i)] += c;
                }
                h[(spec.n - 1, spec.n - 1)] -= b;
                h.iter_mut().for_each(|v| *v = *v / a);
                for i in 0..spec.n {
                    h[(i, i)] -= c / a;
                }
                let ev = SymmetricEigen::new(h).eigenvalues.min();
                sum += ev;
                if ev < predicted_edge - margin {
                    below += 1;
                }
            }
            (sum, below)
        })
        .collect();
    let total: f64 = mins.iter().map(|v| v.0).sum();
    let below: usize = mins.iter().map(|v| v.1).sum();
    Ok(EdgeCheck {
        predicted_edge,
        mean_min_eigenvalue: total / spec.samples as f64,
        fraction_below: below as f64 / spec.samples as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kac_rice::expected_det_rank1;

    #[test]
    fn continuant_matches_dense_determinant() {
        let mut rng = substream(3, 0);
        for n in 1..=9 {
            let mut w = DMatrix::zeros(n, n);
            fill_goe(&mut w, &mut rng);
            let (d, b2) = tridiagonal(w.clone());
            for &(theta, y) in &[(0.0, 1.3), (0.7, -0.4), (2.0, 2.2)] {
                let mut a = w.clone();
                a[(0, 0)] -= theta;
                for i in 0..n {
                    a[(i, i)] -= y;
                }
                let dense = a.determinant();
                let tri = tridiagonal_det(&d, &b2, 1.0, theta, y);
                assert!((dense - tri).abs() < 1e-10 * (1.0 + dense.abs()), "{n} {dense} {tri}");
                let neg = (-w.clone() - DMatrix::identity(n, n) * y).determinant();
                assert!((neg - tridiagonal_det(&d, &b2, -1.0, 0.0, y)).abs() < 1e-10 * (1.0 + neg.abs()));
            }
        }
    }

    #[test]
    fn continuant_rescaling() {
        let d = vec![1e5; 40];
        let v = tridiagonal_det(&d, &vec![0.0; 39], 1.0, 0.0, 0.0);
        assert!((v.log10() - 200.0).abs() < 1e-9);
    }

    #[test]
    fn welford_merge_is_exact() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64).sin() * 3.0 + 1.0).collect();
        let mut all = Welford::default();
        xs.iter().for_each(|&x| all.push(x));
        let mut a = Welford::default();
        let mut b = Welford::default();
        xs[..37].iter().for_each(|&x| a.push(x));
        xs[37..].iter().for_each(|&x| b.push(x));
        let m = a.merge(b).estimate();
        let e = all.estimate();
        assert!((m.mean - e.mean).abs() < 1e-14);
        assert!((m.stderr - e.stderr).abs() < 1e-14);
    }

    #[test]
    fn n1_diagonal_variance_is_two() {
        let mut w = Welford::default();
        for m in sample_goe(GoeSpec::new(1, 9, 100_000)).unwrap() {
            w.push(m[(0, 0)] * m[(0, 0)]);
        }
        assert!(w.estimate().agrees(2.0, 3.0), "{:?}", w.estimate());
    }

    #[test]
    fn stream_is_reproducible() {
        let a: Vec<_> = sample_goe(GoeSpec::new(4, 11, 5000)).unwrap().collect();
        let b: Vec<_> = sample_goe(GoeSpec::new(4, 11, 5000)).unwrap().collect();
        assert_eq!(a, b);
        let c: Vec<_> = sample_goe(GoeSpec::new(4, 12, 10)).unwrap().collect();
        assert_ne!(a[..10], c[..]);
    }

    #[test]
    fn char_integral_small_cases() {
        assert!((char_integral_det(2, 0.0, 0.0).unwrap().value + 0.5).abs() < 1e-12);
        let v = char_integral_det(3, 0.5, 1.0).unwrap().value;
        let e = expected_det_rank1(3, 0.5, -1.0).value();
        assert!((v - e).abs() < 1e-8 * (1.0 + e.abs()), "{v} {e}");
        assert!(char_integral_det(41, 0.0, 0.0).is_err());
    }

    #[test]
    fn pr_argument_checks() {
        assert!(pr_error_curve(-1.43, &[50]).is_err());
        assert!(pr_error_curve(-2.0, &[5]).is_err());
        let a = pr_error_curve(-2.0, &[60, 60]).unwrap();
        assert_eq!(a[0], a[1]);
    }

    #[test]
    fn conditional_mean_shape() {
        let p = ModelParams::new(3, 2, 0.0).unwrap();
        let h = conditional_hessian_mean(0.4, -1.5, 5, &p);
        assert_eq!(h, DMatrix::identity(4, 4) * (5f64.sqrt() * 4.5));
        let p = ModelParams::new(3, 2, 6.0).unwrap();
        let h = conditional_hessian_mean(0.4, -1.5, 5, &p);
        let gap = h[(0, 0)] - h[(3, 3)];
        assert!((gap - 6.0 * 5f64.sqrt() * (1.0 - 0.16)).abs() < 1e-12);
        assert!(sample_conditional_hessian(0.4, -1.5, 5, &p, GoeSpec::new(3, 0, 10)).is_err());
    }
}
