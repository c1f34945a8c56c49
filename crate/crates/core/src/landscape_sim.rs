//! Direct simulation of the spiked p-spin Hamiltonian
//!
//! `H_N(sigma) = -N^{-(p-1)/2} sum J_{i_1..i_p} sigma_{i_1}..sigma_{i_p} - (lambda N / k) (sigma . v_0 / N)^k`
//!
//! on the sphere `|sigma|^2 = N`, with `v_0 = sqrt(N) v` for a unit spike
//! direction `v`. The noise enters with a minus sign; its law is symmetric,
//! so this is the same model as with a plus sign. The rescaled field on the
//! unit sphere is `f(s) = H_N(sqrt(N) s) / sqrt(N)`.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kac_rice::CountWindow;
use crate::rmt_mc::{pairwise, substream, McEstimate, Welford, CHUNK};
use crate::ModelParams;

/// Default cap on the number of stored couplings.
pub const DEFAULT_BUDGET: u128 = 100_000_000;

const BLOB_MAGIC: &[u8; 8] = b"SPKDHAM\0";
const BLOB_VERSION: u64 = 1;

/// One draw of the couplings plus the spike direction.
#[derive(Debug, Clone)]
pub struct HamiltonianInstance {
    n: usize,
    params: ModelParams,
    seed: u64,
    couplings: Vec<f64>,
    spike: DVector<f64>,
    sym: Vec<f64>,
}

fn check_budget(n: usize, p: u32, cap: u128) -> Result<usize> {
    let entries = (n as u128).checked_pow(p).unwrap_or(u128::MAX);
    if entries > cap {
        return Err(Error::Budget { entries, cap });
    }
    Ok(entries as usize)
}

/// Sample with the default coupling budget.
pub fn sample_instance(n: usize, params: &ModelParams, seed: u64) -> Result<HamiltonianInstance> {
    sample_instance_with_budget(n, params, seed, DEFAULT_BUDGET)
}

pub fn sample_instance_with_budget(
    n: usize,
    params: &ModelParams,
    seed: u64,
    cap: u128,
) -> Result<HamiltonianInstance> {
    if n < 2 {
        return Err(Error::Domain("N must be at least 2".into()));
    }
    check_budget(n, params.p(), cap)?;
    let mut rng = substream(seed, 0);
    Ok(HamiltonianInstance::from_rng(n, params, seed, &mut rng))
}

impl HamiltonianInstance {
    fn from_rng<R: Rng + ?Sized>(n: usize, params: &ModelParams, seed: u64, rng: &mut R) -> Self {
        let len = n.pow(params.p());
        let couplings: Vec<f64> = (0..len).map(|_| StandardNormal.sample(rng)).collect();
        let mut spike = DVector::zeros(n);
        spike[n - 1] = 1.0;
        Self::from_parts(n, *params, seed, couplings, spike)
    }

    fn from_parts(n: usize, params: ModelParams, seed: u64, couplings: Vec<f64>, spike: DVector<f64>) -> Self {
        let sym = symmetrize(&couplings, n, params.p() as usize);
        Self { n, params, seed, couplings, spike, sym }
    }

    /// Same couplings with a different unit spike direction.
    pub fn with_spike_direction(mut self, v: DVector<f64>) -> Result<Self> {
        if v.len() != self.n || (v.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::Domain("spike direction must be a unit vector of length N".into()));
        }
        self.spike = v;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Couplings as drawn, row-major in `(i_1, .., i_p)`.
    pub fn couplings(&self) -> &[f64] {
        &self.couplings
    }

    pub fn spike_direction(&self) -> &DVector<f64> {
        &self.spike
    }

    fn noise_scale(&self) -> f64 {
        -(self.n as f64).powf(-0.5 * (f64::from(self.params.p()) - 1.0))
    }

    fn check_sphere(&self, sigma: &DVector<f64>) -> Result<()> {
        let nf = self.n as f64;
        if sigma.len() != self.n {
            return Err(Error::Domain(format!("point has dimension {}, expected {}", sigma.len(), self.n)));
        }
        let r = sigma.norm_squared();
        if !((r - nf).abs() <= 1e-8 * nf) {
            return Err(Error::Domain(format!("|sigma|^2 = {r} is not N = {nf}")));
        }
        Ok(())
    }

    /// Overlap `sigma . v / sqrt(N)`, in `[-1, 1]` on the sphere.
    pub fn overlap(&self, sigma: &DVector<f64>) -> f64 {
        sigma.dot(&self.spike) / (self.n as f64).sqrt()
    }

    /// Value and Euclidean gradient, no sphere check.
    fn value_grad(&self, sigma: &DVector<f64>) -> (f64, DVector<f64>) {
        let p = f64::from(self.params.p());
        let k = self.params.k();
        let kf = f64::from(k);
        let lam = self.params.lambda();
        let nf = self.n as f64;
        let v = contract_to_vector(&self.sym, self.n, sigma);
        let c = self.noise_scale();
        let u = self.overlap(sigma);
        let value = c * sigma.dot(&v) - lam * nf / kf * u.powi(k as i32);
        let grad = v * (c * p) - &self.spike * (lam * nf.sqrt() * u.powi(k as i32 - 1));
        (value, grad)
    }

    fn euclidean_hessian(&self, sigma: &DVector<f64>) -> DMatrix<f64> {
        let p = self.params.p();
        let pf = f64::from(p);
        let k = self.params.k();
        let lam = self.params.lambda();
        let mut h = contract_to_matrix(&self.sym, self.n, sigma) * (self.noise_scale() * pf * (pf - 1.0));
        if k >= 2 {
            let u = self.overlap(sigma);
            let w = lam * f64::from(k - 1) * u.powi(k as i32 - 2);
            h -= &self.spike * self.spike.transpose() * w;
        }
        h
    }

    pub fn eval_h(&self, sigma: &DVector<f64>) -> Result<f64> {
        self.check_sphere(sigma)?;
        Ok(self.value_grad(sigma).0)
    }

    /// Riemannian gradient (tangent projection of the Euclidean one).
    pub fn grad_sphere(&self, sigma: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_sphere(sigma)?;
        Ok(project(sigma, self.value_grad(sigma).1))
    }

    /// Riemannian Hessian as an `N x N` operator: `P H P - (<g, sigma>/N) P`.
    pub fn hess_sphere(&self, sigma: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_sphere(sigma)?;
        let nf = self.n as f64;
        let g = self.value_grad(sigma).1;
        let proj = DMatrix::identity(self.n, self.n) - sigma * sigma.transpose() / nf;
        let h = self.euclidean_hessian(sigma);
        let out = &proj * h * &proj - &proj * (g.dot(sigma) / nf);
        Ok((&out + out.transpose()) * 0.5)
    }

    /// Riemannian Hessian in the orthonormal tangent basis of [`tangent_basis`].
    pub fn tangent_hessian(&self, sigma: &DVector<f64>) -> Result<DMatrix<f64>> {
        let q = tangent_basis(sigma);
        let h = self.hess_sphere(sigma)?;
        let t = q.transpose() * h * &q;
        Ok((&t + t.transpose()) * 0.5)
    }

    /// Rescaled field on the unit sphere, evaluated straight from the
    /// unsymmetrised couplings.
    pub fn eval_f(&self, s: &DVector<f64>) -> Result<f64> {
        if s.len() != self.n || (s.norm_squared() - 1.0).abs() > 1e-8 {
            return Err(Error::Domain("point must lie on the unit sphere".into()));
        }
        let p = self.params.p();
        let k = self.params.k();
        let mut noise = 0.0;
        let mut idx = vec![0usize; p as usize];
        for &j in &self.couplings {
            noise += j * idx.iter().map(|&i| s[i]).product::<f64>();
            increment(&mut idx, self.n);
        }
        let m = s.dot(&self.spike);
        let nf = self.n as f64;
        Ok(-noise - self.params.lambda() * nf.sqrt() * m.powi(k as i32) / f64::from(k))
    }

    /// Serialised form: magic, then version, N, p, k, lambda, seed as 8-byte
    /// little-endian fields, then the couplings as little-endian f64.
    pub fn to_blob(&self) -> Result<Vec<u8>> {
        let mut canonical = DVector::zeros(self.n);
        canonical[self.n - 1] = 1.0;
        if self.spike != canonical {
            return Err(Error::Blob("only instances with the spike on the last axis can be serialised".into()));
        }
        let mut out = Vec::with_capacity(56 + 8 * self.couplings.len());
        out.extend_from_slice(BLOB_MAGIC);
        out.extend_from_slice(&BLOB_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.n as u64).to_le_bytes());
        out.extend_from_slice(&u64::from(self.params.p()).to_le_bytes());
        out.extend_from_slice(&u64::from(self.params.k()).to_le_bytes());
        out.extend_from_slice(&self.params.lambda().to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        for c in &self.couplings {
            out.extend_from_slice(&c.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_blob(bytes: &[u8]) -> Result<Self> {
        let field = |i: usize| -> Result<[u8; 8]> {
            bytes
                .get(8 * i..8 * i + 8)
                .map(|s| s.try_into().expect("8 bytes"))
                .ok_or_else(|| Error::Blob("truncated header".into()))
        };
        if &field(0)? != BLOB_MAGIC {
            return Err(Error::Blob("bad magic".into()));
        }
        let version = u64::from_le_bytes(field(1)?);
        if version != BLOB_VERSION {
            return Err(Error::Blob(format!("unsupported version {version}")));
        }
        let n = u64::from_le_bytes(field(2)?) as usize;
        let p = u32::try_from(u64::from_le_bytes(field(3)?)).map_err(|_| Error::Blob("p out of range".into()))?;
        let k = u32::try_from(u64::from_le_bytes(field(4)?)).map_err(|_| Error::Blob("k out of range".into()))?;
        let lambda = f64::from_le_bytes(field(5)?);
        let seed = u64::from_le_bytes(field(6)?);
        let params = ModelParams::new(p, k, lambda)?;
        if n < 2 {
            return Err(Error::Blob(format!("N = {n} below 2")));
        }
        let len = check_budget(n, p, DEFAULT_BUDGET)?;
        let payload = &bytes[56..];
        if payload.len() != 8 * len {
            return Err(Error::Blob(format!("payload has {} bytes, expected {}", payload.len(), 8 * len)));
        }
        let couplings = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mut spike = DVector::zeros(n);
        spike[n - 1] = 1.0;
        Ok(Self::from_parts(n, params, seed, couplings, spike))
    }

    pub fn write_blob(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_blob()?)?;
        Ok(())
    }

    pub fn read_blob(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_blob(&buf)
    }
}

fn increment(idx: &mut [usize], n: usize) {
    for d in idx.iter_mut().rev() {
        *d += 1;
        if *d < n {
            return;
        }
        *d = 0;
    }
}

fn permutations(p: usize) -> Vec<Vec<usize>> {
    if p == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for rest in permutations(p - 1) {
        for pos in 0..p {
            let mut v = rest.clone();
            v.insert(pos, p - 1);
            out.push(v);
        }
    }
    out
}

/// Average of the tensor over all permutations of its `p` axes.
fn symmetrize(t: &[f64], n: usize, p: usize) -> Vec<f64> {
    let perms = permutations(p);
    let strides: Vec<usize> = (0..p).map(|a| n.pow((p - 1 - a) as u32)).collect();
    let mut out = vec![0.0; t.len()];
    let mut idx = vec![0usize; p];
    let w = 1.0 / perms.len() as f64;
    for o in out.iter_mut() {
        let mut s = 0.0;
        for perm in &perms {
            let flat: usize = perm.iter().zip(&strides).map(|(&a, &st)| idx[a] * st).sum();
            s += t[flat];
        }
        *o = s * w;
        increment(&mut idx, n);
    }
    out
}

fn contract_last(t: &[f64], n: usize, x: &DVector<f64>) -> Vec<f64> {
    t.chunks_exact(n).map(|row| row.iter().zip(x.iter()).map(|(a, b)| a * b).sum()).collect()
}

/// `S . x^{p-1}` for a symmetric order-`p` tensor.
fn contract_to_vector(t: &[f64], n: usize, x: &DVector<f64>) -> DVector<f64> {
    let mut cur = t.to_vec();
    while cur.len() > n {
        cur = contract_last(&cur, n, x);
    }
    DVector::from_vec(cur)
}

/// `S . x^{p-2}` as an `n x n` matrix.
fn contract_to_matrix(t: &[f64], n: usize, x: &DVector<f64>) -> DMatrix<f64> {
    let mut cur = t.to_vec();
    while cur.len() > n * n {
        cur = contract_last(&cur, n, x);
    }
    DMatrix::from_row_slice(n, n, &cur)
}

fn project(sigma: &DVector<f64>, g: DVector<f64>) -> DVector<f64> {
    let c = g.dot(sigma) / sigma.norm_squared();
    g - sigma * c
}

fn retract(x: DVector<f64>, n: usize) -> DVector<f64> {
    let r = (n as f64).sqrt() / x.norm();
    x * r
}

/// Orthonormal basis (as columns) of the tangent space at `sigma`, from
/// the Householder reflection sending `sigma` to a multiple of `e_N`.
/// At `sigma = c e_N` with `c > 0` it is `e_1, .., e_{N-1}`.
pub fn tangent_basis(sigma: &DVector<f64>) -> DMatrix<f64> {
    let n = sigma.len();
    let s = sigma / sigma.norm();
    let sign = if s[n - 1] >= 0.0 { 1.0 } else { -1.0 };
    let mut w = s.clone();
    w[n - 1] += sign;
    let h = DMatrix::identity(n, n) - &w * w.transpose() * (2.0 / w.norm_squared());
    h.columns(0, n - 1).into_owned()
}

fn random_point<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    let x = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
    retract(x, n)
}

// ---------------------------------------------------------------------------
// Covariance checks at a fixed point

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentCheck {
    pub name: String,
    pub expected: f64,
    pub estimate: f64,
    pub stderr: f64,
}

impl MomentCheck {
    pub fn z(&self) -> f64 {
        let d = (self.estimate - self.expected).abs();
        if d == 0.0 {
            0.0
        } else {
            d / self.stderr
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovarianceReport {
    pub n: usize,
    pub p: u32,
    pub k: u32,
    pub lambda: f64,
    pub m: f64,
    pub samples: usize,
    pub checks: Vec<MomentCheck>,
}

impl CovarianceReport {
    pub fn worst(&self) -> &MomentCheck {
        self.checks.iter().max_by(|a, b| a.z().total_cmp(&b.z())).expect("nonempty")
    }

    pub fn exceedances(&self, k: f64) -> usize {
        self.checks.iter().filter(|c| c.z() > k).count()
    }
}

struct Moments<'a> {
    data: &'a [f64],
    width: usize,
    mean: Vec<f64>,
}

impl Moments<'_> {
    fn rows(&self) -> usize {
        self.data.len() / self.width
    }

    fn mean_check(&self, name: String, i: usize, expected: f64) -> MomentCheck {
        let mut w = Welford::default();
        for r in self.data.chunks_exact(self.width) {
            w.push(r[i]);
        }
        let e = w.estimate();
        MomentCheck { name, expected, estimate: e.mean, stderr: e.stderr }
    }

    /// Sample covariance with the standard error of the mean of centred products.
    fn cov_check(&self, name: String, i: usize, j: usize, expected: f64) -> MomentCheck {
        let mut w = Welford::default();
        for r in self.data.chunks_exact(self.width) {
            w.push((r[i] - self.mean[i]) * (r[j] - self.mean[j]));
        }
        let e = w.estimate();
        let n = self.rows() as f64;
        MomentCheck { name, expected, estimate: e.mean * n / (n - 1.0), stderr: e.stderr }
    }
}

/// Moments of `f`, its gradient and Hessian at `sigma = e_N` (unit sphere)
/// with spike direction `m e_N + sqrt(1 - m^2) e_{N-1}`, over fresh couplings.
pub fn covariance_mc(n: usize, params: &ModelParams, m: f64, samples: usize, seed: u64) -> Result<CovarianceReport> {
    if n < 3 {
        return Err(Error::Domain("covariance checks need N >= 3".into()));
    }
    if samples < 2 {
        return Err(Error::Domain("need at least 2 samples".into()));
    }
    if !(m.abs() < 1.0) {
        return Err(Error::Domain(format!("latitude {m} must satisfy |m| < 1")));
    }
    check_budget(n, params.p(), DEFAULT_BUDGET)?;
    let t = n - 1;
    let hess_pairs: Vec<(usize, usize)> = (0..t).flat_map(|i| (i..t).map(move |j| (i, j))).collect();
    let width = 1 + t + hess_pairs.len();
    let nf = n as f64;
    let mut spike = DVector::zeros(n);
    spike[n - 1] = m;
    spike[n - 2] = (1.0 - m * m).sqrt();
    let mut sigma = DVector::zeros(n);
    sigma[n - 1] = nf.sqrt();
    let chunks = samples.div_ceil(CHUNK);
    let rows: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = substream(seed, c as u64);
            let len = CHUNK.min(samples - c * CHUNK);
            let mut out = Vec::with_capacity(len * width);
            for _ in 0..len {
                let inst = HamiltonianInstance::from_rng(n, params, seed, &mut rng)
                    .with_spike_direction(spike.clone())
                    .expect("unit spike");
                let (v, g) = inst.value_grad(&sigma);
                let g = project(&sigma, g);
                let h = inst.hess_sphere(&sigma).expect("on sphere") * nf.sqrt();
                out.push(v / nf.sqrt());
                out.extend(g.iter().take(t));
                out.extend(hess_pairs.iter().map(|&(i, j)| h[(i, j)]));
            }
            out
        })
        .collect();
    let data: Vec<f64> = rows.concat();
    let mut mean = vec![0.0; width];
    for r in data.chunks_exact(width) {
        for (a, b) in mean.iter_mut().zip(r) {
            *a += b;
        }
    }
    mean.iter_mut().for_each(|v| *v /= samples as f64);
    let mo = Moments { data: &data, width, mean };

    let p = f64::from(params.p());
    let k = params.k();
    let lam = params.lambda();
    let mut checks = Vec::new();
    checks.push(mo.mean_check("E f".into(), 0, -lam * nf.sqrt() * m.powi(k as i32) / f64::from(k)));
    checks.push(mo.cov_check("Var f".into(), 0, 0, 1.0));
    for i in 0..t {
        let e = if i == t - 1 { -nf.sqrt() * lam * m.powi(k as i32 - 1) * (1.0 - m * m).sqrt() } else { 0.0 };
        checks.push(mo.mean_check(format!("E grad_{}", i + 1), 1 + i, e));
    }
    for i in 0..t {
        checks.push(mo.cov_check(format!("Cov(f, grad_{})", i + 1), 0, 1 + i, 0.0));
        for j in i..t {
            let e = if i == j { p } else { 0.0 };
            checks.push(mo.cov_check(format!("Cov(grad_{}, grad_{})", i + 1, j + 1), 1 + i, 1 + j, e));
        }
    }
    for (h, &(a, b)) in hess_pairs.iter().enumerate() {
        let col = 1 + t + h;
        let e = if a == b { -p } else { 0.0 };
        checks.push(mo.cov_check(format!("Cov(hess_{}{}, f)", a + 1, b + 1), col, 0, e));
        for i in 0..t {
            checks.push(mo.cov_check(format!("Cov(hess_{}{}, grad_{})", a + 1, b + 1, i + 1), col, 1 + i, 0.0));
        }
    }
    Ok(CovarianceReport { n, p: params.p(), k, lambda: lam, m, samples, checks })
}

// ---------------------------------------------------------------------------
// Ground state search

/// Projected gradient settings: Barzilai-Borwein trial step, Armijo backtracking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRule {
    pub backtrack: f64,
    pub armijo: f64,
    pub max_iter: usize,
    pub max_backtracks: usize,
}

impl Default for StepRule {
    fn default() -> Self {
        Self { backtrack: 0.5, armijo: 1e-4, max_iter: 20_000, max_backtracks: 60 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Descent {
    pub point: Vec<f64>,
    pub energy: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Projected gradient descent from `start` until the tangent gradient norm
/// drops below `tol`. Accepted steps satisfy the Armijo condition up to
/// `4 eps |H|`, below which energy differences are rounding noise.
pub fn descend(inst: &HamiltonianInstance, start: DVector<f64>, rule: &StepRule, tol: f64) -> Descent {
    let n = inst.n;
    let mut x = retract(start, n);
    let (mut e, ge) = inst.value_grad(&x);
    let mut g = project(&x, ge);
    let mut alpha = 1.0 / g.norm().max(1.0);
    let mut prev: Option<(DVector<f64>, DVector<f64>)> = None;
    for it in 0..rule.max_iter {
        let gn = g.norm();
        if gn < tol {
            return Descent { point: x.iter().copied().collect(), energy: e, grad_norm: gn, iterations: it, converged: true };
        }
        if let Some((xp, gp)) = &prev {
            let s = &x - xp;
            let y = &g - gp;
            let sy = s.dot(&y);
            if sy > 0.0 {
                alpha = s.norm_squared() / sy;
            }
        }
        let slack = 4.0 * f64::EPSILON * e.abs();
        let mut accepted = None;
        let mut a = alpha;
        for _ in 0..rule.max_backtracks {
            let xn = retract(&x - &g * a, n);
            let (en, gen) = inst.value_grad(&xn);
            if en <= e - rule.armijo * a * gn * gn + slack {
                accepted = Some((xn, en, gen));
                break;
            }
            a *= rule.backtrack;
        }
        let Some((xn, en, gen)) = accepted else {
            return Descent { point: x.iter().copied().collect(), energy: e, grad_norm: gn, iterations: it, converged: false };
        };
        let gnew = project(&xn, gen);
        prev = Some((std::mem::replace(&mut x, xn), std::mem::replace(&mut g, gnew)));
        e = en;
        alpha = a;
    }
    let gn = g.norm();
    Descent { point: x.iter().copied().collect(), energy: e, grad_norm: gn, iterations: rule.max_iter, converged: gn < tol }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GseEstimate {
    /// `min H_N / N` over converged restarts.
    pub energy_per_site: f64,
    /// `sigma . v_0 / N` at the best minimum; absolute value for even `k`.
    pub overlap: f64,
    pub restarts: usize,
    pub best_seed_restart: usize,
    /// Restarts that hit the iteration cap and were discarded.
    pub discarded: usize,
}

/// Multi-start ground state search; restart `r` starts from substream `r + 1`
/// of the instance seed. `tol` defaults to `1e-8 sqrt(N)`.
pub fn estimate_gse(inst: &HamiltonianInstance, restarts: usize, rule: &StepRule, tol: Option<f64>) -> Result<GseEstimate> {
    if restarts == 0 {
        return Err(Error::Domain("need at least one restart".into()));
    }
    let n = inst.n;
    let tol = tol.unwrap_or(1e-8 * (n as f64).sqrt());
    let runs: Vec<Descent> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(inst.seed, r as u64 + 1);
            descend(inst, random_point(n, &mut rng), rule, tol)
        })
        .collect();
    let discarded = runs.iter().filter(|d| !d.converged).count();
    let (best, d) = runs
        .iter()
        .enumerate()
        .filter(|(_, d)| d.converged)
        .min_by(|a, b| a.1.energy.total_cmp(&b.1.energy))
        .ok_or_else(|| Error::NoSolution(format!("none of {restarts} restarts converged")))?;
    let x = DVector::from_column_slice(&d.point);
    let mut overlap = inst.overlap(&x);
    if inst.params.k() % 2 == 0 {
        overlap = overlap.abs();
    }
    Ok(GseEstimate {
        energy_per_site: d.energy / n as f64,
        overlap: overlap.clamp(-1.0, 1.0),
        restarts,
        best_seed_restart: best,
        discarded,
    })
}

/// [`estimate_gse`] over `instances` draws with seeds `seed, seed + 1, ..`.
pub fn estimate_gse_batch(
    n: usize,
    params: &ModelParams,
    instances: usize,
    restarts: usize,
    seed: u64,
) -> Result<Vec<GseEstimate>> {
    (0..instances)
        .map(|i| {
            let inst = sample_instance(n, params, seed.wrapping_add(i as u64))?;
            estimate_gse(&inst, restarts, &StepRule::default(), None)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// N = 2 census

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticalPoint {
    pub angle: f64,
    pub energy_density: f64,
    /// 0 for a local minimum, 1 for a local maximum.
    pub index: u8,
    pub overlap: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalCensus {
    /// Every critical point on the circle, by increasing angle.
    pub points: Vec<CriticalPoint>,
    pub window: CountWindow,
}

impl CriticalCensus {
    pub fn in_window(&self) -> impl Iterator<Item = &CriticalPoint> {
        self.points.iter().filter(|c| self.window.contains(c.overlap, c.energy_density))
    }

    /// `Crt_0 - Crt_1` inside the window.
    pub fn signed_count(&self) -> i64 {
        self.in_window().map(|c| if c.index == 0 { 1 } else { -1 }).sum()
    }

    pub fn full_signed_count(&self) -> i64 {
        self.points.iter().map(|c| if c.index == 0 { 1 } else { -1 }).sum()
    }

    pub fn alternates(&self) -> bool {
        let n = self.points.len();
        n >= 2 && n % 2 == 0 && (0..n).all(|i| self.points[i].index != self.points[(i + 1) % n].index)
    }

    pub fn degenerate(&self) -> usize {
        self.points.iter().filter(|c| c.degenerate).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CensusOptions {
    pub grid: usize,
    pub degenerate_tol: f64,
}

impl Default for CensusOptions {
    fn default() -> Self {
        Self { grid: 100_000, degenerate_tol: 1e-8 }
    }
}

/// `H(t)` at `sigma = sqrt2 (cos t, sin t)` as a trigonometric polynomial.
struct TrigPoly {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl TrigPoly {
    fn fit(inst: &HamiltonianInstance) -> Self {
        let deg = inst.params.p().max(inst.params.k()) as usize;
        let pts = 2 * deg + 1;
        let vals: Vec<f64> = (0..pts)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / pts as f64;
                inst.value_grad(&circle(t)).0
            })
            .collect();
        let mut a = vec![0.0; deg + 1];
        let mut b = vec![0.0; deg + 1];
        for j in 0..=deg {
            for (i, v) in vals.iter().enumerate() {
                let t = 2.0 * PI * (i * j) as f64 / pts as f64;
                a[j] += v * t.cos();
                b[j] += v * t.sin();
            }
            let w = if j == 0 { 1.0 } else { 2.0 } / pts as f64;
            a[j] *= w;
            b[j] *= w;
        }
        Self { a, b }
    }

    fn eval(&self, t: f64, order: u32) -> f64 {
        let mut s = 0.0;
        for j in 0..self.a.len() {
            let jf = j as f64;
            let (c, sn) = ((jf * t).cos(), (jf * t).sin());
            s += match order % 4 {
                0 => self.a[j] * c + self.b[j] * sn,
                1 => jf * (self.b[j] * c - self.a[j] * sn),
                2 => -jf * jf * (self.a[j] * c + self.b[j] * sn),
                _ => -jf.powi(3) * (self.b[j] * c - self.a[j] * sn),
            };
        }
        s
    }
}

fn circle(t: f64) -> DVector<f64> {
    DVector::from_vec(vec![std::f64::consts::SQRT_2 * t.cos(), std::f64::consts::SQRT_2 * t.sin()])
}

/// Angular grid with cached `cos(j t)`, `sin(j t)` for `j = 1..=deg`.
pub struct AngleGrid {
    points: usize,
    deg: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl AngleGrid {
    pub fn new(points: usize, deg: usize) -> Self {
        let points = points.max(16);
        let h = 2.0 * PI / points as f64;
        let mut cos = Vec::with_capacity((points + 1) * deg);
        let mut sin = Vec::with_capacity((points + 1) * deg);
        for i in 0..=points {
            for j in 1..=deg {
                let t = (i * j) as f64 * h;
                cos.push(t.cos());
                sin.push(t.sin());
            }
        }
        Self { points, deg, cos, sin }
    }

    fn step(&self) -> f64 {
        2.0 * PI / self.points as f64
    }

    /// `dH/dt` at node `i`.
    fn d1(&self, poly: &TrigPoly, i: usize) -> f64 {
        let (c, s) = (&self.cos[i * self.deg..], &self.sin[i * self.deg..]);
        (1..=self.deg).map(|j| j as f64 * (poly.b[j] * c[j - 1] - poly.a[j] * s[j - 1])).sum()
    }
}

/// Critical points of an `N = 2` instance: grid scan of `dH/dt` for sign
/// changes, then safeguarded Newton polish.
pub fn census_n2(inst: &HamiltonianInstance, window: CountWindow, opts: &CensusOptions) -> Result<CriticalCensus> {
    let deg = inst.params.p().max(inst.params.k()) as usize;
    census_n2_on(inst, window, opts, &AngleGrid::new(opts.grid, deg))
}

/// [`census_n2`] on a prebuilt grid of matching degree.
pub fn census_n2_on(
    inst: &HamiltonianInstance,
    window: CountWindow,
    opts: &CensusOptions,
    grid: &AngleGrid,
) -> Result<CriticalCensus> {
    if inst.n != 2 {
        return Err(Error::Domain(format!("census_n2 needs N = 2, got {}", inst.n)));
    }
    let poly = TrigPoly::fit(inst);
    if poly.a.len() != grid.deg + 1 {
        return Err(Error::Domain("angle grid degree does not match the instance".into()));
    }
    let h = grid.step();
    let scale = poly.a.iter().chain(&poly.b).map(|c| c.abs()).fold(1.0, f64::max);
    let mut points = Vec::new();
    let mut prev = grid.d1(&poly, 0);
    for i in 0..grid.points {
        let next = grid.d1(&poly, i + 1);
        if prev == 0.0 || prev.signum() != next.signum() && next != 0.0 {
            let t = polish(&poly, i as f64 * h, (i + 1) as f64 * h, prev).rem_euclid(2.0 * PI);
            let d2 = poly.eval(t, 2);
            points.push(CriticalPoint {
                angle: t,
                energy_density: poly.eval(t, 0) / 2.0,
                index: if d2 > 0.0 { 0 } else { 1 },
                overlap: inst.overlap(&circle(t)),
                degenerate: d2.abs() < opts.degenerate_tol * scale,
            });
        }
        prev = next;
    }
    points.sort_by(|a, b| a.angle.total_cmp(&b.angle));
    points.dedup_by(|a, b| (a.angle - b.angle).abs() < 1e-12);
    Ok(CriticalCensus { points, window })
}

fn polish(poly: &TrigPoly, mut lo: f64, mut hi: f64, flo: f64) -> f64 {
    if flo == 0.0 {
        return lo;
    }
    let slo = flo.signum();
    let mut t = 0.5 * (lo + hi);
    for _ in 0..100 {
        let f = poly.eval(t, 1);
        if f.abs() < 1e-14 {
            return t;
        }
        if f.signum() == slo {
            lo = t;
        } else {
            hi = t;
        }
        let d = poly.eval(t, 2);
        let newton = t - f / d;
        t = if d != 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo < 1e-15 {
            break;
        }
    }
    t
}

/// Mean signed count `Crt_0 - Crt_1` in `window` over `instances` draws.
pub fn census_mc(
    params: &ModelParams,
    window: CountWindow,
    instances: usize,
    seed: u64,
    opts: &CensusOptions,
) -> Result<McEstimate> {
    if instances < 2 {
        return Err(Error::Domain("need at least 2 instances".into()));
    }
    let chunk = 256;
    let grid = AngleGrid::new(opts.grid, params.p().max(params.k()) as usize);
    let parts: Vec<Result<Welford>> = (0..instances.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut rng = substream(seed, c as u64);
            let mut w = Welford::default();
            for _ in 0..chunk.min(instances - c * chunk) {
                let inst = HamiltonianInstance::from_rng(2, params, seed, &mut rng);
                w.push(census_n2_on(&inst, window, opts, &grid)?.signed_count() as f64);
            }
            Ok(w)
        })
        .collect();
    let parts: Vec<Welford> = parts.into_iter().collect::<Result<_>>()?;
    Ok(pairwise(&parts, Welford::default(), Welford::merge).estimate())
}

// ---------------------------------------------------------------------------
// Index profile

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexProfile {
    /// `histogram[i]` = number of located critical points of index `i`
    /// with energy density inside the window.
    pub histogram: Vec<usize>,
    /// All distinct critical points located, any energy.
    pub located: usize,
}

impl IndexProfile {
    pub fn in_window(&self) -> usize {
        self.histogram.iter().sum()
    }

    pub fn index0_fraction(&self) -> f64 {
        self.histogram[0] as f64 / self.in_window().max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IndexOptions {
    pub starts: usize,
    pub newton_iter: usize,
    pub eig_cutoff: f64,
}

impl Default for IndexOptions {
    fn default() -> Self {
        Self { starts: 40, newton_iter: 100, eig_cutoff: 1e-8 }
    }
}

/// Riemannian Newton for `grad = 0`, step length capped at `sqrt(N) / 4`.
fn newton_critical(inst: &HamiltonianInstance, start: DVector<f64>, iters: usize, tol: f64) -> Option<DVector<f64>> {
    let n = inst.n;
    let mut x = retract(start, n);
    for _ in 0..iters {
        let g = project(&x, inst.value_grad(&x).1);
        if g.norm() < tol {
            return Some(x);
        }
        let q = tangent_basis(&x);
        let gt = q.transpose() * &g;
        let ht = inst.tangent_hessian(&x).ok()?;
        let eig = SymmetricEigen::new(ht);
        let mut d = DVector::zeros(n - 1);
        for (i, &ev) in eig.eigenvalues.iter().enumerate() {
            if ev.abs() < 1e-14 {
                return None;
            }
            let v = eig.eigenvectors.column(i);
            d -= v * (v.dot(&gt) / ev);
        }
        let mut step = q * d;
        let cap = 0.25 * (n as f64).sqrt();
        if step.norm() > cap {
            step *= cap / step.norm();
        }
        x = retract(x + step, n);
    }
    let g = project(&x, inst.value_grad(&x).1);
    (g.norm() < tol).then_some(x)
}

/// Index histogram of critical points located from random starts. Even
/// starts run gradient descent, odd starts run Riemannian Newton; every
/// result is polished by Newton and deduplicated.
pub fn index_profile(
    batch: &[HamiltonianInstance],
    energy_window: (f64, f64),
    opts: &IndexOptions,
) -> Result<IndexProfile> {
    let n = batch.first().map(|i| i.n).ok_or_else(|| Error::Domain("empty batch".into()))?;
    if n > 12 || batch.iter().any(|i| i.n != n) {
        return Err(Error::Domain("index_profile needs a batch of equal N <= 12".into()));
    }
    let per: Vec<(Vec<usize>, usize)> = batch
        .par_iter()
        .map(|inst| {
            let nf = n as f64;
            let tol = 1e-9 * nf.sqrt() * (1.0 + inst.params.lambda());
            let mut found: Vec<DVector<f64>> = Vec::new();
            let mut hist = vec![0usize; n];
            for s in 0..opts.starts {
                let mut rng = substream(inst.seed, s as u64 + 1);
                let start = random_point(n, &mut rng);
                let start = if s % 2 == 0 {
                    let d = descend(inst, start, &StepRule::default(), 1e-6 * nf.sqrt());
                    DVector::from_column_slice(&d.point)
                } else {
                    start
                };
                let Some(x) = newton_critical(inst, start, opts.newton_iter, tol) else { continue };
                if found.iter().any(|y| (y - &x).norm() < 1e-6 * nf.sqrt()) {
                    continue;
                }
                let e = inst.value_grad(&x).0 / nf;
                if e > energy_window.0 && e < energy_window.1 {
                    let ev = SymmetricEigen::new(inst.tangent_hessian(&x).expect("on sphere")).eigenvalues;
                    let scale = ev.iter().fold(1.0f64, |a, v| a.max(v.abs()));
                    let index = ev.iter().filter(|&&v| v < -opts.eig_cutoff * scale).count();
                    hist[index] += 1;
                }
                found.push(x);
            }
            (hist, found.len())
        })
        .collect();
    let mut histogram = vec![0usize; n];
    let mut located = 0;
    for (h, l) in per {
        histogram.iter_mut().zip(h).for_each(|(a, b)| *a += b);
        located += l;
    }
    Ok(IndexProfile { histogram, located })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pr(p: u32, k: u32, l: f64) -> ModelParams {
        ModelParams::new(p, k, l).unwrap()
    }

    #[test]
    fn permutations_count() {
        assert_eq!(permutations(3).len(), 6);
        assert_eq!(permutations(4).len(), 24);
    }

    #[test]
    fn symmetrize_preserves_full_contraction() {
        let inst = sample_instance(3, &pr(3, 2, 0.0), 1).unwrap();
        let x = DVector::from_vec(vec![0.3, -1.2, 0.7]);
        let direct: f64 = {
            let mut s = 0.0;
            let mut idx = vec![0usize; 3];
            for &j in inst.couplings() {
                s += j * idx.iter().map(|&i| x[i]).product::<f64>();
                increment(&mut idx, 3);
            }
            s
        };
        let via_sym = x.dot(&contract_to_vector(&inst.sym, 3, &x));
        assert!((direct - via_sym).abs() < 1e-12);
    }

    #[test]
    fn tangent_basis_is_orthonormal() {
        let s = DVector::from_vec(vec![0.2, -0.5, 1.1, -0.4]);
        let q = tangent_basis(&s);
        assert!((q.transpose() * &q - DMatrix::identity(3, 3)).norm() < 1e-13);
        assert!((q.transpose() * &s).norm() < 1e-13);
        let e = DVector::from_vec(vec![0.0, 0.0, 2.0]);
        assert_eq!(tangent_basis(&e), DMatrix::identity(3, 3).columns(0, 2).into_owned());
    }

    #[test]
    fn budget_is_enforced() {
        let e = sample_instance_with_budget(100, &pr(3, 2, 1.0), 0, 1000).unwrap_err();
        assert!(matches!(e, Error::Budget { .. }));
        assert_eq!(sample_instance(2, &pr(3, 2, 1.0), 0).unwrap().couplings().len(), 8);
    }

    #[test]
    fn off_sphere_is_rejected() {
        let inst = sample_instance(3, &pr(3, 2, 1.0), 0).unwrap();
        assert!(inst.eval_h(&DVector::from_vec(vec![1.0, 0.0, 0.0])).is_err());
    }

    #[test]
    fn trig_fit_is_exact() {
        let inst = sample_instance(2, &pr(4, 3, 2.5), 9).unwrap();
        let poly = TrigPoly::fit(&inst);
        for i in 0..20 {
            let t = 0.31 * i as f64;
            let h = inst.eval_h(&circle(t)).unwrap();
            assert!((poly.eval(t, 0) - h).abs() < 1e-12 * (1.0 + h.abs()));
        }
    }
}
