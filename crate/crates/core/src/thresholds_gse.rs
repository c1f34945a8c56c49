//! The maximising latitude `m*`, the thresholds `lambda1 <= lambda2 <=
//! lambda_tr`, and the ground-state energy prediction.

use std::collections::HashMap;
use std::sync::{OnceLock, RwLock};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{bisect, grid_max};
use crate::scalar_core::{int, lit, s, y_of, y_star, ModelParams, Real};

pub use crate::scalar_core::m_lambda;

/// Largest root of `lambda m^k / sqrt(p) = m^2 / sqrt(1 - m^2)` on `(0, 1]`.
///
/// `None` when no root exists: `lambda = 0`, `k = 2` with `lambda^2 <= p`,
/// or `k > 2` with `lambda < lambda1`.
pub fn m_star<T: Real>(params: &ModelParams<T>) -> Option<T> {
    let lam = params.lambda();
    if lam <= T::zero() {
        return None;
    }
    let p = params.pf();
    match params.k() {
        1 => {
            let a = lam * lam / p;
            Some((a / (T::one() + a)).sqrt())
        }
        2 => {
            let q = T::one() - p / (lam * lam);
            (q > T::zero()).then(|| q.sqrt())
        }
        k => {
            let l1 = lambda1::<T>(params.p(), k);
            if lam < l1 * (T::one() - T::epsilon() * lit(64.0)) {
                return None;
            }
            let kf = params.kf();
            let two = lit::<T>(2.0);
            let sp = p.sqrt();
            let ki = k as i32;
            let f = |m: T| lam * m.powi(ki - 2) * (T::one() - m * m).sqrt() / sp - T::one();
            let df = |m: T| {
                let q = (T::one() - m * m).sqrt();
                lam / sp * ((kf - two) * m.powi(ki - 3) * q - m.powi(ki - 1) / q)
            };
            let lo = ((kf - two) / (kf - T::one())).sqrt();
            let hi = T::one() - lit::<T>(1e-12).max(T::epsilon() * lit(4.0));
            if f(lo) <= T::zero() {
                return Some(lo);
            }
            let mut m = bisect(f, lo, hi, T::epsilon() * lit(4.0)).ok()?;
            for _ in 0..3 {
                let d = df(m);
                if d == T::zero() {
                    break;
                }
                let next = m - f(m) / d;
                if next > lo && next < T::one() && f(next).abs() <= f(m).abs() {
                    m = next;
                } else {
                    break;
                }
            }
            Some(m)
        }
    }
}

/// Residual of the defining equation of `m*`.
pub fn m_star_residual<T: Real>(m: T, params: &ModelParams<T>) -> T {
    let p = params.pf();
    params.lambda() * m.powi(params.ki()) / p.sqrt() - m * m / (T::one() - m * m).sqrt()
}

/// Existence threshold for `m*`.
pub fn lambda1<T: Real>(p: u32, k: u32) -> T {
    if k <= 2 {
        return T::zero();
    }
    let kf = int::<T>(k);
    let one = T::one();
    let two = lit::<T>(2.0);
    let ki = k as i32;
    let ratio = (kf - one).powi(ki - 1) / (kf - two).powi(ki - 2);
    (int::<T>(p) * ratio).sqrt()
}

/// Smallest `lambda` from which `m*(lambda) >= m_lambda`.
pub fn lambda2<T: Real>(p: u32, k: u32) -> Result<T> {
    ModelParams::<T>::new(p, k, T::zero())?;
    let pf = int::<T>(p);
    let one = T::one();
    let two = lit::<T>(2.0);
    match k {
        1 => {
            let a = (pf - two).powi(2) / (pf - one);
            Ok((pf * (a + (a * a + lit::<T>(4.0) * a).sqrt()) / two).sqrt())
        }
        2 => {
            let d = (two - pf) / (pf - one).sqrt() + (lit::<T>(4.0) + (pf - two).powi(2) / (pf - one)).sqrt();
            Ok(two * pf.sqrt() / d)
        }
        _ => {
            let l1 = lambda1::<T>(p, k);
            if p <= k {
                return Ok(l1);
            }
            let gap = |lam: T| -> T {
                let pr = ModelParams::new(p, k, lam).expect("validated");
                match m_star(&pr) {
                    Some(ms) => ms - m_lambda(&pr),
                    None => -one,
                }
            };
            let mut hi = l1 * two;
            let mut tries = 0;
            while gap(hi) < T::zero() {
                hi = hi * two;
                tries += 1;
                if tries > 60 {
                    return Err(Error::NotBracketed(format!("lambda2({p},{k}) not bracketed")));
                }
            }
            bisect(gap, l1, hi, T::epsilon() * lit::<T>(16.0) * hi)
        }
    }
}

/// Tuning of the trivialisation threshold solver.
#[derive(Debug, Clone, Serialize)]
pub struct ThresholdConfig<T> {
    /// Grid size for the low-latitude supremum.
    pub sup_grid: usize,
    /// Golden-section refinements around the best grid maxima.
    pub refinements: usize,
    /// Bisection tolerance on lambda.
    pub tol: T,
    /// A supremum at or below this counts as nonpositive.
    pub zero_tol: T,
    /// Give up bracketing above this lambda.
    pub lambda_max: T,
    /// Lambda grid for the monotonicity report; `None` picks a default.
    pub monotone_grid: Option<Vec<T>>,
    /// Latitude points per lambda in the monotonicity report.
    pub monotone_points: usize,
}

impl<T: Real> Default for ThresholdConfig<T> {
    fn default() -> Self {
        Self {
            sup_grid: 2000,
            refinements: 3,
            tol: lit(1e-10),
            zero_tol: lit(1e-10),
            lambda_max: lit(1e4),
            monotone_grid: None,
            monotone_points: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdReport<T> {
    pub p: u32,
    pub k: u32,
    pub lambda1: T,
    pub lambda2: T,
    pub lambda_tr: T,
    pub monotonicity_verified: bool,
    pub monotone_grid: Vec<T>,
}

/// Supremum of `S(m, x*)` over the low-latitude band `[0, m_lambda]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LowLatitudeSup<T> {
    pub sup: T,
    pub argmax: T,
    pub f_zero: T,
    pub f_m_lambda: T,
    pub m_lambda: T,
    pub x_star: T,
}

fn band_top<T: Real>(ml: T) -> T {
    ml.min(T::one() - lit::<T>(1e-9).max(T::epsilon() * lit(8.0)))
}

pub fn low_latitude_sup_with<T: Real>(
    params: &ModelParams<T>,
    grid: usize,
    refinements: usize,
) -> Result<LowLatitudeSup<T>> {
    let pred = gse_predict(params)?;
    let xs = pred.x_star;
    let ml = m_lambda(params);
    let top = band_top(ml);
    let f = |m: T| s(m, xs, params).unwrap_or(T::neg_infinity());
    let (argmax, sup) = grid_max(f, T::zero(), top, grid, refinements);
    Ok(LowLatitudeSup {
        sup,
        argmax,
        f_zero: f(T::zero()),
        f_m_lambda: f(top),
        m_lambda: ml,
        x_star: xs,
    })
}

pub fn low_latitude_sup<T: Real>(params: &ModelParams<T>) -> Result<LowLatitudeSup<T>> {
    let cfg = ThresholdConfig::<T>::default();
    low_latitude_sup_with(params, cfg.sup_grid, cfg.refinements)
}

fn default_monotone_grid<T: Real>(l2: T) -> Vec<T> {
    let scale = l2.max(T::one());
    let a = l2 + lit::<T>(0.005) * scale;
    let b = lit::<T>(2.5) * scale;
    let n = 40usize;
    (0..n)
        .map(|i| a + (b - a) * T::from_usize(i).unwrap() / T::from_usize(n - 1).unwrap())
        .collect()
}

/// Whether `lambda -> S(m, x*(lambda))` decreases along `grid` at every
/// latitude still inside the band of the larger lambda.
pub fn monotone_in_lambda<T: Real>(p: u32, k: u32, grid: &[T], points: usize) -> Result<bool> {
    let slack = lit::<T>(1e-12);
    for w in grid.windows(2) {
        let (a, b) = (ModelParams::new(p, k, w[0])?, ModelParams::new(p, k, w[1])?);
        let (xa, xb) = (gse_predict(&a)?.x_star, gse_predict(&b)?.x_star);
        let top = band_top(m_lambda(&b));
        for i in 0..points {
            let m = top * T::from_usize(i).unwrap() / T::from_usize(points - 1).unwrap();
            let sa = s(m, xa, &a)?;
            let sb = s(m, xb, &b)?;
            if sb.is_infinite() && sb < T::zero() {
                continue;
            }
            if sb > sa + slack {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// `lambda_tr`: smallest `lambda >= lambda2` with a nonpositive
/// low-latitude supremum at the ground-state level.
pub fn lambda_tr_with<T: Real>(p: u32, k: u32, cfg: &ThresholdConfig<T>) -> Result<ThresholdReport<T>> {
    let l1 = lambda1::<T>(p, k);
    let l2 = lambda2::<T>(p, k)?;
    let sup_at = |lam: T| -> Result<T> {
        let pr = ModelParams::new(p, k, lam)?;
        Ok(low_latitude_sup_with(&pr, cfg.sup_grid, cfg.refinements)?.sup)
    };
    // lambda2 itself can sit on a degenerate boundary where the supremum is
    // lost to rounding, so probe just above it.
    let probe = l2 + lit::<T>(1e-9) * l2.max(T::one());
    let ltr = if sup_at(probe)? <= cfg.zero_tol {
        l2
    } else {
        let mut lo = probe;
        let mut step = l2.max(T::one()) * lit(0.25);
        let mut hi = lo + step;
        while sup_at(hi)? > cfg.zero_tol {
            lo = hi;
            step = step * lit(2.0);
            hi = hi + step;
            if hi > cfg.lambda_max {
                return Err(Error::NotBracketed(format!(
                    "low-latitude supremum still positive at lambda = {} for (p,k) = ({p},{k})",
                    cfg.lambda_max
                )));
            }
        }
        while hi - lo > cfg.tol {
            let mid = lo + (hi - lo) / lit(2.0);
            if mid == lo || mid == hi {
                break;
            }
            if sup_at(mid)? > cfg.zero_tol {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    };
    let grid = cfg.monotone_grid.clone().unwrap_or_else(|| default_monotone_grid(l2));
    let mono = monotone_in_lambda(p, k, &grid, cfg.monotone_points.max(2))?;
    Ok(ThresholdReport {
        p,
        k,
        lambda1: l1,
        lambda2: l2,
        lambda_tr: ltr,
        monotonicity_verified: mono,
        monotone_grid: grid,
    })
}

pub fn lambda_tr<T: Real>(p: u32, k: u32) -> Result<ThresholdReport<T>> {
    lambda_tr_with(p, k, &ThresholdConfig::default())
}

type Cache = RwLock<HashMap<(u32, u32), ThresholdReport<f64>>>;

/// Memoised [`lambda_tr`] in double precision with the default settings.
pub fn thresholds(p: u32, k: u32) -> Result<ThresholdReport<f64>> {
    static CACHE: OnceLock<Cache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| RwLock::new(HashMap::new()));
    if let Some(r) = cache.read().expect("cache lock").get(&(p, k)) {
        return Ok(r.clone());
    }
    let r = lambda_tr::<f64>(p, k)?;
    cache.write().expect("cache lock").insert((p, k), r.clone());
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GsePrediction<T> {
    pub m_star: T,
    pub x_star: T,
    pub y_star: T,
    /// `((p-1) m*^2 - p) / (sqrt(2(p-1)) sqrt(1 - m*^2))`.
    pub y_star_alt: T,
    /// `lambda m*^k (1/2 - 1/k) - sqrt(lambda^2 m*^2k / 4 + p)`.
    pub gse_alt_form: T,
}

pub fn gse_predict<T: Real>(params: &ModelParams<T>) -> Result<GsePrediction<T>> {
    let m = m_star(params).ok_or_else(|| {
        Error::NoSolution(format!(
            "m* does not exist for (p,k,lambda) = ({},{},{})",
            params.p(),
            params.k(),
            params.lambda()
        ))
    })?;
    let p = params.pf();
    let kf = params.kf();
    let lam = params.lambda();
    let one = T::one();
    let two = lit::<T>(2.0);
    let mk = m.powi(params.ki());
    let q = one - m * m;
    let x = -lam * mk / kf - (p * q).sqrt();
    let alt = lam * mk * (lit::<T>(0.5) - one / kf) - (lam * lam * mk * mk / lit(4.0) + p).sqrt();
    let ya = ((p - one) * m * m - p) / ((two * (p - one)).sqrt() * q.sqrt());
    Ok(GsePrediction {
        m_star: m,
        x_star: x,
        y_star: y_star(m, params),
        y_star_alt: ya,
        gse_alt_form: alt,
    })
}

/// Ground-state energy of the fixed-latitude slice, `-lambda m^k/k - sqrt(p(1-m^2))`.
pub fn gse_fixed_latitude<T: Real>(m: T, params: &ModelParams<T>) -> T {
    let p = params.pf();
    -params.lambda() * m.powi(params.ki()) / params.kf() - (p * (T::one() - m * m)).sqrt()
}

/// Mixture of the fixed-latitude slice, `(m^2 + (1-m^2) x)^p - m^(2p)`.
pub fn xi<T: Real>(x: T, m: T, p: u32) -> T {
    let pi = p as i32;
    (m * m + (T::one() - m * m) * x).powi(pi) - m.powi(2 * pi)
}

/// Central difference of [`xi`] at `x = 1`; should equal `p (1 - m^2)`.
pub fn xi_prime_at_one<T: Real>(m: T, p: u32) -> T {
    let h = lit::<T>(1e-6).max(T::epsilon().cbrt());
    (xi(T::one() + h, m, p) - xi(T::one() - h, m, p)) / (lit::<T>(2.0) * h)
}

/// Rescaled energy of the ground state, `y(x*, m*)`.
pub fn y_at_ground<T: Real>(params: &ModelParams<T>) -> Result<T> {
    let g = gse_predict(params)?;
    Ok(y_of(g.x_star, g.m_star, params))
}
