//! Scalar building blocks: the rate function `I1`, the edge factor `h`,
//! the complexity surface with its partial derivatives, and Hermite
//! functions evaluated through a log-scaled recurrence.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive};
use serde::Serialize;

use crate::error::{Error, Result};

/// Floating point scalar accepted by the generic layer.
pub trait Real:
    Float + FloatConst + FromPrimitive + Debug + Display + Send + Sync + 'static
{
}

impl<T> Real for T where
    T: Float + FloatConst + FromPrimitive + Debug + Display + Send + Sync + 'static
{
}

#[inline]
pub(crate) fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("literal representable")
}

#[inline]
pub(crate) fn int<T: Real>(n: u32) -> T {
    T::from_u32(n).expect("integer representable")
}

/// `coef * m^e`, returning zero whenever `coef` is zero so that negative
/// exponents at `m = 0` never get evaluated.
#[inline]
pub(crate) fn term<T: Real>(coef: T, m: T, e: i32) -> T {
    if coef == T::zero() {
        T::zero()
    } else {
        coef * m.powi(e)
    }
}

/// The triple `(p, k, lambda)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelParams<T> {
    p: u32,
    k: u32,
    lambda: T,
}

impl<T: Real> ModelParams<T> {
    pub fn new(p: u32, k: u32, lambda: T) -> Result<Self> {
        if p < 3 {
            return Err(Error::InvalidParams(format!("p = {p}, need p >= 3")));
        }
        if k < 1 {
            return Err(Error::InvalidParams(format!("k = {k}, need k >= 1")));
        }
        if !(lambda >= T::zero()) || !lambda.is_finite() {
            return Err(Error::InvalidParams(format!(
                "lambda = {lambda}, need a finite value >= 0"
            )));
        }
        Ok(Self { p, k, lambda })
    }

    pub fn p(&self) -> u32 {
        self.p
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn with_lambda(&self, lambda: T) -> Result<Self> {
        Self::new(self.p, self.k, lambda)
    }

    pub(crate) fn pf(&self) -> T {
        int(self.p)
    }

    pub(crate) fn kf(&self) -> T {
        int(self.k)
    }

    pub(crate) fn ki(&self) -> i32 {
        self.k as i32
    }

    /// `sqrt(2(p-1)/p)`, the coefficient that recurs in every formula.
    pub(crate) fn c(&self) -> T {
        let p = self.pf();
        (lit::<T>(2.0) * (p - T::one()) / p).sqrt()
    }
}

/// A latitude/energy pair together with its rescaled energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LandscapePoint<T> {
    pub m: T,
    pub x: T,
    pub y: T,
}

impl<T: Real> LandscapePoint<T> {
    pub fn from_x(m: T, x: T, params: &ModelParams<T>) -> Result<Self> {
        check_latitude(m)?;
        Ok(Self { m, x, y: y_of(x, m, params) })
    }

    pub fn from_y(m: T, y: T, params: &ModelParams<T>) -> Result<Self> {
        check_latitude(m)?;
        Ok(Self { m, x: x_of(y, m, params), y })
    }
}

pub(crate) fn check_latitude<T: Real>(m: T) -> Result<()> {
    if m.abs() < T::one() {
        Ok(())
    } else {
        Err(Error::Domain(format!("latitude m = {m} must satisfy |m| < 1")))
    }
}

/// `I1(z) = int_{sqrt 2}^z sqrt(t^2 - 2) dt`, and `+inf` below `sqrt 2`.
pub fn i1<T: Real>(z: T) -> T {
    if z.is_nan() {
        return z;
    }
    let s2 = T::SQRT_2();
    // a few ulps below the edge count as the edge itself
    let snap = s2 * (T::one() - T::epsilon() * lit(4.0));
    if z < snap {
        return T::infinity();
    }
    if z <= s2 {
        return T::zero();
    }
    if z.is_infinite() {
        return T::infinity();
    }
    let r = (z * z - lit(2.0)).max(T::zero()).sqrt();
    z * r / lit(2.0) - ((z + r) / s2).ln()
}

/// `|(y - sqrt2)/(y + sqrt2)|^(1/4) + |(y + sqrt2)/(y - sqrt2)|^(1/4)`.
pub fn h_edge<T: Real>(y: T) -> Result<T> {
    let s2 = T::SQRT_2();
    if y.abs() == s2 {
        return Err(Error::Domain(format!("h_edge has a pole at |y| = sqrt 2 (y = {y})")));
    }
    let r = ((y - s2) / (y + s2)).abs();
    let q = lit::<T>(0.25);
    Ok(r.powf(q) + r.powf(-q))
}

/// `sqrt2 * h(y) / (sqrt(y^2 - 2) - y)` for `y < -sqrt 2`.
pub fn h_tilde<T: Real>(y: T) -> Result<T> {
    if !(y < -T::SQRT_2()) {
        return Err(Error::Domain(format!("h_tilde needs y < -sqrt 2, got {y}")));
    }
    let h = h_edge(y)?;
    Ok(T::SQRT_2() * h / ((y * y - lit(2.0)).sqrt() - y))
}

/// Rescaled energy `y = (p x - (1 - p/k) lambda m^k) / sqrt(2 p (p-1))`.
pub fn y_of<T: Real>(x: T, m: T, params: &ModelParams<T>) -> T {
    let p = params.pf();
    let shift = (T::one() - p / params.kf()) * params.lambda() * m.powi(params.ki());
    (p * x - shift) / (lit::<T>(2.0) * p * (p - T::one())).sqrt()
}

/// Equivalent form `sqrt(p/(2(p-1))) (x - (1/p - 1/k) lambda m^k)`.
pub fn y_of_alt<T: Real>(x: T, m: T, params: &ModelParams<T>) -> T {
    let p = params.pf();
    let shift = (T::one() / p - T::one() / params.kf()) * params.lambda() * m.powi(params.ki());
    (p / (lit::<T>(2.0) * (p - T::one()))).sqrt() * (x - shift)
}

/// Inverse of [`y_of`] in `x`.
pub fn x_of<T: Real>(y: T, m: T, params: &ModelParams<T>) -> T {
    let p = params.pf();
    let shift = (T::one() - p / params.kf()) * params.lambda() * m.powi(params.ki());
    (y * (lit::<T>(2.0) * p * (p - T::one())).sqrt() + shift) / p
}

/// The complexity `S~(m, y)`; `-inf` when `y > -sqrt 2`. At `y = -sqrt 2`
/// the finite boundary value is returned.
pub fn s_tilde<T: Real>(m: T, y: T, params: &ModelParams<T>) -> Result<T> {
    check_latitude(m)?;
    let rate = i1(-y);
    if rate.is_infinite() {
        return Ok(T::neg_infinity());
    }
    let p = params.pf();
    let lam = params.lambda();
    let k = params.ki();
    let two = lit::<T>(2.0);
    let mk = m.powi(k);
    let m2 = m * m;
    let v = lit::<T>(0.5) * ((T::one() - m2) * (p - T::one())).ln()
        + (two - p) / (two * p) * y * y
        - lam * mk / p * params.c() * y
        - lam * lam * m.powi(2 * k - 2) / (two * p * p) * (p + (T::one() - p) * m2)
        - rate;
    Ok(v)
}

/// `S(m, x) = S~(m, y(x, m))`.
pub fn s<T: Real>(m: T, x: T, params: &ModelParams<T>) -> Result<T> {
    s_tilde(m, y_of(x, m, params), params)
}

/// Analytic first and second partial derivatives of [`s_tilde`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Partials<T> {
    pub dy: T,
    pub dyy: T,
    pub dm: T,
    pub dmm: T,
    pub dmy: T,
}

pub fn s_tilde_partials<T: Real>(m: T, y: T, params: &ModelParams<T>) -> Result<Partials<T>> {
    check_latitude(m)?;
    if !(y < -T::SQRT_2()) {
        return Err(Error::Domain(format!("partials need y < -sqrt 2, got {y}")));
    }
    let p = params.pf();
    let kf = params.kf();
    let k = params.ki();
    let lam = params.lambda();
    let c = params.c();
    let one = T::one();
    let two = lit::<T>(2.0);
    let r = (y * y - two).sqrt();
    let m2 = m * m;
    let q = one - m2;

    let dy = (two - p) / p * y - lam * m.powi(k) / p * c + r;
    let dyy = (two - p) / p + y / r;
    let dm = -m / q - term(lam * kf / p * c * y, m, k - 1)
        - term(lam * lam * (kf - one) / p, m, 2 * k - 3)
        + term(lam * lam * kf * (p - one) / (p * p), m, 2 * k - 1);
    let dmm = -(one + m2) / (q * q)
        - term(lam * kf * (kf - one) / p * c * y, m, k - 2)
        - term(lam * lam * (kf - one) * (two * kf - lit(3.0)) / p, m, 2 * k - 4)
        + term(lam * lam * kf * (p - one) * (two * kf - one) / (p * p), m, 2 * k - 2);
    let dmy = -term(lam * kf / p * c, m, k - 1);
    Ok(Partials { dy, dyy, dm, dmm, dmy })
}

/// Stationary point of `S~(m, .)` in closed form (no domain check).
pub(crate) fn y_star_raw<T: Real>(m: T, params: &ModelParams<T>) -> T {
    let p = params.pf();
    let two = lit::<T>(2.0);
    let v = params.lambda() * m.powi(params.ki()) / (two * p.sqrt());
    let d = (two * (p - T::one())).sqrt();
    v * (p - two) / d - p / d * (v * v + T::one()).sqrt()
}

/// `y*(m)`, the maximiser of `S~(m, .)` for `m >= m_lambda`.
pub fn y_star<T: Real>(m: T, params: &ModelParams<T>) -> T {
    y_star_raw(m, params)
}

/// Latitude separating the rugged region from the convex one.
pub fn m_lambda<T: Real>(params: &ModelParams<T>) -> T {
    let lam = params.lambda();
    if lam == T::zero() {
        return T::one();
    }
    let p = params.pf();
    let arg = (p - lit(2.0)) * p.sqrt() / (lam * (p - T::one()).sqrt());
    arg.powf(T::one() / params.kf()).min(T::one())
}

fn fd_step<T: Real>(m: T) -> T {
    lit::<T>(1e-6).max(T::epsilon().sqrt()) * m.abs().max(T::one())
}

/// `g(m) = S~(m, y*(m))` and its second derivative by the chain rule.
pub fn g_and_g2<T: Real>(m: T, params: &ModelParams<T>) -> Result<(T, T)> {
    check_latitude(m)?;
    let ml = m_lambda(params);
    let slack = lit::<T>(1e-12).max(T::epsilon() * lit(16.0));
    if m < ml - slack {
        return Err(Error::Domain(format!(
            "g is defined for m >= m_lambda = {ml}, got m = {m}"
        )));
    }
    let y = y_star(m, params);
    let g = s_tilde(m, y, params)?;
    let h = fd_step(m);
    let yp = (y_star_raw(m + h, params) - y_star_raw(m - h, params)) / (lit::<T>(2.0) * h);
    let d = s_tilde_partials(m, y, params)?;
    let g2 = d.dmm + lit::<T>(2.0) * d.dmy * yp + d.dyy * yp * yp;
    Ok((g, g2))
}

/// `l(v) = 1/2 log(1-m^2) + (1 - 2/m^2) v^2 + v sqrt(v^2+1) + asinh(v)`,
/// which equals `g(m)` at `v = lambda m^k / (2 sqrt p)` for `m >= m_lambda`.
pub fn l_of_v<T: Real>(v: T, m: T) -> Result<T> {
    if !(m > T::zero() && m < T::one()) {
        return Err(Error::Domain(format!("l_of_v needs 0 < m < 1, got {m}")));
    }
    let m2 = m * m;
    Ok(lit::<T>(0.5) * (T::one() - m2).ln() + (T::one() - lit::<T>(2.0) / m2) * v * v
        + v * (v * v + T::one()).sqrt()
        + v.asinh())
}

/// The exponential factor `J(m, y)` carried by the rank-one term.
pub fn j_factor<T: Real>(m: T, y: T, params: &ModelParams<T>) -> T {
    let p = params.pf();
    let k = params.ki();
    let lam = params.lambda();
    let two = lit::<T>(2.0);
    let m2 = m * m;
    let a = lam * lam / (two * p * p) * m.powi(2 * k - 2) * (p * (T::one() - m2) + m2);
    let b = lam * m.powi(k) * y / (two * p) * params.c();
    (-(a + b)).exp()
}

/// Sign and log-magnitude of the orthonormal Hermite function `phi_n(x)`.
///
/// The three-term recurrence runs on a rescaled pair with the running log
/// offset kept separately, so neither the `exp(-x^2/2)` seed nor the growth
/// in `n` can leave the floating point range.
pub fn hermite_phi_log<T: Real>(n: u32, x: T) -> (i8, T) {
    let mut offset = -x * x / lit(2.0) - T::PI().ln() / lit(4.0);
    if n == 0 {
        return (1, offset);
    }
    let big = T::max_value().sqrt().sqrt();
    let log_big = big.ln();
    let mut prev = T::one();
    let mut cur = T::SQRT_2() * x;
    for j in 2..=n {
        let jf = int::<T>(j);
        let next = x * (lit::<T>(2.0) / jf).sqrt() * cur - ((jf - T::one()) / jf).sqrt() * prev;
        prev = cur;
        cur = next;
        if cur.abs() > big {
            cur = cur / big;
            prev = prev / big;
            offset = offset + log_big;
        }
    }
    if cur == T::zero() {
        (0, T::neg_infinity())
    } else {
        (sign_of(cur), offset + cur.abs().ln())
    }
}

#[inline]
pub(crate) fn sign_of<T: Real>(v: T) -> i8 {
    if v > T::zero() {
        1
    } else if v < T::zero() {
        -1
    } else {
        0
    }
}

/// Orthonormal Hermite function `phi_n(x)`.
pub fn hermite_phi<T: Real>(n: u32, x: T) -> T {
    let (s, l) = hermite_phi_log(n, x);
    match s {
        0 => T::zero(),
        1 => l.exp(),
        _ => -l.exp(),
    }
}

pub(crate) fn ln_factorial<T: Real>(n: u32) -> T {
    (2..=n).fold(T::zero(), |acc, j| acc + int::<T>(j).ln())
}

/// Sign and `log|h_n(x)|` for the physicists' Hermite polynomial.
pub fn hermite_h_log<T: Real>(n: u32, x: T) -> (i8, T) {
    let (s, l) = hermite_phi_log(n, x);
    if s == 0 {
        return (0, T::neg_infinity());
    }
    let norm = lit::<T>(0.5)
        * (int::<T>(n) * T::LN_2() + ln_factorial::<T>(n) + lit::<T>(0.5) * T::PI().ln());
    (s, l + norm + x * x / lit(2.0))
}

fn alternating(n: u32) -> i8 {
    if n % 2 == 0 {
        1
    } else {
        -1
    }
}

/// Leading Plancherel-Rotach term for `phi_n(sqrt(n) x)`, `x < -sqrt 2`,
/// as sign and log-magnitude. The sign is `(-1)^n`.
pub fn pr_asymptotic_log<T: Real>(n: u32, x: T) -> Result<(i8, T)> {
    if !(x < -T::SQRT_2()) {
        return Err(Error::Domain(format!("Plancherel-Rotach form needs x < -sqrt 2, got {x}")));
    }
    let nf = int::<T>(n);
    let four_pi = lit::<T>(4.0) * T::PI();
    let l = -nf * i1(-x) + h_edge(x)?.ln() - lit::<T>(0.5) * (four_pi * (lit::<T>(2.0) * nf).sqrt()).ln();
    Ok((alternating(n), l))
}

pub fn pr_asymptotic<T: Real>(n: u32, x: T) -> Result<T> {
    let (s, l) = pr_asymptotic_log(n, x)?;
    Ok(int_sign::<T>(s) * l.exp())
}

/// Leading term for `phi_{n-1}(sqrt(n) y)`, sign `(-1)^(n-1)`.
pub fn pr_shifted_log<T: Real>(n: u32, y: T) -> Result<(i8, T)> {
    if n < 1 {
        return Err(Error::Domain("pr_shifted needs n >= 1".into()));
    }
    if !(y < -T::SQRT_2()) {
        return Err(Error::Domain(format!("shifted form needs y < -sqrt 2, got {y}")));
    }
    let nf = int::<T>(n);
    let two_pi = lit::<T>(2.0) * T::PI();
    let l = -nf * i1(-y) - lit::<T>(0.5) * (two_pi * (lit::<T>(2.0) * nf).sqrt()).ln()
        + h_edge(y)?.ln()
        - ((y * y - lit(2.0)).sqrt() - y).ln();
    Ok((alternating(n - 1), l))
}

pub fn pr_shifted<T: Real>(n: u32, y: T) -> Result<T> {
    let (s, l) = pr_shifted_log(n, y)?;
    Ok(int_sign::<T>(s) * l.exp())
}

#[inline]
pub(crate) fn int_sign<T: Real>(s: i8) -> T {
    match s {
        1 => T::one(),
        -1 => -T::one(),
        _ => T::zero(),
    }
}
