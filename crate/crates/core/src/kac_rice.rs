//! Expected critical-point counts: the exact finite-N Kac-Rice integral,
//! its two asymptotic terms, the Laplace saddle and the constant `C`.

use std::f64::consts::PI;

use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::numerics::{bisect, grid_max};
use crate::quad::{integrate_2d, QuadOptions};
use crate::scalar_core::{
    g_and_g2, h_edge, h_tilde, hermite_h_log, j_factor, s_tilde, s_tilde_partials, x_of, y_of,
    y_star,
};
use crate::thresholds_gse::{gse_predict, lambda2};
use crate::ModelParams;

/// A real number stored as sign and log-magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SignedLog {
    pub sign: i8,
    pub log_abs: f64,
}

impl SignedLog {
    pub const ZERO: Self = Self { sign: 0, log_abs: f64::NEG_INFINITY };

    pub fn new(sign: i8, log_abs: f64) -> Self {
        if sign == 0 || log_abs == f64::NEG_INFINITY {
            Self::ZERO
        } else {
            Self { sign, log_abs }
        }
    }

    pub fn from_value(v: f64) -> Self {
        if v == 0.0 {
            Self::ZERO
        } else {
            Self::new(if v > 0.0 { 1 } else { -1 }, v.abs().ln())
        }
    }

    pub fn value(self) -> f64 {
        f64::from(self.sign) * self.log_abs.exp()
    }

    pub fn scale(self, log_factor: f64, sign: i8) -> Self {
        Self::new(self.sign * sign, self.log_abs + log_factor)
    }

    pub fn add(self, other: Self) -> Self {
        if self.sign == 0 {
            return other;
        }
        if other.sign == 0 {
            return self;
        }
        let (big, small) = if self.log_abs >= other.log_abs { (self, other) } else { (other, self) };
        let r = (small.log_abs - big.log_abs).exp();
        let t = if big.sign == small.sign { 1.0 + r } else { 1.0 - r };
        if t == 0.0 {
            return Self::ZERO;
        }
        Self::new(big.sign, big.log_abs + t.ln())
    }
}

fn parity(n: u32) -> i8 {
    if n % 2 == 0 {
        1
    } else {
        -1
    }
}

/// Latitude window `M` and energy-density window `E`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CountWindow {
    pub m: (f64, f64),
    pub e: (f64, f64),
}

impl CountWindow {
    /// Builds a window and checks that the closure of `M` sits inside
    /// `(-1, 1)` and that `sup E` is below the bulk-edge bound.
    pub fn new(m: (f64, f64), e: (f64, f64), params: &ModelParams) -> Result<Self> {
        if !(m.0 > -1.0 && m.0 < m.1 && m.1 < 1.0) {
            return Err(Error::Domain(format!("latitude window {m:?} must satisfy -1 < a < b < 1")));
        }
        if !(e.0 < e.1 && e.0.is_finite() && e.1.is_finite()) {
            return Err(Error::Domain(format!("energy window {e:?} must be a bounded interval")));
        }
        let bound = Self::energy_bound(params);
        if !(e.1 < bound) {
            return Err(Error::Domain(format!(
                "sup E = {} violates sup E < -2 sqrt((p-1)/p) - |1/p - 1/k| lambda = {bound}",
                e.1
            )));
        }
        Ok(Self { m, e })
    }

    /// Window without the energy-bound check, for diagnostics such as the
    /// full-circle sanity integral.
    pub fn unchecked(m: (f64, f64), e: (f64, f64)) -> Self {
        Self { m, e }
    }

    pub fn energy_bound(params: &ModelParams) -> f64 {
        let p = f64::from(params.p());
        let k = f64::from(params.k());
        -2.0 * ((p - 1.0) / p).sqrt() - (1.0 / p - 1.0 / k).abs() * params.lambda()
    }

    /// `E~_m`, the energy window in rescaled units at latitude `m`.
    pub fn e_tilde(&self, m: f64, params: &ModelParams) -> (f64, f64) {
        (y_of(self.e.0, m, params), y_of(self.e.1, m, params))
    }

    pub fn contains(&self, m: f64, x: f64) -> bool {
        m > self.m.0 && m < self.m.1 && x > self.e.0 && x < self.e.1
    }
}

/// Strength of the rank-one perturbation of the conditional Hessian.
pub fn theta(m: f64, params: &ModelParams) -> f64 {
    let k = params.k();
    if k == 1 {
        return 0.0;
    }
    let p = f64::from(params.p());
    params.lambda() * f64::from(k - 1) * m.powi(k as i32 - 2) * (1.0 - m * m) / (2.0 * p * (p - 1.0)).sqrt()
}

/// `E det(W_n - yI)` for the GOE with off-diagonal variance `1/n`.
pub fn expected_det_goe(n: u32, y: f64) -> SignedLog {
    if n == 0 {
        return SignedLog::new(1, 0.0);
    }
    let nf = f64::from(n);
    let (s, l) = hermite_h_log(n, (nf / 2.0).sqrt() * y);
    SignedLog::new(s, l).scale(-0.5 * nf * (2.0 * nf).ln(), parity(n))
}

/// `E det(W_n - theta e e^T - yI)`, expanded along the rank-one direction
/// into the full determinant minus `theta` times the `(n-1)` minor, whose
/// entries are those of `W_n` (so a rescaled `W_{n-1}`).
pub fn expected_det_rank1(n: u32, theta: f64, y: f64) -> SignedLog {
    assert!(n >= 1, "matrix size must be positive");
    let full = expected_det_goe(n, y);
    if theta == 0.0 {
        return full;
    }
    let nf = f64::from(n);
    let minor = if n == 1 {
        SignedLog::new(1, 0.0)
    } else {
        let (s, l) = hermite_h_log(n - 1, (nf / 2.0).sqrt() * y);
        SignedLog::new(s, l).scale(-0.5 * (nf - 1.0) * (2.0 * nf).ln(), parity(n - 1))
    };
    full.add(minor.scale(theta.abs().ln(), if theta > 0.0 { -1 } else { 1 }))
}

/// `G_N(x, m)`, the expected conditional Hessian determinant in Hermite form.
pub fn g_n_det(x: f64, m: f64, n_dim: u32, params: &ModelParams) -> SignedLog {
    assert!(n_dim >= 2, "dimension must be at least 2");
    let nf = f64::from(n_dim);
    let p = f64::from(params.p());
    let z = nf.sqrt() * y_of(x, m, params);
    let (s1, l1) = hermite_h_log(n_dim - 1, z);
    let mut acc = SignedLog::new(s1, l1);
    let th = theta(m, params);
    if th != 0.0 {
        let (s2, l2) = hermite_h_log(n_dim - 2, z);
        let t = 2.0 * nf.sqrt() * th;
        acc = acc.add(SignedLog::new(s2, l2).scale(t.abs().ln(), if t > 0.0 { 1 } else { -1 }));
    }
    acc.scale(0.5 * (nf - 1.0) * (p * (p - 1.0) / 2.0).ln(), parity(n_dim - 1))
}

/// `log omega_{N-2}`, the log surface area of the unit `(N-2)`-sphere.
pub fn log_omega(n_dim: u32) -> f64 {
    let nf = f64::from(n_dim);
    (nf - 1.0).ln() + 0.5 * (nf - 1.0) * PI.ln() - ln_gamma(0.5 * (nf + 1.0))
}

/// Integrand of the exact Kac-Rice formula in `(x, m)` after the
/// substitution `m = sin u` (the factor `cos u` is included).
fn exact_integrand(x: f64, u: f64, n_dim: u32, params: &ModelParams, log_pref: f64) -> f64 {
    let nf = f64::from(n_dim);
    let p = f64::from(params.p());
    let kf = f64::from(params.k());
    let lam = params.lambda();
    let m = u.sin();
    let c = u.cos();
    if c <= 0.0 {
        return 0.0;
    }
    let k = params.k() as i32;
    let gauss = -0.5
        * nf
        * (lam * lam * m.powi(2 * k - 2) * (1.0 - m * m) / p + (x + lam * m.powi(k) / kf).powi(2));
    let metric = if n_dim == 2 { 0.0 } else { (nf - 2.0) * c.ln() };
    let g = g_n_det(x, m, n_dim, params);
    g.scale(log_pref + metric + gauss, 1).value()
}

fn exact_prefactor(n_dim: u32, params: &ModelParams) -> f64 {
    let nf = f64::from(n_dim);
    let p = f64::from(params.p());
    log_omega(n_dim) + 0.5 * nf.ln() - 0.5 * nf * (2.0 * PI).ln() - 0.5 * (nf - 1.0) * p.ln()
}

/// Quadrature settings for the double integrals of this module.
#[derive(Debug, Clone, Copy)]
pub struct KacRiceOptions {
    pub outer: QuadOptions,
    pub inner: QuadOptions,
}

impl Default for KacRiceOptions {
    fn default() -> Self {
        Self {
            outer: QuadOptions::rel(1e-6).pieces(8).abs(1e-300),
            inner: QuadOptions::rel(1e-9).pieces(4).abs(1e-300),
        }
    }
}

/// Expected Euler characteristic of the sublevel window at finite `N`.
pub fn expected_euler_char(window: &CountWindow, n_dim: u32, params: &ModelParams) -> Result<f64> {
    expected_euler_char_with(window, n_dim, params, KacRiceOptions::default())
}

pub fn expected_euler_char_with(
    window: &CountWindow,
    n_dim: u32,
    params: &ModelParams,
    opts: KacRiceOptions,
) -> Result<f64> {
    if n_dim < 2 {
        return Err(Error::Domain("N must be at least 2".into()));
    }
    let lp = exact_prefactor(n_dim, params);
    let (ua, ub) = (window.m.0.asin(), window.m.1.asin());
    let (ea, eb) = window.e;
    let r = integrate_2d(
        |u, x| exact_integrand(x, u, n_dim, params, lp),
        ua,
        ub,
        |_| (ea, eb),
        opts.outer,
        opts.inner,
    )?;
    Ok(r.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TermIntegrals {
    pub term_i: f64,
    pub term_ii: f64,
}

impl TermIntegrals {
    pub fn total(&self) -> f64 {
        self.term_i + self.term_ii
    }
}

fn y_window(window: &CountWindow, m: f64, params: &ModelParams) -> (f64, f64) {
    let (lo, hi) = window.e_tilde(m, params);
    (lo, hi.min(-std::f64::consts::SQRT_2))
}

/// The two leading terms after the Plancherel-Rotach substitution.
pub fn term_integrals(window: &CountWindow, n_dim: u32, params: &ModelParams) -> Result<TermIntegrals> {
    term_integrals_with(window, n_dim, params, KacRiceOptions::default())
}

pub fn term_integrals_with(
    window: &CountWindow,
    n_dim: u32,
    params: &ModelParams,
    opts: KacRiceOptions,
) -> Result<TermIntegrals> {
    if n_dim < 2 {
        return Err(Error::Domain("N must be at least 2".into()));
    }
    let nf = f64::from(n_dim);
    let p = f64::from(params.p());
    let k = params.k();
    let lam = params.lambda();
    let dens = |m: f64, y: f64, weight: f64, scale: f64| -> f64 {
        match (s_tilde(m, y, params), h_tilde(y)) {
            (Ok(st), Ok(ht)) if st.is_finite() => weight * ht * (scale * st).exp(),
            _ => 0.0,
        }
    };
    let first = integrate_2d(
        |m, y| dens(m, y, (1.0 - m * m).powf(-1.5), nf),
        window.m.0,
        window.m.1,
        |m| y_window(window, m, params),
        opts.outer,
        opts.inner,
    )?;
    let term_i = nf / (2.0 * PI * p.sqrt()) * first.value;
    let term_ii = if k == 1 || lam == 0.0 {
        0.0
    } else {
        let second = integrate_2d(
            |m, y| dens(m, y, m.powi(k as i32 - 2) * j_factor(m, y, params), nf - 1.0),
            window.m.0,
            window.m.1,
            |m| y_window(window, m, params),
            opts.outer,
            opts.inner,
        )?;
        -lam * (nf - 1.0) * f64::from(k - 1) / (2.0 * p * PI) * second.value
    };
    Ok(TermIntegrals { term_i, term_ii })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Saddle {
    pub m_o: f64,
    pub y_o: f64,
    pub x_o: f64,
    pub rate: f64,
    pub interior: bool,
}

/// Maximiser of the strictly concave `S~(m, .)` over `E~_m`.
pub fn y_opt(window: &CountWindow, m: f64, params: &ModelParams) -> f64 {
    let (lo, hi) = window.e_tilde(m, params);
    let hi = hi.min(-std::f64::consts::SQRT_2 * (1.0 + 1e-12));
    if hi <= lo {
        return hi;
    }
    let dy = |y: f64| s_tilde_partials(m, y, params).map(|d| d.dy).unwrap_or(f64::NAN);
    if dy(hi) >= 0.0 {
        return hi;
    }
    if dy(lo) <= 0.0 {
        return lo;
    }
    let ys = y_star(m, params);
    if ys > lo && ys < hi && dy(ys).abs() < 1e-12 {
        return ys;
    }
    bisect(dy, lo, hi, 1e-15 * lo.abs()).unwrap_or(0.5 * (lo + hi))
}

/// Constrained maximiser `(m_o, y_o)` of `S~` over the window.
pub fn saddle(window: &CountWindow, params: &ModelParams) -> Saddle {
    let prof = |m: f64| {
        let y = y_opt(window, m, params);
        s_tilde(m, y, params).unwrap_or(f64::NEG_INFINITY)
    };
    let (m_o, rate) = grid_max(prof, window.m.0, window.m.1, 400, 3);
    let y_o = y_opt(window, m_o, params);
    let (lo, hi) = window.e_tilde(m_o, params);
    let dm = 1e-8 * (window.m.1 - window.m.0);
    let dy = 1e-8 * (hi - lo);
    let interior = m_o > window.m.0 + dm && m_o < window.m.1 - dm && y_o > lo + dy && y_o < hi - dy;
    Saddle { m_o, y_o, x_o: x_of(y_o, m_o, params), rate, interior }
}

fn laplace_prefactor(m: f64, y: f64, j: f64, params: &ModelParams) -> Result<f64> {
    let p = f64::from(params.p());
    let k = params.k();
    let (_, g2) = g_and_g2(m, params)?;
    let d = s_tilde_partials(m, y, params)?;
    let spike = if k == 1 {
        0.0
    } else {
        params.lambda() * f64::from(k - 1) * m.powi(k as i32 - 2) * j
    };
    let num = std::f64::consts::SQRT_2 * h_edge(y)? * (p.sqrt() * (1.0 - m * m).powf(-1.5) - spike);
    let den = ((y * y - 2.0).sqrt() - y) * p * (d.dyy * g2).abs().sqrt();
    Ok(num / den)
}

/// Leading-order Laplace value of the expected count for an interior saddle.
pub fn sharp_asymptotic(window: &CountWindow, n_dim: u32, params: &ModelParams) -> Result<f64> {
    let sd = saddle(window, params);
    if !sd.interior {
        return Err(Error::BoundarySaddle);
    }
    let j = j_factor(sd.m_o, sd.y_o, params);
    let pref = laplace_prefactor(sd.m_o, sd.y_o, j, params)?;
    Ok(pref * (f64::from(n_dim) * sd.rate).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstantC {
    pub c: f64,
    pub m_star: f64,
    pub y_star: f64,
    /// `|J(m*, y*) - 1|`.
    pub j_residual: f64,
    pub j_verified: bool,
}

/// The limiting expected number of deep minima, `C(lambda, p, k)`.
pub fn constant_c(params: &ModelParams) -> Result<ConstantC> {
    let l2 = lambda2::<f64>(params.p(), params.k())?;
    if params.lambda() < l2 * (1.0 - 1e-12) {
        return Err(Error::Domain(format!(
            "C needs lambda >= lambda2 = {l2}, got {}",
            params.lambda()
        )));
    }
    let g = gse_predict(params)?;
    let j = j_factor(g.m_star, g.y_star, params);
    let j_residual = (j - 1.0).abs();
    let c = laplace_prefactor(g.m_star, g.y_star, 1.0, params)?;
    Ok(ConstantC { c, m_star: g.m_star, y_star: g.y_star, j_residual, j_verified: j_residual <= 1e-10 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KacRiceResult {
    pub term_i: f64,
    pub term_ii: f64,
    pub euler_char_exact: Option<f64>,
    pub sharp_value: Option<f64>,
    pub saddle_m: f64,
    pub saddle_y: f64,
    pub rate: f64,
    pub constant_c: Option<f64>,
}

/// Everything the count subcommand reports for one window.
pub fn count(window: &CountWindow, n_dim: u32, params: &ModelParams, exact: bool) -> Result<KacRiceResult> {
    let t = term_integrals(window, n_dim, params)?;
    let sd = saddle(window, params);
    let sharp = match sharp_asymptotic(window, n_dim, params) {
        Ok(v) => Some(v),
        Err(Error::BoundarySaddle) => None,
        Err(e) => return Err(e),
    };
    let euler = if exact { Some(expected_euler_char(window, n_dim, params)?) } else { None };
    let c = match gse_predict(params) {
        Ok(g) if window.contains(g.m_star, g.x_star) => constant_c(params).ok().map(|c| c.c),
        _ => None,
    };
    Ok(KacRiceResult {
        term_i: t.term_i,
        term_ii: t.term_ii,
        euler_char_exact: euler,
        sharp_value: sharp,
        saddle_m: sd.m_o,
        saddle_y: sd.y_o,
        rate: sd.rate,
        constant_c: c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pr(p: u32, k: u32, l: f64) -> ModelParams {
        ModelParams::new(p, k, l).unwrap()
    }

    #[test]
    fn signed_log_arithmetic() {
        let a = SignedLog::from_value(3.0);
        let b = SignedLog::from_value(-5.0);
        assert_relative_eq!(a.add(b).value(), -2.0, max_relative = 1e-14);
        assert_eq!(a.add(SignedLog::from_value(-3.0)), SignedLog::ZERO);
    }

    #[test]
    fn theta_values() {
        assert_eq!(theta(0.4, &pr(3, 1, 5.0)), 0.0);
        assert_relative_eq!(theta(0.5, &pr(3, 2, 6.0)), 6.0 * 0.75 / 12f64.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(theta(0.5, &pr(3, 2, 6.0)), 1.29904, max_relative = 1e-5);
        assert_eq!(theta(1.0, &pr(3, 3, 6.0)), 0.0);
    }

    #[test]
    fn small_determinants() {
        assert_relative_eq!(expected_det_rank1(1, 0.0, 0.7).value(), -0.7, max_relative = 1e-14);
        assert_relative_eq!(expected_det_rank1(1, 1.0, 0.0).value(), -1.0, max_relative = 1e-14);
        assert_relative_eq!(expected_det_rank1(2, 0.0, 0.0).value(), -0.5, max_relative = 1e-14);
        // n = 2: E[(W11 - t - y)(W22 - y) - W12^2] = (t + y) y - 1/2
        let (t, y) = (0.3, 1.1);
        let hand = (t + y) * y - 0.5;
        assert_relative_eq!(expected_det_rank1(2, t, y).value(), hand, max_relative = 1e-13);
    }

    #[test]
    fn window_checks() {
        let p = pr(3, 2, 6.0);
        assert!(CountWindow::new((0.3, 0.99), (-4.0, -2.7), &p).is_ok());
        assert!(CountWindow::new((0.3, 0.99), (-4.0, -2.5), &p).is_err());
        assert!(CountWindow::new((0.3, 1.0), (-4.0, -2.7), &p).is_err());
    }

    #[test]
    fn term_ii_vanishes_for_k1() {
        let p = pr(3, 1, 5.0);
        let g = gse_predict(&p).unwrap();
        let w = CountWindow::new((g.m_star - 0.05, g.m_star + 0.02), (g.x_star - 0.2, g.x_star + 0.2), &p).unwrap();
        let t = term_integrals(&w, 50, &p).unwrap();
        assert_eq!(t.term_ii, 0.0);
        assert!(t.term_i > 0.0);
    }
}
