//! Globally adaptive 7/15-point Gauss-Kronrod quadrature.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];

// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
    /// Split `[a, b]` into this many equal pieces before adapting.
    pub initial_pieces: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self { abs_tol: 1e-300, rel_tol: 1e-10, max_subdivisions: 4000, initial_pieces: 1 }
    }
}

impl QuadOptions {
    pub fn rel(rel_tol: f64) -> Self {
        Self { rel_tol, ..Self::default() }
    }

    pub fn pieces(mut self, n: usize) -> Self {
        self.initial_pieces = n.max(1);
        self
    }

    pub fn abs(mut self, abs_tol: f64) -> Self {
        self.abs_tol = abs_tol;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub abs_error: f64,
    pub evaluations: usize,
    pub subdivisions: usize,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

fn kronrod<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Result<Segment> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for (j, (&x, &w)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let f1 = f(c - h * x);
        let f2 = f(c + h * x);
        k += w * (f1 + f2);
        if j % 2 == 1 {
            g += WG[j / 2] * (f1 + f2);
        }
    }
    let value = k * h;
    let error = ((k - g) * h).abs();
    if !value.is_finite() || !error.is_finite() {
        return Err(Error::Quadrature { a, b, error: f64::INFINITY, subdivisions: 0 });
    }
    Ok(Segment { a, b, value, error })
}

/// Integrate `f` over `[a, b]` until the summed error estimate is below
/// `max(abs_tol, rel_tol * |I|)`.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, opts: QuadOptions) -> Result<QuadResult> {
    if a == b {
        return Ok(QuadResult { value: 0.0, abs_error: 0.0, evaluations: 0, subdivisions: 0 });
    }
    let n = opts.initial_pieces.max(1);
    let mut segs = Vec::with_capacity(n + 64);
    for i in 0..n {
        let lo = a + (b - a) * i as f64 / n as f64;
        let hi = if i + 1 == n { b } else { a + (b - a) * (i + 1) as f64 / n as f64 };
        segs.push(kronrod(&mut f, lo, hi)?);
    }
    let mut subdivisions = 0usize;
    loop {
        let total: f64 = segs.iter().map(|s| s.value).sum();
        let err: f64 = segs.iter().map(|s| s.error).sum();
        if err <= opts.abs_tol.max(opts.rel_tol * total.abs()) {
            return Ok(QuadResult {
                value: total,
                abs_error: err,
                evaluations: 15 * (n + 2 * subdivisions),
                subdivisions,
            });
        }
        let (idx, worst) = segs
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .map(|(i, s)| (i, *s))
            .expect("nonempty");
        let mid = 0.5 * (worst.a + worst.b);
        if subdivisions >= opts.max_subdivisions || mid <= worst.a || mid >= worst.b {
            return Err(Error::Quadrature { a, b, error: err, subdivisions });
        }
        segs.swap_remove(idx);
        segs.push(kronrod(&mut f, worst.a, mid)?);
        segs.push(kronrod(&mut f, mid, worst.b)?);
        subdivisions += 1;
    }
}

/// Iterated integral `int_a^b int_{lo(x)}^{hi(x)} f(x, y) dy dx`.
pub fn integrate_2d<F, B>(
    mut f: F,
    a: f64,
    b: f64,
    mut bounds: B,
    outer: QuadOptions,
    inner: QuadOptions,
) -> Result<QuadResult>
where
    F: FnMut(f64, f64) -> f64,
    B: FnMut(f64) -> (f64, f64),
{
    let mut failure: Option<Error> = None;
    let mut evaluations = 0usize;
    let res = integrate(
        |x| {
            if failure.is_some() {
                return 0.0;
            }
            let (lo, hi) = bounds(x);
            if !(hi > lo) {
                return 0.0;
            }
            match integrate(|y| f(x, y), lo, hi, inner) {
                Ok(r) => {
                    evaluations += r.evaluations;
                    r.value
                }
                Err(e) => {
                    failure = Some(e);
                    0.0
                }
            }
        },
        a,
        b,
        outer,
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(QuadResult { evaluations, ..res })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let r = integrate(|x| x.powi(9) - 3.0 * x * x, -1.0, 2.0, QuadOptions::default()).unwrap();
        let exact = (2f64.powi(10) - 1.0) / 10.0 - (8.0 + 1.0);
        assert!((r.value - exact).abs() < 1e-12);
    }

    #[test]
    fn gaussian_and_sqrt() {
        let r = integrate(|x| (-x * x).exp(), -10.0, 10.0, QuadOptions::rel(1e-13)).unwrap();
        assert!((r.value - std::f64::consts::PI.sqrt()).abs() < 1e-12);
        let r = integrate(|x| x.sqrt(), 0.0, 1.0, QuadOptions::rel(1e-10)).unwrap();
        assert!((r.value - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn triangle_area() {
        let r = integrate_2d(|_, _| 1.0, 0.0, 1.0, |x| (0.0, x), QuadOptions::rel(1e-12), QuadOptions::rel(1e-12)).unwrap();
        assert!((r.value - 0.5).abs() < 1e-13);
    }

    #[test]
    fn reports_nonconvergence() {
        let opts = QuadOptions { max_subdivisions: 3, ..QuadOptions::rel(1e-14) };
        assert!(integrate(|x| (1.0 / x).sin(), 1e-6, 1.0, opts).is_err());
    }
}
