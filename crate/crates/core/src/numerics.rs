//! Bracketed root finding and one-dimensional maximisation.

use crate::error::{Error, Result};
use crate::scalar_core::{lit, Real};

/// Bisection on a sign change of `f` over `[lo, hi]`, stopping once the
/// bracket is narrower than `tol`.
pub fn bisect<T: Real, F: FnMut(T) -> T>(mut f: F, mut lo: T, mut hi: T, tol: T) -> Result<T> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == T::zero() {
        return Ok(lo);
    }
    if fhi == T::zero() {
        return Ok(hi);
    }
    if (flo > T::zero()) == (fhi > T::zero()) {
        return Err(Error::NotBracketed(format!(
            "f({lo}) = {flo} and f({hi}) = {fhi} share a sign"
        )));
    }
    for _ in 0..400 {
        let mid = lo + (hi - lo) / lit(2.0);
        if (hi - lo).abs() <= tol || mid == lo || mid == hi {
            break;
        }
        let fm = f(mid);
        if fm == T::zero() {
            return Ok(mid);
        }
        if (fm > T::zero()) == (flo > T::zero()) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(lo + (hi - lo) / lit(2.0))
}

/// Golden-section search for a maximum of a unimodal `f` on `[a, b]`.
/// Returns the best abscissa seen and its value.
pub fn golden_max<T: Real, F: FnMut(T) -> T>(mut f: F, mut a: T, mut b: T, tol: T) -> (T, T) {
    let invphi = (lit::<T>(5.0).sqrt() - T::one()) / lit(2.0);
    let mut c = b - invphi * (b - a);
    let mut d = a + invphi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let (mut best, mut fbest) = if fc >= fd { (c, fc) } else { (d, fd) };
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - invphi * (b - a);
            fc = f(c);
            if fc > fbest {
                best = c;
                fbest = fc;
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + invphi * (b - a);
            fd = f(d);
            if fd > fbest {
                best = d;
                fbest = fd;
            }
        }
    }
    (best, fbest)
}

/// Maximum of `f` over `[a, b]` from a uniform grid, refined by golden
/// section around the `refine` best local grid maxima.
pub fn grid_max<T: Real, F: FnMut(T) -> T>(mut f: F, a: T, b: T, points: usize, refine: usize) -> (T, T) {
    let points = points.max(3);
    let step = (b - a) / T::from_usize(points - 1).unwrap();
    let xs: Vec<T> = (0..points)
        .map(|i| if i + 1 == points { b } else { a + step * T::from_usize(i).unwrap() })
        .collect();
    let vals: Vec<T> = xs.iter().map(|&x| f(x)).collect();
    let mut order: Vec<usize> = (0..points)
        .filter(|&i| {
            let left = i == 0 || vals[i] >= vals[i - 1];
            let right = i + 1 == points || vals[i] >= vals[i + 1];
            left && right && !vals[i].is_nan()
        })
        .collect();
    order.sort_by(|&i, &j| vals[j].partial_cmp(&vals[i]).unwrap_or(std::cmp::Ordering::Equal));
    let (mut best, mut fbest) = match order.first() {
        Some(&i) => (xs[i], vals[i]),
        None => (a, vals[0]),
    };
    let tol = (b - a).abs() * lit(1e-14) + T::epsilon();
    for &i in order.iter().take(refine) {
        let lo = xs[i.saturating_sub(1)];
        let hi = xs[(i + 1).min(points - 1)];
        let (x, fx) = golden_max(&mut f, lo, hi, tol);
        if fx > fbest {
            best = x;
            fbest = fx;
        }
    }
    (best, fbest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bisect_sqrt2() {
        let r = bisect(|x: f64| x * x - 2.0, 0.0, 2.0, 1e-14).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-13);
        assert!(bisect(|x: f64| x * x + 1.0, 0.0, 2.0, 1e-14).is_err());
    }

    #[test]
    fn golden_parabola() {
        let (x, fx) = golden_max(|x: f64| -(x - 0.3).powi(2), 0.0, 1.0, 1e-12);
        assert!((x - 0.3).abs() < 1e-6);
        assert!(fx <= 0.0 && fx > -1e-12);
    }

    #[test]
    fn grid_max_two_bumps() {
        let f = |x: f64| (-(x - 0.2).powi(2) * 400.0).exp() + 1.1 * (-(x - 0.77).powi(2) * 900.0).exp();
        let (x, fx) = grid_max(f, 0.0, 1.0, 101, 3);
        assert!((x - 0.77).abs() < 1e-5);
        assert!((fx - 1.1).abs() < 1e-8);
    }
}
