//! Elementary special functions used by the signal model and the kernels.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;

/// `sin(pi * x)` with exact argument reduction, so large `x` keeps full relative accuracy.
pub fn sin_pi(x: f64) -> f64 {
    if !x.is_finite() {
        return f64::NAN;
    }
    // r lies in [-1, 1] and the subtraction is exact for |x| < 2^52.
    let r = x - 2.0 * (0.5 * x).round();
    let r = if r > 0.5 {
        1.0 - r
    } else if r < -0.5 {
        -1.0 - r
    } else {
        r
    };
    (PI * r).sin()
}

/// Normalized sinc, `sin(pi u) / (pi u)` with `sinc(0) = 1`.
pub fn sinc(u: f64) -> f64 {
    if u == 0.0 {
        return 1.0;
    }
    if u.abs() < 1e-5 {
        let z = PI * u;
        let z2 = z * z;
        return 1.0 - z2 / 6.0 + z2 * z2 / 120.0;
    }
    sin_pi(u) / (PI * u)
}

const SERIES_LIMIT: f64 = 4.0;
const EPS: f64 = 1e-17;
const MAX_TERMS: usize = 200;

/// Sine integral `Si(x) = int_0^x sin(t)/t dt`.
///
/// Power series up to |x| = 4, otherwise the continued fraction for `E1(ix)`
/// evaluated with the modified Lentz method. Relative accuracy is a few ulp.
pub fn si(x: f64) -> f64 {
    let t = x.abs();
    let v = if t == 0.0 {
        0.0
    } else if t <= SERIES_LIMIT {
        si_series(t)
    } else if t.is_infinite() {
        FRAC_PI_2
    } else {
        si_continued_fraction(t)
    };
    v.copysign(x)
}

fn si_series(t: f64) -> f64 {
    let t2 = t * t;
    let mut power = t; // t^(2k+1) / (2k+1)!
    let mut sum = t;
    for k in 1..MAX_TERMS {
        let kf = k as f64;
        power *= -t2 / ((2.0 * kf) * (2.0 * kf + 1.0));
        let term = power / (2.0 * kf + 1.0);
        sum += term;
        if term.abs() < EPS * sum.abs() {
            break;
        }
    }
    sum
}

fn si_continued_fraction(t: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = Complex64::new(1.0, t);
    let mut c = Complex64::new(1.0 / TINY, 0.0);
    let mut d = Complex64::new(1.0, 0.0) / b;
    let mut h = d;
    for i in 2..MAX_TERMS * 10 {
        let a = -((i - 1) as f64).powi(2);
        b += Complex64::new(2.0, 0.0);
        d = Complex64::new(1.0, 0.0) / (d * a + b);
        c = b + Complex64::new(a, 0.0) / c;
        let del = c * d;
        h *= del;
        if (del - 1.0).norm() < EPS {
            break;
        }
    }
    let (s, co) = t.sin_cos();
    let h = Complex64::new(co, -s) * h;
    FRAC_PI_2 + h.im
}
