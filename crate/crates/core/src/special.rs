//! Scalar special functions and the standard normal / Student-t distributions
//! used throughout the crate.

use statrs::function::beta::{beta_reg, inv_beta_reg};
use libm::erfc;
use statrs::function::erf::erfc_inv;
use statrs::function::gamma::ln_gamma;

pub use statrs::function::gamma::digamma;

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

pub fn norm_logpdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile. Returns ±inf at the endpoints.
pub fn norm_ppf(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let x = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    // One Halley step against the accurate CDF.
    let err = if x < 0.0 { norm_cdf(x) - p } else { (1.0 - p) - norm_cdf(-x) };
    let u = err / norm_pdf(x);
    if u.is_finite() {
        x - u / (1.0 + 0.5 * x * u)
    } else {
        x
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Trigamma via recurrence up to x >= 10 then the asymptotic series.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    if x <= 0.0 && x == x.floor() {
        return f64::INFINITY;
    }
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let r = 1.0 / (x * x);
    acc + 1.0 / x
        + r / 2.0
        + r / x * (1.0 / 6.0 - r * (1.0 / 30.0 - r * (1.0 / 42.0 - r * (1.0 / 30.0 - r * 5.0 / 66.0))))
}

pub fn ln_gamma_fn(x: f64) -> f64 {
    ln_gamma(x)
}

/// Log density of the (location 0, scale 1) Student-t with `nu` degrees of freedom.
pub fn t_logpdf(x: f64, nu: f64) -> f64 {
    ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * std::f64::consts::PI).ln()
        - 0.5 * (nu + 1.0) * (x * x / nu).ln_1p()
}

/// Constant part of [`t_logpdf`], for callers evaluating many points at one `nu`.
pub fn t_log_norm_const(nu: f64) -> f64 {
    ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * std::f64::consts::PI).ln()
}

pub fn t_cdf(x: f64, nu: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x.is_infinite() {
        return if x > 0.0 { 1.0 } else { 0.0 };
    }
    if nu > 1e7 {
        return norm_cdf(x);
    }
    let x2 = x * x;
    // Two complementary forms keep precision near x = 0 and in the tails.
    let tail = if x2 < nu {
        0.5 * (1.0 - beta_reg(0.5, 0.5 * nu, x2 / (nu + x2)))
    } else {
        0.5 * beta_reg(0.5 * nu, 0.5, nu / (nu + x2))
    };
    if x > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

pub fn t_ppf(p: f64, nu: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if nu > 1e7 {
        return norm_ppf(p);
    }
    if p == 0.5 {
        return 0.0;
    }
    let lower = p.min(1.0 - p);
    let mag = match t_upper_quantile_hill(2.0 * lower, nu) {
        Some(q) => q,
        None => t_upper_quantile_beta(2.0 * lower, nu),
    };
    if p < 0.5 {
        -mag
    } else {
        mag
    }
}

/// Positive quantile with two-sided tail probability `two_p`: Hill's
/// approximation refined by Halley steps on the exact tail.
fn t_upper_quantile_hill(two_p: f64, nu: f64) -> Option<f64> {
    let a = 1.0 / (nu - 0.5);
    let b = 48.0 / (a * a);
    let mut c = ((20700.0 * a / b - 98.0) * a - 16.0) * a + 96.36;
    let d = ((94.5 / (b + c) - 3.0) / b + 1.0) * (a * std::f64::consts::FRAC_PI_2).sqrt() * nu;
    let mut y = (d * two_p).powf(2.0 / nu);
    let mut q = if (nu < 2.1 && two_p > 0.5) || y > 0.05 + a {
        let x = norm_ppf(0.5 * two_p);
        y = x * x;
        if nu < 5.0 {
            c += 0.3 * (nu - 4.5) * (x + 0.6);
        }
        c = (((0.05 * d * x - 5.0) * x - 7.0) * x - 2.0) * x + b + c;
        y = (((((0.4 * y + 6.3) * y + 36.0) * y + 94.5) / c - y - 3.0) / b + 1.0) * x;
        (nu * (a * y * y).exp_m1()).sqrt()
    } else {
        y = ((1.0 / (((nu + 6.0) / (nu * y) - 0.089 * d - 0.822) * (nu + 2.0) * 3.0) + 0.5 / (nu + 4.0)) * y - 1.0)
            * (nu + 1.0)
            / (nu + 2.0)
            + 1.0 / y;
        (nu * y).sqrt()
    };
    if !q.is_finite() || q < 0.0 {
        return None;
    }
    let target = 0.5 * two_p;
    let lc = t_log_norm_const(nu);
    for _ in 0..12 {
        let dens = (lc - 0.5 * (nu + 1.0) * (q * q / nu).ln_1p()).exp();
        let x = (t_cdf(-q, nu) - target) / dens;
        if !(dens > 0.0) || !x.is_finite() {
            return None;
        }
        q += x * (1.0 + x * q * (nu + 1.0) / (2.0 * (q * q + nu)));
        // Convergence is cubic: a step this small leaves an error far below 1e-14.
        if x.abs() <= 1e-6 * q.abs() {
            break;
        }
    }
    (q.is_finite() && q >= 0.0).then_some(q)
}

fn t_upper_quantile_beta(two_p: f64, nu: f64) -> f64 {
    if two_p < 0.5 {
        let x = inv_beta_reg(0.5 * nu, 0.5, two_p);
        (nu * (1.0 - x) / x).sqrt()
    } else {
        let y = inv_beta_reg(0.5, 0.5 * nu, 1.0 - two_p);
        (nu * y / (1.0 - y)).sqrt()
    }
}

/// Clamp a probability into the open interval used by copula code.
pub fn clamp_unit(u: f64, eps: f64) -> f64 {
    u.clamp(eps, 1.0 - eps)
}
