use crate::error::{ensure, Error, Result};

/// Degrees of freedom of an F distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FParams {
    pub d1: f64,
    pub d2: f64,
}

impl FParams {
    pub fn new(d1: f64, d2: f64) -> Result<Self> {
        ensure!(d1 >= 1.0 && d2 >= 1.0, "F degrees of freedom must be >= 1, got ({d1}, {d2})");
        Ok(Self { d1, d2 })
    }
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Continued fraction for I_x(a, b), modified Lentz.
fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let max_iter = 10_000 + (a.max(b).sqrt() as usize) * 20;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=max_iter {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b).
///
/// `x` is clamped to `[0, 1]`; `a` and `b` must be positive.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    debug_assert!(a > 0.0 && b > 0.0);
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_continued_fraction(x, a, b) / a
    } else {
        1.0 - ln_front.exp() * beta_continued_fraction(1.0 - x, b, a) / b
    }
}

fn beta_density(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    ((a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - ln_beta(a, b)).exp()
}

/// Inverse of `x -> I_x(a, b)` by bracketed Newton with bisection fallback.
pub fn inverse_regularized_beta(p: f64, a: f64, b: f64) -> Result<f64> {
    ensure!(p > 0.0 && p < 1.0, "probability must lie in (0, 1), got {p}");
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut x = 0.5;
    for _ in 0..1_000 {
        let f = regularized_incomplete_beta(x, a, b) - p;
        if f == 0.0 {
            return Ok(x);
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= 4.0 * f64::EPSILON * x.max(f64::MIN_POSITIVE) {
            return Ok(x);
        }
        let dens = beta_density(x, a, b);
        let newton = if dens > 0.0 { x - f / dens } else { f64::NAN };
        x = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    if (hi - lo) < 1e-12 {
        Ok(x)
    } else {
        Err(Error::numerical(format!("incomplete-beta inversion did not converge for p={p}, a={a}, b={b}")))
    }
}

/// CDF of the F distribution with `(d1, d2)` degrees of freedom.
pub fn f_cdf(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let y = d1 * x / (d1 * x + d2);
    regularized_incomplete_beta(y, 0.5 * d1, 0.5 * d2)
}

pub fn f_pdf(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let ln = 0.5 * d1 * (d1 / d2).ln() + (0.5 * d1 - 1.0) * x.ln()
        - 0.5 * (d1 + d2) * (1.0 + d1 * x / d2).ln()
        - ln_beta(0.5 * d1, 0.5 * d2);
    ln.exp()
}

/// Quantile of the F distribution: the `x` with `f_cdf(x, d1, d2) = p`.
pub fn f_quantile(p: f64, d1: f64, d2: f64) -> Result<f64> {
    FParams::new(d1, d2)?;
    let y = inverse_regularized_beta(p, 0.5 * d1, 0.5 * d2)?;
    if y >= 1.0 {
        return Err(Error::numerical(format!("F quantile overflow at p={p}")));
    }
    Ok(d2 * y / (d1 * (1.0 - y)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_matches_factorials() {
        let mut fact = 1.0_f64;
        for n in 1..20 {
            assert!((ln_gamma(n as f64) - fact.ln()).abs() < 1e-12, "n={n}");
            fact *= n as f64;
        }
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
    }

    #[test]
    fn f_cdf_at_one_with_equal_dofs_is_half() {
        for d in [1.0, 2.0, 5.0, 17.0, 300.0] {
            let e = (f_cdf(1.0, d, d) - 0.5).abs();
            assert!(e < 1e-12, "d={d} err={e:e}");
        }
    }

    #[test]
    fn quantile_round_trip() {
        for p in [0.01, 0.5, 0.99] {
            let x = f_quantile(p, 3.0, 40.0).unwrap();
            assert!((f_cdf(x, 3.0, 40.0) - p).abs() < 1e-8);
        }
    }

    #[test]
    fn quantile_rejects_bad_probability() {
        assert!(matches!(f_quantile(0.0, 2.0, 3.0), Err(Error::Validation(_))));
        assert!(matches!(f_quantile(1.0, 2.0, 3.0), Err(Error::Validation(_))));
        assert!(matches!(f_quantile(0.5, 0.5, 3.0), Err(Error::Validation(_))));
    }

    #[test]
    fn incomplete_beta_edge_values() {
        assert_eq!(regularized_incomplete_beta(0.0, 2.0, 3.0), 0.0);
        assert_eq!(regularized_incomplete_beta(1.0, 2.0, 3.0), 1.0);
        // I_x(1, 1) = x
        assert!((regularized_incomplete_beta(0.3, 1.0, 1.0) - 0.3).abs() < 1e-15);
        // I_x(a, 1) = x^a
        assert!((regularized_incomplete_beta(0.7, 3.0, 1.0) - 0.343).abs() < 1e-14);
    }

    #[test]
    fn density_integrates_to_cdf() {
        // trapezoid on a fine grid as an independent check of the CDF
        let (d1, d2) = (4.0, 9.0);
        let upper = 2.5;
        let n = 200_000;
        let h = upper / n as f64;
        let mut acc = 0.5 * (f_pdf(0.0, d1, d2) + f_pdf(upper, d1, d2));
        for i in 1..n {
            acc += f_pdf(i as f64 * h, d1, d2);
        }
        assert!((acc * h - f_cdf(upper, d1, d2)).abs() < 1e-8);
    }
}
