//! Gamma-type special functions.

use num_complex::Complex64;
use std::f64::consts::PI;

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Complex Gamma function (Lanczos, with reflection for `Re z < 1/2`).
pub fn gamma(z: Complex64) -> Complex64 {
    if z.re < 0.5 {
        let s = (Complex64::from(PI) * z).sin();
        Complex64::from(PI) / (s * gamma(Complex64::from(1.0) - z))
    } else {
        let z = z - 1.0;
        let mut x = Complex64::from(LANCZOS_COEFFS[0]);
        for (i, &c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
            x += c / (z + i as f64);
        }
        let t = z + LANCZOS_G + 0.5;
        (2.0 * PI).sqrt() * t.powc(z + 0.5) * (-t).exp() * x
    }
}

/// `1/Γ(z)`, which is entire; exactly zero at the non-positive integers.
pub fn recip_gamma(z: Complex64) -> Complex64 {
    if z.im == 0.0 && z.re <= 0.0 && z.re == z.re.round() {
        return Complex64::new(0.0, 0.0);
    }
    gamma(z).inv()
}

/// `ln Γ(x)` for real `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    if x < 0.5 {
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS_COEFFS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, &c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Upper incomplete gamma `Γ(s, x)` for `s > 0`, `x ≥ 0` (not regularized).
pub fn upper_gamma(s: f64, x: f64) -> f64 {
    debug_assert!(s > 0.0 && x >= 0.0);
    let full = ln_gamma(s).exp();
    if x == 0.0 {
        return full;
    }
    if x < s + 1.0 {
        // lower series, then complement
        let mut term = 1.0 / s;
        let mut sum = term;
        let mut ap = s;
        for _ in 0..1000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        let lower = sum * (-x + s * x.ln()).exp();
        (full - lower).max(0.0)
    } else {
        // Lentz continued fraction
        let tiny = 1e-300;
        let mut b = x + 1.0 - s;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..1000 {
            let an = -(i as f64) * (i as f64 - s);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (-x + s * x.ln()).exp() * h
    }
}

/// `n!` as a float.
pub fn factorial(n: u32) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gamma_at_integers_and_half() {
        for n in 1..12u32 {
            let g = gamma(Complex64::from(n as f64));
            assert_relative_eq!(g.re, factorial(n - 1), max_relative = 1e-13);
            assert!(g.im.abs() < 1e-10);
        }
        assert_relative_eq!(gamma(Complex64::from(0.5)).re, PI.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(gamma(Complex64::from(-0.5)).re, -2.0 * PI.sqrt(), max_relative = 1e-13);
    }

    #[test]
    fn gamma_satisfies_functional_equation_off_axis() {
        for &z in &[Complex64::new(0.3, 1.7), Complex64::new(1.0, 1.0), Complex64::new(-1.4, 3.0)] {
            let lhs = gamma(z + 1.0);
            let rhs = z * gamma(z);
            assert!((lhs - rhs).norm() < 1e-12 * rhs.norm());
        }
        // |Γ(iy)|² = π / (y sinh(πy))
        let y = 2.0f64;
        let m = gamma(Complex64::new(0.0, y)).norm_sqr();
        assert_relative_eq!(m, PI / (y * (PI * y).sinh()), max_relative = 1e-12);
    }

    #[test]
    fn reciprocal_gamma_vanishes_at_poles() {
        for k in 0..5 {
            assert_eq!(recip_gamma(Complex64::from(-(k as f64))), Complex64::new(0.0, 0.0));
        }
    }

    #[test]
    fn upper_gamma_closed_forms() {
        // Γ(1, x) = e^{-x};  Γ(2, x) = (1 + x) e^{-x}
        for &x in &[0.1, 1.0, 3.0, 10.0, 40.0] {
            assert_relative_eq!(upper_gamma(1.0, x), (-x).exp(), max_relative = 1e-12);
            assert_relative_eq!(upper_gamma(2.0, x), (1.0 + x) * (-x).exp(), max_relative = 1e-12);
        }
        assert_relative_eq!(upper_gamma(3.5, 0.0), ln_gamma(3.5).exp(), max_relative = 1e-14);
    }
}
