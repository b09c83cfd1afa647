//! Special functions needed by the KPI closed forms.

use num_complex::Complex64;
use std::f64::consts::PI;

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
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

/// Natural log of the complex Gamma function.
///
/// The imaginary part is only determined modulo 2*pi; callers exponentiate
/// sums of these values so the branch does not matter. The real part,
/// `ln|Gamma(z)|`, is exact up to rounding.
pub fn ln_gamma_complex(z: Complex64) -> Complex64 {
    if z.im < 0.0 {
        return ln_gamma_complex(z.conj()).conj();
    }
    if z.re < 0.5 {
        // Reflection: Gamma(z) Gamma(1-z) = pi / sin(pi z)
        return Complex64::new(PI.ln(), 0.0) - ln_sin_pi(z) - ln_gamma_complex(Complex64::new(1.0, 0.0) - z);
    }
    let z = z - 1.0;
    let mut x = Complex64::new(LANCZOS_COEF[0], 0.0);
    for (k, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        x += c / (z + k as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (z + 0.5) * t.ln() - t + x.ln()
}

/// `ln sin(pi z)` for `Im z >= 0`, without overflow at large imaginary parts.
fn ln_sin_pi(z: Complex64) -> Complex64 {
    let v = z.im;
    if v < 20.0 {
        return (z * PI).sin().ln();
    }
    // sin(pi z) = (i/2) e^{-i pi z} (1 - e^{2 i pi z}); the second term is tiny for Im z > 0.
    let i = Complex64::i();
    let ln_half_i = Complex64::new(0.5f64.ln(), PI / 2.0);
    -i * PI * z + ln_half_i + (-(i * 2.0 * PI * z).exp()).ln_1p()
}

trait Ln1p {
    fn ln_1p(self) -> Self;
}

impl Ln1p for Complex64 {
    fn ln_1p(self) -> Self {
        if self.norm() < 1e-8 {
            self - self * self / 2.0
        } else {
            (self + 1.0).ln()
        }
    }
}

/// `ln Gamma(x)` for real `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// `ln B(a, b)`.
pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Conditional bit-error probability `Gamma(tau2, tau1 * gamma) / (2 Gamma(tau2))`.
pub fn conditional_bep(tau1: f64, tau2: f64, gamma: f64) -> f64 {
    let x = tau1 * gamma;
    if x <= 0.0 {
        return 0.5;
    }
    if tau2 == 1.0 {
        0.5 * (-x).exp()
    } else if tau2 == 0.5 {
        0.5 * statrs::function::erf::erfc(x.sqrt())
    } else {
        0.5 * statrs::function::gamma::gamma_ur(tau2, x)
    }
}

/// `ln` of [`conditional_bep`], finite far past the point where the value underflows.
pub fn ln_conditional_bep(tau1: f64, tau2: f64, gamma: f64) -> f64 {
    let x = tau1 * gamma;
    if x < 500.0 {
        return conditional_bep(tau1, tau2, gamma).ln();
    }
    if tau2 == 1.0 {
        return 0.5f64.ln() - x;
    }
    // Gamma(s, x) ~ x^(s-1) e^(-x) sum_k (s-1)(s-2)..(s-k) / x^k
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..8 {
        term *= (tau2 - k as f64) / x;
        sum += term;
    }
    0.5f64.ln() + (tau2 - 1.0) * x.ln() - x + sum.ln() - ln_gamma(tau2)
}

/// `ln(1 + e^v)` without overflow or cancellation.
pub fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lgamma_real(x: f64) -> f64 {
        ln_gamma_complex(Complex64::new(x, 0.0)).re
    }

    #[test]
    fn matches_real_factorials() {
        let mut fact = 1.0f64;
        for n in 1..30 {
            // Gamma(n) = (n-1)!
            assert!((lgamma_real(n as f64) - fact.ln()).abs() < 1e-12 * fact.ln().abs().max(1.0), "n={n}");
            fact *= n as f64;
        }
        assert!((lgamma_real(0.5) - PI.sqrt().ln()).abs() < 1e-14);
    }

    #[test]
    fn reflection_region() {
        // Gamma(-0.5) = -2 sqrt(pi)
        let v = ln_gamma_complex(Complex64::new(-0.5, 0.0));
        assert!((v.re - (2.0 * PI.sqrt()).ln()).abs() < 1e-13);
        let g = v.exp();
        assert!((g.re + 2.0 * PI.sqrt()).abs() < 1e-12 && g.im.abs() < 1e-12);
    }

    #[test]
    fn modulus_on_imaginary_line() {
        // |Gamma(iy)|^2 = pi / (y sinh(pi y))
        for &y in &[0.3, 1.0, 5.0, 30.0, 150.0] {
            let got = ln_gamma_complex(Complex64::new(0.0, y)).re;
            let sinh_ln = PI * y + (-(-2.0 * PI * y).exp()).ln_1p() - 2f64.ln();
            let want = 0.5 * (PI.ln() - y.ln() - sinh_ln);
            assert!((got - want).abs() < 1e-11 * want.abs().max(1.0), "y={y} got={got} want={want}");
        }
        // |Gamma(1/2 + iy)|^2 = pi / cosh(pi y)
        for &y in &[0.7, 12.0, 80.0] {
            let got = ln_gamma_complex(Complex64::new(0.5, y)).re;
            let cosh_ln = PI * y + ((-2.0 * PI * y).exp()).ln_1p() - 2f64.ln();
            let want = 0.5 * (PI.ln() - cosh_ln);
            assert!((got - want).abs() < 1e-11 * want.abs().max(1.0), "y={y}");
        }
    }

    #[test]
    fn recurrence_holds_off_axis() {
        // ln Gamma(z+1) - ln Gamma(z) = ln z (mod 2 pi i)
        for &(x, y) in &[(-2.3, 1.7), (0.2, 4.0), (3.5, -9.0), (41.5, 60.0), (-0.7, 45.0)] {
            let z = Complex64::new(x, y);
            let d = ln_gamma_complex(z + 1.0) - ln_gamma_complex(z) - z.ln();
            assert!(d.re.abs() < 1e-10, "z={z} d={d}");
            let k = (d.im / (2.0 * PI)).round();
            assert!((d.im - 2.0 * PI * k).abs() < 1e-9, "z={z} d={d}");
        }
    }

    #[test]
    fn conditional_bep_limits() {
        assert_eq!(conditional_bep(1.0, 0.5, 0.0), 0.5);
        assert!((conditional_bep(1.0, 1.0, 2.0) - 0.5 * (-2.0f64).exp()).abs() < 1e-16);
        // coherent BPSK: Q(sqrt(2 gamma)) = erfc(sqrt(gamma))/2
        let g: f64 = 1.3;
        let want = 0.5 * statrs::function::erf::erfc(g.sqrt());
        assert!((conditional_bep(1.0, 0.5, g) - want).abs() < 1e-15);
        // general path agrees with the fast paths
        let general = 0.5 * statrs::function::gamma::gamma_ur(0.5, 0.5 * g);
        let d = (conditional_bep(0.5, 0.5, g) - general).abs();
        assert!(d < 1e-9, "{d}");
    }

    #[test]
    fn ln_bep_continuous_at_switch() {
        for &(t1, t2) in &[(1.0, 0.5), (0.5, 0.5), (1.0, 1.0)] {
            let below = ln_conditional_bep(t1, t2, 499.999 / t1);
            let above = ln_conditional_bep(t1, t2, 500.0 / t1);
            assert!((below - above).abs() < 2e-3, "{below} {above}");
        }
        // erfc asymptotics at x = 900: ln(0.5 erfc(30)) from the known series
        let x: f64 = 900.0;
        let want = 0.5f64.ln() - x - (x.sqrt() * PI.sqrt()).ln() + (1.0 - 0.5 / x + 0.75 / (x * x) - 1.875 / (x * x * x)).ln();
        assert!((ln_conditional_bep(1.0, 0.5, x) - want).abs() < 1e-9);
    }

    #[test]
    fn softplus_limits() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(800.0), 800.0);
        assert!((softplus(-50.0) - (-50.0f64).exp()).abs() < 1e-30);
    }
}
