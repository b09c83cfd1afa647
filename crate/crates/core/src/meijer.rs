//! Meijer G-function by numerical Mellin-Barnes contour integration.
//!
//! ```text
//!                      1     /   prod_{j<=m} G(b_j - s) prod_{j<=n} G(1 - a_j + s)
//! G^{m,n}_{p,q}(z) = ------  |   -------------------------------------------------- z^s ds
//!                    2 pi i  /L  prod_{j>m} G(1 - b_j + s) prod_{j>n} G(a_j - s)
//! ```
//!
//! `L` is the vertical line `Re s = c`, where `c` separates the left poles
//! (`s = a_j - 1 - k`, `j <= n`) from the right poles (`s = b_j + k`, `j <= m`).
//! Only real `z > 0` and real parameters are supported, so the integrand is
//! conjugate-symmetric and the integral reduces to `(1/pi) int_0^inf Re g(c + iy) dy`,
//! evaluated with the trapezoidal rule. For analytic integrands that rule
//! converges geometrically, so nodes are doubled until two successive
//! estimates agree.
//!
//! The abscissa defaults to the minimiser of the integrand on the real segment
//! inside the strip (a saddle-point choice). A fixed abscissa loses every
//! significant digit when the result is many orders of magnitude smaller than
//! the integrand peak, which is exactly the high-SNR BEP regime.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::special::ln_gamma_complex;

/// Parameters of one `G^{m,n}_{p,q}` function.
#[derive(Debug, Clone, PartialEq)]
pub struct MeijerG {
    pub m: usize,
    pub n: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

/// Contour and refinement settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContourConfig {
    /// `None` picks the saddle point inside the admissible strip.
    pub abscissa: Option<f64>,
    /// `None` scans outwards until the integrand drops `tail_log_drop` below its peak.
    pub half_height: Option<f64>,
    pub initial_nodes: usize,
    pub max_nodes: usize,
    /// Stop once successive node doublings differ by less than this (relative).
    pub rel_tol: f64,
    pub tail_log_drop: f64,
}

impl Default for ContourConfig {
    fn default() -> Self {
        Self {
            abscissa: None,
            half_height: None,
            initial_nodes: 64,
            max_nodes: 1 << 17,
            rel_tol: 1e-8,
            tail_log_drop: 46.0,
        }
    }
}

/// A fully specified contour evaluation (the resolved settings).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MeijerGSpec {
    pub abscissa: f64,
    pub half_height: f64,
    pub nodes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeijerEval {
    pub value: f64,
    /// `ln |value|`; finite even when `value` underflows.
    pub ln_abs: f64,
    pub spec: MeijerGSpec,
    /// Last successive-doubling difference relative to the estimate.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MeijerError {
    #[error("empty contour strip: left poles reach {left}, right poles start at {right}")]
    NoStrip { left: f64, right: f64 },
    #[error("abscissa {abscissa} outside the strip ({left}, {right})")]
    BadAbscissa { abscissa: f64, left: f64, right: f64 },
    #[error("argument must be finite and > 0 (got {0})")]
    BadArgument(f64),
    #[error("contour integral did not converge: residual {residual:.3e} at {nodes} nodes")]
    NotConverged { residual: f64, nodes: usize },
}

impl MeijerG {
    pub fn new(m: usize, n: usize, a: Vec<f64>, b: Vec<f64>) -> Self {
        assert!(m <= b.len() && n <= a.len(), "m <= q and n <= p required");
        Self { m, n, a, b }
    }

    /// Open interval `(left, right)` of admissible abscissas.
    pub fn strip(&self) -> (f64, f64) {
        let left = self.a[..self.n]
            .iter()
            .map(|&aj| aj - 1.0)
            .fold(f64::NEG_INFINITY, f64::max);
        let right = self.b[..self.m].iter().copied().fold(f64::INFINITY, f64::min);
        (left, right)
    }

    /// Log of the integrand without the `z^s` factor.
    pub fn ln_kernel(&self, s: Complex64) -> Complex64 {
        let one = Complex64::new(1.0, 0.0);
        let mut acc = Complex64::new(0.0, 0.0);
        for (j, &bj) in self.b.iter().enumerate() {
            if j < self.m {
                acc += ln_gamma_complex(bj - s);
            } else {
                acc -= ln_gamma_complex(one - bj + s);
            }
        }
        for (j, &aj) in self.a.iter().enumerate() {
            if j < self.n {
                acc += ln_gamma_complex(one - aj + s);
            } else {
                acc -= ln_gamma_complex(aj - s);
            }
        }
        acc
    }

    fn ln_integrand(&self, s: Complex64, ln_z: f64) -> Complex64 {
        self.ln_kernel(s) + s * ln_z
    }

    /// Saddle-point abscissa: minimiser of the (real, positive) integrand on the
    /// real segment, kept a little away from both pole families.
    pub fn saddle_abscissa(&self, z: f64) -> Result<f64, MeijerError> {
        let (left, right) = self.strip();
        if !(left < right) {
            return Err(MeijerError::NoStrip { left, right });
        }
        let ln_z = z.ln();
        let (lo, hi) = match (left.is_finite(), right.is_finite()) {
            (true, true) => {
                let margin = (0.1 * (right - left)).min(0.25);
                (left + margin, right - margin)
            }
            (true, false) => (left + 0.25, left + 200.0),
            (false, true) => (right - 200.0, right - 0.25),
            (false, false) => (-100.0, 100.0),
        };
        let f = |c: f64| self.ln_integrand(Complex64::new(c, 0.0), ln_z).re;
        Ok(golden_min(f, lo, hi, 1e-6))
    }

    /// Evaluates `G(z)` for real `z > 0`.
    pub fn eval(&self, z: f64, cfg: &ContourConfig) -> Result<MeijerEval, MeijerError> {
        if !(z.is_finite() && z > 0.0) {
            return Err(MeijerError::BadArgument(z));
        }
        let (left, right) = self.strip();
        if !(left < right) {
            return Err(MeijerError::NoStrip { left, right });
        }
        let c = match cfg.abscissa {
            Some(c) => {
                if !(c > left && c < right) {
                    return Err(MeijerError::BadAbscissa { abscissa: c, left, right });
                }
                c
            }
            None => self.saddle_abscissa(z)?,
        };
        let ln_z = z.ln();
        let base = self.ln_integrand(Complex64::new(c, 0.0), ln_z).re;
        // normalised integrand g(c + iy) / g(c)
        let h = |y: f64| -> f64 {
            let l = self.ln_integrand(Complex64::new(c, y), ln_z);
            let mag = l.re - base;
            if mag < -745.0 {
                0.0
            } else {
                mag.exp() * l.im.cos()
            }
        };
        let half_height = match cfg.half_height {
            Some(y) => y,
            None => self.scan_half_height(c, ln_z, base, cfg.tail_log_drop),
        };

        let mut nodes = cfg.initial_nodes.max(8);
        let mut prev = trapezoid(&h, half_height, nodes);
        let mut residual = f64::INFINITY;
        while nodes < cfg.max_nodes {
            nodes *= 2;
            let next = refine_trapezoid(&h, half_height, nodes, prev);
            let scale = next.abs().max(f64::MIN_POSITIVE);
            residual = (next - prev).abs() / scale;
            prev = next;
            if residual < cfg.rel_tol {
                let integral = prev / PI;
                let ln_abs = base + integral.abs().ln();
                let value = integral.signum() * ln_abs.exp();
                return Ok(MeijerEval {
                    value,
                    ln_abs,
                    spec: MeijerGSpec {
                        abscissa: c,
                        half_height,
                        nodes,
                    },
                    residual,
                });
            }
        }
        Err(MeijerError::NotConverged { residual, nodes })
    }

    /// Smallest height beyond which the integrand stays `drop` (in log) under its peak.
    fn scan_half_height(&self, c: f64, ln_z: f64, base: f64, drop: f64) -> f64 {
        let step = 0.5;
        let mut peak = 0.0f64;
        let mut y = 0.0;
        let mut below_since: Option<f64> = None;
        // Stirling: eventually decays like exp(-k pi |y| / 2); 4000 is far beyond any case used here.
        while y < 4000.0 {
            y += step;
            let mag = self.ln_integrand(Complex64::new(c, y), ln_z).re - base;
            peak = peak.max(mag);
            if mag < peak - drop {
                let start = *below_since.get_or_insert(y);
                if y - start >= 2.0 {
                    return start;
                }
            } else {
                below_since = None;
            }
        }
        y
    }
}

/// Trapezoid on `[0, Y]` for an even integrand, counting the `y = 0` node with weight 1/2.
fn trapezoid<F: Fn(f64) -> f64>(h: &F, y_max: f64, nodes: usize) -> f64 {
    let step = y_max / nodes as f64;
    let mut sum = 0.5 * h(0.0);
    for k in 1..nodes {
        sum += h(k as f64 * step);
    }
    sum += 0.5 * h(y_max);
    sum * step
}

/// Halves the step of a previous trapezoid estimate by adding the midpoints.
fn refine_trapezoid<F: Fn(f64) -> f64>(h: &F, y_max: f64, nodes: usize, coarse: f64) -> f64 {
    let step = y_max / nodes as f64;
    let mut mid = 0.0;
    for k in (1..nodes).step_by(2) {
        mid += h(k as f64 * step);
    }
    0.5 * coarse + mid * step
}

fn golden_min<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while (b - a).abs() > tol {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        }
    }
    0.5 * (a + b)
}
