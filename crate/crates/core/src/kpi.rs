//! Link KPIs of the interference-limited MIMO model: SIR density, downlink
//! ergodic rate, uplink bit-error probability and the eigenvalue ratio zeta.
//!
//! With `a = M_C M_U` and `b` the interference order, `Lambda * gamma` follows a
//! beta-prime law with shapes `(a, b)`:
//!
//! ```text
//! f(gamma) = Lambda (gamma Lambda)^(a-1) / ( B(a, b) (1 + gamma Lambda)^(a+b) )
//! ```
//!
//! Both KPIs have closed forms as Meijer G-functions, evaluated here by contour
//! integration, and an independent direct-quadrature path.

use std::collections::HashMap;
use std::f64::consts::LN_2;
use std::sync::{Mutex, OnceLock};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::exec::{chunk_sizes, substream, Execution};
use crate::meijer::{ContourConfig, MeijerError, MeijerG, MeijerGSpec};
use crate::quadrature::{integrate, QuadConfig};
use crate::special::{ln_beta, ln_conditional_bep, ln_gamma, softplus};
use crate::types::{LinkParams, ModulationScheme};

pub const DEFAULT_ZETA_SAMPLES: usize = 100_000;
pub const DEFAULT_ZETA_SEED: u64 = 0x5EED_2E7A;
const ZETA_CHUNK: usize = 4096;

/// Values below this are reported as exactly zero with `underflow` set.
pub const BEP_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Down,
    Up,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KpiMethod {
    ClosedForm,
    Quadrature,
}

impl std::str::FromStr for KpiMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "closed-form" => Ok(KpiMethod::ClosedForm),
            "quadrature" => Ok(KpiMethod::Quadrature),
            other => Err(format!("unknown method `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KpiError {
    #[error("contour integration failed: {0}")]
    Contour(#[from] MeijerError),
    #[error("quadrature did not converge (estimate {value:e}, error {abs_error:e})")]
    Quadrature { value: f64, abs_error: f64 },
}

/// Monte Carlo estimate of zeta with its delta-method standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZetaEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Default, Clone, Copy)]
struct Moments {
    n: f64,
    x: f64,
    y: f64,
    xx: f64,
    yy: f64,
    xy: f64,
}

impl Moments {
    fn push(&mut self, x: f64, y: f64) {
        self.n += 1.0;
        self.x += x;
        self.y += y;
        self.xx += x * x;
        self.yy += y * y;
        self.xy += x * y;
    }

    fn merge(mut self, o: Moments) -> Moments {
        self.n += o.n;
        self.x += o.x;
        self.y += o.y;
        self.xx += o.xx;
        self.yy += o.yy;
        self.xy += o.xy;
        self
    }
}

/// Draws an `rows x cols` matrix of i.i.d. unit-variance circular complex Gaussians.
pub fn complex_gaussian<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<Complex64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    DMatrix::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re * s, im * s)
    })
}

/// `(lambda_max, sum of eigenvalues)` of `H^H H` using the smaller Gram matrix.
pub fn gram_eigen_summary(h: &DMatrix<Complex64>) -> (f64, f64) {
    let gram = if h.nrows() <= h.ncols() {
        h * h.adjoint()
    } else {
        h.adjoint() * h
    };
    let trace: f64 = (0..gram.nrows()).map(|k| gram[(k, k)].re).sum();
    if gram.nrows() == 1 {
        return (trace, trace);
    }
    let eig = gram.symmetric_eigenvalues();
    let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (max, trace)
}

/// `E[lambda_max] / E[sum lambda_i]` of `H^H H` for an `m_u x m_c` Rayleigh channel.
pub fn zeta(m_c: u32, m_u: u32, samples: usize, seed: u64) -> f64 {
    zeta_estimate(m_c, m_u, samples, seed, Execution::default()).value
}

pub fn zeta_estimate(m_c: u32, m_u: u32, samples: usize, seed: u64, exec: Execution) -> ZetaEstimate {
    assert!(m_c >= 1 && m_u >= 1 && samples >= 1, "zeta needs m_c, m_u, samples >= 1");
    let chunks = chunk_sizes(samples, ZETA_CHUNK);
    let parts = exec.map(chunks.len(), |k| {
        let mut rng = substream(seed, k as u64);
        let mut m = Moments::default();
        for _ in 0..chunks[k] {
            let h = complex_gaussian(&mut rng, m_u as usize, m_c as usize);
            let (x, y) = gram_eigen_summary(&h);
            m.push(x, y);
        }
        m
    });
    let m = parts.into_iter().fold(Moments::default(), Moments::merge);
    let mx = m.x / m.n;
    let my = m.y / m.n;
    let r = mx / my;
    let std_error = if m.n > 1.0 {
        let vx = (m.xx / m.n - mx * mx) * m.n / (m.n - 1.0);
        let vy = (m.yy / m.n - my * my) * m.n / (m.n - 1.0);
        let cxy = (m.xy / m.n - mx * my) * m.n / (m.n - 1.0);
        ((vx - 2.0 * r * cxy + r * r * vy).max(0.0) / m.n).sqrt() / my
    } else {
        f64::NAN
    };
    ZetaEstimate {
        value: r,
        std_error,
        samples,
        seed,
    }
}

fn zeta_cache() -> &'static Mutex<HashMap<(u32, u32), f64>> {
    static CACHE: OnceLock<Mutex<HashMap<(u32, u32), f64>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Zeta at the default sample count and seed, computed once per antenna pair.
pub fn zeta_cached(m_c: u32, m_u: u32) -> f64 {
    let mut cache = zeta_cache().lock().unwrap_or_else(|e| e.into_inner());
    *cache
        .entry((m_c, m_u))
        .or_insert_with(|| zeta(m_c, m_u, DEFAULT_ZETA_SAMPLES, DEFAULT_ZETA_SEED))
}

/// Downlink interference-to-signal scale.
pub fn lambda_down(p: &LinkParams, zeta: f64) -> f64 {
    p.interference_power_down * p.chan_coeff_intf
        / (p.antennas_cbs as f64 * zeta * p.distance_m.powf(-p.path_loss_exp) * p.tx_power_down * p.chan_coeff_data)
}

/// Uplink interference-to-signal scale.
pub fn lambda_up(p: &LinkParams, zeta_up: f64) -> f64 {
    p.interference_power_up * p.chan_coeff_intf_up / (p.antennas_rs as f64 * zeta_up * p.tx_power_up * p.chan_coeff_data_up)
}

/// `(Lambda, a, b)` of the SIR law in the given direction.
pub fn sir_law(p: &LinkParams, zeta: f64, dir: Direction) -> (f64, f64, f64) {
    let a = p.signal_order() as f64;
    match dir {
        Direction::Down => (lambda_down(p, zeta), a, p.interference_order_down() as f64),
        Direction::Up => (lambda_up(p, zeta), a, p.interference_order_up() as f64),
    }
}

/// Log density of the beta-prime SIR law.
pub fn ln_sir_pdf_law(gamma: f64, lambda: f64, a: f64, b: f64) -> f64 {
    if gamma <= 0.0 {
        return if a > 1.0 {
            f64::NEG_INFINITY
        } else if a == 1.0 {
            lambda.ln() - ln_beta(a, b)
        } else {
            f64::INFINITY
        };
    }
    let v = (gamma * lambda).ln();
    lambda.ln() + (a - 1.0) * v - ln_beta(a, b) - (a + b) * softplus(v)
}

/// Downlink SIR density.
pub fn sir_pdf(gamma: f64, p: &LinkParams, zeta: f64) -> f64 {
    sir_pdf_dir(gamma, p, zeta, Direction::Down)
}

pub fn sir_pdf_dir(gamma: f64, p: &LinkParams, zeta: f64, dir: Direction) -> f64 {
    let (l, a, b) = sir_law(p, zeta, dir);
    ln_sir_pdf_law(gamma, l, a, b).exp()
}

/// SIR distribution function, `I_x(a, b)` with `x = gamma Lambda / (1 + gamma Lambda)`.
pub fn sir_cdf_law(gamma: f64, lambda: f64, a: f64, b: f64) -> f64 {
    if gamma <= 0.0 {
        return 0.0;
    }
    let t = gamma * lambda;
    statrs::function::beta::beta_reg(a, b, t / (1.0 + t))
}

pub fn sir_cdf_dir(gamma: f64, p: &LinkParams, zeta: f64, dir: Direction) -> f64 {
    let (l, a, b) = sir_law(p, zeta, dir);
    sir_cdf_law(gamma, l, a, b)
}

/// `G^{3,2}_{3,3}` whose value times `1/(ln2 Gamma(a) Gamma(b))` is the rate per hertz.
pub fn downlink_meijer(p: &LinkParams) -> MeijerG {
    let a = p.signal_order() as f64;
    let b = p.interference_order_down() as f64;
    MeijerG::new(3, 2, vec![1.0 - b, 0.0, 1.0], vec![a, 0.0, 0.0])
}

/// `G^{1,3}_{3,2}` whose value over `2 Gamma(tau2) Gamma(a) Gamma(b_up)` is the BEP.
pub fn uplink_meijer(p: &LinkParams, m: ModulationScheme) -> MeijerG {
    let a = p.signal_order() as f64;
    let b = p.interference_order_up() as f64;
    MeijerG::new(1, 3, vec![1.0 - b, 1.0, 1.0 - m.tau2()], vec![a, 0.0])
}

/// A rate together with how it was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEval {
    pub bps: f64,
    pub per_hz: f64,
    pub contour: Option<MeijerGSpec>,
}

/// Downlink ergodic rate in bit/s.
pub fn downlink_rate(p: &LinkParams, zeta: f64, method: KpiMethod) -> Result<f64, KpiError> {
    downlink_rate_eval(p, zeta, method).map(|r| r.bps)
}

pub fn downlink_rate_eval(p: &LinkParams, zeta: f64, method: KpiMethod) -> Result<RateEval, KpiError> {
    let (lambda, a, b) = sir_law(p, zeta, Direction::Down);
    let (ln_per_hz, contour) = match method {
        KpiMethod::ClosedForm => {
            let ev = downlink_meijer(p).eval(lambda, &ContourConfig::default())?;
            (ev.ln_abs - ln_gamma(a) - ln_gamma(b) - LN_2.ln(), Some(ev.spec))
        }
        KpiMethod::Quadrature => {
            let ln_h = |u: f64| softplus(u).ln() - LN_2.ln() + u + ln_sir_pdf_law(u.exp(), lambda, a, b);
            let centre = (a / (b * lambda)).ln();
            (integrate_log_space(ln_h, &[centre, 0.0])?, None)
        }
    };
    let per_hz = ln_per_hz.exp();
    let bps = if p.bandwidth_hz == 0.0 { 0.0 } else { p.bandwidth_hz * per_hz };
    Ok(RateEval { bps, per_hz, contour })
}

/// Uplink BEP, clamped to `(0, 0.5]`; `underflow` marks values below [`BEP_FLOOR`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bep {
    pub value: f64,
    /// Natural log of the unclamped value; stays finite after underflow.
    pub ln_value: f64,
    pub underflow: bool,
}

impl Bep {
    fn from_ln(ln_value: f64) -> Self {
        let ln_value = ln_value.min(0.5f64.ln());
        let raw = ln_value.exp();
        if raw < BEP_FLOOR {
            Bep {
                value: 0.0,
                ln_value,
                underflow: true,
            }
        } else {
            Bep {
                value: raw,
                ln_value,
                underflow: false,
            }
        }
    }
}

pub fn uplink_bep(p: &LinkParams, zeta_up: f64, m: ModulationScheme, method: KpiMethod) -> Result<Bep, KpiError> {
    let (lambda, a, b) = sir_law(p, zeta_up, Direction::Up);
    let (t1, t2) = (m.tau1(), m.tau2());
    let ln_value = match method {
        KpiMethod::ClosedForm => {
            let ev = uplink_meijer(p, m).eval(lambda / t1, &ContourConfig::default())?;
            ev.ln_abs - 2f64.ln() - ln_gamma(t2) - ln_gamma(a) - ln_gamma(b)
        }
        KpiMethod::Quadrature => {
            let ln_h = |u: f64| {
                let g = u.exp();
                ln_conditional_bep(t1, t2, g) + u + ln_sir_pdf_law(g, lambda, a, b)
            };
            let centres = [(a / (b * lambda)).ln(), ((a - 1.0 + t2).max(0.5) / t1).ln()];
            integrate_log_space(ln_h, &centres)?
        }
    };
    Ok(Bep::from_ln(ln_value))
}

/// Rate approximation for strong interference (`Lambda` large): only the
/// mean SIR survives, `E[gamma] = a / ((b - 1) Lambda)`.
///
/// Infinite when the downlink interference order is 1 (the mean SIR diverges).
pub fn rate_high_interference_approx(p: &LinkParams, zeta: f64) -> f64 {
    let (lambda, a, b) = sir_law(p, zeta, Direction::Down);
    if b <= 1.0 {
        return f64::INFINITY;
    }
    p.bandwidth_hz * a / ((b - 1.0) * lambda * LN_2)
}

/// `M_C^3 M_U N_Q B zeta D^-alpha P mu / (ln2 P_q mu_q)`, the approximation as
/// usually printed. It exceeds [`rate_high_interference_approx`] by the factor
/// `M_C N_Q (M_C N_Q - 1)` and is kept for comparison only.
pub fn rate_high_interference_approx_printed(p: &LinkParams, zeta: f64) -> f64 {
    let mc = p.antennas_cbs as f64;
    let mu = p.antennas_rs as f64;
    let nq = p.interference_paths as f64;
    mc.powi(3) * mu * nq * p.bandwidth_hz * zeta * p.distance_m.powf(-p.path_loss_exp) * p.tx_power_down * p.chan_coeff_data
        / (LN_2 * p.interference_power_down * p.chan_coeff_intf)
}

/// Leading term of the BEP as uplink power grows (`Lambda_up -> 0`).
pub fn bep_high_power_approx(p: &LinkParams, zeta_up: f64, m: ModulationScheme) -> f64 {
    let (lambda, a, b) = sir_law(p, zeta_up, Direction::Up);
    if lambda == 0.0 {
        return 0.0;
    }
    let t2 = m.tau2();
    let ln = ln_gamma(a + t2) - ln_gamma(t2) - 2f64.ln() - a.ln() - ln_beta(b, a) + a * (lambda / m.tau1()).ln();
    ln.exp()
}

/// Integrates `exp(ln_h(u))` over the real line and returns the log of the result.
///
/// `centres` are rough locations of the mass; the range is grown until the
/// integrand has dropped 50 nats below its largest sampled value on both sides.
fn integrate_log_space<F: Fn(f64) -> f64>(ln_h: F, centres: &[f64]) -> Result<f64, KpiError> {
    const DROP: f64 = 50.0;
    const STEP: f64 = 0.5;
    let lo0 = centres.iter().copied().fold(f64::INFINITY, f64::min) - 10.0;
    let hi0 = centres.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 10.0;
    let mut peak = f64::NEG_INFINITY;
    let mut peak_u = lo0;
    let mut u = lo0;
    while u <= hi0 {
        let v = ln_h(u);
        if v > peak {
            peak = v;
            peak_u = u;
        }
        u += STEP;
    }
    let mut lo = lo0;
    loop {
        let v = ln_h(lo);
        if v > peak {
            peak = v;
            peak_u = lo;
        }
        if v < peak - DROP || lo < peak_u - 2000.0 {
            break;
        }
        lo -= 2.0;
    }
    let mut hi = hi0;
    loop {
        let v = ln_h(hi);
        if v > peak {
            peak = v;
            peak_u = hi;
        }
        if v < peak - DROP || hi > peak_u + 2000.0 {
            break;
        }
        hi += 2.0;
    }
    let f = |u: f64| {
        let d = ln_h(u) - peak;
        if d < -745.0 {
            0.0
        } else {
            d.exp()
        }
    };
    let cfg = QuadConfig {
        rel_tol: 1e-11,
        initial_pieces: 64,
        max_intervals: 20_000,
        ..QuadConfig::default()
    };
    let r = integrate(f, lo, hi, &cfg);
    if !r.converged || !(r.value > 0.0) {
        return Err(KpiError::Quadrature {
            value: r.value,
            abs_error: r.abs_error,
        });
    }
    Ok(peak + r.value.ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate_half_line;
    use crate::units::db_to_linear;

    fn user(mc: u32, mu: u32, pq_dbw: f64, muq_db: f64, mu_db: f64, d: f64) -> LinkParams {
        LinkParams {
            antennas_cbs: mc,
            antennas_rs: mu,
            interference_paths: 3,
            distance_m: d,
            path_loss_exp: 2.0,
            tx_power_down: 400.0,
            interference_power_down: db_to_linear(pq_dbw),
            chan_coeff_data: db_to_linear(mu_db),
            chan_coeff_intf: db_to_linear(muq_db),
            tx_power_up: 4.0,
            interference_power_up: db_to_linear(pq_dbw),
            chan_coeff_data_up: db_to_linear(mu_db) * d.powf(-2.0),
            chan_coeff_intf_up: db_to_linear(muq_db),
            bandwidth_hz: 10e6,
        }
    }

    #[test]
    fn zeta_scalar_channel_is_one() {
        assert_eq!(zeta(1, 1, 1000, 3), 1.0);
        assert_eq!(zeta(4, 1, 1000, 3), 1.0);
    }

    #[test]
    fn zeta_between_bounds() {
        let z = zeta(6, 3, 20_000, 1);
        assert!(z > 1.0 / 3.0 && z < 1.0, "{z}");
    }

    #[test]
    fn zeta_modes_bit_identical() {
        let a = zeta_estimate(3, 2, 10_000, 9, Execution::Sequential);
        let b = zeta_estimate(3, 2, 10_000, 9, Execution::Parallel);
        assert_eq!(a, b);
    }

    #[test]
    fn pdf_normalised_half_line() {
        let p = user(6, 3, 5.0, -3.0, -1.0, 10.0);
        let z = 0.6;
        let (l, a, b) = sir_law(&p, z, Direction::Down);
        let r = integrate_half_line(|g| sir_pdf(g, &p, z), a / (b * l), &QuadConfig::default());
        assert!((r.value - 1.0).abs() < 1e-6, "{}", r.value);
    }

    #[test]
    fn pdf_vanishes_at_origin() {
        let p = user(6, 3, 5.0, -3.0, -1.0, 10.0);
        assert_eq!(sir_pdf(0.0, &p, 0.6), 0.0);
        assert!(sir_pdf(1e-12, &p, 0.6) < 1e-100);
    }

    #[test]
    fn cdf_is_integral_of_pdf() {
        let (l, a, b) = (0.3, 4.0, 6.0);
        let x = 2.5;
        let r = integrate(|g| ln_sir_pdf_law(g, l, a, b).exp(), 0.0, x, &QuadConfig::default());
        assert!((r.value - sir_cdf_law(x, l, a, b)).abs() < 1e-10);
    }

    #[test]
    fn rate_methods_agree() {
        for p in [user(6, 3, 5.0, -3.0, -1.0, 10.0), user(6, 7, 1.0, -3.0, -1.0, 10.0), user(2, 1, 0.0, 0.0, 0.0, 1.0)] {
            let cf = downlink_rate(&p, 0.55, KpiMethod::ClosedForm).unwrap();
            let q = downlink_rate(&p, 0.55, KpiMethod::Quadrature).unwrap();
            assert!((cf - q).abs() / q < 1e-7, "cf={cf} q={q}");
        }
    }

    #[test]
    fn bep_methods_agree_all_modulations() {
        let p = user(6, 3, 5.0, -3.0, -1.0, 10.0);
        for m in ModulationScheme::ALL {
            let cf = uplink_bep(&p, 0.55, m, KpiMethod::ClosedForm).unwrap();
            let q = uplink_bep(&p, 0.55, m, KpiMethod::Quadrature).unwrap();
            assert!((cf.ln_value - q.ln_value).abs() < 1e-6, "{m:?} cf={cf:?} q={q:?}");
        }
    }

    #[test]
    fn zero_bandwidth_zero_rate() {
        let mut p = user(6, 3, 5.0, -3.0, -1.0, 10.0);
        p.bandwidth_hz = 0.0;
        assert_eq!(downlink_rate(&p, 0.5, KpiMethod::ClosedForm).unwrap(), 0.0);
        assert_eq!(downlink_rate(&p, 0.5, KpiMethod::Quadrature).unwrap(), 0.0);
    }

    #[test]
    fn bep_saturates_under_strong_interference() {
        let mut p = user(6, 3, 5.0, -3.0, -1.0, 10.0);
        p.interference_power_up *= 1e8;
        let e = uplink_bep(&p, 0.55, ModulationScheme::Dpsk, KpiMethod::ClosedForm).unwrap();
        assert!((e.value - 0.5).abs() < 0.01, "{e:?}");
    }

    #[test]
    fn printed_approx_ratio() {
        let p = user(6, 3, 5.0, -3.0, -1.0, 10.0);
        let r = rate_high_interference_approx_printed(&p, 0.5) / rate_high_interference_approx(&p, 0.5);
        assert!((r - 18.0 * 17.0).abs() < 1e-9, "{r}");
    }

    #[test]
    fn high_power_approx_zero_base() {
        let mut p = user(2, 2, 5.0, -3.0, -1.0, 10.0);
        p.interference_power_up = 0.0;
        assert_eq!(bep_high_power_approx(&p, 0.7, ModulationScheme::CoherentBpsk), 0.0);
    }
}
