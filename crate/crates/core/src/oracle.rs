//! Monte Carlo ground truth for the link KPIs.
//!
//! Each SIR draw is `S / I` with signal `S = M_C zeta D^-alpha P mu X` and
//! interference `I = P_q mu_q Y`, where `X ~ Gamma(a, 1)` and `Y ~ Gamma(b, 1)`
//! collect `a = M_C M_U` and `b` unit-mean exponential paths. Hence
//! `gamma = X / (Lambda Y)`, the beta-prime law the analytic path assumes.
//!
//! Draws are produced in fixed chunks with one random substream per chunk, so
//! results do not depend on the thread count or execution mode.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::exec::{chunk_sizes, substream, Execution};
use crate::kpi::{complex_gaussian, gram_eigen_summary, sir_cdf_law, sir_law, Direction};
use crate::special::conditional_bep;
use crate::types::{LinkParams, ModulationScheme};

const CHUNK: usize = 16_384;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub samples: usize,
    pub seed: u64,
    pub bins: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            samples: 1_000_000,
            seed: 2024,
            bins: 100,
        }
    }
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl Estimate {
    /// `|mean - x|` in units of the standard error.
    pub fn z_score(&self, x: f64) -> f64 {
        if self.std_error == 0.0 {
            if self.mean == x {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.mean - x).abs() / self.std_error
        }
    }
}

struct GammaRatio {
    x: Gamma<f64>,
    y: Gamma<f64>,
    lambda: f64,
}

impl GammaRatio {
    fn new(p: &LinkParams, zeta: f64, dir: Direction) -> Self {
        let (lambda, a, b) = sir_law(p, zeta, dir);
        Self {
            x: Gamma::new(a, 1.0).expect("shape >= 1"),
            y: Gamma::new(b, 1.0).expect("shape >= 1"),
            lambda,
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        let x = self.x.sample(rng);
        let y = self.y.sample(rng);
        x / (self.lambda * y)
    }
}

/// Raw SIR draws in chunk order.
pub fn sample_sir(p: &LinkParams, zeta: f64, cfg: &OracleConfig, dir: Direction, exec: Execution) -> Vec<f64> {
    let law = GammaRatio::new(p, zeta, dir);
    let chunks = chunk_sizes(cfg.samples, CHUNK);
    let parts = exec.map(chunks.len(), |k| {
        let mut rng = substream(cfg.seed, k as u64);
        (0..chunks[k]).map(|_| law.draw(&mut rng)).collect::<Vec<_>>()
    });
    parts.concat()
}

fn mean_of<F>(p: &LinkParams, zeta: f64, cfg: &OracleConfig, dir: Direction, exec: Execution, f: F) -> Estimate
where
    F: Fn(f64) -> f64 + Sync + Send,
{
    let law = GammaRatio::new(p, zeta, dir);
    let chunks = chunk_sizes(cfg.samples, CHUNK);
    let parts = exec.map(chunks.len(), |k| {
        let mut rng = substream(cfg.seed, k as u64);
        let mut s = 0.0;
        let mut ss = 0.0;
        for _ in 0..chunks[k] {
            let v = f(law.draw(&mut rng));
            s += v;
            ss += v * v;
        }
        (s, ss)
    });
    let (s, ss) = parts.into_iter().fold((0.0, 0.0), |acc, v| (acc.0 + v.0, acc.1 + v.1));
    let n = cfg.samples as f64;
    let mean = s / n;
    let var = if cfg.samples > 1 {
        ((ss - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    Estimate {
        mean,
        std_error: (var / n).sqrt(),
        samples: cfg.samples,
    }
}

/// Sample mean of `B log2(1 + gamma)` over downlink draws.
pub fn empirical_rate(p: &LinkParams, zeta: f64, cfg: &OracleConfig, exec: Execution) -> Estimate {
    if p.bandwidth_hz == 0.0 {
        return Estimate {
            mean: 0.0,
            std_error: 0.0,
            samples: cfg.samples,
        };
    }
    let b = p.bandwidth_hz;
    mean_of(p, zeta, cfg, Direction::Down, exec, move |g| b * g.ln_1p() / std::f64::consts::LN_2)
}

/// Sample mean of the conditional BEP over uplink draws.
pub fn empirical_bep(p: &LinkParams, zeta_up: f64, cfg: &OracleConfig, m: ModulationScheme, exec: Execution) -> Estimate {
    let (t1, t2) = (m.tau1(), m.tau2());
    mean_of(p, zeta_up, cfg, Direction::Up, exec, move |g| conditional_bep(t1, t2, g))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub gamma_bin_left: f64,
    pub gamma_bin_right: f64,
    pub density: f64,
}

/// Density histogram on `[lo, hi)` with equal-width bins, normalised by the
/// total sample count so that it is comparable with the analytic pdf.
pub fn histogram(samples: &[f64], bins: usize, lo: f64, hi: f64) -> Vec<HistogramBin> {
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &s in samples {
        if s >= lo && s < hi {
            let k = (((s - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
    }
    let n = samples.len() as f64;
    counts
        .iter()
        .enumerate()
        .map(|(k, &c)| HistogramBin {
            gamma_bin_left: lo + k as f64 * width,
            gamma_bin_right: lo + (k + 1) as f64 * width,
            density: c as f64 / (n * width),
        })
        .collect()
}

pub fn write_histogram_csv<P: AsRef<Path>>(path: P, bins: &[HistogramBin]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for b in bins {
        w.serialize(b)?;
    }
    w.flush()
}

pub fn write_histogram<W: Write>(out: W, bins: &[HistogramBin]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for b in bins {
        w.serialize(b)?;
    }
    w.flush()
}

/// Kolmogorov-Smirnov distance between the sample and a continuous cdf.
pub fn ks_distance<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    d
}

/// KS distance of the oracle's SIR draws from the analytic distribution.
pub fn ks_against_analytic(p: &LinkParams, zeta: f64, cfg: &OracleConfig, dir: Direction, exec: Execution) -> f64 {
    let (l, a, b) = sir_law(p, zeta, dir);
    let s = sample_sir(p, zeta, cfg, dir, exec);
    ks_distance(&s, |g| sir_cdf_law(g, l, a, b))
}

/// Outcome of comparing the Gamma-ratio sampler with explicit channel matrices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatrixValidation {
    pub samples: usize,
    /// KS distance between matrix-based draws and the analytic distribution.
    pub ks_distance: f64,
    /// Median SIR of matrix draws over median SIR of Gamma-ratio draws.
    pub median_ratio: f64,
}

/// Draws SIR from explicit Rayleigh matrices: the signal rides the dominant
/// eigenmode, `M_C D^-alpha P mu lambda_max(H^H H)`, and the interference is the
/// energy of `b` unit-variance paths. The signal has the same mean as in the
/// Gamma-ratio sampler; only the shape of its law differs.
pub fn sample_sir_matrix(p: &LinkParams, cfg: &OracleConfig, dir: Direction, exec: Execution) -> Vec<f64> {
    let (mc, mu) = (p.antennas_cbs as usize, p.antennas_rs as usize);
    let (sig_scale, intf_scale, b) = match dir {
        Direction::Down => (
            mc as f64 * p.distance_m.powf(-p.path_loss_exp) * p.tx_power_down * p.chan_coeff_data,
            p.interference_power_down * p.chan_coeff_intf,
            p.interference_order_down() as usize,
        ),
        Direction::Up => (
            mu as f64 * p.tx_power_up * p.chan_coeff_data_up,
            p.interference_power_up * p.chan_coeff_intf_up,
            p.interference_order_up() as usize,
        ),
    };
    let chunks = chunk_sizes(cfg.samples, CHUNK);
    let parts = exec.map(chunks.len(), |k| {
        let mut rng = substream(cfg.seed ^ 0x9E37_79B9_7F4A_7C15, k as u64);
        (0..chunks[k])
            .map(|_| {
                let h = complex_gaussian(&mut rng, mu, mc);
                let (lmax, _) = gram_eigen_summary(&h);
                let g = complex_gaussian(&mut rng, b, 1);
                let energy: f64 = g.iter().map(|z| z.norm_sqr()).sum();
                sig_scale * lmax / (intf_scale * energy)
            })
            .collect::<Vec<_>>()
    });
    parts.concat()
}

pub fn validate_against_matrix(p: &LinkParams, zeta: f64, cfg: &OracleConfig, dir: Direction, exec: Execution) -> MatrixValidation {
    let (l, a, b) = sir_law(p, zeta, dir);
    let m = sample_sir_matrix(p, cfg, dir, exec);
    let g = sample_sir(p, zeta, cfg, dir, exec);
    // medians, since the SIR mean is infinite when b = 1
    let med = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s[s.len() / 2]
    };
    MatrixValidation {
        samples: cfg.samples,
        ks_distance: ks_distance(&m, |x| sir_cdf_law(x, l, a, b)),
        median_ratio: med(&m) / med(&g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::db_to_linear;

    fn user1() -> LinkParams {
        LinkParams {
            antennas_cbs: 6,
            antennas_rs: 3,
            interference_paths: 3,
            distance_m: 10.0,
            path_loss_exp: 2.0,
            tx_power_down: 200.0,
            interference_power_down: db_to_linear(5.0),
            chan_coeff_data: db_to_linear(-1.0),
            chan_coeff_intf: db_to_linear(-3.0),
            tx_power_up: 200.0,
            interference_power_up: db_to_linear(5.0),
            chan_coeff_data_up: db_to_linear(-1.0) * 0.01,
            chan_coeff_intf_up: db_to_linear(-3.0),
            bandwidth_hz: 10e6,
        }
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let cfg = OracleConfig {
            samples: 40_000,
            seed: 5,
            bins: 10,
        };
        let a = sample_sir(&user1(), 0.6, &cfg, Direction::Down, Execution::Sequential);
        let b = sample_sir(&user1(), 0.6, &cfg, Direction::Down, Execution::Parallel);
        assert_eq!(a, b);
        let c = sample_sir(&user1(), 0.6, &cfg, Direction::Down, Execution::Parallel);
        assert_eq!(a, c);
    }

    #[test]
    fn zero_bandwidth_rate_is_zero() {
        let mut p = user1();
        p.bandwidth_hz = 0.0;
        let e = empirical_rate(&p, 0.6, &OracleConfig::default(), Execution::default());
        assert_eq!(e.mean, 0.0);
    }

    #[test]
    fn histogram_integrates_to_captured_mass() {
        let s = vec![0.1, 0.2, 0.2, 0.9, 1.5];
        let h = histogram(&s, 4, 0.0, 1.0);
        let mass: f64 = h.iter().map(|b| b.density * (b.gamma_bin_right - b.gamma_bin_left)).sum();
        assert!((mass - 0.8).abs() < 1e-12);
    }

    #[test]
    fn ks_of_uniform() {
        let s: Vec<f64> = (0..1000).map(|k| (k as f64 + 0.5) / 1000.0).collect();
        assert!(ks_distance(&s, |x| x) <= 0.0005 + 1e-12);
    }
}
