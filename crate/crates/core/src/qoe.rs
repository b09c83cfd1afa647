//! Meta-Immersion: link quality factors times a Weber-Fechner rendering term.
//!
//! ```text
//! MI = T(R) * T(1 - E) * sum_n K_n ln(P_n / P_th)
//! ```
//!
//! `T` is the min-max normalisation. Values outside the bounds are passed
//! through (and flagged) rather than clamped.

use serde::{Deserialize, Serialize};

use crate::allocation::{objective, water_fill, AllocationError, AllocationProblem};
use crate::kpi::{downlink_rate, uplink_bep, KpiError, KpiMethod};
use crate::types::{KpiBounds, LinkParams, MiReport, ModulationScheme, Resource, ResourceBundle};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QoeError {
    #[error("normalisation bounds must satisfy max > min (got [{min}, {max}])")]
    BadBounds { min: f64, max: f64 },
    #[error(transparent)]
    Allocation(#[from] AllocationError),
    #[error(transparent)]
    Kpi(#[from] KpiError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalized {
    pub value: f64,
    /// Set when `value` falls outside `[0, 1]`.
    pub out_of_range: bool,
}

pub fn normalize(t: f64, t_min: f64, t_max: f64) -> Result<Normalized, QoeError> {
    if !(t_max > t_min) {
        return Err(QoeError::BadBounds { min: t_min, max: t_max });
    }
    let value = (t - t_min) / (t_max - t_min);
    Ok(Normalized {
        value,
        out_of_range: !(0.0..=1.0).contains(&value),
    })
}

pub fn rate_factor(rate_bps: f64, bounds: &KpiBounds) -> Result<Normalized, QoeError> {
    normalize(rate_bps, bounds.rate_min, bounds.rate_max)
}

/// `T(1 - E)` against `[1 - E_max, 1 - E_min]`, computed without forming `1 - E`.
pub fn reliability_factor(bep: f64, bounds: &KpiBounds) -> Result<Normalized, QoeError> {
    if !(bounds.bep_max > bounds.bep_min) {
        return Err(QoeError::BadBounds {
            min: 1.0 - bounds.bep_max,
            max: 1.0 - bounds.bep_min,
        });
    }
    let value = (bounds.bep_max - bep) / (bounds.bep_max - bounds.bep_min);
    Ok(Normalized {
        value,
        out_of_range: !(0.0..=1.0).contains(&value),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiBreakdown {
    pub mi: f64,
    pub rate_factor: Normalized,
    pub reliability_factor: Normalized,
    pub rendering: f64,
}

impl MiBreakdown {
    pub fn flagged(&self) -> bool {
        self.rate_factor.out_of_range || self.reliability_factor.out_of_range
    }
}

pub fn meta_immersion(
    rate_bps: f64,
    bep: f64,
    bounds: &KpiBounds,
    attention: &[f64],
    allocation: &[f64],
    floor: f64,
) -> Result<MiBreakdown, QoeError> {
    let rf = rate_factor(rate_bps, bounds)?;
    let ef = reliability_factor(bep, bounds)?;
    let rendering = objective(attention, allocation, floor)?;
    Ok(MiBreakdown {
        mi: rf.value * ef.value * rendering,
        rate_factor: rf,
        reliability_factor: ef,
        rendering,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyAdjusted {
    pub mi: f64,
    pub multiplier: f64,
    /// Latency exceeded the budget; `mi` was forced to zero.
    pub exceeded: bool,
}

/// Scales MI by `T(L_max - L)` over `[0, L_max]`.
pub fn latency_hook(mi: f64, latency: f64, latency_max: f64) -> LatencyAdjusted {
    if latency > latency_max {
        return LatencyAdjusted {
            mi: 0.0,
            multiplier: 0.0,
            exceeded: true,
        };
    }
    let multiplier = (latency_max - latency) / latency_max;
    LatencyAdjusted {
        mi: mi * multiplier,
        multiplier,
        exceeded: false,
    }
}

/// Everything needed to turn one user's resource bundle into MI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserQoeModel {
    pub link: LinkParams,
    pub zeta_down: f64,
    pub zeta_up: f64,
    pub modulation: ModulationScheme,
    pub attention: Vec<f64>,
    pub floor: f64,
    pub bounds: KpiBounds,
    /// Pins both link factors to 1 so only the rendering term remains.
    #[serde(default)]
    pub freeze_link_factors: bool,
}

impl UserQoeModel {
    pub fn kpis(&self, bundle: &ResourceBundle) -> Result<(f64, f64), QoeError> {
        let link = self.link.with_resources(bundle);
        let rate = downlink_rate(&link, self.zeta_down, KpiMethod::ClosedForm)?;
        let bep = uplink_bep(&link, self.zeta_up, self.modulation, KpiMethod::ClosedForm)?.value;
        Ok((rate, bep))
    }

    /// MI with the rendering budget water-filled over this user's objects.
    pub fn evaluate(&self, bundle: &ResourceBundle) -> Result<MiReport, QoeError> {
        let problem = AllocationProblem::new(self.attention.clone(), bundle.render_total, self.floor)?;
        let alloc = water_fill(&problem)?;
        self.evaluate_with_allocation(bundle, alloc)
    }

    pub fn evaluate_with_allocation(&self, bundle: &ResourceBundle, alloc: Vec<f64>) -> Result<MiReport, QoeError> {
        let rendering = objective(&self.attention, &alloc, self.floor)?;
        if self.freeze_link_factors {
            return Ok(MiReport {
                rate_bps: f64::NAN,
                bep: f64::NAN,
                per_object_render: alloc,
                mi: rendering,
            });
        }
        let (rate, bep) = self.kpis(bundle)?;
        let b = meta_immersion(rate, bep, &self.bounds, &self.attention, &alloc, self.floor)?;
        Ok(MiReport {
            rate_bps: rate,
            bep,
            per_object_render: alloc,
            mi: b.mi,
        })
    }

    pub fn mi(&self, bundle: &ResourceBundle) -> Result<f64, QoeError> {
        self.evaluate(bundle).map(|r| r.mi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcavityReport {
    pub resource: Resource,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    /// Second divided differences at the interior grid points.
    pub second_derivatives: Vec<f64>,
    pub max_second_derivative: f64,
    /// `max |MI| / span^2`, the natural curvature unit of this probe.
    pub scale: f64,
}

impl ConcavityReport {
    /// True when no second derivative exceeds `rel_tol * scale`.
    pub fn concave_within(&self, rel_tol: f64) -> bool {
        self.max_second_derivative <= rel_tol * self.scale
    }

    pub fn linear_within(&self, rel_tol: f64) -> bool {
        self.second_derivatives.iter().all(|d| d.abs() <= rel_tol * self.scale)
    }
}

/// Finite-difference curvature of MI along one resource dimension.
///
/// `grid` must be increasing with at least 5 points; all other dimensions stay
/// at `base`. The rendering split is re-optimised at every point.
pub fn concavity_probe(
    resource: Resource,
    model: &UserQoeModel,
    base: &ResourceBundle,
    grid: &[f64],
) -> Result<ConcavityReport, QoeError> {
    assert!(grid.len() >= 5, "concavity probe needs at least 5 grid points");
    assert!(grid.windows(2).all(|w| w[1] > w[0]), "grid must be increasing");
    let values = grid
        .iter()
        .map(|&x| {
            let mut b = *base;
            b.set(resource, x);
            model.mi(&b)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let second: Vec<f64> = (1..grid.len() - 1)
        .map(|k| {
            let (x0, x1, x2) = (grid[k - 1], grid[k], grid[k + 1]);
            let (f0, f1, f2) = (values[k - 1], values[k], values[k + 1]);
            2.0 * ((f2 - f1) / (x2 - x1) - (f1 - f0) / (x1 - x0)) / (x2 - x0)
        })
        .collect();
    let max_second_derivative = second.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = grid[grid.len() - 1] - grid[0];
    let fmax = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    Ok(ConcavityReport {
        resource,
        grid: grid.to_vec(),
        values,
        second_derivatives: second,
        max_second_derivative,
        scale: fmax / (span * span),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_endpoints() {
        assert_eq!(normalize(10.0, 10.0, 42.0).unwrap().value, 0.0);
        assert_eq!(normalize(42.0, 10.0, 42.0).unwrap().value, 1.0);
        assert_eq!(normalize(26e6, 10e6, 42e6).unwrap().value, 0.5);
        assert!(normalize(50.0, 10.0, 42.0).unwrap().out_of_range);
        assert!(normalize(1.0, 2.0, 2.0).is_err());
    }

    #[test]
    fn reliability_matches_one_minus_e() {
        let b = KpiBounds::reference();
        let e = 1e-3;
        let direct = normalize(1.0 - e, 1.0 - b.bep_max, 1.0 - b.bep_min).unwrap().value;
        let r = reliability_factor(e, &b).unwrap().value;
        assert!((direct - r).abs() < 1e-12);
        assert_eq!(reliability_factor(b.bep_min, &b).unwrap().value, 1.0);
    }

    #[test]
    fn floor_allocation_gives_zero() {
        let b = KpiBounds::reference();
        let mi = meta_immersion(30e6, 1e-4, &b, &[3.0, 4.0], &[15.0, 15.0], 15.0).unwrap();
        assert_eq!(mi.mi, 0.0);
        let mi = meta_immersion(10e6, 1e-4, &b, &[3.0, 4.0], &[30.0, 15.0], 15.0).unwrap();
        assert_eq!(mi.mi, 0.0);
    }

    #[test]
    fn latency_multiplier() {
        assert_eq!(latency_hook(2.0, 0.0, 10.0).multiplier, 1.0);
        assert_eq!(latency_hook(2.0, 10.0, 10.0).mi, 0.0);
        assert_eq!(latency_hook(2.0, 5.0, 10.0).multiplier, 0.5);
        let over = latency_hook(2.0, 11.0, 10.0);
        assert!(over.exceeded && over.mi == 0.0);
    }

    #[test]
    fn marginal_mi_per_object() {
        let b = KpiBounds::reference();
        let k = [2.0, 5.0, 1.0];
        let p = [20.0, 40.0, 16.0];
        let base = meta_immersion(30e6, 1e-4, &b, &k, &p, 15.0).unwrap();
        let c = base.rate_factor.value * base.reliability_factor.value;
        for n in 0..3 {
            let h = 1e-4 * p[n];
            let mut up = p;
            let mut dn = p;
            up[n] += h;
            dn[n] -= h;
            let fu = meta_immersion(30e6, 1e-4, &b, &k, &up, 15.0).unwrap().mi;
            let fd = meta_immersion(30e6, 1e-4, &b, &k, &dn, 15.0).unwrap().mi;
            let fd_grad = (fu - fd) / (2.0 * h);
            let want = c * k[n] / p[n];
            assert!((fd_grad - want).abs() / want < 1e-4);
        }
    }
}
