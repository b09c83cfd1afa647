//! Attention-weighted rendering split with a per-object floor.
//!
//! Maximises `sum K_n ln(P_n / floor)` subject to `sum P_n <= total` and
//! `P_n >= floor`. The optimum is `P_n = max(K_n / mu, floor)`; `mu` is found by
//! pinning the weakest object to the floor one at a time and re-solving for
//! the remaining budget, which terminates after at most `N` passes.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AllocationError {
    #[error("infeasible: total {total} is below {n} x floor {floor} (deficit {deficit})")]
    Infeasible { total: f64, n: usize, floor: f64, deficit: f64 },
    #[error("attention weight {value} at index {index} must be finite and > 0")]
    BadAttention { index: usize, value: f64 },
    #[error("floor must be finite and > 0 (got {0})")]
    BadFloor(f64),
    #[error("no objects to allocate")]
    Empty,
    #[error("allocation {value} at index {index} is below the floor {floor}")]
    BelowFloor { index: usize, value: f64, floor: f64 },
    #[error("allocation has {got} entries, attention has {want}")]
    LengthMismatch { got: usize, want: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationProblem {
    pub attention: Vec<f64>,
    pub total: f64,
    pub floor: f64,
}

impl AllocationProblem {
    pub fn new(attention: Vec<f64>, total: f64, floor: f64) -> Result<Self, AllocationError> {
        let p = Self { attention, total, floor };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), AllocationError> {
        if self.attention.is_empty() {
            return Err(AllocationError::Empty);
        }
        if !(self.floor.is_finite() && self.floor > 0.0) {
            return Err(AllocationError::BadFloor(self.floor));
        }
        for (index, &value) in self.attention.iter().enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(AllocationError::BadAttention { index, value });
            }
        }
        let n = self.attention.len();
        let need = n as f64 * self.floor;
        // rounding slack so that total == n * floor computed elsewhere is accepted
        if !(self.total >= need * (1.0 - 1e-12)) {
            return Err(AllocationError::Infeasible {
                total: self.total,
                n,
                floor: self.floor,
                deficit: self.total - need,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterFill {
    pub allocation: Vec<f64>,
    /// Water level multiplier; `None` when every object sits on the floor.
    pub mu: Option<f64>,
    pub pinned: Vec<bool>,
    pub iterations: usize,
}

pub fn water_fill(problem: &AllocationProblem) -> Result<Vec<f64>, AllocationError> {
    water_fill_detailed(problem).map(|w| w.allocation)
}

pub fn water_fill_detailed(problem: &AllocationProblem) -> Result<WaterFill, AllocationError> {
    problem.validate()?;
    let k = &problem.attention;
    let n = k.len();
    let floor = problem.floor;
    let mut pinned = vec![false; n];
    let mut n_pinned = 0usize;
    let mut iterations = 0usize;
    loop {
        iterations += 1;
        let budget = problem.total - n_pinned as f64 * floor;
        let free_sum: f64 = k.iter().zip(&pinned).filter(|(_, &p)| !p).map(|(&v, _)| v).sum();
        if n_pinned == n || budget <= 0.0 {
            return Ok(WaterFill {
                allocation: vec![floor; n],
                mu: None,
                pinned: vec![true; n],
                iterations,
            });
        }
        let mu = free_sum / budget;
        // weakest unpinned object
        let (weakest, kmin) = k
            .iter()
            .enumerate()
            .filter(|(j, _)| !pinned[*j])
            .fold((usize::MAX, f64::INFINITY), |acc, (j, &v)| if v < acc.1 { (j, v) } else { acc });
        if kmin / mu < floor {
            pinned[weakest] = true;
            n_pinned += 1;
            continue;
        }
        let allocation = k
            .iter()
            .zip(&pinned)
            .map(|(&v, &p)| if p { floor } else { v / mu })
            .collect();
        return Ok(WaterFill {
            allocation,
            mu: Some(mu),
            pinned,
            iterations,
        });
    }
}

/// `sum K_n ln(P_n / floor)`.
///
/// Entries within `1e-12` relative of the floor are accepted; anything lower is an error.
pub fn objective(attention: &[f64], allocation: &[f64], floor: f64) -> Result<f64, AllocationError> {
    if attention.len() != allocation.len() {
        return Err(AllocationError::LengthMismatch {
            got: allocation.len(),
            want: attention.len(),
        });
    }
    let mut sum = 0.0;
    for (index, (&kn, &pn)) in attention.iter().zip(allocation).enumerate() {
        if pn < floor * (1.0 - 1e-12) {
            return Err(AllocationError::BelowFloor { index, value: pn, floor });
        }
        sum += kn * (pn / floor).ln();
    }
    Ok(sum)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// Implied multiplier of the budget constraint.
    pub mu: f64,
    /// `(max - min) / mean` of `K_n / P_n` over objects above the floor.
    pub stationarity_spread: f64,
    /// Largest relative shortfall below the floor.
    pub primal_violation: f64,
    /// Largest negative floor multiplier, relative to `mu`.
    pub dual_violation: f64,
    /// Largest `|lambda_n (P_n - floor)|`, relative to `mu * floor`.
    pub slackness_violation: f64,
    /// `|sum P_n - total| / total`.
    pub budget_error: f64,
    pub violations: Vec<String>,
}

impl KktReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the optimality conditions of `allocation` within relative tolerance `tol`.
pub fn kkt_check(problem: &AllocationProblem, allocation: &[f64], tol: f64) -> KktReport {
    let k = &problem.attention;
    let floor = problem.floor;
    let mut violations = Vec::new();
    if k.len() != allocation.len() {
        violations.push(format!("length mismatch: {} vs {}", allocation.len(), k.len()));
        return KktReport {
            mu: f64::NAN,
            stationarity_spread: f64::NAN,
            primal_violation: f64::NAN,
            dual_violation: f64::NAN,
            slackness_violation: f64::NAN,
            budget_error: f64::NAN,
            violations,
        };
    }
    let above: Vec<f64> = k
        .iter()
        .zip(allocation)
        .filter(|(_, &p)| p > floor * (1.0 + tol))
        .map(|(&kn, &p)| kn / p)
        .collect();
    let (mu, spread) = if above.is_empty() {
        // all on the floor: the smallest admissible multiplier
        (k.iter().copied().fold(0.0, f64::max) / floor, 0.0)
    } else {
        let mean = above.iter().sum::<f64>() / above.len() as f64;
        let max = above.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = above.iter().copied().fold(f64::INFINITY, f64::min);
        (mean, (max - min) / mean)
    };
    let mut primal: f64 = 0.0;
    let mut dual: f64 = 0.0;
    let mut slack: f64 = 0.0;
    for (&kn, &p) in k.iter().zip(allocation) {
        primal = primal.max((floor - p) / floor);
        // stationarity of the Lagrangian: K/P - mu + lambda = 0
        let lambda = mu - kn / p;
        dual = dual.max(-lambda / mu);
        slack = slack.max((lambda * (p - floor)).abs() / (mu * floor));
    }
    let sum: f64 = allocation.iter().sum();
    let budget_error = (sum - problem.total).abs() / problem.total;
    if spread > tol {
        violations.push(format!("stationarity: K/P spread {spread:.3e}"));
    }
    if primal > tol {
        violations.push(format!("primal: floor shortfall {primal:.3e}"));
    }
    if dual > tol {
        violations.push(format!("dual: negative multiplier {dual:.3e}"));
    }
    if slack > tol {
        violations.push(format!("complementary slackness: {slack:.3e}"));
    }
    if budget_error > tol {
        violations.push(format!("budget: relative error {budget_error:.3e}"));
    }
    KktReport {
        mu,
        stationarity_spread: spread,
        primal_violation: primal.max(0.0),
        dual_violation: dual.max(0.0),
        slackness_violation: slack,
        budget_error,
        violations,
    }
}

/// Equal split of `total` over `n` objects.
pub fn uniform(n: usize, total: f64) -> Vec<f64> {
    vec![total / n as f64; n]
}
