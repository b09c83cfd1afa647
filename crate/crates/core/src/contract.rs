//! Two-level contract design between the service provider (MSP) and the
//! infrastructure provider (InP).
//!
//! For a contract `(F_s, u_M)` the InP picks the resources `Theta` that maximise
//! `u_M * sum MI - cost(Theta)`; the fixed fee only shifts its utility. The MSP
//! then searches a grid of contracts for the one that maximises its own utility
//! among those the InP accepts.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::allocation::{objective, water_fill, AllocationProblem};
use crate::exec::{substream, Execution};
use crate::kpi::{downlink_rate, uplink_bep, KpiMethod};
use crate::qoe::{rate_factor, reliability_factor, QoeError, UserQoeModel};
use crate::scenario::Scenario;
use crate::types::{ContractTerms, MarketConstants, Resource, ResourceBundle, UnitPrices};

#[derive(Debug, thiserror::Error)]
pub enum ContractError {
    #[error("IR infeasible over grid: best InP utility {best_inp_utility} is below the threshold {threshold}")]
    IrInfeasible { best_inp_utility: f64, threshold: f64 },
    #[error("invalid grid: {0}")]
    BadGrid(String),
    #[error(transparent)]
    Qoe(#[from] QoeError),
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
}

/// `F_s + u_M * sum MI`.
pub fn inp_revenue(terms: &ContractTerms, mi_values: &[f64]) -> f64 {
    terms.fixed_fee + terms.per_qoe_fee * mi_values.iter().sum::<f64>()
}

/// Revenue minus the resource cost of every bundle.
pub fn inp_wealth(terms: &ContractTerms, bundles: &[ResourceBundle], prices: &UnitPrices, mi_values: &[f64]) -> f64 {
    inp_revenue(terms, mi_values) - bundles.iter().map(|b| prices.cost(b)).sum::<f64>()
}

/// CRRA utility `W^(1 - tau) / (1 - tau)`; `-inf` when `W <= 0` and `tau > 0`.
pub fn crra(wealth: f64, tau: f64) -> f64 {
    if tau == 0.0 {
        return wealth;
    }
    if wealth <= 0.0 {
        return f64::NEG_INFINITY;
    }
    wealth.powf(1.0 - tau) / (1.0 - tau)
}

/// Wealth the InP needs to reach utility `u`.
pub fn crra_inverse(u: f64, tau: f64) -> f64 {
    if tau == 0.0 {
        return u;
    }
    if u <= 0.0 {
        return 0.0;
    }
    ((1.0 - tau) * u).powf(1.0 / (1.0 - tau))
}

pub fn inp_utility(
    terms: &ContractTerms,
    bundles: &[ResourceBundle],
    prices: &UnitPrices,
    market: &MarketConstants,
    mi_values: &[f64],
) -> f64 {
    crra(inp_wealth(terms, bundles, prices, mi_values), market.rra)
}

/// `sum_i (omega_i + (mu_i - u_M) MI_i) - F_s`.
pub fn msp_utility(terms: &ContractTerms, market: &MarketConstants, mi_values: &[f64]) -> f64 {
    let users: f64 = mi_values
        .iter()
        .enumerate()
        .map(|(i, &m)| market.base_fee_per_user[i] + (market.qoe_fee_per_user[i] - terms.per_qoe_fee) * m)
        .sum();
    users - terms.fixed_fee
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerConfig {
    pub max_iters: usize,
    /// Stop when no coordinate moves more than this fraction of its box width.
    pub tol: f64,
    /// Finite-difference step as a fraction of the box width.
    pub fd_step: f64,
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self {
            max_iters: 300,
            tol: 1e-10,
            fd_step: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerSolution {
    pub bundle: ResourceBundle,
    pub mi: f64,
    /// `u_M * MI - cost` at `bundle`.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// The three multiplicative pieces of MI, each depending on separate resources.
#[derive(Debug, Clone, Copy)]
struct Factors {
    rate: f64,
    reliability: f64,
    rendering: f64,
}

impl Factors {
    fn mi(&self) -> f64 {
        self.rate * self.reliability * self.rendering
    }
}

struct UserProblem<'a> {
    model: &'a UserQoeModel,
    lower: [f64; 4],
    upper: [f64; 4],
    u_m: f64,
    prices: UnitPrices,
}

impl UserProblem<'_> {
    fn bundle(&self, x: &[f64; 4]) -> ResourceBundle {
        let mut v = [0.0; 4];
        for j in 0..4 {
            v[j] = self.lower[j] + x[j] * (self.upper[j] - self.lower[j]);
        }
        ResourceBundle::from_array(v)
    }

    fn rate_factor(&self, b: &ResourceBundle) -> Result<f64, QoeError> {
        if self.model.freeze_link_factors {
            return Ok(1.0);
        }
        let link = self.model.link.with_resources(b);
        let r = downlink_rate(&link, self.model.zeta_down, KpiMethod::ClosedForm)?;
        Ok(rate_factor(r, &self.model.bounds)?.value)
    }

    fn reliability_factor(&self, b: &ResourceBundle) -> Result<f64, QoeError> {
        if self.model.freeze_link_factors {
            return Ok(1.0);
        }
        let link = self.model.link.with_resources(b);
        let e = uplink_bep(&link, self.model.zeta_up, self.model.modulation, KpiMethod::ClosedForm)?.value;
        Ok(reliability_factor(e, &self.model.bounds)?.value)
    }

    fn rendering(&self, b: &ResourceBundle) -> Result<f64, QoeError> {
        let p = AllocationProblem::new(self.model.attention.clone(), b.render_total, self.model.floor)?;
        Ok(objective(&self.model.attention, &water_fill(&p)?, self.model.floor)?)
    }

    fn factors(&self, b: &ResourceBundle) -> Result<Factors, QoeError> {
        Ok(Factors {
            rate: self.rate_factor(b)?,
            reliability: self.reliability_factor(b)?,
            rendering: self.rendering(b)?,
        })
    }

    /// Recomputes only the factor that coordinate `j` feeds.
    fn update(&self, f: Factors, j: usize, b: &ResourceBundle) -> Result<Factors, QoeError> {
        let mut f = f;
        match j {
            0 | 1 => f.rate = self.rate_factor(b)?,
            2 => f.reliability = self.reliability_factor(b)?,
            _ => f.rendering = self.rendering(b)?,
        }
        Ok(f)
    }

    fn value(&self, f: &Factors, b: &ResourceBundle) -> f64 {
        self.u_m * f.mi() - self.prices.cost(b)
    }
}

/// Box-constrained maximiser of `u_M * MI - cost` for one user.
///
/// Cyclic coordinate ascent on the box rescaled to `[0, 1]^4`. Each coordinate
/// is maximised exactly by [`line_max`], since MI is concave in every single
/// resource.
pub fn optimize_user(
    model: &UserQoeModel,
    lower: ResourceBundle,
    upper: ResourceBundle,
    u_m: f64,
    prices: &UnitPrices,
    cfg: &InnerConfig,
) -> Result<InnerSolution, QoeError> {
    let prob = UserProblem {
        model,
        lower: lower.to_array(),
        upper: upper.to_array(),
        u_m,
        prices: *prices,
    };
    // the product of factors is not jointly concave: a start in the interior can
    // slide into the corner where MI vanishes, so the link side also starts high
    let a = ascend(&prob, [0.5; 4], cfg)?;
    let b = ascend(&prob, [1.0, 1.0, 1.0, 0.5], cfg)?;
    Ok(if b.objective > a.objective { b } else { a })
}

fn ascend(prob: &UserProblem, start: [f64; 4], cfg: &InnerConfig) -> Result<InnerSolution, QoeError> {
    let mut x = start;
    for (j, xj) in x.iter_mut().enumerate() {
        if prob.upper[j] <= prob.lower[j] {
            *xj = 0.0;
        }
    }
    let mut b = prob.bundle(&x);
    let mut f = prob.factors(&b)?;
    let mut fx = prob.value(&f, &b);
    let h = cfg.fd_step;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        iterations += 1;
        let mut max_move: f64 = 0.0;
        for j in 0..4 {
            if prob.upper[j] <= prob.lower[j] {
                continue;
            }
            let eval = |t: f64| -> Result<(f64, Factors), QoeError> {
                let mut y = x;
                y[j] = t;
                let by = prob.bundle(&y);
                let fy = prob.update(f, j, &by)?;
                Ok((prob.value(&fy, &by), fy))
            };
            let (t, ft, fac) = line_max(&eval, x[j], fx, f, h, cfg.tol)?;
            if ft > fx {
                max_move = max_move.max((t - x[j]).abs());
                x[j] = t;
                fx = ft;
                f = fac;
            }
        }
        b = prob.bundle(&x);
        if max_move < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(InnerSolution {
        bundle: b,
        mi: f.mi(),
        objective: fx,
        iterations,
        converged,
    })
}

/// Maximises a concave function of one variable on `[0, 1]`.
///
/// Newton steps from central differences, kept inside a bracket built from the
/// sign of the derivative; a step leaving the bracket falls back to bisection.
fn line_max<F>(eval: &F, x0: f64, f0: f64, fac0: Factors, h: f64, tol: f64) -> Result<(f64, f64, Factors), QoeError>
where
    F: Fn(f64) -> Result<(f64, Factors), QoeError>,
{
    let (mut lo, mut hi) = (0.0, 1.0);
    let (mut lo_known, mut hi_known) = (false, false);
    let mut x = x0;
    let mut fx = f0;
    let mut best = (x0, f0, fac0);
    for _ in 0..60 {
        let hi_pt = (x + h).min(1.0).max(2.0 * h);
        let mid = hi_pt - h;
        let f1 = eval(mid - h)?.0;
        let f2 = if mid == x { fx } else { eval(mid)?.0 };
        let f3 = eval(hi_pt)?.0;
        let curv = (f3 - 2.0 * f2 + f1) / (h * h);
        let grad = (f3 - f1) / (2.0 * h) + curv * (x - mid);
        if grad > 0.0 {
            lo = x;
            lo_known = true;
        } else if grad < 0.0 {
            hi = x;
            hi_known = true;
        } else {
            break;
        }
        let newton = if curv < 0.0 { x - grad / curv } else if grad > 0.0 { 1.0 } else { 0.0 };
        let t = if newton >= hi {
            if hi_known { 0.5 * (lo + hi) } else { hi }
        } else if newton <= lo {
            if lo_known { 0.5 * (lo + hi) } else { lo }
        } else {
            newton
        };
        if (t - x).abs() < tol {
            break;
        }
        let (ft, ft_fac) = eval(t)?;
        x = t;
        fx = ft;
        if ft > best.1 {
            best = (t, ft, ft_fac);
        }
        if hi - lo < tol {
            break;
        }
    }
    Ok(best)
}

/// Each user's resource choice under `terms`. The fixed fee plays no role.
pub fn optimize_inner(
    terms: &ContractTerms,
    scenario: &Scenario,
    cfg: &InnerConfig,
) -> Result<Vec<InnerSolution>, QoeError> {
    (0..scenario.n_users())
        .map(|k| {
            let model = scenario.qoe_model(k);
            let n = model.attention.len();
            optimize_user(
                &model,
                scenario.boxes.lower(n),
                scenario.boxes.upper(n),
                terms.per_qoe_fee,
                &scenario.prices,
                cfg,
            )
        })
        .collect()
}

/// `u_M * MI - cost` of one user at an arbitrary bundle.
pub fn inner_objective(model: &UserQoeModel, bundle: &ResourceBundle, u_m: f64, prices: &UnitPrices) -> Result<f64, QoeError> {
    let prob = UserProblem {
        model,
        lower: [0.0; 4],
        upper: [0.0; 4],
        u_m,
        prices: *prices,
    };
    let f = prob.factors(bundle)?;
    Ok(prob.value(&f, bundle))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcReport {
    pub draws: usize,
    /// Largest objective gain found over the optimum (negative when none improved).
    pub max_gain: f64,
    pub tol: f64,
}

impl IcReport {
    pub fn passed(&self) -> bool {
        self.max_gain <= self.tol
    }
}

/// Perturbs every coordinate of `bundle` by up to `rel` (projected onto the box)
/// and records the best objective gain over `draws` attempts.
#[allow(clippy::too_many_arguments)]
pub fn ic_check(
    model: &UserQoeModel,
    lower: ResourceBundle,
    upper: ResourceBundle,
    u_m: f64,
    prices: &UnitPrices,
    bundle: &ResourceBundle,
    draws: usize,
    rel: f64,
    tol: f64,
    seed: u64,
) -> Result<IcReport, QoeError> {
    let base = inner_objective(model, bundle, u_m, prices)?;
    let mut rng = substream(seed, 0);
    let mut max_gain = f64::NEG_INFINITY;
    for _ in 0..draws {
        let mut p = *bundle;
        for r in Resource::ALL {
            let v = p.get(r) * (1.0 + rng.random_range(-rel..=rel));
            p.set(r, v.clamp(lower.get(r), upper.get(r)));
        }
        let g = inner_objective(model, &p, u_m, prices)? - base;
        max_gain = max_gain.max(g);
    }
    Ok(IcReport { draws, max_gain, tol })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractGrid {
    pub fixed_fee: (f64, f64),
    pub per_qoe_fee: (f64, f64),
    pub fixed_fee_points: usize,
    pub per_qoe_fee_points: usize,
}

impl Default for ContractGrid {
    fn default() -> Self {
        Self {
            fixed_fee: (0.0, 3e6),
            per_qoe_fee: (0.0, 1e4),
            fixed_fee_points: 50,
            per_qoe_fee_points: 50,
        }
    }
}

fn linspace(range: (f64, f64), n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![range.0];
    }
    (0..n)
        .map(|k| range.0 + (range.1 - range.0) * k as f64 / (n - 1) as f64)
        .collect()
}

impl ContractGrid {
    pub fn validate(&self) -> Result<(), ContractError> {
        for (name, (lo, hi), n) in [
            ("fixed_fee", self.fixed_fee, self.fixed_fee_points),
            ("per_qoe_fee", self.per_qoe_fee, self.per_qoe_fee_points),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && hi >= lo) {
                return Err(ContractError::BadGrid(format!("{name} range must satisfy 0 <= lo <= hi")));
            }
            if n == 0 {
                return Err(ContractError::BadGrid(format!("{name} needs at least one point")));
            }
        }
        Ok(())
    }

    pub fn fixed_fees(&self) -> Vec<f64> {
        linspace(self.fixed_fee, self.fixed_fee_points)
    }

    pub fn per_qoe_fees(&self) -> Vec<f64> {
        linspace(self.per_qoe_fee, self.per_qoe_fee_points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    #[serde(rename = "F_s")]
    pub fixed_fee: f64,
    #[serde(rename = "u_M")]
    pub per_qoe_fee: f64,
    pub inp_utility: f64,
    pub msp_utility: f64,
    pub feasible: bool,
    pub mi_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractSolution {
    pub terms: ContractTerms,
    pub bundles: Vec<ResourceBundle>,
    pub mi: Vec<f64>,
    pub inp_utility: f64,
    pub msp_utility: f64,
    pub ir_satisfied: bool,
    pub inner_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractOutcome {
    pub solution: ContractSolution,
    /// Row-major over `u_M` then `F_s`.
    pub surface: Vec<SurfacePoint>,
    /// Inner solutions per `u_M` grid value, shared by every `F_s`.
    pub inner: Vec<Vec<InnerSolution>>,
}

/// Exhaustive grid search over `(F_s, u_M)`.
///
/// The inner problem is solved once per `u_M` and reused for every `F_s`.
pub fn optimize_contract(
    scenario: &Scenario,
    grid: &ContractGrid,
    cfg: &InnerConfig,
    exec: Execution,
) -> Result<ContractOutcome, ContractError> {
    grid.validate()?;
    let fees = grid.fixed_fees();
    let ums = grid.per_qoe_fees();
    let inner = exec
        .map_slice(&ums, |&u_m| optimize_inner(&ContractTerms { fixed_fee: 0.0, per_qoe_fee: u_m }, scenario, cfg))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let market = &scenario.market;
    let mut surface = Vec::with_capacity(fees.len() * ums.len());
    let mut best: Option<(usize, usize, f64)> = None;
    let mut best_inp = f64::NEG_INFINITY;
    for (a, (&u_m, sols)) in ums.iter().zip(&inner).enumerate() {
        let mi: Vec<f64> = sols.iter().map(|s| s.mi).collect();
        let bundles: Vec<ResourceBundle> = sols.iter().map(|s| s.bundle).collect();
        for (c, &fs) in fees.iter().enumerate() {
            let terms = ContractTerms { fixed_fee: fs, per_qoe_fee: u_m };
            let u_inp = inp_utility(&terms, &bundles, &scenario.prices, market, &mi);
            let u_msp = msp_utility(&terms, market, &mi);
            let feasible = u_inp >= market.inp_utility_floor;
            best_inp = best_inp.max(u_inp);
            if feasible && best.is_none_or(|(_, _, v)| u_msp > v) {
                best = Some((a, c, u_msp));
            }
            surface.push(SurfacePoint {
                fixed_fee: fs,
                per_qoe_fee: u_m,
                inp_utility: u_inp,
                msp_utility: u_msp,
                feasible,
                mi_total: mi.iter().sum(),
            });
        }
    }
    let Some((a, c, _)) = best else {
        return Err(ContractError::IrInfeasible {
            best_inp_utility: best_inp,
            threshold: market.inp_utility_floor,
        });
    };
    let p = surface[a * fees.len() + c];
    let sols = &inner[a];
    let solution = ContractSolution {
        terms: ContractTerms {
            fixed_fee: p.fixed_fee,
            per_qoe_fee: p.per_qoe_fee,
        },
        bundles: sols.iter().map(|s| s.bundle).collect(),
        mi: sols.iter().map(|s| s.mi).collect(),
        inp_utility: p.inp_utility,
        msp_utility: p.msp_utility,
        ir_satisfied: p.feasible,
        inner_converged: sols.iter().all(|s| s.converged),
    };
    Ok(ContractOutcome { solution, surface, inner })
}

/// Writes the surface as `F_s,u_M,inp_utility,msp_utility,feasible,mi_total`.
pub fn write_surface<W: Write>(out: W, surface: &[SurfacePoint]) -> Result<(), ContractError> {
    let mut w = csv::Writer::from_writer(out);
    for p in surface {
        w.serialize(p)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
