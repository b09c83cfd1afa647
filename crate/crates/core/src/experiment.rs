//! Rendering-allocation experiment over a synthetic corpus.
//!
//! Every user looks at one scene (a random scenario group). The scene's objects
//! share a rendering budget of `budget_per_object * n` and each scheme splits it
//! differently. All schemes are scored against the ground-truth attention.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::allocation::{objective, uniform, water_fill, AllocationError, AllocationProblem};
use crate::attention::{factorize, predict_levels, AttentionError, FactorizeConfig};
use crate::dataset::{generate_corpus, sparsify, CorpusConfig, DatasetError, SparsifyConfig, SyntheticCorpus};
use crate::exec::{substream, Execution};
use crate::kpi::{downlink_rate, uplink_bep, KpiError, KpiMethod};
use crate::oracle::{empirical_bep, empirical_rate, OracleConfig};
use crate::scenario::Scenario;
use crate::types::{AttentionMatrix, Resource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Random,
    Uniform,
    Attention,
    Oracle,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Random, Scheme::Uniform, Scheme::Attention, Scheme::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Random => "random",
            Scheme::Uniform => "uniform",
            Scheme::Attention => "attention",
            Scheme::Oracle => "oracle",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scheme::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown scheme `{s}`"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationExperimentConfig {
    pub corpus: CorpusConfig,
    pub sparsify: SparsifyConfig,
    pub factorize: FactorizeConfig,
    pub budget_per_object: f64,
    pub floor: f64,
    /// Product of the two normalised link factors, shared by every scheme.
    pub link_factor: f64,
    /// Dirichlet draws averaged into the random scheme's score.
    pub random_draws: usize,
    pub seed: u64,
}

impl Default for AllocationExperimentConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusConfig::default(),
            sparsify: SparsifyConfig::default(),
            factorize: FactorizeConfig::default(),
            budget_per_object: 20.0,
            floor: 15.0,
            link_factor: 1.0,
            random_draws: 256,
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserOutcome {
    pub user: usize,
    /// Scenario group whose objects make up the scene.
    pub group: usize,
    pub n_objects: usize,
    /// Mean over the random draws.
    pub random: f64,
    pub uniform: f64,
    pub attention: f64,
    pub oracle: f64,
}

impl UserOutcome {
    pub fn mi(&self, s: Scheme) -> f64 {
        match s {
            Scheme::Random => self.random,
            Scheme::Uniform => self.uniform,
            Scheme::Attention => self.attention,
            Scheme::Oracle => self.oracle,
        }
    }

    /// Relative gain of the attention-aware split over the uniform one, in percent.
    pub fn improvement_pct(&self) -> f64 {
        100.0 * (self.attention - self.uniform) / self.uniform
    }

    /// Relative shortfall of the attention-aware split against the oracle, in percent.
    pub fn oracle_gap_pct(&self) -> f64 {
        100.0 * (self.oracle - self.attention) / self.oracle
    }

    pub fn ordered(&self) -> bool {
        self.oracle >= self.attention && self.attention >= self.uniform && self.uniform >= self.random
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub mean_improvement_pct: f64,
    pub max_improvement_pct: f64,
    pub min_improvement_pct: f64,
    pub mean_oracle_gap_pct: f64,
    pub ordered_fraction: f64,
    pub missing_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationExperiment {
    pub users: Vec<UserOutcome>,
    pub summary: ExperimentSummary,
}

/// `floor + surplus * w` with `w` drawn from a flat Dirichlet.
pub fn random_split<R: Rng>(rng: &mut R, n: usize, total: f64, floor: f64) -> Vec<f64> {
    let g = Gamma::new(1.0, 1.0).expect("unit gamma");
    let w: Vec<f64> = (0..n).map(|_| g.sample(rng)).collect();
    let sum: f64 = w.iter().sum();
    let surplus = total - n as f64 * floor;
    w.into_iter().map(|x| floor + surplus * x / sum).collect()
}

/// Attention levels used by the attention-aware scheme: observed cells keep
/// their level, the rest come from the factorisation.
pub fn completed_levels(observed: &AttentionMatrix, predicted: &AttentionMatrix) -> AttentionMatrix {
    let (nu, no) = (observed.n_users(), observed.n_objects());
    let mut values = Vec::with_capacity(nu * no);
    for u in 0..nu {
        for i in 0..no {
            values.push(observed.get(u, i).or_else(|| predicted.get(u, i)).unwrap_or(1.0));
        }
    }
    let mut m = AttentionMatrix::dense(nu, no, values);
    m.object_labels = observed.object_labels.clone();
    m
}

/// Runs every scheme for every user of an existing corpus.
pub fn run_on_corpus(
    corpus: &SyntheticCorpus,
    levels: &AttentionMatrix,
    cfg: &AllocationExperimentConfig,
    missing_fraction: f64,
    exec: Execution,
) -> Result<AllocationExperiment, ExperimentError> {
    let nu = corpus.config.n_users;
    let users = exec
        .map(nu, |u| -> Result<UserOutcome, ExperimentError> {
            let mut rng = substream(cfg.seed, 1 << 32 | u as u64);
            let group = rng.random_range(0..corpus.group_pools.len());
            let objs = &corpus.group_pools[group];
            let n = objs.len();
            let total = cfg.budget_per_object * n as f64;
            let truth: Vec<f64> = objs.iter().map(|&i| corpus.truth.get(u, i).unwrap_or(1.0)).collect();
            let guess: Vec<f64> = objs.iter().map(|&i| levels.get(u, i).unwrap_or(1.0)).collect();
            let score = |alloc: &[f64]| -> Result<f64, ExperimentError> {
                Ok(cfg.link_factor * objective(&truth, alloc, cfg.floor)?)
            };
            let att_problem = AllocationProblem::new(guess, total, cfg.floor)?;
            let orc_problem = AllocationProblem::new(truth.clone(), total, cfg.floor)?;
            let draws = cfg.random_draws.max(1);
            let mut random = 0.0;
            for _ in 0..draws {
                random += score(&random_split(&mut rng, n, total, cfg.floor))?;
            }
            let att = water_fill(&att_problem)?;
            let orc = water_fill(&orc_problem)?;
            Ok(UserOutcome {
                user: u,
                group,
                n_objects: n,
                random: random / draws as f64,
                uniform: score(&uniform(n, total))?,
                attention: score(&att)?,
                oracle: score(&orc)?,
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let summary = summarize(&users, missing_fraction);
    Ok(AllocationExperiment { users, summary })
}

pub fn summarize(users: &[UserOutcome], missing_fraction: f64) -> ExperimentSummary {
    let imp: Vec<f64> = users.iter().map(UserOutcome::improvement_pct).collect();
    let n = users.len().max(1) as f64;
    ExperimentSummary {
        mean_improvement_pct: imp.iter().sum::<f64>() / n,
        max_improvement_pct: imp.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min_improvement_pct: imp.iter().copied().fold(f64::INFINITY, f64::min),
        mean_oracle_gap_pct: users.iter().map(UserOutcome::oracle_gap_pct).sum::<f64>() / n,
        ordered_fraction: users.iter().filter(|o| o.ordered()).count() as f64 / n,
        missing_fraction,
    }
}

/// Generates the corpus, sparsifies it, predicts the missing levels and runs the schemes.
pub fn run_allocation_experiment(
    cfg: &AllocationExperimentConfig,
    exec: Execution,
) -> Result<AllocationExperiment, ExperimentError> {
    let corpus = generate_corpus(&cfg.corpus, cfg.seed)?;
    let records = sparsify(&corpus, &cfg.sparsify, cfg.seed.wrapping_add(1), exec);
    let fit = factorize(&records.matrix, &cfg.factorize)?;
    let levels = completed_levels(&records.matrix, &predict_levels(&fit.model));
    run_on_corpus(&corpus, &levels, cfg, records.matrix.missing_fraction(), exec)
}

/// One row of a KPI sweep. Monte Carlo columns are `None` without an oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KpiRow {
    pub user: usize,
    pub x: f64,
    pub rate_analytic: f64,
    pub rate_mc: Option<f64>,
    pub rate_mc_se: Option<f64>,
    pub bep_analytic: f64,
    pub bep_mc: Option<f64>,
    pub bep_mc_se: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KpiSweep {
    pub resource: Resource,
    pub from: f64,
    pub to: f64,
    pub points: usize,
}

impl KpiSweep {
    /// Evenly spaced sweep values; a single point evaluates `from`.
    pub fn values(&self) -> Vec<f64> {
        if self.points <= 1 {
            return vec![self.from];
        }
        (0..self.points)
            .map(|k| self.from + (self.to - self.from) * k as f64 / (self.points - 1) as f64)
            .collect()
    }
}

/// Rate and BEP of every scenario user along one resource dimension.
///
/// Rendering capacity does not touch the link and is rejected.
pub fn kpi_sweep(
    scenario: &Scenario,
    sweep: &KpiSweep,
    oracle: Option<&OracleConfig>,
    exec: Execution,
) -> Result<Vec<KpiRow>, KpiError> {
    assert!(sweep.resource != Resource::RenderTotal, "rendering capacity is not a link resource");
    let xs = sweep.values();
    let mut rows = Vec::with_capacity(scenario.n_users() * xs.len());
    for (k, model) in scenario.qoe_models().iter().enumerate() {
        for (step, &x) in xs.iter().enumerate() {
            let mut link = model.link.clone();
            match sweep.resource {
                Resource::PowerDown => link.tx_power_down = x,
                Resource::Bandwidth => link.bandwidth_hz = x,
                Resource::PowerUp => link.tx_power_up = x,
                Resource::RenderTotal => unreachable!(),
            }
            let rate = downlink_rate(&link, model.zeta_down, KpiMethod::ClosedForm)?;
            let bep = uplink_bep(&link, model.zeta_up, model.modulation, KpiMethod::ClosedForm)?.value;
            let (r_mc, e_mc) = match oracle {
                Some(cfg) => {
                    // distinct streams per (user, point) keep rows independent
                    let c = OracleConfig {
                        seed: cfg.seed ^ ((k as u64) << 40 | step as u64),
                        ..*cfg
                    };
                    let r = empirical_rate(&link, model.zeta_down, &c, exec);
                    let e = empirical_bep(&link, model.zeta_up, &c, model.modulation, exec);
                    (Some(r), Some(e))
                }
                None => (None, None),
            };
            rows.push(KpiRow {
                user: k + 1,
                x,
                rate_analytic: rate,
                rate_mc: r_mc.map(|e| e.mean),
                rate_mc_se: r_mc.map(|e| e.std_error),
                bep_analytic: bep,
                bep_mc: e_mc.map(|e| e.mean),
                bep_mc_se: e_mc.map(|e| e.std_error),
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_split_is_feasible() {
        let mut rng = substream(1, 0);
        let a = random_split(&mut rng, 8, 160.0, 15.0);
        assert!((a.iter().sum::<f64>() - 160.0).abs() < 1e-9);
        assert!(a.iter().all(|&x| x >= 15.0));
    }

    #[test]
    fn floor_budget_ties_at_zero() {
        let cfg = AllocationExperimentConfig {
            corpus: CorpusConfig {
                n_users: 6,
                n_images: 200,
                ..CorpusConfig::default()
            },
            budget_per_object: 15.0,
            ..Default::default()
        };
        let r = run_allocation_experiment(&cfg, Execution::Sequential).unwrap();
        for u in &r.users {
            for s in Scheme::ALL {
                assert!(u.mi(s).abs() < 1e-9, "{u:?}");
            }
        }
    }

    #[test]
    fn single_point_sweep() {
        let sweep = KpiSweep {
            resource: Resource::PowerDown,
            from: 200.0,
            to: 900.0,
            points: 1,
        };
        let rows = kpi_sweep(&Scenario::table2(), &sweep, None, Execution::Sequential).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.x == 200.0 && r.rate_mc.is_none()));
        assert!(rows[2].rate_analytic > rows[1].rate_analytic && rows[1].rate_analytic > rows[0].rate_analytic);
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
    }
}
