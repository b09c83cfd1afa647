use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use metaqoe::allocation::AllocationError;
use metaqoe::attention::{error_histogram, factorize, predict_levels, FactorizeConfig};
use metaqoe::contract::{optimize_contract, write_surface, ContractError, ContractGrid, InnerConfig};
use metaqoe::dataset::{
    generate_corpus, level_histogram, load_matrix, sparsify, write_matrix_file, CorpusConfig, CorpusManifest,
    SparsifyConfig,
};
use metaqoe::exec::Execution;
use metaqoe::experiment::{
    kpi_sweep, run_allocation_experiment, AllocationExperimentConfig, ExperimentError, KpiSweep, Scheme,
};
use metaqoe::oracle::OracleConfig;
use metaqoe::scenario::Scenario;
use metaqoe::types::Resource;

#[derive(Parser)]
#[command(name = "metaqoe", version, about = "Attention-aware QoE, link KPIs and contract design experiments")]
struct Cli {
    /// Run every stage on one thread (outputs are identical either way).
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct OutDir {
    /// Directory receiving the outputs and manifest.json.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Downlink rate and uplink BEP of every scenario user along one resource sweep.
    Kpi {
        /// Scenario JSON; the built-in three-user preset when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// power_down, bandwidth or power_up.
        #[arg(long, default_value = "power_down")]
        sweep: String,
        #[arg(long, default_value_t = 50.0)]
        from: f64,
        #[arg(long, default_value_t = 500.0)]
        to: f64,
        #[arg(long, default_value_t = 10)]
        points: usize,
        /// Add Monte Carlo estimates next to the analytic values.
        #[arg(long)]
        oracle: bool,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[command(flatten)]
        out: OutDir,
    },
    /// Rendering-allocation schemes on a synthetic corpus.
    ExperimentAllocation {
        /// Schemes to report (comma separated); all four by default.
        #[arg(long, value_delimiter = ',')]
        scheme: Vec<String>,
        #[arg(long, default_value_t = 20.0)]
        budget_per_object: f64,
        #[arg(long, default_value_t = 15.0)]
        floor: f64,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long)]
        s: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value_t = 256)]
        random_draws: usize,
        #[command(flatten)]
        out: OutDir,
    },
    /// Grid search for the optimal (F_s, u_M) contract.
    Contract {
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Fixed-fee range as `lo:hi`.
        #[arg(long, default_value = "0:3000000")]
        fs_range: String,
        /// Per-QoE fee range as `lo:hi`.
        #[arg(long, default_value = "0:10000")]
        um_range: String,
        /// Grid size as `N` or `NFSxNUM`.
        #[arg(long, default_value = "50")]
        grid: String,
        /// Override the InP utility threshold.
        #[arg(long)]
        uth: Option<f64>,
        /// Override the InP risk aversion.
        #[arg(long)]
        rra: Option<f64>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Factorise a sparse attention matrix and predict the missing levels.
    Predict {
        #[arg(long)]
        matrix: PathBuf,
        /// Dense ground truth; enables the error histogram.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        s: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        max_sweeps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Write a synthetic corpus: dense truth and the sparse observed records.
    Generate {
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// Seed of the observation mask; `seed + 1` when omitted.
        #[arg(long)]
        sparsify_seed: Option<u64>,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        objects: Option<usize>,
        #[arg(long)]
        images: Option<usize>,
        #[arg(long)]
        groups: Option<usize>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Write the built-in scenario as JSON.
    Scenario {
        #[command(flatten)]
        out: OutDir,
    },
    /// Re-run the command recorded in a manifest.
    Replay {
        manifest: PathBuf,
        #[command(flatten)]
        out: OutDir,
    },
}

/// Fully resolved inputs of one command; enough to reproduce its outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
enum Run {
    Kpi {
        scenario: Scenario,
        sweep: KpiSweep,
        oracle: Option<OracleConfig>,
    },
    ExperimentAllocation {
        config: AllocationExperimentConfig,
        schemes: Vec<Scheme>,
    },
    Contract {
        scenario: Scenario,
        grid: ContractGrid,
        inner: InnerConfig,
    },
    Predict {
        matrix: PathBuf,
        truth: Option<PathBuf>,
        config: FactorizeConfig,
    },
    Generate {
        corpus: CorpusConfig,
        sparsify: SparsifyConfig,
        seed: u64,
        sparsify_seed: u64,
    },
    Scenario {
        scenario: Scenario,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    tool: String,
    version: String,
    run: Run,
    outputs: Vec<String>,
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Infeasible(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Config(_) => 2,
            CliError::Infeasible(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Infeasible(m) => write!(f, "{m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

fn io_err(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn parse_range(s: &str) -> Result<(f64, f64), CliError> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| CliError::Config(format!("range `{s}` must look like lo:hi")))?;
    let p = |x: &str| {
        x.trim()
            .parse::<f64>()
            .map_err(|_| CliError::Config(format!("bad number `{x}` in range `{s}`")))
    };
    Ok((p(a)?, p(b)?))
}

fn parse_grid(s: &str) -> Result<(usize, usize), CliError> {
    let p = |x: &str| {
        x.trim()
            .parse::<usize>()
            .map_err(|_| CliError::Config(format!("bad grid size `{s}`")))
    };
    match s.split_once(['x', 'X']) {
        Some((a, b)) => Ok((p(a)?, p(b)?)),
        None => {
            let n = p(s)?;
            Ok((n, n))
        }
    }
}

fn load_scenario(path: Option<&Path>) -> Result<Scenario, CliError> {
    match path {
        Some(p) => Scenario::load(p).map_err(|e| CliError::Config(e.to_string())),
        None => Ok(Scenario::table2()),
    }
}

fn resolve(cmd: Cmd) -> Result<(Run, PathBuf), CliError> {
    Ok(match cmd {
        Cmd::Kpi {
            scenario,
            sweep,
            from,
            to,
            points,
            oracle,
            samples,
            seed,
            out,
        } => {
            let resource: Resource = sweep.parse().map_err(CliError::Config)?;
            if resource == Resource::RenderTotal {
                return Err(CliError::Config("render_total does not affect the link KPIs".into()));
            }
            if points == 0 || !(from > 0.0 || (resource == Resource::Bandwidth && from >= 0.0)) || to < from {
                return Err(CliError::Config(format!("bad sweep {from}..{to} with {points} points")));
            }
            if oracle && samples == 0 {
                return Err(CliError::Config("--samples must be >= 1".into()));
            }
            let run = Run::Kpi {
                scenario: load_scenario(scenario.as_deref())?,
                sweep: KpiSweep {
                    resource,
                    from,
                    to,
                    points,
                },
                oracle: oracle.then_some(OracleConfig {
                    samples,
                    seed,
                    ..OracleConfig::default()
                }),
            };
            (run, out.out_dir)
        }
        Cmd::ExperimentAllocation {
            scheme,
            budget_per_object,
            floor,
            seed,
            s,
            lambda,
            random_draws,
            out,
        } => {
            let schemes = if scheme.is_empty() {
                Scheme::ALL.to_vec()
            } else {
                scheme
                    .iter()
                    .map(|x| x.parse::<Scheme>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(CliError::Config)?
            };
            let mut config = AllocationExperimentConfig {
                budget_per_object,
                floor,
                seed,
                random_draws,
                ..AllocationExperimentConfig::default()
            };
            if let Some(s) = s {
                config.factorize.s = s;
            }
            if let Some(l) = lambda {
                config.factorize.lambda = l;
            }
            (Run::ExperimentAllocation { config, schemes }, out.out_dir)
        }
        Cmd::Contract {
            scenario,
            fs_range,
            um_range,
            grid,
            uth,
            rra,
            out,
        } => {
            let mut scenario = load_scenario(scenario.as_deref())?;
            if let Some(u) = uth {
                scenario.market.inp_utility_floor = u;
            }
            if let Some(t) = rra {
                scenario.market.rra = t;
            }
            scenario.validate().map_err(|e| CliError::Config(e.to_string()))?;
            let (nf, nu) = parse_grid(&grid)?;
            let grid = ContractGrid {
                fixed_fee: parse_range(&fs_range)?,
                per_qoe_fee: parse_range(&um_range)?,
                fixed_fee_points: nf,
                per_qoe_fee_points: nu,
            };
            grid.validate().map_err(|e| CliError::Config(e.to_string()))?;
            let run = Run::Contract {
                scenario,
                grid,
                inner: InnerConfig::default(),
            };
            (run, out.out_dir)
        }
        Cmd::Predict {
            matrix,
            truth,
            s,
            lambda,
            tol,
            max_sweeps,
            seed,
            out,
        } => {
            let d = FactorizeConfig::default();
            let config = FactorizeConfig {
                s: s.unwrap_or(d.s),
                lambda: lambda.unwrap_or(d.lambda),
                tol: tol.unwrap_or(d.tol),
                max_sweeps: max_sweeps.unwrap_or(d.max_sweeps),
                seed: seed.unwrap_or(d.seed),
            };
            (Run::Predict { matrix, truth, config }, out.out_dir)
        }
        Cmd::Generate {
            seed,
            sparsify_seed,
            users,
            objects,
            images,
            groups,
            out,
        } => {
            let d = CorpusConfig::default();
            let corpus = CorpusConfig {
                n_users: users.unwrap_or(d.n_users),
                n_objects: objects.unwrap_or(d.n_objects),
                n_images: images.unwrap_or(d.n_images),
                n_groups: groups.unwrap_or(d.n_groups),
                ..d
            };
            corpus.validate().map_err(|e| CliError::Config(e.to_string()))?;
            let run = Run::Generate {
                corpus,
                sparsify: SparsifyConfig::default(),
                seed,
                sparsify_seed: sparsify_seed.unwrap_or(seed.wrapping_add(1)),
            };
            (run, out.out_dir)
        }
        Cmd::Scenario { out } => (
            Run::Scenario {
                scenario: Scenario::table2(),
            },
            out.out_dir,
        ),
        Cmd::Replay { manifest, out } => {
            let text = std::fs::read_to_string(&manifest).map_err(|e| CliError::Config(format!("{}: {e}", manifest.display())))?;
            let m: Manifest = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("bad manifest: {e}")))?;
            (m.run, out.out_dir)
        }
    })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(dir.join(name)).map_err(io_err)?))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(io_err)?;
    w.write_all(b"\n").map_err(io_err)?;
    w.flush().map_err(io_err)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn execute(run: &Run, dir: &Path, exec: Execution) -> Result<Vec<String>, CliError> {
    match run {
        Run::Kpi { scenario, sweep, oracle } => {
            let rows = kpi_sweep(scenario, sweep, oracle.as_ref(), exec).map_err(io_err)?;
            let mut w = csv::Writer::from_writer(create(dir, "kpi.csv")?);
            w.write_record([
                "user",
                "x",
                "rate_analytic",
                "rate_mc",
                "rate_mc_se",
                "bep_analytic",
                "bep_mc",
                "bep_mc_se",
            ])
            .map_err(io_err)?;
            for r in &rows {
                w.write_record([
                    r.user.to_string(),
                    r.x.to_string(),
                    r.rate_analytic.to_string(),
                    opt(r.rate_mc),
                    opt(r.rate_mc_se),
                    r.bep_analytic.to_string(),
                    opt(r.bep_mc),
                    opt(r.bep_mc_se),
                ])
                .map_err(io_err)?;
            }
            w.flush().map_err(io_err)?;
            Ok(vec!["kpi.csv".into()])
        }
        Run::ExperimentAllocation { config, schemes } => {
            let r = run_allocation_experiment(config, exec).map_err(|e| match e {
                ExperimentError::Allocation(a @ AllocationError::Infeasible { .. }) => CliError::Infeasible(a.to_string()),
                ExperimentError::Allocation(a) => CliError::Config(a.to_string()),
                ExperimentError::Dataset(d) => CliError::Config(d.to_string()),
                ExperimentError::Attention(a) => CliError::Runtime(a.to_string()),
            })?;
            let mut w = csv::Writer::from_writer(create(dir, "allocation.csv")?);
            let mut header = vec!["user".to_string(), "group".into(), "n_objects".into()];
            header.extend(schemes.iter().map(|s| s.name().to_string()));
            header.extend(["improvement_pct".to_string(), "oracle_gap_pct".into()]);
            w.write_record(&header).map_err(io_err)?;
            for u in &r.users {
                let mut row = vec![u.user.to_string(), u.group.to_string(), u.n_objects.to_string()];
                row.extend(schemes.iter().map(|&s| u.mi(s).to_string()));
                row.extend([u.improvement_pct().to_string(), u.oracle_gap_pct().to_string()]);
                w.write_record(&row).map_err(io_err)?;
            }
            w.flush().map_err(io_err)?;
            let s = r.summary;
            let mut w = csv::Writer::from_writer(create(dir, "allocation_summary.csv")?);
            w.write_record([
                "mean_improvement_pct",
                "max_improvement_pct",
                "min_improvement_pct",
                "mean_oracle_gap_pct",
                "ordered_fraction",
                "missing_fraction",
            ])
            .map_err(io_err)?;
            w.write_record([
                s.mean_improvement_pct.to_string(),
                s.max_improvement_pct.to_string(),
                s.min_improvement_pct.to_string(),
                s.mean_oracle_gap_pct.to_string(),
                s.ordered_fraction.to_string(),
                s.missing_fraction.to_string(),
            ])
            .map_err(io_err)?;
            w.flush().map_err(io_err)?;
            Ok(vec!["allocation.csv".into(), "allocation_summary.csv".into()])
        }
        Run::Contract { scenario, grid, inner } => {
            let outcome = optimize_contract(scenario, grid, inner, exec).map_err(|e| match e {
                ContractError::IrInfeasible { .. } => CliError::Infeasible(e.to_string()),
                ContractError::BadGrid(_) => CliError::Config(e.to_string()),
                other => CliError::Runtime(other.to_string()),
            })?;
            write_surface(create(dir, "surface.csv")?, &outcome.surface).map_err(io_err)?;
            write_json(dir, "optimum.json", &outcome.solution)?;
            Ok(vec!["surface.csv".into(), "optimum.json".into()])
        }
        Run::Predict { matrix, truth, config } => {
            let observed = load_matrix(matrix).map_err(|e| CliError::Config(format!("{}: {e}", matrix.display())))?;
            let truth = truth
                .as_ref()
                .map(|p| load_matrix(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display()))))
                .transpose()?;
            if let Some(t) = &truth {
                if (t.n_users(), t.n_objects()) != (observed.n_users(), observed.n_objects()) {
                    return Err(CliError::Config("truth and matrix shapes differ".into()));
                }
            }
            let fit = factorize(&observed, config).map_err(|e| CliError::Config(e.to_string()))?;
            let mut pred = predict_levels(&fit.model);
            pred.object_labels = observed.object_labels.clone();
            write_matrix_file(dir.join("predictions.csv"), &pred).map_err(io_err)?;
            write_json(dir, "fit.json", &fit)?;
            let mut outputs = vec!["predictions.csv".to_string(), "fit.json".into()];
            if let Some(t) = &truth {
                let all = error_histogram(&pred, t, |_, _| true);
                let unobs = error_histogram(&pred, t, |u, i| !observed.is_observed(u, i));
                let mut w = csv::Writer::from_writer(create(dir, "errors.csv")?);
                w.write_record(["subset", "count", "zero", "one", "two_plus"]).map_err(io_err)?;
                for (name, h) in [("overall", all), ("unobserved", unobs)] {
                    w.write_record([
                        name.to_string(),
                        h.count.to_string(),
                        h.zero.to_string(),
                        h.one.to_string(),
                        h.two_plus.to_string(),
                    ])
                    .map_err(io_err)?;
                }
                w.flush().map_err(io_err)?;
                outputs.push("errors.csv".into());
            }
            Ok(outputs)
        }
        Run::Generate {
            corpus,
            sparsify: sp,
            seed,
            sparsify_seed,
        } => {
            let c = generate_corpus(corpus, *seed).map_err(|e| CliError::Config(e.to_string()))?;
            let records = sparsify(&c, sp, *sparsify_seed, exec);
            write_matrix_file(dir.join("truth.csv"), &c.truth).map_err(io_err)?;
            write_matrix_file(dir.join("observed.csv"), &records.matrix).map_err(io_err)?;
            let m = CorpusManifest {
                seed: *seed,
                sparsify_seed: *sparsify_seed,
                config: corpus.clone(),
                sparsify: *sp,
                level_histogram: level_histogram(&c.truth),
                missing_fraction: records.matrix.missing_fraction(),
                redrawn_users: records.redrawn_users.clone(),
            };
            write_json(dir, "corpus.json", &m)?;
            Ok(vec!["truth.csv".into(), "observed.csv".into(), "corpus.json".into()])
        }
        Run::Scenario { scenario } => {
            write_json(dir, "scenario.json", scenario)?;
            Ok(vec!["scenario.json".into()])
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    let (run, dir) = resolve(cli.command)?;
    std::fs::create_dir_all(&dir).map_err(io_err)?;
    let outputs = execute(&run, &dir, exec)?;
    let manifest = Manifest {
        tool: "metaqoe".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        run,
        outputs: outputs.clone(),
    };
    write_json(&dir, "manifest.json", &manifest)?;
    for o in outputs {
        println!("{}", dir.join(o).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
