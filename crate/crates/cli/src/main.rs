//! Command-line front end: one subcommand per pipeline stage, plus the full run, the
//! scaling benchmark, and the brute-force oracle check.
//!
//! Every subcommand reads the same TOML config (`--config`, optional), accepts
//! `--set key=value` overrides (dotted keys, TOML values), and works inside the
//! config's output directory. Stage inputs default to the artifacts an earlier stage
//! wrote there and can be pointed elsewhere with flags.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use rlhf_explain::explain::ExplainContext;
use rlhf_explain::io;
use rlhf_explain::oracle::{brute_force_min_subset, subset_is_feasible};
use rlhf_explain::pipeline::{
    artifacts, bench_scaling, run_pipeline, score_and_partition, summary_text, write_world, PipelineConfig,
};
use rlhf_explain::policy::{evaluate_win_rate, finetune_policy_traced, rlhf_policy, CandidatePolicy};
use rlhf_explain::reward::train_reward_traced;
use rlhf_explain::synthetic::{rng_for, Stream};
use rlhf_explain::unlearn::unlearn_reward;
use rlhf_explain::{
    explain_batch, generate_synthetic_world, load_preference_dataset, load_validation_set, project_onto_hull,
    types, FeatureVector, HullProblem, PreferenceDataset, RewardParams, ValidationSet,
};
use serde::Serialize;

const EXIT_CONFIG: u8 = 1;
const EXIT_STAGE: u8 = 2;
const EXIT_CHECK: u8 = 3;

#[derive(Parser)]
#[command(name = "rlhf-explain", version, about = "Explain unsatisfactory RLHF responses by training data, unlearn, and fine-tune")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config entry, e.g. `--set finetune.beta_bar=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the Bradley-Terry reward model.
    TrainReward {
        #[arg(long)]
        preferences: Option<PathBuf>,
    },
    /// Closed-form KL-regularized policy over each prompt's candidates.
    RlhfPolicy {
        #[arg(long)]
        reward: Option<PathBuf>,
        #[arg(long)]
        validation: Option<PathBuf>,
    },
    /// Score generated responses and label them against the threshold.
    Partition {
        #[arg(long)]
        validation: Option<PathBuf>,
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        judge: Option<PathBuf>,
    },
    /// Explanation sets for the unsatisfactory prompts.
    Explain {
        #[arg(long)]
        preferences: Option<PathBuf>,
        #[arg(long)]
        validation: Option<PathBuf>,
    },
    /// Unlearn the explanation union from the reward model.
    Unlearn {
        #[arg(long)]
        preferences: Option<PathBuf>,
        #[arg(long)]
        reward: Option<PathBuf>,
        #[arg(long)]
        union: Option<PathBuf>,
    },
    /// Fine-tune a shared softmax policy under the unlearned reward.
    Finetune {
        #[arg(long)]
        validation: Option<PathBuf>,
        #[arg(long)]
        reward: Option<PathBuf>,
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Judge one policy against another per prompt group.
    Evaluate {
        #[arg(long)]
        validation: Option<PathBuf>,
        #[arg(long)]
        policy_a: Option<PathBuf>,
        #[arg(long)]
        policy_b: Option<PathBuf>,
        #[arg(long)]
        judge: Option<PathBuf>,
    },
    /// Run every stage and write the report.
    Run {
        /// Exit with status 3 unless the tuned policy wins at least 60% of the
        /// unsatisfactory prompts and loses at most 60% of the satisfactory ones.
        #[arg(long)]
        check: bool,
    },
    /// Time explanations on synthetic datasets of increasing size.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "100,200,400,800,1600")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 8)]
        dim: usize,
        /// Largest acceptable log-log slope of time against size.
        #[arg(long, default_value_t = 5.0)]
        max_slope: f64,
    },
    /// Compare greedy explanations with exhaustive search on small random instances.
    OracleCheck {
        #[arg(long, default_value_t = 200)]
        instances: usize,
        #[arg(long, default_value_t = 12)]
        max_n: usize,
        #[arg(long, default_value_t = 3)]
        dim: usize,
    },
}

/// An error that maps to a specific exit status.
#[derive(Debug)]
struct Exit(u8, String);

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.1)
    }
}

impl std::error::Error for Exit {}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    Exit(EXIT_CONFIG, msg.into()).into()
}

fn check_failed(msg: impl Into<String>) -> anyhow::Error {
    Exit(EXIT_CHECK, msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(Exit(code, _)) = err.downcast_ref::<Exit>() {
        return *code;
    }
    match err.downcast_ref::<rlhf_explain::Error>() {
        Some(rlhf_explain::Error::InvalidConfig(_) | rlhf_explain::Error::Toml(_)) => EXIT_CONFIG,
        _ => EXIT_STAGE,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut table: toml::Table = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| config_error(format!("{}: {e}", path.display())))?;
            text.parse().map_err(|e| config_error(format!("{}: {e}", path.display())))?
        }
        None => toml::Table::new(),
    };
    for entry in &common.overrides {
        apply_override(&mut table, entry)?;
    }
    let mut config = PipelineConfig::from_table(table).map_err(|e| config_error(e.to_string()))?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.output_dir = out.clone();
    }
    config.validate().map_err(|e| config_error(e.to_string()))?;
    Ok(config)
}

/// `a.b.c=value`, where `value` is parsed as TOML and falls back to a bare string.
fn apply_override(table: &mut toml::Table, entry: &str) -> Result<()> {
    let (key, raw) = entry
        .split_once('=')
        .ok_or_else(|| config_error(format!("override `{entry}` is not KEY=VALUE")))?;
    let value: toml::Value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut node = table;
    for part in parents {
        node = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| config_error(format!("override `{key}`: `{part}` is not a table")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

/// Paths inside the run directory, with the config's external data taking precedence
/// where it exists.
struct Run {
    config: PipelineConfig,
    dir: PathBuf,
}

impl Run {
    fn artifact(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn pick(&self, flag: &Option<PathBuf>, name: &str) -> PathBuf {
        flag.clone().unwrap_or_else(|| self.artifact(name))
    }

    /// Writes the synthetic world into the run directory unless already present.
    fn ensure_world(&self) -> Result<()> {
        if let Some(world) = &self.config.synthetic {
            if !self.artifact(artifacts::DATASET).exists() {
                let w = generate_synthetic_world::<f64>(world, self.config.seed)?;
                write_world(&w, &self.dir)?;
            }
        }
        Ok(())
    }

    fn preferences(&self, flag: &Option<PathBuf>) -> Result<PreferenceDataset<f64>> {
        let path = match (flag, &self.config.data) {
            (Some(p), _) => p.clone(),
            (None, Some(data)) => data.preferences.clone(),
            (None, None) => {
                self.ensure_world()?;
                self.artifact(artifacts::DATASET)
            }
        };
        Ok(load_preference_dataset(&path)?)
    }

    fn raw_validation(&self, flag: &Option<PathBuf>) -> Result<ValidationSet<f64>> {
        let path = match (flag, &self.config.data) {
            (Some(p), _) => p.clone(),
            (None, Some(data)) => data.validation.clone(),
            (None, None) => {
                self.ensure_world()?;
                self.artifact(artifacts::VALIDATION_RAW)
            }
        };
        Ok(load_validation_set(&path)?)
    }

    fn judge(&self, flag: &Option<PathBuf>) -> Result<Option<RewardParams<f64>>> {
        let path = match (flag, &self.config.data) {
            (Some(p), _) => Some(p.clone()),
            (None, Some(data)) => data.judge.clone(),
            (None, None) => {
                self.ensure_world()?;
                Some(self.artifact(artifacts::TRUE_REWARD))
            }
        };
        Ok(path.map(|p| io::read_json(&p)).transpose()?)
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    let config = load_config(&cli.common)?;
    let run = Run {
        dir: config.output_dir.clone(),
        config,
    };
    match cli.command {
        Command::TrainReward { preferences } => {
            let data = run.preferences(&preferences)?;
            let summary = train_reward_traced(&data, &run.config.train)?;
            io::write_json(&run.artifact(artifacts::THETA0), &summary.params)?;
            io::write_json(&run.artifact(artifacts::TRAIN_SUMMARY), &summary)?;
            println!(
                "trained on {} examples: {} steps, mean log-likelihood {:.6}",
                data.len(),
                summary.steps,
                summary.log_likelihood
            );
        }
        Command::RlhfPolicy { reward, validation } => {
            let theta0: RewardParams<f64> = io::read_json(&run.pick(&reward, artifacts::THETA0))?;
            let items = run.raw_validation(&validation)?;
            let pi0 = rlhf_policy(&theta0, &CandidatePolicy::sft(&items), run.config.beta, &items)?;
            io::write_json(&run.artifact(artifacts::PI0), &pi0)?;
            println!("base policy over {} prompts written", items.len());
        }
        Command::Partition {
            validation,
            policy,
            judge,
        } => {
            let items = run.raw_validation(&validation)?;
            let pi0: CandidatePolicy<f64> = io::read_json(&run.pick(&policy, artifacts::PI0))?;
            let judge = run.judge(&judge)?;
            let labeled = score_and_partition(&items, &pi0, judge.as_ref(), run.config.threshold)?;
            types::write_validation_set(&labeled, run.artifact(artifacts::VALIDATION))?;
            println!(
                "{} prompts, {} unsatisfactory (threshold {})",
                labeled.len(),
                labeled.unsatisfactory_count(),
                run.config.threshold
            );
        }
        Command::Explain {
            preferences,
            validation,
        } => {
            let data = run.preferences(&preferences)?;
            let items = load_validation_set::<f64>(run.pick(&validation, artifacts::VALIDATION))?;
            let (explanations, union) = explain_batch(&items.unsatisfactory(), &data, &run.config.explain)?;
            io::write_jsonl(&run.artifact(artifacts::EXPLANATIONS), &explanations)?;
            io::write_json(&run.artifact(artifacts::UNION), &union)?;
            println!("{} explanations, union of {} examples", explanations.len(), union.len());
        }
        Command::Unlearn {
            preferences,
            reward,
            union,
        } => {
            let data = run.preferences(&preferences)?;
            let theta0: RewardParams<f64> = io::read_json(&run.pick(&reward, artifacts::THETA0))?;
            let ids: Vec<usize> = io::read_json(&run.pick(&union, artifacts::UNION))?;
            if ids.is_empty() {
                bail!("explanation union is empty; nothing to unlearn");
            }
            let subset = data.subset(&ids)?;
            let retained = data.without(&ids).ok();
            let trace = unlearn_reward(&theta0, &subset, &run.config.unlearn, retained.as_ref())?;
            io::write_json(&run.artifact(artifacts::UNLEARN_TRACE), &trace)?;
            io::write_json(&run.artifact(artifacts::THETA_U), &trace.final_params)?;
            let last = trace.steps.last().expect("trace has step 0");
            println!(
                "{} steps ({:?}), unlearn-set log-likelihood {:.6} -> {:.6}",
                trace.steps.len() - 1,
                trace.stop_reason,
                trace.steps[0].unlearn_log_likelihood,
                last.unlearn_log_likelihood
            );
        }
        Command::Finetune {
            validation,
            reward,
            policy,
        } => {
            let items = load_validation_set::<f64>(run.pick(&validation, artifacts::VALIDATION))?;
            let theta_u: RewardParams<f64> = io::read_json(&run.pick(&reward, artifacts::THETA_U))?;
            let pi0: CandidatePolicy<f64> = io::read_json(&run.pick(&policy, artifacts::PI0))?;
            if items.unsatisfactory_count() == 0 {
                eprintln!("warning: no unsatisfactory prompts; only the KL term is optimized");
            }
            let summary = finetune_policy_traced(&items, &theta_u, &pi0, &run.config.finetune)?;
            io::write_json(&run.artifact(artifacts::TUNED), &summary.policy)?;
            io::write_json(&run.artifact(artifacts::FINETUNE_SUMMARY), &summary)?;
            println!(
                "{} steps, objective {:.6} -> {:.6}",
                summary.steps,
                summary.objective_trace[0],
                summary.objective_trace.last().expect("non-empty trace")
            );
        }
        Command::Evaluate {
            validation,
            policy_a,
            policy_b,
            judge,
        } => {
            let items = load_validation_set::<f64>(run.pick(&validation, artifacts::VALIDATION))?;
            let a: CandidatePolicy<f64> = io::read_json(&run.pick(&policy_a, artifacts::TUNED))?;
            let b: CandidatePolicy<f64> = io::read_json(&run.pick(&policy_b, artifacts::PI0))?;
            let judge = run
                .judge(&judge)?
                .ok_or_else(|| config_error("evaluate needs a judge (--judge or data.judge)"))?;
            let report = EvaluateReport {
                unsatisfactory: evaluate_win_rate(&a, &b, &items.unsatisfactory(), &judge)?,
                satisfactory: evaluate_win_rate(&a, &b, &items.satisfactory(), &judge)?,
                all: evaluate_win_rate(&a, &b, &items, &judge)?,
            };
            io::write_json(&run.artifact(artifacts::WIN_RATES), &report)?;
            print_json(&report)?;
        }
        Command::Run { check } => {
            let outcome = run_pipeline(&run.config)?;
            print!("{}", summary_text(&outcome.report));
            if check {
                let rates = outcome
                    .report
                    .win_rates
                    .as_ref()
                    .ok_or_else(|| check_failed("no win rates to check"))?;
                let unsat = rates.unsatisfactory.win_rate_a;
                let base_over_tuned = 1.0 - rates.satisfactory.win_rate_a;
                if unsat < 0.6 || base_over_tuned > 0.6 {
                    return Err(check_failed(format!(
                        "check failed: unsatisfactory win rate {unsat:.4} (need >= 0.6), \
                         base-over-tuned on satisfactory {base_over_tuned:.4} (need <= 0.6)"
                    )));
                }
                println!("check passed");
            }
        }
        Command::Bench { sizes, dim, max_slope } => {
            let table = bench_scaling(&sizes, dim, run.config.seed)?;
            io::write_json_pretty(&run.artifact("bench.json"), &table)?;
            println!("{:>8} {:>12} {:>10} {:>6}", "n", "seconds", "iterations", "|S|");
            for row in &table.rows {
                println!("{:>8} {:>12.6} {:>10} {:>6}", row.n, row.seconds, row.iterations, row.subset_size);
            }
            println!("log-log slope: {:.3}", table.slope);
            if !table.iterations_within_bound {
                return Err(check_failed("iterations exceeded n"));
            }
            if table.slope > max_slope {
                return Err(check_failed(format!("slope {:.3} above {max_slope}", table.slope)));
            }
        }
        Command::OracleCheck { instances, max_n, dim } => {
            let report = oracle_check(instances, max_n, dim, &run.config)?;
            io::write_json_pretty(&run.artifact("oracle_check.json"), &report)?;
            print_json(&report)?;
            if report.infeasible_by_oracle > 0 || report.over_iteration_bound > 0 {
                return Err(check_failed("greedy output failed the oracle check"));
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct EvaluateReport {
    unsatisfactory: rlhf_explain::WinRateReport,
    satisfactory: rlhf_explain::WinRateReport,
    all: rlhf_explain::WinRateReport,
}

#[derive(Serialize)]
struct OracleCheckReport {
    instances: usize,
    explained: usize,
    infeasible_by_oracle: usize,
    over_iteration_bound: usize,
    zero_gap: usize,
    mean_gap: f64,
    max_gap: f64,
}

/// Random small instances: Gaussian comparisons, query drawn from the same law.
fn oracle_check(instances: usize, max_n: usize, dim: usize, config: &PipelineConfig) -> Result<OracleCheckReport> {
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    if !(2..=20).contains(&max_n) || dim == 0 {
        return Err(config_error("oracle-check needs 2 <= max-n <= 20 and dim >= 1"));
    }
    let mut rng = rng_for(config.seed, Stream::Eval);
    let gaussian = |rng: &mut rand_chacha::ChaCha20Rng| -> FeatureVector<f64> {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        FeatureVector::new(v).expect("finite draws")
    };
    let solver = config.explain.solver;
    let mut report = OracleCheckReport {
        instances,
        explained: 0,
        infeasible_by_oracle: 0,
        over_iteration_bound: 0,
        zero_gap: 0,
        mean_gap: 0.0,
        max_gap: 0.0,
    };
    for _ in 0..instances {
        let n = rng.random_range(1..=max_n);
        let comps: Vec<FeatureVector<f64>> = (0..n).map(|_| gaussian(&mut rng)).collect();
        let query = gaussian(&mut rng);
        let data = PreferenceDataset::from_comparisons(comps.clone())?;
        let phi_hat = project_onto_hull(&HullProblem::new(comps, query.clone())?, &solver)?.projected;
        let e = ExplainContext::new(&data)?.explain(0, &query, &config.explain)?;
        report.explained += 1;
        if e.iterations > n {
            report.over_iteration_bound += 1;
        }
        if !subset_is_feasible(&e.projected, &data, &e.selected_ids, &solver)? {
            report.infeasible_by_oracle += 1;
        }
        let best = brute_force_min_subset(&phi_hat, &data, &solver)?;
        let gap = e.objective - best.optimal_objective;
        if gap.abs() <= 1e-9 * (1.0 + best.optimal_objective) {
            report.zero_gap += 1;
        }
        report.mean_gap += gap / instances as f64;
        report.max_gap = report.max_gap.max(gap);
    }
    Ok(report)
}

