//! End-to-end runs: train the reward model, derive the base policy, label validation
//! prompts, explain the unsatisfactory ones, unlearn the explanations, fine-tune, and
//! judge the result. Every intermediate artifact lands in the output directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::{explain_batch, ExplainContext, Explanation, ExplainerConfig};
use crate::io;
use crate::oracle::retrain_oracle;
use crate::policy::{
    evaluate_win_rate, finetune_policy_traced, mean_kl, rlhf_policy, selected_candidate, CandidatePolicy,
    FinetuneConfig, WinRateReport,
};
use crate::reward::{train_reward_traced, RewardParams, TrainConfig};
use crate::scalar::{self, Real};
use crate::synthetic::{generate_synthetic_world, SyntheticWorld, WorldConfig};
use crate::types::{
    load_preference_dataset, load_validation_set, partition_by_threshold, write_preference_dataset,
    write_validation_set, PreferenceDataset, ValidationSet,
};
use crate::unlearn::{unlearn_reward, StopReason, UnlearnConfig, UnlearnTrace};

/// Input files for a run on externally produced data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPaths {
    pub preferences: PathBuf,
    pub validation: PathBuf,
    /// Reward parameters used to score generated responses and judge win rates.
    /// Without it the validation file's own scores are used and win rates are skipped.
    #[serde(default)]
    pub judge: Option<PathBuf>,
    #[serde(default)]
    pub heldout: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// KL coefficient of the base RLHF policy.
    pub beta: f64,
    /// Scores strictly below this are unsatisfactory.
    pub threshold: f64,
    pub synthetic: Option<WorldConfig>,
    pub data: Option<DataPaths>,
    pub train: TrainConfig,
    pub explain: ExplainerConfig,
    pub unlearn: UnlearnConfig,
    pub finetune: FinetuneConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("pipeline-out"),
            beta: 1.0,
            threshold: 0.0,
            synthetic: Some(WorldConfig::default()),
            data: None,
            train: TrainConfig::default(),
            explain: ExplainerConfig::default(),
            unlearn: UnlearnConfig::default(),
            finetune: FinetuneConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        match (&self.synthetic, &self.data) {
            (Some(world), None) => world.validate()?,
            (None, Some(_)) => {}
            _ => {
                return Err(Error::InvalidConfig(
                    "exactly one of [synthetic] and [data] must be given".into(),
                ))
            }
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::InvalidConfig(format!("beta must be positive, got {}", self.beta)));
        }
        if !self.threshold.is_finite() {
            return Err(Error::InvalidConfig("threshold must be finite".into()));
        }
        self.train.validate()?;
        self.explain.validate()?;
        self.unlearn.validate()?;
        self.finetune.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Toml(e.to_string()))?;
        Self::from_table(table)
    }

    /// A table without `[data]` or `[synthetic]` gets the default synthetic world.
    pub fn from_table(table: toml::Table) -> Result<Self> {
        let explicit_world = table.contains_key("synthetic");
        let mut config: Self = table.try_into().map_err(|e: toml::de::Error| Error::Toml(e.to_string()))?;
        if config.data.is_some() && !explicit_world {
            config.synthetic = None;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&io::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Toml(e.to_string()))
    }
}

/// Output file names inside the run directory.
pub mod artifacts {
    pub const DATASET: &str = "dataset.jsonl";
    pub const VALIDATION_RAW: &str = "validation_raw.jsonl";
    pub const HELDOUT_RAW: &str = "heldout_raw.jsonl";
    pub const TRUE_REWARD: &str = "true_reward.json";
    pub const PLANTED_IDS: &str = "planted_ids.json";
    pub const CONFIG: &str = "config.toml";
    pub const THETA0: &str = "reward_theta0.json";
    pub const TRAIN_SUMMARY: &str = "train_summary.json";
    pub const PI0: &str = "pi0.json";
    pub const PI0_HELDOUT: &str = "pi0_heldout.json";
    pub const VALIDATION: &str = "validation.jsonl";
    pub const HELDOUT: &str = "heldout.jsonl";
    pub const EXPLANATIONS: &str = "explanations.jsonl";
    pub const UNION: &str = "explanation_union.json";
    pub const UNLEARN_TRACE: &str = "unlearn_trace.json";
    pub const THETA_U: &str = "reward_theta_u.json";
    pub const TUNED: &str = "policy_tuned.json";
    pub const FINETUNE_SUMMARY: &str = "finetune_summary.json";
    pub const WIN_RATES: &str = "win_rates.json";
    pub const REPORT: &str = "report.json";
    pub const SUMMARY: &str = "summary.txt";
    pub const PARTIAL_REPORT: &str = "partial_report.json";
    pub const TIMINGS: &str = "timings.json";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    NothingToExplain,
    InProgress,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    pub objective: f64,
    pub log_likelihood: f64,
    pub grad_norm: f64,
    /// Fraction of clean examples with `θ_0 · Δφ > 0` (synthetic runs).
    pub clean_sign_agreement: Option<f64>,
    /// Cosine between `θ_0` and the judge.
    pub judge_cosine: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub total: usize,
    pub unsatisfactory: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationSummary {
    pub query_id: usize,
    pub selected_ids: Vec<usize>,
    pub objective: f64,
    pub projection_distance: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainReport {
    pub items: Vec<ExplanationSummary>,
    pub union: Vec<usize>,
    /// Fraction of the union that was planted (synthetic runs).
    pub planted_share: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearnReport {
    pub steps: usize,
    pub stop_reason: StopReason,
    pub learning_rate: f64,
    pub initial_log_likelihood: f64,
    pub final_log_likelihood: f64,
    /// Mean `θ · Δφ` drop over the unlearned examples.
    pub unlearned_margin_drop: f64,
    /// Mean `θ · Δφ` drop over the retained examples.
    pub retained_margin_drop: f64,
    pub judge_cosine: Option<f64>,
    /// Cosine between `θ_u` and a model retrained without the union.
    pub retrain_cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub steps: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub grad_norm: f64,
    /// Mean `KL(π_tuned ‖ π_0)` over satisfactory prompts.
    pub satisfactory_kl: f64,
}

/// Tuned policy (A) against the base policy (B), judged per prompt group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinRates {
    pub unsatisfactory: WinRateReport,
    pub satisfactory: WinRateReport,
    pub validation: WinRateReport,
    pub heldout: Option<WinRateReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub seed: u64,
    pub status: RunStatus,
    pub train: Option<TrainReport>,
    pub partition: Option<PartitionReport>,
    pub explain: Option<ExplainReport>,
    pub unlearn: Option<UnlearnReport>,
    pub finetune: Option<FinetuneReport>,
    pub win_rates: Option<WinRates>,
}

impl PipelineReport {
    fn new(seed: u64) -> Self {
        Self {
            seed,
            status: RunStatus::InProgress,
            train: None,
            partition: None,
            explain: None,
            unlearn: None,
            finetune: None,
            win_rates: None,
        }
    }
}

/// Wall-clock seconds per stage. Kept out of the report so reports are reproducible.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub stages: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub report: PipelineReport,
    pub timings: Timings,
}

/// Writes a world's dataset, prompts, true reward, and planted ids into `dir`.
pub fn write_world(w: &SyntheticWorld<f64>, dir: &Path) -> Result<()> {
    write_preference_dataset(&w.dataset, dir.join(artifacts::DATASET))?;
    write_validation_set(&w.validation, dir.join(artifacts::VALIDATION_RAW))?;
    write_validation_set(&w.heldout, dir.join(artifacts::HELDOUT_RAW))?;
    io::write_json(&dir.join(artifacts::TRUE_REWARD), &w.true_reward)?;
    io::write_json(&dir.join(artifacts::PLANTED_IDS), &w.planted_misleading_ids)
}

struct Inputs {
    data: PreferenceDataset<f64>,
    validation: ValidationSet<f64>,
    heldout: Option<ValidationSet<f64>>,
    judge: Option<RewardParams<f64>>,
    planted: Option<Vec<usize>>,
}

fn load_inputs(config: &PipelineConfig, out: &Path) -> Result<Inputs> {
    if let Some(world) = &config.synthetic {
        let w = generate_synthetic_world::<f64>(world, config.seed)?;
        write_world(&w, out)?;
        let heldout = (!w.heldout.is_empty()).then_some(w.heldout);
        return Ok(Inputs {
            data: w.dataset,
            validation: w.validation,
            heldout,
            judge: Some(w.true_reward),
            planted: Some(w.planted_misleading_ids),
        });
    }
    let paths = config
        .data
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("no input data configured".into()))?;
    Ok(Inputs {
        data: load_preference_dataset(&paths.preferences)?,
        validation: load_validation_set(&paths.validation)?,
        heldout: paths.heldout.as_ref().map(load_validation_set).transpose()?,
        judge: paths.judge.as_ref().map(|p| io::read_json(p)).transpose()?,
        planted: None,
    })
}

/// Sets each item's generated response to the policy's argmax and, given a judge,
/// its score to the judge's reward; then labels by `threshold`.
pub fn score_and_partition<T: Real>(
    items: &ValidationSet<T>,
    policy: &CandidatePolicy<T>,
    judge: Option<&RewardParams<T>>,
    threshold: T,
) -> Result<ValidationSet<T>> {
    let mut scored = Vec::with_capacity(items.len());
    for item in items.items() {
        let mut item = item.clone();
        if let Some(judge) = judge {
            item.check_dim(judge.dim())?;
            item.generated_index = selected_candidate(policy, &item)?;
            item.score = judge.score(item.generated_feature());
        }
        scored.push(item);
    }
    partition_by_threshold(&ValidationSet::new(scored), threshold)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let denom = scalar::norm(a) * scalar::norm(b);
    if denom > 0.0 {
        scalar::dot(a, b) / denom
    } else {
        0.0
    }
}

fn mean_margin(theta: &RewardParams<f64>, comparisons: &[crate::types::FeatureVector<f64>], ids: &[usize]) -> f64 {
    if ids.is_empty() {
        return 0.0;
    }
    ids.iter().map(|&i| theta.score(&comparisons[i])).sum::<f64>() / ids.len() as f64
}

struct Stopwatch {
    timings: Timings,
}

impl Stopwatch {
    fn time<R>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<R>) -> Result<R> {
        let start = Instant::now();
        let out = f().map_err(|e| e.in_stage(stage));
        self.timings.stages.push((stage.to_string(), start.elapsed().as_secs_f64()));
        out
    }
}

/// Runs every stage. On a stage failure the report so far is written to
/// `partial_report.json` and the error names the stage.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutcome> {
    config.validate()?;
    let out = config.output_dir.clone();
    let mut report = PipelineReport::new(config.seed);
    let mut clock = Stopwatch {
        timings: Timings::default(),
    };
    match run_stages(config, &out, &mut report, &mut clock) {
        Ok(()) => {
            emit_report(&report, &out)?;
            io::write_json_pretty(&out.join(artifacts::TIMINGS), &clock.timings)?;
            Ok(PipelineOutcome {
                report,
                timings: clock.timings,
            })
        }
        Err(e) => {
            // Best effort: the stage error is what the caller needs to see.
            let _ = io::write_json_pretty(&out.join(artifacts::PARTIAL_REPORT), &report);
            Err(e)
        }
    }
}

fn run_stages(config: &PipelineConfig, out: &Path, report: &mut PipelineReport, clock: &mut Stopwatch) -> Result<()> {
    io::write_string(&out.join(artifacts::CONFIG), &config.to_toml()?)?;
    let inputs = clock.time("load", || load_inputs(config, out))?;
    let data = &inputs.data;
    let comparisons = data.comparisons();
    let judge = inputs.judge.as_ref();

    let train = clock.time("train", || train_reward_traced(data, &config.train))?;
    io::write_json(&out.join(artifacts::THETA0), &train.params)?;
    io::write_json(&out.join(artifacts::TRAIN_SUMMARY), &train)?;
    let theta0 = train.params.clone();
    let clean_sign_agreement = inputs.planted.as_ref().map(|planted| {
        let clean: Vec<usize> = (0..data.len()).filter(|i| planted.binary_search(i).is_err()).collect();
        let agree = clean.iter().filter(|&&i| theta0.score(&comparisons[i]) > 0.0).count();
        agree as f64 / clean.len().max(1) as f64
    });
    report.train = Some(TrainReport {
        steps: train.steps,
        objective: train.objective,
        log_likelihood: train.log_likelihood,
        grad_norm: train.grad_norm,
        clean_sign_agreement,
        judge_cosine: judge.map(|j| cosine(&theta0.theta, &j.theta)),
    });

    let (pi0, pi0_heldout) = clock.time("rlhf_policy", || {
        let pi0 = rlhf_policy(&theta0, &CandidatePolicy::sft(&inputs.validation), config.beta, &inputs.validation)?;
        let heldout = inputs
            .heldout
            .as_ref()
            .map(|h| rlhf_policy(&theta0, &CandidatePolicy::sft(h), config.beta, h))
            .transpose()?;
        Ok((pi0, heldout))
    })?;
    io::write_json(&out.join(artifacts::PI0), &pi0)?;
    if let Some(p) = &pi0_heldout {
        io::write_json(&out.join(artifacts::PI0_HELDOUT), p)?;
    }

    let (validation, heldout) = clock.time("partition", || {
        let v = score_and_partition(&inputs.validation, &pi0, judge, config.threshold)?;
        let h = match (&inputs.heldout, &pi0_heldout) {
            (Some(items), Some(p)) => Some(score_and_partition(items, p, judge, config.threshold)?),
            _ => None,
        };
        Ok((v, h))
    })?;
    write_validation_set(&validation, out.join(artifacts::VALIDATION))?;
    if let Some(h) = &heldout {
        write_validation_set(h, out.join(artifacts::HELDOUT))?;
    }
    report.partition = Some(PartitionReport {
        total: validation.len(),
        unsatisfactory: validation.unsatisfactory_count(),
    });
    if validation.unsatisfactory_count() == 0 {
        report.status = RunStatus::NothingToExplain;
        return Ok(());
    }

    let (explanations, union) = clock.time("explain", || {
        explain_batch(&validation.unsatisfactory(), data, &config.explain)
    })?;
    io::write_jsonl(&out.join(artifacts::EXPLANATIONS), &explanations)?;
    io::write_json(&out.join(artifacts::UNION), &union)?;
    report.explain = Some(ExplainReport {
        items: explanations.iter().map(summarize).collect(),
        planted_share: inputs.planted.as_ref().map(|planted| {
            let hits = union.iter().filter(|i| planted.binary_search(i).is_ok()).count();
            hits as f64 / union.len().max(1) as f64
        }),
        union: union.clone(),
    });

    let trace = clock.time("unlearn", || {
        let subset = data.subset(&union)?;
        let retained = data.without(&union).ok();
        unlearn_reward(&theta0, &subset, &config.unlearn, retained.as_ref())
    })?;
    io::write_json(&out.join(artifacts::UNLEARN_TRACE), &trace)?;
    io::write_json(&out.join(artifacts::THETA_U), &trace.final_params)?;
    let theta_u = trace.final_params.clone();
    let retrained = clock.time("retrain_oracle", || match data.without(&union) {
        Ok(_) => retrain_oracle(data, &union, &config.train).map(Some),
        Err(_) => Ok(None),
    })?;
    report.unlearn = Some(unlearn_summary(
        &trace,
        &theta0,
        &comparisons,
        &union,
        judge,
        retrained.as_ref(),
    ));

    let tuned = clock.time("finetune", || {
        finetune_policy_traced(&validation, &theta_u, &pi0, &config.finetune)
    })?;
    io::write_json(&out.join(artifacts::TUNED), &tuned.policy)?;
    io::write_json(&out.join(artifacts::FINETUNE_SUMMARY), &tuned)?;
    let satisfactory_kl = mean_kl(&tuned.policy, &pi0, &validation.satisfactory())?;
    report.finetune = Some(FinetuneReport {
        steps: tuned.steps,
        initial_objective: tuned.objective_trace[0],
        final_objective: *tuned.objective_trace.last().expect("trace starts non-empty"),
        grad_norm: tuned.grad_norm,
        satisfactory_kl,
    });

    if let Some(judge) = judge {
        let rates = clock.time("evaluate", || {
            Ok(WinRates {
                unsatisfactory: evaluate_win_rate(&tuned.policy, &pi0, &validation.unsatisfactory(), judge)?,
                satisfactory: evaluate_win_rate(&tuned.policy, &pi0, &validation.satisfactory(), judge)?,
                validation: evaluate_win_rate(&tuned.policy, &pi0, &validation, judge)?,
                heldout: match (&heldout, &pi0_heldout) {
                    (Some(h), Some(p)) => Some(evaluate_win_rate(&tuned.policy, p, h, judge)?),
                    _ => None,
                },
            })
        })?;
        io::write_json(&out.join(artifacts::WIN_RATES), &rates)?;
        report.win_rates = Some(rates);
    }
    report.status = RunStatus::Complete;
    Ok(())
}

fn summarize(e: &Explanation<f64>) -> ExplanationSummary {
    ExplanationSummary {
        query_id: e.query_id,
        selected_ids: e.selected_ids.clone(),
        objective: e.objective,
        projection_distance: e.projection_distance,
        iterations: e.iterations,
    }
}

fn unlearn_summary(
    trace: &UnlearnTrace<f64>,
    theta0: &RewardParams<f64>,
    comparisons: &[crate::types::FeatureVector<f64>],
    union: &[usize],
    judge: Option<&RewardParams<f64>>,
    retrained: Option<&RewardParams<f64>>,
) -> UnlearnReport {
    let theta_u = &trace.final_params;
    let retained: Vec<usize> = (0..comparisons.len()).filter(|i| union.binary_search(i).is_err()).collect();
    UnlearnReport {
        steps: trace.steps.len() - 1,
        stop_reason: trace.stop_reason,
        learning_rate: trace.learning_rate,
        initial_log_likelihood: trace.steps[0].unlearn_log_likelihood,
        final_log_likelihood: trace.steps.last().expect("trace has step 0").unlearn_log_likelihood,
        unlearned_margin_drop: mean_margin(theta0, comparisons, union) - mean_margin(theta_u, comparisons, union),
        retained_margin_drop: mean_margin(theta0, comparisons, &retained) - mean_margin(theta_u, comparisons, &retained),
        judge_cosine: judge.map(|j| cosine(&theta_u.theta, &j.theta)),
        retrain_cosine: retrained.map_or(0.0, |r| cosine(&theta_u.theta, &r.theta)),
    }
}

fn rate_line(label: &str, r: &WinRateReport) -> String {
    format!(
        "win rate tuned vs base on {label}: {:.4} (wins {}, losses {}, ties {})\n",
        r.win_rate_a, r.wins_a, r.wins_b, r.ties
    )
}

/// Human-readable digest of a report.
pub fn summary_text(report: &PipelineReport) -> String {
    let mut s = format!("seed: {}\nstatus: {:?}\n", report.seed, report.status);
    if let Some(t) = &report.train {
        s += &format!(
            "reward model: {} steps, mean log-likelihood {:.6}, gradient norm {:.3e}\n",
            t.steps, t.log_likelihood, t.grad_norm
        );
        if let Some(a) = t.clean_sign_agreement {
            s += &format!("clean sign agreement: {a:.4}\n");
        }
    }
    if let Some(p) = &report.partition {
        s += &format!("validation prompts: {}, unsatisfactory: {}\n", p.total, p.unsatisfactory);
    }
    if let Some(e) = &report.explain {
        let mean_size =
            e.items.iter().map(|i| i.selected_ids.len()).sum::<usize>() as f64 / e.items.len().max(1) as f64;
        s += &format!(
            "explanations: {} prompts, mean size {:.2}, union {} examples\n",
            e.items.len(),
            mean_size,
            e.union.len()
        );
        if let Some(share) = e.planted_share {
            s += &format!("planted share of union: {share:.4}\n");
        }
    }
    if let Some(u) = &report.unlearn {
        s += &format!(
            "unlearning: {} steps ({:?}), log-likelihood {:.6} -> {:.6}\n",
            u.steps, u.stop_reason, u.initial_log_likelihood, u.final_log_likelihood
        );
    }
    if let Some(f) = &report.finetune {
        s += &format!(
            "fine-tuning: {} steps, objective {:.6} -> {:.6}, satisfactory KL {:.6}\n",
            f.steps, f.initial_objective, f.final_objective, f.satisfactory_kl
        );
    }
    match &report.win_rates {
        Some(w) => {
            s += &rate_line("unsatisfactory prompts", &w.unsatisfactory);
            s += &rate_line("satisfactory prompts", &w.satisfactory);
            s += &rate_line("all validation prompts", &w.validation);
            match &w.heldout {
                Some(h) => s += &rate_line("held-out prompts", h),
                None => s += "win rate tuned vs base on held-out prompts: n/a\n",
            }
        }
        None if report.status == RunStatus::NothingToExplain => s += "nothing to explain\n",
        None => s += "win rates: n/a (no judge)\n",
    }
    s
}

/// Writes `report.json` and `summary.txt` into `dir`, creating it if needed.
pub fn emit_report(report: &PipelineReport, dir: &Path) -> Result<()> {
    io::write_json_pretty(&dir.join(artifacts::REPORT), report)?;
    io::write_string(&dir.join(artifacts::SUMMARY), &summary_text(report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: usize,
    /// Median of three runs, seconds.
    pub seconds: f64,
    pub iterations: usize,
    pub subset_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingTable {
    pub dim: usize,
    pub rows: Vec<ScalingRow>,
    /// Least-squares slope of `ln seconds` against `ln n`.
    pub slope: f64,
    pub iterations_within_bound: bool,
}

/// Times one explanation (shared setup included) on synthetic datasets of each size.
/// The query is the candidate with the lowest true reward on the first validation prompt.
pub fn bench_scaling(sizes: &[usize], dim: usize, seed: u64) -> Result<ScalingTable> {
    if sizes.is_empty() || sizes.iter().any(|&n| n < 10) || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("sizes must be ascending and each at least 10".into()));
    }
    let config = ExplainerConfig::default();
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let world_cfg = WorldConfig {
            dim,
            num_examples: n,
            num_prompts: 1,
            num_heldout: 0,
            ..WorldConfig::default()
        };
        let world = generate_synthetic_world::<f64>(&world_cfg, seed)?;
        let item = &world.validation.items()[0];
        let query = item
            .candidate_features
            .iter()
            .min_by(|a, b| {
                world
                    .true_reward
                    .score(a)
                    .partial_cmp(&world.true_reward.score(b))
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .expect("prompts have candidates")
            .clone();
        let mut times = Vec::with_capacity(3);
        let mut last = None;
        for _ in 0..3 {
            let start = Instant::now();
            let e = ExplainContext::new(&world.dataset)?.explain(0, &query, &config)?;
            times.push(start.elapsed().as_secs_f64());
            last = Some(e);
        }
        let e = last.expect("three runs");
        rows.push(ScalingRow {
            n,
            seconds: scalar::median(&times),
            iterations: e.iterations,
            subset_size: e.selected_ids.len(),
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.seconds.max(1e-9).ln()).collect();
    let slope = fit_slope(&xs, &ys);
    Ok(ScalingTable {
        dim,
        iterations_within_bound: rows.iter().all(|r| r.iterations <= r.n),
        rows,
        slope,
    })
}

fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return 0.0;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}
