//! Experiments: configuration, trial execution, metrics, sweeps, and the
//! reference table check.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundled::Resolver;
use crate::calibration::flag_probability;
use crate::cost_model::{
    boundary_fractions, even_boundaries, tree_levels, CostProfile, DesignKind, DesignSpec, Macs,
};
use crate::error::{Error, Result};
use crate::oracle::{DifficultyModel, OracleProfile};
use crate::population::{assign_groups, Population, PopulationMode};
use crate::rng;
use crate::strategies::{run_multi_round, run_one_round_double_pool, run_two_round, RunResult, TestBench};

/// Current config file version.
pub const CONFIG_VERSION: u32 = 1;

/// Split factor used when a config does not name one.
pub const DEFAULT_SPLIT_FACTOR: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmKind {
    TwoRound,
    MultiRound,
    DoublePool,
}

impl AlgorithmKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AlgorithmKind::TwoRound => "two_round",
            AlgorithmKind::MultiRound => "multi_round",
            AlgorithmKind::DoublePool => "double_pool",
        }
    }
}

fn default_k() -> usize {
    DEFAULT_SPLIT_FACTOR
}

fn default_fanout() -> usize {
    2
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    pub kind: AlgorithmKind,
    /// Split factor of multi-round testing.
    #[serde(default = "default_k")]
    pub k: usize,
    /// Reuse cached leaf features across tests of the same sample.
    #[serde(default = "default_true")]
    pub caching: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub kind: DesignKind,
    /// Feature merge split layer `T`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_index: Option<usize>,
    /// Name of a boundary preset in the cost profile.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// Explicit tree boundaries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundaries: Option<Vec<usize>>,
    #[serde(default = "default_fanout")]
    pub fanout: usize,
}

impl DesignConfig {
    pub fn of_kind(kind: DesignKind) -> Self {
        DesignConfig { kind, split_index: None, preset: None, boundaries: None, fanout: default_fanout() }
    }
}

/// One experiment: population, design, algorithm, calibration and trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub name: String,
    pub n: usize,
    pub prevalence: f64,
    #[serde(default)]
    pub mode: PopulationMode,
    pub group_size: usize,
    pub trials: u32,
    pub base_seed: u64,
    pub oracle_profile: String,
    pub cost_profile: String,
    pub design: DesignConfig,
    pub algorithm: AlgorithmConfig,
    /// Replaces the oracle profile's correlated-error model when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<DifficultyModel>,
}

/// Keys `key=value` overrides may set.
pub const OVERRIDE_KEYS: &[&str] = &[
    "name",
    "n",
    "prevalence",
    "mode",
    "group_size",
    "trials",
    "base_seed",
    "oracle_profile",
    "cost_profile",
    "design.kind",
    "design.split_index",
    "design.preset",
    "design.boundaries",
    "design.fanout",
    "algorithm.kind",
    "algorithm.k",
    "algorithm.caching",
    "difficulty.hard_fraction",
    "difficulty.fp_multiplier",
    "difficulty.seed",
];

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::field(field, msg));
        if self.version != CONFIG_VERSION {
            return bad("version", format!("unsupported version {} (expected {CONFIG_VERSION})", self.version));
        }
        if self.n == 0 {
            return bad("n", "must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.prevalence) {
            return bad("prevalence", format!("{} outside [0, 1]", self.prevalence));
        }
        if self.group_size == 0 || self.group_size > self.n {
            return bad("group_size", format!("{} must be in 1..={}", self.group_size, self.n));
        }
        if self.trials == 0 {
            return bad("trials", "must be at least 1".into());
        }
        if self.algorithm.kind == AlgorithmKind::MultiRound
            && (self.algorithm.k < 2 || self.algorithm.k > self.group_size)
        {
            return bad("algorithm.k", format!("{} must be in 2..={}", self.algorithm.k, self.group_size));
        }
        let d = &self.design;
        let sources = usize::from(d.split_index.is_some()) + usize::from(d.preset.is_some()) + usize::from(d.boundaries.is_some());
        if sources > 1 {
            return bad("design", "set at most one of split_index, preset, boundaries".into());
        }
        Ok(())
    }

    /// Applies a `key=value` override. The value is parsed as a TOML value,
    /// falling back to a bare string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let key = key.trim();
        if !OVERRIDE_KEYS.contains(&key) {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.trim().to_owned()));
        let mut table = toml::Table::try_from(&*self).expect("config serializes");
        let mut slot = &mut table;
        let mut parts = key.split('.').peekable();
        while let Some(part) = parts.next() {
            if parts.peek().is_none() {
                slot.insert(part.to_owned(), value.clone());
                break;
            }
            slot = slot
                .entry(part)
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("`{part}` is not a table")))?;
        }
        let mut updated: ExperimentConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("override `{key}`: {}", e.message())))?;
        if key == "design.split_index" || key == "design.boundaries" {
            updated.design.preset = None;
        }
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    /// Resolves the design against a cost profile.
    ///
    /// Without explicit boundaries, feature merge splits at layer
    /// `round(0.2 L)` and tree merge spreads its levels evenly over the
    /// profile's calibrated leaf fraction (or the fraction at `round(0.2 L)`).
    pub fn resolve_design(&self, cost: &CostProfile) -> Result<DesignSpec> {
        let m = self.group_size;
        let d = &self.design;
        let preset = d.preset.as_deref().map(|p| cost.preset(p)).transpose()?;
        let default_split = (0.2 * cost.layers() as f64).round() as usize;
        let design = match d.kind {
            DesignKind::PixelMerge => DesignSpec::pixel_merge(m)?,
            DesignKind::FeatureMerge => {
                let t = match (d.split_index, preset, d.boundaries.as_deref()) {
                    (Some(t), _, _) => t,
                    (_, Some(&[t]), _) | (_, _, Some(&[t])) => t,
                    (_, Some(p), _) => {
                        return Err(Error::field("design.preset", format!("feature merge needs one boundary, preset has {}", p.len())))
                    }
                    (_, _, Some(b)) => {
                        return Err(Error::field("design.boundaries", format!("feature merge needs one boundary, got {}", b.len())))
                    }
                    _ => default_split,
                };
                DesignSpec::feature_merge(m, t)?
            }
            DesignKind::TreeMerge => {
                let boundaries = match (preset, &d.boundaries) {
                    (Some(p), _) => p.to_vec(),
                    (_, Some(b)) => b.clone(),
                    _ => {
                        let leaf = match cost.calibration() {
                            Some(cal) => cal.leaf_fraction,
                            None => boundary_fractions(cost, &[default_split])?[0],
                        };
                        even_boundaries(cost, tree_levels(m, d.fanout)?, leaf)?
                    }
                };
                DesignSpec::tree_uniform(m, boundaries, d.fanout)?
            }
        };
        design.validate(cost)?;
        Ok(design)
    }
}

/// Per-run metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub recall: f64,
    pub false_positive_rate: f64,
    pub tests_first_round: u64,
    pub tests_total: u64,
    /// `n / tests_total`.
    pub results_per_test: f64,
    pub total_macs: Macs,
    /// `total_macs / (n * C)`.
    pub relative_computation: f64,
}

impl RunMetrics {
    pub fn compute(population: &Population, run: &RunResult, individual_macs: Macs) -> Result<Self> {
        let positives = population.positive_count();
        let negatives = population.len() - positives;
        let true_flags = run.flagged.iter().filter(|&&id| population.label(id)).count();
        let false_flags = run.flagged.len() - true_flags;
        let n = population.len() as f64;
        let total_macs = run.total_macs()?;
        let tests_total = run.tests_total() as u64;
        Ok(RunMetrics {
            recall: if positives == 0 { 1.0 } else { true_flags as f64 / positives as f64 },
            false_positive_rate: if negatives == 0 { 0.0 } else { false_flags as f64 / negatives as f64 },
            tests_first_round: run.tests_first_round() as u64,
            tests_total,
            results_per_test: n / tests_total as f64,
            total_macs,
            relative_computation: total_macs as f64 / (n * individual_macs as f64),
        })
    }
}

/// Mean or standard error of every metric over trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub recall: f64,
    pub false_positive_rate: f64,
    pub tests_first_round: f64,
    pub tests_total: f64,
    pub results_per_test: f64,
    pub total_macs: f64,
    pub relative_computation: f64,
}

impl MetricsSummary {
    fn map(trials: &[RunMetrics], stat: impl Fn(&[f64]) -> f64) -> Self {
        let col = |f: fn(&RunMetrics) -> f64| stat(&trials.iter().map(f).collect::<Vec<_>>());
        MetricsSummary {
            recall: col(|m| m.recall),
            false_positive_rate: col(|m| m.false_positive_rate),
            tests_first_round: col(|m| m.tests_first_round as f64),
            tests_total: col(|m| m.tests_total as f64),
            results_per_test: col(|m| m.results_per_test),
            total_macs: col(|m| m.total_macs as f64),
            relative_computation: col(|m| m.relative_computation),
        }
    }

    pub fn mean(trials: &[RunMetrics]) -> Self {
        Self::map(trials, mean)
    }

    pub fn stderr(trials: &[RunMetrics]) -> Self {
        Self::map(trials, stderr)
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard error of the mean (sample standard deviation / sqrt(n)); 0 for
/// fewer than two values.
pub fn stderr(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    (var / xs.len() as f64).sqrt()
}

/// Result of [`run_experiment`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub algorithm: AlgorithmKind,
    pub design: DesignKind,
    pub boundaries: Vec<usize>,
    pub group_size: usize,
    pub n: usize,
    pub prevalence: f64,
    pub trials: u32,
    pub base_seed: u64,
    pub generator: String,
    pub individual_macs: Macs,
    pub mean: MetricsSummary,
    pub stderr: MetricsSummary,
    pub per_trial: Vec<RunMetrics>,
}

/// One CSV row of an experiment report.
#[derive(Debug, Serialize)]
pub struct ReportRow {
    pub row: String,
    pub recall: f64,
    pub false_positive_rate: f64,
    pub tests_first_round: f64,
    pub tests_total: f64,
    pub results_per_test: f64,
    pub total_macs: f64,
    pub relative_computation: f64,
}

impl ReportRow {
    fn from_summary(row: &str, s: &MetricsSummary) -> Self {
        ReportRow {
            row: row.to_owned(),
            recall: s.recall,
            false_positive_rate: s.false_positive_rate,
            tests_first_round: s.tests_first_round,
            tests_total: s.tests_total,
            results_per_test: s.results_per_test,
            total_macs: s.total_macs,
            relative_computation: s.relative_computation,
        }
    }
}

impl ExperimentReport {
    /// Per-trial rows followed by `mean` and `stderr`.
    pub fn rows(&self) -> Vec<ReportRow> {
        let mut rows: Vec<ReportRow> = self
            .per_trial
            .iter()
            .enumerate()
            .map(|(i, m)| ReportRow::from_summary(&i.to_string(), &MetricsSummary::mean(std::slice::from_ref(m))))
            .collect();
        rows.push(ReportRow::from_summary("mean", &self.mean));
        rows.push(ReportRow::from_summary("stderr", &self.stderr));
        rows
    }

    /// One-line human summary.
    pub fn summary_line(&self) -> String {
        format!(
            "{}: {} trials, tests first round {:.1}, tests total {:.1}, recall {:.2}%, FPR {:.4}%, {} TMAC, relative {}%",
            self.name,
            self.trials,
            self.mean.tests_first_round,
            self.mean.tests_total,
            self.mean.recall * 100.0,
            self.mean.false_positive_rate * 100.0,
            crate::report::format_f64(self.mean.total_macs / 1e12, 1),
            crate::report::format_f64(self.mean.relative_computation * 100.0, 2),
        )
    }
}

/// A config with its references resolved.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub oracle: OracleProfile,
    pub cost: CostProfile,
    pub design: DesignSpec,
}

impl Experiment {
    pub fn new(config: ExperimentConfig, resolver: &Resolver) -> Result<Self> {
        let ctx = |e: Error| e.context(format!("config `{}`", config.name));
        config.validate().map_err(ctx)?;
        let mut oracle = resolver.oracle_profile(&config.oracle_profile).map_err(ctx)?;
        if config.difficulty.is_some() {
            oracle = oracle.with_difficulty(config.difficulty);
        }
        let cost = resolver.cost_profile(&config.cost_profile).map_err(ctx)?;
        let design = config.resolve_design(&cost).map_err(ctx)?;
        Ok(Experiment { config, oracle, cost, design })
    }

    /// Runs trial `trial`, returning its metrics and full log.
    pub fn run_trial(&self, trial: u32) -> Result<(RunMetrics, RunResult)> {
        let c = &self.config;
        let seed = rng::trial_seed(c.base_seed, trial);
        let population = Population::generate(c.n, c.prevalence, seed, c.mode)?;
        let bench = TestBench {
            population: &population,
            oracle: &self.oracle,
            cost: &self.cost,
            design: &self.design,
            seed,
            caching: c.algorithm.caching,
        };
        let run = match c.algorithm.kind {
            AlgorithmKind::TwoRound => run_two_round(bench, &assign_groups(c.n, c.group_size, seed)?)?,
            AlgorithmKind::MultiRound => {
                run_multi_round(bench, &assign_groups(c.n, c.group_size, seed)?, c.algorithm.k)?
            }
            AlgorithmKind::DoublePool => run_one_round_double_pool(bench, c.n, c.group_size, seed)?,
        };
        let metrics = RunMetrics::compute(&population, &run, self.cost.total())?;
        Ok((metrics, run))
    }

    /// Runs every trial, in parallel on at most `jobs` threads.
    pub fn run(&self, jobs: Option<usize>) -> Result<ExperimentReport> {
        let trials: Vec<u32> = (0..self.config.trials).collect();
        let per_trial = with_jobs(jobs, || {
            trials.par_iter().map(|&t| self.run_trial(t).map(|(m, _)| m)).collect::<Result<Vec<_>>>()
        })?
        .map_err(|e| e.context(format!("config `{}`", self.config.name)))?;
        let c = &self.config;
        Ok(ExperimentReport {
            name: c.name.clone(),
            algorithm: c.algorithm.kind,
            design: c.design.kind,
            boundaries: self.design.boundaries().to_vec(),
            group_size: c.group_size,
            n: c.n,
            prevalence: c.prevalence,
            trials: c.trials,
            base_seed: c.base_seed,
            generator: rng::GENERATOR.to_owned(),
            individual_macs: self.cost.total(),
            mean: MetricsSummary::mean(&per_trial),
            stderr: MetricsSummary::stderr(&per_trial),
            per_trial,
        })
    }
}

/// Runs `f` on a pool of `jobs` threads, or on the global pool.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(0) => Err(Error::Config("--jobs must be at least 1".into())),
        Some(j) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(j)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Resolves and runs a config.
pub fn run_experiment(config: &ExperimentConfig, resolver: &Resolver, jobs: Option<usize>) -> Result<ExperimentReport> {
    Experiment::new(config.clone(), resolver)?.run(jobs)
}

/// Expected number of two-round tests under Bernoulli(p) labels with
/// independent errors: every group is tested once, and each member of a
/// flagged group of two or more is retested.
pub fn expected_tests_two_round(n: usize, m: usize, prevalence: f64, profile: &OracleProfile) -> f64 {
    let expected_for = |size: usize| {
        if size <= 1 {
            1.0
        } else {
            1.0 + size as f64 * flag_probability(size, prevalence, profile.rates(size))
        }
    };
    let full = (n / m) as f64 * expected_for(m);
    let rest = n % m;
    if rest == 0 {
        full
    } else {
        full + expected_for(rest)
    }
}

/// One prevalence point of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub prevalence: f64,
    pub trials: u32,
    pub recall: f64,
    pub false_positive_rate: f64,
    pub tests_first_round: f64,
    pub tests_total: f64,
    pub tests_total_stderr: f64,
    pub results_per_test: f64,
    pub total_macs: f64,
    pub relative_computation: f64,
    pub relative_computation_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub name: String,
    pub rows: Vec<SweepRow>,
}

/// Runs `config` once per prevalence.
pub fn sweep_prevalence(
    config: &ExperimentConfig,
    prevalences: &[f64],
    resolver: &Resolver,
    jobs: Option<usize>,
) -> Result<SweepReport> {
    let base = Experiment::new(config.clone(), resolver)?;
    let mut rows = Vec::with_capacity(prevalences.len());
    for &p in prevalences {
        let mut exp = base.clone();
        exp.config.prevalence = p;
        exp.config.validate()?;
        let r = exp.run(jobs)?;
        rows.push(SweepRow {
            prevalence: p,
            trials: r.trials,
            recall: r.mean.recall,
            false_positive_rate: r.mean.false_positive_rate,
            tests_first_round: r.mean.tests_first_round,
            tests_total: r.mean.tests_total,
            tests_total_stderr: r.stderr.tests_total,
            results_per_test: r.mean.results_per_test,
            total_macs: r.mean.total_macs,
            relative_computation: r.mean.relative_computation,
            relative_computation_stderr: r.stderr.relative_computation,
        });
    }
    Ok(SweepReport { name: config.name.clone(), rows })
}
