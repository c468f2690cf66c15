//! Checks engine output against every reference measurement.
//!
//! Tolerances:
//! * exact: first-round counts, double-pool test counts, and every displayed
//!   value that follows from a row's test count alone (pixel merge, individual).
//! * 0.5%: feature-merge TMAC given a row's test counts.
//! * 5%: tree-merge TMAC given a row's test counts, using boundaries fitted
//!   per group size.
//! * 10%: Monte Carlo means of test counts, recall and TMAC.

use serde::Serialize;

use crate::bundled::Resolver;
use crate::cost_model::{CostProfile, DesignKind, Macs};
use crate::error::{Error, Result};
use crate::harness::{AlgorithmConfig, AlgorithmKind, DesignConfig, Experiment, ExperimentConfig, CONFIG_VERSION};
use crate::population::{assign_groups, PopulationMode};
use crate::reference::{self, Algorithm, ReferenceRow};
use crate::report::{format_percent, format_ratio, format_tmac};
use crate::strategies::double_pool_partitions;

/// Tolerance for feature-merge cost identities.
pub const FEATURE_MERGE_TOLERANCE: f64 = 0.005;
/// Tolerance for fitted tree-merge costs.
pub const TREE_MERGE_TOLERANCE: f64 = 0.05;
/// Tolerance for Monte Carlo means.
pub const STOCHASTIC_TOLERANCE: f64 = 0.10;
/// Split factor used for the multi-round rows.
pub const REFERENCE_SPLIT_FACTOR: usize = 4;
pub const COST_PROFILE: &str = "resnext101-calibrated";

/// Bundled config name of a reference row.
pub fn reference_config_name(row: &ReferenceRow) -> String {
    let alg = match row.algorithm {
        Algorithm::Individual => return "m1_individual".to_owned(),
        Algorithm::TwoRound => 1,
        Algorithm::MultiRound => 2,
        Algorithm::DoublePool => 3,
    };
    let design = match row.design {
        Some(DesignKind::PixelMerge) => 1,
        Some(DesignKind::FeatureMerge) | None => 2,
        Some(DesignKind::TreeMerge) => 3,
    };
    format!("table1_alg{alg}_d{design}_m{}", row.group_size)
}

/// Oracle profile calibrated for a design.
pub fn oracle_profile_name(design: DesignKind) -> &'static str {
    match design {
        DesignKind::PixelMerge => "pixel-merge-calibrated",
        DesignKind::FeatureMerge => "feature-merge-calibrated",
        DesignKind::TreeMerge => "tree-merge-calibrated",
    }
}

/// Config reproducing a reference row.
pub fn reference_config(row: &ReferenceRow, trials: u32, base_seed: u64) -> ExperimentConfig {
    let design_kind = row.design.unwrap_or(DesignKind::PixelMerge);
    let mut design = DesignConfig::of_kind(design_kind);
    design.preset = match design_kind {
        DesignKind::PixelMerge => None,
        DesignKind::FeatureMerge => Some("feature_merge_t20".to_owned()),
        DesignKind::TreeMerge => Some(format!("tree_merge_m{}", row.group_size)),
    };
    let (kind, k) = match row.algorithm {
        Algorithm::Individual | Algorithm::TwoRound => (AlgorithmKind::TwoRound, 2),
        Algorithm::MultiRound => (AlgorithmKind::MultiRound, REFERENCE_SPLIT_FACTOR),
        Algorithm::DoublePool => (AlgorithmKind::DoublePool, 2),
    };
    ExperimentConfig {
        version: CONFIG_VERSION,
        name: reference_config_name(row),
        n: reference::N,
        prevalence: reference::PREVALENCE,
        mode: PopulationMode::FixedCount,
        group_size: row.group_size,
        trials,
        base_seed,
        oracle_profile: oracle_profile_name(row.design.unwrap_or(DesignKind::FeatureMerge)).to_owned(),
        cost_profile: COST_PROFILE.to_owned(),
        design,
        algorithm: AlgorithmConfig { kind, k, caching: true },
        difficulty: None,
    }
}

/// One computed-vs-reference comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub row: String,
    pub quantity: String,
    pub expected: String,
    pub computed: String,
    pub tolerance: String,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }

    pub fn summary_line(&self) -> String {
        let failed = self.failures().count();
        format!(
            "validate-table: {} checks, {} passed, {} failed",
            self.checks.len(),
            self.checks.len() - failed,
            failed
        )
    }
}

struct Checks {
    out: Vec<Check>,
}

impl Checks {
    fn exact(&mut self, row: &ReferenceRow, quantity: &str, expected: String, computed: String) {
        let pass = expected == computed;
        self.out.push(Check {
            row: row.label(),
            quantity: quantity.to_owned(),
            expected,
            computed,
            tolerance: "exact".to_owned(),
            pass,
        });
    }

    fn relative(&mut self, row: &ReferenceRow, quantity: &str, expected: f64, computed: f64, tol: f64) {
        let err = (computed - expected).abs() / expected.abs();
        self.out.push(Check {
            row: row.label(),
            quantity: quantity.to_owned(),
            expected: format!("{expected}"),
            computed: format!("{computed:.4}"),
            tolerance: format!("{}%", tol * 100.0),
            pass: err <= tol,
        });
    }
}

fn percent_of_individual(macs: Macs, c: Macs) -> String {
    format_percent(u128::from(macs), reference::N as u128 * u128::from(c))
}

fn expected_percent(row: &ReferenceRow) -> String {
    crate::report::format_f64(row.relative_computation * 100.0, 2)
}

/// Cost-identity checks that need no simulation.
pub fn deterministic_checks(resolver: &Resolver) -> Result<Vec<Check>> {
    let cost = resolver.cost_profile(COST_PROFILE)?;
    let c = cost.total();
    if c != reference::INDIVIDUAL_MACS {
        return Err(Error::field("calibration.total_macs", format!("{c} is not the reference individual cost")));
    }
    let mut checks = Checks { out: Vec::new() };
    for row in &reference::ROWS {
        // First-round counts come from the actual partitions.
        let first = match row.algorithm {
            Algorithm::DoublePool => {
                let (a, b) = double_pool_partitions(reference::N, row.group_size, 0)?;
                a.len() + b.len()
            }
            _ => assign_groups(reference::N, row.group_size, 0)?.len(),
        };
        checks.exact(row, "tests_first_round", row.tests_first_round.to_string(), first.to_string());
        checks.exact(
            row,
            "results_per_test",
            format!("{:.2}", row.results_per_test),
            format_ratio(reference::N as u128, u128::from(row.tests_total), 2),
        );
        let config = reference_config(row, 1, 0);
        let design = config.resolve_design(&cost)?;
        let m = row.group_size;
        let retests = row.tests_total - row.tests_first_round;
        match (row.algorithm, row.design) {
            (Algorithm::Individual, _) | (Algorithm::TwoRound, Some(DesignKind::PixelMerge)) => {
                let macs = tests_macs(row.tests_total, c)?;
                checks.exact(row, "total_tmac", format!("{:.1}", row.total_tmac), format_tmac(macs));
                checks.exact(row, "relative_computation_pct", expected_percent(row), percent_of_individual(macs, c));
            }
            (Algorithm::TwoRound, Some(kind)) => {
                let group = design.price(&cost, m, 0)?;
                let macs = tests_macs(row.tests_first_round, group)?
                    .checked_add(tests_macs(retests, c)?)
                    .ok_or(Error::Overflow)?;
                let tol = if kind == DesignKind::TreeMerge { TREE_MERGE_TOLERANCE } else { FEATURE_MERGE_TOLERANCE };
                checks.relative(row, "total_tmac", row.total_tmac, macs as f64 / 1e12, tol);
            }
            (Algorithm::DoublePool, Some(_)) => {
                // Second partition reuses every member's cached leaf features.
                let half = row.tests_total / 2;
                let macs = tests_macs(half, design.price(&cost, m, 0)?)?
                    .checked_add(tests_macs(half, design.price(&cost, m, m)?)?)
                    .ok_or(Error::Overflow)?;
                checks.relative(row, "total_tmac", row.total_tmac, macs as f64 / 1e12, TREE_MERGE_TOLERANCE);
            }
            _ => {}
        }
    }
    Ok(checks.out)
}

fn tests_macs(tests: u64, each: Macs) -> Result<Macs> {
    tests.checked_mul(each).ok_or(Error::Overflow)
}

/// Monte Carlo checks of every adaptive row.
pub fn stochastic_checks(resolver: &Resolver, trials: u32, base_seed: u64, jobs: Option<usize>) -> Result<Vec<Check>> {
    let mut checks = Checks { out: Vec::new() };
    for row in reference::ROWS.iter().filter(|r| matches!(r.algorithm, Algorithm::TwoRound | Algorithm::MultiRound)) {
        let report = Experiment::new(reference_config(row, trials, base_seed), resolver)?.run(jobs)?;
        checks.relative(row, "mean tests_total", row.tests_total as f64, report.mean.tests_total, STOCHASTIC_TOLERANCE);
        checks.relative(row, "mean recall", row.recall, report.mean.recall, STOCHASTIC_TOLERANCE);
        checks.relative(row, "mean total_tmac", row.total_tmac, report.mean.total_macs / 1e12, STOCHASTIC_TOLERANCE);
    }
    Ok(checks.out)
}

/// Full table check: deterministic identities plus Monte Carlo rows.
pub fn validate_table(resolver: &Resolver, trials: u32, base_seed: u64, jobs: Option<usize>) -> Result<ValidationReport> {
    let mut checks = deterministic_checks(resolver)?;
    checks.extend(stochastic_checks(resolver, trials, base_seed, jobs)?);
    Ok(ValidationReport { checks })
}

/// The bundled cost profile, for callers that need `C`.
pub fn reference_cost_profile(resolver: &Resolver) -> Result<CostProfile> {
    resolver.cost_profile(COST_PROFILE)
}
