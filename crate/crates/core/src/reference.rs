//! Published measurements the engine is calibrated against and checked
//! against: a 48,800-sample image moderation test set at 0.1% prevalence
//! screened with a 16.5 GMAC classifier.

use serde::Serialize;

use crate::cost_model::DesignKind;

/// Test set size.
pub const N: usize = 48_800;
/// Prevalence of positives.
pub const PREVALENCE: f64 = 0.001;
/// Individual forward-pass cost in MACs.
pub const INDIVIDUAL_MACS: u64 = 16_500_000_000;
/// False positive rate of individual testing.
pub const INDIVIDUAL_FPR: f64 = 0.0018;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Individual,
    TwoRound,
    MultiRound,
    DoublePool,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Individual => "individual",
            Algorithm::TwoRound => "two_round",
            Algorithm::MultiRound => "multi_round",
            Algorithm::DoublePool => "double_pool",
        }
    }
}

/// One published configuration and its measured columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceRow {
    pub algorithm: Algorithm,
    pub design: Option<DesignKind>,
    pub group_size: usize,
    pub recall: f64,
    pub false_positive_rate: f64,
    pub tests_first_round: u64,
    pub tests_total: u64,
    pub results_per_test: f64,
    pub total_tmac: f64,
    pub relative_computation: f64,
}

impl ReferenceRow {
    pub fn label(&self) -> String {
        match self.design {
            None => format!("{}/m{}", self.algorithm.as_str(), self.group_size),
            Some(d) => format!("{}/{}/m{}", self.algorithm.as_str(), d.as_str(), self.group_size),
        }
    }
}

#[allow(clippy::too_many_arguments)]
const fn row(
    algorithm: Algorithm,
    design: Option<DesignKind>,
    group_size: usize,
    recall: f64,
    false_positive_rate: f64,
    tests_first_round: u64,
    tests_total: u64,
    results_per_test: f64,
    total_tmac: f64,
    relative_computation: f64,
) -> ReferenceRow {
    ReferenceRow {
        algorithm,
        design,
        group_size,
        recall,
        false_positive_rate,
        tests_first_round,
        tests_total,
        results_per_test,
        total_tmac,
        relative_computation,
    }
}

use Algorithm::*;
use DesignKind::*;

pub const ROWS: [ReferenceRow; 15] = [
    row(Individual, None, 1, 1.00, 0.0018, 48_800, 48_800, 1.00, 805.2, 1.0000),
    row(TwoRound, Some(PixelMerge), 2, 0.92, 0.0008, 24_400, 27_394, 1.78, 452.0, 0.5614),
    row(TwoRound, Some(PixelMerge), 4, 0.64, 0.0007, 12_200, 18_864, 2.59, 311.3, 0.3866),
    row(TwoRound, Some(FeatureMerge), 2, 1.00, 0.0002, 24_400, 24_634, 1.98, 495.8, 0.6157),
    row(TwoRound, Some(FeatureMerge), 4, 1.00, 0.0003, 12_200, 12_980, 3.76, 347.9, 0.4320),
    row(TwoRound, Some(FeatureMerge), 8, 1.00, 0.0004, 6_100, 8_356, 5.84, 293.8, 0.3649),
    row(TwoRound, Some(FeatureMerge), 16, 1.00, 0.0007, 3_050, 9_338, 5.23, 321.1, 0.3988),
    row(TwoRound, Some(TreeMerge), 4, 1.00, 0.0003, 12_200, 12_908, 3.78, 292.9, 0.3638),
    row(TwoRound, Some(TreeMerge), 8, 1.00, 0.0005, 6_100, 9_308, 5.24, 255.8, 0.3176),
    row(TwoRound, Some(TreeMerge), 16, 1.00, 0.0008, 3_050, 15_626, 3.12, 371.1, 0.4609),
    row(MultiRound, Some(FeatureMerge), 8, 1.00, 0.0001, 6_100, 7_392, 6.60, 273.8, 0.3400),
    row(MultiRound, Some(FeatureMerge), 16, 1.00, 0.0002, 3_050, 5_130, 9.51, 246.0, 0.3055),
    row(MultiRound, Some(TreeMerge), 8, 1.00, 0.0001, 6_100, 7_844, 6.22, 225.8, 0.2804),
    row(MultiRound, Some(TreeMerge), 16, 1.00, 0.0002, 3_050, 6_726, 7.26, 212.8, 0.2643),
    row(DoublePool, Some(TreeMerge), 4, 1.00, 0.0011, 24_400, 24_400, 2.00, 491.8, 0.6108),
];

/// Looks up the row for a configuration.
pub fn find(algorithm: Algorithm, design: Option<DesignKind>, group_size: usize) -> Option<&'static ReferenceRow> {
    ROWS.iter().find(|r| r.algorithm == algorithm && r.design == design && r.group_size == group_size)
}

/// Two-round rows of one design, in ascending group size.
pub fn two_round_rows(design: DesignKind) -> impl Iterator<Item = &'static ReferenceRow> {
    ROWS.iter().filter(move |r| r.algorithm == TwoRound && r.design == Some(design))
}
