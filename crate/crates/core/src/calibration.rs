//! Fits that turn the reference measurements into engine parameters.
//!
//! * Oracle: a two-round run's total test count pins how many first-round
//!   groups were flagged; subtracting the expected number of truly positive
//!   groups leaves the group false positive rate.
//! * Cost: the feature-merge rows are linear in the leaf fraction `a`, so
//!   `a` is a one-parameter least-squares fit.
//! * Tree merge: per group size, the level boundaries are fitted so the group
//!   test cost matches the row.

use crate::cost_model::{even_boundaries, tree_levels, CostProfile, DesignKind, DesignSpec, Macs};
use crate::error::{Error, Result};
use crate::oracle::{ErrorRates, OracleProfile};
use crate::reference::{self, ReferenceRow};

/// Probability that a Bernoulli(p) group of `m` contains a positive.
pub fn positive_group_probability(m: usize, prevalence: f64) -> f64 {
    1.0 - (1.0 - prevalence).powi(m as i32)
}

/// Probability that a two-round first-round group of `m` is flagged.
pub fn flag_probability(m: usize, prevalence: f64, rates: ErrorRates) -> f64 {
    let hot = positive_group_probability(m, prevalence);
    rates.sensitivity * hot + (1.0 - rates.specificity) * (1.0 - hot)
}

/// Group error rates implied by a two-round row. Group sensitivity is the
/// row's recall (individual retests are taken as perfectly sensitive); the
/// false positive rate is the excess of flagged groups over the expected
/// number of positive groups, per negative group.
pub fn fit_group_rates(row: &ReferenceRow, n: usize, prevalence: f64) -> Result<ErrorRates> {
    let m = row.group_size;
    if m < 2 {
        return Err(Error::invalid("group rates need a group size of at least 2"));
    }
    let groups = n.div_ceil(m) as f64;
    let flagged = (row.tests_total - row.tests_first_round) as f64 / m as f64;
    let hot = groups * positive_group_probability(m, prevalence);
    let sensitivity = row.recall;
    let fpr = (flagged - sensitivity * hot) / (groups - hot);
    if !(0.0..=1.0).contains(&fpr) {
        return Err(Error::invalid(format!("{}: fitted false positive rate {fpr} outside [0, 1]", row.label())));
    }
    Ok(ErrorRates { sensitivity, specificity: 1.0 - fpr })
}

/// Individual-network rates: full recall, reference false positive rate.
pub fn individual_rates() -> ErrorRates {
    ErrorRates { sensitivity: 1.0, specificity: 1.0 - reference::INDIVIDUAL_FPR }
}

/// Fits an oracle profile for one design from its two-round rows. Tree merge
/// has no size-2 row; it borrows the feature-merge size-2 fit, since a
/// two-member tree performs a single aggregation like feature merge.
pub fn fit_oracle_profile(design: DesignKind) -> Result<OracleProfile> {
    let mut rows = vec![(1, individual_rates())];
    for row in reference::two_round_rows(design) {
        rows.push((row.group_size, fit_group_rates(row, reference::N, reference::PREVALENCE)?));
    }
    if design == DesignKind::TreeMerge {
        let pair = reference::find(reference::Algorithm::TwoRound, Some(DesignKind::FeatureMerge), 2)
            .expect("reference row present");
        rows.push((2, fit_group_rates(pair, reference::N, reference::PREVALENCE)?));
    }
    OracleProfile::new(design.as_str(), rows)
}

/// Least-squares leaf fraction `a` for feature-merge rows, where each group
/// test costs `(1 + (m - 1) a) C` and each individual test `C`.
pub fn fit_leaf_fraction(rows: &[ReferenceRow], individual_macs: Macs) -> f64 {
    let c = individual_macs as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for r in rows {
        let x = r.tests_first_round as f64 * (r.group_size - 1) as f64;
        let y = r.total_tmac * 1e12 / c - r.tests_total as f64;
        num += x * y;
        den += x * x;
    }
    num / den
}

/// Total TMAC a two-round row costs when every group test costs `group_macs`.
pub fn two_round_tmac(row: &ReferenceRow, group_macs: Macs, individual_macs: Macs) -> f64 {
    let retests = row.tests_total - row.tests_first_round;
    (row.tests_first_round as f64 * group_macs as f64 + retests as f64 * individual_macs as f64) / 1e12
}

/// Group-test cost implied by a two-round row, in MACs.
pub fn implied_group_cost(row: &ReferenceRow, individual_macs: Macs) -> f64 {
    let retests = (row.tests_total - row.tests_first_round) as f64;
    (row.total_tmac * 1e12 - retests * individual_macs as f64) / row.tests_first_round as f64
}

/// Tree boundaries fitted to a target full-group cost.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeFit {
    pub boundaries: Vec<usize>,
    /// MAC fraction the boundaries were spread over.
    pub leaf_fraction: f64,
    pub group_cost: Macs,
}

/// Searches evenly spaced boundary sets (fractions `b/D .. b` of `C`, snapped
/// to layers) for the one whose full-group cost is closest to `target`.
/// `b` is scanned on a 1e-4 grid; ties keep the smallest `b`.
pub fn fit_tree_boundaries(profile: &CostProfile, group_size: usize, fanout: usize, target: f64) -> Result<TreeFit> {
    let levels = tree_levels(group_size, fanout)?;
    let mut best: Option<(f64, TreeFit)> = None;
    for step in 0..=10_000u32 {
        let b = f64::from(step) / 10_000.0;
        let Ok(boundaries) = even_boundaries(profile, levels, b) else { continue };
        let design = DesignSpec::tree_uniform(group_size, boundaries.clone(), fanout)?;
        let cost = design.price(profile, group_size, 0)?;
        let err = (cost as f64 - target).abs();
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, TreeFit { boundaries, leaf_fraction: b, group_cost: cost }));
        }
    }
    best.map(|(_, fit)| fit).ok_or_else(|| Error::invalid("no feasible tree boundaries"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::Algorithm;

    #[test]
    fn size8_feature_merge_false_positive_rate() {
        let row = reference::find(Algorithm::TwoRound, Some(DesignKind::FeatureMerge), 8).unwrap();
        let rates = fit_group_rates(row, reference::N, reference::PREVALENCE).unwrap();
        // (2256/8 - 6100(1 - 0.999^8)) / (6100 - 6100(1 - 0.999^8))
        let hot = 6100.0 * (1.0 - 0.999f64.powi(8));
        let expected = (2256.0 / 8.0 - hot) / (6100.0 - hot);
        assert!((1.0 - rates.specificity - expected).abs() < 1e-12);
        assert!((expected - 0.0386).abs() < 5e-5);
        assert_eq!(rates.sensitivity, 1.0);
    }

    #[test]
    fn leaf_fraction_fit() {
        let rows: Vec<_> = reference::two_round_rows(DesignKind::FeatureMerge).copied().collect();
        let a = fit_leaf_fraction(&rows, reference::INDIVIDUAL_MACS);
        assert!((a - 0.2214).abs() < 5e-5, "{a}");
    }

    #[test]
    fn implied_tree_costs() {
        let c = reference::INDIVIDUAL_MACS as f64;
        let got: Vec<f64> = reference::two_round_rows(DesignKind::TreeMerge)
            .map(|r| implied_group_cost(r, reference::INDIVIDUAL_MACS) / c)
            .collect();
        for (g, want) in got.iter().zip([1.40, 2.02, 3.25]) {
            assert!((g - want).abs() < 0.01, "{got:?}");
        }
    }

    #[test]
    fn fitted_profiles_have_expected_buckets() {
        let d2 = fit_oracle_profile(DesignKind::FeatureMerge).unwrap();
        assert_eq!(d2.sizes().collect::<Vec<_>>(), vec![1, 2, 4, 8, 16]);
        let d3 = fit_oracle_profile(DesignKind::TreeMerge).unwrap();
        assert_eq!(d3.sizes().collect::<Vec<_>>(), vec![1, 2, 4, 8, 16]);
        let d1 = fit_oracle_profile(DesignKind::PixelMerge).unwrap();
        assert_eq!(d1.rates(2).sensitivity, 0.92);
        assert!((d1.rates(1).specificity - 0.9982).abs() < 1e-12);
    }
}
