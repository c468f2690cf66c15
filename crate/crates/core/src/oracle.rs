//! Simulated test outcomes.
//!
//! A test's ground truth is the OR of its members' labels. The observed
//! outcome flips that truth through a per-group-size error model: a positive
//! group reads positive with probability `sensitivity(size)`, a negative group
//! reads positive with probability `1 - specificity(size)`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::population::Population;
use crate::rng::{self, Purpose};

/// Current profile file version.
pub const PROFILE_VERSION: u32 = 1;

/// Error rates for one group-size bucket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRates {
    pub sensitivity: f64,
    pub specificity: f64,
}

impl ErrorRates {
    pub const PERFECT: ErrorRates = ErrorRates { sensitivity: 1.0, specificity: 1.0 };
}

/// Optional correlated-error model: a fixed subset of "hard" samples inflates
/// the false-positive probability of every test that contains one of them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifficultyModel {
    /// Fraction of samples that are hard.
    pub hard_fraction: f64,
    /// Multiplier on `1 - specificity` for tests containing a hard sample.
    pub fp_multiplier: f64,
    /// Seed of the hard-sample draw.
    pub seed: u64,
}

impl DifficultyModel {
    pub fn is_hard(&self, id: usize) -> bool {
        let mut rng = rng::stream_at(self.seed, Purpose::Difficulty, 0, id as u64);
        rng.gen::<f64>() < self.hard_fraction
    }
}

/// One row of a profile file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub size: usize,
    pub sensitivity: f64,
    pub specificity: f64,
    /// Number of groups the rates were measured on, when measured.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluated_groups: Option<u64>,
}

/// On-disk form of an [`OracleProfile`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileFile {
    pub version: u32,
    pub design: String,
    pub rows: Vec<ProfileRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<DifficultyModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Group-size keyed sensitivity/specificity table.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleProfile {
    design: String,
    rows: BTreeMap<usize, ProfileRow>,
    difficulty: Option<DifficultyModel>,
    notes: Option<String>,
    warnings: Vec<String>,
}

impl OracleProfile {
    /// Builds a profile from `(size, rates)` pairs. A size-1 row is required.
    pub fn new(
        design: impl Into<String>,
        rows: impl IntoIterator<Item = (usize, ErrorRates)>,
    ) -> Result<Self> {
        let rows = rows
            .into_iter()
            .map(|(size, r)| ProfileRow {
                size,
                sensitivity: r.sensitivity,
                specificity: r.specificity,
                evaluated_groups: None,
            })
            .collect();
        Self::from_file(ProfileFile {
            version: PROFILE_VERSION,
            design: design.into(),
            rows,
            difficulty: None,
            notes: None,
            warnings: Vec::new(),
        })
    }

    /// Validates a parsed profile file.
    pub fn from_file(file: ProfileFile) -> Result<Self> {
        if file.version != PROFILE_VERSION {
            return Err(Error::field(
                "version",
                format!("unsupported version {} (expected {PROFILE_VERSION})", file.version),
            ));
        }
        let mut rows = BTreeMap::new();
        for (i, row) in file.rows.into_iter().enumerate() {
            if row.size == 0 {
                return Err(Error::field(format!("rows[{i}].size"), "must be at least 1"));
            }
            for (name, v) in [("sensitivity", row.sensitivity), ("specificity", row.specificity)] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::field(format!("rows[{i}].{name}"), format!("{v} outside [0, 1]")));
                }
            }
            let size = row.size;
            if rows.insert(size, row).is_some() {
                return Err(Error::field(format!("rows[{i}].size"), format!("duplicate size {size}")));
            }
        }
        if !rows.contains_key(&1) {
            return Err(Error::field("rows", "a size-1 row is required"));
        }
        if let Some(d) = &file.difficulty {
            if !(0.0..=1.0).contains(&d.hard_fraction) {
                return Err(Error::field(
                    "difficulty.hard_fraction",
                    format!("{} outside [0, 1]", d.hard_fraction),
                ));
            }
            if !(d.fp_multiplier >= 0.0 && d.fp_multiplier.is_finite()) {
                return Err(Error::field(
                    "difficulty.fp_multiplier",
                    format!("{} must be finite and nonnegative", d.fp_multiplier),
                ));
            }
        }
        Ok(OracleProfile {
            design: file.design,
            rows,
            difficulty: file.difficulty,
            notes: file.notes,
            warnings: file.warnings,
        })
    }

    pub fn to_file(&self) -> ProfileFile {
        ProfileFile {
            version: PROFILE_VERSION,
            design: self.design.clone(),
            rows: self.rows.values().cloned().collect(),
            difficulty: self.difficulty,
            notes: self.notes.clone(),
            warnings: self.warnings.clone(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ProfileFile =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("oracle profile: {e}")))?;
        Self::from_file(file)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_file()).expect("profile serializes");
        s.push('\n');
        s
    }

    pub fn design(&self) -> &str {
        &self.design
    }

    /// Configured bucket sizes, ascending.
    pub fn sizes(&self) -> impl Iterator<Item = usize> + '_ {
        self.rows.keys().copied()
    }

    pub fn rows(&self) -> impl Iterator<Item = &ProfileRow> {
        self.rows.values()
    }

    pub fn difficulty(&self) -> Option<&DifficultyModel> {
        self.difficulty.as_ref()
    }

    pub fn with_difficulty(mut self, model: Option<DifficultyModel>) -> Self {
        self.difficulty = model;
        self
    }

    pub fn with_notes(mut self, notes: impl Into<String>) -> Self {
        self.notes = Some(notes.into());
        self
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// The bucket used for a group of `size`: exact match, else the nearest
    /// configured size with ties going to the smaller one.
    pub fn bucket(&self, size: usize) -> usize {
        if self.rows.contains_key(&size) {
            return size;
        }
        let below = self.rows.range(..size).next_back().map(|(&s, _)| s);
        let above = self.rows.range(size..).next().map(|(&s, _)| s);
        match (below, above) {
            (Some(b), Some(a)) => {
                if a - size < size - b {
                    a
                } else {
                    b
                }
            }
            (Some(b), None) => b,
            (None, Some(a)) => a,
            (None, None) => unreachable!("profile always has a size-1 row"),
        }
    }

    pub fn rates(&self, size: usize) -> ErrorRates {
        let row = &self.rows[&self.bucket(size)];
        ErrorRates { sensitivity: row.sensitivity, specificity: row.specificity }
    }

    /// Probability that a test on `members` reads positive given its truth.
    pub fn positive_probability(&self, members: &[usize], truth: bool) -> f64 {
        let rates = self.rates(members.len());
        if truth {
            return rates.sensitivity;
        }
        let mut fp = 1.0 - rates.specificity;
        if let Some(d) = &self.difficulty {
            if members.iter().any(|&id| d.is_hard(id)) {
                fp = (fp * d.fp_multiplier).min(1.0);
            }
        }
        fp
    }
}

/// Sensitivity = specificity = 1 at every size.
pub fn perfect_profile() -> OracleProfile {
    OracleProfile::new("perfect", [(1, ErrorRates::PERFECT)]).expect("valid profile")
}

pub fn load_profile(path: impl AsRef<Path>) -> Result<OracleProfile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    OracleProfile::from_json(&text).map_err(|e| e.context(path.display().to_string()))
}

pub fn save_profile(profile: &OracleProfile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, profile.to_json()).map_err(|e| Error::io(path, e))
}

/// Outcome of one test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub positive: bool,
    /// OR of the members' labels.
    pub truth: bool,
}

/// Ground-truth label of a group: the maximum of its members' labels.
pub fn group_truth(members: &[usize], population: &Population) -> Result<bool> {
    if members.is_empty() {
        return Err(Error::invalid("group has no members"));
    }
    if let Some(&bad) = members.iter().find(|&&id| id >= population.len()) {
        return Err(Error::invalid(format!("sample id {bad} out of range")));
    }
    Ok(members.iter().any(|&id| population.label(id)))
}

/// Draws the outcome of testing `members`. Consumes exactly one uniform
/// from `rng`, so coupled streams give monotone outcomes in the error rates.
pub fn respond<R: Rng + ?Sized>(
    members: &[usize],
    population: &Population,
    profile: &OracleProfile,
    rng: &mut R,
) -> Result<TestOutcome> {
    let truth = group_truth(members, population)?;
    let u: f64 = rng.gen();
    let positive = u < profile.positive_probability(members, truth);
    Ok(TestOutcome { positive, truth })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pop(labels: &[u8]) -> Population {
        Population::from_labels(labels.iter().map(|&l| l == 1).collect()).unwrap()
    }

    #[test]
    fn group_truth_is_max_of_labels() {
        let p = pop(&[0, 0, 1, 0]);
        assert!(group_truth(&[0, 1, 2, 3], &p).unwrap());
        assert!(!group_truth(&[0, 1, 3], &p).unwrap());
        assert!(group_truth(&[2], &p).unwrap());
        assert!(group_truth(&[3, 2, 1], &p).unwrap());
        assert!(group_truth(&[], &p).is_err());
        assert!(group_truth(&[9], &p).is_err());
    }

    #[test]
    fn perfect_profile_never_flips_truth_exhaustive() {
        let profile = perfect_profile();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for n in 1..=8usize {
            for labels in 0u32..(1 << n) {
                let p = Population::from_labels((0..n).map(|i| labels >> i & 1 == 1).collect()).unwrap();
                for subset in 1u32..(1 << n) {
                    let members: Vec<usize> = (0..n).filter(|i| subset >> i & 1 == 1).collect();
                    let out = respond(&members, &p, &profile, &mut rng).unwrap();
                    assert_eq!(out.positive, out.truth);
                    assert_eq!(out.truth, labels & subset != 0);
                }
            }
        }
    }

    #[test]
    fn bucket_falls_back_to_nearest_smaller_on_ties() {
        let r = |s| ErrorRates { sensitivity: 1.0, specificity: s };
        let profile = OracleProfile::new("t", [(1, r(0.9)), (4, r(0.8)), (8, r(0.7))]).unwrap();
        assert_eq!(profile.bucket(4), 4);
        assert_eq!(profile.bucket(2), 1);
        assert_eq!(profile.bucket(3), 4);
        assert_eq!(profile.bucket(6), 4);
        assert_eq!(profile.bucket(7), 8);
        assert_eq!(profile.bucket(100), 8);
        assert_eq!(profile.rates(5).specificity, 0.8);
    }

    #[test]
    fn rejects_out_of_range_rates_naming_the_field() {
        let text = r#"{"version":1,"design":"x","rows":[
            {"size":1,"sensitivity":1.0,"specificity":0.99},
            {"size":8,"sensitivity":1.0,"specificity":1.2}]}"#;
        let err = OracleProfile::from_json(text).unwrap_err().to_string();
        assert!(err.contains("rows[1].specificity"), "{err}");
    }

    #[test]
    fn rejects_missing_individual_bucket_and_bad_fields() {
        let text = r#"{"version":1,"design":"x","rows":[{"size":2,"sensitivity":1.0,"specificity":0.9}]}"#;
        assert!(OracleProfile::from_json(text).is_err());
        let text = r#"{"version":1,"design":"x","rows":[{"size":1,"sensitivity":1.0}]}"#;
        let err = OracleProfile::from_json(text).unwrap_err().to_string();
        assert!(err.contains("specificity"), "{err}");
        let text = r#"{"version":2,"design":"x","rows":[{"size":1,"sensitivity":1.0,"specificity":1.0}]}"#;
        assert!(OracleProfile::from_json(text).unwrap_err().to_string().contains("version"));
    }

    #[test]
    fn five_bucket_file_round_trips() {
        let rows = [1, 2, 4, 8, 16].map(|s| (s, ErrorRates { sensitivity: 1.0, specificity: 1.0 - 0.01 * s as f64 }));
        let profile = OracleProfile::new("feature_merge", rows)
            .unwrap()
            .with_notes("measured")
            .with_difficulty(Some(DifficultyModel { hard_fraction: 0.1, fp_multiplier: 4.0, seed: 5 }));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        save_profile(&profile, &path).unwrap();
        let back = load_profile(&path).unwrap();
        assert_eq!(back, profile);
        assert_eq!(back.sizes().count(), 5);
    }

    #[test]
    fn negative_size8_false_positive_rate() {
        let r = |s| ErrorRates { sensitivity: 1.0, specificity: s };
        let profile = OracleProfile::new("t", [(1, r(0.9982)), (8, r(0.9614))]).unwrap();
        let p = Population::from_labels(vec![false; 8]).unwrap();
        let members: Vec<usize> = (0..8).collect();
        let draws = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let hits = (0..draws)
            .filter(|_| respond(&members, &p, &profile, &mut rng).unwrap().positive)
            .count();
        let rate = hits as f64 / draws as f64;
        let q = 1.0 - 0.9614;
        assert!((rate - q).abs() <= 3.0 * (q * (1.0 - q) / draws as f64).sqrt(), "{rate}");

        let hits = (0..draws)
            .filter(|_| respond(&[3], &p, &profile, &mut rng).unwrap().positive)
            .count();
        let rate = hits as f64 / draws as f64;
        let q = 1.0 - 0.9982;
        assert!((rate - q).abs() <= 3.0 * (q * (1.0 - q) / draws as f64).sqrt(), "{rate}");
    }

    #[test]
    fn difficulty_inflates_false_positives_only_for_hard_groups() {
        let model = DifficultyModel { hard_fraction: 0.5, fp_multiplier: 3.0, seed: 1 };
        let r = ErrorRates { sensitivity: 1.0, specificity: 0.9 };
        let profile = OracleProfile::new("t", [(1, r)]).unwrap().with_difficulty(Some(model));
        let hard = (0..100).find(|&i| model.is_hard(i)).unwrap();
        let easy = (0..100).find(|&i| !model.is_hard(i)).unwrap();
        assert!((profile.positive_probability(&[hard], false) - 0.3).abs() < 1e-12);
        assert!((profile.positive_probability(&[easy], false) - 0.1).abs() < 1e-12);
        assert_eq!(profile.positive_probability(&[hard], true), 1.0);
    }
}
