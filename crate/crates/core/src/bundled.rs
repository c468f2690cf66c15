//! Bundled profiles and configs, and lookup of references by name or path.
//!
//! A reference is resolved in this order: an existing file path; `<dir>/<ref>`
//! or `<dir>/<ref>.json` (`.toml` for configs) for each directory in
//! [`PROFILE_PATH_ENV`]; the bundled asset of that name.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use crate::cost_model::CostProfile;
use crate::error::{Error, Result};
use crate::harness::ExperimentConfig;
use crate::oracle::{load_profile, perfect_profile, OracleProfile};

/// Search path for profile and config files, `:`-separated like `PATH`.
pub const PROFILE_PATH_ENV: &str = "NGT_PROFILE_PATH";

pub const COST_PROFILES: &[(&str, &str)] =
    &[("resnext101-calibrated", include_str!("../profiles/resnext101-calibrated.json"))];

pub const ORACLE_PROFILES: &[(&str, &str)] = &[
    ("pixel-merge-calibrated", include_str!("../profiles/pixel-merge-calibrated.json")),
    ("feature-merge-calibrated", include_str!("../profiles/feature-merge-calibrated.json")),
    ("tree-merge-calibrated", include_str!("../profiles/tree-merge-calibrated.json")),
];

macro_rules! configs {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../configs/", $name, ".toml")))),*]
    };
}

pub const CONFIGS: &[(&str, &str)] = configs![
    "m1_individual",
    "table1_alg1_d1_m2",
    "table1_alg1_d1_m4",
    "table1_alg1_d2_m2",
    "table1_alg1_d2_m4",
    "table1_alg1_d2_m8",
    "table1_alg1_d2_m16",
    "table1_alg1_d3_m4",
    "table1_alg1_d3_m8",
    "table1_alg1_d3_m16",
    "table1_alg2_d2_m8",
    "table1_alg2_d2_m16",
    "table1_alg2_d3_m8",
    "table1_alg2_d3_m16",
    "table1_alg3_d3_m4",
    "sweep_alg2_d3_m16",
];

fn lookup<'a>(table: &'a [(&str, &str)], name: &str) -> Option<&'a str> {
    table.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

/// Resolves profile and config references.
#[derive(Debug, Clone, Default)]
pub struct Resolver {
    search_path: Vec<PathBuf>,
}

impl Resolver {
    /// Search path from [`PROFILE_PATH_ENV`].
    pub fn from_env() -> Self {
        let search_path = env::var_os(PROFILE_PATH_ENV)
            .map(|v| env::split_paths(&v).filter(|p| !p.as_os_str().is_empty()).collect())
            .unwrap_or_default();
        Resolver { search_path }
    }

    pub fn with_search_path(search_path: Vec<PathBuf>) -> Self {
        Resolver { search_path }
    }

    /// Bundled assets only.
    pub fn bundled() -> Self {
        Resolver::default()
    }

    fn find_file(&self, reference: &str, ext: &str) -> Option<PathBuf> {
        let direct = Path::new(reference);
        if direct.is_file() {
            return Some(direct.to_path_buf());
        }
        self.search_path.iter().find_map(|dir| {
            [dir.join(reference), dir.join(format!("{reference}.{ext}"))].into_iter().find(|p| p.is_file())
        })
    }

    pub fn oracle_profile(&self, reference: &str) -> Result<OracleProfile> {
        if reference == "perfect" {
            return Ok(perfect_profile());
        }
        if let Some(path) = self.find_file(reference, "json") {
            return load_profile(path);
        }
        let text = lookup(ORACLE_PROFILES, reference)
            .ok_or_else(|| Error::UnknownRef { kind: "oracle profile", name: reference.to_owned() })?;
        OracleProfile::from_json(text)
    }

    pub fn cost_profile(&self, reference: &str) -> Result<CostProfile> {
        if let Some(path) = self.find_file(reference, "json") {
            return CostProfile::load(path);
        }
        let text = lookup(COST_PROFILES, reference)
            .ok_or_else(|| Error::UnknownRef { kind: "cost profile", name: reference.to_owned() })?;
        CostProfile::from_json(text)
    }

    pub fn config(&self, reference: &str) -> Result<ExperimentConfig> {
        if let Some(path) = self.find_file(reference, "toml") {
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            return ExperimentConfig::from_toml(&text).map_err(|e| e.context(path.display().to_string()));
        }
        let text = lookup(CONFIGS, reference)
            .ok_or_else(|| Error::UnknownRef { kind: "config", name: reference.to_owned() })?;
        ExperimentConfig::from_toml(text)
    }
}
