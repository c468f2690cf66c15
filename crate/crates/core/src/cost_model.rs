//! Multiply-accumulate accounting for individual and group forward passes.
//!
//! A network is a chain of layers with costs `c_1..c_L`; `prefix(i)` is the
//! cost of the first `i` layers. The three group designs differ in how much of
//! the chain runs per member:
//!
//! * pixel merge runs the whole chain once on the averaged input: `C`.
//! * feature merge runs layers `1..=T` per member and the rest once:
//!   `k * prefix(T) + (C - prefix(T))` for `k` members.
//! * tree merge runs segment `l` (layers `T_{l-1}+1..=T_l`) on every live
//!   node of level `l`, then the trunk after the last boundary once. Level 0
//!   has one node per member and level `l + 1` has `ceil(n_l / fanout_l)`.
//!
//! A feature cache holds per-sample outputs of the first boundary (the leaf
//! features). A cached member skips the leaf segment.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Compute in multiply-accumulate operations.
pub type Macs = u64;

pub const GMAC: Macs = 1_000_000_000;
pub const TMAC: Macs = 1_000_000_000_000;

/// Current cost profile file version.
pub const COST_PROFILE_VERSION: u32 = 1;

/// Named boundary preset stored in a cost profile file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryPreset {
    pub name: String,
    pub boundaries: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Fitted scalars shipped with a calibrated profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostCalibration {
    /// Per-sample individual cost `C`.
    pub total_macs: Macs,
    /// Fraction of `C` spent in the leaf layers of the feature-merge split.
    pub leaf_fraction: f64,
    pub derivation: String,
}

/// On-disk form of a [`CostProfile`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostProfileFile {
    pub version: u32,
    pub name: String,
    pub layer_costs: Vec<Macs>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub presets: Vec<BoundaryPreset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CostCalibration>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

/// Per-layer compute costs of the individual network.
#[derive(Debug, Clone, PartialEq)]
pub struct CostProfile {
    name: String,
    prefix: Vec<Macs>,
    presets: BTreeMap<String, BoundaryPreset>,
    calibration: Option<CostCalibration>,
    provenance: Option<String>,
}

impl CostProfile {
    pub fn new(name: impl Into<String>, layer_costs: Vec<Macs>) -> Result<Self> {
        Self::from_file(CostProfileFile {
            version: COST_PROFILE_VERSION,
            name: name.into(),
            layer_costs,
            presets: Vec::new(),
            calibration: None,
            provenance: None,
        })
    }

    pub fn from_file(file: CostProfileFile) -> Result<Self> {
        if file.version != COST_PROFILE_VERSION {
            return Err(Error::field(
                "version",
                format!("unsupported version {} (expected {COST_PROFILE_VERSION})", file.version),
            ));
        }
        if file.layer_costs.is_empty() {
            return Err(Error::field("layer_costs", "at least one layer is required"));
        }
        let mut prefix = Vec::with_capacity(file.layer_costs.len() + 1);
        prefix.push(0);
        let mut acc: Macs = 0;
        for &c in &file.layer_costs {
            acc = acc.checked_add(c).ok_or(Error::Overflow)?;
            prefix.push(acc);
        }
        if acc == 0 {
            return Err(Error::field("layer_costs", "total cost must be positive"));
        }
        let layers = file.layer_costs.len();
        let mut presets = BTreeMap::new();
        for (i, p) in file.presets.into_iter().enumerate() {
            if !p.boundaries.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::field(format!("presets[{i}].boundaries"), "must be strictly ascending"));
            }
            if p.boundaries.last().is_some_and(|&b| b > layers) {
                return Err(Error::field(
                    format!("presets[{i}].boundaries"),
                    format!("boundary beyond layer count {layers}"),
                ));
            }
            if presets.insert(p.name.clone(), p).is_some() {
                return Err(Error::field(format!("presets[{i}].name"), "duplicate preset"));
            }
        }
        if let Some(cal) = &file.calibration {
            if cal.total_macs != acc {
                return Err(Error::field(
                    "calibration.total_macs",
                    format!("{} disagrees with layer sum {acc}", cal.total_macs),
                ));
            }
        }
        Ok(CostProfile {
            name: file.name,
            prefix,
            presets,
            calibration: file.calibration,
            provenance: file.provenance,
        })
    }

    pub fn to_file(&self) -> CostProfileFile {
        CostProfileFile {
            version: COST_PROFILE_VERSION,
            name: self.name.clone(),
            layer_costs: self.layer_costs(),
            presets: self.presets.values().cloned().collect(),
            calibration: self.calibration.clone(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CostProfileFile =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("cost profile: {e}")))?;
        Self::from_file(file)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_file()).expect("profile serializes");
        s.push('\n');
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Number of layers `L`.
    pub fn layers(&self) -> usize {
        self.prefix.len() - 1
    }

    pub fn layer_costs(&self) -> Vec<Macs> {
        self.prefix.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// `C`, the cost of one individual forward pass.
    pub fn total(&self) -> Macs {
        self.prefix[self.layers()]
    }

    /// Cost of layers `1..=index`. `index` is clamped to `L`.
    pub fn prefix(&self, index: usize) -> Macs {
        self.prefix[index.min(self.layers())]
    }

    /// Cost of layers `from+1..=to`.
    pub fn segment(&self, from: usize, to: usize) -> Macs {
        self.prefix(to) - self.prefix(from)
    }

    pub fn preset(&self, name: &str) -> Result<&[usize]> {
        self.presets
            .get(name)
            .map(|p| p.boundaries.as_slice())
            .ok_or_else(|| Error::UnknownRef { kind: "boundary preset", name: name.to_owned() })
    }

    pub fn presets(&self) -> impl Iterator<Item = &BoundaryPreset> {
        self.presets.values()
    }

    pub fn with_preset(mut self, preset: BoundaryPreset) -> Self {
        self.presets.insert(preset.name.clone(), preset);
        self
    }

    pub fn calibration(&self) -> Option<&CostCalibration> {
        self.calibration.as_ref()
    }

    pub fn provenance(&self) -> Option<&str> {
        self.provenance.as_deref()
    }
}

/// Which group testing network design prices a group test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    PixelMerge,
    FeatureMerge,
    TreeMerge,
}

impl DesignKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DesignKind::PixelMerge => "pixel_merge",
            DesignKind::FeatureMerge => "feature_merge",
            DesignKind::TreeMerge => "tree_merge",
        }
    }
}

/// A group network design with its split points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DesignSpec {
    kind: DesignKind,
    group_size: usize,
    /// Feature merge: `[T]`. Tree merge: `T_0 < T_1 < ...`. Pixel merge: empty.
    boundaries: Vec<usize>,
    /// Tree merge branching per level.
    fanouts: Vec<usize>,
}

impl DesignSpec {
    pub fn pixel_merge(group_size: usize) -> Result<Self> {
        check_group_size(group_size)?;
        Ok(DesignSpec { kind: DesignKind::PixelMerge, group_size, boundaries: Vec::new(), fanouts: Vec::new() })
    }

    pub fn feature_merge(group_size: usize, split_index: usize) -> Result<Self> {
        check_group_size(group_size)?;
        Ok(DesignSpec {
            kind: DesignKind::FeatureMerge,
            group_size,
            boundaries: vec![split_index],
            fanouts: vec![group_size],
        })
    }

    /// Tree merge with one boundary and one fan-out per level. The fan-outs
    /// must multiply to `group_size`.
    pub fn tree_merge(group_size: usize, boundaries: Vec<usize>, fanouts: Vec<usize>) -> Result<Self> {
        check_group_size(group_size)?;
        if boundaries.len() != fanouts.len() {
            return Err(Error::field(
                "design.fanouts",
                format!("{} fan-outs for {} levels", fanouts.len(), boundaries.len()),
            ));
        }
        if fanouts.iter().any(|&f| f < 2) {
            return Err(Error::field("design.fanouts", "every fan-out must be at least 2"));
        }
        let capacity = fanouts.iter().try_fold(1usize, |acc, &f| acc.checked_mul(f));
        if capacity != Some(group_size) {
            return Err(Error::field(
                "design.fanouts",
                format!("fan-outs {fanouts:?} do not multiply to group size {group_size}"),
            ));
        }
        if !boundaries.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::field("design.boundaries", "must be strictly ascending"));
        }
        Ok(DesignSpec { kind: DesignKind::TreeMerge, group_size, boundaries, fanouts })
    }

    /// Tree merge with the same fan-out at every level; `group_size` must be
    /// a power of `fanout` and there must be one boundary per level.
    pub fn tree_uniform(group_size: usize, boundaries: Vec<usize>, fanout: usize) -> Result<Self> {
        let levels = tree_levels(group_size, fanout)?;
        if boundaries.len() != levels {
            return Err(Error::field(
                "design.boundaries",
                format!("{} boundaries for {levels} levels (group size {group_size}, fan-out {fanout})", boundaries.len()),
            ));
        }
        Self::tree_merge(group_size, boundaries, vec![fanout; levels])
    }

    /// Default tree: levels evenly spaced by MAC fraction up to `leaf_fraction`
    /// of `C`, each snapped to the nearest layer boundary.
    pub fn tree_default(group_size: usize, fanout: usize, profile: &CostProfile, leaf_fraction: f64) -> Result<Self> {
        let levels = tree_levels(group_size, fanout)?;
        let boundaries = even_boundaries(profile, levels, leaf_fraction)?;
        Self::tree_uniform(group_size, boundaries, fanout)
    }

    pub fn kind(&self) -> DesignKind {
        self.kind
    }

    /// Maximum number of members in one test.
    pub fn capacity(&self) -> usize {
        self.group_size
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn fanouts(&self) -> &[usize] {
        &self.fanouts
    }

    /// Checks that every boundary lies within the profile's layers.
    pub fn validate(&self, profile: &CostProfile) -> Result<()> {
        if let Some(&b) = self.boundaries.last() {
            if b > profile.layers() {
                return Err(Error::field(
                    "design.boundaries",
                    format!("boundary {b} beyond layer count {}", profile.layers()),
                ));
            }
        }
        Ok(())
    }

    /// Layer index whose output is cached per sample, if the design has one.
    pub fn leaf_checkpoint(&self) -> Option<usize> {
        match self.kind {
            DesignKind::PixelMerge => None,
            DesignKind::FeatureMerge | DesignKind::TreeMerge => {
                self.boundaries.first().copied().filter(|&b| b > 0)
            }
        }
    }

    /// Price of a test on `members` members, `cached` of which already hold
    /// their leaf features.
    pub fn price(&self, profile: &CostProfile, members: usize, cached: usize) -> Result<Macs> {
        if members == 0 {
            return Err(Error::invalid("group has no members"));
        }
        if members > self.group_size {
            return Err(Error::CapacityExceeded { members, capacity: self.group_size });
        }
        if cached > members {
            return Err(Error::invalid(format!("{cached} cached of {members} members")));
        }
        self.validate(profile)?;
        let total = profile.total();
        let cold = match self.kind {
            DesignKind::PixelMerge => total,
            DesignKind::FeatureMerge | DesignKind::TreeMerge => {
                let mut live = members as u64;
                let mut from = 0;
                let mut cost: Macs = 0;
                for (&to, &fanout) in self.boundaries.iter().zip(&self.fanouts) {
                    let seg = profile.segment(from, to);
                    cost = live
                        .checked_mul(seg)
                        .and_then(|c| cost.checked_add(c))
                        .ok_or(Error::Overflow)?;
                    live = live.div_ceil(fanout as u64);
                    from = to;
                }
                cost.checked_add(profile.segment(from, profile.layers())).ok_or(Error::Overflow)?
            }
        };
        Ok(cold - cached as u64 * self.leaf_segment_cost(profile))
    }

    /// Cost a cached member saves: the segment below the leaf checkpoint.
    pub fn leaf_segment_cost(&self, profile: &CostProfile) -> Macs {
        self.leaf_checkpoint().map_or(0, |t| profile.prefix(t))
    }
}

fn check_group_size(group_size: usize) -> Result<()> {
    if group_size == 0 {
        return Err(Error::field("group_size", "must be at least 1"));
    }
    Ok(())
}

/// `log_fanout(group_size)`, requiring an exact power.
pub fn tree_levels(group_size: usize, fanout: usize) -> Result<usize> {
    if fanout < 2 {
        return Err(Error::field("design.fanout", "must be at least 2"));
    }
    let mut levels = 0;
    let mut size = 1usize;
    while size < group_size {
        size = size.saturating_mul(fanout);
        levels += 1;
    }
    if size != group_size {
        return Err(Error::field(
            "group_size",
            format!("{group_size} is not a power of fan-out {fanout}"),
        ));
    }
    Ok(levels)
}

/// Layer index whose cumulative MAC fraction is closest to `fraction`
/// (ties to the lower index).
pub fn nearest_boundary(profile: &CostProfile, fraction: f64) -> usize {
    let target = fraction * profile.total() as f64;
    (0..=profile.layers())
        .min_by(|&a, &b| {
            let da = (profile.prefix(a) as f64 - target).abs();
            let db = (profile.prefix(b) as f64 - target).abs();
            da.total_cmp(&db)
        })
        .unwrap_or(0)
}

/// `levels` boundaries at fractions `b/levels, 2b/levels, ..., b` of `C`,
/// snapped to layers and forced strictly ascending.
pub fn even_boundaries(profile: &CostProfile, levels: usize, leaf_fraction: f64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&leaf_fraction) {
        return Err(Error::field("leaf_fraction", format!("{leaf_fraction} outside [0, 1]")));
    }
    let mut out: Vec<usize> = Vec::with_capacity(levels);
    for level in 1..=levels {
        let mut b = nearest_boundary(profile, leaf_fraction * level as f64 / levels as f64);
        if let Some(&prev) = out.last() {
            b = b.max(prev + 1);
        }
        if b > profile.layers() {
            return Err(Error::invalid(format!(
                "{levels} distinct boundaries do not fit in {} layers",
                profile.layers()
            )));
        }
        out.push(b);
    }
    Ok(out)
}

/// Feature checkpoints already computed in a run: `(sample id, layer index)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CacheState {
    checkpoints: BTreeSet<(usize, usize)>,
}

impl CacheState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, id: usize, layer: usize) -> bool {
        self.checkpoints.contains(&(id, layer))
    }

    pub fn insert(&mut self, id: usize, layer: usize) -> bool {
        self.checkpoints.insert((id, layer))
    }

    pub fn commit(&mut self, checkpoints: &[(usize, usize)]) {
        self.checkpoints.extend(checkpoints.iter().copied());
    }

    pub fn len(&self) -> usize {
        self.checkpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checkpoints.is_empty()
    }
}

/// Price of one group test plus its cache effects.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupPrice {
    pub cost: Macs,
    /// Per member: leaf features came from the cache.
    pub cache_hits: Vec<bool>,
    /// Checkpoints this test creates; commit them to the run's cache.
    pub new_checkpoints: Vec<(usize, usize)>,
}

/// Cost of one individual forward pass: `C`.
pub fn individual_cost(profile: &CostProfile) -> Macs {
    profile.total()
}

/// Prices a group test on `members` against `cache`. The cache is not
/// modified; commit `new_checkpoints` to record the test's features.
pub fn group_test_cost(
    design: &DesignSpec,
    profile: &CostProfile,
    cache: &CacheState,
    members: &[usize],
) -> Result<GroupPrice> {
    let (cache_hits, new_checkpoints) = match design.leaf_checkpoint() {
        Some(layer) => {
            let hits: Vec<bool> = members.iter().map(|&id| cache.contains(id, layer)).collect();
            let fresh = members
                .iter()
                .zip(&hits)
                .filter(|(_, &hit)| !hit)
                .map(|(&id, _)| (id, layer))
                .collect();
            (hits, fresh)
        }
        None => (vec![false; members.len()], Vec::new()),
    };
    let cached = cache_hits.iter().filter(|&&h| h).count();
    let cost = design.price(profile, members.len(), cached)?;
    Ok(GroupPrice { cost, cache_hits, new_checkpoints })
}

/// Cumulative MAC fraction of `C` at each layer index.
pub fn boundary_fractions(profile: &CostProfile, indices: &[usize]) -> Result<Vec<f64>> {
    if !indices.windows(2).all(|w| w[0] <= w[1]) {
        return Err(Error::invalid("boundary indices must be ascending"));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i > profile.layers()) {
        return Err(Error::invalid(format!("index {bad} beyond layer count {}", profile.layers())));
    }
    let total = profile.total() as f64;
    Ok(indices.iter().map(|&i| profile.prefix(i) as f64 / total).collect())
}

/// Checked sum of MAC values.
pub fn sum_macs(values: impl IntoIterator<Item = Macs>) -> Result<Macs> {
    values.into_iter().try_fold(0u64, |acc, v| acc.checked_add(v)).ok_or(Error::Overflow)
}
