//! Prints the fitted calibration values frozen into the bundled profiles.

use ngt_core::calibration::{fit_oracle_profile, fit_tree_boundaries, implied_group_cost};
use ngt_core::cost_model::{CostProfile, DesignKind};
use ngt_core::reference;

fn main() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/profiles/resnext101-calibrated.json"))
        .expect("bundled profile");
    let profile = CostProfile::from_json(&text).expect("valid profile");
    for row in reference::two_round_rows(DesignKind::TreeMerge) {
        let target = implied_group_cost(row, reference::INDIVIDUAL_MACS);
        let fit = fit_tree_boundaries(&profile, row.group_size, 2, target).expect("fit");
        println!(
            "m={} target={:.4}C fit={:?} b={} cost={:.4}C",
            row.group_size,
            target / profile.total() as f64,
            fit.boundaries,
            fit.leaf_fraction,
            fit.group_cost as f64 / profile.total() as f64
        );
    }
    for design in [DesignKind::PixelMerge, DesignKind::FeatureMerge, DesignKind::TreeMerge] {
        println!("{}", fit_oracle_profile(design).expect("fit").to_json());
    }
}
