//! Writes the bundled reference configs.

use ngt_core::reference::ROWS;
use ngt_core::validate::{reference_config, reference_config_name};

fn main() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/configs");
    for row in &ROWS {
        let config = reference_config(row, 100, 2021);
        let path = format!("{dir}/{}.toml", reference_config_name(row));
        std::fs::write(&path, config.to_toml()).expect("write config");
        println!("{path}");
    }
}
