//! Report formatting and emitters.
//!
//! Display rounding is round-half-even and happens only here. Values that
//! come from integer MAC totals are rounded in exact integer arithmetic.

use std::io::Write;

use serde::Serialize;

use crate::cost_model::TMAC;
use crate::error::{Error, Result};

/// Output format of a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::Config(format!("unknown format `{other}` (expected csv or json)"))),
        }
    }
}

/// `num / den` rounded half-even to `decimals` places, as text.
pub fn format_ratio(num: u128, den: u128, decimals: u32) -> String {
    assert!(den > 0, "zero denominator");
    let scale = 10u128.pow(decimals);
    let scaled = num * scale;
    let (mut q, r) = (scaled / den, scaled % den);
    if 2 * r > den || (2 * r == den && q % 2 == 1) {
        q += 1;
    }
    if decimals == 0 {
        return q.to_string();
    }
    format!("{}.{:0width$}", q / scale, q % scale, width = decimals as usize)
}

/// MAC total in TMAC with one decimal.
pub fn format_tmac(macs: u64) -> String {
    format_ratio(u128::from(macs), u128::from(TMAC), 1)
}

/// `num / den` as a percentage with two decimals.
pub fn format_percent(num: u128, den: u128) -> String {
    format_ratio(num * 100, den, 2)
}

/// Rounds a float half-even to `decimals` places, as text.
pub fn format_f64(value: f64, decimals: i32) -> String {
    let scale = 10f64.powi(decimals);
    let rounded = (value * scale).round_ties_even() / scale;
    format!("{rounded:.prec$}", prec = decimals.max(0) as usize)
}

/// Writes serializable rows as CSV with the struct's field order as header.
pub fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(|e| Error::Parse(format!("csv: {e}")))?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize, W: Write>(value: &T, mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::Parse(format!("json: {e}")))?;
    writeln!(out).map_err(|e| Error::io("<json>", e))
}
