//! Per-round metrics CSV.
//!
//! Columns: `round, target_acc, igd_loss, mean_source_loss, bytes_up,
//! bytes_down, wall_max_client_ms, wall_server_ms, w_0 .. w_{N-1}, g1`.
//! Absent values are empty fields; `g1` is the first-group bitmask as a
//! decimal integer.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::federation::RoundRecord;

pub fn metrics_header(num_sources: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "round",
        "target_acc",
        "igd_loss",
        "mean_source_loss",
        "bytes_up",
        "bytes_down",
        "wall_max_client_ms",
        "wall_server_ms",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend((0..num_sources).map(|n| format!("w_{n}")));
    h.push("g1".into());
    h
}

fn record_row(r: &RoundRecord, num_sources: usize) -> Vec<String> {
    let mut row = vec![
        r.round.to_string(),
        r.target_acc.to_string(),
        r.igd_loss.map(|v| v.to_string()).unwrap_or_default(),
        r.mean_source_loss.to_string(),
        r.bytes_up.to_string(),
        r.bytes_down.to_string(),
        r.wall_max_client_ms.to_string(),
        r.wall_server_ms.to_string(),
    ];
    row.extend((0..num_sources).map(|n| r.weights.get(n).map(|w| w.to_string()).unwrap_or_default()));
    row.push(r.g1_mask.map(|m| m.to_string()).unwrap_or_default());
    row
}

pub fn write_metrics<W: Write>(records: &[RoundRecord], num_sources: usize, out: W) -> Result<()> {
    let to_err = |e: csv::Error| Error::Data(format!("metrics CSV: {e}"));
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(metrics_header(num_sources)).map_err(to_err)?;
    for r in records {
        w.write_record(record_row(r, num_sources)).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::Data(format!("metrics CSV: {e}")))?;
    Ok(())
}

pub fn emit_metrics(records: &[RoundRecord], num_sources: usize, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_metrics(records, num_sources, file).map_err(|e| match e {
        Error::Data(msg) => Error::io(path, std::io::Error::other(msg)),
        other => other,
    })
}
