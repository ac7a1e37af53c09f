//! Persistence: the per-trial CSV and the JSON summaries.
//!
//! The CSV column order is fixed — `trial, k, t, mode_true, x_true[0..n),
//! y[0..m)`, then `mode, x[0..n), sq_err` per filter — and floats are written
//! with 17 significant digits, so files round-trip losslessly and are
//! byte-identical across runs and worker counts for a fixed seed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

use super::config::ExperimentConfig;
use super::runner::{MonteCarloOutput, TrialRecord};

/// A float with 17 significant digits: enough to reproduce any `f64` exactly
/// on read-back.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes the per-trial rows in the fixed schema.
pub fn write_trials_csv<W: Write>(
    mut w: W,
    cfg: &ExperimentConfig,
    records: &[TrialRecord],
) -> Result<()> {
    let bench = cfg.bench_system()?;
    let n = bench.common_dim();
    let m = bench
        .measurement()
        .measurement_dim(crate::hybrid::ModeId(cfg.initial_mode));

    let mut header: Vec<String> = vec!["trial".into(), "k".into(), "t".into(), "mode_true".into()];
    header.extend((0..n).map(|i| format!("x_true_{i}")));
    header.extend((0..m).map(|i| format!("y_{i}")));
    for kind in &cfg.filters {
        let label = kind.label();
        header.push(format!("{label}_mode"));
        header.extend((0..n).map(|i| format!("{label}_x_{i}")));
        header.push(format!("{label}_sq_err"));
    }
    writeln!(w, "{}", header.join(","))?;

    for record in records {
        for row in &record.rows {
            let mut fields: Vec<String> = vec![
                record.trial.to_string(),
                row.k.to_string(),
                format_float(row.t),
                row.mode_true.to_string(),
            ];
            fields.extend(row.x_true.iter().map(|&v| format_float(v)));
            fields.extend(row.y.iter().map(|&v| format_float(v)));
            for est in &row.estimates {
                fields.push(est.mode.to_string());
                fields.extend(est.x.iter().map(|&v| format_float(v)));
                fields.push(format_float(est.sq_err));
            }
            writeln!(w, "{}", fields.join(","))?;
        }
    }
    Ok(())
}

/// Serializes any summary as pretty JSON with a trailing newline.
pub fn write_json<W: Write, T: Serialize>(mut w: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

/// Writes `trials.csv`, `summary.json`, and `timing.json` into `dir`,
/// creating it if needed. The first two are deterministic for a fixed seed;
/// the timing report is not and lives in its own file.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, out: &MonteCarloOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let trials = File::create(dir.join("trials.csv"))?;
    write_trials_csv(BufWriter::new(trials), cfg, &out.records)?;
    let summary = File::create(dir.join("summary.json"))?;
    write_json(BufWriter::new(summary), &out.summary)?;
    let timing = File::create(dir.join("timing.json"))?;
    write_json(BufWriter::new(timing), &out.timing)?;
    Ok(())
}
