//! CSV output for curves and tables.

use std::path::Path;

use crate::analysis::{PccSummary, StrategyScore};
use crate::error::{Error, Result};

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(format!("{other:?}")),
        },
    }
}

/// `layer,value` rows, layers counted from 1.
pub fn write_curve_csv(path: &Path, values: &[f64]) -> Result<()> {
    let mut w = writer(path)?;
    let rows = std::iter::once(["layer".to_string(), "value".to_string()])
        .chain(values.iter().enumerate().map(|(l, v)| [(l + 1).to_string(), v.to_string()]));
    for row in rows {
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_pcc_csv(path: &Path, curve: &[PccSummary]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["layer", "mean", "variance", "pairs", "excluded_constant"])
        .map_err(|e| csv_error(path, e))?;
    for (l, s) in curve.iter().enumerate() {
        w.write_record([
            (l + 1).to_string(),
            s.mean.to_string(),
            s.variance.to_string(),
            s.pairs.to_string(),
            s.excluded_constant.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_strategy_csv(path: &Path, scores: &[StrategyScore]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["strategy", "accuracy", "samples"]).map_err(|e| csv_error(path, e))?;
    for s in scores {
        w.write_record([s.strategy.to_string(), s.accuracy.to_string(), s.samples.to_string()])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
