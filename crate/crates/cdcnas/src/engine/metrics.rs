//! CSV emission for training logs, architecture-weight traces, confusion
//! matrices and reports. Formatting is fixed so identical runs produce
//! byte-identical files.

use crate::error::Result;
use std::path::Path;

/// One row of the per-epoch log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
}

pub fn write_epoch_log(path: &Path, rows: &[EpochLog]) -> Result<()> {
    let mut out = String::from("epoch,split,loss,accuracy\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6}\n",
            r.epoch, r.split, r.loss, r.accuracy
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// One softmax weight observation in the architecture-parameter trace.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub edge: String,
    pub op: String,
    pub eta: f64,
}

pub fn write_alpha_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut out = String::from("step,edge,op,eta\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{:.6}\n", r.step, r.edge, r.op, r.eta));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_confusion(path: &Path, confusion: &[Vec<usize>]) -> Result<()> {
    let k = confusion.len();
    let mut out = String::from("true\\pred");
    for j in 0..k {
        out.push_str(&format!(",{j}"));
    }
    out.push('\n');
    for (i, row) in confusion.iter().enumerate() {
        out.push_str(&i.to_string());
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Generic small report table (theta sweeps, ablations, benchmarks).
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
