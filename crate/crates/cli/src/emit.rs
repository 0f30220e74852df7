//! Trace serialization: JSONL round-trips, CSV for plotting, and the JSON
//! summary document (fits, correlations, sparsity, stability probes).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use endyn_core::diag::{
    fit_exponential_law, trace_statistics, ExpFit, StabilityComparison, StepDiagnostics,
    TraceStatistics,
};
use endyn_core::{Error, Policy, Result};

use crate::runner::TrainingTrace;

#[derive(Debug, Serialize, Deserialize)]
struct JsonlHeader {
    config_digest: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonlTrailer {
    final_policy: Policy,
    diverged: bool,
    diverged_at: Option<usize>,
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Validation(format!("{}: {e}", path.display()))
}

/// Write a trace as JSONL: a header line with the config digest, one line
/// per step record, and a trailer with the final policy.
pub fn write_trace_jsonl(trace: &TrainingTrace, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let mut line = |value: String| -> Result<()> {
        writeln!(w, "{value}").map_err(|e| io_err(path, e))
    };
    line(serde_json::to_string(&JsonlHeader {
        config_digest: trace.config_digest.clone(),
    })
    .expect("header serializes"))?;
    for record in &trace.records {
        line(serde_json::to_string(record).expect("record serializes"))?;
    }
    line(serde_json::to_string(&JsonlTrailer {
        final_policy: trace.final_policy.clone(),
        diverged: trace.diverged,
        diverged_at: trace.diverged_at,
    })
    .expect("trailer serializes"))?;
    w.flush().map_err(|e| io_err(path, e))
}

/// Read a JSONL trace back into memory; inverse of `write_trace_jsonl`.
pub fn load_trace_jsonl(path: &Path) -> Result<TrainingTrace> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut lines = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| io_err(path, e))?;
        if !line.trim().is_empty() {
            lines.push(line);
        }
    }
    if lines.len() < 2 {
        return Err(Error::Validation(format!(
            "{}: expected header and trailer lines",
            path.display()
        )));
    }
    let parse = |what: &str, text: &str, f: &mut dyn FnMut(&str) -> serde_json::Result<()>| {
        f(text).map_err(|e| Error::Validation(format!("{}: bad {what} line: {e}", path.display())))
    };
    let mut header = None;
    parse("header", &lines[0], &mut |t| {
        header = Some(serde_json::from_str::<JsonlHeader>(t)?);
        Ok(())
    })?;
    let mut trailer = None;
    parse("trailer", lines.last().unwrap(), &mut |t| {
        trailer = Some(serde_json::from_str::<JsonlTrailer>(t)?);
        Ok(())
    })?;
    let mut records = Vec::with_capacity(lines.len() - 2);
    for text in &lines[1..lines.len() - 1] {
        let mut record = None;
        parse("record", text, &mut |t| {
            record = Some(serde_json::from_str::<StepDiagnostics<f64>>(t)?);
            Ok(())
        })?;
        records.push(record.unwrap());
    }
    let header = header.unwrap();
    let trailer = trailer.unwrap();
    Ok(TrainingTrace {
        config_digest: header.config_digest,
        records,
        final_policy: trailer.final_policy,
        diverged: trailer.diverged,
        diverged_at: trailer.diverged_at,
    })
}

/// Write the plotting CSV: one row per logged step.
pub fn write_trace_csv(trace: &TrainingTrace, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let fail = |e: csv::Error| Error::Validation(format!("{}: {e}", path.display()));
    w.write_record(["step", "entropy", "reward", "predicted_dh", "actual_dh", "grad_norm"])
        .map_err(fail)?;
    for r in &trace.records {
        w.write_record([
            r.step.to_string(),
            r.avg_entropy.to_string(),
            r.expected_reward.to_string(),
            r.predicted_dh.to_string(),
            r.actual_dh.to_string(),
            r.grad_norm.to_string(),
        ])
        .map_err(fail)?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Derived statistics of one trace, serialized as the JSON summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceSummary {
    pub config_digest: String,
    pub num_records: usize,
    pub diverged: bool,
    pub final_reward: Option<f64>,
    pub final_entropy: Option<f64>,
    /// Least-squares fit of R = -a*exp(H) + b; present with >= 8 points
    /// unless the series is degenerate.
    pub exp_fit: Option<ExpFit<f64>>,
    /// Correlation and sparsity statistics; present with >= 20 records.
    pub statistics: Option<TraceStatistics<f64>>,
    /// Stability probes of the final policy, when requested.
    pub stability: Option<StabilityComparison<f64>>,
}

/// Build the summary document from a trace.
pub fn summarize_trace(
    trace: &TrainingTrace,
    stability: Option<StabilityComparison<f64>>,
) -> TraceSummary {
    let points: Vec<(f64, f64)> = trace
        .records
        .iter()
        .map(|r| (r.avg_entropy, r.expected_reward))
        .collect();
    let exp_fit = if points.len() >= 8 {
        fit_exponential_law(&points).ok()
    } else {
        None
    };
    let statistics = if trace.records.len() >= 20 {
        trace_statistics(&trace.records).ok()
    } else {
        None
    };
    let last = trace.records.last();
    TraceSummary {
        config_digest: trace.config_digest.clone(),
        num_records: trace.records.len(),
        diverged: trace.diverged,
        final_reward: last.map(|r| r.expected_reward),
        final_entropy: last.map(|r| r.avg_entropy),
        exp_fit,
        statistics,
        stability,
    }
}

/// Write the JSON summary document.
pub fn write_summary(summary: &TraceSummary, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(summary).expect("summary serializes");
    std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}
