use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::RoundRecord;

/// End-of-run aggregate over all round records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub strategy: String,
    pub rounds: usize,
    pub best_accuracy: f64,
    pub best_round: usize,
    pub final_accuracy: f64,
    pub total_uploaded_bytes: u64,
    pub total_downloaded_bytes: u64,
    pub total_uploaded_mb: String,
    pub upload_bytes_per_round: f64,
}

/// `bytes` in base-10 megabytes with two decimals.
pub fn format_mb(bytes: u64) -> String {
    format!("{:.2} MB", bytes as f64 / 1e6)
}

/// Summary record plus a one-row comparison table.
pub fn emit_summary(name: &str, strategy: &str, records: &[RoundRecord]) -> Result<(Summary, String)> {
    let last = records
        .last()
        .ok_or_else(|| Error::usage("cannot summarise an empty run"))?;
    let best = records.iter().fold(&records[0], |b, r| {
        if r.global_eval_accuracy > b.global_eval_accuracy {
            r
        } else {
            b
        }
    });
    let up: u64 = records.iter().map(|r| r.uploaded_bytes).sum();
    let down: u64 = records.iter().map(|r| r.downloaded_bytes).sum();
    let summary = Summary {
        name: name.to_string(),
        strategy: strategy.to_string(),
        rounds: records.len(),
        best_accuracy: best.global_eval_accuracy,
        best_round: best.round,
        final_accuracy: last.global_eval_accuracy,
        total_uploaded_bytes: up,
        total_downloaded_bytes: down,
        total_uploaded_mb: format_mb(up),
        upload_bytes_per_round: up as f64 / records.len() as f64,
    };
    let table = comparison_table(std::slice::from_ref(&summary));
    Ok((summary, table))
}

/// Plain-text table with one row per run.
pub fn comparison_table(rows: &[Summary]) -> String {
    let mut out = format!(
        "{:<22} {:<20} {:>6} {:>8} {:>8} {:>12} {:>14}\n",
        "run", "strategy", "rounds", "best%", "final%", "uploaded", "bytes/round"
    );
    for s in rows {
        out += &format!(
            "{:<22} {:<20} {:>6} {:>8.2} {:>8.2} {:>12} {:>14.0}\n",
            s.name,
            s.strategy,
            s.rounds,
            s.best_accuracy * 100.0,
            s.final_accuracy * 100.0,
            s.total_uploaded_mb,
            s.upload_bytes_per_round
        );
    }
    out
}
