//! Metrics records and the versioned CSV format.
//!
//! `metrics.csv` is the authoritative per-seed artifact; byte-identical
//! reruns are part of the contract, so rows hold only deterministic values
//! (wall time lives in the per-run summary instead).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::CliError;

pub const METRICS_SCHEMA: &str = "# svgd-explore metrics v1";
pub const METRICS_HEADER: &str = "step,episode,coverage,intrinsic_reward,model_loss,bandwidth";

/// One row per real environment step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub episode: u64,
    pub coverage: f64,
    pub intrinsic_reward: f64,
    pub model_loss: f64,
    pub bandwidth: f64,
}

/// Per-seed run outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
    /// First episode whose end-of-episode coverage reached 1.0; -1 if never.
    pub episodes_to_full_coverage: i64,
    pub final_coverage: f64,
    pub wall_time_secs: f64,
    /// Refit updates that were skipped after a fault.
    pub svgd_failures: usize,
    /// Set when the run aborted mid-way; partial rows are still flushed.
    pub error: Option<String>,
}

impl RunMetrics {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(METRICS_SCHEMA);
        out.push('\n');
        out.push_str(METRICS_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.step, r.episode, r.coverage, r.intrinsic_reward, r.model_loss, r.bandwidth
            );
        }
        if let Some(err) = &self.error {
            let _ = writeln!(out, "# error: {}", err.replace('\n', " "));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, CliError> {
        let mut rows = Vec::new();
        let mut error = None;
        for (i, line) in text.lines().enumerate() {
            if i == 0 {
                if line != METRICS_SCHEMA {
                    return Err(CliError::Runtime(format!("unknown metrics schema: {line}")));
                }
                continue;
            }
            if line == METRICS_HEADER || line.is_empty() {
                continue;
            }
            if let Some(msg) = line.strip_prefix("# error: ") {
                error = Some(msg.to_string());
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(CliError::Runtime(format!("bad metrics row: {line}")));
            }
            let parse_f = |s: &str| s.parse::<f64>().map_err(|e| CliError::Runtime(format!("{e}: {s}")));
            let parse_u = |s: &str| s.parse::<u64>().map_err(|e| CliError::Runtime(format!("{e}: {s}")));
            rows.push(MetricsRow {
                step: parse_u(fields[0])?,
                episode: parse_u(fields[1])?,
                coverage: parse_f(fields[2])?,
                intrinsic_reward: parse_f(fields[3])?,
                model_loss: parse_f(fields[4])?,
                bandwidth: parse_f(fields[5])?,
            });
        }
        let final_coverage = rows.last().map(|r| r.coverage).unwrap_or(0.0);
        let episodes_to_full_coverage = episodes_to_coverage(&rows, 1.0);
        Ok(Self {
            seed: 0,
            rows,
            episodes_to_full_coverage,
            final_coverage,
            wall_time_secs: 0.0,
            svgd_failures: 0,
            error,
        })
    }

    /// End-of-episode coverage series (episode numbers are contiguous from
    /// the first recorded episode).
    pub fn episode_coverage(&self) -> Vec<(u64, f64)> {
        let mut out: Vec<(u64, f64)> = Vec::new();
        for r in &self.rows {
            match out.last_mut() {
                Some((ep, cov)) if *ep == r.episode => *cov = r.coverage,
                _ => out.push((r.episode, r.coverage)),
            }
        }
        out
    }
}

/// First episode whose end-of-episode coverage reaches `threshold`; -1 when
/// never reached.
pub fn episodes_to_coverage(rows: &[MetricsRow], threshold: f64) -> i64 {
    let mut last_episode = None;
    for r in rows {
        if r.coverage >= threshold {
            return r.episode as i64;
        }
        last_episode = Some(r.episode);
    }
    let _ = last_episode;
    -1
}

/// Per-seed summary rows written next to the metrics.
pub fn summary_csv(runs: &[RunMetrics]) -> String {
    let mut out = String::from("seed,episodes_to_full_coverage,final_coverage,wall_time_secs,svgd_failures\n");
    for r in runs {
        let _ = writeln!(
            out,
            "{},{},{},{:.3},{}",
            r.seed, r.episodes_to_full_coverage, r.final_coverage, r.wall_time_secs, r.svgd_failures
        );
    }
    out
}
