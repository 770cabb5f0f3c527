//! Cross-seed aggregation: per-episode mean and sample standard deviation
//! of coverage for each run directory, emitted as CSV and a standalone SVG
//! line chart.

use std::fs;
use std::path::{Path, PathBuf};

use crate::metrics::RunMetrics;
use crate::svg::{render_coverage_chart, AggregateSeries};
use crate::CliError;

#[derive(Debug, Clone)]
pub struct MethodAggregate {
    pub label: String,
    /// (episode, mean coverage, sample std) per episode.
    pub rows: Vec<(u64, f64, f64)>,
    pub seeds: usize,
}

/// Sample standard deviation (n - 1); zero for a single observation.
fn sample_std(values: &[f64], mean: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (values.len() - 1) as f64;
    var.sqrt()
}

/// Load every `seed-*/metrics.csv` under a run directory.
pub fn load_run_dir(run_dir: &Path) -> Result<Vec<RunMetrics>, CliError> {
    let mut seeds: Vec<PathBuf> = fs::read_dir(run_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .map(|n| n.to_string_lossy().starts_with("seed-"))
                    .unwrap_or(false)
        })
        .collect();
    seeds.sort();
    if seeds.is_empty() {
        return Err(CliError::Runtime(format!(
            "no seed directories under {}",
            run_dir.display()
        )));
    }
    seeds
        .iter()
        .map(|dir| {
            let text = fs::read_to_string(dir.join("metrics.csv"))?;
            RunMetrics::from_csv(&text)
        })
        .collect()
}

/// Aggregate one run directory across its seeds. Seeds with different
/// episode counts are aligned by truncation to the shortest, with a warning
/// on stderr.
pub fn aggregate_run(run_dir: &Path) -> Result<MethodAggregate, CliError> {
    let runs = load_run_dir(run_dir)?;
    let per_seed: Vec<Vec<(u64, f64)>> = runs.iter().map(|r| r.episode_coverage()).collect();
    let shortest = per_seed.iter().map(|s| s.len()).min().unwrap_or(0);
    if per_seed.iter().any(|s| s.len() != shortest) {
        eprintln!(
            "warning: {} has mismatched episode grids; truncating to {} episodes",
            run_dir.display(),
            shortest
        );
    }
    let mut rows = Vec::with_capacity(shortest);
    for e in 0..shortest {
        let episode = per_seed[0][e].0;
        let values: Vec<f64> = per_seed.iter().map(|s| s[e].1).collect();
        // Center on the first value: identical seeds then aggregate to an
        // exact mean and an exactly zero std.
        let base = values[0];
        let mean = base + values.iter().map(|v| v - base).sum::<f64>() / values.len() as f64;
        rows.push((episode, mean, sample_std(&values, mean)));
    }
    let label = run_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    Ok(MethodAggregate {
        label,
        rows,
        seeds: runs.len(),
    })
}

pub fn aggregate_csv(aggregates: &[MethodAggregate]) -> String {
    let mut out = String::from("method,episode,mean_coverage,std_coverage,seeds\n");
    for agg in aggregates {
        for &(episode, mean, std) in &agg.rows {
            out.push_str(&format!("{},{episode},{mean},{std},{}\n", agg.label, agg.seeds));
        }
    }
    out
}

/// Aggregate several run directories and write `summary.csv` plus
/// `coverage.svg` into `out_dir`.
pub fn aggregate(run_dirs: &[PathBuf], out_dir: &Path) -> Result<Vec<MethodAggregate>, CliError> {
    if run_dirs.is_empty() {
        return Err(CliError::Config("aggregate: need at least one run directory".into()));
    }
    let aggregates: Vec<MethodAggregate> = run_dirs
        .iter()
        .map(|d| aggregate_run(d))
        .collect::<Result<Vec<_>, CliError>>()?;
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("summary.csv"), aggregate_csv(&aggregates))?;
    let series: Vec<AggregateSeries> = aggregates
        .iter()
        .map(|a| AggregateSeries {
            label: a.label.clone(),
            points: a.rows.iter().map(|&(e, m, s)| (e as f64, m, s)).collect(),
        })
        .collect();
    fs::write(out_dir.join("coverage.svg"), render_coverage_chart(&series))?;
    Ok(aggregates)
}
