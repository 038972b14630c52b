//! Result rendering and analysis: summary tables, the ablation comparison,
//! plot-data series, and a paired-bootstrap significance utility.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{evaluate, StanceLabel};

use super::run::RunResult;
use super::{Ablation, HarnessError};

const ABSENT: &str = "—";

fn render_columns(rows: &[Vec<String>]) -> String {
    let n_cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut widths = vec![0usize; n_cols];
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.chars().count());
        }
    }
    let mut out = String::new();
    for row in rows {
        let mut line = String::new();
        for (i, cell) in row.iter().enumerate() {
            if i > 0 {
                line.push_str("  ");
            }
            line.push_str(cell);
            if i + 1 < row.len() {
                for _ in cell.chars().count()..widths[i] {
                    line.push(' ');
                }
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

fn metric(v: f64) -> String {
    format!("{v:.4}")
}

/// One row per run: config coordinates plus the headline metrics. Absent
/// dev metrics render as a dash, never as zero.
pub fn render_results_table(results: &[RunResult]) -> String {
    let mut rows = vec![vec![
        "task".to_string(),
        "ablation".to_string(),
        "gamma".to_string(),
        "seed".to_string(),
        "train F1(A)".to_string(),
        "dev F1(A)".to_string(),
        "eval F1(A)".to_string(),
        "wall(s)".to_string(),
    ]];
    for r in results {
        rows.push(vec![
            r.config.task.clone(),
            r.config.ablation.label().to_string(),
            r.config.gamma.to_string(),
            r.config.seed.to_string(),
            metric(r.train_report.macro_favor_against),
            r.dev_report
                .as_ref()
                .map_or_else(|| ABSENT.to_string(), |d| metric(d.macro_favor_against)),
            metric(r.report.macro_favor_against),
            format!("{:.1}", r.wall_time_secs),
        ]);
    }
    render_columns(&rows)
}

/// Ablation comparison: one row per variant, one column per task, cells are
/// eval macro F1(A) × 100 to one decimal.
pub fn render_ablation_table(results: &[RunResult]) -> String {
    let mut tasks: Vec<&str> = Vec::new();
    for r in results {
        if !tasks.contains(&r.config.task.as_str()) {
            tasks.push(&r.config.task);
        }
    }
    let mut rows = Vec::new();
    let mut header = vec!["Model".to_string()];
    header.extend(tasks.iter().map(|t| t.to_string()));
    rows.push(header);
    for ablation in Ablation::ALL {
        if !results.iter().any(|r| r.config.ablation == ablation) {
            continue;
        }
        let mut row = vec![ablation.table_label().to_string()];
        for task in &tasks {
            let cell = results
                .iter()
                .find(|r| r.config.ablation == ablation && r.config.task == *task)
                .map_or_else(
                    || ABSENT.to_string(),
                    |r| format!("{:.1}", r.report.macro_favor_against * 100.0),
                );
            row.push(cell);
        }
        rows.push(row);
    }
    render_columns(&rows)
}

/// (γ, eval macro F1(A)) series, sorted by γ, for plotting.
pub fn render_gamma_series(results: &[RunResult]) -> String {
    let mut points: Vec<(usize, f64)> =
        results.iter().map(|r| (r.config.gamma, r.report.macro_favor_against)).collect();
    points.sort_by_key(|&(g, _)| g);
    let mut out = String::from("gamma\tmacro_favor_against\n");
    for (gamma, fa) in points {
        out.push_str(&format!("{gamma}\t{fa:.6}\n"));
    }
    out
}

/// (step, loss) series for plotting one run's training curve.
pub fn render_training_curve(result: &RunResult) -> String {
    let mut out = String::from("step\tloss\n");
    for (step, loss) in &result.training_curve {
        out.push_str(&format!("{step}\t{loss:.6}\n"));
    }
    out
}

fn slug(result: &RunResult) -> String {
    let mut task = String::new();
    let mut prev_dash = true;
    for c in result.config.task.chars() {
        if c.is_ascii_alphanumeric() {
            task.push(c.to_ascii_lowercase());
            prev_dash = false;
        } else if !prev_dash {
            task.push('-');
            prev_dash = true;
        }
    }
    let task = task.trim_end_matches('-');
    format!(
        "{task}-{}-g{}-s{}",
        result.config.ablation.label(),
        result.config.gamma,
        result.config.seed
    )
}

/// Write the full report bundle into `dir`: machine-readable records
/// (`results.json`), the summary table, the γ series, and one training-curve
/// file per run. Returns the written paths.
pub fn write_report_bundle(
    dir: &Path,
    results: &[RunResult],
) -> Result<Vec<PathBuf>, HarnessError> {
    if results.is_empty() {
        return Err(HarnessError::Config {
            reason: "report needs at least one result".to_string(),
        });
    }
    std::fs::create_dir_all(dir)
        .map_err(|source| HarnessError::Io { path: dir.display().to_string(), source })?;
    let mut written = Vec::new();
    let mut put = |name: String, content: String| -> Result<(), HarnessError> {
        let path = dir.join(name);
        std::fs::write(&path, content)
            .map_err(|source| HarnessError::Io { path: path.display().to_string(), source })?;
        written.push(path);
        Ok(())
    };
    let json = serde_json::to_string_pretty(results)
        .map_err(|source| HarnessError::Json { what: "results".to_string(), source })?;
    put("results.json".to_string(), json)?;
    put("results_table.txt".to_string(), render_results_table(results))?;
    put("gamma_series.tsv".to_string(), render_gamma_series(results))?;
    for (i, result) in results.iter().enumerate() {
        put(
            format!("training_curve-{:02}-{}.tsv", i + 1, slug(result)),
            render_training_curve(result),
        )?;
    }
    Ok(written)
}

/// Paired-bootstrap comparison of two systems' predictions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapOutcome {
    /// Observed macro F1(A) difference, system A minus system B.
    pub delta: f64,
    /// Probability that the observed advantage vanishes (flips sign or
    /// reaches zero) when examples are resampled with replacement. Small
    /// values mean the gap is stable under resampling.
    pub p_value: f64,
    pub resamples: usize,
}

/// Paired bootstrap on macro F1(A): resample example indices with
/// replacement, re-score both systems on each resample, and count how often
/// the observed advantage disappears.
pub fn paired_bootstrap(
    gold: &[StanceLabel],
    pred_a: &[StanceLabel],
    pred_b: &[StanceLabel],
    resamples: usize,
    seed: u64,
) -> Result<BootstrapOutcome, HarnessError> {
    if gold.is_empty() || gold.len() != pred_a.len() || gold.len() != pred_b.len() {
        return Err(HarnessError::Config {
            reason: format!(
                "paired bootstrap needs non-empty, equal-length prediction sets \
                 (got {}, {}, {})",
                gold.len(),
                pred_a.len(),
                pred_b.len()
            ),
        });
    }
    if resamples == 0 {
        return Err(HarnessError::Config { reason: "resamples must be positive".to_string() });
    }
    let score = |g: &[StanceLabel], p: &[StanceLabel]| -> Result<f64, HarnessError> {
        Ok(evaluate(g, p)?.macro_favor_against)
    };
    let observed = score(gold, pred_a)? - score(gold, pred_b)?;
    let n = gold.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flips = 0usize;
    let mut g = vec![StanceLabel::None; n];
    let mut a = vec![StanceLabel::None; n];
    let mut b = vec![StanceLabel::None; n];
    for _ in 0..resamples {
        for slot in 0..n {
            let i = rng.random_range(0..n);
            g[slot] = gold[i];
            a[slot] = pred_a[i];
            b[slot] = pred_b[i];
        }
        let delta = score(&g, &a)? - score(&g, &b)?;
        let flipped = if observed >= 0.0 { delta <= 0.0 } else { delta >= 0.0 };
        if flipped {
            flips += 1;
        }
    }
    Ok(BootstrapOutcome {
        delta: observed,
        p_value: (flips + 1) as f64 / (resamples + 1) as f64,
        resamples,
    })
}
