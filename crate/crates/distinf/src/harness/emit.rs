//! Heatmap and summary emission for sweep results.
//!
//! Emitted files are byte-deterministic: CSV floats are fixed at six
//! decimals, JSON aggregates are rounded to six decimals before
//! serialization, and `cells.json` keeps full precision so stored triples
//! recompute exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{AttackKind, ExperimentConfig, HarnessError, SweepResult};

fn median(sorted: &mut Vec<f64>) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    Some(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    })
}

fn round6(x: f64) -> f64 {
    if x.is_finite() {
        (x * 1e6).round() / 1e6
    } else {
        x
    }
}

/// Accuracy/leakage aggregates for one ratio pair of one attack.
struct PairAggregate {
    mean_omega: f64,
    /// Median of the finite per-repetition n_leaked values; `inf` when every
    /// repetition saturated, absent when no repetition succeeded.
    median_n_leaked: Option<f64>,
}

fn pair_aggregate(result: &SweepResult, attack: AttackKind, i: usize, j: usize) -> Option<PairAggregate> {
    let (a0, a1) = (result.alpha_grid[i], result.alpha_grid[j]);
    let mut omegas = Vec::new();
    let mut finite_leaks = Vec::new();
    let mut saturated = 0usize;
    for cell in result.cells_for(attack) {
        if cell.alpha0 == a0 && cell.alpha1 == a1 {
            if let Some(report) = &cell.report {
                omegas.push(report.accuracy);
                if report.n_leaked.is_finite() {
                    finite_leaks.push(report.n_leaked);
                } else {
                    saturated += 1;
                }
            }
        }
    }
    if omegas.is_empty() {
        return None;
    }
    let mean_omega = omegas.iter().sum::<f64>() / omegas.len() as f64;
    let median_n_leaked = match median(&mut finite_leaks) {
        Some(m) => Some(m),
        None if saturated > 0 => Some(f64::INFINITY),
        None => None,
    };
    Some(PairAggregate {
        mean_omega,
        median_n_leaked,
    })
}

fn fmt6(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.6}")
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

/// Renders the grid-by-grid heatmap CSV for one attack: cell `(i, j)` with
/// `i < j` holds the mean distinguishing accuracy for the pair
/// `(alpha_i, alpha_j)`, the mirrored cell holds the median n_leaked, the
/// diagonal stays blank.
pub fn emit_heatmap(result: &SweepResult, attack: AttackKind) -> Result<String, HarnessError> {
    if result.cells_for(attack).next().is_none() {
        return Err(HarnessError::UnknownAttack(attack.slug().to_string()));
    }
    let g = result.alpha_grid.len();
    let mut out = String::new();
    for row in 0..g {
        for col in 0..g {
            if col > 0 {
                out.push(',');
            }
            if row == col {
                continue;
            }
            let (i, j, accuracy_cell) = if row < col {
                (row, col, true)
            } else {
                (col, row, false)
            };
            if let Some(agg) = pair_aggregate(result, attack, i, j) {
                let value = if accuracy_cell {
                    Some(agg.mean_omega)
                } else {
                    agg.median_n_leaked
                };
                if let Some(v) = value {
                    let _ = write!(out, "{}", fmt6(v));
                }
            }
        }
        out.push('\n');
    }
    Ok(out)
}

mod opt_or_none {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, ser: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) if x.is_finite() => ser.serialize_f64(*x),
            Some(_) => ser.serialize_str("inf"),
            None => ser.serialize_str("none"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Option<f64>, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(de)? {
            Raw::Num(v) => Ok(Some(v)),
            Raw::Str(s) => match s.as_str() {
                "none" => Ok(None),
                "inf" => Ok(Some(f64::INFINITY)),
                other => Err(D::Error::custom(format!("unexpected value `{other}`"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub attack: AttackKind,
    pub cells: usize,
    pub failed_cells: usize,
    /// Median over every repetition-level finite n_leaked value; non-finite
    /// values are excluded (the stated outlier rule), `"none"` when nothing
    /// remains.
    #[serde(with = "opt_or_none")]
    pub median_n_leaked: Option<f64>,
    pub excluded_non_finite: usize,
    pub best_omega: f64,
    /// The smallest |alpha0 - alpha1| whose mean accuracy reaches 0.75;
    /// `"none"` when no pair does.
    #[serde(with = "opt_or_none")]
    pub min_gap_at_075: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSummary {
    pub mean_mse: f64,
    /// Mean over per-ratio mean squared errors of Theorem-2 leakage at the
    /// non-degenerate ratios.
    #[serde(with = "opt_or_none")]
    pub median_n_leaked: Option<f64>,
    /// Squared error of the best blind constant guess against the ratio
    /// grid (its variance) - the baseline a real regressor must beat.
    pub blind_guess_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub outlier_rule: String,
    pub attacks: Vec<AttackSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regression: Option<RegressionSummary>,
    pub warnings: Vec<String>,
}

/// Aggregates a sweep into the per-attack report: median finite n_leaked,
/// best accuracy, and the minimum ratio gap reaching mean accuracy 0.75.
pub fn summarize(result: &SweepResult) -> Summary {
    let mut attacks_present: Vec<AttackKind> = Vec::new();
    for cell in &result.cells {
        if !attacks_present.contains(&cell.attack) {
            attacks_present.push(cell.attack);
        }
    }
    let g = result.alpha_grid.len();

    let attacks = attacks_present
        .into_iter()
        .map(|attack| {
            let mut leaks = Vec::new();
            let mut excluded = 0usize;
            let mut failed = 0usize;
            let mut cells = 0usize;
            for cell in result.cells_for(attack) {
                cells += 1;
                match &cell.report {
                    Some(report) => {
                        if report.n_leaked.is_finite() {
                            leaks.push(report.n_leaked);
                        } else {
                            excluded += 1;
                        }
                    }
                    None => failed += 1,
                }
            }
            let mut best_omega: f64 = 0.0;
            let mut min_gap: Option<f64> = None;
            for i in 0..g {
                for j in (i + 1)..g {
                    if let Some(agg) = pair_aggregate(result, attack, i, j) {
                        best_omega = best_omega.max(agg.mean_omega);
                        if agg.mean_omega >= 0.75 {
                            let gap = result.alpha_grid[j] - result.alpha_grid[i];
                            min_gap = Some(min_gap.map_or(gap, |m: f64| m.min(gap)));
                        }
                    }
                }
            }
            AttackSummary {
                attack,
                cells,
                failed_cells: failed,
                median_n_leaked: median(&mut leaks).map(round6),
                excluded_non_finite: excluded,
                best_omega: round6(best_omega),
                min_gap_at_075: min_gap.map(round6),
            }
        })
        .collect();

    let regression = if result.regression_cells.is_empty() {
        None
    } else {
        let mean_mse = result.regression_cells.iter().map(|c| c.mse).sum::<f64>()
            / result.regression_cells.len() as f64;
        let mut leaks: Vec<f64> = result
            .regression_cells
            .iter()
            .filter_map(|c| c.n_leaked)
            .filter(|v| v.is_finite())
            .collect();
        let grid_mean = result.alpha_grid.iter().sum::<f64>() / result.alpha_grid.len() as f64;
        let blind = result
            .alpha_grid
            .iter()
            .map(|a| (a - grid_mean).powi(2))
            .sum::<f64>()
            / result.alpha_grid.len() as f64;
        Some(RegressionSummary {
            mean_mse: round6(mean_mse),
            median_n_leaked: median(&mut leaks).map(round6),
            blind_guess_mse: round6(blind),
        })
    };

    Summary {
        config_hash: result.config_hash.clone(),
        outlier_rule: "median over finite n_leaked values; non-finite values excluded, no percentile trimming".to_string(),
        attacks,
        regression,
        warnings: result.warnings.clone(),
    }
}

/// Writes `cells.json`, one heatmap CSV per attack, and `summary.json` into
/// the config's output directory; returns the written paths.
pub fn write_sweep_outputs(
    result: &SweepResult,
    cfg: &ExperimentConfig,
) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(&cfg.output_dir)?;
    let mut written = Vec::new();

    let cells_path = cfg.output_dir.join("cells.json");
    fs::write(&cells_path, serde_json::to_string_pretty(result)?)?;
    written.push(cells_path);

    for &attack in &cfg.attacks {
        if result.cells_for(attack).next().is_none() {
            continue;
        }
        let csv = emit_heatmap(result, attack)?;
        let path = cfg
            .output_dir
            .join(format!("heatmap_{}.csv", attack.slug()));
        fs::write(&path, csv)?;
        written.push(path);
    }

    let summary_path = cfg.output_dir.join("summary.json");
    fs::write(
        &summary_path,
        serde_json::to_string_pretty(&summarize(result))?,
    )?;
    written.push(summary_path);
    Ok(written)
}
