use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ObjectiveKind;
use crate::error::{Error, Result};
use crate::objectives::{ScheduleConfig, Strategy};
use crate::policy::{write_checkpoint, FrozenPolicy};

use super::run::{load_splits, reference_policy, run_po, write_json, write_run, RunConfig, RunSummary};

/// One row of `sweep_summary.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub f: f64,
    pub omega1: f64,
    pub reward_accuracy: f64,
    pub mean_margin: f64,
    pub perplexity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub label: String,
    pub schedule: ScheduleConfig,
    pub summary: Option<RunSummary>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    /// Omega1 of the shared SFT checkpoint on the test split.
    pub reference_omega1: f64,
    pub entries: Vec<SweepEntry>,
    /// Spearman correlations over the successful fixed-f runs.
    pub rho_f_reward_accuracy: Option<f64>,
    pub rho_f_omega1: Option<f64>,
}

impl SweepReport {
    /// Fixed-strategy runs that finished, in sweep order.
    pub fn fixed_rows(&self) -> Vec<SweepRow> {
        self.entries
            .iter()
            .filter(|e| e.schedule.strategy == Strategy::Fixed)
            .filter_map(|e| {
                e.summary.as_ref().map(|s| SweepRow {
                    f: e.schedule.lambda_min,
                    omega1: s.final_eval.omega1,
                    reward_accuracy: s.final_eval.reward_accuracy,
                    mean_margin: s.final_eval.mean_margin,
                    perplexity: s.final_eval.perplexity,
                })
            })
            .collect()
    }
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of the average ranks. `None` when either side is
/// constant or there are fewer than two points.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(xs), average_ranks(ys));
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some(sxy / (sxx * syy).sqrt())
    }
}

fn label(s: &ScheduleConfig) -> String {
    match s.strategy {
        Strategy::Fixed => format!("f_{}", s.lambda_min),
        Strategy::LinearIncrease => format!("linear_increase_{}_{}", s.lambda_min, s.lambda_max),
        Strategy::LinearDecrease => format!("linear_decrease_{}_{}", s.lambda_min, s.lambda_max),
    }
}

/// Shifted-DPO runs for every fixed `f` and every schedule variant, all
/// starting from one shared SFT checkpoint. A failing run is recorded and the
/// sweep moves on.
pub fn sweep(base: &RunConfig, f_values: &[f64], variants: &[ScheduleConfig], dir: &Path) -> Result<SweepReport> {
    base.validate()?;
    if f_values.is_empty() && variants.is_empty() {
        return Err(Error::domain("sweep needs at least one setting"));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let splits = load_splits(base, None)?;
    let (reference, _) = reference_policy(base, &splits)?;
    let shared: PathBuf = match &base.sft_checkpoint {
        Some(p) => p.clone(),
        None => {
            let p = dir.join("sft.ckpt");
            write_checkpoint(&p, &reference)?;
            p
        }
    };
    let frozen = FrozenPolicy::new(reference);
    let reference_omega1 = crate::diagnostics::omega1(&frozen, &splits.test)?;

    let schedules = f_values.iter().map(|&f| ScheduleConfig::fixed(f)).chain(variants.iter().copied());
    let mut entries = Vec::new();
    for schedule in schedules {
        let mut config = base.clone();
        config.objective.objective_kind = ObjectiveKind::DpoShift;
        config.objective.schedule = schedule;
        config.sft_checkpoint = Some(shared.clone());
        let name = label(&schedule);
        let outcome = run_po(&config, &splits, &frozen).and_then(|a| {
            write_run(&dir.join(&name), &config, &a, frozen.inner())?;
            Ok(a.summary)
        });
        let (summary, error) = match outcome {
            Ok(s) => (Some(s), None),
            Err(e) => (None, Some(e.to_string())),
        };
        entries.push(SweepEntry {
            label: name,
            schedule,
            summary,
            error,
        });
    }

    let mut report = SweepReport {
        reference_omega1,
        entries,
        rho_f_reward_accuracy: None,
        rho_f_omega1: None,
    };
    let rows = report.fixed_rows();
    let fs: Vec<f64> = rows.iter().map(|r| r.f).collect();
    report.rho_f_reward_accuracy = spearman(&fs, &rows.iter().map(|r| r.reward_accuracy).collect::<Vec<_>>());
    report.rho_f_omega1 = spearman(&fs, &rows.iter().map(|r| r.omega1).collect::<Vec<_>>());

    let path = dir.join("sweep_summary.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::parse(&path, e))?;
    for r in &rows {
        w.serialize(r).map_err(|e| Error::parse(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    write_json(&dir.join("sweep_report.json"), &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 2.0]), vec![3.0, 1.0, 2.0]);
        assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 5.0]), vec![1.0, 2.5, 2.5, 4.0]);
    }

    #[test]
    fn spearman_values() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(spearman(&x, &[2.0, 4.0, 8.0, 16.0, 100.0]), Some(1.0));
        assert_eq!(spearman(&x, &[5.0, 4.0, 3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&x, &[1.0; 5]), None);
        // textbook value: d = (0, 1, -1, 0, 0) gives 1 - 6*2/(5*24) = 0.9
        let r = spearman(&x, &[1.0, 3.0, 2.0, 4.0, 5.0]).unwrap();
        assert!((r - 0.9).abs() < 1e-15);
    }

    #[test]
    fn labels() {
        assert_eq!(label(&ScheduleConfig::fixed(0.95)), "f_0.95");
        let s = ScheduleConfig {
            strategy: Strategy::LinearDecrease,
            lambda_min: 0.75,
            lambda_max: 1.0,
        };
        assert_eq!(label(&s), "linear_decrease_0.75_1");
    }
}
