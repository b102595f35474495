use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{DiagnosticsConfig, ObjectiveConfig, ObjectiveKind};
use crate::data::{read_jsonl, validate_dataset, PreferenceTriple};
use crate::datagen::{generate_corpus, split_holdout, CorpusSpec};
use crate::diagnostics::{dataset_diagnostics, sign_statistics, DiagnosticsRecord, SignStatistics};
use crate::error::{Error, Result};
use crate::objectives::f_value;
use crate::policy::{read_checkpoint, write_checkpoint, AnyPolicy, FrozenPolicy, Policy, PolicySpec};

use super::eval::{evaluate, EvalRecord, EvalSummary};
use super::optim::OptimizerConfig;
use super::train::{po_schedule, train_po, train_po_observed, train_sft, MetricsRow, PoSettings, StageConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Generate {
        corpus: CorpusSpec,
        /// Every `holdout_every`-th record goes to the test split.
        #[serde(default = "default_holdout")]
        holdout_every: usize,
    },
    Files {
        train: PathBuf,
        test: PathBuf,
    },
}

fn default_holdout() -> usize {
    11
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSource,
    #[serde(default)]
    pub policy: PolicySpec,
    #[serde(default)]
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    pub sft: StageConfig,
    pub po: StageConfig,
    /// Evaluate on the test split every this many PO steps; 0 disables.
    #[serde(default)]
    pub eval_interval: usize,
    /// Collapse threshold on the mean per-token chosen log-prob. Defaults to
    /// `-2 ln V`.
    #[serde(default)]
    pub collapse_bound: Option<f64>,
    /// Start PO from this checkpoint instead of running SFT.
    #[serde(default)]
    pub sft_checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data: DataSource::Generate {
                corpus: CorpusSpec::default(),
                holdout_every: default_holdout(),
            },
            policy: PolicySpec::default(),
            objective: ObjectiveConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
            sft: StageConfig {
                optimizer: OptimizerConfig::adam(1e-3),
                batch_size: 32,
                epochs: 3,
            },
            po: StageConfig {
                optimizer: OptimizerConfig::adam(1e-4),
                batch_size: 32,
                epochs: 1,
            },
            eval_interval: 0,
            collapse_bound: None,
            sft_checkpoint: None,
        }
    }
}

impl RunConfig {
    /// Larger, sharper corpus and longer training under which the
    /// displacement and f trade-off trends are measurable on the test split.
    pub fn trend() -> Self {
        let base = RunConfig::default();
        RunConfig {
            data: DataSource::Generate {
                corpus: CorpusSpec {
                    num_prompts: 2000,
                    logit_scale: 6.0,
                    ..CorpusSpec::default()
                },
                holdout_every: default_holdout(),
            },
            objective: ObjectiveConfig {
                beta: 2.0,
                ..ObjectiveConfig::default()
            },
            sft: StageConfig {
                optimizer: OptimizerConfig::adam(1e-2),
                epochs: 5,
                ..base.sft
            },
            po: StageConfig {
                optimizer: OptimizerConfig::adam(3e-3),
                epochs: 5,
                ..base.po
            },
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        self.diagnostics.validate()?;
        self.sft.validate()?;
        self.po.validate()?;
        if let DataSource::Generate { corpus, holdout_every } = &self.data {
            corpus.validate()?;
            if *holdout_every < 2 {
                return Err(Error::domain("holdout_every must be at least 2"));
            }
        }
        Ok(())
    }

    pub fn collapse_bound_for(&self, vocab: usize) -> f64 {
        self.collapse_bound.unwrap_or(-2.0 * (vocab as f64).ln())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Train and test splits plus the vocabulary size.
pub struct Splits {
    pub vocab: usize,
    pub train: Vec<PreferenceTriple>,
    pub test: Vec<PreferenceTriple>,
}

fn max_token(records: &[PreferenceTriple]) -> usize {
    records
        .iter()
        .flat_map(|r| r.prompt.tokens().iter().chain(r.chosen.tokens()).chain(r.rejected.tokens()))
        .map(|&t| t as usize + 1)
        .max()
        .unwrap_or(0)
}

pub fn load_splits(config: &RunConfig, vocab_hint: Option<usize>) -> Result<Splits> {
    let (vocab, train, test) = match &config.data {
        DataSource::Generate { corpus, holdout_every } => {
            let (train, test) = split_holdout(generate_corpus(corpus)?, *holdout_every)?;
            (corpus.vocab_size, train, test)
        }
        DataSource::Files { train, test } => {
            let train = read_jsonl(train)?;
            let test = read_jsonl(test)?;
            let vocab = vocab_hint.unwrap_or_else(|| max_token(&train).max(max_token(&test)));
            (vocab, train, test)
        }
    };
    if train.is_empty() || test.is_empty() {
        return Err(Error::domain("train and test splits must both be non-empty"));
    }
    for (name, set) in [("train", &train), ("test", &test)] {
        let report = validate_dataset(set, vocab);
        if !report.passed() {
            return Err(Error::domain(format!("{name} split failed validation: {:?}", report.violations)));
        }
    }
    Ok(Splits { vocab, train, test })
}

/// The SFT checkpoint named in the config, or a fresh SFT run on the chosen
/// responses of the train split.
pub fn reference_policy(config: &RunConfig, splits: &Splits) -> Result<(AnyPolicy<f64>, Vec<f64>)> {
    if let Some(path) = &config.sft_checkpoint {
        let p: AnyPolicy<f64> = read_checkpoint(path)?;
        if p.vocab_size() != splits.vocab {
            return Err(Error::domain(format!(
                "checkpoint vocabulary {} does not match data vocabulary {}",
                p.vocab_size(),
                splits.vocab
            )));
        }
        return Ok((p, Vec::new()));
    }
    let mut p = config.policy.build(splits.vocab)?;
    let losses = train_sft(&mut p, &splits.train, &config.sft, config.seed)?;
    Ok((p, losses))
}

/// Test-split evaluation at one point of the PO run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub omega1: f64,
    pub reward_accuracy: f64,
    pub mean_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub objective: ObjectiveKind,
    pub steps: usize,
    pub final_f: f64,
    pub beta: f64,
    pub gamma: f64,
    pub reference: EvalSummary,
    #[serde(rename = "final")]
    pub final_eval: EvalSummary,
    pub sign_statistics: SignStatistics<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub metrics: Vec<MetricsRow>,
    pub records: Vec<EvalRecord>,
    pub summary: RunSummary,
    pub curve: Vec<CurvePoint>,
    pub diagnostics: Vec<DiagnosticsRecord<f64>>,
    pub policy: AnyPolicy<f64>,
}

/// Preference optimization from `reference`, then final evaluation and
/// per-record diagnostics on the test split.
pub fn run_po(config: &RunConfig, splits: &Splits, reference: &FrozenPolicy<AnyPolicy<f64>>) -> Result<RunArtifacts> {
    config.validate()?;
    let beta = config.objective.beta;
    let gamma = config.diagnostics.gamma;
    let mut policy = reference.thaw();
    let settings = PoSettings {
        stage: &config.po,
        objective: &config.objective,
        seed: config.seed,
        collapse_bound: config.collapse_bound_for(splits.vocab),
    };

    let mut curve = Vec::new();
    let metrics = if config.eval_interval == 0 {
        train_po(&mut policy, reference, &splits.train, settings)?
    } else {
        train_po_with_curve(&mut policy, reference, splits, settings, config.eval_interval, gamma, &mut curve)?
    };

    let steps = metrics.len();
    let final_f = match config.objective.objective_kind {
        ObjectiveKind::DpoShift => f_value(&po_schedule(&config.objective, steps)?, steps.saturating_sub(1))?,
        _ => 1.0,
    };
    let reference_eval = evaluate(reference, reference, &splits.test, beta, gamma)?;
    let final_eval = evaluate(&policy, reference, &splits.test, beta, gamma)?;
    let diagnostics = dataset_diagnostics(&splits.test, &policy, reference, final_f, gamma, config.diagnostics.eta)?;
    let summary = RunSummary {
        objective: config.objective.objective_kind,
        steps,
        final_f,
        beta,
        gamma,
        reference: reference_eval.summary,
        final_eval: final_eval.summary,
        sign_statistics: sign_statistics(&diagnostics)?,
    };
    Ok(RunArtifacts {
        metrics,
        records: final_eval.records,
        summary,
        curve,
        diagnostics,
        policy,
    })
}

fn train_po_with_curve(
    policy: &mut AnyPolicy<f64>,
    reference: &FrozenPolicy<AnyPolicy<f64>>,
    splits: &Splits,
    settings: PoSettings<'_>,
    interval: usize,
    gamma: f64,
    curve: &mut Vec<CurvePoint>,
) -> Result<Vec<MetricsRow>> {
    let beta = settings.objective.beta;
    let mut observer = |step: usize, p: &AnyPolicy<f64>| -> Result<()> {
        if (step + 1) % interval == 0 {
            let e = evaluate(p, reference, &splits.test, beta, gamma)?;
            curve.push(CurvePoint {
                step: step + 1,
                omega1: e.summary.omega1,
                reward_accuracy: e.summary.reward_accuracy,
                mean_margin: e.summary.mean_margin,
            });
        }
        Ok(())
    };
    train_po_observed(policy, reference, &splits.train, settings, &mut observer)
}

fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::parse(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_csv<S: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<S>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, format!("{other:?}")),
    })?;
    r.deserialize().map(|row| row.map_err(|e| Error::parse(path, e))).collect()
}

pub(crate) fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::parse(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn write_json_lines<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut out = String::new();
    for r in rows {
        out += &serde_json::to_string(r).map_err(|e| Error::parse(path, e))?;
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Lay out a run directory.
pub fn write_run(dir: &Path, config: &RunConfig, artifacts: &RunArtifacts, reference: &AnyPolicy<f64>) -> Result<()> {
    let ckpt = dir.join("checkpoints");
    fs::create_dir_all(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
    write_json(&dir.join("config.json"), config)?;
    write_csv(&dir.join("metrics.csv"), &artifacts.metrics)?;
    write_csv(&dir.join("eval_records.csv"), &artifacts.records)?;
    write_json(&dir.join("summary.json"), &artifacts.summary)?;
    write_json_lines(&dir.join("diagnostics.jsonl"), &artifacts.diagnostics)?;
    if !artifacts.curve.is_empty() {
        write_csv(&dir.join("eval_curve.csv"), &artifacts.curve)?;
    }
    write_checkpoint(&ckpt.join("reference.ckpt"), reference)?;
    write_checkpoint(&ckpt.join("final.ckpt"), &artifacts.policy)
}

/// Data, SFT (unless a checkpoint is given), PO and the run directory.
pub fn execute_run(config: &RunConfig, dir: &Path) -> Result<RunArtifacts> {
    config.validate()?;
    let splits = load_splits(config, None)?;
    let (reference, _) = reference_policy(config, &splits)?;
    let frozen = FrozenPolicy::new(reference);
    let artifacts = run_po(config, &splits, &frozen)?;
    write_run(dir, config, &artifacts, frozen.inner())?;
    Ok(artifacts)
}

pub fn read_summary(dir: &Path) -> Result<RunSummary> {
    let path = dir.join("summary.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(&path, e))
}

pub fn read_eval_records(dir: &Path) -> Result<Vec<EvalRecord>> {
    read_csv(&dir.join("eval_records.csv"))
}

pub fn read_metrics(dir: &Path) -> Result<Vec<MetricsRow>> {
    read_csv(&dir.join("metrics.csv"))
}
