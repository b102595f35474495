//! `prefshift` command line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use crate::data::{read_jsonl, write_jsonl, PreferenceTriple};
use crate::datagen::{corpus_similarity, generate_corpus, split_holdout, write_corpus, CorpusSpec};
use crate::diagnostics::{dataset_diagnostics, loglog_slope, measure_gaps, sign_statistics, GapReport};
use crate::error::{Error, Result};
use crate::experiment::{
    execute_run, load_splits, read_eval_records, read_summary, reference_policy, sweep, DataSource, RunConfig,
    SweepReport,
};
use crate::objectives::{ScheduleConfig, Strategy};
use crate::policy::{read_checkpoint, write_checkpoint, AnyPolicy, FrozenPolicy};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "prefshift", version, about = "Shifted-DPO experiments on toy policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic preference corpus.
    GenData(GenDataArgs),
    /// Supervised fine-tuning on chosen responses; writes the reference checkpoint.
    TrainSft(Common),
    /// Preference optimization; writes a run directory.
    TrainPo(Common),
    /// Per-record diagnostics and one-step gap reports over an (f, eta) grid.
    Diagnose(DiagnoseArgs),
    /// Fixed-f and schedule-variant sweep from one SFT checkpoint.
    Sweep(SweepArgs),
    /// Summaries and histogram tables of a corpus, run or sweep directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `po.optimizer.lr=1e-3` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Shortcut for a fixed schedule at this f.
    #[arg(long)]
    f: Option<f64>,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    /// CorpusSpec JSON; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write train.jsonl / test.jsonl holding out every n-th record.
    #[arg(long, default_value_t = 11)]
    holdout_every: usize,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',', default_value = "1e-2,1e-3,1e-4")]
    eta_grid: Vec<f64>,
    /// f values of the grid; `--f` alone gives a single column.
    #[arg(long, value_delimiter = ',', default_value = "0.55,0.75,0.95")]
    f_grid: Vec<f64>,
    /// Policy to diagnose; the SFT reference when omitted.
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long, value_parser = ["train", "test"], default_value = "test")]
    split: String,
    /// Use only the first n records of the split.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',', default_value = "0.55,0.75,0.9,0.95,1.0")]
    f_grid: Vec<f64>,
    /// Schedule variant `strategy:lambda_min[:lambda_max]` (repeatable).
    #[arg(long = "variant")]
    variants: Vec<String>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    dir: PathBuf,
    #[arg(long, default_value_t = 10)]
    bins: usize,
    /// Histogram range `lo,hi`; defaults to the data range widened to integers.
    #[arg(long, allow_hyphen_values = true, value_name = "LO,HI")]
    range: Option<String>,
}

/// Parse `argv` (including the program name), run the command and return the
/// process exit code. Output goes to `out`, errors to stderr.
pub fn run_command_with(argv: &[String], out: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("prefshift: {e}");
            exit_code(&e)
        }
    }
}

pub fn run_command(argv: &[String]) -> i32 {
    run_command_with(argv, &mut std::io::stdout().lock())
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Domain(_) => EXIT_USAGE,
        Error::Io { .. } | Error::Parse { .. } => EXIT_IO,
        Error::Numeric(_) | Error::Collapse { .. } => EXIT_NUMERIC,
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data(a, out),
        Command::TrainSft(a) => train_sft_cmd(a, out),
        Command::TrainPo(a) => train_po_cmd(a, out),
        Command::Diagnose(a) => diagnose(a, out),
        Command::Sweep(a) => sweep_cmd(a, out),
        Command::Report(a) => report(a, out),
    }
}

fn say(out: &mut dyn Write, line: impl AsRef<str>) -> Result<()> {
    writeln!(out, "{}", line.as_ref()).map_err(|e| Error::io("<stdout>", e))
}

/// Apply `a.b.c=value` to a JSON tree. The value is read as JSON when it
/// parses, otherwise as a string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::domain(format!("override `{assignment}` is not KEY=VALUE")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::domain(format!("bad override key `{key}`")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        if !node.is_object() {
            return Err(Error::domain(format!("override `{key}` descends into a non-object")));
        }
        node = node
            .as_object_mut()
            .expect("checked above")
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    match node.as_object_mut() {
        Some(map) => {
            map.insert(parts[parts.len() - 1].to_string(), value);
            Ok(())
        }
        None => Err(Error::domain(format!("override `{key}` descends into a non-object"))),
    }
}

fn load_value<T: Serialize + Default>(path: Option<&Path>) -> Result<Value> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::parse(p, e))
        }
        None => Ok(serde_json::to_value(T::default()).expect("defaults serialize")),
    }
}

fn finish<T: serde::de::DeserializeOwned>(value: Value, origin: Option<&Path>) -> Result<T> {
    serde_json::from_value(value).map_err(|e| match origin {
        Some(p) => Error::parse(p, e),
        None => Error::domain(format!("invalid configuration: {e}")),
    })
}

fn resolve_run_config(c: &Common) -> Result<RunConfig> {
    let mut v = load_value::<RunConfig>(c.config.as_deref())?;
    for s in &c.sets {
        apply_override(&mut v, s)?;
    }
    let mut cfg: RunConfig = finish(v, c.config.as_deref())?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
        if let DataSource::Generate { corpus, .. } = &mut cfg.data {
            corpus.seed = seed;
        }
    }
    if let Some(f) = c.f {
        cfg.objective.schedule = ScheduleConfig::fixed(f);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::parse(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn gen_data(a: GenDataArgs, out: &mut dyn Write) -> Result<()> {
    let mut v = load_value::<CorpusSpec>(a.config.as_deref())?;
    for s in &a.sets {
        apply_override(&mut v, s)?;
    }
    let mut spec: CorpusSpec = finish(v, a.config.as_deref())?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    let records = generate_corpus(&spec)?;
    write_corpus(&a.out, &spec, &records)?;
    let sim = corpus_similarity(&records)?;
    let (train, test) = split_holdout(records, a.holdout_every)?;
    write_jsonl(&a.out.join("train.jsonl"), &train)?;
    write_jsonl(&a.out.join("test.jsonl"), &test)?;
    say(
        out,
        format!(
            "wrote {} records ({} train / {} test) to {}; similarity {sim:.4}",
            train.len() + test.len(),
            train.len(),
            test.len(),
            a.out.display()
        ),
    )
}

fn train_sft_cmd(c: Common, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve_run_config(&c)?;
    let splits = load_splits(&cfg, None)?;
    let (policy, losses) = reference_policy(&cfg, &splits)?;
    create_dir(&c.out)?;
    write_json(&c.out.join("config.json"), &cfg)?;
    let path = c.out.join("sft_losses.csv");
    let mut text = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        text += &format!("{i},{l}\n");
    }
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    let ckpt = c.out.join("sft.ckpt");
    write_checkpoint(&ckpt, &policy)?;
    let o1 = crate::diagnostics::omega1(&policy, &splits.test)?;
    say(out, format!("sft: {} steps, test omega1 {o1:.4}; checkpoint {}", losses.len(), ckpt.display()))
}

fn train_po_cmd(c: Common, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve_run_config(&c)?;
    let a = execute_run(&cfg, &c.out)?;
    let s = &a.summary;
    say(
        out,
        format!(
            "{} steps, final f {}: omega1 {:.4} (reference {:.4}), reward accuracy {:.4}, mean margin {:.4}, perplexity {:.4}",
            s.steps,
            s.final_f,
            s.final_eval.omega1,
            s.reference.omega1,
            s.final_eval.reward_accuracy,
            s.final_eval.mean_margin,
            s.final_eval.perplexity
        ),
    )
}

fn diagnose(a: DiagnoseArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve_run_config(&a.common)?;
    if a.eta_grid.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(Error::domain("eta grid values must be > 0"));
    }
    let splits = load_splits(&cfg, None)?;
    let (reference, _) = reference_policy(&cfg, &splits)?;
    let frozen = FrozenPolicy::new(reference);
    let policy: AnyPolicy<f64> = match &a.policy {
        Some(p) => read_checkpoint(p)?,
        None => frozen.thaw(),
    };
    let mut data: Vec<PreferenceTriple> = if a.split == "train" { splits.train } else { splits.test };
    if let Some(n) = a.limit {
        data.truncate(n);
    }
    let fs_grid = match a.common.f {
        Some(f) => vec![f],
        None => a.f_grid.clone(),
    };
    let dir = &a.common.out;
    create_dir(dir)?;
    write_json(&dir.join("config.json"), &cfg)?;

    let beta = cfg.objective.beta;
    let gamma = cfg.diagnostics.gamma;
    let records = dataset_diagnostics(&data, &policy, &frozen, fs_grid[0], gamma, cfg.diagnostics.eta)?;
    crate::experiment::write_json_lines(&dir.join("diagnostics.jsonl"), &records)?;
    let stats = sign_statistics(&records)?;
    say(
        out,
        format!(
            "{} records at f = {}: frac_u1_positive {:.4}, frac_u2_negative {:.4}, mean_u1 {:.6e}, mean_u2 {:.6e}",
            records.len(),
            fs_grid[0],
            stats.frac_u1_positive,
            stats.frac_u2_negative,
            stats.mean_u1,
            stats.mean_u2
        ),
    )?;

    let mut reports: Vec<GapReport<f64>> = Vec::new();
    say(out, "f,eta,g1_measured,g1_predicted,residual1,g2_measured,g2_predicted,residual2")?;
    for &f in &fs_grid {
        for &eta in &a.eta_grid {
            let r = measure_gaps(&policy, &frozen, &data, beta, f, gamma, eta)?;
            say(
                out,
                format!(
                    "{f},{eta},{:.6e},{:.6e},{:.3e},{:.6e},{:.6e},{:.3e}",
                    r.g1_measured, r.g1_predicted, r.residual1, r.g2_measured, r.g2_predicted, r.residual2
                ),
            )?;
            reports.push(r);
        }
    }
    crate::experiment::write_json_lines(&dir.join("gap_reports.jsonl"), &reports)?;
    if a.eta_grid.len() >= 2 {
        for &f in &fs_grid {
            let cell: Vec<&GapReport<f64>> = reports.iter().filter(|r| r.f == f).collect();
            let etas: Vec<f64> = cell.iter().map(|r| r.eta).collect();
            let fit = |res: Vec<f64>| loglog_slope(&etas, &res).map(|s| format!("{s:.3}")).unwrap_or_else(|_| "n/a".into());
            say(
                out,
                format!(
                    "f = {f}: residual slope g1 {}, g2 {}",
                    fit(cell.iter().map(|r| r.residual1).collect()),
                    fit(cell.iter().map(|r| r.residual2).collect())
                ),
            )?;
        }
    }
    Ok(())
}

/// `strategy:lambda_min[:lambda_max]`.
pub fn parse_variant(s: &str) -> Result<ScheduleConfig> {
    let parts: Vec<&str> = s.split(':').collect();
    let strategy = match parts[0] {
        "fixed" => Strategy::Fixed,
        "linear_increase" => Strategy::LinearIncrease,
        "linear_decrease" => Strategy::LinearDecrease,
        other => return Err(Error::domain(format!("unknown schedule strategy `{other}`"))),
    };
    let num = |i: usize, default: Option<f64>| -> Result<f64> {
        match parts.get(i) {
            Some(t) => t.parse().map_err(|_| Error::domain(format!("bad number `{t}` in variant `{s}`"))),
            None => default.ok_or_else(|| Error::domain(format!("variant `{s}` needs lambda_min"))),
        }
    };
    if parts.len() > 3 {
        return Err(Error::domain(format!("variant `{s}` has too many fields")));
    }
    let cfg = ScheduleConfig {
        strategy,
        lambda_min: num(1, None)?,
        lambda_max: num(2, Some(1.0))?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn sweep_cmd(a: SweepArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve_run_config(&a.common)?;
    let variants = a.variants.iter().map(|v| parse_variant(v)).collect::<Result<Vec<_>>>()?;
    let report = sweep(&cfg, &a.f_grid, &variants, &a.common.out)?;
    print_sweep(&report, out)
}

fn print_sweep(report: &SweepReport, out: &mut dyn Write) -> Result<()> {
    say(out, format!("reference omega1 {:.4}", report.reference_omega1))?;
    say(out, "run,omega1,reward_accuracy,mean_margin,perplexity")?;
    for e in &report.entries {
        match (&e.summary, &e.error) {
            (Some(s), _) => say(
                out,
                format!(
                    "{},{:.4},{:.4},{:.4},{:.4}",
                    e.label, s.final_eval.omega1, s.final_eval.reward_accuracy, s.final_eval.mean_margin, s.final_eval.perplexity
                ),
            )?,
            (None, err) => say(out, format!("{},failed: {}", e.label, err.as_deref().unwrap_or("unknown")))?,
        }
    }
    let show = |r: Option<f64>| r.map(|v| format!("{v:.3}")).unwrap_or_else(|| "n/a".into());
    say(
        out,
        format!(
            "spearman(f, reward_accuracy) {}  spearman(f, omega1) {}",
            show(report.rho_f_reward_accuracy),
            show(report.rho_f_omega1)
        ),
    )
}

/// Counts per equal-width bin plus out-of-range tallies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    /// `(bin_left, bin_right, count)`; the last bin includes its right edge.
    pub bins: Vec<(f64, f64, usize)>,
    pub underflow: usize,
    pub overflow: usize,
    /// NaN inputs.
    pub invalid: usize,
}

pub fn emit_histogram(values: &[f64], bin_count: usize, range: (f64, f64)) -> Result<Histogram> {
    let (lo, hi) = range;
    if bin_count == 0 {
        return Err(Error::domain("histogram needs at least one bin"));
    }
    if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
        return Err(Error::domain(format!("histogram range [{lo}, {hi}] is empty or not finite")));
    }
    let width = (hi - lo) / bin_count as f64;
    let mut bins: Vec<(f64, f64, usize)> = (0..bin_count)
        .map(|i| {
            let left = lo + width * i as f64;
            let right = if i + 1 == bin_count { hi } else { lo + width * (i + 1) as f64 };
            (left, right, 0)
        })
        .collect();
    let (mut underflow, mut overflow, mut invalid) = (0, 0, 0);
    for &v in values {
        if v.is_nan() {
            invalid += 1;
        } else if v < lo {
            underflow += 1;
        } else if v > hi {
            overflow += 1;
        } else {
            // edges are recomputed above, so locate by comparison rather than
            // trusting the floor of (v - lo) / width at bin boundaries
            let mut i = (((v - lo) / width) as usize).min(bin_count - 1);
            while i > 0 && v < bins[i].0 {
                i -= 1;
            }
            while i + 1 < bin_count && v >= bins[i + 1].0 {
                i += 1;
            }
            bins[i].2 += 1;
        }
    }
    Ok(Histogram {
        bins,
        underflow,
        overflow,
        invalid,
    })
}

fn parse_range(s: &str) -> Result<(f64, f64)> {
    let bad = || Error::domain(format!("--range expects LO,HI, got `{s}`"));
    let (lo, hi) = s.split_once(',').ok_or_else(bad)?;
    Ok((lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?))
}

fn auto_range(values: &[f64]) -> (f64, f64) {
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let (lo, hi) = (lo.floor(), hi.ceil());
    if lo == hi {
        (lo, lo + 1.0)
    } else {
        (lo, hi)
    }
}

fn print_histogram(title: &str, values: &[f64], a: &ReportArgs, out: &mut dyn Write) -> Result<()> {
    let range = match &a.range {
        Some(r) => parse_range(r)?,
        None => auto_range(values),
    };
    let h = emit_histogram(values, a.bins, range)?;
    say(out, format!("\n{title} ({} values)", values.len()))?;
    say(out, "bin_left,bin_right,count")?;
    for (l, r, c) in &h.bins {
        say(out, format!("{l:.4},{r:.4},{c}"))?;
    }
    say(out, format!("underflow {}, overflow {}, invalid {}", h.underflow, h.overflow, h.invalid))
}

fn report(a: ReportArgs, out: &mut dyn Write) -> Result<()> {
    let dir = &a.dir;
    if !dir.is_dir() {
        return Err(Error::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "no such directory")));
    }
    if dir.join("sweep_report.json").is_file() {
        let path = dir.join("sweep_report.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let report: SweepReport = serde_json::from_str(&text).map_err(|e| Error::parse(&path, e))?;
        return print_sweep(&report, out);
    }
    if dir.join("summary.json").is_file() {
        let s = read_summary(dir)?;
        let kind = serde_json::to_value(s.objective).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        say(out, format!("objective {kind}, {} steps, final f {}, beta {}", s.steps, s.final_f, s.beta))?;
        say(out, "metric,reference,final")?;
        let rows = [
            ("omega1", s.reference.omega1, s.final_eval.omega1),
            ("mean_rejected_logprob", s.reference.mean_rejected_logprob, s.final_eval.mean_rejected_logprob),
            ("reward_accuracy", s.reference.reward_accuracy, s.final_eval.reward_accuracy),
            ("omega2_smooth", s.reference.omega2_smooth, s.final_eval.omega2_smooth),
            ("mean_margin", s.reference.mean_margin, s.final_eval.mean_margin),
            ("perplexity", s.reference.perplexity, s.final_eval.perplexity),
        ];
        for (name, r, f) in rows {
            say(out, format!("{name},{r:.6},{f:.6}"))?;
        }
        let st = s.sign_statistics;
        say(
            out,
            format!(
                "sign statistics: frac_u1_positive {:.4}, frac_u2_negative {:.4}",
                st.frac_u1_positive, st.frac_u2_negative
            ),
        )?;
        let recs = read_eval_records(dir)?;
        print_histogram("log pi(y_w|x)", &recs.iter().map(|r| r.logp_w).collect::<Vec<_>>(), &a, out)?;
        print_histogram("log pi(y_l|x)", &recs.iter().map(|r| r.logp_l).collect::<Vec<_>>(), &a, out)?;
        return print_histogram("margin", &recs.iter().map(|r| r.margin).collect::<Vec<_>>(), &a, out);
    }
    if dir.join("corpus.jsonl").is_file() {
        let records = read_jsonl(&dir.join("corpus.jsonl"))?;
        let sim = corpus_similarity(&records)?;
        say(out, format!("records {}", records.len()))?;
        say(out, format!("corpus_similarity {sim}"))?;
        let lens: Vec<f64> = records.iter().map(|r| r.chosen.len() as f64).collect();
        return print_histogram("chosen length", &lens, &a, out);
    }
    Err(Error::io(
        dir,
        std::io::Error::new(std::io::ErrorKind::NotFound, "no summary.json, sweep_report.json or corpus.jsonl"),
    ))
}
