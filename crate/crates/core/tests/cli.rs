use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use prefshift::experiment::{DataSource, RunConfig};
use prefshift::datagen::CorpusSpec;

fn prefshift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prefshift")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = prefshift(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn tiny_config(dir: &Path) -> String {
    let mut cfg = RunConfig::default();
    cfg.data = DataSource::Generate {
        corpus: CorpusSpec {
            num_prompts: 6,
            pairs_per_prompt: 11,
            response_len: 8,
            ..CorpusSpec::default()
        },
        holdout_every: 11,
    };
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(snapshot(&p));
        } else {
            out.push((p.display().to_string(), fs::read(&p).unwrap()));
        }
    }
    out.sort();
    out
}

#[test]
fn every_verb_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let d = |n: &str| tmp.path().join(n).to_str().unwrap().to_string();
    let cfg = tiny_config(tmp.path());

    ok(&["gen-data", "--set", "num_prompts=5", "--out", &d("corpus")]);
    for f in ["corpus.jsonl", "corpus_spec.json", "train.jsonl", "test.jsonl"] {
        assert!(tmp.path().join("corpus").join(f).is_file(), "{f}");
    }

    ok(&["train-sft", "--config", &cfg, "--out", &d("sft")]);
    let ckpt = d("sft/sft.ckpt");
    assert!(Path::new(&ckpt).is_file());

    ok(&["train-po", "--config", &cfg, "--f", "0.8", "--set", "objective.objective_kind=dpo_shift", "--set", &format!("sft_checkpoint=\"{ckpt}\""), "--out", &d("run")]);
    for f in ["config.json", "metrics.csv", "eval_records.csv", "summary.json", "diagnostics.jsonl", "checkpoints/final.ckpt"] {
        assert!(tmp.path().join("run").join(f).is_file(), "{f}");
    }
    let metrics = fs::read_to_string(tmp.path().join("run/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next().unwrap(), "step,loss,f_value,mean_margin");

    let diag = ok(&["diagnose", "--config", &cfg, "--f-grid", "0.75", "--eta-grid", "1e-2,1e-3", "--limit", "10", "--out", &d("diag")]);
    assert!(diag.contains("residual slope"), "{diag}");

    ok(&["sweep", "--config", &cfg, "--f-grid", "0.9,1", "--variant", "linear_decrease:0.9", "--out", &d("sweep")]);
    let summary = fs::read_to_string(tmp.path().join("sweep/sweep_summary.csv")).unwrap();
    assert_eq!(summary.lines().next().unwrap(), "f,omega1,reward_accuracy,mean_margin,perplexity");
    assert!(tmp.path().join("sweep/linear_decrease_0.9_1/metrics.csv").is_file());

    for dir in ["run", "sweep", "corpus"] {
        let before = snapshot(&tmp.path().join(dir));
        let text = ok(&["report", &d(dir), "--bins", "4"]);
        assert!(!text.is_empty());
        assert_eq!(before, snapshot(&tmp.path().join(dir)), "report modified {dir}");
    }
    let text = ok(&["report", &d("run"), "--bins", "3", "--range=-200,0"]);
    assert!(text.contains("bin_left,bin_right,count"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let out = out.to_str().unwrap();
    let cfg = tiny_config(tmp.path());
    let code = |args: &[&str]| prefshift(args).status.code().unwrap();

    assert_eq!(code(&["nonsense"]), 2);
    assert_eq!(code(&["train-po", "--config", &cfg, "--set", "objective.beta=-1", "--out", out]), 2);
    assert_eq!(code(&["train-po", "--config", &cfg, "--f", "0", "--out", out]), 2);
    assert_eq!(code(&["report", tmp.path().to_str().unwrap(), "--range=1,0"]), 3);
    assert_eq!(code(&["train-po", "--config", "/does/not/exist.json", "--out", out]), 3);
    fs::write(tmp.path().join("broken.json"), "{").unwrap();
    assert_eq!(code(&["train-po", "--config", tmp.path().join("broken.json").to_str().unwrap(), "--out", out]), 3);
    // a collapse bound above any attainable log-prob trips on the first step
    assert_eq!(code(&["train-po", "--config", &cfg, "--set", "collapse_bound=0.5", "--out", out]), 4);
}

#[test]
fn inverted_histogram_range_is_a_domain_error() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("c");
    ok(&["gen-data", "--set", "num_prompts=2", "--out", d.to_str().unwrap()]);
    let out = prefshift(&["report", d.to_str().unwrap(), "--range=5,1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn shipped_trend_config_matches_preset() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/trend.json");
    assert_eq!(RunConfig::load(&path).unwrap(), RunConfig::trend());
}
