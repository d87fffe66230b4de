use std::path::{Path, PathBuf};

use hnn_scoring::corpus::{fingerprint, generate_synthetic, load_dataset, to_jsonl, SyntheticSpec};
use hnn_scoring::evaluation::{benchmark, compare_models, evaluate, render_bench, threshold, AccuracyTable, Scorer};
use hnn_scoring::pipeline::{fit, split_for, ModelKind, RunConfig, ScoringModel};
use hnn_scoring::training::TrainRecord;
use hnn_scoring::Error;
use serde::Serialize;
use serde_json::json;

use crate::manifest::{read_config, ManifestBuilder};
use crate::{data_path, emit, write_output, CliError, Cli, Command, GlobalOpts};

const BUNDLED_TABLE: &str = include_str!("../fixtures/table2.json");

pub fn run(cli: Cli) -> Result<(), CliError> {
    let g = &cli.global;
    match &cli.command {
        Command::Synth { spec, n } => synth(g, spec.as_deref(), *n),
        Command::Train {
            model,
            data,
            split,
            stratify,
        } => {
            let mut cfg = run_config(g)?;
            if split.is_some() {
                cfg.split = *split;
            }
            cfg.stratify |= *stratify;
            train(g, *model, data, &cfg)
        }
        Command::Eval { model, data } => eval(g, model, data),
        Command::Score { model, text, file } => score(g, model, text.as_deref(), file.as_deref()),
        Command::Bench {
            models,
            data,
            n,
            repetitions,
        } => bench(g, models, data.as_deref(), *n, *repetitions),
        Command::Stats { fixture, baseline } => stats(g, fixture.as_deref(), baseline),
    }
}

fn run_config(g: &GlobalOpts) -> Result<RunConfig, CliError> {
    let mut cfg = match &g.config {
        Some(path) => {
            let value = read_config(path)?;
            let cfg: RunConfig = serde_json::from_value(value)
                .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
            cfg
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Writes `value` as JSON to `--out` when given; prints `human` (or the
/// JSON with `--json`) to stdout otherwise.
fn deliver(g: &GlobalOpts, value: &impl Serialize, human: &str) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(value).map_err(Error::from)? + "\n";
    if let Some(out) = &g.out {
        write_output(out, json.as_bytes(), g.force)?;
        if !g.json {
            emit(None, human, false)?;
        }
        Ok(())
    } else if g.json {
        emit(None, &json, false)
    } else {
        emit(None, human, false)
    }
}

fn synth(g: &GlobalOpts, spec_path: Option<&Path>, n: Option<usize>) -> Result<(), CliError> {
    let mut spec = match (spec_path, n) {
        (Some(path), _) => serde_json::from_value::<SyntheticSpec>(read_config(path)?)
            .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?,
        (None, Some(n)) => SyntheticSpec::new(n, g.seed.unwrap_or(0)),
        (None, None) => return Err(CliError::Usage("synth needs --spec <file> or --n <count>".into())),
    };
    if let Some(n) = n {
        spec.n = n;
    }
    if let Some(seed) = g.seed {
        spec.seed = seed;
    }
    let mut manifest = ManifestBuilder::start("synth");
    let data = generate_synthetic(&spec)?;
    let fp = fingerprint(&data);
    emit(g.out.as_deref(), &to_jsonl(&data), g.force)?;
    manifest.config(&spec)?.seed(spec.seed).dataset(fp.clone());
    if let Some(out) = &g.out {
        manifest.artifact(out);
        if g.json {
            emit(None, &(json!({"items": data.len(), "fingerprint": fp, "path": out}).to_string() + "\n"), false)?;
        }
    }
    manifest.results(&json!({ "items": data.len() }))?;
    manifest.finish(g.out.as_deref(), g.force)
}

fn epoch_lines(record: &TrainRecord) -> String {
    let total = record.epochs.len();
    record
        .epochs
        .iter()
        .map(|e| {
            let mut line = format!("epoch {}/{total} train_loss {:.6}", e.epoch + 1, e.train_loss);
            if let (Some(l), Some(a)) = (e.validation_loss, e.validation_accuracy) {
                line.push_str(&format!(" val_loss {l:.6} val_acc {a:.4}"));
            }
            line.push_str(&format!(" ({:.3} s)\n", e.seconds));
            line
        })
        .collect()
}

fn train(g: &GlobalOpts, kind: ModelKind, data: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    let out = g
        .out
        .as_deref()
        .ok_or_else(|| CliError::Usage("train needs --out <model file>".into()))?;
    if out.exists() && !g.force {
        return Err(CliError::Exists(out.to_path_buf()));
    }
    let mut manifest = ManifestBuilder::start("train");
    let dataset = load_dataset(data_path(data))?;
    let split = split_for(kind, &dataset, cfg)?;
    let (model, record) = fit(kind, &split, cfg)?;
    let test_report = evaluate(&model, &split.test, kind.name())?;
    write_output(out, model.to_json()?.as_bytes(), g.force)?;

    let (n_train, n_val, n_test) = split.sizes();
    let results = json!({
        "model_path": out,
        "model_kind": kind,
        "split": split.describe(),
        "sizes": {"train": n_train, "validation": n_val, "test": n_test},
        "record": record,
        "test_report": test_report,
    });
    if g.json {
        emit(None, &(serde_json::to_string_pretty(&results).map_err(Error::from)? + "\n"), false)?;
    } else {
        if let Some(r) = &record {
            eprint!("{}", epoch_lines(r));
        }
        let text = format!("split: {}\n{}", split.describe(), test_report.render());
        emit(None, &text, false)?;
    }
    manifest
        .config(cfg)?
        .seed(cfg.train.seed)
        .dataset(fingerprint(&dataset))
        .split(split.describe())
        .artifact(out)
        .results(&results)?;
    manifest.finish(Some(out), g.force)
}

fn eval(g: &GlobalOpts, model_path: &Path, data: &Path) -> Result<(), CliError> {
    let mut manifest = ManifestBuilder::start("eval");
    let model = ScoringModel::load(model_path)?;
    let dataset = load_dataset(data_path(data))?;
    let report = evaluate(&model, &dataset, model.kind().name())?;
    deliver(g, &report, &report.render())?;
    manifest
        .config(&json!({ "model": model_path, "data": data }))?
        .dataset(report.dataset_fingerprint.clone())
        .results(&report)?;
    if let Some(out) = &g.out {
        manifest.artifact(out);
    }
    manifest.finish(g.out.as_deref(), g.force)
}

fn score(g: &GlobalOpts, model_path: &Path, text: Option<&str>, file: Option<&Path>) -> Result<(), CliError> {
    let mut manifest = ManifestBuilder::start("score");
    let model = ScoringModel::load(model_path)?;
    let owned;
    let texts: Vec<&str> = match (text, file) {
        (Some(t), _) => vec![t],
        (None, Some(path)) => {
            let path = data_path(path);
            owned = std::fs::read_to_string(&path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
            owned.lines().collect()
        }
        (None, None) => return Err(CliError::Usage("score needs --text or --file".into())),
    };
    let scores = model.score_texts(&texts)?;
    let mut lines = String::new();
    for (i, s) in scores.iter().enumerate() {
        let labels = threshold(s);
        if g.json {
            lines.push_str(&json!({"index": i, "probs": s, "labels": labels}).to_string());
        } else {
            let probs: Vec<String> = s.0.iter().map(|p| format!("{p:.4}")).collect();
            let bits: Vec<String> = labels.iter().map(u8::to_string).collect();
            lines.push_str(&format!("{i}\t{}\t{}", probs.join(" "), bits.join(" ")));
        }
        lines.push('\n');
    }
    emit(g.out.as_deref(), &lines, g.force)?;
    manifest
        .config(&json!({ "model": model_path, "text": text, "file": file }))?
        .results(&json!({ "responses": scores.len() }))?;
    if let Some(out) = &g.out {
        manifest.artifact(out);
    }
    manifest.finish(g.out.as_deref(), g.force)
}

fn bench(g: &GlobalOpts, kinds: &[ModelKind], data: Option<&Path>, n: Option<usize>, repetitions: usize) -> Result<(), CliError> {
    if kinds.is_empty() {
        return Err(CliError::Usage("bench needs at least one model kind".into()));
    }
    if repetitions < 3 {
        return Err(CliError::Usage(format!("--repetitions must be at least 3, got {repetitions}")));
    }
    let cfg = run_config(g)?;
    let mut manifest = ManifestBuilder::start("bench");
    let dataset = match data {
        Some(path) => load_dataset(data_path(path))?,
        None => generate_synthetic(&SyntheticSpec::new(n.unwrap_or(1000), cfg.train.seed))?,
    };
    let reports = kinds
        .iter()
        .map(|&k| benchmark(k, &dataset, &cfg, repetitions))
        .collect::<Result<Vec<_>, _>>()?;
    deliver(g, &reports, &render_bench(&reports))?;
    manifest
        .config(&json!({ "run": cfg, "models": kinds, "data": data, "n": dataset.len(), "repetitions": repetitions }))?
        .seed(cfg.train.seed)
        .dataset(fingerprint(&dataset))
        .results(&reports)?;
    if let Some(out) = &g.out {
        manifest.artifact(out);
    }
    manifest.finish(g.out.as_deref(), g.force)
}

fn stats(g: &GlobalOpts, fixture: Option<&Path>, baseline: &str) -> Result<(), CliError> {
    let mut manifest = ManifestBuilder::start("stats");
    let table = match fixture {
        Some(path) => AccuracyTable::load(path)?,
        None => {
            let t: AccuracyTable = serde_json::from_str(BUNDLED_TABLE).map_err(Error::from)?;
            t.validate()?;
            t
        }
    };
    let comparison = compare_models(&table.to_reports()?, baseline)?;
    let human = format!("{}\n{}", table.render(), comparison.render());
    let value = json!({ "table": table, "comparison": comparison });
    deliver(g, &value, &human)?;
    let source: PathBuf = fixture.map_or_else(|| PathBuf::from("<bundled>"), Path::to_path_buf);
    manifest
        .config(&json!({ "fixture": source, "baseline": baseline }))?
        .results(&comparison)?;
    if let Some(out) = &g.out {
        manifest.artifact(out);
    }
    manifest.finish(g.out.as_deref(), g.force)
}
