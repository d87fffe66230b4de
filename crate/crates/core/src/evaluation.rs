//! Accuracy and agreement metrics, summary statistics, the one-tailed
//! paired t-test used to compare models across aspects, and the
//! wall-clock benchmark harness.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::corpus::{fingerprint, LabeledResponse};
use crate::error::{Error, Result};
use crate::pipeline::{fit, split_for, ModelKind, RunConfig};
use crate::{AspectLabels, AspectScores, NUM_ASPECTS};

/// Comparisons with `p < SIGNIFICANCE_LEVEL` are flagged significant.
pub const SIGNIFICANCE_LEVEL: f64 = 0.10;

/// 1 iff the probability is at least 0.5.
pub fn threshold(scores: &AspectScores) -> AspectLabels {
    scores.0.map(|p| (p >= 0.5) as u8)
}

pub fn per_aspect_accuracy(preds: &[AspectLabels], labels: &[AspectLabels]) -> Result<[f64; NUM_ASPECTS]> {
    if preds.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Contract("accuracy of an empty test set".into()));
    }
    let mut hits = [0usize; NUM_ASPECTS];
    for (p, y) in preds.iter().zip(labels) {
        for k in 0..NUM_ASPECTS {
            hits[k] += (p[k] == y[k]) as usize;
        }
    }
    Ok(hits.map(|h| h as f64 / preds.len() as f64))
}

/// Arithmetic mean and sample standard deviation (n − 1 denominator).
pub fn mean_sd(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::Contract(format!(
            "standard deviation needs at least 2 values, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub mean_difference: f64,
    pub sd_difference: f64,
    pub t: f64,
    pub df: usize,
    /// One-tailed, for the alternative `mean(a) > mean(b)`.
    pub p_value: f64,
}

pub fn paired_t_one_tailed(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!("paired samples of length {} and {}", a.len(), b.len())));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (mean, sd) = mean_sd(&d)?;
    if sd == 0.0 {
        return Err(Error::DegenerateTest(
            "differences have zero variance".into(),
        ));
    }
    let n = d.len();
    let t = mean / (sd / (n as f64).sqrt());
    Ok(TTestResult {
        mean_difference: mean,
        sd_difference: sd,
        t,
        df: n - 1,
        p_value: student_t_upper_tail(t, n - 1),
    })
}

/// `P(T > t)` for Student's t with `df` degrees of freedom, through the
/// regularized incomplete beta function:
/// `P(T > t) = ½ · I_{df/(df+t²)}(df/2, ½)` for `t ≥ 0`.
pub fn student_t_upper_tail(t: f64, df: usize) -> f64 {
    assert!(df >= 1, "df must be >= 1");
    if t.is_nan() {
        return f64::NAN;
    }
    if t == 0.0 {
        return 0.5;
    }
    let nu = df as f64;
    let x = nu / (nu + t * t);
    let half_tail = 0.5 * statrs::function::beta::beta_reg(nu / 2.0, 0.5, x);
    if t > 0.0 {
        half_tail
    } else {
        1.0 - half_tail
    }
}

/// Chance-corrected agreement between two raters over the same items.
pub fn cohen_kappa(r1: &[i64], r2: &[i64]) -> Result<f64> {
    if r1.len() != r2.len() || r1.is_empty() {
        return Err(Error::Contract(format!(
            "kappa needs two equal, non-empty rating lists (got {} and {})",
            r1.len(),
            r2.len()
        )));
    }
    let n = r1.len() as f64;
    let categories: BTreeSet<i64> = r1.iter().chain(r2).copied().collect();
    let p_o = r1.iter().zip(r2).filter(|(a, b)| a == b).count() as f64 / n;
    let p_e: f64 = categories
        .iter()
        .map(|c| {
            let a = r1.iter().filter(|&&x| x == *c).count() as f64 / n;
            let b = r2.iter().filter(|&&x| x == *c).count() as f64 / n;
            a * b
        })
        .sum();
    if p_e == 1.0 {
        return Ok(1.0);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub train_seconds: f64,
    pub inference_seconds_per_1k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub n_items: usize,
    /// Fractions in [0, 1].
    pub per_aspect_accuracy: [f64; NUM_ASPECTS],
    pub mean_accuracy: f64,
    pub sd_accuracy: f64,
    /// Machine-vs-human agreement per aspect; absent for fixture reports.
    pub per_aspect_kappa: Option<[f64; NUM_ASPECTS]>,
    pub timings: Option<Timings>,
    pub dataset_fingerprint: String,
}

impl EvalReport {
    pub fn from_accuracies(model: &str, acc: [f64; NUM_ASPECTS], n_items: usize, fingerprint: String) -> Result<Self> {
        if let Some(bad) = acc.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::Validation(format!("{model}: accuracy {bad} outside [0,1]")));
        }
        let (mean, sd) = mean_sd(&acc)?;
        Ok(EvalReport {
            model: model.to_string(),
            n_items,
            per_aspect_accuracy: acc,
            mean_accuracy: mean,
            sd_accuracy: sd,
            per_aspect_kappa: None,
            timings: None,
            dataset_fingerprint: fingerprint,
        })
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "model: {}  (n = {}, data {})", self.model, self.n_items, &self.dataset_fingerprint[..self.dataset_fingerprint.len().min(12)]);
        let _ = writeln!(out, "{:<16}{:>12}{:>10}", "Scoring Aspect", "Accuracy %", "Kappa");
        for k in 0..NUM_ASPECTS {
            let kappa = self
                .per_aspect_kappa
                .map_or_else(|| "-".to_string(), |v| format!("{:.3}", v[k]));
            let _ = writeln!(out, "{:<16}{:>12.2}{:>10}", k + 1, 100.0 * self.per_aspect_accuracy[k], kappa);
        }
        let _ = writeln!(out, "{:<16}{:>12.2}", "M", 100.0 * self.mean_accuracy);
        let _ = writeln!(out, "{:<16}{:>12.2}", "SD", 100.0 * self.sd_accuracy);
        if let Some(t) = self.timings {
            let _ = writeln!(out, "train {:.4} s, inference {:.4} s / 1k responses", t.train_seconds, t.inference_seconds_per_1k);
        }
        out
    }
}

/// Anything that can score raw response texts.
pub trait Scorer: Send + Sync {
    fn score_texts(&self, texts: &[&str]) -> Result<Vec<AspectScores>>;
}

pub fn evaluate<S: Scorer + ?Sized>(scorer: &S, data: &[LabeledResponse], model_name: &str) -> Result<EvalReport> {
    let texts: Vec<&str> = data.iter().map(|r| r.text.as_str()).collect();
    let preds: Vec<AspectLabels> = scorer.score_texts(&texts)?.iter().map(threshold).collect();
    let labels: Vec<AspectLabels> = data.iter().map(|r| r.labels).collect();
    let acc = per_aspect_accuracy(&preds, &labels)?;
    let mut report = EvalReport::from_accuracies(model_name, acc, data.len(), fingerprint(data))?;
    let mut kappa = [0.0; NUM_ASPECTS];
    for (k, slot) in kappa.iter_mut().enumerate() {
        let machine: Vec<i64> = preds.iter().map(|p| p[k] as i64).collect();
        let human: Vec<i64> = labels.iter().map(|y| y[k] as i64).collect();
        *slot = cohen_kappa(&machine, &human)?;
    }
    report.per_aspect_kappa = Some(kappa);
    Ok(report)
}

/// Per-aspect accuracy table in percent, one column per model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub aspects: Vec<u32>,
    pub models: IndexMap<String, Vec<f64>>,
}

impl AccuracyTable {
    pub fn validate(&self) -> Result<()> {
        if self.aspects.len() != NUM_ASPECTS {
            return Err(Error::Validation(format!(
                "aspects: expected {NUM_ASPECTS} entries, got {}",
                self.aspects.len()
            )));
        }
        if self.models.len() < 2 {
            return Err(Error::Validation("models: need at least two columns".into()));
        }
        for (name, col) in &self.models {
            if col.len() != NUM_ASPECTS {
                return Err(Error::Validation(format!(
                    "models.{name}: expected {NUM_ASPECTS} accuracies, got {}",
                    col.len()
                )));
            }
            if let Some(v) = col.iter().find(|v| !(0.0..=100.0).contains(*v)) {
                return Err(Error::Validation(format!("models.{name}: {v} is not a percentage")));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table: AccuracyTable = serde_json::from_str(&content)?;
        table.validate()?;
        Ok(table)
    }

    pub fn to_reports(&self) -> Result<Vec<EvalReport>> {
        self.validate()?;
        self.models
            .iter()
            .map(|(name, col)| {
                let mut acc = [0.0; NUM_ASPECTS];
                for (a, v) in acc.iter_mut().zip(col) {
                    *a = v / 100.0;
                }
                EvalReport::from_accuracies(name, acc, 0, "fixture".into())
            })
            .collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<16}", "Scoring Aspect");
        for name in self.models.keys() {
            let _ = write!(out, "{:>12}", format!("{name} (%)"));
        }
        out.push('\n');
        for (k, aspect) in self.aspects.iter().enumerate() {
            let _ = write!(out, "{aspect:<16}");
            for col in self.models.values() {
                let _ = write!(out, "{:>12.2}", col[k]);
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub mean: f64,
    pub sd: f64,
    pub mean_percent: f64,
    pub sd_percent: f64,
    /// Paired test of baseline vs this model; `None` for the baseline row
    /// and when the test was degenerate (see `error`).
    pub test: Option<TTestResult>,
    pub significant: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: String,
    pub alpha: f64,
    pub rows: Vec<ComparisonRow>,
}

/// Mean/SD for every report, plus a one-tailed paired test of the
/// baseline's per-aspect accuracies against each other model's. A model
/// sharing the baseline's name is compared too, which surfaces the
/// degenerate-test error in its row.
pub fn compare_models(reports: &[EvalReport], baseline_name: &str) -> Result<Comparison> {
    if reports.len() < 2 {
        return Err(Error::Contract("comparison needs at least two reports".into()));
    }
    let baseline = reports
        .iter()
        .find(|r| r.model == baseline_name)
        .ok_or_else(|| Error::Validation(format!("baseline {baseline_name:?} not among the reports")))?;
    let mut rows = Vec::with_capacity(reports.len());
    let mut baseline_seen = false;
    for r in reports {
        let is_baseline_row = r.model == baseline_name && !baseline_seen;
        baseline_seen |= is_baseline_row;
        let (test, error) = if is_baseline_row {
            (None, None)
        } else {
            match paired_t_one_tailed(&baseline.per_aspect_accuracy, &r.per_aspect_accuracy) {
                Ok(t) => (Some(t), None),
                Err(e) => (None, Some(e.to_string())),
            }
        };
        rows.push(ComparisonRow {
            model: r.model.clone(),
            mean: r.mean_accuracy,
            sd: r.sd_accuracy,
            mean_percent: 100.0 * r.mean_accuracy,
            sd_percent: 100.0 * r.sd_accuracy,
            significant: test.is_some_and(|t| t.p_value < SIGNIFICANCE_LEVEL),
            test,
            error,
        });
    }
    Ok(Comparison {
        baseline: baseline_name.to_string(),
        alpha: SIGNIFICANCE_LEVEL,
        rows,
    })
}

impl Comparison {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10}{:>9}{:>8}{:>9}{:>5}{:>9}  {}",
            "Model", "M (%)", "SD (%)", "t", "df", "p", format!("p < {:.2}", self.alpha)
        );
        for r in &self.rows {
            let _ = write!(out, "{:<10}{:>9.2}{:>8.2}", r.model, r.mean_percent, r.sd_percent);
            match (&r.test, &r.error) {
                (Some(t), _) => {
                    let _ = writeln!(
                        out,
                        "{:>9.3}{:>5}{:>9.4}  {}",
                        t.t,
                        t.df,
                        t.p_value,
                        if r.significant { "yes" } else { "no" }
                    );
                }
                (None, Some(e)) => {
                    let _ = writeln!(out, "  {e}");
                }
                (None, None) => {
                    let _ = writeln!(out, "  (baseline)");
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub model_kind: ModelKind,
    pub repetitions: usize,
    pub split: String,
    pub train_items: usize,
    pub inference_items: usize,
    pub train_seconds: Vec<f64>,
    pub inference_seconds_per_1k: Vec<f64>,
    pub median: Timings,
    pub dataset_fingerprint: String,
    pub machine: String,
}

pub fn machine_descriptor() -> String {
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!("{}-{} cpus={cpus}", std::env::consts::OS, std::env::consts::ARCH)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Wall-clock seconds to score `texts` `passes` times in a row.
pub fn time_inference<S: Scorer + ?Sized>(scorer: &S, texts: &[&str], passes: usize) -> Result<f64> {
    let started = Instant::now();
    for _ in 0..passes {
        std::hint::black_box(scorer.score_texts(texts)?);
    }
    Ok(started.elapsed().as_secs_f64())
}

/// Median training time on the kind's train split, and median inference
/// time per 1000 responses on its test split. Runs on a single worker
/// thread and expects exclusive use of the machine while it runs.
pub fn benchmark(kind: ModelKind, data: &[LabeledResponse], cfg: &RunConfig, repetitions: usize) -> Result<BenchReport> {
    if repetitions < 3 {
        return Err(Error::Contract(format!("benchmark needs at least 3 repetitions, got {repetitions}")));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Contract(format!("cannot start benchmark thread: {e}")))?;
    pool.install(|| benchmark_on_current_thread(kind, data, cfg, repetitions))
}

fn benchmark_on_current_thread(kind: ModelKind, data: &[LabeledResponse], cfg: &RunConfig, repetitions: usize) -> Result<BenchReport> {
    let split = split_for(kind, data, cfg)?;
    let texts: Vec<&str> = split.test.iter().map(|r| r.text.as_str()).collect();
    if texts.is_empty() {
        return Err(Error::Contract("benchmark split has an empty test set".into()));
    }
    let mut train_seconds = Vec::with_capacity(repetitions);
    let mut infer = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let started = Instant::now();
        let (model, _) = fit(kind, &split, cfg)?;
        train_seconds.push(started.elapsed().as_secs_f64());
        let secs = time_inference(&model, &texts, 1)?;
        infer.push(secs * 1000.0 / texts.len() as f64);
    }
    Ok(BenchReport {
        model_kind: kind,
        repetitions,
        split: split.describe(),
        train_items: split.train.len(),
        inference_items: texts.len(),
        median: Timings {
            train_seconds: median(&train_seconds),
            inference_seconds_per_1k: median(&infer),
        },
        train_seconds,
        inference_seconds_per_1k: infer,
        dataset_fingerprint: fingerprint(data),
        machine: machine_descriptor(),
    })
}

pub fn render_bench(reports: &[BenchReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<8}{:>6}{:>8}{:>16}{:>22}", "Model", "reps", "train n", "train s (med)", "infer s/1k (med)");
    for r in reports {
        let _ = writeln!(
            out,
            "{:<8}{:>6}{:>8}{:>16.4}{:>22.4}",
            r.model_kind.name(),
            r.repetitions,
            r.train_items,
            r.median.train_seconds,
            r.median.inference_seconds_per_1k
        );
    }
    if let Some(r) = reports.first() {
        let _ = writeln!(out, "machine: {}  data: {}", r.machine, &r.dataset_fingerprint[..12]);
    }
    out
}
