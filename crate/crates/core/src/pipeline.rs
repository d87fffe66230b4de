//! End-to-end wiring: run configuration, fitting any model kind on a split,
//! scoring raw texts, and the on-disk model format.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{logreg_fit, mlp_fit, mlp_predict, nb_fit, BowExample, LogRegConfig, LogRegModel, MlpConfig, MlpModel, NaiveBayesModel};
use crate::corpus::{split, DataSplit, LabeledResponse, SplitScheme};
use crate::error::{Error, Result};
use crate::evaluation::{EvalReport, Scorer};
use crate::hnn::{load_pretrained_embeddings, HnnDims, HnnModel};
use crate::text::{bow_features, build_vocab, encode, TextConfig, TokenSequence, Vocabulary};
use crate::training::{cross_validate, train, NeuralModel, TrainConfig, TrainRecord};
use crate::{AspectLabels, AspectScores};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Hnn,
    Nb,
    LogReg,
    Mlp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Hnn, ModelKind::Nb, ModelKind::LogReg, ModelKind::Mlp];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Hnn => "hnn",
            ModelKind::Nb => "nb",
            ModelKind::LogReg => "logreg",
            ModelKind::Mlp => "mlp",
        }
    }

    /// Gradient-trained models get a validation set; the others do not.
    pub fn default_split(self) -> SplitScheme {
        match self {
            ModelKind::Hnn | ModelKind::Mlp => SplitScheme::Deep,
            ModelKind::Nb | ModelKind::LogReg => SplitScheme::Shallow,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown model kind {s:?} (expected hnn, nb, logreg or mlp)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HnnConfig {
    pub d_emb: usize,
    pub d_hid: usize,
    pub d_att: usize,
    /// Text-format vectors; loaded rows are frozen during training.
    pub pretrained_embeddings: Option<PathBuf>,
}

impl Default for HnnConfig {
    fn default() -> Self {
        let d = HnnDims::new(2);
        HnnConfig {
            d_emb: d.d_emb,
            d_hid: d.d_hid,
            d_att: d.d_att,
            pretrained_embeddings: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NbConfig {
    pub alpha: f64,
}

impl Default for NbConfig {
    fn default() -> Self {
        NbConfig { alpha: 1.0 }
    }
}

/// Everything that determines a training run besides the data.
/// `train.seed` is the master seed for splitting and initialization.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub text: TextConfig,
    pub train: TrainConfig,
    pub hnn: HnnConfig,
    pub nb: NbConfig,
    pub logreg: LogRegConfig,
    pub mlp: MlpConfig,
    /// Overrides the kind's default split scheme.
    pub split: Option<SplitScheme>,
    pub stratify: bool,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let positive = [
            ("text.cap_bytes", self.text.cap_bytes),
            ("text.max_len", self.text.max_len),
            ("text.min_freq", self.text.min_freq),
            ("hnn.d_emb", self.hnn.d_emb),
            ("hnn.d_hid", self.hnn.d_hid),
            ("hnn.d_att", self.hnn.d_att),
            ("logreg.epochs", self.logreg.epochs),
            ("mlp.hidden", self.mlp.hidden),
            ("mlp.epochs", self.mlp.epochs),
        ];
        if let Some((field, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Validation(format!("{field} must be positive")));
        }
        let rates = [
            ("nb.alpha", self.nb.alpha),
            ("logreg.learning_rate", self.logreg.learning_rate),
            ("mlp.learning_rate", self.mlp.learning_rate),
        ];
        if let Some((field, v)) = rates.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Validation(format!("{field} must be a positive number, got {v}")));
        }
        if !(self.logreg.lambda.is_finite() && self.logreg.lambda >= 0.0) {
            return Err(Error::Validation(format!("logreg.lambda must be >= 0, got {}", self.logreg.lambda)));
        }
        Ok(())
    }

    pub fn from_json(content: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(content).map_err(|e| Error::Validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&content)
    }

    pub fn scheme_for(&self, kind: ModelKind) -> SplitScheme {
        self.split.unwrap_or(kind.default_split())
    }
}

/// The split `fit` would use for `kind` under `cfg`.
pub fn split_for(kind: ModelKind, data: &[LabeledResponse], cfg: &RunConfig) -> Result<DataSplit> {
    split(data, cfg.scheme_for(kind), cfg.train.seed, cfg.stratify)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model_kind", rename_all = "lowercase")]
pub enum ModelBody {
    Hnn(HnnModel),
    Nb(NaiveBayesModel),
    LogReg(LogRegModel),
    Mlp(MlpModel),
}

impl ModelBody {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelBody::Hnn(_) => ModelKind::Hnn,
            ModelBody::Nb(_) => ModelKind::Nb,
            ModelBody::LogReg(_) => ModelKind::LogReg,
            ModelBody::Mlp(_) => ModelKind::Mlp,
        }
    }

    fn input_size(&self) -> usize {
        match self {
            ModelBody::Hnn(m) => m.dims.vocab_size,
            ModelBody::Nb(m) => m.vocab_size(),
            ModelBody::LogReg(m) => m.weights.cols(),
            ModelBody::Mlp(m) => m.vocab_size(),
        }
    }
}

/// A trained model together with the preprocessing it was trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringModel {
    pub format_version: u32,
    pub text: TextConfig,
    pub vocab: Vocabulary,
    pub vocab_fingerprint: String,
    #[serde(flatten)]
    pub body: ModelBody,
}

impl ScoringModel {
    pub fn new(text: TextConfig, vocab: Vocabulary, body: ModelBody) -> Result<Self> {
        let m = ScoringModel {
            format_version: MODEL_FORMAT_VERSION,
            text,
            vocab_fingerprint: vocab.fingerprint(),
            vocab,
            body,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn kind(&self) -> ModelKind {
        self.body.kind()
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "model format version {} (supported: {MODEL_FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.vocab.fingerprint() != self.vocab_fingerprint {
            return Err(Error::Format("vocabulary does not match its recorded fingerprint".into()));
        }
        if self.body.input_size() != self.vocab.len() {
            return Err(Error::Format(format!(
                "{} model expects a vocabulary of {}, file has {}",
                self.kind(),
                self.body.input_size(),
                self.vocab.len()
            )));
        }
        if let ModelBody::Hnn(m) = &self.body {
            m.validate_shapes()?;
            if m.dims.max_len != self.text.max_len {
                return Err(Error::Format(format!(
                    "model max_len {} differs from text.max_len {}",
                    m.dims.max_len, self.text.max_len
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(content: &str) -> Result<Self> {
        let m: ScoringModel = serde_json::from_str(content).map_err(|e| Error::Format(format!("model file: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&content)
    }

    pub fn score(&self, text: &str) -> Result<AspectScores> {
        let tokens = self.text.tokens(text);
        match &self.body {
            ModelBody::Hnn(m) => m.predict(&encode(&tokens, &self.vocab, self.text.max_len)),
            ModelBody::Nb(m) => m.predict(&bow_features(&tokens, &self.vocab)),
            ModelBody::LogReg(m) => m.predict(&bow_features(&tokens, &self.vocab)),
            ModelBody::Mlp(m) => mlp_predict(m, &bow_features(&tokens, &self.vocab)),
        }
    }
}

impl Scorer for ScoringModel {
    fn score_texts(&self, texts: &[&str]) -> Result<Vec<AspectScores>> {
        texts.par_iter().map(|t| self.score(t)).collect()
    }
}

fn sequences(data: &[LabeledResponse], text: &TextConfig, vocab: &Vocabulary) -> Vec<(TokenSequence, AspectLabels)> {
    data.iter()
        .map(|r| (encode(&text.tokens(&r.text), vocab, text.max_len), r.labels))
        .collect()
}

fn bags(data: &[LabeledResponse], text: &TextConfig, vocab: &Vocabulary) -> Vec<BowExample> {
    data.iter()
        .map(|r| (bow_features(&text.tokens(&r.text), vocab), r.labels))
        .collect()
}

/// Trains `kind` on `train_set`, using `validation` for early stopping
/// where the kind supports it. The vocabulary is built from the training
/// texts only.
pub fn fit_on(
    kind: ModelKind,
    train_set: &[LabeledResponse],
    validation: &[LabeledResponse],
    cfg: &RunConfig,
    seed: u64,
) -> Result<(ScoringModel, Option<TrainRecord>)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Contract("empty training set".into()));
    }
    let text = cfg.text;
    let tokens: Vec<Vec<String>> = train_set.iter().map(|r| text.tokens(&r.text)).collect();
    let vocab = build_vocab(&tokens, text.min_freq)?;
    let (body, record) = match kind {
        ModelKind::Hnn => {
            let dims = HnnDims {
                vocab_size: vocab.len(),
                d_emb: cfg.hnn.d_emb,
                d_hid: cfg.hnn.d_hid,
                d_att: cfg.hnn.d_att,
                max_len: text.max_len,
            };
            let mut model = HnnModel::init(dims, seed)?;
            if let Some(path) = &cfg.hnn.pretrained_embeddings {
                model.set_embeddings(load_pretrained_embeddings(path, &vocab, Some(dims.d_emb), seed)?)?;
            }
            let tc = TrainConfig { seed, ..cfg.train.clone() };
            let (model, record) = train(
                model,
                &sequences(train_set, &text, &vocab),
                &sequences(validation, &text, &vocab),
                &tc,
            )?;
            (ModelBody::Hnn(model), Some(record))
        }
        ModelKind::Nb => (ModelBody::Nb(nb_fit(&bags(train_set, &text, &vocab), cfg.nb.alpha)?), None),
        ModelKind::LogReg => (
            ModelBody::LogReg(logreg_fit(&bags(train_set, &text, &vocab), &cfg.logreg, seed)?),
            None,
        ),
        ModelKind::Mlp => {
            let (model, record) = mlp_fit(&bags(train_set, &text, &vocab), &cfg.mlp, seed)?;
            (ModelBody::Mlp(model), Some(record))
        }
    };
    Ok((ScoringModel::new(text, vocab, body)?, record))
}

pub fn fit(kind: ModelKind, data: &DataSplit, cfg: &RunConfig) -> Result<(ScoringModel, Option<TrainRecord>)> {
    fit_on(kind, &data.train, &data.validation, cfg, cfg.train.seed)
}

/// k-fold cross-validation of `kind`, one report per fold.
pub fn cross_validate_kind(kind: ModelKind, data: &[LabeledResponse], k: usize, cfg: &RunConfig) -> Result<Vec<EvalReport>> {
    cross_validate(
        |train_set, seed| fit_on(kind, train_set, &[], cfg, seed).map(|(m, _)| m),
        data,
        k,
        cfg.train.seed,
        kind.name(),
    )
}
