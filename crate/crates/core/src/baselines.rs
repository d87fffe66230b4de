//! Bag-of-words comparison models, each predicting all five aspects:
//! multinomial Naive Bayes and L2-regularized logistic regression (one
//! independent binary model per aspect), and a one-hidden-layer MLP with
//! five sigmoid outputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hnn::bce_loss;
use crate::numeric::{dot, glorot_bound, sigmoid_scalar, uniform_init, Matrix, Rng};
use crate::text::BowVector;
use crate::training::{train, NeuralModel, Optimizer, ParamTensors, TrainConfig, TrainRecord};
use crate::{AspectLabels, AspectScores, NUM_ASPECTS};

pub type BowExample = (BowVector, AspectLabels);

fn check_train_set(train: &[BowExample]) -> Result<usize> {
    let first = train
        .first()
        .ok_or_else(|| Error::Contract("training set is empty".into()))?;
    let dim = first.0.counts.len();
    if train.iter().any(|(x, _)| x.counts.len() != dim) {
        return Err(Error::Contract("bag-of-words vectors differ in length".into()));
    }
    Ok(dim)
}

fn check_dim(expected: usize, x: &BowVector) -> Result<()> {
    if x.counts.len() != expected {
        return Err(Error::Shape {
            op: "predict",
            left: format!("features {}", x.counts.len()),
            right: format!("model vocabulary {expected}"),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectNaiveBayes {
    /// `ln P(y=0)`, `ln P(y=1)`
    pub log_prior: [f64; 2],
    /// Per class, `ln P(token | y)` over the whole vocabulary.
    pub log_likelihood: [Vec<f64>; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesModel {
    pub alpha: f64,
    pub aspects: Vec<AspectNaiveBayes>,
}

/// Multinomial NB per aspect. Token likelihoods use additive `alpha`
/// smoothing; class priors use +1 smoothing on the class counts so an
/// aspect with a single observed class still yields a valid model.
pub fn nb_fit(train: &[BowExample], alpha: f64) -> Result<NaiveBayesModel> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Contract(format!("alpha must be > 0, got {alpha}")));
    }
    let dim = check_train_set(train)?;
    let n = train.len() as f64;
    let aspects = (0..NUM_ASPECTS)
        .map(|a| {
            let mut class_docs = [0.0f64; 2];
            let mut counts = [vec![0.0f64; dim], vec![0.0f64; dim]];
            for (x, y) in train {
                let c = y[a] as usize;
                class_docs[c] += 1.0;
                for (acc, &v) in counts[c].iter_mut().zip(&x.counts) {
                    *acc += v as f64;
                }
            }
            let log_prior = [
                ((class_docs[0] + 1.0) / (n + 2.0)).ln(),
                ((class_docs[1] + 1.0) / (n + 2.0)).ln(),
            ];
            let log_likelihood = counts.map(|c| {
                let total: f64 = c.iter().sum::<f64>() + alpha * dim as f64;
                c.iter().map(|&v| ((v + alpha) / total).ln()).collect()
            });
            AspectNaiveBayes {
                log_prior,
                log_likelihood,
            }
        })
        .collect();
    Ok(NaiveBayesModel { alpha, aspects })
}

impl NaiveBayesModel {
    pub fn vocab_size(&self) -> usize {
        self.aspects.first().map_or(0, |a| a.log_likelihood[0].len())
    }

    pub fn predict(&self, x: &BowVector) -> Result<AspectScores> {
        check_dim(self.vocab_size(), x)?;
        let mut probs = [0.0; NUM_ASPECTS];
        for (p, m) in probs.iter_mut().zip(&self.aspects) {
            let joint = |c: usize| {
                m.log_prior[c]
                    + x.counts
                        .iter()
                        .zip(&m.log_likelihood[c])
                        .filter(|(&k, _)| k > 0)
                        .map(|(&k, &l)| k as f64 * l)
                        .sum::<f64>()
            };
            let (j0, j1) = (joint(0), joint(1));
            let max = j0.max(j1);
            let norm = max + ((j0 - max).exp() + (j1 - max).exp()).ln();
            *p = (j1 - norm).exp();
        }
        Ok(AspectScores(probs))
    }
}

pub fn nb_predict(m: &NaiveBayesModel, x: &BowVector) -> Result<AspectScores> {
    m.predict(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogRegConfig {
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            lambda: 1e-4,
            learning_rate: 0.1,
            epochs: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub lambda: f64,
    /// `5 × vocab`, one weight row per aspect.
    pub weights: Matrix,
    /// `5 × 1`
    pub bias: Matrix,
}

impl LogRegModel {
    pub fn zeros(vocab_size: usize, lambda: f64) -> Self {
        LogRegModel {
            lambda,
            weights: Matrix::zeros(NUM_ASPECTS, vocab_size),
            bias: Matrix::zeros(NUM_ASPECTS, 1),
        }
    }

    fn predict_dense(&self, x: &[f64]) -> AspectScores {
        let mut probs = [0.0; NUM_ASPECTS];
        for (a, p) in probs.iter_mut().enumerate() {
            *p = sigmoid_scalar(dot(self.weights.row(a), x) + self.bias.data()[a]);
        }
        AspectScores(probs)
    }

    pub fn predict(&self, x: &BowVector) -> Result<AspectScores> {
        check_dim(self.weights.cols(), x)?;
        Ok(self.predict_dense(&x.to_dense()))
    }
}

/// Full-batch gradient descent on per-aspect mean BCE plus `λ/2·‖w‖²`
/// (the bias is not penalized). Weights start from a small seeded uniform
/// draw.
pub fn logreg_fit(train: &[BowExample], cfg: &LogRegConfig, seed: u64) -> Result<LogRegModel> {
    if !(cfg.learning_rate > 0.0) {
        return Err(Error::Contract("learning_rate must be > 0".into()));
    }
    if !(cfg.lambda >= 0.0) {
        return Err(Error::Contract("lambda must be >= 0".into()));
    }
    let dim = check_train_set(train)?;
    let xs: Vec<Vec<f64>> = train.iter().map(|(x, _)| x.to_dense()).collect();
    let n = train.len() as f64;
    let mut m = LogRegModel::zeros(dim, cfg.lambda);
    m.weights = uniform_init(&mut Rng::new(seed), NUM_ASPECTS, dim, 1e-3)?;

    for epoch in 0..cfg.epochs {
        let mut gw = Matrix::zeros(NUM_ASPECTS, dim);
        let mut gb = [0.0; NUM_ASPECTS];
        let mut loss = 0.0;
        for (x, (_, y)) in xs.iter().zip(train) {
            let s = m.predict_dense(x);
            loss += bce_loss(&s, y) * NUM_ASPECTS as f64;
            let residual: Vec<f64> = s.0.iter().zip(y).map(|(&p, &t)| (p - t as f64) / n).collect();
            gw.add_outer(&residual, x);
            for (g, r) in gb.iter_mut().zip(&residual) {
                *g += r;
            }
        }
        loss = loss / n + 0.5 * cfg.lambda * m.weights.data().iter().map(|w| w * w).sum::<f64>();
        if !loss.is_finite() {
            return Err(Error::Training {
                epoch,
                batch: 0,
                message: format!("non-finite loss {loss}"),
            });
        }
        for (w, g) in m.weights.data_mut().iter_mut().zip(gw.data()) {
            *w -= cfg.learning_rate * (g + cfg.lambda * *w);
        }
        for (b, g) in m.bias.data_mut().iter_mut().zip(gb) {
            *b -= cfg.learning_rate * g;
        }
    }
    if m.weights.data().iter().chain(m.bias.data()).any(|v| !v.is_finite()) {
        return Err(Error::Training {
            epoch: cfg.epochs.saturating_sub(1),
            batch: 0,
            message: "weights became non-finite".into(),
        });
    }
    Ok(m)
}

pub fn logreg_predict(m: &LogRegModel, x: &BowVector) -> Result<AspectScores> {
    m.predict(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: 32,
            learning_rate: 0.5,
            epochs: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    /// `hidden × vocab`
    pub w1: Matrix,
    pub b1: Matrix,
    /// `5 × hidden`
    pub w2: Matrix,
    pub b2: Matrix,
}

impl ParamTensors for MlpParams {
    fn tensors(&self) -> Vec<&Matrix> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    fn tensor_names(&self) -> Vec<&'static str> {
        vec!["w1", "b1", "w2", "b2"]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub params: MlpParams,
}

impl MlpModel {
    pub fn init(vocab_size: usize, hidden: usize, seed: u64) -> Result<Self> {
        if vocab_size == 0 || hidden == 0 {
            return Err(Error::Contract("MLP dimensions must be positive".into()));
        }
        let mut rng = Rng::new(seed);
        Ok(MlpModel {
            params: MlpParams {
                w1: uniform_init(&mut rng, hidden, vocab_size, glorot_bound(vocab_size, hidden))?,
                b1: Matrix::zeros(hidden, 1),
                w2: uniform_init(&mut rng, NUM_ASPECTS, hidden, glorot_bound(hidden, NUM_ASPECTS))?,
                b2: Matrix::zeros(NUM_ASPECTS, 1),
            },
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.params.w1.cols()
    }

    fn hidden(&self, x: &[f64]) -> Vec<f64> {
        let mut a = self.params.b1.data().to_vec();
        self.params.w1.mul_vec_add(x, &mut a);
        a.iter_mut().for_each(|v| *v = v.tanh());
        a
    }

    fn output(&self, hidden: &[f64]) -> AspectScores {
        let mut z = self.params.b2.data().to_vec();
        self.params.w2.mul_vec_add(hidden, &mut z);
        let mut probs = [0.0; NUM_ASPECTS];
        for (p, v) in probs.iter_mut().zip(z) {
            *p = sigmoid_scalar(v);
        }
        AspectScores(probs)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.vocab_size() {
            return Err(Error::Shape {
                op: "mlp",
                left: format!("features {}", x.len()),
                right: format!("model vocabulary {}", self.vocab_size()),
            });
        }
        Ok(())
    }
}

impl NeuralModel for MlpModel {
    /// Dense bag-of-words counts.
    type Input = Vec<f64>;
    type Params = MlpParams;

    fn params(&self) -> &MlpParams {
        &self.params
    }

    fn params_mut(&mut self) -> &mut MlpParams {
        &mut self.params
    }

    fn predict(&self, x: &Vec<f64>) -> Result<AspectScores> {
        self.check_input(x)?;
        Ok(self.output(&self.hidden(x)))
    }

    fn loss_and_gradients(&self, x: &Vec<f64>, labels: &AspectLabels) -> Result<(f64, MlpParams)> {
        self.check_input(x)?;
        let hidden = self.hidden(x);
        let scores = self.output(&hidden);
        let dz: Vec<f64> = scores
            .0
            .iter()
            .zip(labels)
            .map(|(&p, &y)| (p - y as f64) / NUM_ASPECTS as f64)
            .collect();
        let mut g = self.params.zeros_like();
        g.w2.add_outer(&dz, &hidden);
        g.b2.data_mut().copy_from_slice(&dz);
        let mut dh = vec![0.0; hidden.len()];
        self.params.w2.tr_mul_vec_add(&dz, &mut dh);
        let da: Vec<f64> = dh.iter().zip(&hidden).map(|(d, h)| d * (1.0 - h * h)).collect();
        g.w1.add_outer(&da, x);
        g.b1.data_mut().copy_from_slice(&da);
        Ok((bce_loss(&scores, labels), g))
    }
}

/// Full-batch gradient descent on mean BCE.
pub fn mlp_fit(train_set: &[BowExample], cfg: &MlpConfig, seed: u64) -> Result<(MlpModel, TrainRecord)> {
    let dim = check_train_set(train_set)?;
    let model = MlpModel::init(dim, cfg.hidden, seed)?;
    let examples: Vec<(Vec<f64>, AspectLabels)> = train_set.iter().map(|(x, y)| (x.to_dense(), *y)).collect();
    let tc = TrainConfig {
        epochs: cfg.epochs,
        batch_size: examples.len(),
        learning_rate: cfg.learning_rate,
        optimizer: Optimizer::Sgd,
        seed,
        ..TrainConfig::default()
    };
    train(model, &examples, &[], &tc)
}

pub fn mlp_predict(m: &MlpModel, x: &BowVector) -> Result<AspectScores> {
    m.predict(&x.to_dense())
}
