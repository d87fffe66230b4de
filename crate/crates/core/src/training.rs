//! Optimizers, the mini-batch training loop, k-fold cross-validation and a
//! central-difference gradient checker.
//!
//! A training run is a pure function of (data, config, seed). Per-example
//! gradients inside a batch may be computed in parallel, but they are
//! always summed in example order, so thread count never changes a bit of
//! the result.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{kfold, LabeledResponse};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalReport, Scorer, Timings};
use crate::hnn::bce_loss;
use crate::numeric::{Matrix, Rng};
use crate::{AspectLabels, AspectScores};

/// A fixed, ordered collection of parameter tensors. Gradients share the
/// implementing type.
pub trait ParamTensors: Clone {
    fn tensors(&self) -> Vec<&Matrix>;
    fn tensors_mut(&mut self) -> Vec<&mut Matrix>;
    fn tensor_names(&self) -> Vec<&'static str>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        z
    }

    fn scale(&mut self, k: f64) {
        for t in self.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// A differentiable multi-aspect model trained with mean BCE.
pub trait NeuralModel: Clone + Send + Sync {
    type Input: Send + Sync;
    type Params: ParamTensors + Send + Sync;

    fn params(&self) -> &Self::Params;
    fn params_mut(&mut self) -> &mut Self::Params;
    fn predict(&self, input: &Self::Input) -> Result<AspectScores>;
    fn loss_and_gradients(&self, input: &Self::Input, labels: &AspectLabels) -> Result<(f64, Self::Params)>;

    fn loss(&self, input: &Self::Input, labels: &AspectLabels) -> Result<f64> {
        Ok(bce_loss(&self.predict(input)?, labels))
    }

    /// One flag per tensor; frozen tensors are never updated.
    fn frozen(&self) -> Vec<bool> {
        vec![false; self.params().tensors().len()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub clip_norm: Option<f64>,
    pub early_stop_patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 16,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            clip_norm: None,
            early_stop_patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.epochs < 1 {
            return bad("epochs: must be >= 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size: must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate: must be > 0, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name}: must lie in (0,1), got {b}"));
            }
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon: must be > 0".into());
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad("clip_norm: must be > 0".into());
            }
        }
        if self.early_stop_patience == Some(0) {
            return bad("early_stop_patience: must be >= 1".into());
        }
        Ok(())
    }
}

fn check_shapes<P: ParamTensors>(params: &P, grads: &P) -> Result<()> {
    for ((name, p), g) in params.tensor_names().into_iter().zip(params.tensors()).zip(grads.tensors()) {
        if p.shape() != g.shape() {
            return Err(Error::Contract(format!(
                "gradient for {name} is {}x{}, parameter is {}x{}",
                g.rows(),
                g.cols(),
                p.rows(),
                p.cols()
            )));
        }
    }
    Ok(())
}

/// `p ← p − lr·g`
pub fn sgd_step<P: ParamTensors>(params: &mut P, grads: &P, lr: f64) -> Result<()> {
    check_shapes(params, grads)?;
    for (p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
        for (x, d) in p.data_mut().iter_mut().zip(g.data()) {
            *x -= lr * d;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new<P: ParamTensors>(params: &P) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.data().len()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// Adam with bias correction.
pub fn adam_step<P: ParamTensors>(params: &mut P, grads: &P, state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    check_shapes(params, grads)?;
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.data().len()).collect();
    let state_sizes: Vec<usize> = state.m.iter().map(Vec::len).collect();
    if sizes != state_sizes || state.v.len() != state.m.len() {
        return Err(Error::Contract("Adam state does not match parameter shapes".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for (((x, &d), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * d;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * d * d;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *x -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
    pub validation_accuracy: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned, when validation tracking
    /// selected them.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl TrainRecord {
    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }
}

/// Batch order for one epoch; depends only on `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mixed = seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    Rng::new(mixed).shuffle(&mut order);
    order
}

fn thresholded_hits(scores: &AspectScores, labels: &AspectLabels) -> usize {
    scores
        .0
        .iter()
        .zip(labels)
        .filter(|(&p, &y)| (p >= 0.5) == (y == 1))
        .count()
}

/// Mean loss and exact-aspect accuracy of `model` on `examples`.
pub fn loss_and_accuracy<M: NeuralModel>(model: &M, examples: &[(M::Input, AspectLabels)]) -> Result<(f64, f64)> {
    let per_item: Vec<(f64, usize)> = examples
        .par_iter()
        .map(|(x, y)| {
            let s = model.predict(x)?;
            Ok((bce_loss(&s, y), thresholded_hits(&s, y)))
        })
        .collect::<Result<_>>()?;
    let n = examples.len().max(1) as f64;
    let loss = per_item.iter().map(|p| p.0).sum::<f64>() / n;
    let hits = per_item.iter().map(|p| p.1).sum::<usize>() as f64;
    Ok((loss, hits / (n * crate::NUM_ASPECTS as f64)))
}

/// Mini-batch training. Batches are re-shuffled every epoch; the last
/// partial batch is kept. Validation metrics are recorded when
/// `validation` is non-empty; with early stopping enabled the parameters of
/// the best validation epoch are restored.
pub fn train<M: NeuralModel>(
    mut model: M,
    train_set: &[(M::Input, AspectLabels)],
    validation: &[(M::Input, AspectLabels)],
    cfg: &TrainConfig,
) -> Result<(M, TrainRecord)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    let frozen = model.frozen();
    let mut adam = AdamState::new(model.params());
    let mut record = TrainRecord::default();
    let mut best: Option<(f64, usize, M::Params)> = None;
    let mut since_best = 0usize;

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let order = epoch_order(train_set.len(), cfg.seed, epoch);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results: Vec<(f64, M::Params)> = batch
                .par_iter()
                .map(|&i| model.loss_and_gradients(&train_set[i].0, &train_set[i].1))
                .collect::<Result<_>>()?;
            let mut grads = model.params().zeros_like();
            let mut batch_loss = 0.0;
            for (loss, g) in &results {
                batch_loss += loss;
                grads.add_assign(g);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    batch: b,
                    message: format!("non-finite loss {batch_loss}"),
                });
            }
            epoch_loss += batch_loss;
            grads.scale(1.0 / batch.len() as f64);
            for (g, &f) in grads.tensors_mut().into_iter().zip(&frozen) {
                if f {
                    g.data_mut().fill(0.0);
                }
            }
            if let Some(clip) = cfg.clip_norm {
                let norm = grads.global_norm();
                if norm > clip {
                    grads.scale(clip / norm);
                }
            }
            match cfg.optimizer {
                Optimizer::Sgd => sgd_step(model.params_mut(), &grads, cfg.learning_rate)?,
                Optimizer::Adam => adam_step(model.params_mut(), &grads, &mut adam, cfg)?,
            }
            if model.params().tensors().iter().any(|t| t.data().iter().any(|v| !v.is_finite())) {
                return Err(Error::Training {
                    epoch,
                    batch: b,
                    message: "parameters became non-finite".into(),
                });
            }
        }

        let (validation_loss, validation_accuracy) = if validation.is_empty() {
            (None, None)
        } else {
            let (l, a) = loss_and_accuracy(&model, validation)?;
            (Some(l), Some(a))
        };
        record.epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / train_set.len() as f64,
            validation_loss,
            validation_accuracy,
            seconds: started.elapsed().as_secs_f64(),
        });

        if let (Some(patience), Some(vl)) = (cfg.early_stop_patience, validation_loss) {
            if best.as_ref().is_none_or(|(b, _, _)| vl < *b) {
                best = Some((vl, epoch, model.params().clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    record.stopped_early = true;
                    break;
                }
            }
        }
    }
    if let Some((_, epoch, params)) = best {
        *model.params_mut() = params;
        record.best_epoch = Some(epoch);
    }
    Ok((model, record))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Worst relative error per tensor, by tensor name.
    pub per_tensor: Vec<(String, f64)>,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of the loss, one
/// scalar parameter at a time. Frozen tensors are skipped.
pub fn grad_check_against<M: NeuralModel>(
    model: &M,
    input: &M::Input,
    labels: &AspectLabels,
    analytic: &M::Params,
    h: f64,
) -> Result<GradCheckReport> {
    check_shapes(model.params(), analytic)?;
    let frozen = model.frozen();
    let names = model.params().tensor_names();
    let sizes: Vec<usize> = model.params().tensors().iter().map(|t| t.data().len()).collect();
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        per_tensor: Vec::new(),
        checked: 0,
    };
    for (ti, &size) in sizes.iter().enumerate() {
        if frozen[ti] {
            continue;
        }
        let mut worst: f64 = 0.0;
        for j in 0..size {
            let orig = model.params().tensors()[ti].data()[j];
            probe.params_mut().tensors_mut()[ti].data_mut()[j] = orig + h;
            let up = probe.loss(input, labels)?;
            probe.params_mut().tensors_mut()[ti].data_mut()[j] = orig - h;
            let down = probe.loss(input, labels)?;
            probe.params_mut().tensors_mut()[ti].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.tensors()[ti].data()[j];
            worst = worst.max(relative_error(a, numeric));
            report.checked += 1;
        }
        report.max_rel_error = report.max_rel_error.max(worst);
        report.per_tensor.push((names[ti].to_string(), worst));
    }
    Ok(report)
}

pub fn grad_check<M: NeuralModel>(model: &M, input: &M::Input, labels: &AspectLabels, h: f64) -> Result<GradCheckReport> {
    let (_, analytic) = model.loss_and_gradients(input, labels)?;
    grad_check_against(model, input, labels, &analytic, h)
}

/// k-fold cross-validation. Fold `i` trains a fresh model with seed
/// `seed + i` and is evaluated on its held-out items. Folds run in
/// parallel; results come back in fold order.
pub fn cross_validate<S, F>(
    factory: F,
    data: &[LabeledResponse],
    k: usize,
    seed: u64,
    model_name: &str,
) -> Result<Vec<EvalReport>>
where
    S: Scorer,
    F: Fn(&[LabeledResponse], u64) -> Result<S> + Sync,
{
    let folds = kfold(data, k, seed)?;
    folds
        .par_iter()
        .enumerate()
        .map(|(i, fold)| {
            let started = Instant::now();
            let model = factory(&fold.train, seed.wrapping_add(i as u64))?;
            let train_seconds = started.elapsed().as_secs_f64();
            let started = Instant::now();
            let mut report = evaluate(&model, &fold.test, &format!("{model_name}/fold{i}"))?;
            let infer = started.elapsed().as_secs_f64();
            report.timings = Some(Timings {
                train_seconds,
                inference_seconds_per_1k: infer * 1000.0 / fold.test.len() as f64,
            });
            Ok(report)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Clone, PartialEq)]
    struct Flat(Matrix);

    impl ParamTensors for Flat {
        fn tensors(&self) -> Vec<&Matrix> {
            vec![&self.0]
        }
        fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
            vec![&mut self.0]
        }
        fn tensor_names(&self) -> Vec<&'static str> {
            vec!["x"]
        }
    }

    fn flat(v: &[f64]) -> Flat {
        Flat(Matrix::from_vec(1, v.len(), v.to_vec()).unwrap())
    }

    #[test]
    fn sgd_cases() {
        let mut p = flat(&[0.3, -0.2]);
        sgd_step(&mut p, &flat(&[0.0, 0.0]), 0.5).unwrap();
        assert_eq!(p, flat(&[0.3, -0.2]));

        let mut p = flat(&[0.0, 0.0]);
        sgd_step(&mut p, &flat(&[1.0, -2.0]), 1.0).unwrap();
        assert_eq!(p, flat(&[-1.0, 2.0]));

        let g = flat(&[0.25, -0.75]);
        let mut a = flat(&[1.0, 2.0]);
        sgd_step(&mut a, &g, 0.5).unwrap();
        sgd_step(&mut a, &g, 0.5).unwrap();
        let mut b = flat(&[1.0, 2.0]);
        sgd_step(&mut b, &g, 1.0).unwrap();
        assert_eq!(a, b);

        assert!(matches!(sgd_step(&mut a, &flat(&[1.0]), 1.0), Err(Error::Contract(_))));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let cfg = TrainConfig::default();
        let mut p = flat(&[0.0, 0.0, 0.0]);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &flat(&[3.0, -0.01, 200.0]), &mut st, &cfg).unwrap();
        assert_eq!(st.step, 1);
        let expect = [-1e-3, 1e-3, -1e-3];
        for (x, e) in p.0.data().iter().zip(expect) {
            assert!((x - e).abs() < 1e-8, "{x}");
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let cfg = TrainConfig::default();
        let mut p = flat(&[0.7, -1.1]);
        let mut st = AdamState::new(&p);
        for _ in 0..20 {
            adam_step(&mut p, &flat(&[0.0, 0.0]), &mut st, &cfg).unwrap();
        }
        assert_eq!(p, flat(&[0.7, -1.1]));
        let mut wrong = AdamState::new(&flat(&[0.0]));
        assert!(adam_step(&mut p, &flat(&[0.0, 0.0]), &mut wrong, &cfg).is_err());
    }

    #[test]
    fn adam_matches_hand_expansion() {
        // Gradients g1, g2, g3 on one coordinate, expanded by hand:
        // m_t = (1-β1) Σ β1^(t-k) g_k, v_t = (1-β2) Σ β2^(t-k) g_k².
        let cfg = TrainConfig {
            learning_rate: 0.01,
            ..TrainConfig::default()
        };
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.01);
        let gs = [0.5, -0.25, 1.5];
        let mut p = flat(&[1.0]);
        let mut st = AdamState::new(&p);
        let mut expected = 1.0;
        for t in 1..=3usize {
            adam_step(&mut p, &flat(&[gs[t - 1]]), &mut st, &cfg).unwrap();
            let m: f64 = (1..=t).map(|k| (1.0 - b1) * b1.powi((t - k) as i32) * gs[k - 1]).sum();
            let v: f64 = (1..=t).map(|k| (1.0 - b2) * b2.powi((t - k) as i32) * gs[k - 1] * gs[k - 1]).sum();
            let m_hat = m / (1.0 - b1.powi(t as i32));
            let v_hat = v / (1.0 - b2.powi(t as i32));
            expected -= lr * m_hat / (v_hat.sqrt() + eps);
            assert!((p.0.data()[0] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let c = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(c.validate().unwrap_err().to_string().contains("epochs"));
        let c = TrainConfig { beta2: 1.0, ..TrainConfig::default() };
        assert!(c.validate().is_err());
        let c = TrainConfig { learning_rate: 0.0, ..TrainConfig::default() };
        assert!(c.validate().is_err());
        let parsed: TrainConfig = serde_json::from_str(r#"{"epochs": 7, "optimizer": "sgd"}"#).unwrap();
        assert_eq!(parsed.epochs, 7);
        assert_eq!(parsed.optimizer, Optimizer::Sgd);
        assert_eq!(parsed.batch_size, 16);
    }

    #[test]
    fn epoch_order_is_pure() {
        assert_eq!(epoch_order(30, 4, 2), epoch_order(30, 4, 2));
        assert_ne!(epoch_order(30, 4, 2), epoch_order(30, 4, 3));
        let mut o = epoch_order(30, 4, 2);
        o.sort();
        assert_eq!(o, (0..30).collect::<Vec<_>>());
    }

    #[test]
    fn relative_error_is_guarded() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-10, 0.0) - 1e-2).abs() < 1e-15);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }
}
