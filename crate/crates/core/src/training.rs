//! AdamW with a linear warmup/decay schedule and global-norm clipping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::check_threshold;
use crate::corpus::{Document, FactIndex};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_predictions, score_corpus, tune_threshold, IgnPolicy, ScoredCorpus};
use crate::model::{Model, PreparedDoc};
use crate::numerics::{Param, Tensor2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Documents per optimizer step.
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_ratio: f64,
    pub clip_norm: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Decision threshold on pair probabilities.
    pub threshold: f64,
    /// Replace `threshold` by the best dev-F1 value on a 0.05 grid.
    pub tune_threshold: bool,
    /// NA pairs kept per positive pair during training; all pairs when unset.
    pub negative_ratio: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::docred()
    }
}

impl TrainConfig {
    /// Hyper-parameters used for DocRED.
    pub fn docred() -> Self {
        Self {
            learning_rate: 5e-5,
            batch_size: 8,
            epochs: 60,
            warmup_ratio: 0.1,
            clip_norm: 1.0,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 42,
            threshold: 0.5,
            tune_threshold: false,
            negative_ratio: None,
        }
    }

    /// Hyper-parameters used for DWIE.
    pub fn dwie() -> Self {
        Self {
            learning_rate: 3e-5,
            batch_size: 4,
            epochs: 40,
            ..Self::docred()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "docred" => Some(Self::docred()),
            "dwie" => Some(Self::dwie()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: &str| {
            Err(Error::Config {
                field: field.into(),
                message: message.into(),
            })
        };
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate", "must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return bad("warmup_ratio", "must lie in [0, 1)");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm", "must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay", "must be non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1", "betas must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon", "must be positive");
        }
        if let Some(r) = self.negative_ratio {
            if !(r >= 0.0) {
                return bad("negative_ratio", "must be non-negative");
            }
        }
        check_threshold(self.threshold)
    }
}

/// Linear warmup from 0 to `peak` over the first `warmup_ratio · total`
/// steps, then linear decay to 0 at `total`.
pub fn lr_at(step: usize, total_steps: usize, peak: f64, warmup_ratio: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Config {
            field: "total_steps".into(),
            message: "must be positive".into(),
        });
    }
    let step = step.min(total_steps) as f64;
    let total = total_steps as f64;
    let warmup = warmup_ratio * total;
    Ok(if step < warmup {
        peak * step / warmup
    } else {
        peak * (total - step) / (total - warmup)
    })
}

/// Global L2 norm over every gradient.
pub fn global_grad_norm(params: &[&mut Param]) -> f64 {
    params.iter().map(|p| p.grad.squared_norm()).sum::<f64>().sqrt()
}

/// Rescales all gradients so their global norm is at most `max_norm`.
/// Returns the factor applied (1 when nothing changed).
pub fn clip_gradients(params: &mut [&mut Param], max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::Config {
            field: "clip_norm".into(),
            message: "must be positive".into(),
        });
    }
    let norm = global_grad_norm(params);
    if !norm.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    if norm <= max_norm {
        return Ok(1.0);
    }
    let scale = max_norm / norm;
    for p in params.iter_mut() {
        p.grad.data_mut().iter_mut().for_each(|g| *g *= scale);
    }
    Ok(scale)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl From<&TrainConfig> for AdamWConfig {
    fn from(c: &TrainConfig) -> Self {
        Self {
            beta1: c.beta1,
            beta2: c.beta2,
            epsilon: c.epsilon,
            weight_decay: c.weight_decay,
        }
    }
}

/// First and second moments for every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first: Vec<Tensor2>,
    pub second: Vec<Tensor2>,
}

impl OptimizerState {
    pub fn new(params: &[&mut Param]) -> Self {
        let zeros = || params.iter().map(|p| Tensor2::zeros(p.value.rows(), p.value.cols())).collect();
        Self {
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }
}

/// One decoupled-weight-decay Adam update:
/// `p ← p − lr · m̂ / (√v̂ + ε) − lr · wd · p`.
pub fn adamw_step(params: &mut [&mut Param], state: &mut OptimizerState, lr: f64, config: &AdamWConfig) -> Result<()> {
    if state.first.len() != params.len() {
        return Err(crate::error::shape(
            "adamw_step",
            format!("{} moment tensors for {} params", state.first.len(), params.len()),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - config.beta1.powi(t);
    let bias2 = 1.0 - config.beta2.powi(t);
    for ((p, m), v) in params.iter_mut().zip(&mut state.first).zip(&mut state.second) {
        let grads = p.grad.data().to_vec();
        let values = p.value.data_mut();
        for (k, g) in grads.into_iter().enumerate() {
            let mk = &mut m.data_mut()[k];
            *mk = config.beta1 * *mk + (1.0 - config.beta1) * g;
            let m_hat = *mk / bias1;
            let vk = &mut v.data_mut()[k];
            *vk = config.beta2 * *vk + (1.0 - config.beta2) * g * g;
            let v_hat = *vk / bias2;
            let x = values[k];
            values[k] = x - lr * m_hat / (v_hat.sqrt() + config.epsilon) - lr * config.weight_decay * x;
        }
    }
    Ok(())
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_f1: Option<f64>,
    pub dev_ign_f1: Option<f64>,
    pub lr: f64,
}

/// Held-out documents for model selection.
pub struct DevSet<'a> {
    pub docs: &'a [Document],
    pub prepared: &'a [PreparedDoc],
    pub fact_index: &'a FactIndex,
}

pub struct TrainOutcome {
    /// Parameters of the best epoch on dev F1, or of the last epoch without
    /// a dev set.
    pub model: Model,
    pub threshold: f64,
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
}

/// Pairs to train on: all ordered pairs, or every positive pair plus a
/// seeded sample of NA pairs.
fn training_pairs(doc: &PreparedDoc, ratio: Option<f64>, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let all = doc.all_pairs();
    let Some(ratio) = ratio else {
        return all;
    };
    let (mut positive, mut negative): (Vec<_>, Vec<_>) = all.into_iter().partition(|p| doc.labels.contains_key(p));
    let keep = ((ratio * positive.len().max(1) as f64).ceil() as usize).min(negative.len());
    negative.shuffle(rng);
    negative.truncate(keep);
    positive.extend(negative);
    positive.sort_unstable();
    positive
}

/// Runs the full optimization loop. Deterministic for a fixed seed: the
/// document order of every epoch comes from one seeded generator and
/// gradients are accumulated serially. Update `k` (counting from 1) uses
/// `lr_at(k, total, ..)`.
pub fn train(config: &TrainConfig, mut model: Model, train_docs: &[PreparedDoc], dev: Option<DevSet<'_>>) -> Result<TrainOutcome> {
    train_with_callback(config, &mut model, train_docs, dev, |_| Ok(()))
}

/// [`train`] with a hook called after each epoch's record is produced.
pub fn train_with_callback(
    config: &TrainConfig,
    model: &mut Model,
    train_docs: &[PreparedDoc],
    dev: Option<DevSet<'_>>,
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_docs.is_empty() {
        return Err(Error::Empty("train"));
    }
    let steps_per_epoch = train_docs.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let adam = AdamWConfig::from(config);
    let mut state = OptimizerState::new(&model.params_mut());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_docs.len()).collect();

    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Model, f64)> = None;
    let mut step = 0;
    let mut lr = 0.0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            model.zero_grad();
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let doc = &train_docs[i];
                let pairs = training_pairs(doc, config.negative_ratio, &mut rng);
                batch_loss += model.accumulate_gradient(doc, Some(&pairs), scale)?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Training {
                    step,
                    message: format!("non-finite loss {batch_loss} in epoch {epoch}"),
                });
            }
            epoch_loss += batch_loss;
            let mut params = model.params_mut();
            clip_gradients(&mut params, config.clip_norm).map_err(|e| Error::Training {
                step,
                message: e.to_string(),
            })?;
            step += 1;
            lr = lr_at(step, total_steps, config.learning_rate, config.warmup_ratio)?;
            adamw_step(&mut params, &mut state, lr, &adam)?;
        }
        let train_loss = epoch_loss / train_docs.len() as f64;

        let mut record = EpochRecord {
            epoch,
            train_loss,
            dev_f1: None,
            dev_ign_f1: None,
            lr,
        };
        let mut threshold = config.threshold;
        if let Some(dev) = &dev {
            let scored = score_corpus(model, dev.prepared)?;
            if config.tune_threshold {
                threshold = tune_threshold(&scored, dev.docs)?.0;
            }
            let report = evaluate_scored(&scored, dev, threshold)?;
            record.dev_f1 = Some(report.0);
            record.dev_ign_f1 = Some(report.1);
        }
        let score = record.dev_f1.unwrap_or(f64::NEG_INFINITY);
        let improved = match &best {
            None => true,
            Some((b, ..)) => dev.is_none() || score > *b,
        };
        if improved {
            best = Some((score, epoch, model.clone(), threshold));
        }
        on_epoch(&record)?;
        log.push(record);
    }
    let (_, best_epoch, best_model, threshold) = best.ok_or(Error::Empty("epochs"))?;
    Ok(TrainOutcome {
        model: best_model,
        threshold,
        best_epoch,
        log,
    })
}

fn evaluate_scored(scored: &ScoredCorpus, dev: &DevSet<'_>, threshold: f64) -> Result<(f64, f64)> {
    let pred = scored.predictions(threshold)?;
    let report = evaluate_predictions(&pred, dev.docs, dev.fact_index, IgnPolicy::default())?;
    Ok((report.f1, report.ign_f1))
}
