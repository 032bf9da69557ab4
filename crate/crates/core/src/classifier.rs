//! Per-relation bilinear scoring of ordered entity pairs.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::RelationSchema;
use crate::error::{shape, Error, Result};
use crate::numerics::{dot, sigmoid, Param, Tensor2};

/// `W_r` and `b_r` for every relation plus an optional shared reduction `V`
/// applied to entity vectors before the bilinear form.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearBank {
    pub weights: Vec<Param>,
    pub biases: Vec<Param>,
    pub reduction: Option<Param>,
}

impl BilinearBank {
    /// `W_r ~ N(0, 1/d_b²)`, `b_r = 0`. A reduction `V ~ N(0, 1/d_m)` is
    /// created only when `bilinear_dim != entity_dim`.
    pub fn init<R: Rng>(relations: usize, entity_dim: usize, bilinear_dim: usize, rng: &mut R) -> Self {
        let w_dist = Normal::new(0.0, 1.0 / bilinear_dim as f64).expect("positive std");
        let weights = (0..relations)
            .map(|_| {
                let data = (0..bilinear_dim * bilinear_dim).map(|_| w_dist.sample(rng)).collect();
                Param::new(Tensor2::from_vec(bilinear_dim, bilinear_dim, data).expect("sized"))
            })
            .collect();
        let biases = (0..relations).map(|_| Param::zeros(1, 1)).collect();
        let reduction = (bilinear_dim != entity_dim).then(|| {
            let v_dist = Normal::new(0.0, 1.0 / (entity_dim as f64).sqrt()).expect("positive std");
            let data = (0..bilinear_dim * entity_dim).map(|_| v_dist.sample(rng)).collect();
            Param::new(Tensor2::from_vec(bilinear_dim, entity_dim, data).expect("sized"))
        });
        Self {
            weights,
            biases,
            reduction,
        }
    }

    pub fn relation_count(&self) -> usize {
        self.weights.len()
    }

    pub fn bilinear_dim(&self) -> usize {
        self.weights.first().map_or(0, |w| w.value.rows())
    }

    /// Dimension of the entity vectors this bank accepts.
    pub fn entity_dim(&self) -> usize {
        self.reduction
            .as_ref()
            .map_or(self.bilinear_dim(), |v| v.value.cols())
    }

    /// `V e`, or `e` when there is no reduction.
    pub fn reduce(&self, e: &[f64]) -> Result<Vec<f64>> {
        match &self.reduction {
            Some(v) => v.value.matvec(e),
            None if e.len() == self.bilinear_dim() => Ok(e.to_vec()),
            None => Err(shape(
                "reduce",
                format!("entity of {} for bilinear dim {}", e.len(), self.bilinear_dim()),
            )),
        }
    }

    /// Accumulates `∂V` and returns the gradient with respect to `e`.
    pub fn reduce_backward(&mut self, e: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        match &mut self.reduction {
            Some(v) => {
                v.grad.add_outer(1.0, upstream, e);
                v.value.matvec_t(upstream)
            }
            None => Ok(upstream.to_vec()),
        }
    }

    fn check_relation(&self, r: usize) -> Result<()> {
        if r >= self.relation_count() {
            return Err(shape(
                "bilinear",
                format!("relation {r} of {}", self.relation_count()),
            ));
        }
        Ok(())
    }

    /// `z_sᵀ W_r z_o + b_r` on already reduced vectors.
    pub fn logit(&self, z_s: &[f64], z_o: &[f64], r: usize) -> Result<f64> {
        self.check_relation(r)?;
        let w = &self.weights[r].value;
        if z_s.len() != w.rows() {
            return Err(shape("bilinear", format!("head of {} for {}x{}", z_s.len(), w.rows(), w.cols())));
        }
        Ok(dot(z_s, &w.matvec(z_o)?) + self.biases[r].value.data()[0])
    }

    /// Accumulates `∂W_r`, `∂b_r` and returns gradients for `(z_s, z_o)`.
    pub fn logit_backward(&mut self, z_s: &[f64], z_o: &[f64], r: usize, upstream: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_relation(r)?;
        let w = &mut self.weights[r];
        let wz_o = w.value.matvec(z_o)?;
        let wt_z_s = w.value.matvec_t(z_s)?;
        w.grad.add_outer(upstream, z_s, z_o);
        self.biases[r].grad.data_mut()[0] += upstream;
        Ok((
            wz_o.into_iter().map(|x| x * upstream).collect(),
            wt_z_s.into_iter().map(|x| x * upstream).collect(),
        ))
    }

    pub fn params(&self) -> Vec<(String, &Param)> {
        let mut out: Vec<(String, &Param)> = self
            .weights
            .iter()
            .enumerate()
            .map(|(r, p)| (format!("bilinear.weight[{r}]"), p))
            .chain(self.biases.iter().enumerate().map(|(r, p)| (format!("bilinear.bias[{r}]"), p)))
            .collect();
        if let Some(v) = &self.reduction {
            out.push(("bilinear.reduction".into(), v));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = self.weights.iter_mut().chain(self.biases.iter_mut()).collect();
        if let Some(v) = &mut self.reduction {
            out.push(v);
        }
        out
    }
}

/// Sigmoid kept strictly inside `(0, 1)`.
pub fn probability(logit: f64) -> f64 {
    sigmoid(logit).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// `σ(e_sᵀ W_r e_o + b_r)` for fixed entity vectors.
pub fn score_pair_fixed(e_s: &[f64], e_o: &[f64], bank: &BilinearBank, r: usize) -> Result<f64> {
    let logit = bank.logit(&bank.reduce(e_s)?, &bank.reduce(e_o)?, r)?;
    Ok(probability(logit))
}

/// `σ((e_s^r)ᵀ W_r e_o^r + b_r)` where `reps_*[r]` is the relation-specific
/// vector of each argument.
pub fn score_pair_rsman(reps_s: &[Vec<f64>], reps_o: &[Vec<f64>], bank: &BilinearBank, r: usize) -> Result<f64> {
    let relations = bank.relation_count();
    if reps_s.len() != relations || reps_o.len() != relations || r >= relations {
        return Err(shape(
            "score_pair_rsman",
            format!(
                "relation {r} with {}/{} relation-specific vectors for a bank of {relations}",
                reps_s.len(),
                reps_o.len()
            ),
        ));
    }
    score_pair_fixed(&reps_s[r], &reps_o[r], bank, r)
}

/// Scores of one ordered entity pair for every relation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairScore {
    pub head: usize,
    pub tail: usize,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl PairScore {
    pub fn from_logits(head: usize, tail: usize, logits: Vec<f64>) -> Self {
        let probs = logits.iter().map(|&z| probability(z)).collect();
        Self {
            head,
            tail,
            logits,
            probs,
        }
    }
}

/// `−[y log σ(x) + (1−y) log(1−σ(x))]` in the overflow-free form.
pub fn bce_with_logits(logit: f64, label: bool) -> f64 {
    let y = if label { 1.0 } else { 0.0 };
    logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p()
}

/// Gradient of [`bce_with_logits`] with respect to the logit.
pub fn bce_with_logits_grad(logit: f64, label: bool) -> f64 {
    sigmoid(logit) - if label { 1.0 } else { 0.0 }
}

/// Mean binary cross-entropy over relations.
pub fn bce_loss(score: &PairScore, gold: &[bool]) -> Result<f64> {
    if gold.len() != score.logits.len() {
        return Err(shape(
            "bce_loss",
            format!("{} labels for {} relations", gold.len(), score.logits.len()),
        ));
    }
    if gold.is_empty() {
        return Err(Error::Empty("bce_loss"));
    }
    let total: f64 = score
        .logits
        .iter()
        .zip(gold)
        .map(|(&x, &y)| bce_with_logits(x, y))
        .sum();
    Ok(total / gold.len() as f64)
}

/// `(document, head, tail, relation)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TripleKey {
    pub doc: String,
    pub head: usize,
    pub tail: usize,
    pub relation: usize,
}

/// Predicted triples with their probabilities.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionSet {
    items: BTreeMap<TripleKey, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionEntry {
    pub title: String,
    pub h_idx: usize,
    pub t_idx: usize,
    pub r: String,
    pub score: f64,
}

pub fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(Error::Config {
            field: "threshold".into(),
            message: format!("{threshold} is outside (0, 1)"),
        })
    }
}

impl PredictionSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds every `(h, t, r)` of `scores` whose probability is at least
    /// `threshold`.
    pub fn add_document(&mut self, doc: &str, scores: &[PairScore], threshold: f64) -> Result<()> {
        check_threshold(threshold)?;
        for s in scores {
            if s.head == s.tail {
                return Err(Error::Validation {
                    doc: doc.to_string(),
                    message: format!("pair ({}, {}) has head equal to tail", s.head, s.tail),
                });
            }
            for (r, &p) in s.probs.iter().enumerate() {
                if p >= threshold {
                    self.insert(
                        TripleKey {
                            doc: doc.to_string(),
                            head: s.head,
                            tail: s.tail,
                            relation: r,
                        },
                        p,
                    );
                }
            }
        }
        Ok(())
    }

    pub fn insert(&mut self, key: TripleKey, score: f64) {
        self.items.insert(key, score);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains(&self, key: &TripleKey) -> bool {
        self.items.contains_key(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&TripleKey, f64)> {
        self.items.iter().map(|(k, &v)| (k, v))
    }

    pub fn keys(&self) -> impl Iterator<Item = &TripleKey> {
        self.items.keys()
    }

    pub fn retain(&mut self, mut keep: impl FnMut(&TripleKey) -> bool) {
        self.items.retain(|k, _| keep(k));
    }

    /// Entries in the DocRED submission layout.
    pub fn to_submission(&self, schema: &RelationSchema) -> Result<Vec<SubmissionEntry>> {
        self.items
            .iter()
            .map(|(k, &score)| {
                let r = schema.name(k.relation).ok_or_else(|| Error::Schema(format!("relation id {}", k.relation)))?;
                Ok(SubmissionEntry {
                    title: k.doc.clone(),
                    h_idx: k.head,
                    t_idx: k.tail,
                    r: r.to_string(),
                    score,
                })
            })
            .collect()
    }

    /// Reads entries in the submission layout back. Repeated triples keep the
    /// last score.
    pub fn from_submission(entries: &[SubmissionEntry], schema: &RelationSchema) -> Result<Self> {
        let mut set = Self::new();
        for e in entries {
            let relation = schema.id(&e.r).ok_or_else(|| Error::Schema(format!("unknown relation {:?}", e.r)))?;
            if e.h_idx == e.t_idx {
                return Err(Error::Validation {
                    doc: e.title.clone(),
                    message: format!("prediction ({}, {}) has head equal to tail", e.h_idx, e.t_idx),
                });
            }
            set.insert(
                TripleKey {
                    doc: e.title.clone(),
                    head: e.h_idx,
                    tail: e.t_idx,
                    relation,
                },
                e.score,
            );
        }
        Ok(set)
    }

    pub fn to_json(&self, schema: &RelationSchema) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_submission(schema)?).expect("entries serialize"))
    }
}

/// Predictions for every pair of one document at `threshold`.
pub fn predict(doc: &str, scores: &[PairScore], threshold: f64) -> Result<PredictionSet> {
    let mut set = PredictionSet::new();
    set.add_document(doc, scores, threshold)?;
    Ok(set)
}
