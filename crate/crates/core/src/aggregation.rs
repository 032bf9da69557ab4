//! From mention vectors to entity vectors.
//!
//! Fixed poolers (mean, max, logsumexp) give one vector per entity. The
//! relation-specific path scores every mention against a learned prototype per
//! relation, normalizes those scores with a softmax over the entity's mentions
//! and returns one attention-weighted vector per relation.
//!
//! Parameter gradients are accumulated into the `grad` of the owning
//! [`Param`]s; gradients with respect to inputs are returned.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{shape, Error, Result};
use crate::numerics::{axpy, dot, logsumexp, softmax, softmax_backward, Param, Tensor2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    Avg,
    Max,
    Lse,
    Rsman,
}

impl std::str::FromStr for Aggregator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg" => Ok(Self::Avg),
            "max" => Ok(Self::Max),
            "lse" => Ok(Self::Lse),
            "rsman" => Ok(Self::Rsman),
            other => Err(Error::Config {
                field: "aggregator".into(),
                message: format!("unknown aggregator {other:?} (avg|max|lse|rsman)"),
            }),
        }
    }
}

impl std::fmt::Display for Aggregator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Avg => "avg",
            Self::Max => "max",
            Self::Lse => "lse",
            Self::Rsman => "rsman",
        })
    }
}

fn check_mentions<V: AsRef<[f64]>>(op: &'static str, mentions: &[V]) -> Result<usize> {
    let first = mentions.first().ok_or(Error::Empty(op))?;
    let dim = first.as_ref().len();
    if let Some(bad) = mentions.iter().find(|m| m.as_ref().len() != dim) {
        return Err(shape(op, format!("mention of dim {} among dim {dim}", bad.as_ref().len())));
    }
    Ok(dim)
}

pub fn avg_pool<V: AsRef<[f64]>>(mentions: &[V]) -> Result<Vec<f64>> {
    let dim = check_mentions("avg_pool", mentions)?;
    let mut out = vec![0.0; dim];
    for m in mentions {
        axpy(&mut out, 1.0, m.as_ref());
    }
    let q = mentions.len() as f64;
    out.iter_mut().for_each(|v| *v /= q);
    Ok(out)
}

/// Each mention receives `upstream / Q`.
pub fn avg_pool_backward(count: usize, upstream: &[f64]) -> Vec<Vec<f64>> {
    let scale = 1.0 / count as f64;
    let share: Vec<f64> = upstream.iter().map(|g| g * scale).collect();
    vec![share; count]
}

/// Element-wise maximum with the index of the first maximizing mention per
/// dimension.
pub fn max_pool_with_argmax<V: AsRef<[f64]>>(mentions: &[V]) -> Result<(Vec<f64>, Vec<usize>)> {
    let dim = check_mentions("max_pool", mentions)?;
    let mut out = mentions[0].as_ref().to_vec();
    let mut arg = vec![0; dim];
    for (j, m) in mentions.iter().enumerate().skip(1) {
        for (d, &v) in m.as_ref().iter().enumerate() {
            if v > out[d] {
                out[d] = v;
                arg[d] = j;
            }
        }
    }
    Ok((out, arg))
}

pub fn max_pool<V: AsRef<[f64]>>(mentions: &[V]) -> Result<Vec<f64>> {
    Ok(max_pool_with_argmax(mentions)?.0)
}

/// Routes each dimension's gradient to its first argmax.
pub fn max_pool_backward(count: usize, argmax: &[usize], upstream: &[f64]) -> Vec<Vec<f64>> {
    let mut grads = vec![vec![0.0; upstream.len()]; count];
    for (d, (&j, &g)) in argmax.iter().zip(upstream).enumerate() {
        grads[j][d] = g;
    }
    grads
}

/// Element-wise logsumexp across mentions.
pub fn lse_pool<V: AsRef<[f64]>>(mentions: &[V]) -> Result<Vec<f64>> {
    let dim = check_mentions("lse_pool", mentions)?;
    (0..dim)
        .map(|d| {
            let column: Vec<f64> = mentions.iter().map(|m| m.as_ref()[d]).collect();
            logsumexp(&column)
        })
        .collect()
}

pub fn lse_pool_backward<V: AsRef<[f64]>>(mentions: &[V], upstream: &[f64]) -> Result<Vec<Vec<f64>>> {
    check_mentions("lse_pool_backward", mentions)?;
    let mut grads = vec![vec![0.0; upstream.len()]; mentions.len()];
    for (d, &g) in upstream.iter().enumerate() {
        let column: Vec<f64> = mentions.iter().map(|m| m.as_ref()[d]).collect();
        for (j, w) in softmax(&column)?.into_iter().enumerate() {
            grads[j][d] = w * g;
        }
    }
    Ok(grads)
}

/// One trainable prototype vector per relation.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    pub param: Param,
}

impl PrototypeBank {
    /// I.i.d. normal with standard deviation `1/√dim`.
    pub fn init<R: Rng>(relations: usize, dim: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("positive std");
        let data = (0..relations * dim).map(|_| normal.sample(rng)).collect();
        Self {
            param: Param::new(Tensor2::from_vec(relations, dim, data).expect("sized")),
        }
    }

    pub fn relation_count(&self) -> usize {
        self.param.value.rows()
    }

    pub fn dim(&self) -> usize {
        self.param.value.cols()
    }

    pub fn prototype(&self, r: usize) -> &[f64] {
        self.param.value.row(r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityMode {
    Dot,
    Mlp,
}

impl std::str::FromStr for SimilarityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(Self::Dot),
            "mlp" => Ok(Self::Mlp),
            other => Err(Error::Config {
                field: "similarity".into(),
                message: format!("unknown similarity {other:?} (dot|mlp)"),
            }),
        }
    }
}

impl std::fmt::Display for SimilarityMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Dot => "dot",
            Self::Mlp => "mlp",
        })
    }
}

/// Parameters of the prototype/mention similarity.
#[derive(Debug, Clone, PartialEq)]
pub enum AttentionParams {
    /// `s = p · (U m + c)`
    Dot { projection: Param, bias: Param },
    /// `s = w₂ · tanh(W₁ [p; m] + b₁) + b₂`
    Mlp {
        hidden: Param,
        hidden_bias: Param,
        output: Param,
        output_bias: Param,
    },
}

impl AttentionParams {
    pub fn init<R: Rng>(
        mode: SimilarityMode,
        mention_dim: usize,
        proto_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let mut normal = |rows: usize, cols: usize| {
            let dist = Normal::new(0.0, 1.0 / (cols as f64).sqrt()).expect("positive std");
            let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
            Param::new(Tensor2::from_vec(rows, cols, data).expect("sized"))
        };
        match mode {
            SimilarityMode::Dot => Self::Dot {
                projection: normal(proto_dim, mention_dim),
                bias: Param::zeros(proto_dim, 1),
            },
            SimilarityMode::Mlp => Self::Mlp {
                hidden: normal(hidden, proto_dim + mention_dim),
                hidden_bias: Param::zeros(hidden, 1),
                output: normal(1, hidden),
                output_bias: Param::zeros(1, 1),
            },
        }
    }

    pub fn mode(&self) -> SimilarityMode {
        match self {
            Self::Dot { .. } => SimilarityMode::Dot,
            Self::Mlp { .. } => SimilarityMode::Mlp,
        }
    }

    /// Mention dimension these parameters accept for prototypes of `proto_dim`.
    fn mention_dim(&self, proto_dim: usize) -> usize {
        match self {
            Self::Dot { projection, .. } => projection.value.cols(),
            Self::Mlp { hidden, .. } => hidden.value.cols().saturating_sub(proto_dim),
        }
    }

    pub fn params(&self) -> Vec<(&'static str, &Param)> {
        match self {
            Self::Dot { projection, bias } => vec![("projection", projection), ("projection_bias", bias)],
            Self::Mlp {
                hidden,
                hidden_bias,
                output,
                output_bias,
            } => vec![
                ("mlp_hidden", hidden),
                ("mlp_hidden_bias", hidden_bias),
                ("mlp_output", output),
                ("mlp_output_bias", output_bias),
            ],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Self::Dot { projection, bias } => vec![projection, bias],
            Self::Mlp {
                hidden,
                hidden_bias,
                output,
                output_bias,
            } => vec![hidden, hidden_bias, output, output_bias],
        }
    }

    /// Dot mode: `U m + c`. Mlp mode: `m` unchanged.
    fn prepare(&self, m: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::Dot { projection, bias } => crate::numerics::affine(m, &projection.value, bias.value.data()),
            Self::Mlp { .. } => Ok(m.to_vec()),
        }
    }
}

fn mlp_hidden(params: &AttentionParams, p: &[f64], m: &[f64]) -> Result<Vec<f64>> {
    let AttentionParams::Mlp {
        hidden, hidden_bias, ..
    } = params
    else {
        unreachable!("mlp_hidden on dot params")
    };
    let input: Vec<f64> = p.iter().chain(m).copied().collect();
    let pre = crate::numerics::affine(&input, &hidden.value, hidden_bias.value.data())?;
    Ok(pre.into_iter().map(f64::tanh).collect())
}

fn score_prepared(params: &AttentionParams, p: &[f64], prepared: &[f64]) -> Result<(f64, Vec<f64>)> {
    match params {
        AttentionParams::Dot { .. } => {
            if p.len() != prepared.len() {
                return Err(shape(
                    "similarity",
                    format!("prototype of {} against projected mention of {}", p.len(), prepared.len()),
                ));
            }
            Ok((dot(p, prepared), Vec::new()))
        }
        AttentionParams::Mlp {
            output, output_bias, ..
        } => {
            let h = mlp_hidden(params, p, prepared)?;
            Ok((dot(output.value.row(0), &h) + output_bias.value.data()[0], h))
        }
    }
}

/// Relevance of mention `m` to a relation with prototype `p`.
pub fn similarity(p: &[f64], m: &[f64], params: &AttentionParams) -> Result<f64> {
    let mention_dim = params.mention_dim(p.len());
    if m.len() != mention_dim {
        return Err(shape("similarity", format!("mention of {} for params expecting {mention_dim}", m.len())));
    }
    let prepared = params.prepare(m)?;
    Ok(score_prepared(params, p, &prepared)?.0)
}

/// Accumulates parameter gradients and returns `(∂s/∂p, ∂s/∂m)` scaled by
/// `upstream`.
pub fn similarity_backward(
    p: &[f64],
    m: &[f64],
    params: &mut AttentionParams,
    upstream: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let prepared = params.prepare(m)?;
    let (_, hidden) = score_prepared(params, p, &prepared)?;
    let (dp, dprepared) = score_prepared_backward(params, p, &prepared, &hidden, upstream);
    let dm = prepared_backward(params, m, &dprepared)?;
    Ok((dp, dm))
}

/// Backward through the score given the prepared mention; returns gradients
/// for the prototype and the prepared mention.
fn score_prepared_backward(
    params: &mut AttentionParams,
    p: &[f64],
    prepared: &[f64],
    hidden_act: &[f64],
    upstream: f64,
) -> (Vec<f64>, Vec<f64>) {
    match params {
        AttentionParams::Dot { .. } => (
            prepared.iter().map(|x| x * upstream).collect(),
            p.iter().map(|x| x * upstream).collect(),
        ),
        AttentionParams::Mlp {
            hidden,
            hidden_bias,
            output,
            output_bias,
        } => {
            output.grad.add_outer(upstream, &[1.0], hidden_act);
            output_bias.grad.data_mut()[0] += upstream;
            let dpre: Vec<f64> = output
                .value
                .row(0)
                .iter()
                .zip(hidden_act)
                .map(|(w, h)| upstream * w * (1.0 - h * h))
                .collect();
            let input: Vec<f64> = p.iter().chain(prepared).copied().collect();
            hidden.grad.add_outer(1.0, &dpre, &input);
            axpy(hidden_bias.grad.data_mut(), 1.0, &dpre);
            let dinput = hidden.value.matvec_t(&dpre).expect("shapes checked in forward");
            let (dp, dm) = dinput.split_at(p.len());
            (dp.to_vec(), dm.to_vec())
        }
    }
}

/// Backward through [`AttentionParams::prepare`].
fn prepared_backward(params: &mut AttentionParams, m: &[f64], dprepared: &[f64]) -> Result<Vec<f64>> {
    match params {
        AttentionParams::Dot { projection, bias } => {
            projection.grad.add_outer(1.0, dprepared, m);
            axpy(bias.grad.data_mut(), 1.0, dprepared);
            projection.value.matvec_t(dprepared)
        }
        AttentionParams::Mlp { .. } => Ok(dprepared.to_vec()),
    }
}

/// Softmax over one entity's mention scores for one relation.
pub fn attention_weights(scores: &[f64]) -> Result<Vec<f64>> {
    softmax(scores)
}

/// `Σ_j α_j m_j`
pub fn relation_specific_rep<V: AsRef<[f64]>>(weights: &[f64], mentions: &[V]) -> Result<Vec<f64>> {
    let dim = check_mentions("relation_specific_rep", mentions)?;
    if weights.len() != mentions.len() {
        return Err(shape(
            "relation_specific_rep",
            format!("{} weights for {} mentions", weights.len(), mentions.len()),
        ));
    }
    let mut out = vec![0.0; dim];
    for (w, m) in weights.iter().zip(mentions) {
        axpy(&mut out, *w, m.as_ref());
    }
    Ok(out)
}

/// Forward state of relation-specific attention for one entity.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityAttention {
    /// Prepared mention vectors (projected in dot mode).
    prepared: Vec<Vec<f64>>,
    /// MLP hidden activations, `[relation][mention]`; empty in dot mode.
    hidden: Vec<Vec<Vec<f64>>>,
    /// `s^r_j`, `[relation][mention]`.
    pub scores: Vec<Vec<f64>>,
    /// `α^r_j`, `[relation][mention]`.
    pub weights: Vec<Vec<f64>>,
    /// `e^r`, one vector per relation.
    pub reps: Vec<Vec<f64>>,
}

/// Relation-specific representations of one entity for every relation.
pub fn attend<V: AsRef<[f64]>>(
    mentions: &[V],
    prototypes: &PrototypeBank,
    params: &AttentionParams,
) -> Result<EntityAttention> {
    let dim = check_mentions("attend", mentions)?;
    let mention_dim = params.mention_dim(prototypes.dim());
    if dim != mention_dim {
        return Err(shape("attend", format!("mentions of {dim} for params expecting {mention_dim}")));
    }
    let prepared = mentions
        .iter()
        .map(|m| params.prepare(m.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let relations = prototypes.relation_count();
    let mut out = EntityAttention {
        prepared,
        hidden: Vec::new(),
        scores: Vec::with_capacity(relations),
        weights: Vec::with_capacity(relations),
        reps: Vec::with_capacity(relations),
    };
    for r in 0..relations {
        let p = prototypes.prototype(r);
        let mut scores = Vec::with_capacity(mentions.len());
        let mut hidden = Vec::new();
        for x in &out.prepared {
            let (s, h) = score_prepared(params, p, x)?;
            scores.push(s);
            hidden.push(h);
        }
        let weights = attention_weights(&scores)?;
        out.reps.push(relation_specific_rep(&weights, mentions)?);
        out.scores.push(scores);
        out.weights.push(weights);
        if params.mode() == SimilarityMode::Mlp {
            out.hidden.push(hidden);
        }
    }
    Ok(out)
}

/// Backpropagates per-relation gradients on `reps` through the attention.
/// Accumulates prototype and attention parameter gradients; returns one
/// gradient per mention.
pub fn attend_backward<V: AsRef<[f64]>>(
    mentions: &[V],
    cache: &EntityAttention,
    prototypes: &mut PrototypeBank,
    params: &mut AttentionParams,
    upstream: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    if upstream.len() != cache.reps.len() {
        return Err(shape(
            "attend_backward",
            format!("{} upstream vectors for {} relations", upstream.len(), cache.reps.len()),
        ));
    }
    let dim = mentions[0].as_ref().len();
    let mut dmentions = vec![vec![0.0; dim]; mentions.len()];
    let mut dprepared = vec![vec![0.0; cache.prepared[0].len()]; mentions.len()];
    for (r, de) in upstream.iter().enumerate() {
        if de.iter().all(|&g| g == 0.0) {
            continue;
        }
        let weights = &cache.weights[r];
        let mut dweights = Vec::with_capacity(mentions.len());
        for (j, m) in mentions.iter().enumerate() {
            dweights.push(dot(de, m.as_ref()));
            axpy(&mut dmentions[j], weights[j], de);
        }
        let dscores = softmax_backward(weights, &dweights);
        let p = prototypes.prototype(r).to_vec();
        for (j, &ds) in dscores.iter().enumerate() {
            let hidden: &[f64] = cache.hidden.get(r).map_or(&[], |h| &h[j]);
            let (dp, dx) = score_prepared_backward(params, &p, &cache.prepared[j], hidden, ds);
            axpy(prototypes.param.grad.row_mut(r), 1.0, &dp);
            axpy(&mut dprepared[j], 1.0, &dx);
        }
    }
    for (j, m) in mentions.iter().enumerate() {
        let dm = prepared_backward(params, m.as_ref(), &dprepared[j])?;
        axpy(&mut dmentions[j], 1.0, &dm);
    }
    Ok(dmentions)
}

/// Attention scores and weights for one entity, relations by mentions.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub scores: Vec<Vec<f64>>,
    pub weights: Vec<Vec<f64>>,
}

impl From<&EntityAttention> for AttentionMap {
    fn from(a: &EntityAttention) -> Self {
        Self {
            scores: a.scores.clone(),
            weights: a.weights.clone(),
        }
    }
}

impl AttentionMap {
    /// CSV with one row per relation and one column per mention.
    pub fn to_csv(&self, relation_names: &[String], mention_surfaces: &[String]) -> Result<String> {
        if relation_names.len() != self.weights.len()
            || self.weights.iter().any(|row| row.len() != mention_surfaces.len())
        {
            return Err(shape(
                "AttentionMap::to_csv",
                format!(
                    "{} relation names / {} surfaces for a {}-row map",
                    relation_names.len(),
                    mention_surfaces.len(),
                    self.weights.len()
                ),
            ));
        }
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(std::iter::once("relation").chain(mention_surfaces.iter().map(String::as_str)))?;
        for (name, row) in relation_names.iter().zip(&self.weights) {
            let mut record = vec![name.clone()];
            record.extend(row.iter().map(|w| w.to_string()));
            writer.write_record(&record)?;
        }
        let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv of UTF-8 fields"))
    }
}
