//! The full relation classifier: encoder → aggregator → bilinear bank.
//!
//! [`Model::accumulate_gradient`] runs the forward pass of one document,
//! computes the mean binary cross-entropy over the requested entity pairs and
//! relations, and backpropagates into every parameter by hand.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::{
    attend, attend_backward, avg_pool, avg_pool_backward, lse_pool, lse_pool_backward,
    max_pool_backward, max_pool_with_argmax, Aggregator, AttentionMap, AttentionParams,
    EntityAttention, PrototypeBank, SimilarityMode,
};
use crate::classifier::{bce_with_logits, bce_with_logits_grad, BilinearBank, PairScore};
use crate::corpus::{Document, MentionEmbeddings, RelationSchema};
use crate::encoder::{encode_tokens, encode_tokens_backward, mention_token_ids, EmbeddingTable, Vocabulary};
use crate::error::{Error, Result};
use crate::numerics::{Objective, Param};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderMode {
    /// Trainable token embeddings averaged over each mention.
    Trained,
    /// Fixed vectors from a MEMB1 file.
    Precomputed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub aggregator: Aggregator,
    pub similarity: SimilarityMode,
    pub encoder: EncoderMode,
    /// d_m
    pub mention_dim: usize,
    /// d_p; defaults to d_m.
    pub proto_dim: Option<usize>,
    /// d_b; a reduction matrix is added when it differs from d_m.
    pub bilinear_dim: usize,
    /// Hidden width of the MLP similarity; defaults to d_p.
    pub mlp_hidden: Option<usize>,
    pub window: usize,
    pub min_count: usize,
    pub lowercase: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            aggregator: Aggregator::Rsman,
            similarity: SimilarityMode::Dot,
            encoder: EncoderMode::Trained,
            mention_dim: 64,
            proto_dim: None,
            bilinear_dim: 64,
            mlp_hidden: None,
            window: 0,
            min_count: 2,
            lowercase: false,
        }
    }
}

impl ModelConfig {
    pub fn proto_dim(&self) -> usize {
        self.proto_dim.unwrap_or(self.mention_dim)
    }

    pub fn mlp_hidden(&self) -> usize {
        self.mlp_hidden.unwrap_or_else(|| self.proto_dim())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: usize| {
            if v == 0 {
                Err(Error::Config {
                    field: field.into(),
                    message: "must be positive".into(),
                })
            } else {
                Ok(())
            }
        };
        positive("mention_dim", self.mention_dim)?;
        positive("proto_dim", self.proto_dim())?;
        positive("bilinear_dim", self.bilinear_dim)?;
        positive("mlp_hidden", self.mlp_hidden())?;
        positive("min_count", self.min_count)
    }
}

/// One mention as the model consumes it.
#[derive(Debug, Clone, PartialEq)]
pub enum MentionInput {
    /// Vocabulary ids of the averaged token window.
    Tokens(Vec<usize>),
    /// A precomputed vector; no gradient flows into it.
    Fixed(Vec<f64>),
}

/// A document resolved against a model's vocabulary or embedding file.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedDoc {
    pub id: String,
    /// `[entity][mention]`
    pub mentions: Vec<Vec<MentionInput>>,
    /// Gold relations per ordered pair; pairs absent from the map are NA.
    pub labels: HashMap<(usize, usize), Vec<usize>>,
}

impl PreparedDoc {
    pub fn entity_count(&self) -> usize {
        self.mentions.len()
    }

    /// Every ordered pair `(s, o)` with `s ≠ o`.
    pub fn all_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.entity_count();
        (0..n)
            .flat_map(|s| (0..n).filter(move |&o| o != s).map(move |o| (s, o)))
            .collect()
    }

    pub fn label_vector(&self, head: usize, tail: usize, relations: usize) -> Vec<bool> {
        let mut y = vec![false; relations];
        if let Some(rs) = self.labels.get(&(head, tail)) {
            for &r in rs {
                y[r] = true;
            }
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationAttention {
    pub prototypes: PrototypeBank,
    pub params: AttentionParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub schema: RelationSchema,
    pub vocab: Option<Vocabulary>,
    pub embeddings: Option<EmbeddingTable>,
    pub attention: Option<RelationAttention>,
    pub bilinear: BilinearBank,
    /// Test hook: doubles the bias gradients so gradient checks must fail.
    #[doc(hidden)]
    pub fault_injection: bool,
}

enum EntityState {
    Pooled {
        mentions: Vec<Vec<f64>>,
        pooled: Vec<f64>,
        argmax: Vec<usize>,
        reduced: Vec<f64>,
    },
    Attended {
        mentions: Vec<Vec<f64>>,
        attention: EntityAttention,
        reduced: Vec<Vec<f64>>,
    },
}

impl EntityState {
    fn reduced(&self, r: usize) -> &[f64] {
        match self {
            Self::Pooled { reduced, .. } => reduced,
            Self::Attended { reduced, .. } => &reduced[r],
        }
    }

    fn slot(&self, r: usize) -> usize {
        match self {
            Self::Pooled { .. } => 0,
            Self::Attended { .. } => r,
        }
    }

    fn slots(&self) -> usize {
        match self {
            Self::Pooled { .. } => 1,
            Self::Attended { reduced, .. } => reduced.len(),
        }
    }
}

impl Model {
    /// Fresh parameters drawn from a seeded generator. `vocab` is required in
    /// trained-encoder mode and ignored otherwise.
    pub fn new(config: ModelConfig, schema: RelationSchema, vocab: Option<Vocabulary>, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (vocab, embeddings) = match config.encoder {
            EncoderMode::Trained => {
                let vocab = vocab.ok_or_else(|| Error::Config {
                    field: "encoder".into(),
                    message: "trained encoder needs a vocabulary".into(),
                })?;
                let table = EmbeddingTable::init(vocab.len(), config.mention_dim, &mut rng);
                (Some(vocab), Some(table))
            }
            EncoderMode::Precomputed => (None, None),
        };
        let relations = schema.count();
        let attention = (config.aggregator == Aggregator::Rsman).then(|| RelationAttention {
            prototypes: PrototypeBank::init(relations, config.proto_dim(), &mut rng),
            params: AttentionParams::init(
                config.similarity,
                config.mention_dim,
                config.proto_dim(),
                config.mlp_hidden(),
                &mut rng,
            ),
        });
        let bilinear = BilinearBank::init(relations, config.mention_dim, config.bilinear_dim, &mut rng);
        Ok(Self {
            config,
            schema,
            vocab,
            embeddings,
            attention,
            bilinear,
            fault_injection: false,
        })
    }

    pub fn relation_count(&self) -> usize {
        self.schema.count()
    }

    /// Resolves mentions to token ids or precomputed vectors.
    pub fn prepare(&self, doc: &Document, store: Option<&MentionEmbeddings>) -> Result<PreparedDoc> {
        let mentions = doc
            .entities
            .iter()
            .map(|entity| {
                entity
                    .mentions
                    .iter()
                    .enumerate()
                    .map(|(j, m)| match self.config.encoder {
                        EncoderMode::Trained => {
                            let vocab = self.vocab.as_ref().expect("trained model has a vocabulary");
                            Ok(MentionInput::Tokens(mention_token_ids(doc, m, vocab, self.config.window)))
                        }
                        EncoderMode::Precomputed => {
                            let store = store.ok_or_else(|| Error::Config {
                                field: "embeddings".into(),
                                message: "precomputed encoder needs a MEMB1 file".into(),
                            })?;
                            if store.dim() != self.config.mention_dim {
                                return Err(Error::EmbeddingLoad {
                                    record: 0,
                                    message: format!(
                                        "file dimension {} but mention_dim is {}",
                                        store.dim(),
                                        self.config.mention_dim
                                    ),
                                });
                            }
                            store
                                .get(&doc.id, entity.index, j)
                                .map(|v| MentionInput::Fixed(v.iter().map(|&x| f64::from(x)).collect()))
                                .ok_or_else(|| Error::MissingMention {
                                    doc: doc.id.clone(),
                                    entity: entity.index,
                                    mention: j,
                                })
                        }
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let mut labels: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for f in &doc.facts {
            let rs = labels.entry((f.head, f.tail)).or_default();
            if !rs.contains(&f.relation) {
                rs.push(f.relation);
            }
        }
        Ok(PreparedDoc {
            id: doc.id.clone(),
            mentions,
            labels,
        })
    }

    pub fn prepare_all(&self, docs: &[Document], store: Option<&MentionEmbeddings>) -> Result<Vec<PreparedDoc>> {
        docs.iter().map(|d| self.prepare(d, store)).collect()
    }

    fn mention_vector(&self, input: &MentionInput) -> Vec<f64> {
        match input {
            MentionInput::Tokens(ids) => encode_tokens(ids, self.embeddings.as_ref().expect("trained model has embeddings")),
            MentionInput::Fixed(v) => v.clone(),
        }
    }

    /// Mention vectors of one entity.
    pub fn entity_mentions(&self, doc: &PreparedDoc, entity: usize) -> Vec<Vec<f64>> {
        doc.mentions[entity].iter().map(|m| self.mention_vector(m)).collect()
    }

    fn entity_state(&self, doc: &PreparedDoc, entity: usize) -> Result<EntityState> {
        let mentions = self.entity_mentions(doc, entity);
        Ok(match (self.config.aggregator, &self.attention) {
            (Aggregator::Rsman, Some(att)) => {
                let attention = attend(&mentions, &att.prototypes, &att.params)?;
                let reduced = attention
                    .reps
                    .iter()
                    .map(|e| self.bilinear.reduce(e))
                    .collect::<Result<Vec<_>>>()?;
                EntityState::Attended {
                    mentions,
                    attention,
                    reduced,
                }
            }
            (Aggregator::Rsman, None) => {
                return Err(Error::Config {
                    field: "aggregator".into(),
                    message: "rsman model without attention parameters".into(),
                })
            }
            (agg, _) => {
                let (pooled, argmax) = match agg {
                    Aggregator::Avg => (avg_pool(&mentions)?, Vec::new()),
                    Aggregator::Max => max_pool_with_argmax(&mentions)?,
                    _ => (lse_pool(&mentions)?, Vec::new()),
                };
                let reduced = self.bilinear.reduce(&pooled)?;
                EntityState::Pooled {
                    mentions,
                    pooled,
                    argmax,
                    reduced,
                }
            }
        })
    }

    fn forward(&self, doc: &PreparedDoc) -> Result<Vec<EntityState>> {
        (0..doc.entity_count()).map(|i| self.entity_state(doc, i)).collect()
    }

    /// Scores every ordered pair of the document.
    pub fn score_document(&self, doc: &PreparedDoc) -> Result<Vec<PairScore>> {
        let states = self.forward(doc)?;
        doc.all_pairs()
            .into_iter()
            .map(|(s, o)| {
                let logits = (0..self.relation_count())
                    .map(|r| self.bilinear.logit(states[s].reduced(r), states[o].reduced(r), r))
                    .collect::<Result<Vec<_>>>()?;
                Ok(PairScore::from_logits(s, o, logits))
            })
            .collect()
    }

    /// Attention of every relation over the mentions of one entity.
    pub fn attention_map(&self, doc: &PreparedDoc, entity: usize) -> Result<AttentionMap> {
        let att = self.attention.as_ref().ok_or_else(|| Error::Config {
            field: "aggregator".into(),
            message: format!("{} model has no mention attention", self.config.aggregator),
        })?;
        if entity >= doc.entity_count() {
            return Err(Error::Validation {
                doc: doc.id.clone(),
                message: format!("entity {entity} out of range ({} entities)", doc.entity_count()),
            });
        }
        let mentions = self.entity_mentions(doc, entity);
        Ok(AttentionMap::from(&attend(&mentions, &att.prototypes, &att.params)?))
    }

    /// Mean BCE over `pairs` (all ordered pairs when `None`) and relations.
    pub fn loss(&self, doc: &PreparedDoc, pairs: Option<&[(usize, usize)]>) -> Result<f64> {
        let all;
        let pairs = match pairs {
            Some(p) => p,
            None => {
                all = doc.all_pairs();
                &all
            }
        };
        if pairs.is_empty() {
            return Ok(0.0);
        }
        let states = self.forward(doc)?;
        let relations = self.relation_count();
        let mut total = 0.0;
        for &(s, o) in pairs {
            let y = doc.label_vector(s, o, relations);
            for (r, &label) in y.iter().enumerate() {
                let logit = self.bilinear.logit(states[s].reduced(r), states[o].reduced(r), r)?;
                total += bce_with_logits(logit, label);
            }
        }
        Ok(total / (pairs.len() * relations) as f64)
    }

    /// Adds `scale · ∇loss` into every parameter gradient and returns the
    /// (unscaled) loss.
    pub fn accumulate_gradient(&mut self, doc: &PreparedDoc, pairs: Option<&[(usize, usize)]>, scale: f64) -> Result<f64> {
        let all;
        let pairs = match pairs {
            Some(p) => p,
            None => {
                all = doc.all_pairs();
                &all
            }
        };
        if pairs.is_empty() {
            return Ok(0.0);
        }
        let states = self.forward(doc)?;
        let relations = self.relation_count();
        let coeff = scale / (pairs.len() * relations) as f64;
        let dim = self.bilinear.bilinear_dim();
        let mut dreduced: Vec<Vec<Vec<f64>>> = states.iter().map(|st| vec![vec![0.0; dim]; st.slots()]).collect();
        let mut total = 0.0;
        for &(s, o) in pairs {
            let y = doc.label_vector(s, o, relations);
            for (r, &label) in y.iter().enumerate() {
                let (z_s, z_o) = (states[s].reduced(r), states[o].reduced(r));
                let logit = self.bilinear.logit(z_s, z_o, r)?;
                total += bce_with_logits(logit, label);
                let g = coeff * bce_with_logits_grad(logit, label);
                let (ds, dobj) = self.bilinear.logit_backward(z_s, z_o, r, g)?;
                if self.fault_injection {
                    self.bilinear.biases[r].grad.data_mut()[0] += g;
                }
                crate::numerics::axpy(&mut dreduced[s][states[s].slot(r)], 1.0, &ds);
                crate::numerics::axpy(&mut dreduced[o][states[o].slot(r)], 1.0, &dobj);
            }
        }

        for (i, (state, dz)) in states.iter().zip(&dreduced).enumerate() {
            let dmentions = match state {
                EntityState::Pooled {
                    mentions,
                    pooled,
                    argmax,
                    ..
                } => {
                    let de = self.bilinear.reduce_backward(pooled, &dz[0])?;
                    match self.config.aggregator {
                        Aggregator::Avg => avg_pool_backward(mentions.len(), &de),
                        Aggregator::Max => max_pool_backward(mentions.len(), argmax, &de),
                        _ => lse_pool_backward(mentions, &de)?,
                    }
                }
                EntityState::Attended {
                    mentions, attention, ..
                } => {
                    let de = attention
                        .reps
                        .iter()
                        .zip(dz)
                        .map(|(e, g)| self.bilinear.reduce_backward(e, g))
                        .collect::<Result<Vec<_>>>()?;
                    let att = self.attention.as_mut().expect("attended state implies attention");
                    attend_backward(mentions, attention, &mut att.prototypes, &mut att.params, &de)?
                }
            };
            for (input, dm) in doc.mentions[i].iter().zip(&dmentions) {
                if let MentionInput::Tokens(ids) = input {
                    let table = self.embeddings.as_mut().expect("token input implies embeddings");
                    encode_tokens_backward(ids, table, dm);
                }
            }
        }
        Ok(total / (pairs.len() * relations) as f64)
    }

    /// Named parameters in a fixed order.
    pub fn params(&self) -> Vec<(String, &Param)> {
        let mut out: Vec<(String, &Param)> = Vec::new();
        if let Some(t) = &self.embeddings {
            out.push(("embeddings".into(), &t.param));
        }
        if let Some(att) = &self.attention {
            out.push(("prototypes".into(), &att.prototypes.param));
            out.extend(att.params.params().into_iter().map(|(n, p)| (format!("attention.{n}"), p)));
        }
        out.extend(self.bilinear.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = Vec::new();
        if let Some(t) = &mut self.embeddings {
            out.push(&mut t.param);
        }
        if let Some(att) = &mut self.attention {
            out.push(&mut att.prototypes.param);
            out.extend(att.params.params_mut());
        }
        out.extend(self.bilinear.params_mut());
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.value.len()).sum()
    }
}

/// Mean document loss over a fixed corpus, as an [`Objective`].
pub struct CorpusObjective<'a> {
    pub model: &'a mut Model,
    pub docs: &'a [PreparedDoc],
}

impl Objective for CorpusObjective<'_> {
    fn params(&self) -> Vec<(String, &Param)> {
        self.model.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.model.params_mut()
    }

    fn loss(&mut self) -> Result<f64> {
        let mut total = 0.0;
        for doc in self.docs {
            total += self.model.loss(doc, None)?;
        }
        Ok(total / self.docs.len() as f64)
    }

    fn loss_and_grad(&mut self) -> Result<f64> {
        let scale = 1.0 / self.docs.len() as f64;
        let mut total = 0.0;
        for doc in self.docs {
            total += self.model.accumulate_gradient(doc, None, scale)?;
        }
        Ok(total * scale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_docred, MentionKey};
    use crate::encoder::build_vocab;
    use crate::numerics::{grad_check, GradCheckConfig, Tensor2};
    use crate::toy::{toy_config, toy_corpus};

    fn toy_model(config: ModelConfig, seed: u64) -> (Model, Vec<PreparedDoc>) {
        let (schema, docs) = toy_corpus().unwrap();
        let vocab = build_vocab(&docs, 1, false).unwrap();
        let mut model = Model::new(config, schema, Some(vocab), seed).unwrap();
        // lift the tiny embedding init so gradients are well above the
        // absolute-error floor
        if let Some(t) = &mut model.embeddings {
            for (k, x) in t.param.value.data_mut().iter_mut().enumerate() {
                *x = ((k * 37 % 23) as f64 / 11.0 - 1.0) * 0.8;
            }
        }
        let prepared = model.prepare_all(&docs, None).unwrap();
        (model, prepared)
    }

    #[test]
    fn full_loss_passes_grad_check_for_every_path() {
        let cases = [
            (Aggregator::Avg, SimilarityMode::Dot),
            (Aggregator::Max, SimilarityMode::Dot),
            (Aggregator::Lse, SimilarityMode::Dot),
            (Aggregator::Rsman, SimilarityMode::Dot),
            (Aggregator::Rsman, SimilarityMode::Mlp),
        ];
        for (aggregator, similarity) in cases {
            let config = ModelConfig {
                aggregator,
                similarity,
                ..toy_config()
            };
            let (mut model, docs) = toy_model(config, 11);
            let report = grad_check(&mut CorpusObjective { model: &mut model, docs: &docs }, GradCheckConfig::default()).unwrap();
            assert!(report.passed, "{aggregator}/{similarity:?}: {report:?}");
        }
    }

    #[test]
    fn square_bilinear_has_no_reduction() {
        let config = ModelConfig {
            bilinear_dim: 4,
            ..toy_config()
        };
        let (mut model, docs) = toy_model(config, 2);
        assert!(model.bilinear.reduction.is_none());
        let report = grad_check(&mut CorpusObjective { model: &mut model, docs: &docs }, GradCheckConfig::default()).unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn fault_injection_is_caught() {
        let (mut model, docs) = toy_model(toy_config(), 5);
        model.fault_injection = true;
        let report = grad_check(&mut CorpusObjective { model: &mut model, docs: &docs }, GradCheckConfig::default()).unwrap();
        assert!(!report.passed);
        assert!(report.worst_param.as_deref().unwrap().starts_with("bilinear.bias"), "{:?}", report.worst_param);
    }

    #[test]
    fn precomputed_mode_grad_check_and_no_encoder_storage() {
        let (schema, docs) = toy_corpus().unwrap();
        let mut store = MentionEmbeddings::new(4);
        for d in &docs {
            for e in &d.entities {
                for j in 0..e.mentions.len() {
                    let v = (0..4).map(|k| ((e.index * 7 + j * 3 + k) % 5) as f32 * 0.3 - 0.6).collect();
                    store
                        .insert(
                            MentionKey {
                                doc: d.id.clone(),
                                entity: e.index,
                                mention: j,
                            },
                            v,
                        )
                        .unwrap();
                }
            }
        }
        let config = ModelConfig {
            encoder: EncoderMode::Precomputed,
            ..toy_config()
        };
        let mut model = Model::new(config, schema, None, 4).unwrap();
        assert!(model.embeddings.is_none());
        assert!(model.params().iter().all(|(n, _)| n != "embeddings"));
        let prepared = model.prepare_all(&docs, Some(&store)).unwrap();
        let report = grad_check(&mut CorpusObjective { model: &mut model, docs: &prepared }, GradCheckConfig::default()).unwrap();
        assert!(report.passed, "{report:?}");
    }

    const SINGLE_MENTION: &str = r#"[{"title": "s", "sents": [["a", "b", "c", "d", "e"]],
        "vertexSet": [[{"name": "a", "sent_id": 0, "pos": [0, 1], "type": "X"}],
                      [{"name": "b c", "sent_id": 0, "pos": [1, 3], "type": "X"}],
                      [{"name": "e", "sent_id": 0, "pos": [4, 5], "type": "X"}]],
        "labels": [{"h": 0, "t": 1, "r": "born_in", "evidence": []}]}]"#;

    #[test]
    fn single_mention_rsman_equals_avg_bitwise() {
        let (schema, _) = toy_corpus().unwrap();
        let docs = parse_docred(SINGLE_MENTION.as_bytes(), &schema).unwrap();
        let vocab = build_vocab(&docs, 1, false).unwrap();
        let rsman = Model::new(toy_config(), schema.clone(), Some(vocab.clone()), 9).unwrap();
        let mut avg = Model::new(
            ModelConfig {
                aggregator: Aggregator::Avg,
                ..toy_config()
            },
            schema,
            Some(vocab),
            9,
        )
        .unwrap();
        avg.bilinear = rsman.bilinear.clone();
        avg.embeddings = rsman.embeddings.clone();
        let prepared = rsman.prepare_all(&docs, None).unwrap();
        let a = rsman.score_document(&prepared[0]).unwrap();
        let b = avg.score_document(&prepared[0]).unwrap();
        assert_eq!(a.len(), 6);
        for (x, y) in a.iter().zip(&b) {
            for (p, q) in x.probs.iter().zip(&y.probs) {
                assert_eq!(p.to_bits(), q.to_bits());
            }
        }
    }

    #[test]
    fn equal_prototypes_give_equal_attention_across_relations() {
        let (mut model, docs) = toy_model(toy_config(), 13);
        let att = model.attention.as_mut().unwrap();
        let row: Vec<f64> = att.prototypes.prototype(0).to_vec();
        for r in 1..att.prototypes.relation_count() {
            att.prototypes.param.value.row_mut(r).copy_from_slice(&row);
        }
        // entity 0 of toy-2 has three mentions
        let map = model.attention_map(&docs[1], 0).unwrap();
        for r in 1..map.weights.len() {
            assert_eq!(map.weights[r], map.weights[0]);
        }
    }

    #[test]
    fn zero_prototypes_reduce_to_average_pooling() {
        let (mut model, docs) = toy_model(toy_config(), 13);
        let att = model.attention.as_mut().unwrap();
        let (r, d) = att.prototypes.param.value.shape();
        att.prototypes.param.value = Tensor2::zeros(r, d);
        let mut avg = model.clone();
        avg.config.aggregator = Aggregator::Avg;
        avg.attention = None;
        for doc in &docs {
            let a = model.score_document(doc).unwrap();
            let b = avg.score_document(doc).unwrap();
            for (x, y) in a.iter().zip(&b) {
                for (p, q) in x.probs.iter().zip(&y.probs) {
                    assert!((p - q).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn distinct_prototypes_give_relation_dependent_scores() {
        let (model, docs) = toy_model(toy_config(), 21);
        let map = model.attention_map(&docs[1], 0).unwrap();
        assert_ne!(map.weights[0], map.weights[1]);
        let scores = model.score_document(&docs[1]).unwrap();
        for s in &scores {
            assert!(s.probs.iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn precomputed_dimension_mismatch() {
        let (schema, docs) = toy_corpus().unwrap();
        let store = MentionEmbeddings::new(5);
        let model = Model::new(
            ModelConfig {
                encoder: EncoderMode::Precomputed,
                ..toy_config()
            },
            schema,
            None,
            0,
        )
        .unwrap();
        assert!(model.prepare(&docs[0], Some(&store)).is_err());
        assert!(model.prepare(&docs[0], None).is_err());
    }
}
