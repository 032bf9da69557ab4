//! Synthetic corpus on which pooled entity vectors provably lose information.
//!
//! Each document has a head entity with two mentions, written
//! `slotA <token>` and `slotB <token>`, and a single-mention tail entity.
//! Relation `r` holds for (head, tail) iff the token in slot `r mod 2`
//! belongs to the signal vocabulary of `r`. Confounded document pairs swap
//! the two slot tokens, so both head entities have the same token multiset
//! and hence the same average-pooled vector, while the labels differ.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Entity, Fact, Mention, RelationSchema, Span};
use crate::error::{Error, Result};

pub const SLOT_MARKERS: [&str; 2] = ["slotA", "slotB"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// One signal vocabulary per relation.
    pub signals: Vec<Vec<String>>,
    /// Slot tokens that trigger no relation.
    pub neutral: Vec<String>,
    /// Tail entity names.
    pub tails: Vec<String>,
    /// Tokens padding the sentence.
    pub filler: Vec<String>,
    pub filler_len: usize,
    pub documents: usize,
    /// Fraction of documents that belong to a confounded pair.
    pub confounded_ratio: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self::new(2, 20, 200, 0.3, 7)
    }
}

impl SynthSpec {
    /// `relations` signal vocabularies of `vocab_size` tokens each, plus a
    /// neutral set of the same size.
    pub fn new(relations: usize, vocab_size: usize, documents: usize, confounded_ratio: f64, seed: u64) -> Self {
        let names = |prefix: &str, n: usize| (0..n).map(|k| format!("{prefix}{k}")).collect::<Vec<_>>();
        Self {
            signals: (0..relations).map(|r| names(&format!("sig{r}_"), vocab_size)).collect(),
            neutral: names("neu", vocab_size),
            tails: names("tail", 5),
            filler: names("w", 10),
            filler_len: 2,
            documents,
            confounded_ratio,
            seed,
        }
    }

    /// Same vocabularies, different documents.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn with_documents(&self, documents: usize) -> Self {
        Self {
            documents,
            ..self.clone()
        }
    }

    pub fn relation_count(&self) -> usize {
        self.signals.len()
    }

    pub fn schema(&self) -> Result<RelationSchema> {
        RelationSchema::new((0..self.relation_count()).map(|r| format!("rel{r}")).collect())
    }

    /// Documents that belong to a confounded pair (always even).
    pub fn confounded_documents(&self) -> usize {
        let n = (self.confounded_ratio * self.documents as f64).round() as usize;
        n - n % 2
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: String| {
            Err(Error::Config {
                field: field.into(),
                message,
            })
        };
        if self.signals.is_empty() {
            return bad("signals", "need at least one relation".into());
        }
        if self.signals.iter().any(Vec::is_empty) || self.neutral.is_empty() || self.tails.is_empty() {
            return bad("signals", "vocabularies must be non-empty".into());
        }
        if self.filler_len > 0 && self.filler.is_empty() {
            return bad("filler", "filler tokens required when filler_len > 0".into());
        }
        if !(0.0..=1.0).contains(&self.confounded_ratio) {
            return bad("confounded_ratio", format!("{} is outside [0, 1]", self.confounded_ratio));
        }
        if self.documents == 0 {
            return bad("documents", "must be positive".into());
        }
        let mut owner: BTreeMap<&str, String> = BTreeMap::new();
        let groups = self
            .signals
            .iter()
            .enumerate()
            .map(|(r, s)| (format!("signal set {r}"), s))
            .chain([
                ("neutral set".to_string(), &self.neutral),
                ("tail set".to_string(), &self.tails),
                ("filler set".to_string(), &self.filler),
            ]);
        for (name, tokens) in groups {
            for t in tokens {
                if SLOT_MARKERS.contains(&t.as_str()) {
                    return bad("signals", format!("{name} reuses slot marker {t:?}"));
                }
                if let Some(prev) = owner.insert(t, name.clone()) {
                    return bad("signals", format!("token {t:?} occurs in both {prev} and {name}"));
                }
            }
        }
        Ok(())
    }

    /// Relations implied by the two slot tokens.
    pub fn labels(&self, slots: [&str; 2]) -> Vec<usize> {
        (0..self.relation_count())
            .filter(|&r| self.signals[r].iter().any(|t| t == slots[r % 2]))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub schema: RelationSchema,
    pub docs: Vec<Document>,
    /// Indices into `docs` of every confounded pair.
    pub confounded_pairs: Vec<(usize, usize)>,
}

fn build_document(spec: &SynthSpec, id: String, slots: [&str; 2], tail: &str, rng: &mut ChaCha8Rng) -> Document {
    let mut tokens: Vec<String> = Vec::new();
    let fill = |tokens: &mut Vec<String>, rng: &mut ChaCha8Rng| {
        for _ in 0..spec.filler_len {
            tokens.push(spec.filler.choose(rng).expect("validated").clone());
        }
    };
    let mut head_mentions = Vec::with_capacity(2);
    for (marker, token) in SLOT_MARKERS.iter().zip(slots) {
        fill(&mut tokens, rng);
        let start = tokens.len();
        tokens.push(marker.to_string());
        tokens.push(token.to_string());
        head_mentions.push(Mention {
            surface: format!("{marker} {token}"),
            sentence_index: 0,
            span: Span { start, end: start + 2 },
        });
    }
    fill(&mut tokens, rng);
    let tail_start = tokens.len();
    tokens.push(tail.to_string());
    fill(&mut tokens, rng);
    Document {
        id,
        sentences: vec![tokens],
        entities: vec![
            Entity {
                index: 0,
                entity_type: "HEAD".into(),
                mentions: head_mentions,
            },
            Entity {
                index: 1,
                entity_type: "TAIL".into(),
                mentions: vec![Mention {
                    surface: tail.to_string(),
                    sentence_index: 0,
                    span: Span {
                        start: tail_start,
                        end: tail_start + 1,
                    },
                }],
            },
        ],
        facts: spec
            .labels(slots)
            .into_iter()
            .map(|relation| Fact {
                head: 0,
                tail: 1,
                relation,
                evidence: vec![0],
            })
            .collect(),
    }
}

/// Deterministic in `spec.seed`.
pub fn synth_generate(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let schema = spec.schema()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let slot_pool: Vec<&String> = spec.signals.iter().flatten().chain(&spec.neutral).collect();
    let confounded = spec.confounded_documents();
    let mut docs = Vec::with_capacity(spec.documents);
    let mut pairs = Vec::new();
    let id = |k: usize| format!("synth-{}-{k:04}", spec.seed);

    while docs.len() + 1 < confounded {
        let r = rng.random_range(0..spec.relation_count());
        let signal = spec.signals[r].choose(&mut rng).expect("validated");
        let neutral = spec.neutral.choose(&mut rng).expect("validated");
        let tail = spec.tails.choose(&mut rng).expect("validated");
        let mut hit = [neutral.as_str(); 2];
        hit[r % 2] = signal;
        let mut miss = [signal.as_str(); 2];
        miss[r % 2] = neutral;
        let k = docs.len();
        docs.push(build_document(spec, id(k), hit, tail, &mut rng));
        docs.push(build_document(spec, id(k + 1), miss, tail, &mut rng));
        pairs.push((k, k + 1));
    }
    while docs.len() < spec.documents {
        let a = *slot_pool.choose(&mut rng).expect("validated");
        let b = *slot_pool.choose(&mut rng).expect("validated");
        let tail = spec.tails.choose(&mut rng).expect("validated");
        docs.push(build_document(spec, id(docs.len()), [a, b], tail, &mut rng));
    }
    Ok(SynthCorpus {
        schema,
        docs,
        confounded_pairs: pairs,
    })
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Exact token weights of an entity's average-pooled vector: with window 0
/// the pooled vector is `Σ_t w_t · E[t]` for any embedding table `E`.
fn avg_signature(doc: &Document, entity: usize) -> Vec<(String, u64, u64)> {
    let mentions = &doc.entities[entity].mentions;
    let q = mentions.len() as u64;
    let mut weights: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    for m in mentions {
        let toks = doc.mention_tokens(m);
        let den = q * toks.len() as u64;
        for t in toks {
            let w = weights.entry(t.clone()).or_insert((0, 1));
            let (n, d) = (w.0 * den + w.1, w.1 * den);
            let g = gcd(n, d);
            *w = (n / g, d / g);
        }
    }
    weights.into_iter().map(|(t, (n, d))| (t, n, d)).collect()
}

/// Best micro F1 reachable by any classifier whose input is the
/// average-pooled vector of unwindowed mention representations, under any
/// embedding table.
///
/// Instances sharing head signature, tail signature and relation get the same
/// input and so the same decision. Among such group-level decisions the F1
/// optimum predicts a prefix of the groups sorted by positive rate.
pub fn avg_pool_f1_ceiling(docs: &[Document], relations: usize) -> f64 {
    type Sig = (Vec<(String, u64, u64)>, Vec<(String, u64, u64)>, usize);
    let mut groups: BTreeMap<Sig, (usize, usize)> = BTreeMap::new();
    let mut gold = 0;
    for doc in docs {
        let positives: BTreeSet<(usize, usize, usize)> =
            doc.facts.iter().map(|f| (f.head, f.tail, f.relation)).collect();
        let n = doc.entities.len();
        let sigs: Vec<_> = (0..n).map(|e| avg_signature(doc, e)).collect();
        for h in 0..n {
            for t in (0..n).filter(|&t| t != h) {
                for r in 0..relations {
                    let g = groups.entry((sigs[h].clone(), sigs[t].clone(), r)).or_default();
                    g.0 += 1;
                    if positives.contains(&(h, t, r)) {
                        g.1 += 1;
                        gold += 1;
                    }
                }
            }
        }
    }
    if gold == 0 {
        return 0.0;
    }
    let mut counts: Vec<(usize, usize)> = groups.into_values().filter(|&(_, p)| p > 0).collect();
    // descending positive rate: p1/n1 > p2/n2  ⇔  p1·n2 > p2·n1
    counts.sort_by(|a, b| (b.1 * a.0).cmp(&(a.1 * b.0)));
    let (mut tp, mut predicted, mut best) = (0, 0, 0.0f64);
    for (n, p) in counts {
        tp += p;
        predicted += n;
        best = best.max(2.0 * tp as f64 / (predicted + gold) as f64);
    }
    best
}
