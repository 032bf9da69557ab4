//! Mention representations.
//!
//! In self-contained mode a mention is the mean of trainable token embeddings
//! over its span (optionally widened by a context window). In external mode
//! the vectors come from a MEMB1 file produced by some other encoder and are
//! treated as constants.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Mention, MentionEmbeddings};
use crate::error::{Error, Result};
use crate::numerics::{axpy, Param, Tensor2};

pub const UNK: usize = 0;
pub const PAD: usize = 1;
const UNK_TOKEN: &str = "<unk>";
const PAD_TOKEN: &str = "<pad>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    lowercase: bool,
    #[serde(skip)]
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    /// Rebuilds a vocabulary from its token list (ids are positions).
    pub fn from_tokens(tokens: Vec<String>, lowercase: bool) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(UNK_TOKEN)
            || tokens.get(1).map(String::as_str) != Some(PAD_TOKEN)
        {
            return Err(Error::Config {
                field: "vocabulary".into(),
                message: "must start with <unk> and <pad>".into(),
            });
        }
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Self {
            tokens,
            lowercase,
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn id(&self, token: &str) -> usize {
        let found = if self.lowercase {
            self.ids.get(&token.to_lowercase())
        } else {
            self.ids.get(token)
        };
        found.copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }
}

/// Counts tokens over every sentence; tokens seen fewer than `min_count`
/// times fall back to UNK. Ids are assigned by descending frequency, ties
/// broken lexicographically.
pub fn build_vocab(docs: &[Document], min_count: usize, lowercase: bool) -> Result<Vocabulary> {
    if min_count == 0 {
        return Err(Error::Config {
            field: "min_count".into(),
            message: "must be at least 1".into(),
        });
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for token in docs.iter().flat_map(|d| d.sentences.iter().flatten()) {
        let key = if lowercase {
            token.to_lowercase()
        } else {
            token.clone()
        };
        *counts.entry(key).or_default() += 1;
    }
    if counts.is_empty() {
        return Err(Error::Empty("build_vocab"));
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_count && t != UNK_TOKEN && t != PAD_TOKEN)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let tokens = [UNK_TOKEN.to_string(), PAD_TOKEN.to_string()]
        .into_iter()
        .chain(kept.into_iter().map(|(t, _)| t))
        .collect();
    Vocabulary::from_tokens(tokens, lowercase)
}

/// Trainable token embeddings, one row per vocabulary entry.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub param: Param,
}

impl EmbeddingTable {
    /// Uniform in `[-0.5/dim, 0.5/dim]`.
    pub fn init<R: Rng>(vocab_size: usize, dim: usize, rng: &mut R) -> Self {
        let bound = 0.5 / dim as f64;
        let data = (0..vocab_size * dim)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Self {
            param: Param::new(Tensor2::from_vec(vocab_size, dim, data).expect("sized")),
        }
    }

    pub fn dim(&self) -> usize {
        self.param.value.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.param.value.rows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Trained,
    Precomputed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MentionRepr {
    pub vector: Vec<f64>,
    pub provenance: Provenance,
}

impl AsRef<[f64]> for MentionRepr {
    fn as_ref(&self) -> &[f64] {
        &self.vector
    }
}

/// Tokens in `[start − window, end + window)`, clipped to the sentence.
pub fn mention_window<'d>(doc: &'d Document, mention: &Mention, window: usize) -> &'d [String] {
    let sentence = &doc.sentences[mention.sentence_index];
    let start = mention.span.start.saturating_sub(window);
    let end = (mention.span.end + window).min(sentence.len());
    &sentence[start..end]
}

pub fn mention_token_ids(doc: &Document, mention: &Mention, vocab: &Vocabulary, window: usize) -> Vec<usize> {
    mention_window(doc, mention, window)
        .iter()
        .map(|t| vocab.id(t))
        .collect()
}

/// Mean of the embedding rows for `ids`.
pub fn encode_tokens(ids: &[usize], table: &EmbeddingTable) -> Vec<f64> {
    let mut out = vec![0.0; table.dim()];
    for &id in ids {
        axpy(&mut out, 1.0, table.param.value.row(id));
    }
    let n = ids.len() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    out
}

/// Adds `upstream / len` to each touched row's gradient.
pub fn encode_tokens_backward(ids: &[usize], table: &mut EmbeddingTable, upstream: &[f64]) {
    let scale = 1.0 / ids.len() as f64;
    for &id in ids {
        axpy(table.param.grad.row_mut(id), scale, upstream);
    }
}

pub fn encode_mention(
    doc: &Document,
    mention: &Mention,
    table: &EmbeddingTable,
    vocab: &Vocabulary,
    window: usize,
) -> MentionRepr {
    MentionRepr {
        vector: encode_tokens(&mention_token_ids(doc, mention, vocab, window), table),
        provenance: Provenance::Trained,
    }
}

pub enum MentionSource<'a> {
    Table {
        table: &'a EmbeddingTable,
        vocab: &'a Vocabulary,
        window: usize,
    },
    Precomputed(&'a MentionEmbeddings),
}

/// Mention representations for every entity, in mention order.
pub fn encode_all(doc: &Document, source: &MentionSource<'_>) -> Result<Vec<Vec<MentionRepr>>> {
    doc.entities
        .iter()
        .map(|entity| {
            entity
                .mentions
                .iter()
                .enumerate()
                .map(|(j, mention)| match source {
                    MentionSource::Table { table, vocab, window } => {
                        Ok(encode_mention(doc, mention, table, vocab, *window))
                    }
                    MentionSource::Precomputed(store) => store
                        .get(&doc.id, entity.index, j)
                        .map(|v| MentionRepr {
                            vector: v.iter().map(|&x| f64::from(x)).collect(),
                            provenance: Provenance::Precomputed,
                        })
                        .ok_or_else(|| Error::MissingMention {
                            doc: doc.id.clone(),
                            entity: entity.index,
                            mention: j,
                        }),
                })
                .collect()
        })
        .collect()
}
