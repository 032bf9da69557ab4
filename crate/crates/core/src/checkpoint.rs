//! Versioned binary checkpoints.
//!
//! Layout: the magic line `RELMCKPT\n`, one line of JSON header, then every
//! parameter value as little-endian `f64` in [`Model::params`] order. The
//! header carries no timestamps, so equal models give equal bytes.

use serde::{Deserialize, Serialize};

use crate::corpus::RelationSchema;
use crate::encoder::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::training::TrainConfig;

pub const MAGIC: &[u8] = b"RELMCKPT\n";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabHeader {
    pub tokens: Vec<String>,
    pub lowercase: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamHeader {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub model: ModelConfig,
    pub relations: Vec<String>,
    pub vocab: Option<VocabHeader>,
    pub threshold: f64,
    pub seed: u64,
    pub train: Option<TrainConfig>,
    pub params: Vec<ParamHeader>,
}

/// A trained model plus what is needed to use it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub threshold: f64,
    pub seed: u64,
    pub train: Option<TrainConfig>,
}

fn err(message: impl Into<String>) -> Error {
    Error::Checkpoint(message.into())
}

impl Checkpoint {
    pub fn header(&self) -> Header {
        Header {
            format_version: FORMAT_VERSION,
            model: self.model.config.clone(),
            relations: self.model.schema.names().to_vec(),
            vocab: self.model.vocab.as_ref().map(|v| VocabHeader {
                tokens: v.tokens().to_vec(),
                lowercase: v.lowercase(),
            }),
            threshold: self.threshold,
            seed: self.seed,
            train: self.train.clone(),
            params: self
                .model
                .params()
                .into_iter()
                .map(|(name, p)| ParamHeader {
                    name,
                    rows: p.value.rows(),
                    cols: p.value.cols(),
                })
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend(serde_json::to_vec(&self.header()).expect("header serializes"));
        out.push(b'\n');
        for (_, p) in self.model.params() {
            for x in p.value.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let rest = bytes.strip_prefix(MAGIC).ok_or_else(|| err("missing RELMCKPT magic"))?;
        let newline = rest.iter().position(|&b| b == b'\n').ok_or_else(|| err("unterminated header"))?;
        let header: Header =
            serde_json::from_slice(&rest[..newline]).map_err(|e| err(format!("bad header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(err(format!("unsupported format version {}", header.format_version)));
        }
        let schema = RelationSchema::new(header.relations.clone())?;
        let vocab = header
            .vocab
            .as_ref()
            .map(|v| Vocabulary::from_tokens(v.tokens.clone(), v.lowercase))
            .transpose()?;
        let mut model = Model::new(header.model.clone(), schema, vocab, header.seed)?;

        let expected: Vec<(String, usize, usize)> = model
            .params()
            .into_iter()
            .map(|(n, p)| (n, p.value.rows(), p.value.cols()))
            .collect();
        if expected.len() != header.params.len() {
            return Err(err(format!(
                "checkpoint lists {} parameters, model expects {}",
                header.params.len(),
                expected.len()
            )));
        }
        for ((name, rows, cols), h) in expected.iter().zip(&header.params) {
            if name != &h.name || (*rows, *cols) != (h.rows, h.cols) {
                return Err(err(format!(
                    "parameter {} has shape {}x{} in the checkpoint but model expects {name} with shape {rows}x{cols}",
                    h.name, h.rows, h.cols
                )));
            }
        }

        let mut payload = rest[newline + 1..].chunks_exact(8);
        let total: usize = expected.iter().map(|(_, r, c)| r * c).sum();
        if payload.len() != total || !payload.remainder().is_empty() {
            return Err(err(format!(
                "payload holds {} bytes, expected {}",
                rest.len() - newline - 1,
                total * 8
            )));
        }
        for p in model.params_mut() {
            for x in p.value.data_mut() {
                let chunk = payload.next().expect("length checked");
                *x = f64::from_le_bytes(chunk.try_into().expect("chunk of 8"));
            }
        }
        Ok(Self {
            model,
            threshold: header.threshold,
            seed: header.seed,
            train: header.train,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::Aggregator;
    use crate::encoder::build_vocab;
    use crate::toy::{toy_config, toy_corpus};

    fn toy_checkpoint(aggregator: Aggregator) -> Checkpoint {
        let (schema, docs) = toy_corpus().unwrap();
        let config = ModelConfig {
            aggregator,
            ..toy_config()
        };
        let vocab = build_vocab(&docs, 1, false).unwrap();
        Checkpoint {
            model: Model::new(config, schema, Some(vocab), 3).unwrap(),
            threshold: 0.4,
            seed: 3,
            train: Some(TrainConfig::dwie()),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        for agg in [Aggregator::Avg, Aggregator::Rsman] {
            let ck = toy_checkpoint(agg);
            let bytes = ck.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn shape_mismatch_names_parameter() {
        let ck = toy_checkpoint(Aggregator::Rsman);
        let mut header = ck.header();
        header.params[0].cols += 1;
        let mut bytes = MAGIC.to_vec();
        bytes.extend(serde_json::to_vec(&header).unwrap());
        bytes.push(b'\n');
        let msg = Checkpoint::from_bytes(&bytes).unwrap_err().to_string();
        assert!(msg.contains("embeddings") && msg.contains("shape"), "{msg}");
    }

    #[test]
    fn truncated_payload_rejected() {
        let bytes = toy_checkpoint(Aggregator::Avg).to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::from_bytes(b"nope").is_err());
    }
}
