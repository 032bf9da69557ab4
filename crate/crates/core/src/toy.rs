//! A two-document corpus small enough for exhaustive gradient checks.

use crate::corpus::{parse_docred, Document, RelationSchema};
use crate::error::Result;
use crate::model::ModelConfig;

pub const TOY_JSON: &str = r#"[
  {
    "title": "toy-1",
    "sents": [["Ada", "Lovelace", "was", "born", "in", "London", "."],
              ["Lovelace", "worked", "with", "Babbage", "in", "the", "city", "."]],
    "vertexSet": [
      [{"name": "Ada Lovelace", "sent_id": 0, "pos": [0, 2], "type": "PER"},
       {"name": "Lovelace", "sent_id": 1, "pos": [0, 1], "type": "PER"}],
      [{"name": "London", "sent_id": 0, "pos": [5, 6], "type": "LOC"},
       {"name": "the city", "sent_id": 1, "pos": [5, 7], "type": "LOC"}],
      [{"name": "Babbage", "sent_id": 1, "pos": [3, 4], "type": "PER"}]
    ],
    "labels": [
      {"h": 0, "t": 1, "r": "born_in", "evidence": [0]},
      {"h": 0, "t": 2, "r": "colleague", "evidence": [1]},
      {"h": 2, "t": 0, "r": "colleague", "evidence": [1]}
    ]
  },
  {
    "title": "toy-2",
    "sents": [["Turing", "lived", "in", "Wilmslow", "."],
              ["He", "studied", "in", "Cambridge", "and", "Turing", "taught", "there", "."]],
    "vertexSet": [
      [{"name": "Turing", "sent_id": 0, "pos": [0, 1], "type": "PER"},
       {"name": "He", "sent_id": 1, "pos": [0, 1], "type": "PER"},
       {"name": "Turing", "sent_id": 1, "pos": [5, 6], "type": "PER"}],
      [{"name": "Wilmslow", "sent_id": 0, "pos": [3, 4], "type": "LOC"}],
      [{"name": "Cambridge", "sent_id": 1, "pos": [3, 4], "type": "LOC"},
       {"name": "there", "sent_id": 1, "pos": [7, 8], "type": "LOC"}]
    ],
    "labels": [
      {"h": 0, "t": 1, "r": "lived_in", "evidence": [0]},
      {"h": 0, "t": 2, "r": "lived_in", "evidence": [1]}
    ]
  }
]"#;

pub fn toy_schema() -> RelationSchema {
    RelationSchema::new(vec!["born_in".into(), "colleague".into(), "lived_in".into()]).expect("static schema")
}

pub fn toy_corpus() -> Result<(RelationSchema, Vec<Document>)> {
    let schema = toy_schema();
    let docs = parse_docred(TOY_JSON.as_bytes(), &schema)?;
    Ok((schema, docs))
}

/// Tiny dimensions; `bilinear_dim` differs from `mention_dim` so the
/// reduction matrix is exercised.
pub fn toy_config() -> ModelConfig {
    ModelConfig {
        mention_dim: 4,
        proto_dim: Some(3),
        bilinear_dim: 3,
        mlp_hidden: Some(3),
        window: 1,
        min_count: 1,
        ..ModelConfig::default()
    }
}
