//! Documents, entities, mentions and gold facts.
//!
//! Input is the DocRED JSON layout: an array of objects with `title`, `sents`,
//! `vertexSet` and an optional `labels` list. Mention positions are
//! sentence-relative half-open token intervals.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-open token interval `[start, end)` within one sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mention {
    pub surface: String,
    pub sentence_index: usize,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub index: usize,
    pub entity_type: String,
    pub mentions: Vec<Mention>,
}

impl Entity {
    pub fn mention_count(&self) -> usize {
        self.mentions.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fact {
    pub head: usize,
    pub tail: usize,
    pub relation: usize,
    pub evidence: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub sentences: Vec<Vec<String>>,
    pub entities: Vec<Entity>,
    pub facts: Vec<Fact>,
}

impl Document {
    /// Checks every structural invariant of the document model.
    pub fn validate(&self, relation_count: usize) -> Result<()> {
        let fail = |message: String| Error::Validation {
            doc: self.id.clone(),
            message,
        };
        for (i, entity) in self.entities.iter().enumerate() {
            if entity.index != i {
                return Err(fail(format!("entity at position {i} has index {}", entity.index)));
            }
            if entity.mentions.is_empty() {
                return Err(fail(format!("entity {i} has no mentions")));
            }
            for (j, m) in entity.mentions.iter().enumerate() {
                let Some(sentence) = self.sentences.get(m.sentence_index) else {
                    return Err(fail(format!(
                        "entity {i} mention {j}: sentence {} out of range ({} sentences)",
                        m.sentence_index,
                        self.sentences.len()
                    )));
                };
                if m.span.is_empty() || m.span.end > sentence.len() {
                    return Err(fail(format!(
                        "entity {i} mention {j}: span [{}, {}) invalid for sentence of {} tokens",
                        m.span.start,
                        m.span.end,
                        sentence.len()
                    )));
                }
            }
        }
        for (k, fact) in self.facts.iter().enumerate() {
            if fact.head >= self.entities.len() || fact.tail >= self.entities.len() {
                return Err(fail(format!(
                    "fact {k}: entity index out of range ({} entities)",
                    self.entities.len()
                )));
            }
            if fact.head == fact.tail {
                return Err(fail(format!("fact {k}: head equals tail")));
            }
            if fact.relation >= relation_count {
                return Err(fail(format!("fact {k}: relation id {} unknown", fact.relation)));
            }
            if let Some(&e) = fact.evidence.iter().find(|&&e| e >= self.sentences.len()) {
                return Err(fail(format!("fact {k}: evidence sentence {e} out of range")));
            }
        }
        Ok(())
    }

    /// Tokens covered by a mention.
    pub fn mention_tokens(&self, mention: &Mention) -> &[String] {
        &self.sentences[mention.sentence_index][mention.span.start..mention.span.end]
    }

    pub fn mention_counts(&self) -> Vec<usize> {
        self.entities.iter().map(Entity::mention_count).collect()
    }
}

/// The ordered relation inventory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationSchema {
    names: Vec<String>,
    ids: HashMap<String, usize>,
}

impl RelationSchema {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Schema("at least one relation is required".into()));
        }
        let mut ids = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if ids.insert(name.clone(), i).is_some() {
                return Err(Error::Schema(format!("duplicate relation name {name:?}")));
            }
        }
        Ok(Self { names, ids })
    }

    /// Reads either a JSON array of names or a DocRED `rel_info.json` object
    /// (`{"P17": "country", ...}`), in which case the keys are the names.
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| parse_error(bytes, &e))?;
        let names = match value {
            serde_json::Value::Array(items) => items
                .into_iter()
                .map(|v| match v {
                    serde_json::Value::String(s) => Ok(s),
                    other => Err(Error::Schema(format!("relation name must be a string, got {other}"))),
                })
                .collect::<Result<Vec<_>>>()?,
            serde_json::Value::Object(map) => map.into_iter().map(|(k, _)| k).collect(),
            _ => return Err(Error::Schema("expected an array or object".into())),
        };
        Self::new(names)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.names).expect("strings serialize")
    }

    pub fn count(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.ids.get(name).copied()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawMention {
    name: String,
    sent_id: usize,
    pos: Vec<usize>,
    #[serde(rename = "type", default)]
    entity_type: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawLabel {
    h: usize,
    t: usize,
    r: String,
    #[serde(default)]
    evidence: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawDocument {
    title: String,
    sents: Vec<Vec<String>>,
    #[serde(rename = "vertexSet")]
    vertex_set: Vec<Vec<RawMention>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<RawLabel>>,
}

fn parse_error(bytes: &[u8], err: &serde_json::Error) -> Error {
    // serde_json reports 1-based line and column; convert to a byte offset.
    let mut offset = 0;
    for (n, line) in bytes.split(|&b| b == b'\n').enumerate() {
        if n + 1 == err.line() {
            offset += err.column().saturating_sub(1).min(line.len());
            break;
        }
        offset += line.len() + 1;
    }
    Error::Parse {
        offset: offset.min(bytes.len()),
        message: err.to_string(),
    }
}

fn parse_raw(bytes: &[u8]) -> Result<Vec<RawDocument>> {
    serde_json::from_slice(bytes).map_err(|e| parse_error(bytes, &e))
}

/// Every relation name used in the `labels` of a DocRED file, sorted.
pub fn relation_names_in(bytes: &[u8]) -> Result<BTreeSet<String>> {
    Ok(parse_raw(bytes)?
        .into_iter()
        .flat_map(|d| d.labels.unwrap_or_default())
        .map(|l| l.r)
        .collect())
}

/// Parses a DocRED-format JSON array and validates every document.
pub fn parse_docred(bytes: &[u8], schema: &RelationSchema) -> Result<Vec<Document>> {
    parse_raw(bytes)?
        .into_iter()
        .map(|raw| convert(raw, schema))
        .collect()
}

fn convert(raw: RawDocument, schema: &RelationSchema) -> Result<Document> {
    let doc_id = raw.title;
    let fail = |message: String| Error::Validation {
        doc: doc_id.clone(),
        message,
    };
    let mut entities = Vec::with_capacity(raw.vertex_set.len());
    for (index, vertex) in raw.vertex_set.into_iter().enumerate() {
        let entity_type = vertex.first().map(|m| m.entity_type.clone()).unwrap_or_default();
        let mut mentions = Vec::with_capacity(vertex.len());
        for (j, m) in vertex.into_iter().enumerate() {
            let [start, end] = m.pos[..] else {
                return Err(fail(format!(
                    "entity {index} mention {j}: pos must hold two offsets, got {:?}",
                    m.pos
                )));
            };
            mentions.push(Mention {
                surface: m.name,
                sentence_index: m.sent_id,
                span: Span { start, end },
            });
        }
        entities.push(Entity {
            index,
            entity_type,
            mentions,
        });
    }
    let facts = raw
        .labels
        .unwrap_or_default()
        .into_iter()
        .map(|label| {
            let relation = schema
                .id(&label.r)
                .ok_or_else(|| fail(format!("unknown relation {:?}", label.r)))?;
            Ok(Fact {
                head: label.h,
                tail: label.t,
                relation,
                evidence: label.evidence,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let doc = Document {
        id: doc_id.clone(),
        sentences: raw.sents,
        entities,
        facts,
    };
    doc.validate(schema.count())?;
    Ok(doc)
}

/// Writes documents back out in the DocRED layout.
pub fn to_docred_json(docs: &[Document], schema: &RelationSchema) -> Result<Vec<u8>> {
    let raw: Vec<RawDocument> = docs
        .iter()
        .map(|doc| {
            let labels = doc
                .facts
                .iter()
                .map(|f| {
                    let r = schema.name(f.relation).ok_or_else(|| Error::Validation {
                        doc: doc.id.clone(),
                        message: format!("relation id {} not in schema", f.relation),
                    })?;
                    Ok(RawLabel {
                        h: f.head,
                        t: f.tail,
                        r: r.to_string(),
                        evidence: f.evidence.clone(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(RawDocument {
                title: doc.id.clone(),
                sents: doc.sentences.clone(),
                vertex_set: doc
                    .entities
                    .iter()
                    .map(|e| {
                        e.mentions
                            .iter()
                            .map(|m| RawMention {
                                name: m.surface.clone(),
                                sent_id: m.sentence_index,
                                pos: vec![m.span.start, m.span.end],
                                entity_type: e.entity_type.clone(),
                            })
                            .collect()
                    })
                    .collect(),
                labels: Some(labels),
            })
        })
        .collect::<Result<_>>()?;
    Ok(serde_json::to_vec(&raw).expect("document model serializes"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub documents: usize,
    pub entities: usize,
    pub mentions: usize,
    pub facts: usize,
    /// Distinct relation ids that occur in at least one fact.
    pub relations_observed: usize,
    pub avg_mentions_per_entity: f64,
    /// Fraction of entities with two or more mentions.
    pub multi_mention_share: f64,
}

pub fn corpus_stats(docs: &[Document]) -> Result<StatsReport> {
    if docs.is_empty() {
        return Err(Error::Empty("corpus_stats"));
    }
    let mut entities = 0;
    let mut mentions = 0;
    let mut multi = 0;
    let mut facts = 0;
    let mut relations = BTreeSet::new();
    for doc in docs {
        for e in &doc.entities {
            entities += 1;
            mentions += e.mentions.len();
            if e.mentions.len() >= 2 {
                multi += 1;
            }
        }
        facts += doc.facts.len();
        relations.extend(doc.facts.iter().map(|f| f.relation));
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(StatsReport {
        documents: docs.len(),
        entities,
        mentions,
        facts,
        relations_observed: relations.len(),
        avg_mentions_per_entity: ratio(mentions, entities),
        multi_mention_share: ratio(multi, entities),
    })
}

/// Lowercases and collapses whitespace.
pub fn normalize_name(name: &str) -> String {
    name.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Normalized surface strings of every mention of an entity.
pub fn entity_names(entity: &Entity) -> BTreeSet<String> {
    entity.mentions.iter().map(|m| normalize_name(&m.surface)).collect()
}

/// Relation facts seen in a training split, keyed by entity name sets.
///
/// A query matches when some stored fact has the same relation, a head name
/// set sharing at least one name with the query head, and likewise for the
/// tail.
#[derive(Debug, Clone, Default)]
pub struct FactIndex {
    // (relation, head name) -> ids of stored facts
    by_head: HashMap<(usize, String), Vec<usize>>,
    tails: Vec<BTreeSet<String>>,
}

impl FactIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn build(train_docs: &[Document]) -> Self {
        let mut index = Self::new();
        for doc in train_docs {
            index.add_document(doc);
        }
        index
    }

    pub fn add_document(&mut self, doc: &Document) {
        for fact in &doc.facts {
            let id = self.tails.len();
            self.tails.push(entity_names(&doc.entities[fact.tail]));
            for name in entity_names(&doc.entities[fact.head]) {
                self.by_head.entry((fact.relation, name)).or_default().push(id);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.tails.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tails.is_empty()
    }

    pub fn contains(
        &self,
        head_names: &BTreeSet<String>,
        tail_names: &BTreeSet<String>,
        relation: usize,
    ) -> bool {
        head_names.iter().any(|h| {
            self.by_head
                .get(&(relation, h.clone()))
                .is_some_and(|ids| ids.iter().any(|&id| !self.tails[id].is_disjoint(tail_names)))
        })
    }

    /// Membership for the fact `(head, relation, tail)` of `doc`.
    pub fn contains_fact(&self, doc: &Document, head: usize, tail: usize, relation: usize) -> bool {
        self.contains(
            &entity_names(&doc.entities[head]),
            &entity_names(&doc.entities[tail]),
            relation,
        )
    }
}

/// Identifies one mention across a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MentionKey {
    pub doc: String,
    pub entity: usize,
    pub mention: usize,
}

/// Precomputed mention vectors loaded from a MEMB1 file.
#[derive(Debug, Clone, PartialEq)]
pub struct MentionEmbeddings {
    dim: usize,
    vectors: BTreeMap<MentionKey, Vec<f32>>,
}

pub const MEMB1_MAGIC: &[u8] = b"MEMB1\n";

#[derive(Serialize, Deserialize)]
struct Memb1Header {
    dim: usize,
    count: usize,
}

impl MentionEmbeddings {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, doc: &str, entity: usize, mention: usize) -> Option<&[f32]> {
        self.vectors
            .get(&MentionKey {
                doc: doc.to_string(),
                entity,
                mention,
            })
            .map(Vec::as_slice)
    }

    pub fn insert(&mut self, key: MentionKey, vector: Vec<f32>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::EmbeddingLoad {
                record: self.vectors.len(),
                message: format!("vector of {} values, expected {}", vector.len(), self.dim),
            });
        }
        self.vectors.insert(key, vector);
        Ok(())
    }

    /// Errors on the first corpus mention without a vector.
    pub fn check_coverage(&self, docs: &[Document]) -> Result<()> {
        for doc in docs {
            for entity in &doc.entities {
                for j in 0..entity.mentions.len() {
                    if self.get(&doc.id, entity.index, j).is_none() {
                        return Err(Error::MissingMention {
                            doc: doc.id.clone(),
                            entity: entity.index,
                            mention: j,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Serializes to MEMB1, records in key order.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = MEMB1_MAGIC.to_vec();
        let header = Memb1Header {
            dim: self.dim,
            count: self.vectors.len(),
        };
        out.extend(serde_json::to_vec(&header).expect("header serializes"));
        out.push(b'\n');
        for (record, (key, vector)) in self.vectors.iter().enumerate() {
            if key.doc.contains(['\t', '\n']) {
                return Err(Error::EmbeddingLoad {
                    record,
                    message: format!("document id {:?} contains a tab or newline", key.doc),
                });
            }
            out.extend(format!("{}\t{}\t{}\n", key.doc, key.entity, key.mention).bytes());
            for v in vector {
                out.extend(v.to_le_bytes());
            }
        }
        Ok(out)
    }
}

/// Reads a MEMB1 file.
///
/// `expected_dim`, when given, must equal the header's dimension.
pub fn load_mention_embeddings(bytes: &[u8], expected_dim: Option<usize>) -> Result<MentionEmbeddings> {
    let err = |record: usize, message: String| Error::EmbeddingLoad { record, message };
    let rest = bytes
        .strip_prefix(MEMB1_MAGIC)
        .ok_or_else(|| err(0, "missing MEMB1 magic".into()))?;
    let header_end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| err(0, "truncated header".into()))?;
    let header: Memb1Header = serde_json::from_slice(&rest[..header_end])
        .map_err(|e| err(0, format!("bad header: {e}")))?;
    if header.dim == 0 {
        return Err(err(0, "dimension must be positive".into()));
    }
    if let Some(dim) = expected_dim {
        if dim != header.dim {
            return Err(err(0, format!("dimension {} but {dim} expected", header.dim)));
        }
    }
    let mut cursor = &rest[header_end + 1..];
    let mut out = MentionEmbeddings::new(header.dim);
    for record in 0..header.count {
        let line_end = cursor
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| err(record, "truncated key line".into()))?;
        let line = std::str::from_utf8(&cursor[..line_end])
            .map_err(|_| err(record, "key line is not UTF-8".into()))?;
        let key = parse_key(line).ok_or_else(|| err(record, format!("malformed key line {line:?}")))?;
        cursor = &cursor[line_end + 1..];
        let width = header.dim * 4;
        if cursor.len() < width {
            return Err(err(
                record,
                format!(
                    "truncated vector: {} of {} floats present",
                    cursor.len() / 4,
                    header.dim
                ),
            ));
        }
        let vector: Vec<f32> = cursor[..width]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(err(record, "non-finite value".into()));
        }
        cursor = &cursor[width..];
        if out.vectors.insert(key.clone(), vector).is_some() {
            return Err(err(record, format!("duplicate key {key:?}")));
        }
    }
    if !cursor.is_empty() {
        return Err(err(
            header.count,
            format!("{} trailing bytes after {} records", cursor.len(), header.count),
        ));
    }
    Ok(out)
}

fn parse_key(line: &str) -> Option<MentionKey> {
    let mut parts = line.split('\t');
    let doc = parts.next()?.to_string();
    let entity = parts.next()?.parse().ok()?;
    let mention = parts.next()?.parse().ok()?;
    if parts.next().is_some() {
        return None;
    }
    Some(MentionKey { doc, entity, mention })
}
