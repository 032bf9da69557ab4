//! Micro F1, Ign F1 and the All/M1/M2 mention-count subsets.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::Serialize;

use crate::classifier::{check_threshold, PairScore, PredictionSet, TripleKey};
use crate::corpus::{Document, FactIndex};
use crate::error::{Error, Result};
use crate::model::{Model, PreparedDoc};

/// Which in-train predictions Ign F1 discards.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum IgnPolicy {
    /// Every predicted triple found in the index leaves both TP and FP.
    #[default]
    Literal,
    /// Only correct in-train predictions leave the precision counts, as in
    /// the DocRED evaluation script.
    Official,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ign_precision: f64,
    pub ign_f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub ign_tp: usize,
    pub ign_fp: usize,
    /// Predictions dropped from the Ign counts.
    pub ignored: usize,
}

/// `num / den`, or 0 when `den` is 0.
pub fn safe_ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean with the 0/0 → 0 convention.
pub fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Every gold `(doc, h, t, r)` of the corpus.
pub fn gold_triples(docs: &[Document]) -> BTreeSet<TripleKey> {
    docs.iter()
        .flat_map(|d| {
            d.facts.iter().map(|f| TripleKey {
                doc: d.id.clone(),
                head: f.head,
                tail: f.tail,
                relation: f.relation,
            })
        })
        .collect()
}

/// Micro precision, recall and F1 of `pred` against `gold`. The Ign fields
/// repeat the plain ones.
pub fn micro_f1<'a>(pred: impl IntoIterator<Item = &'a TripleKey>, gold: &BTreeSet<TripleKey>) -> MetricReport {
    let mut tp = 0;
    let mut predicted = 0;
    for key in pred {
        predicted += 1;
        if gold.contains(key) {
            tp += 1;
        }
    }
    let precision = safe_ratio(tp, predicted);
    let recall = safe_ratio(tp, gold.len());
    let f1 = harmonic(precision, recall);
    MetricReport {
        precision,
        recall,
        f1,
        ign_precision: precision,
        ign_f1: f1,
        tp,
        fp: predicted - tp,
        fn_: gold.len() - tp,
        ign_tp: tp,
        ign_fp: predicted - tp,
        ignored: 0,
    }
}

fn doc_lookup(docs: &[Document]) -> HashMap<&str, &Document> {
    docs.iter().map(|d| (d.id.as_str(), d)).collect()
}

fn lookup<'a>(map: &HashMap<&str, &'a Document>, key: &TripleKey) -> Result<&'a Document> {
    let doc = map.get(key.doc.as_str()).ok_or_else(|| Error::Validation {
        doc: key.doc.clone(),
        message: "prediction refers to a document outside the evaluated split".into(),
    })?;
    if key.head >= doc.entities.len() || key.tail >= doc.entities.len() {
        return Err(Error::Validation {
            doc: key.doc.clone(),
            message: format!("prediction ({}, {}) names a missing entity", key.head, key.tail),
        });
    }
    Ok(doc)
}

/// Micro F1 plus Ign F1 against the facts of `docs`. Without an index the
/// Ign fields equal the plain ones.
pub fn ign_f1(pred: &PredictionSet, docs: &[Document], index: Option<&FactIndex>, policy: IgnPolicy) -> Result<MetricReport> {
    let gold = gold_triples(docs);
    let mut report = micro_f1(pred.keys(), &gold);
    let Some(index) = index else {
        return Ok(report);
    };
    let map = doc_lookup(docs);
    let (mut ign_tp, mut ign_fp, mut ignored) = (0, 0, 0);
    for key in pred.keys() {
        let doc = lookup(&map, key)?;
        let correct = gold.contains(key);
        let in_train = index.contains_fact(doc, key.head, key.tail, key.relation);
        let drop = in_train && (policy == IgnPolicy::Literal || correct);
        if drop {
            ignored += 1;
        } else if correct {
            ign_tp += 1;
        } else {
            ign_fp += 1;
        }
    }
    report.ign_tp = ign_tp;
    report.ign_fp = ign_fp;
    report.ignored = ignored;
    report.ign_precision = safe_ratio(ign_tp, ign_tp + ign_fp);
    report.ign_f1 = harmonic(report.ign_precision, report.recall);
    Ok(report)
}

/// Convenience wrapper used during training.
pub fn evaluate_predictions(pred: &PredictionSet, docs: &[Document], index: &FactIndex, policy: IgnPolicy) -> Result<MetricReport> {
    ign_f1(pred, docs, Some(index), policy)
}

/// Mention-count subsets of the evaluation instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Subset {
    All,
    M1,
    M2,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::All, Subset::M1, Subset::M2];

    /// Membership given the mention counts of head and tail.
    pub fn admits(self, head_mentions: usize, tail_mentions: usize) -> bool {
        let q = head_mentions.max(tail_mentions);
        match self {
            Subset::All => true,
            Subset::M1 => q > 1,
            Subset::M2 => q > 2,
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subset::All => "All",
            Subset::M1 => "M1",
            Subset::M2 => "M2",
        })
    }
}

fn key_in(subset: Subset, key: &TripleKey, map: &HashMap<&str, &Document>) -> Result<bool> {
    let doc = lookup(map, key)?;
    Ok(subset.admits(
        doc.entities[key.head].mentions.len(),
        doc.entities[key.tail].mentions.len(),
    ))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SubsetPartition {
    pub all: BTreeSet<TripleKey>,
    pub m1: BTreeSet<TripleKey>,
    pub m2: BTreeSet<TripleKey>,
}

impl SubsetPartition {
    pub fn get(&self, subset: Subset) -> &BTreeSet<TripleKey> {
        match subset {
            Subset::All => &self.all,
            Subset::M1 => &self.m1,
            Subset::M2 => &self.m2,
        }
    }
}

/// Splits gold instances into the nested All ⊇ M1 ⊇ M2 sets.
pub fn subset_partition(gold: &BTreeSet<TripleKey>, docs: &[Document]) -> Result<SubsetPartition> {
    let map = doc_lookup(docs);
    let mut out = SubsetPartition::default();
    for key in gold {
        out.all.insert(key.clone());
        if key_in(Subset::M1, key, &map)? {
            out.m1.insert(key.clone());
        }
        if key_in(Subset::M2, key, &map)? {
            out.m2.insert(key.clone());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetRow {
    pub subset: Subset,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold: usize,
    pub predicted: usize,
    pub tp: usize,
}

/// Scores restricted to each subset; the predicate is applied to
/// predictions and gold alike.
pub fn subset_report(pred: &PredictionSet, docs: &[Document]) -> Result<Vec<SubsetRow>> {
    let map = doc_lookup(docs);
    let partition = subset_partition(&gold_triples(docs), docs)?;
    Subset::ALL
        .iter()
        .map(|&subset| {
            let mut kept = Vec::new();
            for key in pred.keys() {
                if key_in(subset, key, &map)? {
                    kept.push(key);
                }
            }
            let gold = partition.get(subset);
            let m = micro_f1(kept.iter().copied(), gold);
            Ok(SubsetRow {
                subset,
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
                gold: gold.len(),
                predicted: kept.len(),
                tp: m.tp,
            })
        })
        .collect()
}

/// `subset,precision,recall,f1,gold,predicted,tp` table.
pub fn subset_csv(rows: &[SubsetRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["subset", "precision", "recall", "f1", "gold", "predicted", "tp"])?;
    for row in rows {
        w.write_record([
            row.subset.to_string(),
            row.precision.to_string(),
            row.recall.to_string(),
            row.f1.to_string(),
            row.gold.to_string(),
            row.predicted.to_string(),
            row.tp.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Pair scores for a whole split.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCorpus {
    pub docs: Vec<(String, Vec<PairScore>)>,
}

impl ScoredCorpus {
    pub fn predictions(&self, threshold: f64) -> Result<PredictionSet> {
        check_threshold(threshold)?;
        let mut set = PredictionSet::new();
        for (id, scores) in &self.docs {
            set.add_document(id, scores, threshold)?;
        }
        Ok(set)
    }
}

pub fn score_corpus(model: &Model, docs: &[PreparedDoc]) -> Result<ScoredCorpus> {
    Ok(ScoredCorpus {
        docs: docs
            .iter()
            .map(|d| Ok((d.id.clone(), model.score_document(d)?)))
            .collect::<Result<_>>()?,
    })
}

/// 0.05, 0.10, …, 0.95.
pub fn threshold_grid() -> Vec<f64> {
    (1..20).map(|k| k as f64 * 0.05).collect()
}

/// The grid threshold with the highest micro F1 (lowest on ties) and that F1.
pub fn tune_threshold(scored: &ScoredCorpus, docs: &[Document]) -> Result<(f64, f64)> {
    let gold = gold_triples(docs);
    let mut best = (0.5, f64::NEG_INFINITY);
    for theta in threshold_grid() {
        let f1 = micro_f1(scored.predictions(theta)?.keys(), &gold).f1;
        if f1 > best.1 {
            best = (theta, f1);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Entity, Fact, Mention, Span};

    fn key(doc: &str, h: usize, t: usize, r: usize) -> TripleKey {
        TripleKey {
            doc: doc.into(),
            head: h,
            tail: t,
            relation: r,
        }
    }

    fn entity(index: usize, names: &[&str]) -> Entity {
        Entity {
            index,
            entity_type: "X".into(),
            mentions: names
                .iter()
                .map(|n| Mention {
                    surface: n.to_string(),
                    sentence_index: 0,
                    span: Span { start: 0, end: 1 },
                })
                .collect(),
        }
    }

    fn doc(id: &str, entities: Vec<Entity>, facts: &[(usize, usize, usize)]) -> Document {
        Document {
            id: id.into(),
            sentences: vec![vec!["w".into()]],
            entities,
            facts: facts
                .iter()
                .map(|&(head, tail, relation)| Fact {
                    head,
                    tail,
                    relation,
                    evidence: vec![],
                })
                .collect(),
        }
    }

    #[test]
    fn micro_examples() {
        let gold: BTreeSet<_> = [key("a", 0, 1, 0), key("a", 1, 0, 0), key("b", 0, 1, 1)].into();
        assert_eq!(micro_f1(gold.iter(), &gold).f1, 1.0);
        assert_eq!(micro_f1(std::iter::empty(), &gold).f1, 0.0);

        let pred = [key("a", 0, 1, 0), key("a", 1, 0, 0), key("c", 0, 1, 0)];
        let m = micro_f1(pred.iter(), &gold);
        assert_eq!((m.tp, m.fp, m.fn_), (2, 1, 1));
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ign_without_overlap_equals_f1() {
        let train = vec![doc("t", vec![entity(0, &["Paris"]), entity(1, &["France"])], &[(0, 1, 0)])];
        let dev = vec![doc("d", vec![entity(0, &["Rome"]), entity(1, &["Italy"])], &[(0, 1, 0)])];
        let mut pred = PredictionSet::new();
        pred.insert(key("d", 0, 1, 0), 0.9);
        pred.insert(key("d", 1, 0, 0), 0.9);
        let index = FactIndex::build(&train);
        let r = ign_f1(&pred, &dev, Some(&index), IgnPolicy::Literal).unwrap();
        assert_eq!(r.ign_f1, r.f1);
        assert_eq!(r.ignored, 0);
        let empty = FactIndex::new();
        let r = ign_f1(&pred, &dev, Some(&empty), IgnPolicy::Literal).unwrap();
        assert_eq!(r.ign_f1, r.f1);
    }

    #[test]
    fn ign_all_in_train_is_zero() {
        let train = vec![doc("t", vec![entity(0, &["Paris"]), entity(1, &["France"])], &[(0, 1, 0)])];
        let dev = vec![doc("d", vec![entity(0, &["paris"]), entity(1, &["France"])], &[(0, 1, 0)])];
        let mut pred = PredictionSet::new();
        pred.insert(key("d", 0, 1, 0), 0.9);
        let index = FactIndex::build(&train);
        for policy in [IgnPolicy::Literal, IgnPolicy::Official] {
            let r = ign_f1(&pred, &dev, Some(&index), policy).unwrap();
            assert_eq!(r.f1, 1.0);
            assert_eq!((r.ign_tp, r.ign_fp, r.ignored), (0, 0, 1));
            assert_eq!(r.ign_f1, 0.0);
        }
    }

    #[test]
    fn policies_differ_on_wrong_in_train_prediction() {
        // the train fact is (Paris, r0, France); dev predicts it but gold lacks it
        let train = vec![doc("t", vec![entity(0, &["Paris"]), entity(1, &["France"])], &[(0, 1, 0)])];
        let dev = vec![doc(
            "d",
            vec![entity(0, &["Paris"]), entity(1, &["France"]), entity(2, &["Lyon"])],
            &[(2, 1, 0)],
        )];
        let mut pred = PredictionSet::new();
        pred.insert(key("d", 0, 1, 0), 0.9);
        pred.insert(key("d", 2, 1, 0), 0.9);
        let index = FactIndex::build(&train);
        let lit = ign_f1(&pred, &dev, Some(&index), IgnPolicy::Literal).unwrap();
        assert_eq!((lit.ign_tp, lit.ign_fp, lit.ignored), (1, 0, 1));
        assert_eq!(lit.ign_precision, 1.0);
        let off = ign_f1(&pred, &dev, Some(&index), IgnPolicy::Official).unwrap();
        assert_eq!((off.ign_tp, off.ign_fp, off.ignored), (1, 1, 0));
        assert_eq!(off.ign_precision, 0.5);
    }

    #[test]
    fn unknown_document_is_an_error() {
        let dev = vec![doc("d", vec![entity(0, &["a"]), entity(1, &["b"])], &[])];
        let mut pred = PredictionSet::new();
        pred.insert(key("zzz", 0, 1, 0), 0.9);
        assert!(ign_f1(&pred, &dev, Some(&FactIndex::new()), IgnPolicy::Literal).is_err());
    }

    #[test]
    fn subset_membership() {
        assert!(Subset::All.admits(1, 1) && !Subset::M1.admits(1, 1));
        assert!(Subset::M1.admits(2, 1) && !Subset::M2.admits(2, 1));
        assert!(Subset::M1.admits(1, 2));
        assert!(Subset::M2.admits(3, 1) && Subset::M1.admits(3, 1));
    }

    #[test]
    fn subset_chain_and_csv() {
        let d = doc(
            "d",
            vec![entity(0, &["a"]), entity(1, &["b", "B"]), entity(2, &["c", "C", "cc"])],
            &[(0, 1, 0), (1, 0, 1), (0, 2, 0), (1, 2, 1)],
        );
        let docs = vec![d];
        let gold = gold_triples(&docs);
        let part = subset_partition(&gold, &docs).unwrap();
        assert_eq!((part.all.len(), part.m1.len(), part.m2.len()), (4, 4, 2));
        let mut pred = PredictionSet::new();
        pred.insert(key("d", 0, 2, 0), 0.8);
        pred.insert(key("d", 0, 1, 1), 0.8);
        let rows = subset_report(&pred, &docs).unwrap();
        assert_eq!(rows[2].predicted, 1);
        assert_eq!(rows[2].tp, 1);
        assert_eq!(rows[2].f1, harmonic(1.0, 0.5));
        let csv = subset_csv(&rows).unwrap();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("subset,precision,recall,f1"));
        assert!(lines[3].starts_with("M2,"));
    }

    #[test]
    fn grid() {
        let g = threshold_grid();
        assert_eq!(g.len(), 19);
        assert!((g[0] - 0.05).abs() < 1e-12 && (g[18] - 0.95).abs() < 1e-12);
    }
}
