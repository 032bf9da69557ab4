//! Acceptance run: one PASS/FAIL/SKIP line per criterion, nonzero exit on
//! any failure.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config as RunnerConfig, TestRunner};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use relmention::aggregation::{
    attend, attention_weights, Aggregator, AttentionParams, PrototypeBank, SimilarityMode,
};
use relmention::corpus::{parse_docred, RelationSchema};
use relmention::encoder::build_vocab;
use relmention::model::{Model, ModelConfig};
use serde_json::Value;

const GRAD_TOLERANCE: f64 = 1e-4;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const ATTENTION_CASES: u32 = 1000;
const ROW_SUM_TOLERANCE: f64 = 1e-12;
const SYNTH_MIN_F1: f64 = 0.95;
const SYNTH_MIN_MARGIN: f64 = 0.10;
const CONFOUNDED_GAP_TOLERANCE: f64 = 1e-12;
const SYNTH_BUDGET: Duration = Duration::from_secs(300);
const DOCRED_MENTIONS: (f64, f64) = (1.34, 0.01);
const DOCRED_MULTI_PCT: (f64, f64) = (18.49, 0.2);
const DOCRED_RELATIONS: usize = 96;
const DWIE_MENTIONS: (f64, f64) = (1.98, 0.01);
const DWIE_MULTI_PCT: (f64, f64) = (33.59, 0.2);
const DWIE_RELATIONS: usize = 65;

const TRAIN: &str = include_str!("../../core/tests/fixtures/metric_train.json");
const DEV: &str = include_str!("../../core/tests/fixtures/metric_dev.json");
const RELS: &str = include_str!("../../core/tests/fixtures/metric_rel_info.json");
const PRED: &str = include_str!("../../core/tests/fixtures/metric_predictions.json");

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = Result<Verdict, String>;

fn ensure(cond: bool, message: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(message())
    }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_relmention"))
}

fn run(cmd: &mut Command) -> Result<Output, String> {
    let out = cmd.output().map_err(|e| format!("spawn failed: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "{:?} exited with {}: {}",
            cmd.get_args().collect::<Vec<_>>(),
            out.status,
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(out)
}

fn stdout_json(out: &Output) -> Result<Value, String> {
    serde_json::from_slice(&out.stdout).map_err(|e| format!("stdout is not JSON: {e}"))
}

fn write(path: &Path, text: &str) -> Result<(), String> {
    std::fs::write(path, text).map_err(|e| format!("writing {}: {e}", path.display()))
}

fn tempdir() -> Result<tempfile::TempDir, String> {
    tempfile::tempdir().map_err(|e| e.to_string())
}

fn grad_oracle() -> Check {
    let start = Instant::now();
    let out = run(bin().args(["grad-check", "--aggregator", "rsman", "--tolerance", "1e-4", "--json"]))?;
    let elapsed = start.elapsed();
    let report = stdout_json(&out)?;
    let max = report["max_error"].as_f64().ok_or("missing max_error")?;
    let entries = report["entries_checked"].as_u64().unwrap_or(0);
    let detail = format!("{entries} entries, max error {max:.2e}, {:.1}s", elapsed.as_secs_f64());
    if max < GRAD_TOLERANCE && report["passed"] == true && elapsed < GRAD_BUDGET && entries > 0 {
        Ok(Verdict::Pass(detail))
    } else {
        Ok(Verdict::Fail(detail))
    }
}

fn mentions_strategy() -> impl Strategy<Value = (Vec<Vec<f64>>, usize, usize, u64, bool)> {
    (1usize..7, 1usize..7, 1usize..5, any::<u64>(), any::<bool>()).prop_flat_map(|(n, dim, rels, seed, mlp)| {
        (
            proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, dim), n),
            Just(rels),
            1usize..6,
            Just(seed),
            Just(mlp),
        )
    })
}

fn attention_invariants() -> Check {
    let mut runner = TestRunner::new(RunnerConfig {
        cases: ATTENTION_CASES,
        failure_persistence: None,
        ..RunnerConfig::default()
    });
    let result = runner.run(
        &(mentions_strategy(), -50.0f64..50.0, any::<prop::sample::Index>()),
        |((mentions, rels, proto_dim, seed, mlp), shift, rot)| {
            let dim = mentions[0].len();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let bank = PrototypeBank::init(rels, proto_dim, &mut rng);
            let mode = if mlp { SimilarityMode::Mlp } else { SimilarityMode::Dot };
            let params = AttentionParams::init(mode, dim, proto_dim, 3, &mut rng);
            let att = attend(&mentions, &bank, &params).unwrap();
            for r in 0..rels {
                let sum: f64 = att.weights[r].iter().sum();
                prop_assert!((sum - 1.0).abs() <= ROW_SUM_TOLERANCE, "row sum {sum}");
                prop_assert!(att.weights[r].iter().all(|&a| a >= 0.0));
                let shifted: Vec<f64> = att.scores[r].iter().map(|s| s + shift).collect();
                let w = attention_weights(&shifted).unwrap();
                for (a, b) in w.iter().zip(&att.weights[r]) {
                    prop_assert!((a - b).abs() <= 1e-12, "shift changed weights");
                }
                for k in 0..dim {
                    let lo = mentions.iter().map(|m| m[k]).fold(f64::INFINITY, f64::min);
                    let hi = mentions.iter().map(|m| m[k]).fold(f64::NEG_INFINITY, f64::max);
                    let v = att.reps[r][k];
                    prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12, "rep outside hull");
                }
            }
            let n = mentions.len();
            let offset = rot.index(n);
            let perm: Vec<usize> = (0..n).map(|j| (j * 5 + offset) % n).collect();
            let perm: Vec<usize> = if perm.iter().collect::<BTreeSet<_>>().len() == n {
                perm
            } else {
                (0..n).map(|j| (j + offset) % n).collect()
            };
            let permuted: Vec<Vec<f64>> = perm.iter().map(|&j| mentions[j].clone()).collect();
            let att_p = attend(&permuted, &bank, &params).unwrap();
            for r in 0..rels {
                for (jp, &j) in perm.iter().enumerate() {
                    prop_assert!((att_p.weights[r][jp] - att.weights[r][j]).abs() <= 1e-12);
                }
                for (a, b) in att_p.reps[r].iter().zip(&att.reps[r]) {
                    prop_assert!((a - b).abs() <= 1e-12, "permutation changed rep");
                }
            }
            Ok(())
        },
    );
    Ok(match result {
        Ok(()) => Verdict::Pass(format!("{ATTENTION_CASES} cases")),
        Err(e) => Verdict::Fail(e.to_string()),
    })
}

const SINGLE_MENTION: &str = r#"[
 {"title": "s1", "sents": [["Ada", "met", "Bob", "in", "Paris", "."]],
  "vertexSet": [[{"name": "Ada", "sent_id": 0, "pos": [0, 1]}],
                [{"name": "Bob", "sent_id": 0, "pos": [2, 3]}],
                [{"name": "Paris", "sent_id": 0, "pos": [4, 5]}]],
  "labels": [{"h": 0, "t": 2, "r": "lived_in"}]},
 {"title": "s2", "sents": [["Cy", "and", "Dee", "left", "Rome"], ["Then", "Cy", "slept", "."]],
  "vertexSet": [[{"name": "Cy", "sent_id": 0, "pos": [0, 1]}],
                [{"name": "Dee", "sent_id": 0, "pos": [2, 3]}],
                [{"name": "Rome", "sent_id": 0, "pos": [4, 5]}],
                [{"name": "Then", "sent_id": 1, "pos": [0, 1]}]],
  "labels": [{"h": 1, "t": 0, "r": "colleague"}]}
]"#;

fn degenerate_equivalence() -> Check {
    let schema = RelationSchema::new(vec!["born_in".into(), "colleague".into(), "lived_in".into()])
        .map_err(|e| e.to_string())?;
    let docs = parse_docred(SINGLE_MENTION.as_bytes(), &schema).map_err(|e| e.to_string())?;
    let mut pairs = 0;
    for (similarity, window, bilinear_dim) in [(SimilarityMode::Dot, 0, 8), (SimilarityMode::Mlp, 1, 5)] {
        let config = ModelConfig {
            similarity,
            window,
            bilinear_dim,
            mention_dim: 8,
            min_count: 1,
            ..ModelConfig::default()
        };
        let vocab = build_vocab(&docs, 1, false).map_err(|e| e.to_string())?;
        let rsman = Model::new(config.clone(), schema.clone(), Some(vocab.clone()), 3).map_err(|e| e.to_string())?;
        let mut avg = Model::new(
            ModelConfig {
                aggregator: Aggregator::Avg,
                ..config
            },
            schema.clone(),
            Some(vocab),
            99,
        )
        .map_err(|e| e.to_string())?;
        avg.bilinear = rsman.bilinear.clone();
        avg.embeddings = rsman.embeddings.clone();
        for doc in &docs {
            let a = rsman.prepare(doc, None).map_err(|e| e.to_string())?;
            let b = avg.prepare(doc, None).map_err(|e| e.to_string())?;
            let sa = rsman.score_document(&a).map_err(|e| e.to_string())?;
            let sb = avg.score_document(&b).map_err(|e| e.to_string())?;
            for (x, y) in sa.iter().zip(&sb) {
                for (p, q) in x.probs.iter().zip(&y.probs) {
                    ensure(p.to_bits() == q.to_bits(), || {
                        format!("{}: pair ({}, {}) differs: {p:e} vs {q:e}", doc.id, x.head, x.tail)
                    })?;
                }
                pairs += 1;
            }
        }
    }
    Ok(Verdict::Pass(format!("{pairs} pairs bit-identical")))
}

type Triple = (String, u64, u64, String);

fn names(doc: &Value, entity: u64) -> BTreeSet<String> {
    doc["vertexSet"][entity as usize]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["name"].as_str().unwrap().to_lowercase())
        .collect()
}

/// (tp, fp, fn, ign_tp, ign_fp) straight from the set definitions.
fn brute_force(official: bool) -> (u64, u64, u64, u64, u64) {
    let train: Vec<Value> = serde_json::from_str(TRAIN).unwrap();
    let dev: Vec<Value> = serde_json::from_str(DEV).unwrap();
    let preds: Vec<Value> = serde_json::from_str(PRED).unwrap();
    let mut gold: BTreeSet<Triple> = BTreeSet::new();
    for d in &dev {
        for l in d["labels"].as_array().unwrap() {
            gold.insert((
                d["title"].as_str().unwrap().into(),
                l["h"].as_u64().unwrap(),
                l["t"].as_u64().unwrap(),
                l["r"].as_str().unwrap().into(),
            ));
        }
    }
    let pred: BTreeSet<Triple> = preds
        .iter()
        .map(|p| {
            (
                p["title"].as_str().unwrap().into(),
                p["h_idx"].as_u64().unwrap(),
                p["t_idx"].as_u64().unwrap(),
                p["r"].as_str().unwrap().into(),
            )
        })
        .collect();
    let in_train = |t: &Triple| {
        let d = dev.iter().find(|d| d["title"] == t.0.as_str()).unwrap();
        let (hn, tn) = (names(d, t.1), names(d, t.2));
        train.iter().any(|td| {
            td["labels"].as_array().unwrap().iter().any(|l| {
                l["r"] == t.3.as_str()
                    && !names(td, l["h"].as_u64().unwrap()).is_disjoint(&hn)
                    && !names(td, l["t"].as_u64().unwrap()).is_disjoint(&tn)
            })
        })
    };
    let tp = pred.intersection(&gold).count() as u64;
    let (mut ign_tp, mut ign_fp) = (0, 0);
    for p in &pred {
        let correct = gold.contains(p);
        if in_train(p) && (!official || correct) {
            continue;
        }
        if correct {
            ign_tp += 1;
        } else {
            ign_fp += 1;
        }
    }
    (tp, pred.len() as u64 - tp, gold.len() as u64 - tp, ign_tp, ign_fp)
}

fn metric_fixture_dir() -> Result<(tempfile::TempDir, PathBuf), String> {
    let dir = tempdir()?;
    write(&dir.path().join("train_annotated.json"), TRAIN)?;
    write(&dir.path().join("dev.json"), DEV)?;
    write(&dir.path().join("rel_info.json"), RELS)?;
    let pred = dir.path().join("predictions.json");
    write(&pred, PRED)?;
    Ok((dir, pred))
}

fn metric_oracle() -> Check {
    let (dir, pred) = metric_fixture_dir()?;
    let mut lines = Vec::new();
    for (policy, official) in [("literal", false), ("official", true)] {
        let out = run(bin()
            .args(["eval", "--split", "dev", "--ign", "--ign-policy", policy])
            .arg("--data")
            .arg(dir.path())
            .arg("--predictions")
            .arg(&pred))?;
        let m = &stdout_json(&out)?["metrics"];
        let count = |k: &str| m[k].as_u64().unwrap_or(u64::MAX);
        let got = (count("tp"), count("fp"), count("fn"), count("ign_tp"), count("ign_fp"));
        let want = brute_force(official);
        ensure(got == want, || format!("{policy}: counts {got:?}, oracle {want:?}"))?;
        let (tp, fp, fn_, itp, ifp) = want;
        let p = tp as f64 / (tp + fp) as f64;
        let r = tp as f64 / (tp + fn_) as f64;
        let ip = itp as f64 / (itp + ifp) as f64;
        ensure(m["f1"].as_f64() == Some(2.0 * p * r / (p + r)), || format!("{policy}: F1 {}", m["f1"]))?;
        ensure(m["ign_f1"].as_f64() == Some(2.0 * ip * r / (ip + r)), || {
            format!("{policy}: Ign F1 {}", m["ign_f1"])
        })?;
        lines.push(format!("{policy} {got:?}"));
    }
    Ok(Verdict::Pass(lines.join(", ")))
}

fn synthetic_separation() -> Check {
    let start = Instant::now();
    let out = run(bin().args(["bench", "--aggregators", "rsman,avg", "--json"]))?;
    let elapsed = start.elapsed();
    let report = &stdout_json(&out)?[0];
    let find = |name: &str| {
        report["runs"]
            .as_array()
            .and_then(|runs| runs.iter().find(|r| r["aggregator"] == name))
            .cloned()
            .ok_or_else(|| format!("no {name} run"))
    };
    let (rsman, avg) = (find("rsman")?, find("avg")?);
    let f = |r: &Value| r["test"]["f1"].as_f64().unwrap_or(f64::NAN);
    let (rf, af) = (f(&rsman), f(&avg));
    let ceiling = report["avg_ceiling"].as_f64().unwrap_or(f64::NAN);
    let gap = avg["confounded_gap"].as_f64().unwrap_or(f64::NAN);
    let detail = format!(
        "rsman F1 {rf:.4}, avg F1 {af:.4}, avg ceiling {ceiling:.4}, avg confounded gap {gap:.1e}, {:.1}s",
        elapsed.as_secs_f64()
    );
    let ok = rf >= SYNTH_MIN_F1
        && af <= ceiling + 1e-12
        && rf - af >= SYNTH_MIN_MARGIN
        && gap <= CONFOUNDED_GAP_TOLERANCE
        && elapsed < SYNTH_BUDGET;
    Ok(if ok { Verdict::Pass(detail) } else { Verdict::Fail(detail) })
}

fn within(value: f64, (target, tol): (f64, f64)) -> bool {
    (value - target).abs() <= tol
}

fn dataset_statistics() -> Check {
    let sets = [
        ("RELMENTION_DOCRED_DIR", "DocRED", DOCRED_MENTIONS, DOCRED_MULTI_PCT, DOCRED_RELATIONS),
        ("RELMENTION_DWIE_DIR", "DWIE", DWIE_MENTIONS, DWIE_MULTI_PCT, DWIE_RELATIONS),
    ];
    let mut parts = Vec::new();
    let mut failed = false;
    let mut ran = false;
    for (var, name, mentions, multi, relations) in sets {
        let Some(dir) = std::env::var_os(var) else {
            parts.push(format!("{name} skipped ({var} unset)"));
            continue;
        };
        ran = true;
        let out = run(bin().args(["stats", "--json", "--data"]).arg(&dir))?;
        let s = stdout_json(&out)?;
        let avg = s["avg_mentions_per_entity"].as_f64().unwrap_or(f64::NAN);
        let pct = 100.0 * s["multi_mention_share"].as_f64().unwrap_or(f64::NAN);
        let rels = s["relations"].as_u64().unwrap_or(0) as usize;
        let ok = within(avg, mentions) && within(pct, multi) && rels == relations;
        failed |= !ok;
        parts.push(format!("{name}: {avg:.3} mentions/entity, {pct:.2}% multi-mention, {rels} relations"));
    }
    let detail = parts.join("; ");
    Ok(if failed {
        Verdict::Fail(detail)
    } else if ran {
        Verdict::Pass(detail)
    } else {
        Verdict::Skip(detail)
    })
}

fn synth_dir(root: &Path) -> Result<PathBuf, String> {
    let data = root.join("data");
    run(bin().args(["synth", "--documents", "60", "--seed", "3", "--out"]).arg(&data))?;
    Ok(data)
}

fn train_small(data: &Path, out: &Path) -> Result<(), String> {
    run(bin()
        .args([
            "train", "--epochs", "4", "--lr", "1e-2", "--batch-size", "4", "--min-count", "1", "--mention-dim", "12",
            "--bilinear-dim", "8", "--seed", "5", "--tune-threshold",
        ])
        .arg("--data")
        .arg(data)
        .arg("--out")
        .arg(out))
    .map(|_| ())
}

fn check_subset_csv(csv: &str, label: &str) -> Result<(u64, u64, u64), String> {
    let mut lines = csv.lines();
    ensure(lines.next() == Some("subset,precision,recall,f1,gold,predicted,tp"), || {
        format!("{label}: unexpected header")
    })?;
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    ensure(
        rows.len() == 3 && rows.iter().map(|r| r[0]).eq(["All", "M1", "M2"]) && rows.iter().all(|r| r.len() == 7),
        || format!("{label}: expected All, M1, M2 rows of 7 fields"),
    )?;
    let col = |row: usize, c: usize| rows[row][c].parse::<u64>().map_err(|e| format!("{label}: {e}"));
    for c in 4..7 {
        let (all, m1, m2) = (col(0, c)?, col(1, c)?, col(2, c)?);
        ensure(m2 <= m1 && m1 <= all, || format!("{label}: column {c} has {m2} > {m1} or {m1} > {all}"))?;
    }
    for row in &rows {
        for v in &row[1..4] {
            let x: f64 = v.parse().map_err(|e| format!("{label}: {e}"))?;
            ensure((0.0..=1.0).contains(&x), || format!("{label}: score {x} out of range"))?;
        }
    }
    Ok((col(0, 4)?, col(1, 4)?, col(2, 4)?))
}

fn subset_chain() -> Check {
    let mut parts = Vec::new();
    let (fixture, pred) = metric_fixture_dir()?;
    let csv_path = fixture.path().join("subsets.csv");
    run(bin()
        .args(["eval", "--split", "dev", "--data"])
        .arg(fixture.path())
        .arg("--predictions")
        .arg(&pred)
        .arg("--subsets")
        .arg(&csv_path))?;
    let csv = std::fs::read_to_string(&csv_path).map_err(|e| e.to_string())?;
    parts.push(format!("fixture gold {:?}", check_subset_csv(&csv, "fixture")?));

    let root = tempdir()?;
    let data = synth_dir(root.path())?;
    let run_dir = root.path().join("run");
    train_small(&data, &run_dir)?;
    for split in ["train", "dev", "test"] {
        let out = root.path().join(format!("{split}.csv"));
        run(bin()
            .args(["eval", "--split", split, "--checkpoint"])
            .arg(run_dir.join("model.ckpt"))
            .arg("--data")
            .arg(&data)
            .arg("--subsets")
            .arg(&out))?;
        let csv = std::fs::read_to_string(&out).map_err(|e| e.to_string())?;
        parts.push(format!("synth {split} gold {:?}", check_subset_csv(&csv, split)?));
    }
    Ok(Verdict::Pass(parts.join(", ")))
}

fn determinism() -> Check {
    let root = tempdir()?;
    let data = synth_dir(root.path())?;
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    train_small(&data, &a)?;
    train_small(&data, &b)?;
    let read = |p: PathBuf| std::fs::read(&p).map_err(|e| format!("reading {}: {e}", p.display()));
    let mut parts = Vec::new();
    for name in ["model.ckpt", "metrics.jsonl"] {
        let (x, y) = (read(a.join(name))?, read(b.join(name))?);
        ensure(!x.is_empty() && x == y, || format!("{name} differs between runs"))?;
        parts.push(format!("{name} {} bytes", x.len()));
    }
    Ok(Verdict::Pass(format!("{} identical", parts.join(", "))))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 8] = [
        ("gradient oracle", grad_oracle),
        ("attention invariants", attention_invariants),
        ("single-mention equivalence", degenerate_equivalence),
        ("metric oracle", metric_oracle),
        ("synthetic separation", synthetic_separation),
        ("dataset statistics", dataset_statistics),
        ("subset chain", subset_chain),
        ("determinism", determinism),
    ];
    let mut failures = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let (tag, detail) = match check() {
            Ok(Verdict::Pass(d)) => ("PASS", d),
            Ok(Verdict::Skip(d)) => ("SKIP", d),
            Ok(Verdict::Fail(d)) | Err(d) => {
                failures += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {}: {tag} {name}: {detail}", k + 1);
    }
    if failures > 0 {
        eprintln!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
