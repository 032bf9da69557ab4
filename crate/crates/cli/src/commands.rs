use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use relmention::aggregation::Aggregator;
use relmention::benchmark::{run_benchmark, BenchConfig};
use relmention::checkpoint::Checkpoint;
use relmention::classifier::{PredictionSet, SubmissionEntry};
use relmention::corpus::{
    corpus_stats, load_mention_embeddings, to_docred_json, Document, FactIndex, MentionEmbeddings,
    RelationSchema,
};
use relmention::encoder::build_vocab;
use relmention::evaluation::{ign_f1, score_corpus, subset_csv, subset_report, IgnPolicy};
use relmention::model::{CorpusObjective, EncoderMode, Model, ModelConfig};
use relmention::numerics::{grad_check as run_grad_check, GradCheckConfig};
use relmention::synth::{synth_generate, SynthSpec};
use relmention::toy::{toy_config, toy_corpus};
use relmention::training::{train_with_callback, DevSet};
use serde::Serialize;

use crate::config::RunConfig;
use crate::data::{hash_inputs, load_split, read, DataDir};
use crate::heatmap::render_svg;
use crate::{
    AnalyzeArgs, BenchArgs, EvalArgs, GradCheckArgs, PredictArgs, StatsArgs, SynthArgs, TrainArgs, UsageError,
};

fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_store(path: Option<&Path>, dim: usize) -> Result<Option<MentionEmbeddings>> {
    path.map(|p| {
        load_mention_embeddings(&read(p)?, Some(dim)).with_context(|| format!("loading {}", p.display()))
    })
    .transpose()
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.is_file() {
        return Err(usage(format!("checkpoint {} does not exist", path.display())));
    }
    Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))
}

fn checkpoint_store(ckpt: &Checkpoint, embeddings: Option<&Path>) -> Result<Option<MentionEmbeddings>> {
    if ckpt.model.config.encoder == EncoderMode::Precomputed && embeddings.is_none() {
        return Err(usage("this checkpoint uses precomputed mention vectors; pass --embeddings"));
    }
    load_store(embeddings, ckpt.model.config.mention_dim)
}

#[derive(Serialize)]
struct RunManifest {
    command: Vec<String>,
    config: RunConfig,
    seed: u64,
    inputs: BTreeMap<String, String>,
    timestamp_unix: u64,
    artifacts: Vec<String>,
}

fn resolve_train_config(args: &TrainArgs) -> Result<RunConfig> {
    let mut run = RunConfig::load(args.config.as_deref(), args.preset.as_deref())?;
    let m = &args.model;
    let model = &mut run.model;
    if let Some(v) = m.aggregator {
        model.aggregator = v;
    }
    if let Some(v) = m.similarity {
        model.similarity = v;
    }
    if let Some(v) = m.mention_dim {
        model.mention_dim = v;
    }
    if let Some(v) = m.bilinear_dim {
        model.bilinear_dim = v;
    }
    if let Some(v) = m.window {
        model.window = v;
    }
    if let Some(v) = m.min_count {
        model.min_count = v;
    }
    let t = &args.train;
    let train = &mut run.train;
    if let Some(v) = t.seed {
        train.seed = v;
    }
    if let Some(v) = t.epochs {
        train.epochs = v;
    }
    if let Some(v) = t.learning_rate {
        train.learning_rate = v;
    }
    if let Some(v) = t.batch_size {
        train.batch_size = v;
    }
    if let Some(v) = t.threshold {
        train.threshold = v;
    }
    if t.tune_threshold {
        train.tune_threshold = true;
    }
    if t.negative_ratio.is_some() {
        train.negative_ratio = t.negative_ratio;
    }
    if let Some(dir) = &args.data {
        run.data.dir = Some(dir.clone());
    }
    if let Some(e) = &args.embeddings {
        run.data.embeddings = Some(e.clone());
    }
    if run.data.embeddings.is_some() {
        run.model.encoder = EncoderMode::Precomputed;
    }
    run.validate()?;
    Ok(run)
}

pub fn train(args: TrainArgs) -> Result<ExitCode> {
    let run = resolve_train_config(&args)?;
    let dir = run
        .data
        .dir
        .as_deref()
        .ok_or_else(|| usage("no data directory: pass --data or set [data] dir"))?;
    let data = DataDir::open(dir)?;
    let schema = data.schema()?;
    let train_docs = load_split(&data.train, &schema)?;
    let dev_docs = data.dev.as_deref().map(|p| load_split(p, &schema)).transpose()?;

    let store = load_store(run.data.embeddings.as_deref(), run.model.mention_dim)?;
    if let Some(s) = &store {
        s.check_coverage(&train_docs)?;
        if let Some(d) = &dev_docs {
            s.check_coverage(d)?;
        }
    }
    let vocab = match run.model.encoder {
        EncoderMode::Trained => Some(build_vocab(&train_docs, run.model.min_count, run.model.lowercase)?),
        EncoderMode::Precomputed => None,
    };
    let seed = run.train.seed;
    let mut model = Model::new(run.model.clone(), schema, vocab, seed)?;
    let train_p = model.prepare_all(&train_docs, store.as_ref())?;
    let dev_p = dev_docs
        .as_deref()
        .map(|d| model.prepare_all(d, store.as_ref()))
        .transpose()?;
    let index = FactIndex::build(&train_docs);

    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut inputs = data.files();
    inputs.extend(data.rel_info.clone());
    inputs.extend(run.data.embeddings.clone());
    let manifest = RunManifest {
        command: std::env::args().collect(),
        config: run.clone(),
        seed,
        inputs: hash_inputs(&inputs)?,
        timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        artifacts: vec!["model.ckpt".into(), "metrics.jsonl".into()],
    };
    write_file(&args.out.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;

    let metrics_path = args.out.join("metrics.jsonl");
    let mut metrics = BufWriter::new(
        File::create(&metrics_path).with_context(|| format!("creating {}", metrics_path.display()))?,
    );
    let dev = match (&dev_docs, &dev_p) {
        (Some(docs), Some(prepared)) => Some(DevSet {
            docs,
            prepared,
            fact_index: &index,
        }),
        _ => None,
    };
    let outcome = train_with_callback(&run.train, &mut model, &train_p, dev, |record| {
        let line = serde_json::to_string(record).expect("epoch records serialize");
        writeln!(metrics, "{line}")?;
        eprintln!(
            "epoch {:>3}  loss {:.5}  lr {:.3e}{}",
            record.epoch,
            record.train_loss,
            record.lr,
            record.dev_f1.map(|f| format!("  dev F1 {f:.4}")).unwrap_or_default()
        );
        Ok(())
    })?;
    metrics.flush()?;

    let ckpt = Checkpoint {
        model: outcome.model,
        threshold: outcome.threshold,
        seed,
        train: Some(run.train.clone()),
    };
    let ckpt_path = args.out.join("model.ckpt");
    ckpt.save(&ckpt_path).with_context(|| format!("writing {}", ckpt_path.display()))?;
    println!(
        "{}",
        serde_json::json!({
            "checkpoint": ckpt_path,
            "best_epoch": outcome.best_epoch,
            "threshold": outcome.threshold,
            "parameters": ckpt.model.parameter_count(),
        })
    );
    Ok(ExitCode::SUCCESS)
}

fn policy(name: &str) -> IgnPolicy {
    match name {
        "official" => IgnPolicy::Official,
        _ => IgnPolicy::Literal,
    }
}

pub fn eval(args: EvalArgs) -> Result<ExitCode> {
    let data = DataDir::open(&args.data)?;
    let split_path = data.split(&args.split)?;
    let (schema, pred, threshold) = match (&args.checkpoint, &args.predictions) {
        (Some(path), _) => {
            let ckpt = load_checkpoint(path)?;
            let store = checkpoint_store(&ckpt, args.embeddings.as_deref())?;
            let threshold = args.threshold.unwrap_or(ckpt.threshold);
            let schema = ckpt.model.schema.clone();
            let docs = load_split(&split_path, &schema)?;
            let prepared = ckpt.model.prepare_all(&docs, store.as_ref())?;
            let pred = score_corpus(&ckpt.model, &prepared)?.predictions(threshold)?;
            (schema, pred, Some(threshold))
        }
        (None, Some(path)) => {
            let schema = data.schema()?;
            let entries: Vec<SubmissionEntry> = serde_json::from_slice(&read(path)?)
                .with_context(|| format!("parsing predictions {}", path.display()))?;
            (schema.clone(), PredictionSet::from_submission(&entries, &schema)?, None)
        }
        (None, None) => return Err(usage("pass --checkpoint or --predictions")),
    };
    let docs = load_split(&split_path, &schema)?;

    let index = if args.ign {
        let mut index = FactIndex::build(&load_split(&data.train, &schema)?);
        if args.exclude_dev_facts {
            let dev = data.split("dev")?;
            for doc in load_split(&dev, &schema)? {
                index.add_document(&doc);
            }
        }
        Some(index)
    } else {
        None
    };
    let report = ign_f1(&pred, &docs, index.as_ref(), policy(&args.ign_policy))?;
    let subsets = args.subsets.as_ref().map(|_| subset_report(&pred, &docs)).transpose()?;

    let mut out = serde_json::json!({
        "split": args.split,
        "documents": docs.len(),
        "predictions": pred.len(),
        "threshold": threshold,
        "metrics": report,
    });
    if args.ign {
        out["ign_policy"] = serde_json::json!(args.ign_policy);
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    if let (Some(target), Some(rows)) = (&args.subsets, &subsets) {
        let csv = subset_csv(rows)?;
        if target.as_os_str() == "-" {
            print!("{csv}");
        } else {
            write_file(target, csv)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

pub fn predict(args: PredictArgs) -> Result<ExitCode> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let store = checkpoint_store(&ckpt, args.embeddings.as_deref())?;
    let threshold = args.threshold.unwrap_or(ckpt.threshold);
    let docs = load_split(&args.input, &ckpt.model.schema)?;
    let prepared = ckpt.model.prepare_all(&docs, store.as_ref())?;
    let pred = score_corpus(&ckpt.model, &prepared)?.predictions(threshold)?;
    write_file(&args.out, pred.to_json(&ckpt.model.schema)?)?;
    eprintln!("{} predictions for {} documents -> {}", pred.len(), docs.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn grad_check(args: GradCheckArgs) -> Result<ExitCode> {
    let (schema, docs) = toy_corpus()?;
    let config = ModelConfig {
        aggregator: args.aggregator,
        similarity: args.similarity,
        ..toy_config()
    };
    let vocab = build_vocab(&docs, config.min_count, config.lowercase)?;
    let mut model = Model::new(config, schema, Some(vocab), args.seed)?;
    // spread the small initial embeddings so gradients sit well above the
    // absolute-error floor
    if let Some(t) = &mut model.embeddings {
        for (k, x) in t.param.value.data_mut().iter_mut().enumerate() {
            *x = ((k * 37 % 23) as f64 / 11.0 - 1.0) * 0.8;
        }
    }
    model.fault_injection = args.corrupt_backward;
    let prepared = model.prepare_all(&docs, None)?;
    let mut objective = CorpusObjective {
        model: &mut model,
        docs: &prepared,
    };
    let report = run_grad_check(
        &mut objective,
        GradCheckConfig {
            step: args.step,
            tolerance: args.tolerance,
        },
    )?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        for p in &report.params {
            println!("{:<24} {:>5} entries  max error {:.3e}", p.name, p.entries, p.max_error);
        }
        println!(
            "{}: {} entries, max error {:.3e} (tolerance {:.1e}), worst parameter {}",
            if report.passed { "PASS" } else { "FAIL" },
            report.entries_checked,
            report.max_error,
            report.tolerance,
            report.worst_param.as_deref().unwrap_or("-")
        );
    }
    Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

pub fn analyze_attn(args: AnalyzeArgs) -> Result<ExitCode> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    if ckpt.model.config.aggregator != Aggregator::Rsman {
        return Err(usage(format!(
            "checkpoint aggregator is {}; attention maps need rsman",
            ckpt.model.config.aggregator
        )));
    }
    let store = checkpoint_store(&ckpt, args.embeddings.as_deref())?;
    let docs = load_split(&args.input, &ckpt.model.schema)?;
    let doc: &Document = docs
        .iter()
        .find(|d| d.id == args.doc)
        .ok_or_else(|| usage(format!("document {:?} not found in {}", args.doc, args.input.display())))?;
    let entity = doc.entities.get(args.entity).ok_or_else(|| {
        usage(format!("document {:?} has {} entities, no index {}", args.doc, doc.entities.len(), args.entity))
    })?;
    let prepared = ckpt.model.prepare(doc, store.as_ref())?;
    let map = ckpt.model.attention_map(&prepared, args.entity)?;
    let surfaces: Vec<String> = entity.mentions.iter().map(|m| m.surface.clone()).collect();
    let relations = ckpt.model.schema.names().to_vec();
    let csv_path = with_suffix(&args.out, "csv");
    let svg_path = with_suffix(&args.out, "svg");
    write_file(&csv_path, map.to_csv(&relations, &surfaces)?)?;
    write_file(&svg_path, render_svg(&relations, &surfaces, &map.weights))?;
    eprintln!("wrote {} and {}", csv_path.display(), svg_path.display());
    Ok(ExitCode::SUCCESS)
}

fn with_suffix(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn stats(args: StatsArgs) -> Result<ExitCode> {
    let data = args.data.as_deref().map(DataDir::open).transpose()?;
    let rel_info = args.rel_info.clone().or_else(|| data.as_ref().and_then(|d| d.rel_info.clone()));
    let mut files = data.as_ref().map(DataDir::files).unwrap_or_default();
    files.extend(args.input.iter().cloned());
    for f in &files {
        if !f.is_file() {
            return Err(usage(format!("input {} does not exist", f.display())));
        }
    }
    let schema = match &rel_info {
        Some(p) => RelationSchema::from_json(&read(p)?).with_context(|| format!("reading {}", p.display()))?,
        None => {
            let mut names = std::collections::BTreeSet::new();
            for f in &files {
                names.extend(relmention::corpus::relation_names_in(&read(f)?)?);
            }
            RelationSchema::new(names.into_iter().collect())?
        }
    };
    let mut docs = Vec::new();
    for f in &files {
        docs.extend(load_split(f, &schema)?);
    }
    let report = corpus_stats(&docs)?;
    if args.json {
        let mut v = serde_json::to_value(&report)?;
        v["relations"] = serde_json::json!(schema.count());
        println!("{}", serde_json::to_string_pretty(&v)?);
    } else {
        println!("documents                 {}", report.documents);
        println!("entities                  {}", report.entities);
        println!("mentions                  {}", report.mentions);
        println!("facts                     {}", report.facts);
        println!("relations                 {}", schema.count());
        println!("relations observed        {}", report.relations_observed);
        println!("mentions per entity       {:.2}", report.avg_mentions_per_entity);
        println!("multi-mention entities    {:.2}%", 100.0 * report.multi_mention_share);
    }
    Ok(ExitCode::SUCCESS)
}

pub fn synth(args: SynthArgs) -> Result<ExitCode> {
    let spec = SynthSpec::new(args.relations, args.vocab_size, args.documents, args.confounded_ratio, args.seed);
    spec.validate().map_err(|e| usage(e.to_string()))?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let splits = [("train.json", 0), ("dev.json", 500), ("test.json", 1000)];
    let mut schema = None;
    for (name, offset) in splits {
        let corpus = synth_generate(&spec.with_seed(args.seed + offset))?;
        write_file(&args.out.join(name), to_docred_json(&corpus.docs, &corpus.schema)?)?;
        schema = Some(corpus.schema);
    }
    let schema = schema.expect("three splits");
    write_file(&args.out.join("rel_info.json"), schema.to_json())?;
    write_file(&args.out.join("synth_spec.json"), serde_json::to_vec_pretty(&spec)?)?;
    eprintln!("wrote {} documents per split to {}", args.documents, args.out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn bench(args: BenchArgs) -> Result<ExitCode> {
    if args.runs == 0 {
        return Err(usage("--runs must be at least 1"));
    }
    let base = BenchConfig::default();
    let spec = SynthSpec {
        documents: args.documents,
        confounded_ratio: args.confounded_ratio,
        seed: args.seed,
        ..base.spec.clone()
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let mut train = base.train.clone();
    if let Some(e) = args.epochs {
        train.epochs = e;
    }
    if let Some(lr) = args.learning_rate {
        train.learning_rate = lr;
    }
    train.validate().map_err(|e| usage(e.to_string()))?;
    let mut reports = Vec::new();
    for model_seed in 1..=args.runs {
        let config = BenchConfig {
            dev_seed: args.seed + 500,
            test_seed: args.seed + 1000,
            spec: spec.clone(),
            train: train.clone(),
            model_seed,
            ..base.clone()
        };
        reports.push(run_benchmark(&config, &args.aggregators)?);
    }
    let mean = |agg: Aggregator, f: fn(&relmention::benchmark::BenchRun) -> f64| {
        reports.iter().map(|r| f(r.run(agg).expect("requested aggregator"))).sum::<f64>() / reports.len() as f64
    };
    if args.json {
        println!("{}", serde_json::to_string_pretty(&reports)?);
    } else {
        println!("avg-pool F1 ceiling on test: {:.4}", reports[0].avg_ceiling);
        println!("confounded test pairs:       {}", reports[0].confounded_test_pairs);
        println!("{:<8} {:>8} {:>8} {:>16}", "model", "F1", "Ign F1", "confounded gap");
        for &agg in &args.aggregators {
            println!(
                "{:<8} {:>8.4} {:>8.4} {:>16.3e}",
                agg.to_string(),
                mean(agg, |r| r.test.f1),
                mean(agg, |r| r.test.ign_f1),
                mean(agg, |r| r.confounded_gap)
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}
