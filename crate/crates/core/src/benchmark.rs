//! Pooling versus mention attention on the synthetic corpus.

use serde::Serialize;

use crate::aggregation::Aggregator;
use crate::corpus::FactIndex;
use crate::encoder::build_vocab;
use crate::error::Result;
use crate::evaluation::{ign_f1, score_corpus, IgnPolicy, MetricReport};
use crate::model::{Model, ModelConfig};
use crate::synth::{avg_pool_f1_ceiling, synth_generate, SynthCorpus, SynthSpec};
use crate::training::{train, DevSet, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    /// Training split; dev and test reuse its vocabularies with other seeds.
    pub spec: SynthSpec,
    pub dev_seed: u64,
    pub test_seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub model_seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        let spec = SynthSpec::default();
        Self {
            dev_seed: spec.seed + 500,
            test_seed: spec.seed + 1000,
            spec,
            model: ModelConfig {
                min_count: 1,
                ..ModelConfig::default()
            },
            train: TrainConfig {
                learning_rate: 1e-2,
                batch_size: 8,
                epochs: 30,
                ..TrainConfig::docred()
            },
            model_seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRun {
    pub aggregator: Aggregator,
    pub test: MetricReport,
    /// Largest probability difference between the two documents of a
    /// confounded test pair, over relations and both pair directions.
    pub confounded_gap: f64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub runs: Vec<BenchRun>,
    /// Best F1 any average-pooling classifier can reach on the test split.
    pub avg_ceiling: f64,
    pub confounded_test_pairs: usize,
}

impl BenchReport {
    pub fn run(&self, aggregator: Aggregator) -> Option<&BenchRun> {
        self.runs.iter().find(|r| r.aggregator == aggregator)
    }
}

pub struct BenchData {
    pub train: SynthCorpus,
    pub dev: SynthCorpus,
    pub test: SynthCorpus,
}

pub fn bench_data(config: &BenchConfig) -> Result<BenchData> {
    Ok(BenchData {
        train: synth_generate(&config.spec)?,
        dev: synth_generate(&config.spec.with_seed(config.dev_seed))?,
        test: synth_generate(&config.spec.with_seed(config.test_seed))?,
    })
}

/// Trains one aggregator and scores it on the test split.
pub fn run_aggregator(config: &BenchConfig, data: &BenchData, aggregator: Aggregator) -> Result<BenchRun> {
    let vocab = build_vocab(&data.train.docs, config.model.min_count, config.model.lowercase)?;
    let model_config = ModelConfig {
        aggregator,
        ..config.model.clone()
    };
    let model = Model::new(model_config, data.train.schema.clone(), Some(vocab), config.model_seed)?;
    let train_p = model.prepare_all(&data.train.docs, None)?;
    let dev_p = model.prepare_all(&data.dev.docs, None)?;
    let test_p = model.prepare_all(&data.test.docs, None)?;
    let index = FactIndex::build(&data.train.docs);
    let outcome = train(
        &config.train,
        model,
        &train_p,
        Some(DevSet {
            docs: &data.dev.docs,
            prepared: &dev_p,
            fact_index: &index,
        }),
    )?;
    let scored = score_corpus(&outcome.model, &test_p)?;
    let pred = scored.predictions(outcome.threshold)?;
    let test = ign_f1(&pred, &data.test.docs, Some(&index), IgnPolicy::default())?;
    let mut gap = 0.0f64;
    for &(a, b) in &data.test.confounded_pairs {
        for (x, y) in scored.docs[a].1.iter().zip(&scored.docs[b].1) {
            for (p, q) in x.probs.iter().zip(&y.probs) {
                gap = gap.max((p - q).abs());
            }
        }
    }
    Ok(BenchRun {
        aggregator,
        test,
        confounded_gap: gap,
        best_epoch: outcome.best_epoch,
    })
}

/// Runs every aggregator in `aggregators` on the same splits.
pub fn run_benchmark(config: &BenchConfig, aggregators: &[Aggregator]) -> Result<BenchReport> {
    let data = bench_data(config)?;
    let runs = aggregators
        .iter()
        .map(|&a| run_aggregator(config, &data, a))
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchReport {
        runs,
        avg_ceiling: avg_pool_f1_ceiling(&data.test.docs, data.test.schema.count()),
        confounded_test_pairs: data.test.confounded_pairs.len(),
    })
}
