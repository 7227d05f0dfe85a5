//! Experiment runner over the temporal graph models: ingest or generate a
//! dataset, train a variant with early stopping, score the chronological
//! test segment, and emit a diffable key-value report.

mod error;
pub mod synth;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use tgn::{
    training_destinations, EvalSetting, Hyperparams, Metrics, NodeClassReport, TgnModel,
    TrainReport, VariantConfig,
};
use tgstore::{chronological_split, EventLog, SamplingStrategy, SplitSpec, TemporalAdjacency};

pub use error::{CliError, Result};
pub use synth::{generate, generate_csv, GeneratorSpec, SyntheticKind};

#[derive(Debug, Clone)]
pub enum DataSource {
    Csv(PathBuf),
    Synthetic(GeneratorSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Link,
    Node,
}

/// Everything one experiment needs; defaults mirror the reference
/// hyperparameters.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub data: DataSource,
    pub variant: VariantConfig,
    pub task: Task,
    /// Restrict test reporting to one setting; both are reported otherwise.
    pub setting: Option<EvalSetting>,
    pub epochs: usize,
    pub hp: Hyperparams,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl RunSpec {
    pub fn new(data: DataSource, variant: VariantConfig) -> Self {
        RunSpec {
            data,
            variant,
            task: Task::Link,
            setting: None,
            epochs: 50,
            hp: Hyperparams::default(),
            seed: 0,
            out: None,
        }
    }
}

pub struct RunOutcome {
    pub report: String,
    pub train: TrainReport,
    pub test_transductive: Option<Metrics>,
    pub test_inductive: Option<Metrics>,
    pub node: Option<NodeClassReport>,
    /// Mean training wall-clock per epoch, seconds.
    pub mean_epoch_secs: f64,
}

/// Load a data source. Synthetic data is written to a CSV file first and
/// ingested back, so generated runs exercise the same path as real exports.
pub fn load_data(data: &DataSource) -> Result<EventLog> {
    match data {
        DataSource::Csv(path) => Ok(tgstore::ingest_csv(path, None)?),
        DataSource::Synthetic(spec) => {
            let dir = tempfile::tempdir()?;
            let path = dir.path().join("synthetic.csv");
            synth::generate_csv(spec, &path)?;
            Ok(tgstore::ingest_csv(&path, Some(spec.feature_dim))?)
        }
    }
}

fn describe_data(data: &DataSource) -> String {
    match data {
        DataSource::Csv(path) => path.display().to_string(),
        DataSource::Synthetic(spec) => spec.describe(),
    }
}

fn sampling_name(s: SamplingStrategy) -> &'static str {
    match s {
        SamplingStrategy::MostRecent => "recent",
        SamplingStrategy::Uniform => "uniform",
    }
}

/// Ingest → split → train with early stopping → warm replay → test
/// evaluation (→ node classification), then write the report.
pub fn run(spec: &RunSpec) -> Result<RunOutcome> {
    let log = load_data(&spec.data)?;
    let split = chronological_split(&log)?;
    let adj = TemporalAdjacency::from_log(&log)?;
    let mut model = TgnModel::new(&log, spec.variant.clone(), spec.hp.clone(), spec.seed)?;

    let train_report = model.train(&log, &adj, &split, spec.epochs)?;
    let mean_epoch_secs = if train_report.epochs.is_empty() {
        0.0
    } else {
        train_report
            .epochs
            .iter()
            .map(|e| e.train.wall_clock_secs)
            .sum::<f64>()
            / train_report.epochs.len() as f64
    };

    // Score the held-out tail. Training leaves the best epoch's parameters
    // and its post-validation memory in place, so the test pass continues
    // that exact state; an untrained model warms its memory by replay.
    if train_report.epochs.is_empty() {
        model.reset_memory();
        model.replay_memory(&log, &adj, split.train.start..split.val.end)?;
    }
    let all_destinations = log.destinations().to_vec();
    let (transductive, inductive) = model.evaluate_both(
        &log,
        &adj,
        split.test.clone(),
        &all_destinations,
        &split,
        "test",
    )?;
    let (test_transductive, test_inductive) = match spec.setting {
        None => (Some(transductive), inductive),
        Some(EvalSetting::Transductive) => (Some(transductive), None),
        Some(EvalSetting::Inductive) => (None, inductive),
    };

    let node = if spec.task == Task::Node {
        Some(model.node_classification(&log, &adj, &split, spec.epochs.max(1))?)
    } else {
        None
    };

    let report = render_report(
        spec,
        &log,
        &split,
        &train_report,
        test_transductive.as_ref(),
        test_inductive.as_ref(),
        node.as_ref(),
    );
    if let Some(path) = &spec.out {
        std::fs::write(path, &report)?;
    }
    Ok(RunOutcome {
        report,
        train: train_report,
        test_transductive,
        test_inductive,
        node,
        mean_epoch_secs,
    })
}

fn render_report(
    spec: &RunSpec,
    log: &EventLog,
    split: &SplitSpec,
    train: &TrainReport,
    transductive: Option<&Metrics>,
    inductive: Option<&Metrics>,
    node: Option<&NodeClassReport>,
) -> String {
    let mut out = String::new();
    let w = &mut out;
    let _ = writeln!(w, "tgn-report v1");
    let _ = writeln!(w);
    let _ = writeln!(w, "[config]");
    let _ = writeln!(w, "variant: {}", spec.variant.name);
    let _ = writeln!(
        w,
        "task: {}",
        match spec.task {
            Task::Link => "link",
            Task::Node => "node",
        }
    );
    let _ = writeln!(w, "seed: {}", spec.seed);
    let _ = writeln!(w, "epochs: {}", spec.epochs);
    let _ = writeln!(w, "batch_size: {}", spec.hp.batch_size);
    let _ = writeln!(w, "learning_rate: {}", spec.hp.learning_rate);
    let _ = writeln!(w, "memory_dim: {}", spec.hp.memory_dim);
    let _ = writeln!(w, "time_dim: {}", spec.hp.time_dim);
    let _ = writeln!(w, "embedding_dim: {}", spec.hp.embedding_dim);
    let _ = writeln!(w, "heads: {}", spec.hp.heads);
    let _ = writeln!(w, "dropout: {}", spec.hp.dropout);
    let _ = writeln!(w, "patience: {}", spec.hp.patience);
    let _ = writeln!(w, "sampling: {}", sampling_name(spec.variant.sampling));
    let _ = writeln!(
        w,
        "embedding: {}",
        match spec.variant.embedding {
            tgn::EmbeddingMode::Identity => "id".to_string(),
            tgn::EmbeddingMode::TimeProjection => "time".to_string(),
            tgn::EmbeddingMode::Attention { layers, neighbors } =>
                format!("attn({layers}l,{neighbors}n)"),
            tgn::EmbeddingMode::GraphSum { layers, neighbors } =>
                format!("sum({layers}l,{neighbors}n)"),
        }
    );
    let _ = writeln!(w, "data: {}", describe_data(&spec.data));
    let _ = writeln!(w, "events: {}", log.len());
    let _ = writeln!(w, "nodes: {}", log.num_nodes());
    let _ = writeln!(w, "edge_features: {}", log.edge_feature_dim());
    let _ = writeln!(
        w,
        "split: {}/{}/{}",
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    let _ = writeln!(w, "inductive_nodes: {}", split.inductive_nodes.len());
    for e in &train.epochs {
        let _ = writeln!(w);
        let _ = writeln!(w, "[epoch {}]", e.epoch);
        let _ = writeln!(w, "train_loss: {}", e.train.loss);
        let _ = writeln!(w, "train_ap: {}", e.train.ap);
        let _ = writeln!(w, "train_auc: {}", e.train.auc);
        let _ = writeln!(w, "val_loss: {}", e.val.loss);
        let _ = writeln!(w, "val_ap: {}", e.val.ap);
        let _ = writeln!(w, "val_auc: {}", e.val.auc);
        let _ = writeln!(w, "train_secs: {}", e.train.wall_clock_secs);
        let _ = writeln!(w, "val_secs: {}", e.val.wall_clock_secs);
    }
    let _ = writeln!(w);
    let _ = writeln!(w, "[early_stopping]");
    let _ = writeln!(
        w,
        "best_epoch: {}",
        train
            .best_epoch
            .map_or("none".to_string(), |e| e.to_string())
    );
    let _ = writeln!(w, "stopped_early: {}", train.stopped_early);
    let _ = writeln!(w);
    let _ = writeln!(w, "[test]");
    match transductive {
        Some(m) => {
            let _ = writeln!(w, "transductive_ap: {}", m.ap);
            let _ = writeln!(w, "transductive_auc: {}", m.auc);
            let _ = writeln!(w, "transductive_loss: {}", m.loss);
            let _ = writeln!(w, "transductive_secs: {}", m.wall_clock_secs);
        }
        None => {
            let _ = writeln!(w, "transductive: skipped");
        }
    }
    match inductive {
        Some(m) => {
            let _ = writeln!(w, "inductive_ap: {}", m.ap);
            let _ = writeln!(w, "inductive_auc: {}", m.auc);
            let _ = writeln!(w, "inductive_loss: {}", m.loss);
        }
        None => {
            let _ = writeln!(w, "inductive: none");
        }
    }
    if let Some(n) = node {
        let _ = writeln!(w);
        let _ = writeln!(w, "[node]");
        let _ = writeln!(w, "epochs_run: {}", n.epochs_run);
        let _ = writeln!(w, "best_epoch: {}", n.best_epoch);
        let _ = writeln!(w, "val_auc: {}", n.val_auc);
        let _ = writeln!(w, "test_auc: {}", n.test_auc);
    }
    out
}

/// Report lines that must be byte-identical across same-seed runs —
/// everything except wall-clock timings.
pub fn metric_lines(report: &str) -> Vec<&str> {
    report.lines().filter(|l| !l.contains("_secs:")).collect()
}

pub struct SweepRow {
    pub variant: String,
    pub test_ap: f64,
    pub epoch_secs: f64,
}

pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub table: String,
}

/// Run several presets on the same data and seed, sequentially so the
/// timing column is comparable, and emit an accuracy/speed table.
pub fn sweep(presets: &[String], base: &RunSpec) -> Result<SweepOutcome> {
    if presets.len() < 2 {
        return Err(CliError::Invalid(
            "a sweep needs at least two presets".into(),
        ));
    }
    let mut rows = Vec::with_capacity(presets.len());
    for preset in presets {
        let mut spec = base.clone();
        spec.variant = VariantConfig::preset(preset)?;
        spec.out = None;
        let outcome = run(&spec)?;
        let ap = outcome
            .test_transductive
            .as_ref()
            .map(|m| m.ap)
            .unwrap_or(f64::NAN);
        rows.push(SweepRow {
            variant: spec.variant.name.clone(),
            test_ap: ap,
            epoch_secs: outcome.mean_epoch_secs,
        });
    }
    let mut table = String::from("tgn-sweep v1\nvariant\ttest_ap\tepoch_secs\n");
    for row in &rows {
        let _ = writeln!(table, "{}\t{}\t{}", row.variant, row.test_ap, row.epoch_secs);
    }
    Ok(SweepOutcome { rows, table })
}

/// Scaled-down hyperparameters for desk-size experiments.
pub fn quick_hp(memory_dim: usize, batch_size: usize) -> Hyperparams {
    Hyperparams {
        memory_dim,
        time_dim: 16,
        embedding_dim: memory_dim,
        heads: 2,
        dropout: 0.1,
        learning_rate: 1e-3,
        batch_size,
        patience: 5,
    }
}

/// Write a memory checkpoint for a trained model.
pub fn save_memory_checkpoint(model: &TgnModel, path: &Path) -> Result<()> {
    let Some(memory) = model.memory() else {
        return Err(CliError::Invalid(
            "this variant has no memory to checkpoint".into(),
        ));
    };
    let file = std::fs::File::create(path)?;
    memory.save_checkpoint(std::io::BufWriter::new(file))?;
    Ok(())
}

/// Negative-destination pool helper re-exported for drivers.
pub fn train_destinations(log: &EventLog, split: &SplitSpec) -> Vec<usize> {
    training_destinations(log, split)
}
