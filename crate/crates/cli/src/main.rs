use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tgn::{EvalSetting, VariantConfig};
use tgn_cli::{
    generate_csv, run, sweep, DataSource, GeneratorSpec, RunSpec, SyntheticKind, Task,
};

#[derive(Parser)]
#[command(name = "tgn", about = "Temporal graph network experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a variant and report link-prediction / node-classification
    /// metrics on the chronological test split.
    Run(RunArgs),
    /// Write a synthetic interaction dataset in the ingestion CSV schema.
    Generate(GenerateArgs),
    /// Run several presets on identical data and emit an accuracy/speed
    /// comparison table.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Periodic,
    LongMemory,
}

impl From<KindArg> for SyntheticKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Periodic => SyntheticKind::Periodic,
            KindArg::LongMemory => SyntheticKind::LongMemory,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Link,
    Node,
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplingArg {
    Recent,
    Uniform,
}

#[derive(Args)]
struct DataArgs {
    /// Interaction CSV (source_id,target_id,timestamp,state_label,f_1..f_d).
    #[arg(long, conflicts_with = "generate")]
    data: Option<PathBuf>,
    /// Generate a synthetic dataset instead of reading one.
    #[arg(long, value_enum)]
    generate: Option<KindArg>,
    /// Synthetic: total node count (half sources, half destinations).
    #[arg(long, default_value_t = 100)]
    gen_nodes: usize,
    /// Synthetic: number of interaction events.
    #[arg(long, default_value_t = 10_000)]
    gen_events: usize,
    /// Synthetic: edge-feature width.
    #[arg(long, default_value_t = 8)]
    gen_features: usize,
    /// Synthetic: periodic cycle length.
    #[arg(long, default_value_t = 2)]
    gen_cycle: usize,
}

impl DataArgs {
    fn source(&self, seed: u64) -> Result<DataSource, String> {
        match (&self.data, self.generate) {
            (Some(path), None) => Ok(DataSource::Csv(path.clone())),
            (None, Some(kind)) => {
                let mut spec =
                    GeneratorSpec::new(kind.into(), self.gen_nodes, self.gen_events, seed);
                spec.feature_dim = self.gen_features;
                spec.cycle_len = self.gen_cycle;
                Ok(DataSource::Synthetic(spec))
            }
            (None, None) => Err("one of --data or --generate is required".into()),
            (Some(_), Some(_)) => Err("--data conflicts with --generate".into()),
        }
    }
}

#[derive(Args)]
struct ModelArgs {
    /// Variant preset: tgn-attn, tgn-2l, tgn-no-mem, tgn-time, tgn-id,
    /// tgn-sum, tgn-mean, jodie, dyrep, tgat.
    #[arg(long, default_value = "tgn-attn")]
    variant: String,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    memory_dim: Option<usize>,
    #[arg(long)]
    time_dim: Option<usize>,
    #[arg(long)]
    embedding_dim: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    /// Override the variant's neighbors-per-hop fan-out.
    #[arg(long)]
    neighbors: Option<usize>,
    /// Override the variant's graph-embedding depth.
    #[arg(long)]
    layers: Option<usize>,
    /// Override the variant's neighbor sampling strategy.
    #[arg(long, value_enum)]
    sampling: Option<SamplingArg>,
}

impl ModelArgs {
    fn build(&self, data: DataSource, task: Task, inductive: bool) -> Result<RunSpec, String> {
        let mut variant = VariantConfig::preset(&self.variant).map_err(|e| e.to_string())?;
        if self.neighbors.is_some() || self.layers.is_some() {
            use tgn::EmbeddingMode::{Attention, GraphSum};
            variant.embedding = match variant.embedding {
                Attention { layers, neighbors } => Attention {
                    layers: self.layers.unwrap_or(layers),
                    neighbors: self.neighbors.unwrap_or(neighbors),
                },
                GraphSum { layers, neighbors } => GraphSum {
                    layers: self.layers.unwrap_or(layers),
                    neighbors: self.neighbors.unwrap_or(neighbors),
                },
                other => other,
            };
        }
        if let Some(s) = self.sampling {
            variant.sampling = match s {
                SamplingArg::Recent => tgstore::SamplingStrategy::MostRecent,
                SamplingArg::Uniform => tgstore::SamplingStrategy::Uniform,
            };
        }
        let mut spec = RunSpec::new(data, variant);
        spec.task = task;
        spec.setting = inductive.then_some(EvalSetting::Inductive);
        spec.epochs = self.epochs;
        spec.seed = self.seed;
        if let Some(v) = self.batch_size {
            spec.hp.batch_size = v;
        }
        if let Some(v) = self.lr {
            spec.hp.learning_rate = v as diffnum::Real;
        }
        if let Some(v) = self.memory_dim {
            spec.hp.memory_dim = v;
            spec.hp.embedding_dim = spec.hp.embedding_dim.min(v.max(1));
        }
        if let Some(v) = self.time_dim {
            spec.hp.time_dim = v;
        }
        if let Some(v) = self.embedding_dim {
            spec.hp.embedding_dim = v;
        }
        if let Some(v) = self.heads {
            spec.hp.heads = v;
        }
        if let Some(v) = self.dropout {
            spec.hp.dropout = v as diffnum::Real;
        }
        if let Some(v) = self.patience {
            spec.hp.patience = v;
        }
        Ok(spec)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Prediction task.
    #[arg(long, value_enum, default_value = "link")]
    task: TaskArg,
    /// Report only the inductive test setting.
    #[arg(long)]
    inductive: bool,
    /// Write the report here (also printed to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    kind: KindArg,
    #[arg(long, default_value_t = 100)]
    nodes: usize,
    #[arg(long, default_value_t = 10_000)]
    events: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    features: usize,
    #[arg(long, default_value_t = 2)]
    cycle: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated preset list.
    #[arg(long, value_delimiter = ',', required = true)]
    presets: Vec<String>,
    /// Write the comparison table here (also printed to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Run(args) => {
            let task = match args.task {
                TaskArg::Link => Task::Link,
                TaskArg::Node => Task::Node,
            };
            let data = args.data.source(args.model.seed)?;
            let mut spec = args.model.build(data, task, args.inductive)?;
            spec.out = args.out;
            let outcome = run(&spec).map_err(|e| e.to_string())?;
            print!("{}", outcome.report);
            Ok(())
        }
        Command::Generate(args) => {
            let mut spec =
                GeneratorSpec::new(args.kind.into(), args.nodes, args.events, args.seed);
            spec.feature_dim = args.features;
            spec.cycle_len = args.cycle;
            generate_csv(&spec, &args.out).map_err(|e| e.to_string())?;
            println!(
                "wrote {} ({} events, {} nodes requested)",
                args.out.display(),
                args.events,
                args.nodes
            );
            Ok(())
        }
        Command::Sweep(args) => {
            let data = args.data.source(args.model.seed)?;
            let spec = args.model.build(data, Task::Link, false)?;
            let outcome = sweep(&args.presets, &spec).map_err(|e| e.to_string())?;
            if let Some(path) = args.out {
                std::fs::write(&path, &outcome.table).map_err(|e| e.to_string())?;
            }
            print!("{}", outcome.table);
            Ok(())
        }
    }
}
