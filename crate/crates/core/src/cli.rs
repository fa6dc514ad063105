//! The `mvstm` command line.
//!
//! Settings resolve as: explicit flags, then the `--config` JSON file, then
//! built-in defaults. A seed must come from `--seed`, the config file, or the
//! `MVSTM_SEED` environment variable, in that order.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataio::{self, Dataset, SyntheticConfig, SyntheticMode};
use crate::error::{Error, Result};
use crate::eval::{self, DataSource, ExperimentConfig, Method};
use crate::graph2vec::{self, EmbeddingState, Objective, SkipgramConfig};
use crate::mvstm::{self, SpatialFeatures, TrainConfig, Variant};
use crate::roadgraph::{build_corpus, CorpusConfig};

pub const SEED_ENV: &str = "MVSTM_SEED";

#[derive(Debug, Parser)]
#[command(name = "mvstm", version, about = "Multi-view spatial-temporal travel time estimation")]
pub struct Cli {
    /// JSON file with settings for the chosen subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Print the resolved settings as JSON and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic road network, trajectories and manifest.
    Generate(GenerateArgs),
    /// Build the subgraph corpus and train subgraph embeddings.
    Embed(EmbedArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Compare methods on held-out splits and write a report.
    Evaluate(EvaluateArgs),
    /// Write predictions for a trajectory file.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Road network CSV (`src_link,dst_link`).
    #[arg(long)]
    pub network: Option<PathBuf>,
    /// Trajectory JSONL.
    #[arg(long)]
    pub trajectories: Option<PathBuf>,
    /// Cardinality manifest JSON.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SyntheticArgs {
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub edge_density: Option<f64>,
    #[arg(long = "trajectory-count", alias = "count")]
    pub trajectory_count: Option<usize>,
    #[arg(long)]
    pub route_length: Option<usize>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<SyntheticMode>,
    #[arg(long)]
    pub time_slices: Option<usize>,
    #[arg(long)]
    pub drivers: Option<usize>,
    #[arg(long)]
    pub weather_kinds: Option<usize>,
    #[arg(long)]
    pub status_levels: Option<usize>,
    #[arg(long)]
    pub noise_scale: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Also write the hidden generator quantities to `truth.json`.
    #[arg(long)]
    pub truth: bool,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub edge_density: Option<f64>,
    #[arg(long)]
    pub trajectories: Option<usize>,
    #[arg(long)]
    pub route_length: Option<usize>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<SyntheticMode>,
    #[arg(long)]
    pub time_slices: Option<usize>,
    #[arg(long)]
    pub drivers: Option<usize>,
    #[arg(long)]
    pub weather_kinds: Option<usize>,
    #[arg(long)]
    pub status_levels: Option<usize>,
    #[arg(long)]
    pub noise_scale: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    #[arg(long)]
    pub hops: Option<usize>,
    #[arg(long)]
    pub walks_per_graph: Option<usize>,
    #[arg(long)]
    pub walk_length: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Embedding JSON to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Log-likelihood trace; defaults to `<out>.trace.json`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub delta: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Use negative sampling with this many negatives (0 = full softmax).
    #[arg(long)]
    pub negatives: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub delta: Option<usize>,
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Embedding JSON from `embed`, built on the same trajectory file.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-epoch loss trace; defaults to `<out>.trace.json`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Single seed; see also `--seeds`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    pub methods: Option<Vec<Method>>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub synthetic: SyntheticArgs,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Report JSON; the text table goes next to it as `.txt`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub timing: bool,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub skipgram_epochs: Option<usize>,
    #[command(flatten)]
    pub corpus: CorpusArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub trajectories: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Embedding JSON; defaults to the one recorded in the checkpoint.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Predictions CSV to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> std::result::Result<SyntheticMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown variant `{s}` (expected full, no_spatial or rnn_only)"))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub network: Option<PathBuf>,
    pub trajectories: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
}

impl DataPaths {
    fn overlay(&mut self, a: &DataArgs) {
        set(&mut self.network, a.network.clone());
        set(&mut self.trajectories, a.trajectories.clone());
        set(&mut self.manifest, a.manifest.clone());
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub truth: bool,
    pub synthetic: SyntheticConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    pub seed: Option<u64>,
    pub data: DataPaths,
    pub out: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub corpus: CorpusConfig,
    pub skipgram: SkipgramConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCommandConfig {
    pub seed: Option<u64>,
    pub data: DataPaths,
    pub embeddings: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub out: Option<PathBuf>,
    pub experiment: ExperimentConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    pub checkpoint: Option<PathBuf>,
    pub trajectories: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

fn set<T>(slot: &mut T, value: Option<impl Into<T>>) {
    if let Some(v) = value {
        *slot = v.into();
    }
}

fn set_opt<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn resolve_seed(seed: Option<u64>) -> Result<u64> {
    if let Some(s) = seed {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        Err(_) => Err(Error::Config(format!(
            "missing required flag --seed (or set it in --config or {SEED_ENV})"
        ))),
    }
}

fn require(path: &Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    path.clone()
        .ok_or_else(|| Error::Config(format!("missing required flag --{flag}")))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(OsString::from).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

fn print_json<T: Serialize>(value: &T) {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value).expect("config serializes");
    // A closed pipe (e.g. `| head`) is not an error worth reporting.
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn load_dataset(paths: &DataPaths) -> Result<Dataset> {
    let manifest = dataio::load_manifest(&require(&paths.manifest, "manifest")?)?;
    let data = dataio::parse_trajectories(&require(&paths.trajectories, "trajectories")?, &manifest)?;
    if let Some(net) = &paths.network {
        data.validate_against(&dataio::parse_road_network(net)?)?;
    }
    Ok(data)
}

fn apply_synthetic(cfg: &mut SyntheticConfig, a: &GenerateArgs) {
    set(&mut cfg.nodes, a.nodes);
    set(&mut cfg.edge_density, a.edge_density);
    set(&mut cfg.trajectories, a.trajectories);
    set(&mut cfg.mean_route_length, a.route_length);
    set(&mut cfg.mode, a.mode);
    set(&mut cfg.time_slices, a.time_slices);
    set(&mut cfg.drivers, a.drivers);
    set(&mut cfg.weather_kinds, a.weather_kinds);
    set(&mut cfg.status_levels, a.status_levels);
    set(&mut cfg.noise_scale, a.noise_scale);
}

fn apply_model(cfg: &mut TrainConfig, a: &ModelArgs) {
    set(&mut cfg.learning_rate, a.lr);
    set(&mut cfg.epochs, a.epochs);
    set(&mut cfg.batch_size, a.batch_size);
    set(&mut cfg.d, a.d);
    set(&mut cfg.hidden, a.hidden);
    set(&mut cfg.delta, a.delta);
    set(&mut cfg.variant, a.variant);
}

fn apply_corpus(cfg: &mut CorpusConfig, a: &CorpusArgs) {
    set(&mut cfg.hops, a.hops);
    set(&mut cfg.walks_per_graph, a.walks_per_graph);
    set(&mut cfg.walk_length, a.walk_length);
}

fn cmd_generate(cli: &Cli, a: &GenerateArgs) -> Result<()> {
    let mut cfg: GenerateConfig = load_config(cli.config.as_deref())?;
    set_opt(&mut cfg.seed, a.seed);
    set_opt(&mut cfg.out_dir, a.out_dir.clone());
    cfg.truth |= a.truth;
    apply_synthetic(&mut cfg.synthetic, a);
    if cli.print_config {
        cfg.seed = resolve_seed(cfg.seed).ok();
        print_json(&cfg);
        return Ok(());
    }
    let seed = resolve_seed(cfg.seed)?;
    let dir = require(&cfg.out_dir, "out-dir")?;
    let world = dataio::generate_synthetic(&cfg.synthetic, seed)?;
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    dataio::write_road_network(&dir.join("network.csv"), &world.network)?;
    dataio::write_trajectories(&dir.join("trajectories.jsonl"), &world.dataset)?;
    dataio::write_manifest(&dir.join("manifest.json"), &world.dataset.cardinalities)?;
    if cfg.truth {
        write_json(&dir.join("truth.json"), &world.truth)?;
    }
    eprintln!(
        "wrote {} links and {} trajectories to {}",
        world.network.node_count(),
        world.dataset.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_embed(cli: &Cli, a: &EmbedArgs) -> Result<()> {
    let mut cfg: EmbedConfig = load_config(cli.config.as_deref())?;
    set_opt(&mut cfg.seed, a.seed);
    cfg.data.overlay(&a.data);
    set_opt(&mut cfg.out, a.out.clone());
    set_opt(&mut cfg.trace, a.trace.clone());
    apply_corpus(&mut cfg.corpus, &a.corpus);
    set(&mut cfg.skipgram.delta, a.delta);
    set(&mut cfg.skipgram.learning_rate, a.lr);
    set(&mut cfg.skipgram.epochs, a.epochs);
    if let Some(k) = a.negatives {
        cfg.skipgram.objective = if k == 0 {
            Objective::FullSoftmax
        } else {
            Objective::NegativeSampling { k }
        };
    }
    if cli.print_config {
        cfg.seed = resolve_seed(cfg.seed).ok();
        print_json(&cfg);
        return Ok(());
    }
    let seed = resolve_seed(cfg.seed)?;
    let out = require(&cfg.out, "out")?;
    let network = dataio::parse_road_network(&require(&cfg.data.network, "network")?)?;
    let dataset = load_dataset(&cfg.data)?;
    let corpus = build_corpus(&network, &dataset, &cfg.corpus, seed)?;
    let skipgram = SkipgramConfig {
        seed,
        ..cfg.skipgram.clone()
    };
    let result = graph2vec::train(&corpus, &skipgram)?;
    result.state.write_json(&out)?;
    let trace = cfg.trace.clone().unwrap_or_else(|| sibling(&out, ".trace.json"));
    write_json(&trace, &result.trace)?;
    eprintln!(
        "embedded {} subgraphs over {} nodes ({} steps)",
        result.state.num_graphs(),
        result.state.vocab_size(),
        result.steps
    );
    Ok(())
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let mut cfg: TrainCommandConfig = load_config(cli.config.as_deref())?;
    set_opt(&mut cfg.seed, a.seed);
    cfg.data.overlay(&a.data);
    set_opt(&mut cfg.embeddings, a.embeddings.clone());
    set_opt(&mut cfg.out, a.out.clone());
    set_opt(&mut cfg.trace, a.trace.clone());
    apply_model(&mut cfg.train, &a.model);
    if cli.print_config {
        cfg.seed = resolve_seed(cfg.seed).ok();
        print_json(&cfg);
        return Ok(());
    }
    let seed = resolve_seed(cfg.seed)?;
    let out = require(&cfg.out, "out")?;
    let emb_path = require(&cfg.embeddings, "embeddings")?;
    let dataset = load_dataset(&cfg.data)?;
    let state = EmbeddingState::read_json(&emb_path)?;
    let spatial = SpatialFeatures::from_embeddings(&state, dataset.len())?;
    let train_cfg = TrainConfig {
        seed,
        delta: state.delta,
        ..cfg.train.clone()
    };
    let result = mvstm::train(&dataset, &spatial, &train_cfg)?;
    mvstm::save_checkpoint(&result.model, Some(emb_path.display().to_string()), &out)?;
    let trace = cfg.trace.clone().unwrap_or_else(|| sibling(&out, ".trace.json"));
    write_json(&trace, &result.trace)?;
    if let Some(last) = result.trace.last() {
        eprintln!("trained {} epochs, final training MAPE {last:.5}", result.trace.len());
    }
    Ok(())
}

fn cmd_evaluate(cli: &Cli, a: &EvaluateArgs) -> Result<()> {
    let mut cfg: EvaluateConfig = load_config(cli.config.as_deref())?;
    set_opt(&mut cfg.out, a.out.clone());
    let exp = &mut cfg.experiment;
    if let Some(seeds) = &a.seeds {
        exp.seeds = seeds.clone();
    } else if let Some(s) = a.seed {
        exp.seeds = vec![s];
    } else if exp.seeds.is_empty() {
        if let Ok(s) = resolve_seed(None) {
            exp.seeds = vec![s];
        }
    }
    set(&mut exp.methods, a.methods.clone());
    set(&mut exp.train_fraction, a.train_fraction);
    exp.timing |= a.timing;
    apply_model(&mut exp.train, &a.model);
    set(&mut exp.skipgram.epochs, a.skipgram_epochs);
    exp.skipgram.delta = exp.train.delta;
    apply_corpus(&mut exp.corpus, &a.corpus);
    if a.data.trajectories.is_some() || a.data.network.is_some() || a.data.manifest.is_some() {
        exp.source = DataSource::Files {
            network: require(&a.data.network, "network")?,
            trajectories: require(&a.data.trajectories, "trajectories")?,
            manifest: require(&a.data.manifest, "manifest")?,
        };
    } else if let DataSource::Synthetic(syn) = &mut exp.source {
        let s = &a.synthetic;
        set(&mut syn.nodes, s.nodes);
        set(&mut syn.edge_density, s.edge_density);
        set(&mut syn.trajectories, s.trajectory_count);
        set(&mut syn.mean_route_length, s.route_length);
        set(&mut syn.mode, s.mode);
        set(&mut syn.time_slices, s.time_slices);
        set(&mut syn.drivers, s.drivers);
        set(&mut syn.weather_kinds, s.weather_kinds);
        set(&mut syn.status_levels, s.status_levels);
        set(&mut syn.noise_scale, s.noise_scale);
    }
    if cli.print_config {
        print_json(&cfg);
        return Ok(());
    }
    if cfg.experiment.seeds.is_empty() {
        return Err(Error::Config(format!(
            "missing required flag --seed or --seeds (or set seeds in --config or {SEED_ENV})"
        )));
    }
    let out = require(&cfg.out, "out")?;
    let report = eval::run_experiment(&cfg.experiment)?;
    let table = eval::emit_report(&report, &out)?;
    eprint!("{}", report.render_table());
    eprintln!("wrote {} and {}", out.display(), table.display());
    Ok(())
}

fn cmd_predict(cli: &Cli, a: &PredictArgs) -> Result<()> {
    let mut cfg: PredictConfig = load_config(cli.config.as_deref())?;
    set_opt(&mut cfg.checkpoint, a.checkpoint.clone());
    set_opt(&mut cfg.trajectories, a.trajectories.clone());
    set_opt(&mut cfg.manifest, a.manifest.clone());
    set_opt(&mut cfg.embeddings, a.embeddings.clone());
    set_opt(&mut cfg.out, a.out.clone());
    if cli.print_config {
        print_json(&cfg);
        return Ok(());
    }
    let out = require(&cfg.out, "out")?;
    let ckpt = mvstm::load_checkpoint(&require(&cfg.checkpoint, "checkpoint")?)?;
    let emb_path = match (&cfg.embeddings, &ckpt.graph2vec_ref) {
        (Some(p), _) => p.clone(),
        (None, Some(r)) => PathBuf::from(r),
        (None, None) => return Err(Error::Config("missing required flag --embeddings".into())),
    };
    let model = ckpt.into_model()?;
    let paths = DataPaths {
        network: None,
        trajectories: cfg.trajectories.clone(),
        manifest: cfg.manifest.clone(),
    };
    let dataset = load_dataset(&paths)?;
    let state = EmbeddingState::read_json(&emb_path)?;
    let spatial = SpatialFeatures::from_embeddings(&state, dataset.len())?;
    let preds = mvstm::predict(&model, &dataset, &spatial)?;
    mvstm::write_predictions(&out, &preds)?;
    eprintln!("wrote {} predictions to {}", preds.len(), out.display());
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(cli, a),
        Command::Embed(a) => cmd_embed(cli, a),
        Command::Train(a) => cmd_train(cli, a),
        Command::Evaluate(a) => cmd_evaluate(cli, a),
        Command::Predict(a) => cmd_predict(cli, a),
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 1,
        Error::Numeric(_) => 3,
        _ => 2,
    }
}

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
