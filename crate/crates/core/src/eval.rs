//! Metrics, the Simple ETA baseline and the experiment runner.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{self, generate_synthetic, Dataset, SyntheticConfig, Trajectory};
use crate::error::{Error, Result};
use crate::graph2vec::{self, SkipgramConfig};
use crate::mvstm::{self, Prediction, SpatialFeatures, TrainConfig, Variant};
use crate::roadgraph::{build_corpus, CorpusConfig, RoadNetwork};

/// `(1/n) Σ |ŷ_i − y_i| / y_i`, evaluated in the same order as the
/// training loss so the two agree to the last bit.
pub fn mape_metric(y_hat: &[f64], y: &[f64]) -> Result<f64> {
    if y_hat.len() != y.len() || y.is_empty() {
        return Err(Error::Contract(format!(
            "mape needs equal nonempty lengths, got {} predictions and {} actuals",
            y_hat.len(),
            y.len()
        )));
    }
    if let Some((i, a)) = y.iter().enumerate().find(|(_, a)| !(**a > 0.0)) {
        return Err(Error::Validation {
            line: i + 1,
            field: "actual_time".into(),
            message: format!("expected a positive time, got {a}"),
        });
    }
    let total: f64 = y_hat.iter().zip(y).map(|(p, a)| (p - a).abs() * (1.0 / a)).sum();
    Ok(total * (1.0 / y.len() as f64))
}

/// Historical mean link and crossing times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkTimeTable {
    pub link_mean: BTreeMap<usize, f64>,
    pub crossing_mean: BTreeMap<usize, f64>,
    pub global_link_mean: f64,
    pub global_crossing_mean: f64,
}

impl LinkTimeTable {
    pub fn build(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Contract("link time table needs a nonempty training split".into()));
        }
        let mut links: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        let mut crossings: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for t in &train.trajectories {
            for l in &t.links {
                let e = links.entry(l.link_id).or_default();
                e.0 += l.link_time;
                e.1 += 1;
            }
            for c in &t.crossings {
                let e = crossings.entry(c.crossing_id).or_default();
                e.0 += c.cross_time;
                e.1 += 1;
            }
        }
        let global = |m: &BTreeMap<usize, (f64, usize)>| {
            let (s, n) = m.values().fold((0.0, 0), |(s, n), (vs, vn)| (s + vs, n + vn));
            if n == 0 {
                0.0
            } else {
                s / n as f64
            }
        };
        let means = |m: &BTreeMap<usize, (f64, usize)>| m.iter().map(|(k, (s, n))| (*k, s / *n as f64)).collect();
        Ok(Self {
            global_link_mean: global(&links),
            global_crossing_mean: global(&crossings),
            link_mean: means(&links),
            crossing_mean: means(&crossings),
        })
    }

    /// A table holding known per-id times, indexed by id.
    pub fn from_times(link_time: &[f64], cross_time: &[f64]) -> Self {
        let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        Self {
            link_mean: link_time.iter().copied().enumerate().collect(),
            crossing_mean: cross_time.iter().copied().enumerate().collect(),
            global_link_mean: mean(link_time),
            global_crossing_mean: mean(cross_time),
        }
    }

    pub fn link(&self, id: usize) -> f64 {
        self.link_mean.get(&id).copied().unwrap_or(self.global_link_mean)
    }

    pub fn crossing(&self, id: usize) -> f64 {
        self.crossing_mean.get(&id).copied().unwrap_or(self.global_crossing_mean)
    }
}

/// Sum of mean link times along the route plus mean crossing times.
pub fn simple_eta(table: &LinkTimeTable, t: &Trajectory) -> f64 {
    let links: f64 = t.links.iter().map(|l| table.link(l.link_id)).sum();
    let crossings: f64 = t.crossings.iter().map(|c| table.crossing(c.crossing_id)).sum();
    links + crossings
}

pub fn simple_eta_predictions(table: &LinkTimeTable, dataset: &Dataset) -> Vec<Prediction> {
    dataset
        .trajectories
        .iter()
        .enumerate()
        .map(|(i, t)| Prediction {
            trajectory_index: i,
            eta: simple_eta(table, t),
        })
        .collect()
}

/// Actual times of a dataset, all of which must be present.
pub fn actual_times(dataset: &Dataset) -> Result<Vec<f64>> {
    dataset
        .trajectories
        .iter()
        .enumerate()
        .map(|(i, t)| mvstm::require_actual(t, i))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SimpleEta,
    Mvstm,
    MvstmNoSpatial,
    MvstmRnnOnly,
    Ensemble,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::SimpleEta,
        Method::Mvstm,
        Method::MvstmNoSpatial,
        Method::MvstmRnnOnly,
        Method::Ensemble,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::SimpleEta => "simple_eta",
            Method::Mvstm => "mvstm",
            Method::MvstmNoSpatial => "mvstm_no_spatial",
            Method::MvstmRnnOnly => "mvstm_rnn_only",
            Method::Ensemble => "ensemble",
        }
    }

    fn variant(self) -> Option<Variant> {
        match self {
            Method::Mvstm | Method::Ensemble => Some(Variant::Full),
            Method::MvstmNoSpatial => Some(Variant::NoSpatial),
            Method::MvstmRnnOnly => Some(Variant::RnnOnly),
            Method::SimpleEta => None,
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let known: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::Config(format!("unknown method `{s}` (expected one of {})", known.join(", ")))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// A fresh world is generated for each seed.
    Synthetic(SyntheticConfig),
    Files {
        network: PathBuf,
        trajectories: PathBuf,
        manifest: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub train_fraction: f64,
    /// Weight of the MVSTM predictions in the ensemble; Simple ETA gets the rest.
    pub ensemble_weight: f64,
    pub train: TrainConfig,
    pub skipgram: SkipgramConfig,
    pub corpus: CorpusConfig,
    /// Record wall-clock training time. Off by default so reports are reproducible byte for byte.
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic(SyntheticConfig::default()),
            methods: vec![Method::SimpleEta, Method::Mvstm],
            seeds: Vec::new(),
            train_fraction: 0.8,
            ensemble_weight: 0.9,
            train: TrainConfig::default(),
            skipgram: SkipgramConfig::default(),
            corpus: CorpusConfig::default(),
            timing: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("no methods requested".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds given".into()));
        }
        if !(0.0..=1.0).contains(&self.ensemble_weight) {
            return Err(Error::Config(format!("ensemble weight {} outside [0, 1]", self.ensemble_weight)));
        }
        if self.skipgram.delta != self.train.delta {
            return Err(Error::Config(format!(
                "skipgram delta {} differs from model delta {}",
                self.skipgram.delta, self.train.delta
            )));
        }
        self.train.validate()?;
        self.skipgram.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub name: String,
    /// Mean held-out MAPE over seeds.
    pub mape: f64,
    pub per_seed: Vec<f64>,
    pub train_seconds: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub source: String,
    pub trajectories: usize,
    pub nodes: usize,
    pub train_size: usize,
    pub test_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub methods: Vec<MethodResult>,
    pub dataset: DatasetInfo,
    pub seeds: Vec<u64>,
    /// Published results on a proprietary dataset; context only.
    pub paper_reference: BTreeMap<String, f64>,
    pub notes: Vec<String>,
    pub config: ExperimentConfig,
}

impl EvalReport {
    pub fn method(&self, name: &str) -> Option<&MethodResult> {
        self.methods.iter().find(|m| m.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: format!("report: {e}"),
        })
    }

    /// One header line, one line per method, then the reference footer.
    pub fn render_table(&self) -> String {
        let width = self.methods.iter().map(|m| m.name.len()).max().unwrap_or(6).max(6);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>10}  {:>12}", "method", "mape", "train_s");
        for m in &self.methods {
            let secs = m.train_seconds.map_or("-".to_string(), |s| format!("{s:.1}"));
            let _ = writeln!(out, "{:<width$}  {:>10.5}  {:>12}", m.name, m.mape, secs);
        }
        let _ = writeln!(out);
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(
            out,
            "dataset: {} ({} trajectories, {} train / {} test), seeds: {}",
            self.dataset.source,
            self.dataset.trajectories,
            self.dataset.train_size,
            self.dataset.test_size,
            seeds.join(",")
        );
        let refs: Vec<String> = self.paper_reference.iter().map(|(k, v)| format!("{k} {v}")).collect();
        let _ = writeln!(out, "published reference (different data, not comparable): {}", refs.join(", "));
        out
    }
}

pub fn paper_reference() -> BTreeMap<String, f64> {
    [("mvstm", 0.12202), ("wdr", 0.12831), ("simple_eta", 0.16368)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

/// Writes the JSON report at `path` and the text table next to it with a `.txt` extension.
pub fn emit_report(report: &EvalReport, path: &Path) -> Result<PathBuf> {
    std::fs::write(path, report.to_json()).map_err(|e| Error::io(path, e))?;
    let table = path.with_extension("txt");
    std::fs::write(&table, report.render_table()).map_err(|e| Error::io(&table, e))?;
    Ok(table)
}

struct SeedOutcome {
    mape: BTreeMap<Method, f64>,
    seconds: BTreeMap<Method, f64>,
    info: DatasetInfo,
}

fn load_world(source: &DataSource, seed: u64) -> Result<(RoadNetwork, Dataset, String)> {
    match source {
        DataSource::Synthetic(cfg) => {
            let world = generate_synthetic(cfg, seed)?;
            let mode = serde_json::to_value(cfg.mode).expect("mode serializes");
            let desc = format!("synthetic/{}", mode.as_str().unwrap_or("?"));
            Ok((world.network, world.dataset, desc))
        }
        DataSource::Files {
            network,
            trajectories,
            manifest,
        } => {
            let net = dataio::parse_road_network(network)?;
            let card = dataio::load_manifest(manifest)?;
            let data = dataio::parse_trajectories(trajectories, &card)?;
            data.validate_against(&net)?;
            Ok((net, data, trajectories.display().to_string()))
        }
    }
}

fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<SeedOutcome> {
    let (network, dataset, source) = load_world(&config.source, seed)?;
    let (train_idx, test_idx) = dataio::split_indices(dataset.len(), config.train_fraction, seed)?;
    let train = dataset.subset(&train_idx);
    let test = dataset.subset(&test_idx);
    let truth = actual_times(&test)?;
    actual_times(&train)?;

    let wanted: Vec<Method> = {
        let mut m = config.methods.clone();
        if m.contains(&Method::Ensemble) {
            m.extend([Method::Mvstm, Method::SimpleEta]);
        }
        m.sort();
        m.dedup();
        m
    };

    let needs_spatial = wanted.iter().any(|m| matches!(m, Method::Mvstm | Method::MvstmRnnOnly));
    let spatial = if needs_spatial {
        // Walks depend only on the routes and the network, so the whole
        // dataset shares one embedding; targets are never read here.
        let corpus = build_corpus(&network, &dataset, &config.corpus, seed)?;
        let skipgram = SkipgramConfig {
            seed,
            ..config.skipgram.clone()
        };
        let state = graph2vec::train(&corpus, &skipgram)?.state;
        SpatialFeatures::from_embeddings(&state, dataset.len())?
    } else {
        SpatialFeatures::zeros(dataset.len(), config.train.delta)
    };
    let train_spatial = spatial.select(&train_idx)?;
    let test_spatial = spatial.select(&test_idx)?;

    let mut preds: BTreeMap<Method, Vec<Prediction>> = BTreeMap::new();
    let mut seconds = BTreeMap::new();
    for &method in &wanted {
        let start = Instant::now();
        let p = match method {
            Method::SimpleEta => simple_eta_predictions(&LinkTimeTable::build(&train)?, &test),
            Method::Ensemble => continue,
            m => {
                let cfg = TrainConfig {
                    seed,
                    variant: m.variant().expect("model method"),
                    ..config.train.clone()
                };
                let out = mvstm::train(&train, &train_spatial, &cfg)?;
                mvstm::predict(&out.model, &test, &test_spatial)?
            }
        };
        seconds.insert(method, start.elapsed().as_secs_f64());
        preds.insert(method, p);
    }
    if wanted.contains(&Method::Ensemble) {
        let blended = mvstm::ensemble(&preds[&Method::Mvstm], &preds[&Method::SimpleEta], config.ensemble_weight)?;
        seconds.insert(Method::Ensemble, seconds[&Method::Mvstm] + seconds[&Method::SimpleEta]);
        preds.insert(Method::Ensemble, blended);
    }

    let mut mape = BTreeMap::new();
    for (m, p) in &preds {
        let etas: Vec<f64> = p.iter().map(|x| x.eta).collect();
        mape.insert(*m, mape_metric(&etas, &truth)?);
    }
    Ok(SeedOutcome {
        mape,
        seconds,
        info: DatasetInfo {
            source,
            trajectories: dataset.len(),
            nodes: network.node_count(),
            train_size: train.len(),
            test_size: test.len(),
        },
    })
}

/// Trains every requested method on each seed's training split and scores
/// it on the held-out split. Seeds run in parallel; results are assembled
/// in seed order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<EvalReport> {
    config.validate()?;
    let outcomes = config
        .seeds
        .par_iter()
        .map(|&s| run_seed(config, s))
        .collect::<Result<Vec<_>>>()?;

    let methods = config
        .methods
        .iter()
        .map(|&m| {
            let per_seed: Vec<f64> = outcomes.iter().map(|o| o.mape[&m]).collect();
            let mape = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
            let train_seconds = config
                .timing
                .then(|| outcomes.iter().map(|o| o.seconds[&m]).sum::<f64>() / outcomes.len() as f64);
            MethodResult {
                name: m.name().to_string(),
                mape,
                per_seed,
                train_seconds,
            }
        })
        .collect();

    Ok(EvalReport {
        methods,
        dataset: outcomes[0].info.clone(),
        seeds: config.seeds.clone(),
        paper_reference: paper_reference(),
        notes: vec![
            "mvstm_no_spatial: the spatial feature is replaced by zeros; parameter count unchanged".into(),
            "mvstm_rnn_only: the convolution/attention channel is replaced by zeros".into(),
            format!(
                "ensemble: {} x mvstm + {} x simple_eta",
                config.ensemble_weight,
                1.0 - config.ensemble_weight
            ),
            "simple_eta: unseen links and crossings use the global training mean".into(),
        ],
        config: config.clone(),
    })
}
