//! The three-view travel time model.
//!
//! A trajectory's links and crossings become the rows of a feature matrix
//! `T` (links first, then crossings). Two channels read `T`: an LSTM whose
//! last hidden state is `h_l`, and convolution followed by self-attention
//! and sum pooling, giving `h_a`. Head and condition fields form the
//! semantic vector `S`, and the subgraph embedding is the spatial feature
//! `m`. The fusion head maps `[h_l ; h_a ; S ; m]` through two rectified
//! dense layers to a softplus output scaled by the mean training time.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use train::{
    ensemble, mape_loss, predict, read_predictions, train, train_from, write_predictions, Prediction, TrainOutput,
};

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{
    Cardinalities, Conditions, CrossingRecord, Dataset, HeadRecord, LinkRecord, Trajectory, CROSSING_ID, DAY_OF_WEEK,
    DRIVER_ID, LINK_ID, STATUS, TIME_SLICE, WEATHER,
};
use crate::error::{Error, Result};
use crate::graph2vec::EmbeddingState;
use crate::nn::{self, LstmVars};
use crate::tensor::{Tape, Tensor, Var};

/// Which parts of the model contribute to the fused vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    /// Spatial feature replaced by zeros.
    NoSpatial,
    /// Attention channel replaced by zeros; only the LSTM reads the sequence.
    RnnOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Feature dimension of link, crossing and semantic vectors.
    pub d: usize,
    /// LSTM hidden size.
    pub hidden: usize,
    /// Spatial feature dimension.
    pub delta: usize,
    /// Subgraph radius used when building the spatial corpus.
    pub hops: usize,
    pub conv_window: usize,
    pub fc_widths: [usize; 2],
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub variant: Variant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 32,
            seed: 0,
            d: 16,
            hidden: 16,
            delta: 16,
            hops: 2,
            conv_window: 3,
            fc_widths: [64, 32],
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            variant: Variant::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("d", self.d),
            ("hidden", self.hidden),
            ("delta", self.delta),
            ("fc_widths[0]", self.fc_widths[0]),
            ("fc_widths[1]", self.fc_widths[1]),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.conv_window % 2 == 0 {
            return Err(Error::Config(format!("conv_window must be odd, got {}", self.conv_window)));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!("learning_rate must be ≥ 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Mean and standard deviation used to standardise one numeric input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Standardizer {
    pub const IDENTITY: Self = Self { mean: 0.0, std: 1.0 };

    fn fit(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::IDENTITY;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        Self {
            mean,
            std: if std > 1e-12 { std } else { 1.0 },
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }
}

/// Everything about the inputs the parameters depend on: vocabulary sizes,
/// the extra feature names, numeric standardisation and the output scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub cardinalities: Cardinalities,
    pub link_numeric: Vec<String>,
    pub crossing_numeric: Vec<String>,
    pub scalers: BTreeMap<String, Standardizer>,
    /// Model outputs are `target_scale · softplus(z)`.
    pub target_scale: f64,
}

const LINK_TIME: &str = "link.link_time";
const LINK_RATIO: &str = "link.link_ratio";
const CROSS_TIME: &str = "crossing.cross_time";
const DISTANCE: &str = "semantic.distance";
const SIMPLE_ETA: &str = "semantic.simple_eta";
const TEMPERATURE: &str = "semantic.temperature";

impl FeatureSpec {
    /// Fits scalers and the output scale on `train`, which must carry
    /// actual times.
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Contract("cannot fit features on an empty dataset".into()));
        }
        let mut link_numeric = BTreeSet::new();
        let mut crossing_numeric = BTreeSet::new();
        let mut samples: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut push = |k: &str, v: f64| samples.entry(k.to_string()).or_default().push(v);
        let mut atas = Vec::with_capacity(train.len());
        for (i, t) in train.trajectories.iter().enumerate() {
            atas.push(require_actual(t, i)?);
            for l in &t.links {
                push(LINK_TIME, l.link_time);
                push(LINK_RATIO, l.link_ratio);
                for (k, &v) in &l.extra_num {
                    link_numeric.insert(k.clone());
                    push(&format!("link.{k}"), v);
                }
            }
            for c in &t.crossings {
                push(CROSS_TIME, c.cross_time);
                for (k, &v) in &c.extra_num {
                    crossing_numeric.insert(k.clone());
                    push(&format!("crossing.{k}"), v);
                }
            }
            push(DISTANCE, t.head.distance);
            push(SIMPLE_ETA, t.head.simple_eta);
            push(TEMPERATURE, t.conditions.temperature);
        }
        let scalers = samples.iter().map(|(k, v)| (k.clone(), Standardizer::fit(v))).collect();
        let target_scale = atas.iter().sum::<f64>() / atas.len() as f64;
        Ok(Self {
            cardinalities: train.cardinalities.clone(),
            link_numeric: link_numeric.into_iter().collect(),
            crossing_numeric: crossing_numeric.into_iter().collect(),
            scalers,
            target_scale,
        })
    }

    /// Identity scalers and unit output scale; mainly for inspection and tests.
    pub fn unscaled(cardinalities: Cardinalities) -> Self {
        Self {
            cardinalities,
            link_numeric: Vec::new(),
            crossing_numeric: Vec::new(),
            scalers: BTreeMap::new(),
            target_scale: 1.0,
        }
    }

    fn scale(&self, key: &str, x: f64) -> f64 {
        self.scalers.get(key).copied().unwrap_or(Standardizer::IDENTITY).apply(x)
    }

    fn card(&self, key: &str) -> Result<usize> {
        self.cardinalities
            .get(key)
            .copied()
            .ok_or_else(|| Error::Lookup(format!("feature `{key}` has no declared cardinality")))
    }

    fn extra_cats(&self, prefix: &str) -> Vec<String> {
        let p = format!("{prefix}.");
        self.cardinalities
            .keys()
            .filter_map(|k| k.strip_prefix(&p).map(str::to_string))
            .collect()
    }
}

pub(crate) fn require_actual(t: &Trajectory, index: usize) -> Result<f64> {
    match t.actual_time {
        Some(a) if a > 0.0 && a.is_finite() => Ok(a),
        Some(a) => Err(Error::Validation {
            line: index + 1,
            field: "actual_time".into(),
            message: format!("expected a positive time, got {a}"),
        }),
        None => Err(Error::Validation {
            line: index + 1,
            field: "actual_time".into(),
            message: "missing actual_time".into(),
        }),
    }
}

/// Spatial features aligned with a dataset: row `i` belongs to trajectory `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialFeatures {
    table: Tensor,
}

impl SpatialFeatures {
    pub fn new(table: Tensor) -> Result<Self> {
        if table.shape().len() != 2 {
            return Err(Error::Shape {
                op: "spatial_features",
                lhs: table.shape().to_vec(),
                rhs: vec![],
            });
        }
        Ok(Self { table })
    }

    pub fn zeros(len: usize, delta: usize) -> Self {
        Self {
            table: Tensor::zeros(&[len, delta]),
        }
    }

    /// Graph vectors of `state`, which must hold one graph per trajectory.
    pub fn from_embeddings(state: &EmbeddingState, trajectories: usize) -> Result<Self> {
        if state.num_graphs() != trajectories {
            return Err(Error::Lookup(format!(
                "embeddings cover {} subgraphs but the dataset has {trajectories} trajectories",
                state.num_graphs()
            )));
        }
        Self::new(state.graph_vectors.clone())
    }

    pub fn len(&self) -> usize {
        self.table.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn delta(&self) -> usize {
        self.table.cols()
    }

    pub fn row(&self, index: usize) -> Result<&[f64]> {
        if index >= self.len() {
            return Err(Error::Lookup(format!(
                "no spatial feature for trajectory {index} ({} available)",
                self.len()
            )));
        }
        Ok(self.table.row_slice(index))
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.delta());
        for &i in indices {
            data.extend_from_slice(self.row(i)?);
        }
        Self::new(Tensor::matrix(indices.len(), self.delta(), data)?)
    }
}

/// Learnable parameters by name.
pub type ParamMap = BTreeMap<String, Tensor>;

/// A model: configuration, input spec and parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Mvstm {
    pub config: TrainConfig,
    pub spec: FeatureSpec,
    pub params: ParamMap,
}

const LSTM_W: [&str; 4] = ["lstm.w_i", "lstm.w_f", "lstm.w_o", "lstm.w_g"];
const LSTM_B: [&str; 4] = ["lstm.b_i", "lstm.b_f", "lstm.b_o", "lstm.b_g"];

impl Mvstm {
    /// Randomly initialised parameters for `spec`.
    pub fn init(config: &TrainConfig, spec: FeatureSpec) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d;
        let mut params = ParamMap::new();
        let emb_bound = 0.1;

        let mut tables = vec![
            format!("link.{LINK_ID}"),
            format!("link.{STATUS}"),
            format!("crossing.{CROSSING_ID}"),
            format!("semantic.{TIME_SLICE}"),
            format!("semantic.{DRIVER_ID}"),
            format!("semantic.{DAY_OF_WEEK}"),
            format!("semantic.{WEATHER}"),
        ];
        tables.extend(spec.extra_cats("link").iter().map(|k| format!("link.{k}")));
        tables.extend(spec.extra_cats("crossing").iter().map(|k| format!("crossing.{k}")));
        for name in tables {
            let key = card_key(&name);
            let rows = spec.card(&key)?;
            params.insert(format!("{name}.emb"), nn::uniform(&[rows, d], emb_bound, &mut rng));
        }

        let mut numeric = vec![
            LINK_TIME.to_string(),
            LINK_RATIO.to_string(),
            CROSS_TIME.to_string(),
            DISTANCE.to_string(),
            SIMPLE_ETA.to_string(),
            TEMPERATURE.to_string(),
        ];
        numeric.extend(spec.link_numeric.iter().map(|k| format!("link.{k}")));
        numeric.extend(spec.crossing_numeric.iter().map(|k| format!("crossing.{k}")));
        for name in numeric {
            params.insert(format!("{name}.w"), nn::uniform(&[1, d], emb_bound, &mut rng));
            params.insert(format!("{name}.b"), Tensor::zeros(&[d]));
        }

        let lstm = nn::LstmParams::random(d, config.hidden, &mut rng);
        let lstm_tensors = [lstm.w_i, lstm.w_f, lstm.w_o, lstm.w_g, lstm.b_i, lstm.b_f, lstm.b_o, lstm.b_g];
        for (name, t) in LSTM_W.iter().chain(&LSTM_B).zip(lstm_tensors) {
            params.insert(name.to_string(), t);
        }

        let conv_bound = 1.0 / ((config.conv_window * d) as f64).sqrt();
        params.insert("conv.filters".into(), nn::uniform(&[d, config.conv_window, d], conv_bound, &mut rng));
        params.insert("conv.bias".into(), Tensor::zeros(&[d]));

        let [w1, w2] = config.fc_widths;
        let fused = config.hidden + 2 * d + config.delta;
        for (name, fan_in, fan_out) in [("fc1", fused, w1), ("fc2", w1, w2), ("out", w2, 1)] {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            params.insert(format!("head.{name}.w"), nn::uniform(&[fan_in, fan_out], bound, &mut rng));
            params.insert(format!("head.{name}.b"), Tensor::zeros(&[fan_out]));
        }
        // softplus(ln(e − 1)) = 1, so an untrained model starts at the mean time.
        params.insert("head.out.b".into(), Tensor::vector(vec![(std::f64::consts::E - 1.0).ln()]));

        Ok(Self {
            config: config.clone(),
            spec,
            params,
        })
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.values().all(Tensor::is_finite)
    }

    /// Records every parameter on `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape) -> Result<Bound> {
        let vars = self.params.values().map(|t| tape.leaf(t.clone())).collect::<Vec<_>>();
        self.bind_vars(tape, &vars)
    }

    /// Wraps already recorded parameter variables, given in [`Self::param_names`] order.
    pub fn bind_vars(&self, tape: &mut Tape, vars: &[Var]) -> Result<Bound> {
        if vars.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "expected {} parameter variables, got {}",
                self.params.len(),
                vars.len()
            )));
        }
        let map: BTreeMap<String, Var> = self.params.keys().cloned().zip(vars.iter().copied()).collect();
        let get = |k: &str| map[k];
        let lstm = LstmVars::new(tape, LSTM_W.map(get), LSTM_B.map(get))?;
        Ok(Bound { vars: map, lstm })
    }

    /// Standardised link rows as `[n x d]`.
    pub fn encode_links(&self, tape: &mut Tape, p: &Bound, links: &[LinkRecord]) -> Result<Var> {
        let ids: Vec<usize> = links.iter().map(|l| l.link_id).collect();
        let status: Vec<usize> = links.iter().map(|l| l.link_current_status).collect();
        let mut acc = tape.gather(p.get(&format!("link.{LINK_ID}.emb"))?, &ids)?;
        let s = tape.gather(p.get(&format!("link.{STATUS}.emb"))?, &status)?;
        acc = tape.add(acc, s)?;
        let time = self.numeric_column(links.iter().map(|l| Some(l.link_time)), LINK_TIME);
        acc = self.add_numeric(tape, p, acc, time, LINK_TIME)?;
        let ratio = self.numeric_column(links.iter().map(|l| Some(l.link_ratio)), LINK_RATIO);
        acc = self.add_numeric(tape, p, acc, ratio, LINK_RATIO)?;
        for name in self.spec.extra_cats("link") {
            let key = format!("link.{name}");
            acc = self.add_extra_cat(tape, p, acc, links.iter().map(|l| l.extra_cat.get(&name).copied()), &key)?;
        }
        for name in &self.spec.link_numeric {
            let key = format!("link.{name}");
            let col = self.numeric_column(links.iter().map(|l| l.extra_num.get(name).copied()), &key);
            acc = self.add_numeric(tape, p, acc, col, &key)?;
        }
        Ok(acc)
    }

    /// Crossing rows, built the same way as link rows, as `[m x d]`.
    pub fn encode_crossings(&self, tape: &mut Tape, p: &Bound, crossings: &[CrossingRecord]) -> Result<Var> {
        let ids: Vec<usize> = crossings.iter().map(|c| c.crossing_id).collect();
        let mut acc = tape.gather(p.get(&format!("crossing.{CROSSING_ID}.emb"))?, &ids)?;
        let time = self.numeric_column(crossings.iter().map(|c| Some(c.cross_time)), CROSS_TIME);
        acc = self.add_numeric(tape, p, acc, time, CROSS_TIME)?;
        for name in self.spec.extra_cats("crossing") {
            let key = format!("crossing.{name}");
            let idx = crossings.iter().map(|c| c.extra_cat.get(&name).copied());
            acc = self.add_extra_cat(tape, p, acc, idx, &key)?;
        }
        for name in &self.spec.crossing_numeric {
            let key = format!("crossing.{name}");
            let col = self.numeric_column(crossings.iter().map(|c| c.extra_num.get(name).copied()), &key);
            acc = self.add_numeric(tape, p, acc, col, &key)?;
        }
        Ok(acc)
    }

    /// The sequence matrix: link rows followed by crossing rows.
    pub fn sequence(&self, tape: &mut Tape, p: &Bound, t: &Trajectory) -> Result<Var> {
        if t.links.is_empty() {
            return Err(Error::Contract("trajectory has no links".into()));
        }
        let links = self.encode_links(tape, p, &t.links)?;
        if t.crossings.is_empty() {
            return Ok(links);
        }
        let crossings = self.encode_crossings(tape, p, &t.crossings)?;
        tape.concat(&[links, crossings], 0)
    }

    /// `(h_l, h_a)`, each a row vector.
    pub fn encode_trajectory(&self, tape: &mut Tape, p: &Bound, t: &Trajectory) -> Result<(Var, Var)> {
        let seq = self.sequence(tape, p, t)?;
        let h_l = nn::lstm_sequence(tape, &p.lstm, seq)?;
        let h_a = if self.config.variant == Variant::RnnOnly {
            tape.constant(Tensor::zeros(&[1, self.config.d]))
        } else {
            let conv = nn::conv1d_same(tape, p.get("conv.filters")?, p.get("conv.bias")?, seq)?;
            let att = nn::self_attention(tape, conv, self.config.d)?;
            nn::attention_pool(tape, att)?
        };
        Ok((h_l, h_a))
    }

    /// Sum of the head/condition embeddings and numeric features, `[1 x d]`.
    pub fn encode_semantic(&self, tape: &mut Tape, p: &Bound, head: &HeadRecord, cond: &Conditions) -> Result<Var> {
        let cats = [
            (TIME_SLICE, head.departure_time_slice),
            (DRIVER_ID, head.driver_id),
            (DAY_OF_WEEK, head.day_of_week),
            (WEATHER, cond.weather),
        ];
        let mut acc: Option<Var> = None;
        for (name, idx) in cats {
            let row = nn::embed(tape, p.get(&format!("semantic.{name}.emb"))?, idx)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, row)?,
                None => row,
            });
        }
        let mut acc = acc.expect("four semantic tables");
        for (key, x) in [
            (DISTANCE, head.distance),
            (SIMPLE_ETA, head.simple_eta),
            (TEMPERATURE, cond.temperature),
        ] {
            let col = Tensor::matrix(1, 1, vec![self.spec.scale(key, x)])?;
            acc = self.add_numeric(tape, p, acc, col, key)?;
        }
        Ok(acc)
    }

    /// Predicted travel time for one trajectory as a `[1 x 1]` variable.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, t: &Trajectory, spatial: &[f64]) -> Result<Var> {
        if spatial.len() != self.config.delta {
            return Err(Error::Shape {
                op: "forward",
                lhs: vec![spatial.len()],
                rhs: vec![self.config.delta],
            });
        }
        let (h_l, h_a) = self.encode_trajectory(tape, p, t)?;
        let s = self.encode_semantic(tape, p, &t.head, &t.conditions)?;
        let m = match self.config.variant {
            Variant::NoSpatial => Tensor::zeros(&[1, self.config.delta]),
            _ => Tensor::row(spatial.to_vec()),
        };
        let m = tape.constant(m);
        let fused = tape.concat(&[h_l, h_a, s, m], 1)?;
        let z1 = nn::dense(tape, p.get("head.fc1.w")?, p.get("head.fc1.b")?, fused)?;
        let a1 = tape.relu(z1)?;
        let z2 = nn::dense(tape, p.get("head.fc2.w")?, p.get("head.fc2.b")?, a1)?;
        let a2 = tape.relu(z2)?;
        let z = nn::dense(tape, p.get("head.out.w")?, p.get("head.out.b")?, a2)?;
        let pos = tape.softplus(z)?;
        tape.scale(pos, self.spec.target_scale)
    }

    /// Mean MAPE of a batch on one tape.
    pub fn batch_loss(&self, tape: &mut Tape, p: &Bound, batch: &[(&Trajectory, &[f64])]) -> Result<Var> {
        let mut etas = Vec::with_capacity(batch.len());
        let mut atas = Vec::with_capacity(batch.len());
        for (i, (t, m)) in batch.iter().enumerate() {
            etas.push(self.forward(tape, p, t, m)?);
            atas.push(require_actual(t, i)?);
        }
        mape_loss(tape, &etas, &atas)
    }

    /// Inference without recording gradients.
    pub fn predict_one(&self, t: &Trajectory, spatial: &[f64]) -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.values().map(|v| tape.constant(v.clone())).collect();
        let p = self.bind_vars(&mut tape, &vars)?;
        let eta = self.forward(&mut tape, &p, t, spatial)?;
        Ok(tape.value(eta).data()[0])
    }

    fn numeric_column(&self, values: impl Iterator<Item = Option<f64>>, key: &str) -> Tensor {
        // An absent value is imputed with the training mean, i.e. 0 after scaling.
        let data: Vec<f64> = values.map(|v| v.map_or(0.0, |x| self.spec.scale(key, x))).collect();
        let n = data.len();
        Tensor::matrix(n, 1, data).expect("column shape")
    }

    fn add_numeric(&self, tape: &mut Tape, p: &Bound, acc: Var, column: Tensor, key: &str) -> Result<Var> {
        let x = tape.constant(column);
        let f = nn::linear_feature(tape, p.get(&format!("{key}.w"))?, p.get(&format!("{key}.b"))?, x)?;
        tape.add(acc, f)
    }

    fn add_extra_cat(
        &self,
        tape: &mut Tape,
        p: &Bound,
        acc: Var,
        indices: impl Iterator<Item = Option<usize>>,
        key: &str,
    ) -> Result<Var> {
        // Rows without the feature gather row 0 and are masked out.
        let indices: Vec<Option<usize>> = indices.collect();
        let idx: Vec<usize> = indices.iter().map(|i| i.unwrap_or(0)).collect();
        let rows = tape.gather(p.get(&format!("{key}.emb"))?, &idx)?;
        let rows = if indices.iter().all(Option::is_some) {
            rows
        } else {
            let d = self.config.d;
            let mask: Vec<f64> = indices
                .iter()
                .flat_map(|i| std::iter::repeat_n(if i.is_some() { 1.0 } else { 0.0 }, d))
                .collect();
            let mask = tape.constant(Tensor::matrix(indices.len(), d, mask)?);
            tape.mul(rows, mask)?
        };
        tape.add(acc, rows)
    }
}

/// `link.status` → `status`, `semantic.weather` → `weather`,
/// `link.surface` → `link.surface`.
fn card_key(table: &str) -> String {
    let (scope, name) = table.split_once('.').expect("scoped name");
    match name {
        LINK_ID | STATUS | CROSSING_ID | TIME_SLICE | DRIVER_ID | DAY_OF_WEEK | WEATHER => name.to_string(),
        _ => format!("{scope}.{name}"),
    }
}

/// Parameters recorded on a tape.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
    lstm: LstmVars,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Lookup(format!("no parameter named `{name}`")))
    }

    pub fn vars(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

#[cfg(test)]
mod tests;
