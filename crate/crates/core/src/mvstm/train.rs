use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FeatureSpec, Mvstm, SpatialFeatures, TrainConfig};
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// `(1/n) Σ |eta_i − ata_i| / ata_i` over `[1 x 1]` predictions.
pub fn mape_loss(tape: &mut Tape, etas: &[Var], atas: &[f64]) -> Result<Var> {
    if etas.len() != atas.len() || etas.is_empty() {
        return Err(Error::Contract(format!(
            "mape needs equal nonempty lengths, got {} predictions and {} actuals",
            etas.len(),
            atas.len()
        )));
    }
    if let Some((i, a)) = atas.iter().enumerate().find(|(_, a)| !(**a > 0.0)) {
        return Err(Error::Validation {
            line: i + 1,
            field: "actual_time".into(),
            message: format!("expected a positive time, got {a}"),
        });
    }
    let n = atas.len();
    let col = tape.concat(etas, 0)?;
    let col = tape.reshape(col, &[n])?;
    let actual = tape.constant(Tensor::vector(atas.to_vec()));
    let diff = tape.sub(col, actual)?;
    let abs = tape.abs(diff)?;
    let inv = tape.constant(Tensor::vector(atas.iter().map(|a| 1.0 / a).collect()));
    let rel = tape.mul(abs, inv)?;
    let total = tape.sum(rel)?;
    tape.scale(total, 1.0 / n as f64)
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub model: Mvstm,
    /// Mean training loss of each epoch, accumulated over its batches.
    pub trace: Vec<f64>,
}

/// Fits scalers on `dataset`, initialises from `config.seed` and trains.
pub fn train(dataset: &Dataset, spatial: &SpatialFeatures, config: &TrainConfig) -> Result<TrainOutput> {
    let spec = FeatureSpec::fit(dataset)?;
    let model = Mvstm::init(config, spec)?;
    train_from(model, dataset, spatial)
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl Adam {
    fn new(model: &Mvstm) -> Self {
        let zeros: Vec<Vec<f64>> = model.params.values().map(|t| vec![0.0; t.numel()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    fn update(&mut self, model: &mut Mvstm, grads: &[Tensor]) {
        let c = &model.config;
        self.step += 1;
        let bc1 = 1.0 - c.beta1.powi(self.step);
        let bc2 = 1.0 - c.beta2.powi(self.step);
        for (k, param) in model.params.values_mut().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (j, (p, g)) in param.data_mut().iter_mut().zip(grads[k].data()).enumerate() {
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *p -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
            }
        }
    }
}

/// Continues training `model` with its own configuration.
pub fn train_from(mut model: Mvstm, dataset: &Dataset, spatial: &SpatialFeatures) -> Result<TrainOutput> {
    model.config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Contract("cannot train on an empty dataset".into()));
    }
    if spatial.len() < dataset.len() {
        return Err(Error::Lookup(format!(
            "spatial features cover {} of {} trajectories",
            spatial.len(),
            dataset.len()
        )));
    }
    for (i, t) in dataset.trajectories.iter().enumerate() {
        super::require_actual(t, i)?;
    }
    let config = model.config.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(&model);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch = chunk
                .iter()
                .map(|&i| Ok((&dataset.trajectories[i], spatial.row(i)?)))
                .collect::<Result<Vec<_>>>()?;
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape)?;
            let loss = model
                .batch_loss(&mut tape, &bound, &batch)
                .map_err(|e| at_batch(e, epoch, b))?;
            let value = tape.value(loss).data()[0];
            let grads = tape.backward(loss)?;
            let grads: Vec<Tensor> = bound.vars().map(|(_, v)| grads.wrt(v)).collect();
            if !grads.iter().all(Tensor::is_finite) {
                return Err(Error::Numeric(format!("non-finite gradient at epoch {epoch}, batch {b}")));
            }
            adam.update(&mut model, &grads);
            if !model.is_finite() {
                return Err(Error::Numeric(format!("parameters diverged at epoch {epoch}, batch {b}")));
            }
            total += value * chunk.len() as f64;
        }
        trace.push(total / dataset.len() as f64);
    }
    Ok(TrainOutput { model, trace })
}

fn at_batch(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}, batch {batch}: {msg}")),
        other => other,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub trajectory_index: usize,
    pub eta: f64,
}

/// One prediction per trajectory, in dataset order.
pub fn predict(model: &Mvstm, dataset: &Dataset, spatial: &SpatialFeatures) -> Result<Vec<Prediction>> {
    dataset
        .trajectories
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            Ok(Prediction {
                trajectory_index: i,
                eta: model.predict_one(t, spatial.row(i)?)?,
            })
        })
        .collect()
}

/// `weight · a + (1 − weight) · b`, per trajectory.
pub fn ensemble(a: &[Prediction], b: &[Prediction], weight: f64) -> Result<Vec<Prediction>> {
    if !(0.0..=1.0).contains(&weight) {
        return Err(Error::Config(format!("ensemble weight must lie in [0, 1], got {weight}")));
    }
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "cannot blend {} predictions with {}",
            a.len(),
            b.len()
        )));
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            if x.trajectory_index != y.trajectory_index {
                return Err(Error::Contract(format!(
                    "misaligned predictions: trajectory {} vs {}",
                    x.trajectory_index, y.trajectory_index
                )));
            }
            Ok(Prediction {
                trajectory_index: x.trajectory_index,
                eta: weight * x.eta + (1.0 - weight) * y.eta,
            })
        })
        .collect()
}

pub fn write_predictions(path: &Path, predictions: &[Prediction]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for p in predictions {
        w.serialize(p).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Parse {
                line: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        if let csv::ErrorKind::Io(io) = e.into_kind() {
            return Error::io(path, io);
        }
        unreachable!("checked io kind");
    }
    Error::Parse {
        line: e.position().map_or(0, |p| p.line() as usize),
        message: e.to_string(),
    }
}
