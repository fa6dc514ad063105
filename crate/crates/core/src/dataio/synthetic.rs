//! Seeded synthetic road networks and trajectory datasets.
//!
//! Every link has a fixed traversal time and every crossing (identified by
//! the link it enters) a fixed crossing time. In `Deterministic` mode a trip
//! takes exactly the sum of those. In `Nonlinear` mode the link portion is
//! scaled by a hidden factor `g = weather[w] · slice[s] · driver[d]` and
//! Gaussian noise is added; all factors and noise draws are returned in
//! [`GeneratorTruth`] so the target can be replayed exactly.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    Cardinalities, Conditions, CrossingRecord, Dataset, HeadRecord, LinkRecord, Trajectory, CROSSING_ID, DAY_OF_WEEK,
    DRIVER_ID, LINK_ID, STATUS, TIME_SLICE, WEATHER,
};
use crate::error::{Error, Result};
use crate::roadgraph::RoadNetwork;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticMode {
    Deterministic,
    Nonlinear,
}

impl std::str::FromStr for SyntheticMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deterministic" => Ok(Self::Deterministic),
            "nonlinear" => Ok(Self::Nonlinear),
            other => Err(Error::Config(format!("unknown synthetic mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub nodes: usize,
    /// Mean out-degree of the generated network.
    pub edge_density: f64,
    pub trajectories: usize,
    pub mean_route_length: usize,
    pub mode: SyntheticMode,
    pub time_slices: usize,
    pub drivers: usize,
    pub weather_kinds: usize,
    pub status_levels: usize,
    /// Noise standard deviation as a fraction of the trip's link time.
    pub noise_scale: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            nodes: 200,
            edge_density: 3.0,
            trajectories: 2000,
            mean_route_length: 10,
            mode: SyntheticMode::Nonlinear,
            time_slices: 24,
            drivers: 50,
            weather_kinds: 4,
            status_levels: 4,
            noise_scale: 0.02,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        if self.nodes < 2 {
            return Err(Error::Config(format!("synthetic network needs at least 2 nodes, got {}", self.nodes)));
        }
        if self.trajectories == 0 {
            return Err(Error::Config("synthetic trajectory count must be positive".into()));
        }
        if self.mean_route_length == 0 {
            return Err(Error::Config("mean route length must be positive".into()));
        }
        if self.time_slices == 0 || self.drivers == 0 || self.weather_kinds == 0 || self.status_levels == 0 {
            return Err(Error::Config("categorical cardinalities must be positive".into()));
        }
        if !(self.edge_density.is_finite() && self.edge_density >= 0.0) {
            return Err(Error::Config(format!("edge density {} is not a nonnegative number", self.edge_density)));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(Error::Config("noise scale must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn cardinalities(&self) -> Cardinalities {
        [
            (LINK_ID, self.nodes),
            (STATUS, self.status_levels),
            (CROSSING_ID, self.nodes),
            (TIME_SLICE, self.time_slices),
            (DRIVER_ID, self.drivers),
            (DAY_OF_WEEK, 7),
            (WEATHER, self.weather_kinds),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// Hidden quantities behind a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorTruth {
    pub mode: SyntheticMode,
    /// Traversal time per link id.
    pub link_time: Vec<f64>,
    /// Crossing time per crossing id.
    pub cross_time: Vec<f64>,
    pub weather_factor: Vec<f64>,
    pub slice_factor: Vec<f64>,
    pub driver_factor: Vec<f64>,
    /// Additive noise per trajectory, in seconds.
    pub noise: Vec<f64>,
}

impl GeneratorTruth {
    /// The multiplicative factor `g` applied to a trajectory's link time.
    pub fn factor(&self, t: &Trajectory) -> f64 {
        match self.mode {
            SyntheticMode::Deterministic => 1.0,
            SyntheticMode::Nonlinear => {
                self.weather_factor[t.conditions.weather]
                    * self.slice_factor[t.head.departure_time_slice]
                    * self.driver_factor[t.head.driver_id]
            }
        }
    }

    /// Recomputes the target of trajectory `index` from the recorded factors.
    pub fn replay_actual(&self, index: usize, t: &Trajectory) -> f64 {
        match self.mode {
            SyntheticMode::Deterministic => t.total_link_time() + t.total_cross_time(),
            SyntheticMode::Nonlinear => t.total_link_time() * self.factor(t) + t.total_cross_time() + self.noise[index],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticWorld {
    pub network: RoadNetwork,
    pub dataset: Dataset,
    pub truth: GeneratorTruth,
}

fn build_network(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> RoadNetwork {
    let n = cfg.nodes;
    let mut edges = BTreeSet::new();
    for i in 0..n {
        edges.insert((i, (i + 1) % n));
    }
    let target = ((n as f64) * cfg.edge_density).round() as usize;
    let max_edges = n * (n - 1);
    let target = target.clamp(n, max_edges);
    while edges.len() < target {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            edges.insert((a, b));
        }
    }
    RoadNetwork::from_parts(0..n, edges)
}

/// Deterministic function of `(config, seed)`.
pub fn generate_synthetic(config: &SyntheticConfig, seed: u64) -> Result<SyntheticWorld> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let network = build_network(config, &mut rng);
    let n = config.nodes;

    let link_length: Vec<f64> = (0..n).map(|_| rng.random_range(100.0..1000.0)).collect();
    let link_time: Vec<f64> = link_length
        .iter()
        .map(|len| (len / rng.random_range(8.0..15.0) * 10.0).round() / 10.0)
        .collect();
    let cross_time: Vec<f64> = (0..n).map(|_| rng.random_range(5.0f64..30.0).round()).collect();

    let (weather_factor, slice_factor, driver_factor) = match config.mode {
        SyntheticMode::Deterministic => (
            vec![1.0; config.weather_kinds],
            vec![1.0; config.time_slices],
            vec![1.0; config.drivers],
        ),
        SyntheticMode::Nonlinear => {
            let weather = (0..config.weather_kinds).map(|_| rng.random_range(0.9..1.5)).collect();
            let slices = (0..config.time_slices)
                .map(|s| {
                    let phase = 4.0 * PI * s as f64 / config.time_slices as f64;
                    1.0 + 0.3 * (1.0 - phase.cos()) / 2.0
                })
                .collect();
            let drivers = (0..config.drivers).map(|_| rng.random_range(0.85..1.2)).collect();
            (weather, slices, drivers)
        }
    };

    let mut truth = GeneratorTruth {
        mode: config.mode,
        link_time,
        cross_time,
        weather_factor,
        slice_factor,
        driver_factor,
        noise: Vec::with_capacity(config.trajectories),
    };

    let lo = (config.mean_route_length / 2).max(1);
    let hi = config.mean_route_length + config.mean_route_length / 2;
    let mut trajectories = Vec::with_capacity(config.trajectories);
    for _ in 0..config.trajectories {
        let len = rng.random_range(lo..=hi);
        let mut route = vec![rng.random_range(0..n)];
        while route.len() < len {
            let here = network.index_of(*route.last().unwrap()).unwrap();
            let next = *network.successors(here).choose(&mut rng).unwrap();
            route.push(network.link_id(next));
        }

        let links: Vec<LinkRecord> = route
            .iter()
            .enumerate()
            .map(|(k, &id)| LinkRecord {
                link_id: id,
                link_current_status: rng.random_range(0..config.status_levels),
                link_time: truth.link_time[id],
                link_ratio: if k == 0 || k + 1 == route.len() {
                    (rng.random_range(0.1f64..1.0) * 100.0).round() / 100.0
                } else {
                    1.0
                },
                extra_cat: Default::default(),
                extra_num: Default::default(),
            })
            .collect();
        let crossings: Vec<CrossingRecord> = route[1..]
            .iter()
            .map(|&id| CrossingRecord {
                crossing_id: id,
                cross_time: truth.cross_time[id],
                extra_cat: Default::default(),
                extra_num: Default::default(),
            })
            .collect();

        let slice = rng.random_range(0..config.time_slices);
        let day = rng.random_range(0..7);
        let weather = rng.random_range(0..config.weather_kinds);
        let z: f64 = rng.sample(StandardNormal);
        let temperature = ((20.0 + 6.0 * z - 4.0 * weather as f64) * 10.0).round() / 10.0;

        let mut traj = Trajectory {
            head: HeadRecord {
                distance: route.iter().map(|&id| link_length[id]).sum::<f64>().round(),
                simple_eta: 0.0,
                departure_time_slice: slice,
                driver_id: rng.random_range(0..config.drivers),
                day_of_week: day,
            },
            conditions: Conditions {
                weather,
                temperature,
                time_interval: day * config.time_slices + slice,
            },
            links,
            crossings,
            actual_time: None,
        };
        traj.head.simple_eta = traj.total_link_time() + traj.total_cross_time();

        let noise = match config.mode {
            SyntheticMode::Deterministic => 0.0,
            SyntheticMode::Nonlinear => {
                let e: f64 = rng.sample(StandardNormal);
                config.noise_scale * traj.total_link_time() * e.clamp(-3.0, 3.0)
            }
        };
        truth.noise.push(noise);
        traj.actual_time = Some(truth.replay_actual(truth.noise.len() - 1, &traj));
        trajectories.push(traj);
    }

    let dataset = Dataset {
        trajectories,
        cardinalities: config.cardinalities(),
    };
    dataset.validate()?;
    Ok(SyntheticWorld {
        network,
        dataset,
        truth,
    })
}
