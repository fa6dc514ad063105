#![allow(dead_code)]

use std::collections::BTreeMap;

use mvstm::dataio::{Conditions, HeadRecord, LinkRecord, Trajectory};
use mvstm::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    mvstm::nn::uniform(shape, 1.0, rng)
}

pub fn random_values(n: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// A trajectory over `links` with placeholder head and condition fields.
pub fn route(links: &[usize]) -> Trajectory {
    Trajectory {
        head: HeadRecord {
            distance: 100.0 * links.len() as f64,
            simple_eta: 30.0 * links.len() as f64,
            departure_time_slice: 0,
            driver_id: 0,
            day_of_week: 0,
        },
        conditions: Conditions {
            weather: 0,
            temperature: 20.0,
            time_interval: 0,
        },
        links: links
            .iter()
            .map(|&link_id| LinkRecord {
                link_id,
                link_current_status: 0,
                link_time: 30.0,
                link_ratio: 1.0,
                extra_cat: BTreeMap::new(),
                extra_num: BTreeMap::new(),
            })
            .collect(),
        crossings: Vec::new(),
        actual_time: Some(30.0 * links.len() as f64),
    }
}
