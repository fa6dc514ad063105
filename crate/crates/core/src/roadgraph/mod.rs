//! Trajectory-conditioned subgraphs of the road network and the node-walk
//! corpus they produce for skipgram training.
//!
//! Each trajectory at its time interval owns one subgraph: its own links plus
//! every link reachable within `hops` steps downstream (along out-edges) or
//! upstream (along in-edges). Random walks over the induced subgraph play the
//! role of the "words" of that subgraph's "document".

mod network;

pub use network::RoadNetwork;

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, Trajectory};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Subgraph {
    pub graph_id: usize,
    /// Dense node indices, ascending.
    nodes: Vec<usize>,
    /// Induced edges as dense index pairs.
    edges: Vec<(usize, usize)>,
    /// Out-neighbors as positions into `nodes`.
    local_out: Vec<Vec<usize>>,
}

impl Subgraph {
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn contains(&self, node: usize) -> bool {
        self.nodes.binary_search(&node).is_ok()
    }

    /// Induced subgraph of `network` on the dense indices in `nodes`.
    pub fn induced(network: &RoadNetwork, graph_id: usize, mut nodes: Vec<usize>) -> Self {
        nodes.sort_unstable();
        nodes.dedup();
        let mut edges = Vec::new();
        let mut local_out = vec![Vec::new(); nodes.len()];
        for (pos, &n) in nodes.iter().enumerate() {
            for &m in network.successors(n) {
                if let Ok(mpos) = nodes.binary_search(&m) {
                    edges.push((n, m));
                    local_out[pos].push(mpos);
                }
            }
        }
        Self {
            graph_id,
            nodes,
            edges,
            local_out,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSequence {
    pub graph_id: usize,
    pub nodes: Vec<usize>,
}

/// Marks every node within `hops` steps of `seeds` along `neighbors`.
fn reach_within<'a>(seeds: &[usize], hops: usize, neighbors: impl Fn(usize) -> &'a [usize], reached: &mut [bool]) {
    let mut depth = vec![usize::MAX; reached.len()];
    let mut queue = VecDeque::new();
    for &s in seeds {
        if depth[s] == usize::MAX {
            depth[s] = 0;
            queue.push_back(s);
        }
    }
    while let Some(n) = queue.pop_front() {
        reached[n] = true;
        if depth[n] == hops {
            continue;
        }
        for &m in neighbors(n) {
            if depth[m] == usize::MAX {
                depth[m] = depth[n] + 1;
                queue.push_back(m);
            }
        }
    }
}

/// The k-hop upstream/downstream neighborhood of a trajectory's links.
pub fn extract_subgraph(
    network: &RoadNetwork,
    trajectory: &Trajectory,
    hops: usize,
    graph_id: usize,
) -> Result<Subgraph> {
    let mut seeds = Vec::with_capacity(trajectory.links.len());
    for link in &trajectory.links {
        let idx = network
            .index_of(link.link_id)
            .ok_or_else(|| Error::Lookup(format!("link {} not present in road network", link.link_id)))?;
        seeds.push(idx);
    }
    let mut reached = vec![false; network.node_count()];
    reach_within(&seeds, hops, |n| network.successors(n), &mut reached);
    reach_within(&seeds, hops, |n| network.predecessors(n), &mut reached);
    let nodes = reached
        .iter()
        .enumerate()
        .filter_map(|(i, &r)| r.then_some(i))
        .collect();
    Ok(Subgraph::induced(network, graph_id, nodes))
}

/// Random walk of `length` nodes on the induced subgraph. The start node is
/// uniform over the node set; each step moves to a uniform out-neighbor, or
/// restarts uniformly over the node set when there is none.
pub fn sample_node_sequence<R: Rng + ?Sized>(
    subgraph: &Subgraph,
    length: usize,
    rng: &mut R,
) -> Result<NodeSequence> {
    if subgraph.nodes.is_empty() {
        return Err(Error::Contract("cannot sample from an empty subgraph".into()));
    }
    if length == 0 {
        return Err(Error::Config("walk length must be at least 1".into()));
    }
    let n = subgraph.nodes.len();
    let mut pos = rng.random_range(0..n);
    let mut nodes = Vec::with_capacity(length);
    nodes.push(subgraph.nodes[pos]);
    for _ in 1..length {
        let outs = &subgraph.local_out[pos];
        pos = if outs.is_empty() {
            rng.random_range(0..n)
        } else {
            outs[rng.random_range(0..outs.len())]
        };
        nodes.push(subgraph.nodes[pos]);
    }
    Ok(NodeSequence {
        graph_id: subgraph.graph_id,
        nodes,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub hops: usize,
    pub walks_per_graph: usize,
    pub walk_length: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            hops: 2,
            walks_per_graph: 10,
            walk_length: 10,
        }
    }
}

/// Identity of a subgraph: the trajectory it was built from and its interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphKey {
    pub trajectory: usize,
    pub interval: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubgraphCorpus {
    pub walks: Vec<NodeSequence>,
    pub num_graphs: usize,
    pub vocab_size: usize,
    /// `graph_keys[g]` identifies graph `g`.
    pub graph_keys: Vec<GraphKey>,
}

impl SubgraphCorpus {
    /// Total number of (graph, node) occurrences.
    pub fn occurrences(&self) -> usize {
        self.walks.iter().map(|w| w.nodes.len()).sum()
    }

    /// Graph id for trajectory `index` of the dataset the corpus was built from.
    pub fn graph_of(&self, trajectory: usize) -> Option<usize> {
        self.graph_keys.iter().position(|k| k.trajectory == trajectory)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for walk in &self.walks {
            let line = serde_json::to_string(walk).expect("walk serializes");
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads walks back; graph keys are not part of the walk file and are
    /// reconstructed as one graph per id.
    pub fn read_jsonl(path: &Path, vocab_size: usize) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut walks = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let walk: NodeSequence = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            if let Some(&bad) = walk.nodes.iter().find(|&&n| n >= vocab_size) {
                return Err(Error::Validation {
                    line: i + 1,
                    field: "nodes".into(),
                    message: format!("node {bad} outside vocabulary of size {vocab_size}"),
                });
            }
            walks.push(walk);
        }
        let num_graphs = walks.iter().map(|w| w.graph_id + 1).max().unwrap_or(0);
        let graph_keys = (0..num_graphs)
            .map(|g| GraphKey {
                trajectory: g,
                interval: 0,
            })
            .collect();
        Ok(Self {
            walks,
            num_graphs,
            vocab_size,
            graph_keys,
        })
    }
}

/// Per-trajectory RNG stream so corpus contents do not depend on scheduling.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One subgraph per (trajectory, interval) with `walks_per_graph` walks each.
pub fn build_corpus(
    network: &RoadNetwork,
    dataset: &Dataset,
    config: &CorpusConfig,
    seed: u64,
) -> Result<SubgraphCorpus> {
    if config.walk_length == 0 || config.walks_per_graph == 0 {
        return Err(Error::Config("walk_length and walks_per_graph must be at least 1".into()));
    }
    let per_graph: Vec<Vec<NodeSequence>> = dataset
        .trajectories
        .par_iter()
        .enumerate()
        .map(|(i, traj)| {
            let sub = extract_subgraph(network, traj, config.hops, i)?;
            let mut rng = stream_rng(seed, i as u64);
            (0..config.walks_per_graph)
                .map(|_| sample_node_sequence(&sub, config.walk_length, &mut rng))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let graph_keys = dataset
        .trajectories
        .iter()
        .enumerate()
        .map(|(i, t)| GraphKey {
            trajectory: i,
            interval: t.conditions.time_interval,
        })
        .collect();
    Ok(SubgraphCorpus {
        walks: per_graph.into_iter().flatten().collect(),
        num_graphs: dataset.len(),
        vocab_size: network.vocab_size(),
        graph_keys,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::testing::trajectory_on;
    use std::collections::BTreeSet;

    fn chain() -> RoadNetwork {
        RoadNetwork::from_edges([(1, 2), (2, 3), (3, 4), (4, 5)])
    }

    fn ids(net: &RoadNetwork, sub: &Subgraph) -> BTreeSet<usize> {
        sub.nodes().iter().map(|&i| net.link_id(i)).collect()
    }

    #[test]
    fn zero_hops_is_the_trajectory_itself() {
        let net = chain();
        let sub = extract_subgraph(&net, &trajectory_on(&[2, 3]), 0, 0).unwrap();
        assert_eq!(ids(&net, &sub), BTreeSet::from([2, 3]));
        assert_eq!(sub.edges().len(), 1);
    }

    #[test]
    fn one_hop_on_chain() {
        let net = chain();
        let sub = extract_subgraph(&net, &trajectory_on(&[3]), 1, 0).unwrap();
        assert_eq!(ids(&net, &sub), BTreeSet::from([2, 3, 4]));
    }

    #[test]
    fn unknown_link_names_the_id() {
        let err = extract_subgraph(&chain(), &trajectory_on(&[99]), 1, 0).unwrap_err();
        assert!(err.to_string().contains("99"));
    }

    #[test]
    fn single_node_walk_repeats() {
        let net = chain();
        let sub = extract_subgraph(&net, &trajectory_on(&[1]), 0, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let walk = sample_node_sequence(&sub, 5, &mut rng).unwrap();
        assert_eq!(walk.graph_id, 7);
        assert_eq!(walk.nodes, vec![net.index_of(1).unwrap(); 5]);
    }

    #[test]
    fn walks_are_seed_deterministic() {
        let net = chain();
        let sub = extract_subgraph(&net, &trajectory_on(&[3]), 2, 0).unwrap();
        let a = sample_node_sequence(&sub, 20, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = sample_node_sequence(&sub, 20, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_subgraph_is_rejected() {
        let sub = Subgraph::induced(&chain(), 0, vec![]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(sample_node_sequence(&sub, 3, &mut rng), Err(Error::Contract(_))));
    }

    #[test]
    fn two_cycle_visits_each_node_half_the_time() {
        let net = RoadNetwork::from_edges([(1, 2), (2, 1)]);
        let sub = extract_subgraph(&net, &trajectory_on(&[1]), 1, 0).unwrap();
        let walk = sample_node_sequence(&sub, 10_000, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let ones = walk.nodes.iter().filter(|&&n| n == 0).count() as f64 / 1e4;
        assert!((ones - 0.5).abs() <= 0.05, "{ones}");
    }

    #[test]
    fn corpus_counts_and_zero_cases() {
        let net = chain();
        let dataset = Dataset::from_trajectories(vec![
            trajectory_on(&[1, 2]),
            trajectory_on(&[3]),
            trajectory_on(&[4, 5]),
        ]);
        let cfg = CorpusConfig {
            hops: 0,
            walks_per_graph: 4,
            walk_length: 1,
        };
        let corpus = build_corpus(&net, &dataset, &cfg, 11).unwrap();
        assert_eq!(corpus.num_graphs, 3);
        assert_eq!(corpus.walks.len(), 12);
        for walk in &corpus.walks {
            assert_eq!(walk.nodes.len(), 1);
            let link = net.link_id(walk.nodes[0]);
            let own: Vec<usize> = dataset.trajectories[walk.graph_id].links.iter().map(|l| l.link_id).collect();
            assert!(own.contains(&link));
            assert!(walk.nodes[0] < corpus.vocab_size);
        }
    }

    #[test]
    fn corpus_jsonl_roundtrip() {
        let net = chain();
        let dataset = Dataset::from_trajectories(vec![trajectory_on(&[1, 2]), trajectory_on(&[4])]);
        let corpus = build_corpus(&net, &dataset, &CorpusConfig::default(), 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        corpus.write_jsonl(&path).unwrap();
        let back = SubgraphCorpus::read_jsonl(&path, net.vocab_size()).unwrap();
        assert_eq!(back.walks, corpus.walks);
        assert_eq!(back.num_graphs, 2);
    }
}
