//! Skipgram embeddings of subgraphs over the road-node vocabulary.
//!
//! Every node occurrence `w` in a walk of subgraph `G` is treated as a word
//! in the context of document `G`, and training maximises
//! `Σ log Pr(w | G)` with `Pr(w | G) = exp(G·w) / Σ_v exp(G·v)` taken over the
//! whole vocabulary. The learned row of a subgraph is the trajectory's
//! spatial feature.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roadgraph::SubgraphCorpus;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingState {
    pub delta: usize,
    /// `[num_graphs x delta]`
    pub graph_vectors: Tensor,
    /// `[vocab_size x delta]`
    pub node_vectors: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Objective {
    FullSoftmax,
    /// `k` negatives drawn uniformly from the vocabulary per occurrence.
    NegativeSampling { k: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkipgramConfig {
    pub delta: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub objective: Objective,
}

impl Default for SkipgramConfig {
    fn default() -> Self {
        Self {
            delta: 16,
            learning_rate: 0.025,
            epochs: 5,
            seed: 0,
            objective: Objective::FullSoftmax,
        }
    }
}

impl SkipgramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delta == 0 {
            return Err(Error::Config("embedding dimension must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if let Objective::NegativeSampling { k: 0 } = self.objective {
            return Err(Error::Config("negative sampling needs k ≥ 1".into()));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Entries i.i.d. uniform in `[-0.5/delta, 0.5/delta]`.
pub fn init_embeddings(num_graphs: usize, vocab_size: usize, delta: usize, seed: u64) -> Result<EmbeddingState> {
    if num_graphs == 0 || vocab_size == 0 || delta == 0 {
        return Err(Error::Config(format!(
            "embedding sizes must be positive (graphs {num_graphs}, vocab {vocab_size}, delta {delta})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 0.5 / delta as f64;
    let mut draw = |rows: usize| {
        let data = (0..rows * delta).map(|_| rng.random_range(-bound..=bound)).collect();
        Tensor::matrix(rows, delta, data).expect("shape matches")
    };
    let graph_vectors = draw(num_graphs);
    let node_vectors = draw(vocab_size);
    Ok(EmbeddingState {
        delta,
        graph_vectors,
        node_vectors,
    })
}

impl EmbeddingState {
    pub fn num_graphs(&self) -> usize {
        self.graph_vectors.rows()
    }

    pub fn vocab_size(&self) -> usize {
        self.node_vectors.rows()
    }

    fn check_graph(&self, graph_id: usize) -> Result<()> {
        if graph_id >= self.num_graphs() {
            return Err(Error::index("graph id", graph_id, self.num_graphs()));
        }
        Ok(())
    }

    fn check_node(&self, node_id: usize) -> Result<()> {
        if node_id >= self.vocab_size() {
            return Err(Error::index("node id", node_id, self.vocab_size()));
        }
        Ok(())
    }

    /// `log Pr(w | G)` for every `w` in the vocabulary.
    pub fn log_probs(&self, graph_id: usize) -> Result<Vec<f64>> {
        self.check_graph(graph_id)?;
        let g = self.graph_vectors.row_slice(graph_id);
        let logits: Vec<f64> = (0..self.vocab_size())
            .map(|w| dot(g, self.node_vectors.row_slice(w)))
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        Ok(logits.into_iter().map(|l| l - log_z).collect())
    }

    /// `Pr(w | G)` for every `w`, with max subtraction.
    pub fn probs(&self, graph_id: usize) -> Result<Vec<f64>> {
        self.check_graph(graph_id)?;
        let g = self.graph_vectors.row_slice(graph_id);
        let logits: Vec<f64> = (0..self.vocab_size())
            .map(|w| dot(g, self.node_vectors.row_slice(w)))
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        Ok(exps.into_iter().map(|e| e / z).collect())
    }

    pub fn prob(&self, graph_id: usize, node_id: usize) -> Result<f64> {
        self.check_node(node_id)?;
        Ok(self.probs(graph_id)?[node_id])
    }

    /// Gradient of `log Pr(node | graph)`: with respect to the graph row,
    /// `w_j − Σ_w p(w)·w`, and with respect to node row `k`,
    /// `G·([k = j] − p(k))`.
    pub fn log_prob_gradient(&self, graph_id: usize, node_id: usize) -> Result<(Vec<f64>, Tensor)> {
        self.check_node(node_id)?;
        let p = self.probs(graph_id)?;
        let g = self.graph_vectors.row_slice(graph_id);
        let d = self.delta;
        let mut d_graph = self.node_vectors.row_slice(node_id).to_vec();
        let mut d_nodes = Tensor::zeros(&[self.vocab_size(), d]);
        for (k, &pk) in p.iter().enumerate() {
            let w = self.node_vectors.row_slice(k);
            for c in 0..d {
                d_graph[c] -= pk * w[c];
            }
            let coeff = if k == node_id { 1.0 - pk } else { -pk };
            for (dst, gc) in d_nodes.row_slice_mut(k).iter_mut().zip(g) {
                *dst = coeff * gc;
            }
        }
        Ok((d_graph, d_nodes))
    }

    /// One gradient-ascent step on `log Pr(node | graph)` over the graph row
    /// and every node row, using gradients at the current point.
    pub fn train_step(&mut self, graph_id: usize, node_id: usize, learning_rate: f64) -> Result<()> {
        let (d_graph, d_nodes) = self.log_prob_gradient(graph_id, node_id)?;
        for (dst, g) in self.graph_vectors.row_slice_mut(graph_id).iter_mut().zip(&d_graph) {
            *dst += learning_rate * g;
        }
        for (dst, g) in self.node_vectors.data_mut().iter_mut().zip(d_nodes.data()) {
            *dst += learning_rate * g;
        }
        Ok(())
    }

    /// Negative-sampling ascent on `log σ(G·w) + Σ_n log σ(−G·n)`.
    pub fn train_step_negative(
        &mut self,
        graph_id: usize,
        node_id: usize,
        negatives: &[usize],
        learning_rate: f64,
    ) -> Result<()> {
        self.check_graph(graph_id)?;
        self.check_node(node_id)?;
        for &n in negatives {
            self.check_node(n)?;
        }
        let g = self.graph_vectors.row_slice(graph_id).to_vec();
        let mut d_graph = vec![0.0; self.delta];
        let targets = std::iter::once((node_id, 1.0)).chain(negatives.iter().map(|&n| (n, 0.0)));
        for (w, label) in targets {
            let row = self.node_vectors.row_slice_mut(w);
            let coeff = label - sigmoid(dot(&g, row));
            for c in 0..g.len() {
                d_graph[c] += coeff * row[c];
                row[c] += learning_rate * coeff * g[c];
            }
        }
        for (dst, dg) in self.graph_vectors.row_slice_mut(graph_id).iter_mut().zip(&d_graph) {
            *dst += learning_rate * dg;
        }
        Ok(())
    }

    /// The spatial feature of a subgraph: its embedding row.
    pub fn spatial_feature(&self, graph_id: usize) -> Result<&[f64]> {
        self.check_graph(graph_id)?;
        Ok(self.graph_vectors.row_slice(graph_id))
    }

    pub fn is_finite(&self) -> bool {
        self.graph_vectors.is_finite() && self.node_vectors.is_finite()
    }
}

/// `Σ_walks Σ_j log Pr(w_j | G)`.
pub fn log_likelihood(state: &EmbeddingState, corpus: &SubgraphCorpus) -> Result<f64> {
    let mut by_graph: Vec<Vec<usize>> = vec![Vec::new(); state.num_graphs()];
    for walk in &corpus.walks {
        state.check_graph(walk.graph_id)?;
        for &w in &walk.nodes {
            state.check_node(w)?;
        }
        by_graph[walk.graph_id].extend_from_slice(&walk.nodes);
    }
    let mut total = 0.0;
    for (g, nodes) in by_graph.iter().enumerate() {
        if nodes.is_empty() {
            continue;
        }
        let lp = state.log_probs(g)?;
        total += nodes.iter().map(|&w| lp[w]).sum::<f64>();
    }
    Ok(total)
}

#[derive(Clone, Debug)]
pub struct SkipgramOutput {
    pub state: EmbeddingState,
    /// Corpus log-likelihood after each epoch.
    pub trace: Vec<f64>,
    pub steps: usize,
}

/// Per-occurrence stochastic ascent in a seeded shuffled order.
pub fn train(corpus: &SubgraphCorpus, config: &SkipgramConfig) -> Result<SkipgramOutput> {
    config.validate()?;
    if corpus.walks.is_empty() {
        return Err(Error::Contract("skipgram training needs a nonempty corpus".into()));
    }
    let mut state = init_embeddings(corpus.num_graphs, corpus.vocab_size, config.delta, config.seed)?;
    let mut occurrences: Vec<(usize, usize)> = corpus
        .walks
        .iter()
        .flat_map(|w| w.nodes.iter().map(move |&n| (w.graph_id, n)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut trace = Vec::with_capacity(config.epochs);
    let mut steps = 0;
    let mut negatives = Vec::new();
    for epoch in 0..config.epochs {
        occurrences.shuffle(&mut rng);
        for &(g, w) in &occurrences {
            match config.objective {
                Objective::FullSoftmax => state.train_step(g, w, config.learning_rate)?,
                Objective::NegativeSampling { k } => {
                    negatives.clear();
                    negatives.extend((0..k).map(|_| rng.random_range(0..corpus.vocab_size)));
                    state.train_step_negative(g, w, &negatives, config.learning_rate)?;
                }
            }
            steps += 1;
        }
        if !state.is_finite() {
            return Err(Error::Numeric(format!("embeddings diverged in epoch {epoch}")));
        }
        trace.push(log_likelihood(&state, corpus)?);
    }
    Ok(SkipgramOutput { state, trace, steps })
}

#[derive(Serialize, Deserialize)]
struct EmbeddingFile {
    delta: usize,
    graph_vectors: Vec<Vec<f64>>,
    node_vectors: Vec<Vec<f64>>,
}

fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
}

impl EmbeddingState {
    pub fn to_json(&self) -> String {
        let file = EmbeddingFile {
            delta: self.delta,
            graph_vectors: rows_of(&self.graph_vectors),
            node_vectors: rows_of(&self.node_vectors),
        };
        serde_json::to_string(&file).expect("embedding serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: EmbeddingFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: format!("embedding file: {e}"),
        })?;
        let to_tensor = |rows: &[Vec<f64>], what: &str| -> Result<Tensor> {
            if rows.iter().any(|r| r.len() != file.delta) {
                return Err(Error::Validation {
                    line: 0,
                    field: what.to_string(),
                    message: format!("every row must have length delta = {}", file.delta),
                });
            }
            Tensor::matrix(rows.len(), file.delta, rows.concat())
        };
        let state = EmbeddingState {
            delta: file.delta,
            graph_vectors: to_tensor(&file.graph_vectors, "graph_vectors")?,
            node_vectors: to_tensor(&file.node_vectors, "node_vectors")?,
        };
        if !state.is_finite() {
            return Err(Error::Numeric("embedding file contains non-finite values".into()));
        }
        Ok(state)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roadgraph::{GraphKey, NodeSequence};

    fn corpus(walks: Vec<(usize, Vec<usize>)>, graphs: usize, vocab: usize) -> SubgraphCorpus {
        SubgraphCorpus {
            walks: walks
                .into_iter()
                .map(|(graph_id, nodes)| NodeSequence { graph_id, nodes })
                .collect(),
            num_graphs: graphs,
            vocab_size: vocab,
            graph_keys: (0..graphs).map(|g| GraphKey { trajectory: g, interval: 0 }).collect(),
        }
    }

    fn zeros(graphs: usize, vocab: usize, delta: usize) -> EmbeddingState {
        EmbeddingState {
            delta,
            graph_vectors: Tensor::zeros(&[graphs, delta]),
            node_vectors: Tensor::zeros(&[vocab, delta]),
        }
    }

    #[test]
    fn init_range_shape_and_determinism() {
        let s = init_embeddings(3, 7, 4, 9).unwrap();
        assert_eq!(s.graph_vectors.shape(), &[3, 4]);
        assert_eq!(s.node_vectors.shape(), &[7, 4]);
        assert!(s.graph_vectors.data().iter().chain(s.node_vectors.data()).all(|v| v.abs() <= 0.125));
        assert_eq!(s, init_embeddings(3, 7, 4, 9).unwrap());
        assert!(matches!(init_embeddings(0, 7, 4, 9), Err(Error::Config(_))));
    }

    #[test]
    fn single_word_vocabulary_has_probability_one() {
        let s = init_embeddings(2, 1, 3, 1).unwrap();
        assert_eq!(s.prob(1, 0).unwrap(), 1.0);
        let c = corpus(vec![(0, vec![0, 0, 0])], 2, 1);
        assert_eq!(log_likelihood(&s, &c).unwrap(), 0.0);
    }

    #[test]
    fn zero_vectors_give_uniform_probabilities() {
        let s = zeros(1, 5, 2);
        for w in 0..5 {
            assert_eq!(s.prob(0, w).unwrap(), 0.2);
        }
        let c = corpus(vec![(0, vec![1, 3, 4])], 1, 5);
        let ll = log_likelihood(&s, &c).unwrap();
        assert!((ll - 3.0 * (0.2f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_ids_are_index_errors() {
        let s = zeros(2, 3, 2);
        assert!(matches!(s.prob(2, 0), Err(Error::Index { .. })));
        assert!(matches!(s.prob(0, 3), Err(Error::Index { .. })));
        assert!(s.spatial_feature(5).is_err());
    }

    #[test]
    fn zero_learning_rate_leaves_state() {
        let mut s = init_embeddings(2, 4, 3, 1).unwrap();
        let before = s.clone();
        s.train_step(1, 2, 0.0).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn log_prob_gradient_matches_central_differences() {
        let h = 1e-5;
        let mut s = init_embeddings(3, 5, 3, 11).unwrap();
        // Spread the vectors so the softmax is far from uniform.
        for (i, v) in s.graph_vectors.data_mut().iter_mut().chain(s.node_vectors.data_mut()).enumerate() {
            *v = ((i * 7 % 13) as f64 - 6.0) / 4.0;
        }
        let (g, w) = (1, 3);
        let (dg, dn) = s.log_prob_gradient(g, w).unwrap();
        let f = |s: &EmbeddingState| s.log_probs(g).unwrap()[w];
        let rel = |a: f64, n: f64| (a - n).abs() / 1f64.max(a.abs()).max(n.abs());
        for k in 0..3 {
            let (mut plus, mut minus) = (s.clone(), s.clone());
            plus.graph_vectors.row_slice_mut(g)[k] += h;
            minus.graph_vectors.row_slice_mut(g)[k] -= h;
            assert!(rel(dg[k], (f(&plus) - f(&minus)) / (2.0 * h)) < 1e-6);
        }
        for j in 0..15 {
            let (mut plus, mut minus) = (s.clone(), s.clone());
            plus.node_vectors.data_mut()[j] += h;
            minus.node_vectors.data_mut()[j] -= h;
            assert!(rel(dn.data()[j], (f(&plus) - f(&minus)) / (2.0 * h)) < 1e-6);
        }
    }

    #[test]
    fn repeated_steps_drive_probability_up() {
        let mut s = init_embeddings(2, 6, 4, 3).unwrap();
        let mut last = s.prob(0, 4).unwrap();
        let mut steps = 0;
        while last <= 0.99 {
            s.train_step(0, 4, 0.5).unwrap();
            let p = s.prob(0, 4).unwrap();
            assert!(p > last, "probability fell from {last} to {p}");
            last = p;
            steps += 1;
            assert!(steps < 10_000);
        }
    }

    #[test]
    fn spatial_feature_locality() {
        let mut s = init_embeddings(3, 4, 2, 5).unwrap();
        let row0 = s.spatial_feature(0).unwrap().to_vec();
        assert_eq!(row0.len(), 2);
        s.train_step(1, 2, 0.1).unwrap();
        s.train_step(2, 0, 0.1).unwrap();
        assert_eq!(s.spatial_feature(0).unwrap(), &row0[..]);
    }

    #[test]
    fn one_epoch_counts_steps() {
        let walks = (0..12).map(|i| (i % 3, vec![i % 5; 8])).collect();
        let c = corpus(walks, 3, 5);
        let cfg = SkipgramConfig {
            epochs: 1,
            delta: 4,
            ..Default::default()
        };
        let out = train(&c, &cfg).unwrap();
        assert_eq!(out.steps, 96);
        assert_eq!(out.trace.len(), 1);
    }

    #[test]
    fn negative_sampling_learns_cooccurrence() {
        let c = corpus(vec![(0, vec![1; 10]), (1, vec![3; 10])], 2, 6);
        let cfg = SkipgramConfig {
            delta: 4,
            epochs: 40,
            learning_rate: 0.05,
            objective: Objective::NegativeSampling { k: 3 },
            ..Default::default()
        };
        let out = train(&c, &cfg).unwrap();
        let s = &out.state;
        assert!(s.prob(0, 1).unwrap() > s.prob(0, 3).unwrap());
        assert!(s.prob(1, 3).unwrap() > s.prob(1, 1).unwrap());
        assert!(out.trace.last().unwrap() > out.trace.first().unwrap());
    }

    #[test]
    fn json_roundtrip_is_bit_exact() {
        let s = init_embeddings(3, 5, 4, 21).unwrap();
        let back = EmbeddingState::from_json(&s.to_json()).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn json_rejects_ragged_rows() {
        let text = r#"{"delta":2,"graph_vectors":[[0.1]],"node_vectors":[[0.1,0.2]]}"#;
        assert!(EmbeddingState::from_json(text).is_err());
    }
}
