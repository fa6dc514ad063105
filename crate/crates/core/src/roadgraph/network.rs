use std::collections::{BTreeMap, BTreeSet, HashMap};

/// Directed graph of road links.
///
/// Nodes are link ids from the input; they are mapped onto dense indices
/// `0..node_count()` in ascending id order, which is the node vocabulary.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RoadNetwork {
    ids: Vec<usize>,
    index: HashMap<usize, usize>,
    out_edges: Vec<Vec<usize>>,
    in_edges: Vec<Vec<usize>>,
    self_loops: Vec<usize>,
    attribute_names: Vec<String>,
    edge_attributes: BTreeMap<(usize, usize), Vec<String>>,
}

impl RoadNetwork {
    /// Builds a network whose node set is every id in `nodes` plus every
    /// endpoint in `edges`. Duplicate edges collapse to one.
    pub fn from_parts(
        nodes: impl IntoIterator<Item = usize>,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Self {
        let edges: BTreeSet<(usize, usize)> = edges.into_iter().collect();
        let mut id_set: BTreeSet<usize> = nodes.into_iter().collect();
        for &(a, b) in &edges {
            id_set.insert(a);
            id_set.insert(b);
        }
        let ids: Vec<usize> = id_set.into_iter().collect();
        let index: HashMap<usize, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut out_edges = vec![Vec::new(); ids.len()];
        let mut in_edges = vec![Vec::new(); ids.len()];
        let mut self_loops = Vec::new();
        for &(a, b) in &edges {
            let (ia, ib) = (index[&a], index[&b]);
            out_edges[ia].push(ib);
            in_edges[ib].push(ia);
            if a == b {
                self_loops.push(a);
            }
        }
        for list in out_edges.iter_mut().chain(in_edges.iter_mut()) {
            list.sort_unstable();
        }
        Self {
            ids,
            index,
            out_edges,
            in_edges,
            self_loops,
            attribute_names: Vec::new(),
            edge_attributes: BTreeMap::new(),
        }
    }

    pub fn from_edges(edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        Self::from_parts(std::iter::empty(), edges)
    }

    pub(crate) fn set_attributes(&mut self, names: Vec<String>, values: BTreeMap<(usize, usize), Vec<String>>) {
        self.attribute_names = names;
        self.edge_attributes = values;
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.out_edges.iter().map(Vec::len).sum()
    }

    /// Size of the node vocabulary `V`.
    pub fn vocab_size(&self) -> usize {
        self.ids.len()
    }

    pub fn index_of(&self, link_id: usize) -> Option<usize> {
        self.index.get(&link_id).copied()
    }

    pub fn link_id(&self, index: usize) -> usize {
        self.ids[index]
    }

    pub fn link_ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn successors(&self, index: usize) -> &[usize] {
        &self.out_edges[index]
    }

    pub fn predecessors(&self, index: usize) -> &[usize] {
        &self.in_edges[index]
    }

    pub fn has_edge(&self, src_id: usize, dst_id: usize) -> bool {
        match (self.index_of(src_id), self.index_of(dst_id)) {
            (Some(a), Some(b)) => self.out_edges[a].binary_search(&b).is_ok(),
            _ => false,
        }
    }

    /// Edges as `(src_id, dst_id)` in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.out_edges
            .iter()
            .enumerate()
            .flat_map(move |(a, outs)| outs.iter().map(move |&b| (self.ids[a], self.ids[b])))
    }

    /// Link ids that carried a self-loop row in the input.
    pub fn self_loops(&self) -> &[usize] {
        &self.self_loops
    }

    pub fn has_self_loop_warning(&self) -> bool {
        !self.self_loops.is_empty()
    }

    pub fn attribute_names(&self) -> &[String] {
        &self.attribute_names
    }

    pub fn edge_attributes(&self, src_id: usize, dst_id: usize) -> Option<&[String]> {
        self.edge_attributes.get(&(src_id, dst_id)).map(Vec::as_slice)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_vocabulary_is_sorted_bijection() {
        let net = RoadNetwork::from_edges([(30, 10), (10, 20)]);
        assert_eq!(net.link_ids(), &[10, 20, 30]);
        for (i, &id) in net.link_ids().iter().enumerate() {
            assert_eq!(net.index_of(id), Some(i));
            assert_eq!(net.link_id(i), id);
        }
        assert_eq!(net.successors(0), &[1]);
        assert_eq!(net.predecessors(0), &[2]);
    }

    #[test]
    fn duplicates_collapse_and_self_loops_flagged() {
        let net = RoadNetwork::from_edges([(1, 2), (1, 2), (3, 3)]);
        assert_eq!(net.edge_count(), 2);
        assert!(net.has_self_loop_warning());
        assert_eq!(net.self_loops(), &[3]);
        assert!(net.has_edge(1, 2));
        assert!(!net.has_edge(2, 1));
    }
}
