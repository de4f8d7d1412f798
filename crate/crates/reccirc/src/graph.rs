//! Labelled graphs and their flat real-tuple encoding.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum GraphError {
    #[error("tuple length {0} is not of the form n² + n")]
    Length(usize),
    #[error("adjacency entry ({0}, {1}) is {2}, expected 0 or 1")]
    NonBinary(usize, usize, f64),
    #[error("adjacency is not symmetric at ({0}, {1})")]
    Asymmetric(usize, usize),
    #[error("vertex {0} has a self-loop")]
    SelfLoop(usize),
    #[error("edge ({0}, {1}) references a missing vertex")]
    Dangling(usize, usize),
    #[error("{labels} labels for {n} vertices")]
    LabelCount { n: usize, labels: usize },
}

/// Vertex count and undirected edge set, without labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphShape {
    pub n: usize,
    #[serde(with = "edge_list")]
    pub edges: BTreeSet<(usize, usize)>,
}

impl GraphShape {
    /// Normalizes each edge to `(min, max)`.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, GraphError> {
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(GraphError::Dangling(a, b));
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            set.insert((a.min(b), a.max(b)));
        }
        Ok(GraphShape { n, edges: set })
    }

    /// Neighbour lists in ascending vertex order.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for l in adj.iter_mut() {
            l.sort_unstable();
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n];
        for &(a, b) in &self.edges {
            d[a] += 1;
            d[b] += 1;
        }
        d
    }

    pub fn complete_bipartite(n: usize, m: usize) -> Self {
        let edges = (0..n).flat_map(|i| (0..m).map(move |j| (i, n + j)));
        GraphShape::new(n + m, edges).expect("valid bipartite edges")
    }
}

/// Undirected graph with one real label per vertex. Self-loops are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelledGraph {
    pub n: usize,
    #[serde(with = "edge_list")]
    pub edges: BTreeSet<(usize, usize)>,
    pub labels: Vec<f64>,
}

pub(crate) mod edge_list {
    use std::collections::BTreeSet;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(e: &BTreeSet<(usize, usize)>, s: S) -> Result<S::Ok, S::Error> {
        e.iter().map(|&(a, b)| [a, b]).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeSet<(usize, usize)>, D::Error> {
        let v: Vec<[usize; 2]> = Vec::deserialize(d)?;
        Ok(v.into_iter().map(|[a, b]| (a.min(b), a.max(b))).collect())
    }
}

impl LabelledGraph {
    pub fn new(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        labels: Vec<f64>,
    ) -> Result<Self, GraphError> {
        let shape = GraphShape::new(n, edges)?;
        Self::from_shape(&shape, labels)
    }

    pub fn from_shape(shape: &GraphShape, labels: Vec<f64>) -> Result<Self, GraphError> {
        if labels.len() != shape.n {
            return Err(GraphError::LabelCount { n: shape.n, labels: labels.len() });
        }
        Ok(LabelledGraph { n: shape.n, edges: shape.edges.clone(), labels })
    }

    pub fn shape(&self) -> GraphShape {
        GraphShape { n: self.n, edges: self.edges.clone() }
    }

    /// Checks invariants that deserialization cannot enforce.
    pub fn validate(&self) -> Result<(), GraphError> {
        if self.labels.len() != self.n {
            return Err(GraphError::LabelCount { n: self.n, labels: self.labels.len() });
        }
        for &(a, b) in &self.edges {
            if a >= self.n || b >= self.n {
                return Err(GraphError::Dangling(a, b));
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
        }
        Ok(())
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        self.shape().adjacency()
    }

    pub fn degree(&self, v: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == v || b == v).count()
    }

    /// The graph with vertex `v` renamed to `perm[v]`.
    pub fn permuted(&self, perm: &[usize]) -> LabelledGraph {
        let mut labels = vec![0.0; self.n];
        for (v, &p) in perm.iter().enumerate() {
            labels[p] = self.labels[v];
        }
        let edges = self.edges.iter().map(|&(a, b)| (perm[a].min(perm[b]), perm[a].max(perm[b]))).collect();
        LabelledGraph { n: self.n, edges, labels }
    }
}

/// Row-major adjacency matrix followed by the labels: length `n² + n`.
pub fn encode_graph(g: &LabelledGraph) -> Vec<f64> {
    let n = g.n;
    let mut t = vec![0.0; n * n + n];
    for &(a, b) in &g.edges {
        t[a * n + b] = 1.0;
        t[b * n + a] = 1.0;
    }
    t[n * n..].copy_from_slice(&g.labels);
    t
}

/// Recovers `n` from a tuple length `n² + n`.
pub fn tuple_vertex_count(len: usize) -> Option<usize> {
    let mut n = (len as f64).sqrt() as usize;
    while n * n + n > len {
        n -= 1;
    }
    while n * n + n < len {
        n += 1;
    }
    (n * n + n == len).then_some(n)
}

pub fn decode_graph(t: &[f64]) -> Result<LabelledGraph, GraphError> {
    let n = tuple_vertex_count(t.len()).ok_or(GraphError::Length(t.len()))?;
    let mut edges = BTreeSet::new();
    for i in 0..n {
        for j in 0..n {
            let v = t[i * n + j];
            if v != 0.0 && v != 1.0 {
                return Err(GraphError::NonBinary(i, j, v));
            }
            if v != t[j * n + i] {
                return Err(GraphError::Asymmetric(i, j));
            }
            if v == 1.0 {
                if i == j {
                    return Err(GraphError::SelfLoop(i));
                }
                if i < j {
                    edges.insert((i, j));
                }
            }
        }
    }
    Ok(LabelledGraph { n, edges, labels: t[n * n..].to_vec() })
}

/// Complete bipartite graph: `n` input-side vertices labelled `x`, then `m`
/// output-side vertices labelled `1..=m`.
pub fn bipartite_encode(n: usize, m: usize, x: &[f64]) -> Result<LabelledGraph, GraphError> {
    if x.len() != n {
        return Err(GraphError::LabelCount { n, labels: x.len() });
    }
    let mut labels = x.to_vec();
    labels.extend((1..=m).map(|k| k as f64));
    LabelledGraph::from_shape(&GraphShape::complete_bipartite(n, m), labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_small() {
        let g = LabelledGraph::new(2, [(0, 1)], vec![3.0, 4.0]).unwrap();
        assert_eq!(encode_graph(&g), vec![0.0, 1.0, 1.0, 0.0, 3.0, 4.0]);
        let g = LabelledGraph::new(1, [], vec![7.0]).unwrap();
        assert_eq!(encode_graph(&g), vec![0.0, 7.0]);
    }

    #[test]
    fn decode_errors() {
        assert_eq!(decode_graph(&[0.0, 1.0, 2.0]), Err(GraphError::Length(3)));
        assert_eq!(decode_graph(&[0.0, 1.0, 0.0, 0.0, 1.0, 1.0]), Err(GraphError::Asymmetric(0, 1)));
        assert_eq!(decode_graph(&[0.0, 0.5, 0.5, 0.0, 1.0, 1.0]), Err(GraphError::NonBinary(0, 1, 0.5)));
        assert_eq!(decode_graph(&[1.0, 5.0]), Err(GraphError::SelfLoop(0)));
        assert_eq!(decode_graph(&[]).unwrap().n, 0);
    }

    #[test]
    fn bipartite() {
        let g = bipartite_encode(2, 2, &[3.0, 4.0]).unwrap();
        assert_eq!(g.n, 4);
        assert_eq!(g.edges.len(), 4);
        assert_eq!(g.labels, vec![3.0, 4.0, 1.0, 2.0]);
        assert_eq!(bipartite_encode(1, 1, &[0.0]).unwrap().edges.len(), 1);
        let g = bipartite_encode(3, 2, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(g.degree(3), 3);
        assert_eq!(g.degree(4), 3);
    }

    #[test]
    fn json_shape() {
        let g = LabelledGraph::new(3, [(2, 0), (1, 2)], vec![1.0, 2.0, 3.0]).unwrap();
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(s, r#"{"n":3,"edges":[[0,2],[1,2]],"labels":[1.0,2.0,3.0]}"#);
        assert_eq!(serde_json::from_str::<LabelledGraph>(&s).unwrap(), g);
    }
}
