//! Chow-Liu trees: maximum-weight spanning trees under mutual information.

use std::collections::VecDeque;
use std::fmt::Write as _;

use crate::data::{discretize, BinaryDataset, Dataset, DiscretizationPolicy};
use crate::stats::{entropy, mi_matrix, MiMatrix};
use crate::{Error, Result};

/// Weights below this are treated as exactly zero before sorting.
pub const WEIGHT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeEdge {
    pub u: usize,
    pub v: usize,
    pub weight: f64,
}

/// An undirected spanning tree rooted at `root`, with parents derived by
/// breadth-first traversal.
#[derive(Debug, Clone, PartialEq)]
pub struct ChowLiuTree {
    node_count: usize,
    edges: Vec<TreeEdge>,
    root: usize,
    parent: Vec<Option<usize>>,
    adjacency: Vec<Vec<usize>>,
}

struct DisjointSets {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        DisjointSets {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

impl ChowLiuTree {
    /// Validate an edge list as a spanning tree on `node_count` nodes and root it.
    pub fn from_edges(node_count: usize, edges: Vec<TreeEdge>, root: usize) -> Result<Self> {
        if node_count < 2 {
            return Err(Error::Argument(format!("a tree needs at least 2 nodes, got {node_count}")));
        }
        if root >= node_count {
            return Err(Error::Argument(format!("root {root} out of range")));
        }
        if edges.len() != node_count - 1 {
            return Err(Error::Argument(format!(
                "{} edges for {node_count} nodes",
                edges.len()
            )));
        }
        let mut sets = DisjointSets::new(node_count);
        let mut adjacency = vec![Vec::new(); node_count];
        for e in &edges {
            if e.u >= e.v || e.v >= node_count {
                return Err(Error::Argument(format!("bad edge ({}, {})", e.u, e.v)));
            }
            if !(e.weight >= 0.0 && e.weight.is_finite()) {
                return Err(Error::Argument(format!("edge ({}, {}) has weight {}", e.u, e.v, e.weight)));
            }
            if !sets.union(e.u, e.v) {
                return Err(Error::Argument(format!("edge ({}, {}) closes a cycle", e.u, e.v)));
            }
            adjacency[e.u].push(e.v);
            adjacency[e.v].push(e.u);
        }
        for nb in &mut adjacency {
            nb.sort_unstable();
        }
        let mut parent = vec![None; node_count];
        let mut seen = vec![false; node_count];
        let mut queue = VecDeque::from([root]);
        seen[root] = true;
        while let Some(x) = queue.pop_front() {
            for &y in &adjacency[x] {
                if !seen[y] {
                    seen[y] = true;
                    parent[y] = Some(x);
                    queue.push_back(y);
                }
            }
        }
        Ok(ChowLiuTree {
            node_count,
            edges,
            root,
            parent,
            adjacency,
        })
    }

    /// Unit-weight tree from `(u, v)` pairs in any orientation, rooted at 0.
    pub fn from_pairs(node_count: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let edges = pairs
            .iter()
            .map(|&(a, b)| TreeEdge {
                u: a.min(b),
                v: a.max(b),
                weight: 1.0,
            })
            .collect();
        Self::from_edges(node_count, edges, 0)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[TreeEdge] {
        &self.edges
    }

    pub fn root(&self) -> usize {
        self.root
    }

    /// Parent of each node; `None` for the root.
    pub fn parent(&self) -> &[Option<usize>] {
        &self.parent
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn total_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.weight).sum()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency.get(a).is_some_and(|nb| nb.binary_search(&b).is_ok())
    }

    /// Graphviz rendering; node labels use `names` when given.
    pub fn to_dot(&self, names: Option<&[String]>) -> String {
        let mut out = String::from("graph chowliu {\n");
        for i in 0..self.node_count {
            let label = names.map_or_else(|| i.to_string(), |n| n[i].clone());
            let _ = writeln!(out, "  n{i} [label=\"{}\"];", label.replace('"', "\\\""));
        }
        for e in &self.edges {
            let _ = writeln!(out, "  n{} -- n{} [label=\"{:.4}\"];", e.u, e.v, e.weight);
        }
        out.push_str("}\n");
        out
    }
}

/// Kruskal's algorithm on MI weights: edges sorted by weight descending, then
/// `(u, v)` ascending. The result is rooted at node 0.
pub fn max_spanning_tree(m: &MiMatrix) -> ChowLiuTree {
    let v = m.size();
    let mut candidates: Vec<TreeEdge> = Vec::with_capacity(v * (v - 1) / 2);
    for s in 0..v {
        for t in s + 1..v {
            let w = m.get(s, t);
            let weight = if w < WEIGHT_FLOOR { 0.0 } else { w };
            candidates.push(TreeEdge { u: s, v: t, weight });
        }
    }
    candidates.sort_by(|a, b| {
        b.weight
            .total_cmp(&a.weight)
            .then(a.u.cmp(&b.u))
            .then(a.v.cmp(&b.v))
    });
    let mut sets = DisjointSets::new(v);
    let mut edges = Vec::with_capacity(v - 1);
    for e in candidates {
        if sets.union(e.u, e.v) {
            edges.push(e);
            if edges.len() == v - 1 {
                break;
            }
        }
    }
    ChowLiuTree::from_edges(v, edges, 0).expect("Kruskal output on a complete graph is a spanning tree")
}

/// Tree learning on an already binary view.
pub fn chow_liu_binary(d: &BinaryDataset) -> ChowLiuTree {
    max_spanning_tree(&mi_matrix(d))
}

/// Discretize then learn the maximum-MI spanning tree.
pub fn chow_liu(d: &Dataset, policy: DiscretizationPolicy) -> Result<ChowLiuTree> {
    Ok(chow_liu_binary(&discretize(d, policy)?))
}

/// Breadth-first hop counts from `source` to every node.
pub fn hop_distances(t: &ChowLiuTree, source: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; t.node_count];
    dist[source] = 0;
    let mut queue = VecDeque::from([source]);
    while let Some(x) = queue.pop_front() {
        for &y in &t.adjacency[x] {
            if dist[y] == usize::MAX {
                dist[y] = dist[x] + 1;
                queue.push_back(y);
            }
        }
    }
    dist
}

/// Log-likelihood of the data under the tree with empirical (maximum
/// likelihood) parameters: N times the sum of per-node `p ln p` terms plus the
/// MI of every tree edge.
pub fn max_log_likelihood(t: &ChowLiuTree, d: &BinaryDataset) -> Result<f64> {
    if t.node_count != d.n_features() {
        return Err(Error::Shape(format!(
            "tree over {} nodes, dataset has {} features",
            t.node_count,
            d.n_features()
        )));
    }
    let neg_entropy: f64 = (0..t.node_count).map(|i| -entropy(d, i)).sum();
    let edge_mi: f64 = t
        .edges
        .iter()
        .map(|e| crate::stats::empirical_mi(&crate::stats::pair_counts(d, e.u, e.v).expect("tree edge has distinct endpoints")))
        .sum();
    Ok(d.n_samples() as f64 * (neg_entropy + edge_mi))
}
