//! Random network topologies and synthetic node and edge attributes.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::numeric::{Matrix, SparseAdjacency};
use crate::rng::{stream, Stream};

/// How a column's values are encoded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Real,
    /// Category index in `0..k`, stored as a float.
    Categorical(u32),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

/// Named, typed columns over a fixed number of rows.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeTable {
    pub columns: Vec<Column>,
    pub values: Matrix,
}

impl AttributeTable {
    pub fn empty(rows: usize) -> Self {
        Self { columns: Vec::new(), values: Matrix::zeros(rows, 0) }
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.column_index(name)?;
        Some((0..self.rows()).map(|r| self.values.get(r, k)).collect())
    }

    pub fn push_column(&mut self, column: Column, values: &[f64]) {
        assert_eq!(values.len(), self.rows(), "column length");
        let col = Matrix::column(values);
        self.values = Matrix::hcat(&[&self.values, &col]);
        self.columns.push(column);
    }

    /// Real columns as-is, categorical columns one-hot encoded.
    pub fn encoded(&self) -> Matrix {
        let width: usize = self
            .columns
            .iter()
            .map(|c| match c.kind {
                ColumnKind::Real => 1,
                ColumnKind::Categorical(k) => k as usize,
            })
            .sum();
        let mut out = Matrix::zeros(self.rows(), width);
        for r in 0..self.rows() {
            let mut offset = 0;
            for (k, c) in self.columns.iter().enumerate() {
                let v = self.values.get(r, k);
                match c.kind {
                    ColumnKind::Real => {
                        out.set(r, offset, v);
                        offset += 1;
                    }
                    ColumnKind::Categorical(n) => {
                        let idx = v as usize;
                        if idx < n as usize {
                            out.set(r, offset + idx, 1.0);
                        }
                        offset += n as usize;
                    }
                }
            }
        }
        out
    }
}

/// An undirected simple graph with attribute tables on nodes and edges.
///
/// Edge attribute rows follow the canonical edge order of the adjacency.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributedNetwork {
    pub adjacency: SparseAdjacency,
    pub node_attrs: AttributeTable,
    pub edge_attrs: AttributeTable,
    pub seed: u64,
}

impl AttributedNetwork {
    pub fn from_topology(adjacency: SparseAdjacency, seed: u64) -> Self {
        let n = adjacency.num_nodes();
        let m = adjacency.num_edges();
        Self { adjacency, node_attrs: AttributeTable::empty(n), edge_attrs: AttributeTable::empty(m), seed }
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.num_nodes()
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.num_edges()
    }
}

/// Topology families and their parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum NetworkSpec {
    BarabasiAlbert { n: usize, m: usize },
    WattsStrogatz { n: usize, k: usize, p: f64 },
}

impl NetworkSpec {
    pub fn generate(&self, seed: u64) -> Result<AttributedNetwork, DataError> {
        match *self {
            NetworkSpec::BarabasiAlbert { n, m } => generate_ba(n, m, seed),
            NetworkSpec::WattsStrogatz { n, k, p } => generate_ws(n, k, p, seed),
        }
    }

    /// Short label such as `ba-n3000-m5`.
    pub fn label(&self) -> String {
        match self {
            NetworkSpec::BarabasiAlbert { n, m } => format!("ba-n{n}-m{m}"),
            NetworkSpec::WattsStrogatz { n, k, p } => format!("ws-n{n}-k{k}-p{p}"),
        }
    }
}

fn invalid(reason: String) -> DataError {
    DataError::InvalidParameter { reason }
}

/// Preferential attachment growth. The first `m` nodes start isolated; every
/// later node attaches to `m` distinct existing nodes drawn with probability
/// proportional to degree, so the graph has `m * (n - m)` edges.
pub fn generate_ba(n: usize, m: usize, seed: u64) -> Result<AttributedNetwork, DataError> {
    if m < 1 || m >= n {
        return Err(invalid(format!("preferential attachment needs 1 <= m < n, got m={m}, n={n}")));
    }
    let mut rng = stream(seed, Stream::Topology);
    let mut edges = Vec::with_capacity(m * (n - m));
    let mut targets: Vec<u32> = (0..m as u32).collect();
    let mut repeated: Vec<u32> = Vec::with_capacity(2 * m * (n - m));
    for source in m as u32..n as u32 {
        for &t in &targets {
            edges.push((source, t));
        }
        repeated.extend_from_slice(&targets);
        repeated.extend(core::iter::repeat_n(source, m));
        let mut chosen: Vec<u32> = Vec::with_capacity(m);
        while chosen.len() < m {
            let pick = repeated[rng.random_range(0..repeated.len())];
            if !chosen.contains(&pick) {
                chosen.push(pick);
            }
        }
        targets = chosen;
    }
    let adjacency = SparseAdjacency::from_edges(n, &edges)?;
    Ok(AttributedNetwork::from_topology(adjacency, seed))
}

/// Small-world rewiring of a ring lattice where every node links to its `k/2`
/// nearest neighbours on each side. Each lattice edge is rewired with
/// probability `p` to a uniformly chosen node, avoiding self-loops and
/// duplicates; the edge count stays `n * k / 2`.
pub fn generate_ws(n: usize, k: usize, p: f64, seed: u64) -> Result<AttributedNetwork, DataError> {
    if !k.is_multiple_of(2) || k >= n {
        return Err(invalid(format!("small-world lattice needs even k < n, got k={k}, n={n}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid(format!("rewiring probability {p} outside [0, 1]")));
    }
    let mut rng = stream(seed, Stream::Topology);
    let mut nbrs: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); n];
    for j in 1..=k / 2 {
        for u in 0..n {
            let v = (u + j) % n;
            nbrs[u].insert(v as u32);
            nbrs[v].insert(u as u32);
        }
    }
    for j in 1..=k / 2 {
        for u in 0..n {
            let v = ((u + j) % n) as u32;
            if rng.random::<f64>() >= p {
                continue;
            }
            if nbrs[u].len() >= n - 1 {
                continue;
            }
            // The lattice edge may already be gone after an earlier rewiring of `v`.
            if !nbrs[u].contains(&v) {
                continue;
            }
            let w = loop {
                let w = rng.random_range(0..n as u32);
                if w as usize != u && !nbrs[u].contains(&w) {
                    break w;
                }
            };
            nbrs[u].remove(&v);
            nbrs[v as usize].remove(&(u as u32));
            nbrs[u].insert(w);
            nbrs[w as usize].insert(u as u32);
        }
    }
    let mut edges = Vec::with_capacity(n * k / 2);
    for (u, set) in nbrs.iter().enumerate() {
        for &v in set.range(u as u32 + 1..) {
            edges.push((u as u32, v));
        }
    }
    let adjacency = SparseAdjacency::from_edges(n, &edges)?;
    Ok(AttributedNetwork::from_topology(adjacency, seed))
}

/// Number of categories of the synthetic effect modifier.
pub const CATEGORIES: u32 = 5;

/// Fills the synthetic attributes: confounder `C ~ Beta(0.6, 0.6)` and
/// modifier `Z ~ Categorical(p)` per node with `p ~ Dirichlet(5, ..., 5)`
/// drawn once, and tie strength `Z_r ~ Uniform(1, 10)` per edge.
pub fn sample_attributes(mut network: AttributedNetwork, seed: u64) -> AttributedNetwork {
    let mut rng = stream(seed, Stream::Attributes);
    let probs = dirichlet(&[5.0; CATEGORIES as usize], &mut rng);
    let n = network.num_nodes();
    let mut c = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    for _ in 0..n {
        c.push(beta(0.6, 0.6, &mut rng));
        z.push(categorical(&probs, &mut rng) as f64);
    }
    let tie = Uniform::new(1.0, 10.0).expect("valid range");
    let zr: Vec<f64> = (0..network.num_edges()).map(|_| tie.sample(&mut rng)).collect();

    network.node_attrs = AttributeTable::empty(n);
    network.node_attrs.push_column(Column { name: "C".to_string(), kind: ColumnKind::Real }, &c);
    network.node_attrs.push_column(Column { name: "Z".to_string(), kind: ColumnKind::Categorical(CATEGORIES) }, &z);
    network.edge_attrs = AttributeTable::empty(network.num_edges());
    network.edge_attrs.push_column(Column { name: "Z_r".to_string(), kind: ColumnKind::Real }, &zr);
    network.seed = seed;
    network
}

/// `Beta(a, b)` as `Ga / (Ga + Gb)` with unit-scale Gamma draws.
pub fn beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let ga = Gamma::new(a, 1.0).expect("positive shape").sample(rng);
    let gb = Gamma::new(b, 1.0).expect("positive shape").sample(rng);
    if ga + gb == 0.0 {
        0.5
    } else {
        ga / (ga + gb)
    }
}

/// Normalised Gamma draws.
pub fn dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let draws: Vec<f64> = alpha.iter().map(|&a| Gamma::new(a, 1.0).expect("positive shape").sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    draws.iter().map(|d| d / total).collect()
}

/// Inverse-CDF draw from a probability vector.
pub fn categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn is_connected(adj: &SparseAdjacency) -> bool {
        let mut seen = vec![false; adj.num_nodes()];
        let mut stack = vec![0usize];
        while let Some(v) = stack.pop() {
            if !seen[v] {
                seen[v] = true;
                stack.extend(adj.neighbors(v).iter().map(|&u| u as usize));
            }
        }
        seen.iter().all(|&s| s)
    }

    #[test]
    fn ba_small_cases() {
        let tree = generate_ba(10, 1, 3).unwrap();
        assert_eq!(tree.num_edges(), 9);
        assert!(is_connected(&tree.adjacency));
        assert_eq!(generate_ba(2, 1, 0).unwrap().adjacency.edges(), &[(0, 1)]);
        assert!(generate_ba(5, 5, 0).is_err());
        assert!(generate_ba(5, 0, 0).is_err());
    }

    #[test]
    fn ws_small_cases() {
        let ring = generate_ws(10, 2, 0.0, 1).unwrap();
        assert_eq!(ring.num_edges(), 10);
        for i in 0..10 {
            assert_eq!(ring.adjacency.neighbors(i).len(), 2);
            assert!(ring.adjacency.has_edge(i, (i + 1) % 10));
        }
        let rewired = generate_ws(50, 6, 1.0, 2).unwrap();
        assert_eq!(rewired.num_edges(), 150);
        assert!(generate_ws(10, 3, 0.5, 0).is_err());
        assert!(generate_ws(10, 10, 0.5, 0).is_err());
    }

    #[test]
    fn attributes_have_the_right_shapes_and_ranges() {
        let net = sample_attributes(generate_ba(200, 2, 5).unwrap(), 9);
        let c = net.node_attrs.column("C").unwrap();
        let z = net.node_attrs.column("Z").unwrap();
        let zr = net.edge_attrs.column("Z_r").unwrap();
        assert!(c.iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(z.iter().all(|&v| (0.0..5.0).contains(&v) && v.fract() == 0.0));
        assert_eq!(zr.len(), net.num_edges());
        assert!(zr.iter().all(|&v| (1.0..=10.0).contains(&v)));
        let enc = net.node_attrs.encoded();
        assert_eq!(enc.cols(), 6);
        for r in 0..enc.rows() {
            assert_eq!(enc.row(r)[1..].iter().sum::<f64>(), 1.0);
        }
    }
}
