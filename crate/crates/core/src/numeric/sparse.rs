//! Compressed sparse row adjacency for undirected simple graphs.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::DataError;

/// Symmetric adjacency in CSR form.
///
/// Every undirected edge `{u, v}` has an id (its position in [`edges`](Self::edges))
/// and appears as two directed entries, `u -> v` in row `u` and `v -> u` in row `v`.
/// Neighbours within a row are sorted ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseAdjacency {
    n: usize,
    edges: Vec<(u32, u32)>,
    offsets: Vec<usize>,
    targets: Vec<u32>,
    edge_of: Vec<u32>,
}

impl SparseAdjacency {
    /// Builds the adjacency of an undirected graph on `n` nodes.
    ///
    /// Edges are canonicalised to `(min, max)` and sorted. Self-loops, duplicates
    /// and out-of-range endpoints are rejected.
    pub fn from_edges(n: usize, edges: &[(u32, u32)]) -> Result<Self, DataError> {
        let mut canon: Vec<(u32, u32)> = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a == b {
                return Err(DataError::InvalidGraph { reason: alloc::format!("self-loop on node {a}") });
            }
            if a as usize >= n || b as usize >= n {
                return Err(DataError::InvalidGraph {
                    reason: alloc::format!("edge ({a}, {b}) out of range for {n} nodes"),
                });
            }
            canon.push(if a < b { (a, b) } else { (b, a) });
        }
        canon.sort_unstable();
        if let Some(w) = canon.windows(2).find(|w| w[0] == w[1]) {
            return Err(DataError::InvalidGraph { reason: alloc::format!("duplicate edge ({}, {})", w[0].0, w[0].1) });
        }

        let mut degree = vec![0usize; n];
        for &(a, b) in &canon {
            degree[a as usize] += 1;
            degree[b as usize] += 1;
        }
        let mut offsets = vec![0usize; n + 1];
        for i in 0..n {
            offsets[i + 1] = offsets[i] + degree[i];
        }
        let mut fill = offsets.clone();
        let mut targets = vec![0u32; offsets[n]];
        let mut edge_of = vec![0u32; offsets[n]];
        for (e, &(a, b)) in canon.iter().enumerate() {
            for (s, t) in [(a, b), (b, a)] {
                let p = fill[s as usize];
                targets[p] = t;
                edge_of[p] = e as u32;
                fill[s as usize] += 1;
            }
        }
        for i in 0..n {
            let (lo, hi) = (offsets[i], offsets[i + 1]);
            let mut pairs: Vec<(u32, u32)> =
                targets[lo..hi].iter().copied().zip(edge_of[lo..hi].iter().copied()).collect();
            pairs.sort_unstable();
            for (k, (t, e)) in pairs.into_iter().enumerate() {
                targets[lo + k] = t;
                edge_of[lo + k] = e;
            }
        }
        Ok(Self { n, edges: canon, offsets, targets, edge_of })
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Number of directed entries, twice the edge count.
    #[inline]
    pub fn num_entries(&self) -> usize {
        self.targets.len()
    }

    #[inline]
    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    #[inline]
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Target node of every directed entry, in row order.
    #[inline]
    pub fn targets(&self) -> &[u32] {
        &self.targets
    }

    /// Undirected edge id of every directed entry, in row order.
    #[inline]
    pub fn entry_edges(&self) -> &[u32] {
        &self.edge_of
    }

    #[inline]
    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n).map(|i| self.degree(i)).collect()
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Edge ids aligned with [`neighbors`](Self::neighbors).
    #[inline]
    pub fn neighbor_edges(&self, i: usize) -> &[u32] {
        &self.edge_of[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.neighbors(a).binary_search(&(b as u32)).is_ok()
    }

    /// Source node of every directed entry, in row order.
    pub fn entry_sources(&self) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.num_entries());
        for i in 0..self.n {
            out.extend(core::iter::repeat_n(i as u32, self.degree(i)));
        }
        out
    }

    /// Number of triangles each undirected edge closes, `|N(u) ∩ N(v)|`.
    pub fn edge_triangles(&self) -> Vec<f64> {
        self.edges
            .iter()
            .map(|&(a, b)| sorted_intersection_len(self.neighbors(a as usize), self.neighbors(b as usize)) as f64)
            .collect()
    }

    /// `1 / sqrt(deg)` per node, `0` for isolated nodes.
    pub fn inv_sqrt_degree(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| match self.degree(i) {
                0 => 0.0,
                d => 1.0 / libm::sqrt(d as f64),
            })
            .collect()
    }

    /// Returns the graph with nodes relabelled so that old node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let edges: Vec<(u32, u32)> =
            self.edges.iter().map(|&(a, b)| (perm[a as usize] as u32, perm[b as usize] as u32)).collect();
        Self::from_edges(self.n, &edges).expect("permutation preserves simplicity")
    }
}

fn sorted_intersection_len(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut count) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            core::cmp::Ordering::Less => i += 1,
            core::cmp::Ordering::Greater => j += 1,
            core::cmp::Ordering::Equal => {
                count += 1;
                i += 1;
                j += 1;
            }
        }
    }
    count
}
