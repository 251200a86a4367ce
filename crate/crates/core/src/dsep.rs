//! Directed acyclic graphs and d-separation by reachability.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

/// A directed graph on `0..n` with deduplicated arcs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Dag {
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

/// How a reachability walk entered a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// From one of its children, travelling against an arc.
    Up,
    /// From one of its parents, travelling along an arc.
    Down,
}

/// One node of a d-connecting walk. The first node counts as entered `Up`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Step {
    pub node: usize,
    pub arrived: Direction,
}

impl Dag {
    pub fn new(n: usize) -> Self {
        Self { parents: vec![Vec::new(); n], children: vec![Vec::new(); n] }
    }

    pub fn num_nodes(&self) -> usize {
        self.parents.len()
    }

    pub fn num_arcs(&self) -> usize {
        self.children.iter().map(Vec::len).sum()
    }

    /// Adds `from -> to`; returns false if the arc was already present.
    pub fn add_arc(&mut self, from: usize, to: usize) -> bool {
        if self.children[from].contains(&to) {
            return false;
        }
        self.children[from].push(to);
        self.parents[to].push(from);
        true
    }

    pub fn has_arc(&self, from: usize, to: usize) -> bool {
        self.children[from].contains(&to)
    }

    pub fn parents(&self, v: usize) -> &[usize] {
        &self.parents[v]
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    pub fn arcs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.children.iter().enumerate().flat_map(|(u, cs)| cs.iter().map(move |&v| (u, v)))
    }

    /// Copy without the arcs leaving `nodes`.
    pub fn without_outgoing(&self, nodes: &[usize]) -> Dag {
        let mut out = Dag::new(self.num_nodes());
        for (u, v) in self.arcs() {
            if !nodes.contains(&u) {
                out.add_arc(u, v);
            }
        }
        out
    }

    pub fn is_acyclic(&self) -> bool {
        let mut indeg: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut queue: VecDeque<usize> = (0..self.num_nodes()).filter(|&v| indeg[v] == 0).collect();
        let mut seen = 0;
        while let Some(u) = queue.pop_front() {
            seen += 1;
            for &c in &self.children[u] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    queue.push_back(c);
                }
            }
        }
        seen == self.num_nodes()
    }

    /// Membership mask of `nodes` and all their ancestors.
    pub fn ancestors(&self, nodes: &[usize]) -> Vec<bool> {
        self.closure(nodes, &self.parents)
    }

    /// Membership mask of `nodes` and all their descendants.
    pub fn descendants(&self, nodes: &[usize]) -> Vec<bool> {
        self.closure(nodes, &self.children)
    }

    fn closure(&self, nodes: &[usize], next: &[Vec<usize>]) -> Vec<bool> {
        let mut mark = vec![false; self.num_nodes()];
        let mut stack: Vec<usize> = nodes.to_vec();
        while let Some(v) = stack.pop() {
            if !mark[v] {
                mark[v] = true;
                stack.extend(next[v].iter().copied().filter(|&p| !mark[p]));
            }
        }
        mark
    }

    /// Whether every node of `x` is d-separated from every node of `y` given `z`.
    ///
    /// The sets must be pairwise disjoint.
    pub fn d_separated(&self, x: &[usize], y: &[usize], z: &[usize]) -> bool {
        self.d_connecting_walk(x, y, z).is_none()
    }

    /// A shortest walk witnessing d-connection between `x` and `y` given `z`,
    /// found by breadth-first search over (node, direction) states.
    pub fn d_connecting_walk(&self, x: &[usize], y: &[usize], z: &[usize]) -> Option<Vec<Step>> {
        let n = self.num_nodes();
        let mut in_z = vec![false; n];
        for &v in z {
            in_z[v] = true;
        }
        let mut in_y = vec![false; n];
        for &v in y {
            in_y[v] = true;
        }
        let anc_z = self.ancestors(z);
        let state = |v: usize, d: Direction| 2 * v + usize::from(d == Direction::Down);
        let mut pred: Vec<Option<usize>> = vec![None; 2 * n];
        let mut seen = vec![false; 2 * n];
        let mut queue = VecDeque::new();
        for &v in x {
            let s = state(v, Direction::Up);
            if !seen[s] {
                seen[s] = true;
                queue.push_back((v, Direction::Up));
            }
        }
        while let Some((v, d)) = queue.pop_front() {
            if in_y[v] && !in_z[v] {
                let mut walk = Vec::new();
                let mut s = Some(state(v, d));
                while let Some(cur) = s {
                    let arrived = if cur % 2 == 1 { Direction::Down } else { Direction::Up };
                    walk.push(Step { node: cur / 2, arrived });
                    s = pred[cur];
                }
                walk.reverse();
                return Some(walk);
            }
            let from = state(v, d);
            let mut visit = |w: usize, dir: Direction, queue: &mut VecDeque<(usize, Direction)>| {
                let s = state(w, dir);
                if !seen[s] {
                    seen[s] = true;
                    pred[s] = Some(from);
                    queue.push_back((w, dir));
                }
            };
            match d {
                Direction::Up if !in_z[v] => {
                    for &p in &self.parents[v] {
                        visit(p, Direction::Up, &mut queue);
                    }
                    for &c in &self.children[v] {
                        visit(c, Direction::Down, &mut queue);
                    }
                }
                Direction::Up => {}
                Direction::Down => {
                    if !in_z[v] {
                        for &c in &self.children[v] {
                            visit(c, Direction::Down, &mut queue);
                        }
                    }
                    if anc_z[v] {
                        for &p in &self.parents[v] {
                            visit(p, Direction::Up, &mut queue);
                        }
                    }
                }
            }
        }
        None
    }
}

/// Indices of the colliders on a walk: interior nodes entered along an arc and
/// left against one.
pub fn colliders(walk: &[Step]) -> Vec<usize> {
    (1..walk.len().saturating_sub(1))
        .filter(|&k| walk[k].arrived == Direction::Down && walk[k + 1].arrived == Direction::Up)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dag(n: usize, arcs: &[(usize, usize)]) -> Dag {
        let mut g = Dag::new(n);
        for &(a, b) in arcs {
            g.add_arc(a, b);
        }
        g
    }

    #[test]
    fn chain_fork_collider() {
        // 0 -> 1 -> 2, 1 -> 3, 4 -> 5 <- 6, 5 -> 7
        let g = dag(8, &[(0, 1), (1, 2), (1, 3), (4, 5), (6, 5), (5, 7)]);
        assert!(!g.d_separated(&[0], &[2], &[]));
        assert!(g.d_separated(&[0], &[2], &[1]));
        assert!(g.d_separated(&[2], &[3], &[1]));
        assert!(g.d_separated(&[4], &[6], &[]));
        assert!(!g.d_separated(&[4], &[6], &[5]));
        assert!(!g.d_separated(&[4], &[6], &[7]));
    }

    #[test]
    fn walk_marks_collider() {
        let g = dag(3, &[(0, 1), (2, 1)]);
        let walk = g.d_connecting_walk(&[0], &[2], &[1]).unwrap();
        assert_eq!(walk.iter().map(|s| s.node).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(colliders(&walk), vec![1]);
        let g = dag(3, &[(1, 0), (1, 2)]);
        let walk = g.d_connecting_walk(&[0], &[2], &[]).unwrap();
        assert!(colliders(&walk).is_empty());
    }

    #[test]
    fn acyclicity_and_mutilation() {
        let g = dag(3, &[(0, 1), (1, 2)]);
        assert!(g.is_acyclic());
        assert!(!dag(2, &[(0, 1), (1, 0)]).is_acyclic());
        let m = g.without_outgoing(&[1]);
        assert_eq!(m.num_arcs(), 1);
        assert!(m.d_separated(&[0], &[2], &[]));
    }
}
