//! Ground graphs over complete relational skeletons.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::dsep::Dag;
use crate::error::ReasonError;
use crate::schema::{ItemClass, Nscm, RelationalPath};

/// An entity or a relationship instance. Relationship endpoints are ordered.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Instance {
    Entity(u32),
    Relationship(u32, u32),
}

impl Instance {
    /// The relationship between `a` and `b`, in either order.
    pub fn relationship(a: u32, b: u32) -> Self {
        if a < b {
            Instance::Relationship(a, b)
        } else {
            Instance::Relationship(b, a)
        }
    }

    pub fn class(&self) -> ItemClass {
        match self {
            Instance::Entity(_) => ItemClass::Entity,
            Instance::Relationship(..) => ItemClass::Relationship,
        }
    }
}

/// The complete skeleton on `n` entities: every pair is related.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Skeleton {
    n: u32,
}

impl Skeleton {
    pub fn complete(n: u32) -> Self {
        Self { n }
    }

    pub fn num_entities(&self) -> u32 {
        self.n
    }

    pub fn instances(&self, class: ItemClass) -> Vec<Instance> {
        match class {
            ItemClass::Entity => (0..self.n).map(Instance::Entity).collect(),
            ItemClass::Relationship => {
                let mut out = Vec::new();
                for a in 0..self.n {
                    for b in a + 1..self.n {
                        out.push(Instance::Relationship(a, b));
                    }
                }
                out
            }
        }
    }

    fn neighbours(&self, i: Instance) -> Vec<Instance> {
        match i {
            Instance::Entity(e) => (0..self.n).filter(|&o| o != e).map(|o| Instance::relationship(e, o)).collect(),
            Instance::Relationship(a, b) => alloc::vec![Instance::Entity(a), Instance::Entity(b)],
        }
    }

    /// Instances reached from `base` along `path` under bridge-burning
    /// semantics: a level-synchronous traversal that never revisits an
    /// instance reached at an earlier level.
    ///
    /// Empty if `base` is not an instance of the path's base class.
    pub fn terminal_set(&self, base: Instance, path: &RelationalPath) -> BTreeSet<Instance> {
        if base.class() != path.base() {
            return BTreeSet::new();
        }
        let mut visited = BTreeSet::from([base]);
        let mut frontier = BTreeSet::from([base]);
        for _ in 1..path.len() {
            let mut next = BTreeSet::new();
            for &i in &frontier {
                for nb in self.neighbours(i) {
                    if !visited.contains(&nb) {
                        next.insert(nb);
                    }
                }
            }
            visited.extend(next.iter().copied());
            frontier = next;
        }
        frontier
    }
}

/// Whether the terminal sets of distinct `paths` from `base` are pairwise disjoint.
pub fn terminal_sets_disjoint(skeleton: &Skeleton, base: Instance, paths: &[RelationalPath]) -> bool {
    let mut seen = BTreeSet::new();
    for p in paths {
        for i in skeleton.terminal_set(base, p) {
            if !seen.insert(i) {
                return false;
            }
        }
    }
    true
}

/// An attribute of one instance.
pub type GroundVariable = (Instance, String);

/// The causal graph a model induces on a skeleton.
#[derive(Clone, Debug)]
pub struct GroundGraph {
    nodes: Vec<GroundVariable>,
    index: BTreeMap<GroundVariable, usize>,
    dag: Dag,
}

impl GroundGraph {
    pub fn nodes(&self) -> &[GroundVariable] {
        &self.nodes
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn index_of(&self, v: &GroundVariable) -> Option<usize> {
        self.index.get(v).copied()
    }

    pub fn has_arc(&self, from: &GroundVariable, to: &GroundVariable) -> bool {
        match (self.index_of(from), self.index_of(to)) {
            (Some(a), Some(b)) => self.dag.has_arc(a, b),
            _ => false,
        }
    }
}

/// Instantiates every explicit and implicit dependency of `model` on `skeleton`.
pub fn build_ground_graph(model: &Nscm, skeleton: &Skeleton) -> GroundGraph {
    let schema = model.schema();
    let mut nodes = Vec::new();
    for class in [ItemClass::Entity, ItemClass::Relationship] {
        for inst in skeleton.instances(class) {
            for a in schema.attributes(class) {
                nodes.push((inst, a.name.clone()));
            }
        }
    }
    let index: BTreeMap<GroundVariable, usize> = nodes.iter().cloned().enumerate().map(|(i, v)| (v, i)).collect();
    let mut dag = Dag::new(nodes.len());
    for dep in model.all_dependencies() {
        for inst in skeleton.instances(dep.effect.path.base()) {
            let to = index[&(inst, dep.effect.attribute.clone())];
            for src in skeleton.terminal_set(inst, &dep.cause.path) {
                let from = index[&(src, dep.cause.attribute.clone())];
                dag.add_arc(from, to);
            }
        }
    }
    GroundGraph { nodes, index, dag }
}

/// d-separation between sets of ground variables.
pub fn d_sep_ground(
    graph: &GroundGraph,
    x: &[GroundVariable],
    y: &[GroundVariable],
    z: &[GroundVariable],
) -> Result<bool, ReasonError> {
    let lookup = |vs: &[GroundVariable]| -> Result<Vec<usize>, ReasonError> {
        vs.iter()
            .map(|v| graph.index_of(v).ok_or_else(|| ReasonError::UnknownNode(alloc::format!("{:?}.{}", v.0, v.1))))
            .collect()
    };
    let (x, y, z) = (lookup(x)?, lookup(y)?, lookup(z)?);
    let overlap = x.iter().chain(&y).any(|v| z.contains(v)) || x.iter().any(|v| y.contains(v));
    if overlap {
        return Err(ReasonError::InvalidQuery("variable sets must be disjoint".to_string()));
    }
    Ok(graph.dag.d_separated(&x, &y, &z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{AttributeDecl, Schema};
    use ItemClass::{Entity as E, Relationship as R};

    #[test]
    fn terminal_sets_on_complete_skeleton() {
        let sk = Skeleton::complete(4);
        let e0 = Instance::Entity(0);
        let p = |b, l| RelationalPath::of_len(b, l).unwrap();
        assert_eq!(sk.terminal_set(e0, &p(E, 1)), BTreeSet::from([e0]));
        assert_eq!(sk.terminal_set(e0, &p(E, 2)).len(), 3);
        assert_eq!(
            sk.terminal_set(e0, &p(E, 3)),
            BTreeSet::from([Instance::Entity(1), Instance::Entity(2), Instance::Entity(3)])
        );
        assert_eq!(sk.terminal_set(e0, &p(E, 4)).len(), 3);
        let r01 = Instance::Relationship(0, 1);
        assert_eq!(sk.terminal_set(r01, &p(R, 2)), BTreeSet::from([e0, Instance::Entity(1)]));
        assert_eq!(sk.terminal_set(r01, &p(R, 3)).len(), 4);
        assert_eq!(sk.terminal_set(r01, &p(R, 4)).len(), 2);
        assert_eq!(sk.terminal_set(r01, &p(R, 5)), BTreeSet::from([Instance::Relationship(2, 3)]));
        assert!(sk.terminal_set(r01, &p(E, 2)).is_empty());
        assert!(terminal_sets_disjoint(&sk, e0, &RelationalPath::enumerate(E)));
        assert!(terminal_sets_disjoint(&sk, r01, &RelationalPath::enumerate(R)));
    }

    #[test]
    fn ground_arcs_follow_dependencies() {
        let schema = Schema::new(
            "U",
            "F",
            alloc::vec![AttributeDecl::new("X", E), AttributeDecl::new("Y", E), AttributeDecl::existence("Ex")],
        )
        .unwrap();
        let model = Nscm::parse(schema, &["[U,F,U].X -> [U].Y"]).unwrap();
        let g = build_ground_graph(&model, &Skeleton::complete(3));
        let v = |i, a: &str| (Instance::Entity(i), a.to_string());
        assert!(g.has_arc(&v(1, "X"), &v(0, "Y")));
        assert!(!g.has_arc(&v(0, "X"), &v(0, "Y")));
        assert_eq!(g.dag().num_arcs(), 6);
        assert_eq!(d_sep_ground(&g, &[v(0, "X")], &[v(0, "Y")], &[]), Ok(true));
        assert_eq!(d_sep_ground(&g, &[v(0, "X")], &[v(1, "Y")], &[]), Ok(false));
        assert!(d_sep_ground(&g, &[v(0, "X")], &[v(0, "X")], &[]).is_err());
        assert!(d_sep_ground(&g, &[(Instance::Entity(9), "X".to_string())], &[], &[]).is_err());
    }
}
