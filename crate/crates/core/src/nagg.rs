//! Network abstract ground graphs: lifted causal graphs over relational
//! variables from one perspective, with d-separation and adjustment-set
//! identification for individual direct effects.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dsep::{colliders, Dag, Direction, Step};
use crate::error::{ReasonError, SchemaError};
use crate::schema::{ItemClass, Nscm, RelationalPath, RelationalVariable, Role, Schema};

/// Node indices of a query's `x`, `y` and `z`.
type IndexSets = (Vec<usize>, Vec<usize>, Vec<usize>);

/// Paths obtained by splicing `extension` onto `original` at every pivot.
///
/// A pivot is a length `i` such that the last `i` classes of `original`,
/// read backwards, equal the first `i` classes of `extension`. The spliced
/// path drops the shared part once; only paths within the length bound survive.
pub fn extend(original: &RelationalPath, extension: &RelationalPath) -> BTreeSet<RelationalPath> {
    let po = original.to_vec();
    let pe = extension.to_vec();
    let mut out = BTreeSet::new();
    if original.terminal() != extension.base() {
        return out;
    }
    let rev: Vec<ItemClass> = po.iter().rev().copied().collect();
    for i in 1..=po.len().min(pe.len()) {
        if rev[..i] != pe[..i] {
            continue;
        }
        let mut seq = po[..po.len() - i + 1].to_vec();
        seq.extend_from_slice(&pe[i..]);
        if let Ok(p) = RelationalPath::new(&seq) {
            out.insert(p);
        }
    }
    out
}

/// Why the maximal adjustment set fails.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureCase {
    /// An unblocked backdoor path through latent structure, without colliders
    /// and without passing through a peer's outcome.
    CaseI,
    /// Conditioning on the adjustment set opens a collider.
    CaseII,
    /// A collider-free backdoor path that reaches the outcome through a peer's
    /// outcome or a peer's latent variable.
    CaseIII,
    Other,
}

/// Outcome of an identification query.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdjustmentResult {
    pub identifiable: bool,
    /// The adjustment set when identifiable, empty otherwise.
    pub adjustment_set: Vec<RelationalVariable>,
    pub failure_case: Option<FailureCase>,
    /// A d-connecting walk from treatment to outcome when not identifiable.
    pub witness: Vec<RelationalVariable>,
}

/// The abstract ground graph of a model from one perspective.
#[derive(Clone, Debug)]
pub struct Nagg {
    schema: Schema,
    perspective: ItemClass,
    nodes: Vec<RelationalVariable>,
    index: BTreeMap<RelationalVariable, usize>,
    dag: Dag,
    roles: Vec<Role>,
}

/// Builds the abstract ground graph of `model` from `perspective`.
pub fn build_nagg(model: &Nscm, perspective: ItemClass) -> Result<Nagg, SchemaError> {
    model.validate()?;
    let schema = model.schema().clone();
    let paths = RelationalPath::enumerate(perspective);
    let mut nodes = Vec::new();
    let mut roles = Vec::new();
    for p in &paths {
        for a in schema.attributes(p.terminal()) {
            nodes.push(RelationalVariable::new(*p, &a.name));
            roles.push(a.role);
        }
    }
    let index: BTreeMap<RelationalVariable, usize> = nodes.iter().cloned().enumerate().map(|(i, v)| (v, i)).collect();
    let mut dag = Dag::new(nodes.len());
    for dep in model.all_dependencies() {
        let effect_class = dep.effect.path.base();
        for po in paths.iter().filter(|p| p.terminal() == effect_class) {
            let to = index[&RelationalVariable::new(*po, &dep.effect.attribute)];
            for p in extend(po, &dep.cause.path) {
                let from = index[&RelationalVariable::new(p, &dep.cause.attribute)];
                dag.add_arc(from, to);
            }
        }
    }
    Ok(Nagg { schema, perspective, nodes, index, dag, roles })
}

impl Nagg {
    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn perspective(&self) -> ItemClass {
        self.perspective
    }

    pub fn nodes(&self) -> &[RelationalVariable] {
        &self.nodes
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn index_of(&self, v: &RelationalVariable) -> Option<usize> {
        self.index.get(v).copied()
    }

    pub fn role(&self, v: &RelationalVariable) -> Option<Role> {
        self.index_of(v).map(|i| self.roles[i])
    }

    pub fn arcs(&self) -> Vec<(RelationalVariable, RelationalVariable)> {
        self.dag.arcs().map(|(a, b)| (self.nodes[a].clone(), self.nodes[b].clone())).collect()
    }

    pub fn has_arc(&self, from: &RelationalVariable, to: &RelationalVariable) -> bool {
        match (self.index_of(from), self.index_of(to)) {
            (Some(a), Some(b)) => self.dag.has_arc(a, b),
            _ => false,
        }
    }

    pub fn latent_set(&self) -> Vec<RelationalVariable> {
        self.with_role(Role::Latent)
    }

    pub fn selection_set(&self) -> Vec<RelationalVariable> {
        self.with_role(Role::Selection)
    }

    fn with_role(&self, role: Role) -> Vec<RelationalVariable> {
        self.nodes.iter().zip(&self.roles).filter(|(_, r)| **r == role).map(|(v, _)| v.clone()).collect()
    }

    /// Parses `[U,F,U].Aff` and checks that it is a node of this graph.
    pub fn parse_variable(&self, text: &str) -> Result<RelationalVariable, ReasonError> {
        let v = self.schema.parse_variable(text).map_err(|_| ReasonError::UnknownNode(text.trim().to_string()))?;
        if self.index_of(&v).is_none() {
            return Err(ReasonError::UnknownNode(text.trim().to_string()));
        }
        Ok(v)
    }

    pub fn name(&self, v: &RelationalVariable) -> String {
        self.schema.variable_string(v)
    }

    fn indices(&self, vs: &[RelationalVariable]) -> Result<Vec<usize>, ReasonError> {
        vs.iter().map(|v| self.index_of(v).ok_or_else(|| ReasonError::UnknownNode(self.name(v)))).collect()
    }

    /// Relational d-separation of `x` and `y` given `z`.
    ///
    /// `z` may not contain latent variables and must contain every selection
    /// variable.
    pub fn d_separated(
        &self,
        x: &[RelationalVariable],
        y: &[RelationalVariable],
        z: &[RelationalVariable],
    ) -> Result<bool, ReasonError> {
        let (xi, yi, zi) = self.check_query(x, y, z)?;
        Ok(self.dag.d_separated(&xi, &yi, &zi))
    }

    /// A d-connecting walk from `x` to `y` given `z`, if any.
    pub fn d_connecting_walk(
        &self,
        x: &[RelationalVariable],
        y: &[RelationalVariable],
        z: &[RelationalVariable],
    ) -> Result<Option<Vec<RelationalVariable>>, ReasonError> {
        let (xi, yi, zi) = self.check_query(x, y, z)?;
        Ok(self.dag.d_connecting_walk(&xi, &yi, &zi).map(|w| w.iter().map(|s| self.nodes[s.node].clone()).collect()))
    }

    fn check_query(
        &self,
        x: &[RelationalVariable],
        y: &[RelationalVariable],
        z: &[RelationalVariable],
    ) -> Result<IndexSets, ReasonError> {
        let (xi, yi, zi) = (self.indices(x)?, self.indices(y)?, self.indices(z)?);
        let overlap = xi.iter().chain(&yi).any(|v| zi.contains(v)) || xi.iter().any(|v| yi.contains(v));
        if overlap {
            return Err(ReasonError::InvalidQuery("variable sets must be disjoint".to_string()));
        }
        for &v in &zi {
            if self.roles[v] == Role::Latent {
                return Err(ReasonError::LatentInConditioningSet(self.name(&self.nodes[v])));
            }
        }
        for (v, role) in self.roles.iter().enumerate() {
            if *role == Role::Selection && !zi.contains(&v) && !xi.contains(&v) && !yi.contains(&v) {
                return Err(ReasonError::SelectionNotConditioned(self.name(&self.nodes[v])));
            }
        }
        Ok((xi, yi, zi))
    }

    /// The treatment and outcome as `[E].X`, `[E].Y` after checking the query
    /// shape and the background assumption.
    fn check_ide_query(&self, treatment: &RelationalVariable, outcome: &RelationalVariable) -> Result<(), ReasonError> {
        if self.perspective != ItemClass::Entity {
            return Err(ReasonError::InvalidQuery("effect queries need the entity perspective".to_string()));
        }
        for v in [treatment, outcome] {
            if !(v.path.is_canonical() && v.path.base() == ItemClass::Entity) {
                return Err(ReasonError::InvalidQuery(format!(
                    "`{}` must be an entity attribute on the canonical path",
                    self.name(v)
                )));
            }
            match self.role(v) {
                None => return Err(ReasonError::UnknownNode(self.name(v))),
                Some(Role::Observed) => {}
                Some(_) => {
                    return Err(ReasonError::InvalidQuery(format!("`{}` must be an observed attribute", self.name(v))))
                }
            }
        }
        if treatment.attribute == outcome.attribute {
            return Err(ReasonError::InvalidQuery("treatment and outcome must differ".to_string()));
        }

        // Background attributes must not descend from treatment or outcome,
        // and the treatment must not descend from the outcome.
        type Key = (ItemClass, String);
        let mut children: BTreeMap<Key, BTreeSet<Key>> = BTreeMap::new();
        for (a, b) in self.dag.arcs() {
            let from = (self.nodes[a].path.terminal(), self.nodes[a].attribute.clone());
            let to = (self.nodes[b].path.terminal(), self.nodes[b].attribute.clone());
            children.entry(from).or_default().insert(to);
        }
        let descendants = |start: &Key| {
            let mut seen = BTreeSet::new();
            let mut stack = alloc::vec![start.clone()];
            while let Some(k) = stack.pop() {
                if let Some(cs) = children.get(&k) {
                    for c in cs {
                        if seen.insert(c.clone()) {
                            stack.push(c.clone());
                        }
                    }
                }
            }
            seen
        };
        let x_key = (ItemClass::Entity, treatment.attribute.clone());
        let y_key = (ItemClass::Entity, outcome.attribute.clone());
        if descendants(&y_key).contains(&x_key) {
            return Err(ReasonError::AssumptionViolated(format!(
                "treatment `{}` is a descendant of outcome `{}`",
                treatment.attribute, outcome.attribute
            )));
        }
        for root in [&x_key, &y_key] {
            for d in descendants(root) {
                if d == x_key || d == y_key {
                    continue;
                }
                let role = self.schema.attribute(d.0, &d.1).map(|a| a.role);
                if role != Some(Role::Latent) {
                    return Err(ReasonError::AssumptionViolated(format!(
                        "background attribute `{}.{}` is a descendant of `{}`",
                        self.schema.class_name(d.0),
                        d.1,
                        root.1
                    )));
                }
            }
        }
        Ok(())
    }

    fn is_peer_outcome(&self, v: &RelationalVariable, outcome: &RelationalVariable) -> bool {
        v.attribute == outcome.attribute && v.path.base() == ItemClass::Entity && v.path.len() == 3
    }

    /// The maximal observed candidate set: peer treatments and all observed
    /// background variables, excluding the ego treatment and outcome, peer
    /// outcomes and latent variables.
    pub fn maximal_adjustment_set(
        &self,
        treatment: &RelationalVariable,
        outcome: &RelationalVariable,
    ) -> Vec<RelationalVariable> {
        self.nodes
            .iter()
            .zip(&self.roles)
            .filter(|(v, role)| {
                **role != Role::Latent
                    && *v != treatment
                    && *v != outcome
                    && v.attribute != outcome.attribute
                    && (v.attribute != treatment.attribute || v.path.len() == 3)
            })
            .map(|(v, _)| v.clone())
            .collect()
    }

    /// Tests a user-supplied adjustment set for the effect of `treatment` on
    /// `outcome`.
    pub fn check_adjustment_set(
        &self,
        treatment: &RelationalVariable,
        outcome: &RelationalVariable,
        z: &[RelationalVariable],
    ) -> Result<AdjustmentResult, ReasonError> {
        self.check_ide_query(treatment, outcome)?;
        if let Some(v) = z.iter().find(|v| self.is_peer_outcome(v, outcome)) {
            return Err(ReasonError::PeerOutcomeConditioned(self.name(v)));
        }
        self.backdoor_test(treatment, outcome, z)
    }

    fn backdoor_test(
        &self,
        treatment: &RelationalVariable,
        outcome: &RelationalVariable,
        z: &[RelationalVariable],
    ) -> Result<AdjustmentResult, ReasonError> {
        let (xi, yi, zi) = self.check_query(core::slice::from_ref(treatment), core::slice::from_ref(outcome), z)?;
        let mutilated = self.dag.without_outgoing(&xi);
        match mutilated.d_connecting_walk(&xi, &yi, &zi) {
            None => Ok(AdjustmentResult {
                identifiable: true,
                adjustment_set: z.to_vec(),
                failure_case: None,
                witness: Vec::new(),
            }),
            Some(walk) => Ok(AdjustmentResult {
                identifiable: false,
                adjustment_set: Vec::new(),
                failure_case: Some(self.classify(&walk, outcome)),
                witness: walk.iter().map(|s| self.nodes[s.node].clone()).collect(),
            }),
        }
    }

    /// Labels a d-connecting walk from treatment to outcome.
    ///
    /// Any open collider gives [`FailureCase::CaseII`]. A collider-free walk
    /// has the shape `X <- ... <- F -> ... -> Y`; if the outcome branch passes
    /// through a peer's outcome or a peer's latent variable it is
    /// [`FailureCase::CaseIII`], otherwise [`FailureCase::CaseI`].
    fn classify(&self, walk: &[Step], outcome: &RelationalVariable) -> FailureCase {
        if !colliders(walk).is_empty() {
            return FailureCase::CaseII;
        }
        let Some(first_down) = walk.iter().position(|s| s.arrived == Direction::Down) else {
            return FailureCase::Other;
        };
        if first_down < 2 {
            // The treatment itself would be the fork; its outgoing arcs are removed.
            return FailureCase::Other;
        }
        let branch = &walk[first_down..walk.len() - 1];
        let through_peer = branch.iter().any(|s| {
            let v = &self.nodes[s.node];
            v.path.base() == ItemClass::Entity
                && v.path.len() == 3
                && (v.attribute == outcome.attribute || self.roles[s.node] == Role::Latent)
        });
        if through_peer {
            FailureCase::CaseIII
        } else {
            FailureCase::CaseI
        }
    }
}

/// Tests whether the maximal observed set identifies the individual direct
/// effect of `treatment` on `outcome`.
pub fn find_ide_adjustment(
    nagg: &Nagg,
    treatment: &RelationalVariable,
    outcome: &RelationalVariable,
) -> Result<AdjustmentResult, ReasonError> {
    nagg.check_ide_query(treatment, outcome)?;
    let z = nagg.maximal_adjustment_set(treatment, outcome);
    nagg.backdoor_test(treatment, outcome, &z)
}
