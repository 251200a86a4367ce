//! Single-entity, single-relationship relational schemas, relational paths,
//! variables, dependencies, and network structural causal models over them.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::SchemaError;

/// The two item classes of the schema.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemClass {
    Entity,
    Relationship,
}

impl ItemClass {
    pub fn other(self) -> Self {
        match self {
            ItemClass::Entity => ItemClass::Relationship,
            ItemClass::Relationship => ItemClass::Entity,
        }
    }

    /// Longest path with a non-empty terminal set from this base class.
    pub const fn max_path_len(self) -> usize {
        match self {
            ItemClass::Entity => 4,
            ItemClass::Relationship => 5,
        }
    }
}

/// How an attribute participates in estimation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    #[default]
    Observed,
    Latent,
    /// Always conditioned on, such as the relationship existence indicator.
    Selection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Real,
    Binary,
    Categorical(u32),
}

/// One attribute of an item class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeDecl {
    pub name: String,
    pub class: ItemClass,
    #[serde(default)]
    pub role: Role,
    #[serde(default = "default_domain")]
    pub domain: Domain,
    /// Marks the relationship existence indicator.
    #[serde(default)]
    pub exists: bool,
}

fn default_domain() -> Domain {
    Domain::Real
}

impl AttributeDecl {
    pub fn new(name: &str, class: ItemClass) -> Self {
        Self { name: name.to_string(), class, role: Role::Observed, domain: Domain::Real, exists: false }
    }

    pub fn latent(mut self) -> Self {
        self.role = Role::Latent;
        self
    }

    pub fn binary(mut self) -> Self {
        self.domain = Domain::Binary;
        self
    }

    /// The relationship existence indicator: binary and always conditioned on.
    pub fn existence(name: &str) -> Self {
        Self {
            name: name.to_string(),
            class: ItemClass::Relationship,
            role: Role::Selection,
            domain: Domain::Binary,
            exists: true,
        }
    }
}

/// A schema with one entity class and one binary relationship class over it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schema {
    entity: String,
    relationship: String,
    entity_attrs: Vec<AttributeDecl>,
    relationship_attrs: Vec<AttributeDecl>,
    exists: String,
}

impl Schema {
    pub fn new(entity: &str, relationship: &str, attributes: Vec<AttributeDecl>) -> Result<Self, SchemaError> {
        let bad = |reason: String| Err(SchemaError::InvalidSchema { reason });
        for name in [entity, relationship] {
            if !is_identifier(name) {
                return bad(format!("`{name}` is not a valid class name"));
            }
        }
        if entity == relationship {
            return bad(format!("entity and relationship classes share the name `{entity}`"));
        }
        let mut seen = BTreeSet::new();
        let mut entity_attrs = Vec::new();
        let mut relationship_attrs = Vec::new();
        let mut exists = Vec::new();
        for a in attributes {
            if !is_identifier(&a.name) {
                return bad(format!("`{}` is not a valid attribute name", a.name));
            }
            if !seen.insert((a.class, a.name.clone())) {
                return bad(format!("attribute `{}` declared twice", a.name));
            }
            if a.exists {
                if a.class != ItemClass::Relationship {
                    return bad(format!("existence indicator `{}` must belong to the relationship class", a.name));
                }
                if a.domain != Domain::Binary || a.role != Role::Selection {
                    return bad(format!("existence indicator `{}` must be binary with the selection role", a.name));
                }
                exists.push(a.name.clone());
            }
            match a.class {
                ItemClass::Entity => entity_attrs.push(a),
                ItemClass::Relationship => relationship_attrs.push(a),
            }
        }
        if exists.len() != 1 {
            return bad(format!("expected exactly one existence indicator, found {}", exists.len()));
        }
        Ok(Self {
            entity: entity.to_string(),
            relationship: relationship.to_string(),
            entity_attrs,
            relationship_attrs,
            exists: exists.remove(0),
        })
    }

    pub fn class_name(&self, class: ItemClass) -> &str {
        match class {
            ItemClass::Entity => &self.entity,
            ItemClass::Relationship => &self.relationship,
        }
    }

    pub fn class_by_name(&self, name: &str) -> Option<ItemClass> {
        if name == self.entity {
            Some(ItemClass::Entity)
        } else if name == self.relationship {
            Some(ItemClass::Relationship)
        } else {
            None
        }
    }

    /// Attributes of `class` in declaration order.
    pub fn attributes(&self, class: ItemClass) -> &[AttributeDecl] {
        match class {
            ItemClass::Entity => &self.entity_attrs,
            ItemClass::Relationship => &self.relationship_attrs,
        }
    }

    pub fn attribute(&self, class: ItemClass, name: &str) -> Option<&AttributeDecl> {
        self.attributes(class).iter().find(|a| a.name == name)
    }

    /// Name of the relationship existence indicator.
    pub fn exists_attribute(&self) -> &str {
        &self.exists
    }

    pub fn enumerate_paths(&self, perspective: ItemClass) -> Vec<RelationalPath> {
        RelationalPath::enumerate(perspective)
    }

    /// Renders a path as `[U,F,U]`.
    pub fn path_string(&self, path: &RelationalPath) -> String {
        let names: Vec<&str> = path.classes().map(|c| self.class_name(c)).collect();
        format!("[{}]", names.join(","))
    }

    /// Renders a variable as `[U,F,U].Aff`.
    pub fn variable_string(&self, v: &RelationalVariable) -> String {
        format!("{}.{}", self.path_string(&v.path), v.attribute)
    }

    pub fn dependency_string(&self, d: &RelationalDependency) -> String {
        format!("{} -> {}", self.variable_string(&d.cause), self.variable_string(&d.effect))
    }

    /// Parses `[U,F,U].Aff`.
    pub fn parse_variable(&self, text: &str) -> Result<RelationalVariable, String> {
        let text = text.trim();
        let rest = text.strip_prefix('[').ok_or_else(|| format!("`{text}` does not start with `[`"))?;
        let (inner, attr) = rest.split_once(']').ok_or_else(|| format!("`{text}` has no closing `]`"))?;
        let attr = attr.strip_prefix('.').ok_or_else(|| format!("`{text}` has no `.attribute` after the path"))?;
        let mut classes = Vec::new();
        for tok in inner.split(',') {
            let tok = tok.trim();
            classes.push(self.class_by_name(tok).ok_or_else(|| format!("unknown item class `{tok}`"))?);
        }
        let path = RelationalPath::new(&classes).map_err(|e| e.to_string())?;
        let attr = attr.trim();
        if self.attribute(path.terminal(), attr).is_none() {
            return Err(format!("`{attr}` is not an attribute of `{}`", self.class_name(path.terminal())));
        }
        Ok(RelationalVariable { path, attribute: attr.to_string() })
    }

    /// Parses `cause -> effect`. The effect must sit on a canonical path.
    pub fn parse_dependency(&self, text: &str) -> Result<RelationalDependency, SchemaError> {
        let malformed = |reason: String| SchemaError::MalformedDependency { dependency: text.to_string(), reason };
        let (lhs, rhs) = text.split_once("->").ok_or_else(|| malformed("missing `->`".to_string()))?;
        let cause = self.parse_variable(lhs).map_err(malformed)?;
        let effect = self.parse_variable(rhs).map_err(malformed)?;
        RelationalDependency::new(cause, effect).map_err(|e| match e {
            SchemaError::MalformedDependency { reason, .. } => malformed(reason),
            other => other,
        })
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_alphabetic() || c == '_') && chars.all(|c| c.is_alphanumeric() || c == '_')
}

/// An alternating sequence of item classes, stored as its base class and length.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelationalPath {
    base: ItemClass,
    len: u8,
}

impl RelationalPath {
    /// Validates a class sequence: non-empty, alternating, and within the
    /// length bound of its base class.
    pub fn new(classes: &[ItemClass]) -> Result<Self, SchemaError> {
        let bad = |reason: &str| Err(SchemaError::InvalidPath { reason: reason.to_string() });
        let Some(&base) = classes.first() else { return bad("empty path") };
        if classes.windows(2).any(|w| w[0] == w[1]) {
            return bad("consecutive item classes must alternate");
        }
        if classes.len() > base.max_path_len() {
            return Err(SchemaError::InvalidPath {
                reason: format!("length {} exceeds {} for this base class", classes.len(), base.max_path_len()),
            });
        }
        Ok(Self { base, len: classes.len() as u8 })
    }

    /// The length-one path `[base]`.
    pub fn canonical(base: ItemClass) -> Self {
        Self { base, len: 1 }
    }

    pub fn of_len(base: ItemClass, len: usize) -> Result<Self, SchemaError> {
        let classes: Vec<ItemClass> = (0..len).map(|i| class_at(base, i)).collect();
        Self::new(&classes)
    }

    pub fn base(&self) -> ItemClass {
        self.base
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_canonical(&self) -> bool {
        self.len == 1
    }

    pub fn terminal(&self) -> ItemClass {
        class_at(self.base, self.len() - 1)
    }

    pub fn classes(&self) -> impl Iterator<Item = ItemClass> + '_ {
        (0..self.len()).map(move |i| class_at(self.base, i))
    }

    pub fn to_vec(&self) -> Vec<ItemClass> {
        self.classes().collect()
    }

    /// Every valid path from `perspective`, shortest first.
    pub fn enumerate(perspective: ItemClass) -> Vec<RelationalPath> {
        (1..=perspective.max_path_len()).map(|len| Self { base: perspective, len: len as u8 }).collect()
    }
}

fn class_at(base: ItemClass, i: usize) -> ItemClass {
    if i.is_multiple_of(2) {
        base
    } else {
        base.other()
    }
}

/// An attribute reached through a relational path.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelationalVariable {
    pub path: RelationalPath,
    pub attribute: String,
}

impl RelationalVariable {
    pub fn new(path: RelationalPath, attribute: &str) -> Self {
        Self { path, attribute: attribute.to_string() }
    }

    pub fn canonical(class: ItemClass, attribute: &str) -> Self {
        Self::new(RelationalPath::canonical(class), attribute)
    }
}

/// `cause -> effect`. The effect sits on a canonical path and the cause's path
/// starts from the effect's item class.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelationalDependency {
    pub cause: RelationalVariable,
    pub effect: RelationalVariable,
}

impl RelationalDependency {
    pub fn new(cause: RelationalVariable, effect: RelationalVariable) -> Result<Self, SchemaError> {
        let malformed = |reason: &str| SchemaError::MalformedDependency {
            dependency: format!("{cause:?} -> {effect:?}"),
            reason: reason.to_string(),
        };
        if !effect.path.is_canonical() {
            return Err(malformed("the effect must be on a canonical (length-one) path"));
        }
        if cause.path.base() != effect.path.base() {
            return Err(malformed("cause path must start at the effect's item class"));
        }
        if cause.path.is_canonical() && cause.attribute == effect.attribute {
            return Err(malformed("a variable cannot cause itself"));
        }
        Ok(Self { cause, effect })
    }
}

/// The dependencies every model carries: the existence of a relationship
/// precedes each of its other attributes.
pub fn implicit_dependencies(schema: &Schema) -> Vec<RelationalDependency> {
    let ex = RelationalVariable::canonical(ItemClass::Relationship, schema.exists_attribute());
    schema
        .attributes(ItemClass::Relationship)
        .iter()
        .filter(|a| !a.exists)
        .map(|a| RelationalDependency {
            cause: ex.clone(),
            effect: RelationalVariable::canonical(ItemClass::Relationship, &a.name),
        })
        .collect()
}

/// A network structural causal model: a schema and its explicit dependencies.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Nscm {
    schema: Schema,
    dependencies: Vec<RelationalDependency>,
}

impl Nscm {
    /// Builds and validates a model. Duplicate dependencies are dropped.
    pub fn new(schema: Schema, dependencies: Vec<RelationalDependency>) -> Result<Self, SchemaError> {
        let mut seen = BTreeSet::new();
        let dependencies: Vec<_> = dependencies.into_iter().filter(|d| seen.insert(d.clone())).collect();
        validate_nscm(&schema, &dependencies)?;
        Ok(Self { schema, dependencies })
    }

    /// Parses dependency strings against `schema`.
    pub fn parse(schema: Schema, dependencies: &[&str]) -> Result<Self, SchemaError> {
        let deps = dependencies.iter().map(|d| schema.parse_dependency(d)).collect::<Result<Vec<_>, _>>()?;
        Self::new(schema, deps)
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn dependencies(&self) -> &[RelationalDependency] {
        &self.dependencies
    }

    /// Explicit dependencies followed by the implicit ones.
    pub fn all_dependencies(&self) -> Vec<RelationalDependency> {
        let mut all = self.dependencies.clone();
        for d in implicit_dependencies(&self.schema) {
            if !all.contains(&d) {
                all.push(d);
            }
        }
        all
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        validate_nscm(&self.schema, &self.dependencies)
    }
}

/// Checks that every dependency refers to declared attributes with consistent
/// paths and that the class-level dependency graph, implicit arcs included,
/// is acyclic.
pub fn validate_nscm(schema: &Schema, dependencies: &[RelationalDependency]) -> Result<(), SchemaError> {
    for d in dependencies {
        let text = schema.dependency_string(d);
        let malformed = |reason: String| SchemaError::MalformedDependency { dependency: text.clone(), reason };
        for v in [&d.cause, &d.effect] {
            if schema.attribute(v.path.terminal(), &v.attribute).is_none() {
                return Err(malformed(format!(
                    "`{}` is not an attribute of `{}`",
                    v.attribute,
                    schema.class_name(v.path.terminal())
                )));
            }
        }
        if !d.effect.path.is_canonical() || d.cause.path.base() != d.effect.path.base() {
            return Err(malformed("effect must be canonical and share the cause's base class".to_string()));
        }
    }

    type Key = (ItemClass, String);
    let mut children: BTreeMap<Key, BTreeSet<Key>> = BTreeMap::new();
    for class in [ItemClass::Entity, ItemClass::Relationship] {
        for a in schema.attributes(class) {
            children.entry((class, a.name.clone())).or_default();
        }
    }
    let implicit = implicit_dependencies(schema);
    for d in dependencies.iter().chain(&implicit) {
        let from = (d.cause.path.terminal(), d.cause.attribute.clone());
        let to = (d.effect.path.terminal(), d.effect.attribute.clone());
        children.entry(from).or_default().insert(to);
    }

    // Iterative three-colour DFS; a grey successor closes a cycle.
    let mut colour: BTreeMap<&Key, u8> = children.keys().map(|k| (k, 0u8)).collect();
    for start in children.keys() {
        if colour[start] != 0 {
            continue;
        }
        let mut stack: Vec<(&Key, Vec<&Key>)> = Vec::new();
        colour.insert(start, 1);
        stack.push((start, children[start].iter().collect()));
        while let Some((node, pending)) = stack.last_mut() {
            let node = *node;
            match pending.pop() {
                Some(next) => match colour[next] {
                    0 => {
                        colour.insert(next, 1);
                        let succ = children[next].iter().collect();
                        stack.push((next, succ));
                    }
                    1 => {
                        let pos = stack.iter().position(|(k, _)| *k == next).unwrap_or(0);
                        let mut cycle: Vec<String> = stack[pos..].iter().map(|(k, _)| qualified(schema, k)).collect();
                        cycle.push(qualified(schema, next));
                        return Err(SchemaError::CyclicModel { cycle });
                    }
                    _ => {}
                },
                None => {
                    colour.insert(node, 2);
                    stack.pop();
                }
            }
        }
    }
    Ok(())
}

fn qualified(schema: &Schema, key: &(ItemClass, String)) -> String {
    format!("{}.{}", schema.class_name(key.0), key.1)
}

impl fmt::Display for ItemClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ItemClass::Entity => f.write_str("entity"),
            ItemClass::Relationship => f.write_str("relationship"),
        }
    }
}
