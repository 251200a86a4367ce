//! Causal model and query files, and the answers to queries.

use std::path::Path;

use idenet_core::error::SchemaError;
use idenet_core::nagg::{build_nagg, find_ide_adjustment, FailureCase, Nagg};
use idenet_core::schema::{AttributeDecl, Domain, ItemClass, Nscm, RelationalVariable, Role, Schema};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::files::read_json;

/// A causal model file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub entity: String,
    pub relationship: String,
    pub attributes: Vec<AttributeSpec>,
    pub dependencies: Vec<String>,
}

/// One attribute; `class` is the entity or relationship name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeSpec {
    pub name: String,
    pub class: String,
    #[serde(default)]
    pub role: Role,
    #[serde(default = "real")]
    pub domain: Domain,
    #[serde(default)]
    pub exists: bool,
}

fn real() -> Domain {
    Domain::Real
}

impl ModelFile {
    pub fn to_model(&self) -> Result<Nscm> {
        let mut attrs = Vec::with_capacity(self.attributes.len());
        for a in &self.attributes {
            let class = if a.class == self.entity {
                ItemClass::Entity
            } else if a.class == self.relationship {
                ItemClass::Relationship
            } else {
                return Err(SchemaError::InvalidSchema {
                    reason: format!("attribute `{}` belongs to unknown class `{}`", a.name, a.class),
                }
                .into());
            };
            attrs.push(AttributeDecl { name: a.name.clone(), class, role: a.role, domain: a.domain, exists: a.exists });
        }
        let schema = Schema::new(&self.entity, &self.relationship, attrs)?;
        let deps: Vec<&str> = self.dependencies.iter().map(String::as_str).collect();
        Ok(Nscm::parse(schema, &deps)?)
    }
}

pub fn load_model(path: &Path) -> Result<Nscm> {
    read_json::<ModelFile>(path)?.to_model()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryKind {
    /// Relational d-separation of `x` and `y` given `z`.
    Dsep,
    /// Identification of the direct effect of `x` on `y`, by the maximal
    /// set or by `z` when given.
    Adjust,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryFile {
    pub query: QueryKind,
    pub x: Vec<String>,
    pub y: Vec<String>,
    #[serde(default)]
    pub z: Vec<String>,
}

/// Answer to a query, printable as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "query", rename_all = "lowercase")]
pub enum Verdict {
    Dsep {
        separated: bool,
        /// A d-connecting walk when not separated.
        witness: Vec<String>,
    },
    Adjust {
        identifiable: bool,
        adjustment_set: Vec<String>,
        failure_case: Option<FailureCase>,
        witness: Vec<String>,
    },
}

impl Verdict {
    /// True for separated or identifiable.
    pub fn affirmative(&self) -> bool {
        match self {
            Verdict::Dsep { separated, .. } => *separated,
            Verdict::Adjust { identifiable, .. } => *identifiable,
        }
    }
}

fn parse_all(g: &Nagg, names: &[String]) -> Result<Vec<RelationalVariable>> {
    names.iter().map(|s| Ok(g.parse_variable(s)?)).collect()
}

fn names(g: &Nagg, vs: &[RelationalVariable]) -> Vec<String> {
    vs.iter().map(|v| g.name(v)).collect()
}

/// Answers a query against a model.
pub fn answer(model: &Nscm, query: &QueryFile) -> Result<Verdict> {
    let first = query.x.first().ok_or_else(|| Error::Invalid(String::from("query needs at least one `x` variable")))?;
    let perspective = model.schema().parse_variable(first).map_err(Error::Invalid)?.path.base();
    let g = build_nagg(model, perspective)?;
    let (x, y, z) = (parse_all(&g, &query.x)?, parse_all(&g, &query.y)?, parse_all(&g, &query.z)?);
    match query.query {
        QueryKind::Dsep => {
            let separated = g.d_separated(&x, &y, &z)?;
            let witness = if separated { Vec::new() } else { g.d_connecting_walk(&x, &y, &z)?.unwrap_or_default() };
            Ok(Verdict::Dsep { separated, witness: names(&g, &witness) })
        }
        QueryKind::Adjust => {
            let ([x], [y]) = (x.as_slice(), y.as_slice()) else {
                return Err(Error::Invalid(String::from("adjust queries take exactly one `x` and one `y`")));
            };
            let res =
                if query.z.is_empty() { find_ide_adjustment(&g, x, y)? } else { g.check_adjustment_set(x, y, &z)? };
            Ok(Verdict::Adjust {
                identifiable: res.identifiable,
                adjustment_set: names(&g, &res.adjustment_set),
                failure_case: res.failure_case,
                witness: names(&g, &res.witness),
            })
        }
    }
}
