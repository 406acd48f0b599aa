//! Relation schemas and the small amount of interval algebra the model needs:
//! confusion relations, inverses under argument swap, and the mapping from
//! start/end point comparisons to interval relations.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved name of the ambiguity label. Never a member of a schema's relations.
pub const VAGUE: &str = "Vague";

/// Index of a well-defined relation within its schema.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelId(pub usize);

/// A gold or predicted label: a well-defined relation or *Vague*.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Rel(RelId),
    Vague,
}

impl Label {
    pub fn relation(self) -> Option<RelId> {
        match self {
            Label::Rel(r) => Some(r),
            Label::Vague => None,
        }
    }

    pub fn is_vague(self) -> bool {
        matches!(self, Label::Vague)
    }
}

/// Declarative form of a schema, as read from and written to schema files.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaFile {
    pub name: String,
    pub relations: Vec<String>,
    #[serde(default)]
    pub confusion: Vec<[String; 2]>,
    pub inverse: Vec<[String; 2]>,
}

/// Ordered set of well-defined relations with confusion and inverse maps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationSchema {
    name: String,
    relations: Vec<String>,
    confusion: Vec<Option<RelId>>,
    inverse: Vec<RelId>,
}

impl RelationSchema {
    pub fn from_file_form(file: &SchemaFile) -> Result<Self> {
        let mut relations: Vec<String> = Vec::with_capacity(file.relations.len());
        for r in &file.relations {
            if r == VAGUE {
                return Err(Error::Schema(format!("`{VAGUE}` cannot be a well-defined relation")));
            }
            if r.is_empty() {
                return Err(Error::Schema("empty relation name".into()));
            }
            if relations.contains(r) {
                return Err(Error::Schema(format!("duplicate relation `{r}`")));
            }
            relations.push(r.clone());
        }
        if relations.is_empty() {
            return Err(Error::Schema("schema has no relations".into()));
        }
        let lookup = |name: &str| -> Result<RelId> {
            relations
                .iter()
                .position(|r| r == name)
                .map(RelId)
                .ok_or_else(|| Error::Schema(format!("unknown relation `{name}`")))
        };

        let mut confusion = vec![None; relations.len()];
        for [a, b] in &file.confusion {
            let (a, b) = (lookup(a)?, lookup(b)?);
            if a == b {
                return Err(Error::Schema(format!(
                    "relation `{}` cannot be its own confusion relation",
                    relations[a.0]
                )));
            }
            for r in [a, b] {
                if confusion[r.0].is_some() {
                    return Err(Error::Schema(format!(
                        "relation `{}` appears in more than one confusion pair",
                        relations[r.0]
                    )));
                }
            }
            confusion[a.0] = Some(b);
            confusion[b.0] = Some(a);
        }

        let mut inverse: Vec<Option<RelId>> = vec![None; relations.len()];
        for [a, b] in &file.inverse {
            let (a, b) = (lookup(a)?, lookup(b)?);
            for r in [a, b] {
                if inverse[r.0].is_some() && !(a == b && inverse[r.0] == Some(r)) {
                    return Err(Error::Schema(format!(
                        "relation `{}` appears in more than one inverse pair",
                        relations[r.0]
                    )));
                }
            }
            inverse[a.0] = Some(b);
            inverse[b.0] = Some(a);
        }
        let inverse = inverse
            .into_iter()
            .enumerate()
            .map(|(i, inv)| {
                inv.ok_or_else(|| {
                    Error::Schema(format!("relation `{}` has no inverse", relations[i]))
                })
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(Self {
            name: file.name.clone(),
            relations,
            confusion,
            inverse,
        })
    }

    pub fn to_file_form(&self) -> SchemaFile {
        let mut confusion = Vec::new();
        let mut inverse = Vec::new();
        for (i, name) in self.relations.iter().enumerate() {
            if let Some(c) = self.confusion[i] {
                if c.0 > i {
                    confusion.push([name.clone(), self.relations[c.0].clone()]);
                }
            }
            let inv = self.inverse[i];
            if inv.0 >= i {
                inverse.push([name.clone(), self.relations[inv.0].clone()]);
            }
        }
        SchemaFile {
            name: self.name.clone(),
            relations: self.relations.clone(),
            confusion,
            inverse,
        }
    }

    /// Built-in presets: `tbdense`, `matres`, `udst`.
    pub fn preset(name: &str) -> Result<Self> {
        let pairs = |ps: &[(&str, &str)]| -> Vec<[String; 2]> {
            ps.iter().map(|(a, b)| [a.to_string(), b.to_string()]).collect()
        };
        let tbdense_like = |name: &str| SchemaFile {
            name: name.to_string(),
            relations: ["Before", "After", "Include", "Is_Included", "Simultaneous"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            confusion: pairs(&[("Before", "Include"), ("After", "Is_Included")]),
            inverse: pairs(&[
                ("Before", "After"),
                ("Include", "Is_Included"),
                ("Simultaneous", "Simultaneous"),
            ]),
        };
        let file = match name {
            "tbdense" => tbdense_like("tbdense"),
            "udst" => tbdense_like("udst"),
            "matres" => SchemaFile {
                name: "matres".into(),
                relations: ["Before", "After", "Equal"].iter().map(|s| s.to_string()).collect(),
                confusion: Vec::new(),
                inverse: pairs(&[("Before", "After"), ("Equal", "Equal")]),
            },
            other => return Err(Error::Schema(format!("unknown schema preset `{other}`"))),
        };
        Self::from_file_form(&file)
    }

    pub fn tbdense() -> Self {
        Self::preset("tbdense").expect("built-in preset is valid")
    }

    pub fn matres() -> Self {
        Self::preset("matres").expect("built-in preset is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: SchemaFile =
            toml::from_str(text).map_err(|e| Error::Schema(format!("bad schema file: {e}")))?;
        Self::from_file_form(&file)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&self.to_file_form()).expect("schema serializes")
    }

    /// Resolves either a preset name or a path to a schema file.
    pub fn resolve(spec: &str) -> Result<Self> {
        match spec {
            "tbdense" | "matres" | "udst" => Self::preset(spec),
            path => {
                let text =
                    std::fs::read_to_string(path).map_err(|e| Error::io(Path::new(path), e))?;
                Self::from_toml_str(&text)
            }
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = RelId> + '_ {
        (0..self.relations.len()).map(RelId)
    }

    /// All labels in report order: relations in schema order, then *Vague*.
    pub fn labels(&self) -> Vec<Label> {
        self.ids().map(Label::Rel).chain(std::iter::once(Label::Vague)).collect()
    }

    /// Dense index of a label in `labels()` order.
    pub fn label_index(&self, label: Label) -> usize {
        match label {
            Label::Rel(r) => r.0,
            Label::Vague => self.relations.len(),
        }
    }

    pub fn relation(&self, name: &str) -> Result<RelId> {
        self.relations
            .iter()
            .position(|r| r == name)
            .map(RelId)
            .ok_or_else(|| Error::Schema(format!("unknown relation `{name}` in schema `{}`", self.name)))
    }

    pub fn label(&self, name: &str) -> Result<Label> {
        if name == VAGUE {
            Ok(Label::Vague)
        } else {
            self.relation(name).map(Label::Rel)
        }
    }

    pub fn relation_name(&self, r: RelId) -> &str {
        &self.relations[r.0]
    }

    pub fn label_name(&self, label: Label) -> &str {
        match label {
            Label::Rel(r) => self.relation_name(r),
            Label::Vague => VAGUE,
        }
    }

    fn check(&self, r: RelId) -> Result<()> {
        if r.0 < self.relations.len() {
            Ok(())
        } else {
            Err(Error::Schema(format!(
                "relation index {} out of range for schema `{}`",
                r.0, self.name
            )))
        }
    }

    /// The relation sharing `r`'s start-point ordering but differing at the
    /// end point, if the schema defines one.
    pub fn confusion_of(&self, r: RelId) -> Result<Option<RelId>> {
        self.check(r)?;
        Ok(self.confusion[r.0])
    }

    /// The label holding for the swapped pair (e2, e1).
    pub fn inverse_of(&self, label: Label) -> Result<Label> {
        match label {
            Label::Vague => Ok(Label::Vague),
            Label::Rel(r) => {
                self.check(r)?;
                Ok(Label::Rel(self.inverse[r.0]))
            }
        }
    }
}

impl fmt::Display for RelationSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}]", self.name, self.relations.join(", "))
    }
}

/// Ordering of one time point relative to another.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointRelation {
    Before,
    Equal,
    After,
}

impl PointRelation {
    pub const ALL: [PointRelation; 3] = [PointRelation::Before, PointRelation::Equal, PointRelation::After];
}

/// The five interval relations of the TB-Dense label set.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum IntervalRelation {
    Before,
    After,
    Include,
    IsIncluded,
    Simultaneous,
}

impl IntervalRelation {
    /// Name under the `tbdense` / `udst` presets.
    pub fn name(self) -> &'static str {
        match self {
            IntervalRelation::Before => "Before",
            IntervalRelation::After => "After",
            IntervalRelation::Include => "Include",
            IntervalRelation::IsIncluded => "Is_Included",
            IntervalRelation::Simultaneous => "Simultaneous",
        }
    }
}

/// Maps the (start, end) point comparisons of e1 against e2 to an interval
/// relation.
pub fn interval_relation_from_points(start: PointRelation, end: PointRelation) -> IntervalRelation {
    use IntervalRelation as I;
    use PointRelation as P;
    match (start, end) {
        (P::Before, P::Before) => I::Before,
        (P::Before, P::Equal) => I::Include,
        (P::Before, P::After) => I::Include,
        (P::Equal, P::Before) => I::IsIncluded,
        (P::Equal, P::Equal) => I::Simultaneous,
        (P::Equal, P::After) => I::Include,
        (P::After, P::Before) => I::IsIncluded,
        (P::After, P::Equal) => I::IsIncluded,
        (P::After, P::After) => I::After,
    }
}
