use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeGroup {
    /// Tied to who the person is: clothing colors, build, hair.
    IdRelevant,
    /// Transient conditions: pose, motion, occlusion.
    IdIrrelevant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    pub arity: u32,
    pub group: AttributeGroup,
}

/// Ordered list of categorical attributes. Validated on construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema", into = "RawSchema")]
pub struct AttributeSchema {
    attributes: Vec<AttributeSpec>,
}

#[derive(Serialize, Deserialize)]
struct RawSchema {
    attributes: Vec<AttributeSpec>,
}

impl TryFrom<RawSchema> for AttributeSchema {
    type Error = Error;

    fn try_from(raw: RawSchema) -> Result<Self> {
        AttributeSchema::new(raw.attributes)
    }
}

impl From<AttributeSchema> for RawSchema {
    fn from(s: AttributeSchema) -> Self {
        RawSchema {
            attributes: s.attributes,
        }
    }
}

impl AttributeSchema {
    pub fn new(attributes: Vec<AttributeSpec>) -> Result<Self> {
        let mut seen = HashSet::new();
        for a in &attributes {
            if !seen.insert(a.name.as_str()) {
                return Err(Error::Config(format!("duplicate attribute `{}`", a.name)));
            }
            if a.arity < 2 {
                return Err(Error::Config(format!(
                    "attribute `{}` has arity {}, need at least 2",
                    a.name, a.arity
                )));
            }
            if a.name.is_empty() || a.name == "tracklet_id" || a.name.contains(',') {
                return Err(Error::Config(format!("invalid attribute name `{}`", a.name)));
            }
        }
        for group in [AttributeGroup::IdRelevant, AttributeGroup::IdIrrelevant] {
            if !attributes.iter().any(|a| a.group == group) {
                return Err(Error::Config(format!("no attribute in group {group:?}")));
            }
        }
        Ok(Self { attributes })
    }

    pub fn attributes(&self) -> &[AttributeSpec] {
        &self.attributes
    }

    pub fn group(&self, group: AttributeGroup) -> impl Iterator<Item = &AttributeSpec> {
        self.attributes.iter().filter(move |a| a.group == group)
    }

    /// Width of the one-vs-all binarized target vector for a group.
    pub fn binary_width(&self, group: AttributeGroup) -> usize {
        self.group(group).map(|a| a.arity as usize).sum()
    }

    /// One-hot encodes every attribute of `group`, concatenated in schema order.
    pub fn encode(&self, labels: &BTreeMap<String, u32>, group: AttributeGroup) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(self.binary_width(group));
        for a in self.group(group) {
            let v = *labels
                .get(&a.name)
                .ok_or_else(|| Error::Config(format!("missing attribute `{}`", a.name)))?;
            if v >= a.arity {
                return Err(Error::Config(format!(
                    "attribute `{}` value {v} out of range (arity {})",
                    a.name, a.arity
                )));
            }
            out.extend((0..a.arity).map(|i| if i == v { 1.0 } else { 0.0 }));
        }
        Ok(out)
    }

    /// Checks that a label map covers exactly this schema with in-range values.
    pub fn validate_labels(&self, labels: &BTreeMap<String, u32>) -> Result<()> {
        for a in &self.attributes {
            match labels.get(&a.name) {
                None => return Err(Error::Config(format!("missing attribute `{}`", a.name))),
                Some(&v) if v >= a.arity => {
                    return Err(Error::Config(format!(
                        "attribute `{}` value {v} out of range (arity {})",
                        a.name, a.arity
                    )))
                }
                _ => {}
            }
        }
        if labels.len() != self.attributes.len() {
            return Err(Error::Config("label map has attributes outside the schema".into()));
        }
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// The attribute set rendered by the synthetic generator.
    pub fn synthetic_default() -> Self {
        use AttributeGroup::*;
        let spec = |name: &str, arity, group| AttributeSpec {
            name: name.to_string(),
            arity,
            group,
        };
        Self::new(vec![
            spec("upper_color", 6, IdRelevant),
            spec("lower_color", 6, IdRelevant),
            spec("build", 2, IdRelevant),
            spec("hair", 2, IdRelevant),
            spec("pose", 3, IdIrrelevant),
            spec("motion_blur", 3, IdIrrelevant),
            spec("occlusion", 2, IdIrrelevant),
        ])
        .expect("built-in schema is valid")
    }
}
