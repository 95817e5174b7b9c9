//! Questionnaire definitions, response matrices, scoring and human-data
//! import.
//!
//! Instruments are loaded from TOML or JSON files:
//!
//! ```toml
//! id = "H60"
//! name = "Personality inventory, 60 items"
//! instructions = "..."
//!
//! [scale]
//! min = 1
//! max = 5
//! labels = ["strongly disagree", "disagree", "neutral", "agree", "strongly agree"]
//!
//! [[items]]
//! id = "h1"
//! text = "..."
//! reverse = true
//!
//! [dimensions]
//! "Openness" = ["h1", "h7"]
//! ```

mod import;
mod responses;

pub use import::{import_human_csv, import_human_reader, Exclusion, ExclusionReason, HumanImport, HumanImportFilter};
pub use responses::{composite_scores, reverse_score, CompositeScores, ResponseMatrix, RowMeta};

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub reverse: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub items: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scale {
    pub min: i32,
    pub max: i32,
    /// Either one label per scale point or just the two end anchors.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct InstrumentFile {
    id: String,
    #[serde(default)]
    name: String,
    #[serde(default)]
    instructions: String,
    scale: Scale,
    items: Vec<Item>,
    dimensions: IndexMap<String, Vec<String>>,
}

/// A validated questionnaire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstrumentFile", into = "InstrumentFile")]
pub struct Instrument {
    pub id: String,
    pub name: String,
    pub instructions: String,
    pub scale: Scale,
    pub items: Vec<Item>,
    pub dimensions: Vec<Dimension>,
    index: HashMap<String, usize>,
    dimension_of: Vec<usize>,
}

impl TryFrom<InstrumentFile> for Instrument {
    type Error = Error;

    fn try_from(f: InstrumentFile) -> Result<Self> {
        let dims = f.dimensions.into_iter().map(|(name, items)| Dimension { name, items }).collect();
        Instrument::new(f.id, f.name, f.instructions, f.scale, f.items, dims)
    }
}

impl From<Instrument> for InstrumentFile {
    fn from(i: Instrument) -> Self {
        InstrumentFile {
            id: i.id,
            name: i.name,
            instructions: i.instructions,
            scale: i.scale,
            items: i.items,
            dimensions: i.dimensions.into_iter().map(|d| (d.name, d.items)).collect(),
        }
    }
}

impl Instrument {
    pub fn new(
        id: String,
        name: String,
        instructions: String,
        scale: Scale,
        items: Vec<Item>,
        dimensions: Vec<Dimension>,
    ) -> Result<Self> {
        if scale.min >= scale.max {
            return Err(Error::invalid(format!("{id}: scale min {} must be below max {}", scale.min, scale.max)));
        }
        let points = (scale.max - scale.min + 1) as usize;
        if !scale.labels.is_empty() && scale.labels.len() != points && scale.labels.len() != 2 {
            return Err(Error::invalid(format!(
                "{id}: {} scale labels for a {points}-point scale (give every point or the two anchors)",
                scale.labels.len()
            )));
        }
        if items.is_empty() {
            return Err(Error::invalid(format!("{id}: no items")));
        }
        let mut index = HashMap::new();
        for (k, item) in items.iter().enumerate() {
            if item.id.trim().is_empty() {
                return Err(Error::invalid(format!("{id}: item {k} has an empty id")));
            }
            if index.insert(item.id.clone(), k).is_some() {
                return Err(Error::invalid(format!("{id}: duplicate item id {}", item.id)));
            }
        }
        let mut dimension_of = vec![usize::MAX; items.len()];
        let mut seen_dims = BTreeSet::new();
        for (d, dim) in dimensions.iter().enumerate() {
            if !seen_dims.insert(dim.name.as_str()) {
                return Err(Error::invalid(format!("{id}: duplicate dimension {}", dim.name)));
            }
            if dim.items.is_empty() {
                return Err(Error::invalid(format!("{id}: dimension {} has no items", dim.name)));
            }
            for item_id in &dim.items {
                let Some(&k) = index.get(item_id) else {
                    return Err(Error::invalid(format!("{id}: dimension {} lists unknown item {item_id}", dim.name)));
                };
                if dimension_of[k] != usize::MAX {
                    return Err(Error::invalid(format!(
                        "{id}: item {item_id} appears in more than one dimension ({} and {})",
                        dimensions[dimension_of[k]].name, dim.name
                    )));
                }
                dimension_of[k] = d;
            }
        }
        if let Some(k) = dimension_of.iter().position(|&d| d == usize::MAX) {
            return Err(Error::invalid(format!("{id}: item {} is not assigned to a dimension", items[k].id)));
        }
        Ok(Self { id, name, instructions, scale, items, dimensions, index, dimension_of })
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let file: InstrumentFile = toml::from_str(s).map_err(|e| Error::invalid(e.to_string()))?;
        Instrument::try_from(file)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&InstrumentFile::from(self.clone())).expect("instrument serializes to TOML")
    }

    pub fn scale_min(&self) -> i32 {
        self.scale.min
    }

    pub fn scale_max(&self) -> i32 {
        self.scale.max
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn item_ids(&self) -> Vec<String> {
        self.items.iter().map(|i| i.id.clone()).collect()
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn reverse_coded(&self) -> BTreeSet<&str> {
        self.items.iter().filter(|i| i.reverse).map(|i| i.id.as_str()).collect()
    }

    pub fn dimension(&self, name: &str) -> Option<&Dimension> {
        self.dimensions.iter().find(|d| d.name == name)
    }

    /// Item positions of a dimension, in the dimension's listed order.
    pub fn dimension_indices(&self, d: usize) -> Vec<usize> {
        self.dimensions[d].items.iter().map(|id| self.index[id]).collect()
    }

    /// Dimension index of every item, in item order.
    pub fn assignment(&self) -> &[usize] {
        &self.dimension_of
    }

    pub fn in_range(&self, value: i32) -> bool {
        (self.scale.min..=self.scale.max).contains(&value)
    }
}

/// Reads an instrument definition; `.json` files are parsed as JSON,
/// everything else as TOML.
pub fn load_instrument(path: &Path) -> Result<Instrument> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Load { path: path.into(), message: e.to_string() })?;
    let parsed = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        serde_json::from_str::<InstrumentFile>(&text)
            .map_err(|e| Error::invalid(e.to_string()))
            .and_then(Instrument::try_from)
    } else {
        Instrument::from_toml_str(&text)
    };
    parsed.map_err(|e| Error::Load { path: path.into(), message: e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn repo_instrument(name: &str) -> Instrument {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../instruments").join(name);
        load_instrument(&path).unwrap()
    }

    #[test]
    fn shipped_h60_skeleton() {
        let h60 = repo_instrument("h60.toml");
        assert_eq!(h60.len(), 60);
        assert_eq!(h60.dimensions.len(), 6);
        assert!(h60.dimensions.iter().all(|d| d.items.len() == 10));
        assert_eq!((h60.scale_min(), h60.scale_max()), (1, 5));
    }

    #[test]
    fn shipped_dshs_skeleton() {
        let dshs = repo_instrument("dshs.toml");
        let sizes: Vec<usize> = dshs.dimensions.iter().map(|d| d.items.len()).collect();
        assert_eq!(sizes, vec![18, 9, 8, 7]);
        assert_eq!((dshs.scale_min(), dshs.scale_max()), (1, 6));
    }

    const SMALL: &str = r#"
id = "T"
[scale]
min = 1
max = 5
[[items]]
id = "a"
[[items]]
id = "b"
reverse = true
[[items]]
id = "c"
[dimensions]
"Second" = ["b", "c"]
"First" = ["a"]
"#;

    #[test]
    fn dimension_order_follows_file() {
        let inst = Instrument::from_toml_str(SMALL).unwrap();
        let names: Vec<&str> = inst.dimensions.iter().map(|d| d.name.as_str()).collect();
        assert_eq!(names, vec!["Second", "First"]);
        assert_eq!(inst.assignment(), &[1, 0, 0]);
        assert_eq!(inst.reverse_coded().into_iter().collect::<Vec<_>>(), vec!["b"]);
        let again = Instrument::from_toml_str(&inst.to_toml_string()).unwrap();
        assert_eq!(again, inst);
    }

    #[test]
    fn item_in_two_dimensions_is_rejected() {
        let bad = SMALL.replace(r#""First" = ["a"]"#, r#""First" = ["a", "b"]"#);
        let err = Instrument::from_toml_str(&bad).unwrap_err().to_string();
        assert!(err.contains("more than one dimension"), "{err}");
    }

    #[test]
    fn schema_violations() {
        let dup = SMALL.replace("id = \"c\"", "id = \"a\"");
        assert!(Instrument::from_toml_str(&dup).unwrap_err().to_string().contains("duplicate"));
        let scale = SMALL.replace("max = 5", "max = 1");
        assert!(Instrument::from_toml_str(&scale).is_err());
        let unassigned = SMALL.replace(r#""First" = ["a"]"#, "");
        assert!(Instrument::from_toml_str(&unassigned).unwrap_err().to_string().contains("not assigned"));
        let unknown = SMALL.replace(r#"["a"]"#, r#"["zz"]"#);
        assert!(Instrument::from_toml_str(&unknown).unwrap_err().to_string().contains("unknown item"));
    }

    #[test]
    fn json_and_missing_file() {
        let inst = Instrument::from_toml_str(SMALL).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.json");
        std::fs::write(&path, serde_json::to_string(&inst).unwrap()).unwrap();
        assert_eq!(load_instrument(&path).unwrap(), inst);
        assert!(matches!(load_instrument(&dir.path().join("nope.toml")), Err(Error::Load { .. })));
    }
}
