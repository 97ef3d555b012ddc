//! The fourteen-landmark naming schema.
//!
//! Only part of the table is pinned down by published material: Skull,
//! the humeral heads, the scapulae, elbows at 6/7, wrists at 8/9, T1 at 10
//! and the right hemidiaphragm at 12. Indices 11 (Sternum) and 14 (T12) and
//! every variant list beyond the Skull one are assumptions of this crate.
//! A different table can be supplied as JSON through [`LandmarkSchema::from_json`].

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of annotated landmarks per volume.
pub const LANDMARK_COUNT: usize = 14;

/// Which side of the body a landmark belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Right,
    Left,
    Midline,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LandmarkName {
    pub index: u8,
    pub canonical: String,
    /// Alternative names; always contains `canonical`.
    pub variants: Vec<String>,
    pub side: Side,
}

impl LandmarkName {
    /// Snake-case identifier used on the command line, e.g. `right_scapula`.
    pub fn key(&self) -> String {
        self.canonical.split_whitespace().map(str::to_ascii_lowercase).collect::<Vec<_>>().join("_")
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SchemaError {
    #[error("schema must list exactly {LANDMARK_COUNT} landmarks, found {0}")]
    Cardinality(usize),
    #[error("landmark indices must be exactly 1..=14 (offending index {0})")]
    Indices(u8),
    #[error("landmark {index} has no variant equal to its canonical name {canonical:?}")]
    CanonicalMissing { index: u8, canonical: String },
    #[error("variant {name:?} is registered for both landmark {first} and {second}")]
    AmbiguousVariant { name: String, first: u8, second: u8 },
    #[error("variant {0:?} contains a reserved character")]
    ReservedCharacter(String),
    #[error("invalid schema document: {0}")]
    Json(String),
}

/// Names and variants for landmarks 1..=14 with case-insensitive lookup.
#[derive(Debug, Clone)]
pub struct LandmarkSchema {
    names: Vec<LandmarkName>,
    lookup: HashMap<String, u8>,
}

const STANDARD: [(u8, &str, Side, &[&str]); LANDMARK_COUNT] = [
    (1, "Skull", Side::Midline, &["Cranium", "Cranial vault", "Calvarium"]),
    (2, "Right Humeral Head", Side::Right, &["Right Humerus Head", "Head of Right Humerus", "Right Proximal Humerus"]),
    (3, "Left Humeral Head", Side::Left, &["Left Humerus Head", "Head of Left Humerus", "Left Proximal Humerus"]),
    (4, "Right Scapula", Side::Right, &["Right Shoulder Blade", "Right Scapular Body"]),
    (5, "Left Scapula", Side::Left, &["Left Shoulder Blade", "Left Scapular Body"]),
    (6, "Right Elbow", Side::Right, &["Right Elbow Joint", "Right Cubital Joint"]),
    (7, "Left Elbow", Side::Left, &["Left Elbow Joint", "Left Cubital Joint"]),
    (8, "Right Wrist", Side::Right, &["Right Wrist Joint", "Right Radiocarpal Joint"]),
    (9, "Left Wrist", Side::Left, &["Left Wrist Joint", "Left Radiocarpal Joint"]),
    (10, "T1", Side::Midline, &["T1 Vertebra", "First Thoracic Vertebra"]),
    (11, "Sternum", Side::Midline, &["Breastbone", "Sternal Body"]),
    (12, "Right Hemidiaphragm", Side::Right, &["Right Diaphragm", "Right Diaphragmatic Dome"]),
    (13, "Left Hemidiaphragm", Side::Left, &["Left Diaphragm", "Left Diaphragmatic Dome"]),
    (14, "T12", Side::Midline, &["T12 Vertebra", "Twelfth Thoracic Vertebra"]),
];

fn normalize(name: &str) -> String {
    name.split_whitespace().map(str::to_ascii_lowercase).collect::<Vec<_>>().join(" ")
}

impl LandmarkSchema {
    /// The default table shipped with the crate.
    pub fn standard() -> Self {
        let names = STANDARD
            .iter()
            .map(|&(index, canonical, side, extra)| LandmarkName {
                index,
                canonical: canonical.to_string(),
                variants: std::iter::once(canonical).chain(extra.iter().copied()).map(String::from).collect(),
                side,
            })
            .collect();
        Self::new(names).expect("built-in schema is valid")
    }

    pub fn new(mut names: Vec<LandmarkName>) -> Result<Self, SchemaError> {
        if names.len() != LANDMARK_COUNT {
            return Err(SchemaError::Cardinality(names.len()));
        }
        names.sort_by_key(|n| n.index);
        for (expected, name) in (1u8..).zip(&names) {
            if name.index != expected {
                return Err(SchemaError::Indices(name.index));
            }
            if !name.variants.iter().any(|v| v == &name.canonical) {
                return Err(SchemaError::CanonicalMissing { index: name.index, canonical: name.canonical.clone() });
            }
        }
        let mut lookup = HashMap::new();
        for name in &names {
            for variant in &name.variants {
                if variant.trim().is_empty() || variant.contains([',', ':', '[', ']', '<', '>', '&', '"']) {
                    return Err(SchemaError::ReservedCharacter(variant.clone()));
                }
                if let Some(&first) = lookup.get(&normalize(variant)) {
                    if first != name.index {
                        return Err(SchemaError::AmbiguousVariant { name: variant.clone(), first, second: name.index });
                    }
                }
                lookup.insert(normalize(variant), name.index);
            }
        }
        Ok(Self { names, lookup })
    }

    pub fn from_json(text: &str) -> Result<Self, SchemaError> {
        let names: Vec<LandmarkName> = serde_json::from_str(text).map_err(|e| SchemaError::Json(e.to_string()))?;
        Self::new(names)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.names).expect("schema serializes")
    }

    pub fn names(&self) -> &[LandmarkName] {
        &self.names
    }

    /// Entry for index 1..=14.
    pub fn get(&self, index: u8) -> Option<&LandmarkName> {
        index.checked_sub(1).and_then(|i| self.names.get(usize::from(i)))
    }

    pub fn canonical(&self, index: u8) -> Option<&str> {
        self.get(index).map(|n| n.canonical.as_str())
    }

    /// Resolve any registered variant, case- and whitespace-insensitively.
    pub fn resolve(&self, name: &str) -> Option<u8> {
        self.lookup.get(&normalize(name)).copied()
    }

    /// Resolve a command-line key (`right_scapula`) or any variant name.
    pub fn resolve_key(&self, key: &str) -> Option<u8> {
        self.resolve(&key.replace(['_', '-'], " "))
            .or_else(|| key.parse::<u8>().ok().filter(|i| self.get(*i).is_some()))
    }
}

impl Default for LandmarkSchema {
    fn default() -> Self {
        Self::standard()
    }
}
