//! Keyboard layouts and point-to-key mapping.
//!
//! A layout document is JSON:
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "name": "qwerty_en",
//!   "aspect": 0.3,
//!   "keys": [ { "char": "q", "cx": 0.05, "cy": 0.05, "w": 0.1, "h": 0.1 } ]
//! }
//! ```
//!
//! Coordinates are abstract units: the board spans `[0, 1] x [0, aspect]`.
//! Key order defines the character index used by one-hot features and by
//! model output columns.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const LAYOUT_SCHEMA_VERSION: u32 = 1;

const BOUNDS_EPS: f64 = 1e-9;

/// Raw documents shipped with the crate, as `(name, source)`.
pub const BUNDLED_LAYOUTS: &[(&str, &str)] = &[
    ("qwerty_en", include_str!("../layouts/qwerty_en.json")),
    ("devanagari", include_str!("../layouts/devanagari.json")),
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeySpec {
    pub char: String,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutDocument {
    pub schema_version: u32,
    pub name: String,
    pub aspect: f64,
    pub keys: Vec<KeySpec>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Key {
    pub ch: char,
    pub center: Point,
    pub width: f64,
    pub height: f64,
}

/// Validated, immutable layout.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyboardLayout {
    name: String,
    aspect: f64,
    keys: Vec<Key>,
    index: HashMap<char, usize>,
}

impl KeyboardLayout {
    pub fn from_document(doc: &LayoutDocument) -> Result<Self> {
        if doc.schema_version != LAYOUT_SCHEMA_VERSION {
            return Err(CoreError::Schema(format!(
                "unsupported schema_version {}",
                doc.schema_version
            )));
        }
        if doc.name.is_empty() {
            return Err(CoreError::Schema("empty layout name".into()));
        }
        if !(doc.aspect.is_finite() && doc.aspect > 0.0) {
            return Err(CoreError::Schema(format!(
                "aspect {} must be positive",
                doc.aspect
            )));
        }
        if doc.keys.is_empty() {
            return Err(CoreError::Schema("layout has no keys".into()));
        }
        let mut keys = Vec::with_capacity(doc.keys.len());
        let mut index = HashMap::with_capacity(doc.keys.len());
        for spec in &doc.keys {
            let mut chars = spec.char.chars();
            let ch = match (chars.next(), chars.next()) {
                (Some(c), None) => c,
                _ => {
                    return Err(CoreError::Schema(format!(
                        "key char {:?} must be exactly one code point",
                        spec.char
                    )))
                }
            };
            let vals = [spec.cx, spec.cy, spec.w, spec.h];
            if vals.iter().any(|v| !v.is_finite()) || spec.w <= 0.0 || spec.h <= 0.0 {
                return Err(CoreError::Schema(format!(
                    "key {ch:?} has invalid geometry"
                )));
            }
            let inside = spec.cx - spec.w / 2.0 >= -BOUNDS_EPS
                && spec.cx + spec.w / 2.0 <= 1.0 + BOUNDS_EPS
                && spec.cy - spec.h / 2.0 >= -BOUNDS_EPS
                && spec.cy + spec.h / 2.0 <= doc.aspect + BOUNDS_EPS;
            if !inside {
                return Err(CoreError::OutOfBounds { ch });
            }
            if index.insert(ch, keys.len()).is_some() {
                return Err(CoreError::DuplicateChar(ch));
            }
            keys.push(Key {
                ch,
                center: Point::new(spec.cx, spec.cy),
                width: spec.w,
                height: spec.h,
            });
        }
        Ok(Self {
            name: doc.name.clone(),
            aspect: doc.aspect,
            keys,
            index,
        })
    }

    pub fn to_document(&self) -> LayoutDocument {
        LayoutDocument {
            schema_version: LAYOUT_SCHEMA_VERSION,
            name: self.name.clone(),
            aspect: self.aspect,
            keys: self
                .keys
                .iter()
                .map(|k| KeySpec {
                    char: k.ch.to_string(),
                    cx: k.center.x,
                    cy: k.center.y,
                    w: k.width,
                    h: k.height,
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("layout serialises")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn aspect(&self) -> f64 {
        self.aspect
    }

    pub fn keys(&self) -> &[Key] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn chars(&self) -> Vec<char> {
        self.keys.iter().map(|k| k.ch).collect()
    }

    pub fn char_at(&self, index: usize) -> Option<char> {
        self.keys.get(index).map(|k| k.ch)
    }

    pub fn index_of(&self, c: char) -> Result<usize> {
        self.index.get(&c).copied().ok_or(CoreError::UnknownChar(c))
    }

    pub fn contains(&self, c: char) -> bool {
        self.index.contains_key(&c)
    }

    pub fn key(&self, c: char) -> Result<&Key> {
        Ok(&self.keys[self.index_of(c)?])
    }

    pub fn key_center(&self, c: char) -> Result<Point> {
        Ok(self.key(c)?.center)
    }

    /// Index of the key whose center is closest to `p`; ties go to the
    /// lowest index.
    pub fn nearest_key(&self, p: Point) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, k) in self.keys.iter().enumerate() {
            let dx = p.x - k.center.x;
            let dy = p.y - k.center.y;
            let d = dx * dx + dy * dy;
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }

    pub fn nearest_char(&self, p: Point) -> char {
        self.keys[self.nearest_key(p)].ch
    }
}

/// Parses and validates a layout document.
pub fn load_layout(source: &str) -> Result<KeyboardLayout> {
    let doc: LayoutDocument =
        serde_json::from_str(source).map_err(|e| CoreError::Schema(e.to_string()))?;
    KeyboardLayout::from_document(&doc)
}

/// Loads one of the [`BUNDLED_LAYOUTS`] by name.
pub fn bundled_layout(name: &str) -> Option<KeyboardLayout> {
    BUNDLED_LAYOUTS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, src)| load_layout(src).expect("bundled layouts are valid"))
}

/// Named layouts together with the exact source text each was loaded from.
#[derive(Clone, Debug, Default)]
pub struct LayoutRegistry {
    entries: BTreeMap<String, (Arc<KeyboardLayout>, String)>,
}

impl LayoutRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_bundled() -> Self {
        let mut reg = Self::new();
        for (_, src) in BUNDLED_LAYOUTS {
            reg.insert_source(src).expect("bundled layouts are valid");
        }
        reg
    }

    /// Validates `source` and registers it under its own name, replacing
    /// any previous entry.
    pub fn insert_source(&mut self, source: &str) -> Result<Arc<KeyboardLayout>> {
        let layout = Arc::new(load_layout(source)?);
        self.entries.insert(
            layout.name().to_string(),
            (Arc::clone(&layout), source.to_string()),
        );
        Ok(layout)
    }

    pub fn get(&self, name: &str) -> Option<Arc<KeyboardLayout>> {
        self.entries.get(name).map(|(l, _)| Arc::clone(l))
    }

    pub fn source(&self, name: &str) -> Option<&str> {
        self.entries.get(name).map(|(_, s)| s.as_str())
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    /// Resolves a bundled name or reads a layout document from a file path.
    pub fn resolve(&mut self, name_or_path: &str) -> Result<Arc<KeyboardLayout>> {
        if let Some(l) = self.get(name_or_path) {
            return Ok(l);
        }
        let src = std::fs::read_to_string(name_or_path).map_err(|e| {
            CoreError::Config(format!(
                "layout {name_or_path:?} is neither bundled nor readable: {e}"
            ))
        })?;
        self.insert_source(&src)
    }
}
