//! Bucketing tensor names into transformer layers.

use std::collections::BTreeMap;
use std::fmt;

use regex::Regex;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};

/// Layer bucket. Numeric layers sort numerically and before the named
/// buckets, which keep the order embedding, head, other.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LayerKey {
    Index(u64),
    Embedding,
    Head,
    Other,
}

impl LayerKey {
    pub fn is_numeric(&self) -> bool {
        matches!(self, LayerKey::Index(_))
    }
}

impl fmt::Display for LayerKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerKey::Index(i) => write!(f, "{i}"),
            LayerKey::Embedding => f.write_str("embedding"),
            LayerKey::Head => f.write_str("head"),
            LayerKey::Other => f.write_str("other"),
        }
    }
}

impl Serialize for LayerKey {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// How a tensor name maps to a layer index.
#[derive(Debug, Clone, Default)]
pub enum LayerRule {
    /// The integer segment right after a segment literally named `layers`
    /// (`model.layers.12.mlp.up_proj.weight` → 12).
    #[default]
    LayersSegment,
    /// A regex whose first capture group is the layer index.
    Pattern(Regex),
}

impl LayerRule {
    pub fn pattern(re: &str) -> Result<Self> {
        let re = Regex::new(re).map_err(|e| Error::InvalidPattern(e.to_string()))?;
        if re.captures_len() < 2 {
            return Err(Error::InvalidPattern(format!(
                "{re} has no capture group for the layer index"
            )));
        }
        Ok(LayerRule::Pattern(re))
    }

    fn layer_index(&self, name: &str) -> Option<u64> {
        match self {
            LayerRule::LayersSegment => {
                let mut segs = name.split('.');
                while let Some(s) = segs.next() {
                    if s == "layers" {
                        if let Some(Ok(i)) = segs.clone().next().map(str::parse::<u64>) {
                            return Some(i);
                        }
                    }
                }
                None
            }
            LayerRule::Pattern(re) => re
                .captures(name)
                .and_then(|c| c.get(1))
                .and_then(|m| m.as_str().parse().ok()),
        }
    }

    pub fn classify(&self, name: &str) -> LayerKey {
        if let Some(i) = self.layer_index(name) {
            return LayerKey::Index(i);
        }
        let lower = name.to_ascii_lowercase();
        let segs: Vec<&str> = lower.split('.').collect();
        if lower.contains("embed") || segs.iter().any(|s| matches!(*s, "wte" | "wpe")) {
            LayerKey::Embedding
        } else if lower.contains("lm_head")
            || matches!(segs.first(), Some(&"head") | Some(&"output"))
        {
            LayerKey::Head
        } else {
            LayerKey::Other
        }
    }
}

/// Layer key → tensor names (names in canonical order within each layer).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerGrouping {
    groups: BTreeMap<LayerKey, Vec<String>>,
}

impl LayerGrouping {
    pub fn new<'a>(names: impl IntoIterator<Item = &'a str>, rule: &LayerRule) -> Self {
        let mut groups: BTreeMap<LayerKey, Vec<String>> = BTreeMap::new();
        for name in names {
            groups
                .entry(rule.classify(name))
                .or_default()
                .push(name.to_owned());
        }
        for v in groups.values_mut() {
            v.sort_unstable();
        }
        Self { groups }
    }

    /// Builds a grouping from explicit buckets. Empty buckets are kept so
    /// that downstream checks can reject them.
    pub fn from_groups(groups: BTreeMap<LayerKey, Vec<String>>) -> Self {
        let groups = groups
            .into_iter()
            .map(|(k, mut v)| {
                v.sort_unstable();
                (k, v)
            })
            .collect();
        Self { groups }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&LayerKey, &[String])> {
        self.groups.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn keys(&self) -> impl Iterator<Item = &LayerKey> {
        self.groups.keys()
    }

    pub fn get(&self, key: &LayerKey) -> Option<&[String]> {
        self.groups.get(key).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}
