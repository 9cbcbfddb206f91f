use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensor_geometry::PanopticLabel;

/// Semantic id translation; `None` sends a class to `ignore_id`. Targets in
/// `things` keep instance ids, others are zeroed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRemap {
    pub mapping: BTreeMap<u16, Option<u16>>,
    #[serde(default)]
    pub things: BTreeSet<u16>,
    #[serde(default)]
    pub ignore_id: u16,
}

impl LabelRemap {
    pub fn identity(ids: impl IntoIterator<Item = u16>, things: BTreeSet<u16>) -> Self {
        Self {
            mapping: ids.into_iter().map(|i| (i, Some(i))).collect(),
            things,
            ignore_id: 0,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    fn apply(&self, l: &PanopticLabel) -> Option<PanopticLabel> {
        if l.semantic_id == self.ignore_id && !self.mapping.contains_key(&l.semantic_id) {
            return Some(PanopticLabel::stuff(self.ignore_id));
        }
        match self.mapping.get(&l.semantic_id)? {
            None => Some(PanopticLabel::stuff(self.ignore_id)),
            Some(t) if self.things.contains(t) => Some(PanopticLabel::thing(*t, l.instance_id)),
            Some(t) => Some(PanopticLabel::stuff(*t)),
        }
    }
}

/// Applies `remap` to every label. Labels already at the ignore id pass
/// through unless mapped explicitly.
pub fn remap_labels(labels: &[PanopticLabel], remap: &LabelRemap) -> Result<Vec<PanopticLabel>> {
    let mut missing = BTreeSet::new();
    let out: Vec<PanopticLabel> = labels
        .iter()
        .map(|l| {
            remap.apply(l).unwrap_or_else(|| {
                missing.insert(l.semantic_id);
                *l
            })
        })
        .collect();
    if missing.is_empty() {
        Ok(out)
    } else {
        Err(Error::UnmappedLabel(missing.into_iter().collect()))
    }
}
