//! Panoptic quality (PQ, SQ, RQ) with thing/stuff splits, semantic IoU, and
//! label remapping between datasets.

mod miou;
mod remap;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use miou::{mean_iou, IouReport, SemanticConfusion};
pub use remap::{remap_labels, LabelRemap};

use crate::error::{Error, Result};
use crate::sensor_geometry::PanopticLabel;

/// Matched minimum IoU (strict).
pub const MATCH_IOU: f64 = 0.5;

/// Aligned per-point predictions and ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PanopticPrediction {
    pub pred: Vec<PanopticLabel>,
    pub gt: Vec<PanopticLabel>,
    pub ignore_id: u16,
}

impl PanopticPrediction {
    pub fn new(pred: Vec<PanopticLabel>, gt: Vec<PanopticLabel>, ignore_id: u16) -> Result<Self> {
        if pred.len() != gt.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} predictions vs {} ground-truth labels",
                pred.len(),
                gt.len()
            )));
        }
        Ok(Self { pred, gt, ignore_id })
    }
}

type SegmentKey = (u16, u16);

/// Segment identity: `(class, instance)` for things, `(class, 0)` for stuff.
pub(crate) fn segment_key(l: &PanopticLabel) -> SegmentKey {
    if l.is_thing {
        (l.semantic_id, l.instance_id)
    } else {
        (l.semantic_id, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub iou_sum: f64,
    pub is_thing: bool,
}

/// Per-class matching counts, summable across scenes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PanopticStats {
    pub classes: BTreeMap<u16, ClassCounts>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quality {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
}

impl Quality {
    pub fn of(c: &ClassCounts) -> Self {
        if c.tp == 0 {
            return Quality {
                pq: 0.0,
                sq: 0.0,
                rq: 0.0,
            };
        }
        let tp = c.tp as f64;
        let sq = c.iou_sum / tp;
        let rq = tp / (tp + 0.5 * c.fp as f64 + 0.5 * c.fn_ as f64);
        Quality { pq: sq * rq, sq, rq }
    }

    fn mean<'a>(qs: impl Iterator<Item = &'a Quality>) -> Option<Quality> {
        let mut n = 0usize;
        let (mut pq, mut sq, mut rq) = (0.0, 0.0, 0.0);
        for q in qs {
            n += 1;
            pq += q.pq;
            sq += q.sq;
            rq += q.rq;
        }
        (n > 0).then(|| {
            let n = n as f64;
            Quality {
                pq: pq / n,
                sq: sq / n,
                rq: rq / n,
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassQuality {
    #[serde(flatten)]
    pub quality: Quality,
    pub is_thing: bool,
}

/// Aggregates are unweighted class means; a split with no classes is `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanopticReport {
    pub all: Option<Quality>,
    pub things: Option<Quality>,
    pub stuff: Option<Quality>,
    pub per_class: BTreeMap<u16, ClassQuality>,
}

impl PanopticStats {
    pub fn merge(&mut self, other: &PanopticStats) {
        for (k, c) in &other.classes {
            let e = self.classes.entry(*k).or_insert(ClassCounts {
                is_thing: c.is_thing,
                ..Default::default()
            });
            e.tp += c.tp;
            e.fp += c.fp;
            e.fn_ += c.fn_;
            e.iou_sum += c.iou_sum;
            e.is_thing |= c.is_thing;
        }
    }

    pub fn report(&self) -> PanopticReport {
        let per_class: BTreeMap<u16, ClassQuality> = self
            .classes
            .iter()
            .map(|(k, c)| {
                (
                    *k,
                    ClassQuality {
                        quality: Quality::of(c),
                        is_thing: c.is_thing,
                    },
                )
            })
            .collect();
        let pick = |th: Option<bool>| {
            Quality::mean(
                per_class
                    .values()
                    .filter(move |q| th.is_none_or(|t| q.is_thing == t))
                    .map(|q| &q.quality),
            )
        };
        PanopticReport {
            all: pick(None),
            things: pick(Some(true)),
            stuff: pick(Some(false)),
            per_class,
        }
    }
}

/// Matches segments per class at IoU > 0.5. Ground-truth ignore points are
/// removed from both sides; predicted ignore points form no segment.
pub fn panoptic_stats(p: &PanopticPrediction) -> Result<PanopticStats> {
    if p.pred.len() != p.gt.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} ground-truth labels",
            p.pred.len(),
            p.gt.len()
        )));
    }
    let mut gt_area: BTreeMap<(u16, u16), u64> = BTreeMap::new();
    let mut pred_area: BTreeMap<(u16, u16), u64> = BTreeMap::new();
    let mut inter: BTreeMap<(SegmentKey, SegmentKey), u64> = BTreeMap::new();
    let mut thing: BTreeMap<u16, bool> = BTreeMap::new();
    for (pr, g) in p.pred.iter().zip(&p.gt) {
        if g.semantic_id == p.ignore_id {
            continue;
        }
        let gk = segment_key(g);
        *gt_area.entry(gk).or_insert(0) += 1;
        *thing.entry(g.semantic_id).or_insert(false) |= g.is_thing;
        if pr.semantic_id == p.ignore_id {
            continue;
        }
        let pk = segment_key(pr);
        *pred_area.entry(pk).or_insert(0) += 1;
        thing.entry(pr.semantic_id).or_insert(pr.is_thing);
        if gk.0 == pk.0 {
            *inter.entry((gk, pk)).or_insert(0) += 1;
        }
    }

    let mut stats = PanopticStats::default();
    for (&class, &is_thing) in &thing {
        stats.classes.insert(
            class,
            ClassCounts {
                is_thing,
                ..Default::default()
            },
        );
    }
    let mut gt_matched: BTreeMap<(u16, u16), bool> = BTreeMap::new();
    let mut pred_matched: BTreeMap<(u16, u16), bool> = BTreeMap::new();
    let mut ious: BTreeMap<u16, Vec<f64>> = BTreeMap::new();
    for (&(gk, pk), &i) in &inter {
        let union = gt_area[&gk] + pred_area[&pk] - i;
        let iou = i as f64 / union as f64;
        if iou > MATCH_IOU {
            ious.entry(gk.0).or_default().push(iou);
            gt_matched.insert(gk, true);
            pred_matched.insert(pk, true);
        }
    }
    // summed in value order so instance ids cannot change the result
    for (class, mut v) in ious {
        v.sort_by(f64::total_cmp);
        let c = stats.classes.get_mut(&class).expect("class registered");
        c.tp = v.len() as u64;
        c.iou_sum = v.iter().sum();
    }
    for gk in gt_area.keys() {
        if !gt_matched.contains_key(gk) {
            stats.classes.get_mut(&gk.0).expect("class registered").fn_ += 1;
        }
    }
    for pk in pred_area.keys() {
        if !pred_matched.contains_key(pk) {
            stats.classes.get_mut(&pk.0).expect("class registered").fp += 1;
        }
    }
    Ok(stats)
}

pub fn panoptic_quality(p: &PanopticPrediction) -> Result<PanopticReport> {
    Ok(panoptic_stats(p)?.report())
}
