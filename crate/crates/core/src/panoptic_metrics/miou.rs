use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

/// Per-class TP/FP/FN over semantic ids, summable across scenes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SemanticConfusion {
    pub classes: BTreeMap<u16, ConfusionCounts>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouReport {
    pub per_class: BTreeMap<u16, f64>,
    /// Mean over classes present in the ground truth; `None` if there are none.
    pub miou: Option<f64>,
}

impl SemanticConfusion {
    /// Points whose ground truth is `ignore_id` are skipped; an ignore
    /// prediction counts only as a miss.
    pub fn add(&mut self, pred: &[u16], gt: &[u16], ignore_id: u16) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} predictions vs {} ground-truth labels",
                pred.len(),
                gt.len()
            )));
        }
        for (&p, &g) in pred.iter().zip(gt) {
            if g == ignore_id {
                continue;
            }
            if p == g {
                self.classes.entry(g).or_default().tp += 1;
                continue;
            }
            self.classes.entry(g).or_default().fn_ += 1;
            if p != ignore_id {
                self.classes.entry(p).or_default().fp += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &SemanticConfusion) {
        for (k, c) in &other.classes {
            let e = self.classes.entry(*k).or_default();
            e.tp += c.tp;
            e.fp += c.fp;
            e.fn_ += c.fn_;
        }
    }

    pub fn report(&self) -> IouReport {
        let per_class: BTreeMap<u16, f64> = self
            .classes
            .iter()
            .map(|(k, c)| (*k, c.tp as f64 / (c.tp + c.fp + c.fn_) as f64))
            .collect();
        let present: Vec<f64> = self
            .classes
            .iter()
            .filter(|(_, c)| c.tp + c.fn_ > 0)
            .map(|(k, _)| per_class[k])
            .collect();
        let miou = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
        IouReport { per_class, miou }
    }
}

pub fn mean_iou(pred: &[u16], gt: &[u16], ignore_id: u16) -> Result<IouReport> {
    let mut c = SemanticConfusion::default();
    c.add(pred, gt, ignore_id)?;
    Ok(c.report())
}
