//! Confusion-matrix evaluation: per-class IoU and Dice, mean IoU over the
//! foreground classes, and a report mirroring a per-chamber results table.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{ClassMap, LabelVolume};

/// `counts[g][p]`: voxels with ground truth `g` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: ClassMap,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: ClassMap) -> Self {
        let c = classes.count();
        ConfusionMatrix {
            classes,
            counts: vec![0; c * c],
        }
    }

    pub fn classes(&self) -> &ClassMap {
        &self.classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes.count() + pred]
    }

    pub fn add(&mut self, gt: usize, pred: usize, n: u64) {
        let c = self.classes.count();
        self.counts[gt * c + pred] += n;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Ground-truth voxels of class `c` (row sum).
    pub fn gt_count(&self, c: usize) -> u64 {
        (0..self.classes.count()).map(|p| self.get(c, p)).sum()
    }

    /// Predicted voxels of class `c` (column sum).
    pub fn pred_count(&self, c: usize) -> u64 {
        (0..self.classes.count()).map(|g| self.get(g, c)).sum()
    }

    fn check_class(&self, c: usize) -> Result<()> {
        let limit = self.classes.count();
        if c >= limit {
            return Err(Error::IndexOutOfRange { index: c, limit });
        }
        Ok(())
    }

    /// (TP, FP, FN) for class `c`.
    pub fn outcomes(&self, c: usize) -> Result<(u64, u64, u64)> {
        self.check_class(c)?;
        let tp = self.get(c, c);
        Ok((tp, self.pred_count(c) - tp, self.gt_count(c) - tp))
    }

    /// TP / (TP + FP + FN); `None` when the class is absent from both volumes.
    pub fn iou(&self, c: usize) -> Result<Option<f64>> {
        let (tp, fp, fn_) = self.outcomes(c)?;
        let denom = tp + fp + fn_;
        Ok((denom > 0).then(|| tp as f64 / denom as f64))
    }

    /// 2TP / (2TP + FP + FN); `None` when the class is absent from both volumes.
    pub fn dice(&self, c: usize) -> Result<Option<f64>> {
        let (tp, fp, fn_) = self.outcomes(c)?;
        let denom = 2 * tp + fp + fn_;
        Ok((denom > 0).then(|| (2 * tp) as f64 / denom as f64))
    }
}

pub fn confusion(pred: &LabelVolume, gt: &LabelVolume) -> Result<ConfusionMatrix> {
    if pred.dims() != gt.dims() {
        return Err(Error::DimsMismatch(format!(
            "prediction {} vs ground truth {}",
            pred.dims(),
            gt.dims()
        )));
    }
    if pred.classes() != gt.classes() {
        return Err(Error::ClassMismatch(
            "prediction and ground truth use different class maps".to_string(),
        ));
    }
    let c = gt.classes().count();
    let mut counts = vec![0u64; c * c];
    for (&g, &p) in gt.labels().iter().zip(pred.labels()) {
        counts[g as usize * c + p as usize] += 1;
    }
    Ok(ConfusionMatrix {
        classes: gt.classes().clone(),
        counts,
    })
}

/// Unweighted mean of the defined foreground IoUs.
pub fn mean_iou(cm: &ConfusionMatrix) -> Result<f64> {
    let values: Vec<f64> = cm
        .classes()
        .foreground()
        .filter_map(|c| cm.iou(c).expect("class in range"))
        .collect();
    if values.is_empty() {
        return Err(Error::NoContent(
            "no foreground class present in prediction or ground truth".to_string(),
        ));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Mean of the defined foreground IoUs weighted by ground-truth voxel count.
/// `None` when no foreground class has ground-truth voxels.
pub fn weighted_mean_iou(cm: &ConfusionMatrix) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0u64;
    for c in cm.classes().foreground() {
        if let Some(iou) = cm.iou(c).expect("class in range") {
            let w = cm.gt_count(c);
            num += iou * w as f64;
            den += w;
        }
    }
    (den > 0).then(|| num / den as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub index: usize,
    pub name: String,
    pub background: bool,
    pub iou: Option<f64>,
    pub dice: Option<f64>,
    pub gt_voxels: u64,
    pub pred_voxels: u64,
    pub true_positives: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<ClassReport>,
    /// Unweighted mean IoU over defined foreground classes.
    pub mean_iou: f64,
    /// Foreground IoUs weighted by ground-truth voxel count.
    pub weighted_mean_iou: Option<f64>,
    /// Foreground classes absent from both volumes, left out of the means.
    pub excluded: Vec<String>,
    pub total_voxels: u64,
}

impl EvalReport {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Result<Self> {
        let bg = cm.classes().background();
        let mut excluded = Vec::new();
        let classes = (0..cm.classes().count())
            .map(|c| {
                let iou = cm.iou(c).expect("class in range");
                if iou.is_none() && c != bg {
                    excluded.push(cm.classes().name(c).to_string());
                }
                ClassReport {
                    index: c,
                    name: cm.classes().name(c).to_string(),
                    background: c == bg,
                    iou,
                    dice: cm.dice(c).expect("class in range"),
                    gt_voxels: cm.gt_count(c),
                    pred_voxels: cm.pred_count(c),
                    true_positives: cm.get(c, c),
                }
            })
            .collect();
        Ok(EvalReport {
            classes,
            mean_iou: mean_iou(cm)?,
            weighted_mean_iou: weighted_mean_iou(cm),
            excluded,
            total_voxels: cm.total(),
        })
    }

    pub fn evaluate(pred: &LabelVolume, gt: &LabelVolume) -> Result<Self> {
        EvalReport::from_confusion(&confusion(pred, gt)?)
    }

    pub fn foreground(&self) -> impl Iterator<Item = &ClassReport> {
        self.classes.iter().filter(|c| !c.background)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

/// IoU table with one row per method, one column per foreground class plus
/// "Full Heart" (the unweighted mean) and its voxel-weighted variant.
pub fn format_table(rows: &[(&str, &EvalReport)]) -> String {
    let Some((_, first)) = rows.first() else {
        return String::new();
    };
    let mut header: Vec<String> = first.foreground().map(|c| c.name.clone()).collect();
    header.push("Full Heart".to_string());
    header.push("Weighted".to_string());
    let label_w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6);
    let col_w: Vec<usize> = header.iter().map(|h| h.len().max(6)).collect();

    let mut out = String::new();
    let _ = write!(out, "{:<label_w$}", "Method");
    for (h, w) in header.iter().zip(&col_w) {
        let _ = write!(out, "  {h:>w$}");
    }
    out.push('\n');
    for (name, report) in rows {
        let _ = write!(out, "{name:<label_w$}");
        let mut values: Vec<String> = report.foreground().map(|c| cell(c.iou)).collect();
        values.push(cell(Some(report.mean_iou)));
        values.push(cell(report.weighted_mean_iou));
        for (v, w) in values.iter().zip(&col_w) {
            let _ = write!(out, "  {v:>w$}");
        }
        out.push('\n');
    }
    out
}
