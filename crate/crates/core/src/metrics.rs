//! Pixel confusion counts and the threshold-sweep evaluation.
//!
//! ODS picks one threshold for the whole dataset from pooled counts, OIS
//! averages each image's best F1, and mIoU averages foreground and
//! background IoU at the ODS threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn add(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    fn ratio(num: u64, den: u64, empty: f64) -> f64 {
        if den == 0 {
            empty
        } else {
            num as f64 / den as f64
        }
    }

    pub fn precision(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fp, 0.0)
    }

    pub fn recall(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fn_, 0.0)
    }

    /// Harmonic mean of precision and recall. An empty ground truth with an
    /// empty prediction scores 1.
    pub fn f1(&self) -> f64 {
        if self.tp + self.fp + self.fn_ == 0 {
            return 1.0;
        }
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn iou_fg(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fp + self.fn_, 1.0)
    }

    pub fn iou_bg(&self) -> f64 {
        Self::ratio(self.tn, self.tn + self.fp + self.fn_, 1.0)
    }

    pub fn miou(&self) -> f64 {
        0.5 * (self.iou_fg() + self.iou_bg())
    }
}

/// Counts for two binary masks of equal length.
pub fn confusion(pred: &[bool], gt: &[bool]) -> Result<Confusion> {
    if pred.len() != gt.len() {
        return Err(Error::Dim { op: "confusion", axis: 0, expected: gt.len(), actual: pred.len() });
    }
    let mut c = Confusion::default();
    for (&p, &t) in pred.iter().zip(gt) {
        match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Interpret a 0/1 valued mask; anything else is an input error.
pub fn mask_from_values(values: &[f64]) -> Result<Vec<bool>> {
    values
        .iter()
        .map(|&v| {
            if v == 1.0 {
                Ok(true)
            } else if v == 0.0 {
                Ok(false)
            } else {
                Err(Error::Input(format!("mask value {v} is not binary")))
            }
        })
        .collect()
}

/// Thresholds `0.01, 0.02, ..., 0.99`.
pub fn default_thresholds() -> Vec<f64> {
    (1..100).map(|k| k as f64 / 100.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageEval {
    pub id: String,
    /// Counts at each threshold of the grid.
    pub counts: Vec<Confusion>,
    pub best_f1: f64,
    pub best_threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ods: f64,
    pub ods_threshold: f64,
    pub ois: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub miou: f64,
    pub thresholds: Vec<f64>,
    /// Dataset-level counts at each threshold.
    pub pooled: Vec<Confusion>,
    pub per_image: Vec<ImageEval>,
}

/// Index of the first maximum.
fn argmax(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// One image: probabilities in `[0, 1]` and its ground-truth mask.
pub struct EvalItem<'a> {
    pub id: String,
    pub prob: &'a [f64],
    pub gt: &'a [bool],
}

/// Sweep `thresholds` over all images. A pixel is positive when its
/// probability is strictly greater than the threshold.
pub fn evaluate(items: &[EvalItem<'_>], thresholds: &[f64]) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::Usage("evaluation needs at least one image".into()));
    }
    if thresholds.is_empty() {
        return Err(Error::Usage("evaluation needs at least one threshold".into()));
    }
    if let Some(t) = thresholds.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        return Err(Error::Usage(format!("threshold {t} outside (0, 1)")));
    }
    let mut pooled = vec![Confusion::default(); thresholds.len()];
    let mut per_image = Vec::with_capacity(items.len());
    for item in items {
        if item.prob.len() != item.gt.len() {
            return Err(Error::Input(format!(
                "{}: prediction has {} pixels, ground truth {}",
                item.id,
                item.prob.len(),
                item.gt.len()
            )));
        }
        let counts: Vec<Confusion> = thresholds
            .iter()
            .map(|&t| {
                let mut c = Confusion::default();
                for (&p, &y) in item.prob.iter().zip(item.gt) {
                    match (p > t, y) {
                        (true, true) => c.tp += 1,
                        (true, false) => c.fp += 1,
                        (false, true) => c.fn_ += 1,
                        (false, false) => c.tn += 1,
                    }
                }
                c
            })
            .collect();
        for (acc, c) in pooled.iter_mut().zip(&counts) {
            acc.add(c);
        }
        let (bi, best_f1) = argmax(counts.iter().map(Confusion::f1));
        per_image.push(ImageEval { id: item.id.clone(), counts, best_f1, best_threshold: thresholds[bi] });
    }
    let (oi, ods) = argmax(pooled.iter().map(Confusion::f1));
    let at = pooled[oi];
    let ois = per_image.iter().map(|e| e.best_f1).sum::<f64>() / per_image.len() as f64;
    Ok(EvalReport {
        ods,
        ods_threshold: thresholds[oi],
        ois,
        precision: at.precision(),
        recall: at.recall(),
        f1: at.f1(),
        miou: at.miou(),
        thresholds: thresholds.to_vec(),
        pooled,
        per_image,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counts() {
        let c = confusion(&[true, false, true, false], &[true, true, false, false]).unwrap();
        assert_eq!(c, Confusion { tp: 1, fp: 1, fn_: 1, tn: 1 });
        let same = confusion(&[true, false], &[true, false]).unwrap();
        assert_eq!((same.fp, same.fn_), (0, 0));
        let comp = confusion(&[true, false], &[false, true]).unwrap();
        assert_eq!((comp.tp, comp.tn), (0, 0));
        assert!(mask_from_values(&[0.0, 1.0, 0.5]).is_err());
    }

    #[test]
    fn two_by_two_report() {
        let gt = [true, true, false, false];
        let prob = [0.9, 0.4, 0.6, 0.1];
        let r = evaluate(&[EvalItem { id: "a".into(), prob: &prob, gt: &gt }], &[0.5]).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.5, 0.5, 0.5));
        assert!((r.miou - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.ods, r.ois);
    }

    #[test]
    fn empty_dataset_is_usage_error() {
        assert!(matches!(evaluate(&[], &default_thresholds()), Err(Error::Usage(_))));
    }

    #[test]
    fn report_keys() {
        let gt = [true, false];
        let r = evaluate(&[EvalItem { id: "x".into(), prob: &[0.7, 0.2], gt: &gt }], &default_thresholds()).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        for k in ["ods", "ods_threshold", "ois", "precision", "recall", "f1", "miou", "thresholds"] {
            assert!(v.get(k).is_some(), "{k}");
        }
        assert_eq!(r.ods, 1.0);
        assert_eq!(r.miou, 1.0);
    }
}
