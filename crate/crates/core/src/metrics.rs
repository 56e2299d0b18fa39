//! Confusion matrix and the IoU / F1 / OA family of segmentation metrics.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim, Error, Result};

/// `counts[g * k + p]` = pixels with ground truth `g` predicted as `p`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(dim(
                "confusion_matrix",
                format!("{} counts for {classes} classes", counts.len()),
            ));
        }
        Ok(Self { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one prediction / ground-truth pair of equal-length rasters of
    /// width `width`. Ground-truth pixels equal to `ignore` are skipped.
    pub fn accumulate(&mut self, pred: &[u8], gt: &[u8], width: usize, ignore: Option<u8>) -> Result<()> {
        if pred.len() != gt.len() || width == 0 || !gt.len().is_multiple_of(width) {
            return Err(dim(
                "accumulate",
                format!("prediction has {} pixels, ground truth {} (width {width})", pred.len(), gt.len()),
            ));
        }
        let k = self.classes;
        for (i, (&p, &g)) in pred.iter().zip(gt).enumerate() {
            if Some(g) == ignore {
                continue;
            }
            for label in [g, p] {
                if label as usize >= k {
                    return Err(Error::Label {
                        row: i / width,
                        col: i % width,
                        label: label as u32,
                        classes: k,
                    });
                }
            }
            self.counts[g as usize * k + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(dim(
                "merge",
                format!("{} vs {} classes", self.classes, other.classes),
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Per-class IoU and F1; `None` for a class absent from both rasters.
    pub fn per_class(&self) -> Vec<Option<ClassScores>> {
        let k = self.classes;
        (0..k)
            .map(|c| {
                let tp = self.get(c, c);
                let fp: u64 = (0..k).filter(|&g| g != c).map(|g| self.get(g, c)).sum();
                let fn_: u64 = (0..k).filter(|&p| p != c).map(|p| self.get(c, p)).sum();
                let denom = tp + fp + fn_;
                (denom > 0).then(|| ClassScores {
                    iou: tp as f64 / denom as f64,
                    f1: 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64,
                })
            })
            .collect()
    }

    pub fn summarize(&self) -> Result<MetricsReport> {
        let total = self.total();
        if total == 0 {
            return Err(Error::EmptyEvaluation);
        }
        let per_class = self.per_class();
        let defined: Vec<&ClassScores> = per_class.iter().flatten().collect();
        let n = defined.len() as f64;
        let miou = defined.iter().map(|s| s.iou).sum::<f64>() / n;
        let mf1 = defined.iter().map(|s| s.f1).sum::<f64>() / n;
        let diag: u64 = (0..self.classes).map(|c| self.get(c, c)).sum();
        Ok(MetricsReport {
            per_class,
            miou,
            mf1,
            oa: diag as f64 / total as f64,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassScores {
    pub iou: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub per_class: Vec<Option<ClassScores>>,
    pub miou: f64,
    pub mf1: f64,
    pub oa: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_class_example() {
        let cm = ConfusionMatrix::from_counts(2, vec![3, 1, 1, 3]).unwrap();
        let s = cm.per_class()[0].unwrap();
        assert_eq!(s.iou, 0.6);
        assert_eq!(s.f1, 0.75);
    }

    #[test]
    fn perfect_prediction() {
        let mut cm = ConfusionMatrix::new(3);
        let gt = [0u8, 1, 1, 0, 1, 0];
        cm.accumulate(&gt, &gt, 3, None).unwrap();
        let r = cm.summarize().unwrap();
        assert_eq!((r.miou, r.mf1, r.oa), (1.0, 1.0, 1.0));
        // class 2 never appears
        assert!(r.per_class[2].is_none());
        assert_eq!(cm.get(0, 0) + cm.get(1, 1), 6);
    }

    #[test]
    fn disjoint_single_class() {
        let mut cm = ConfusionMatrix::new(3);
        cm.accumulate(&[2; 4], &[1; 4], 2, None).unwrap();
        assert_eq!(cm.get(1, 2), 4);
        assert_eq!(cm.total(), 4);
    }

    #[test]
    fn ignore_and_errors() {
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&[0, 1], &[255, 1], 2, Some(255)).unwrap();
        assert_eq!(cm.total(), 1);
        let err = cm.accumulate(&[0, 0, 0, 0], &[0, 0, 0, 5], 2, None).unwrap_err();
        assert_eq!(
            err,
            Error::Label {
                row: 1,
                col: 1,
                label: 5,
                classes: 2
            }
        );
        assert_eq!(ConfusionMatrix::new(2).summarize(), Err(Error::EmptyEvaluation));
    }
}
