//! Segmentation scoring: aAcc, mIoU and mAcc from an exact confusion matrix.
//!
//! Rows are ground-truth classes, columns predicted classes. Pixels whose
//! ground truth equals the ignore label are skipped. Classes that never occur
//! in the ground truth are left out of both means.

use std::fmt::Write as _;
use std::ops::AddAssign;

use serde::Serialize;

/// Cityscapes convention.
pub const DEFAULT_IGNORE_LABEL: u8 = 255;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("label maps differ in size: prediction {pred_w}x{pred_h}, ground truth {gt_w}x{gt_h}")]
    Dimensions {
        pred_w: u32,
        pred_h: u32,
        gt_w: u32,
        gt_h: u32,
    },
    #[error("predicted label {label} at pixel {index} is outside [0, {num_classes})")]
    PredictedLabel {
        label: u8,
        index: usize,
        num_classes: usize,
    },
    #[error("ground-truth label {label} at pixel {index} is outside [0, {num_classes}) and is not the ignore label")]
    GroundTruthLabel {
        label: u8,
        index: usize,
        num_classes: usize,
    },
    #[error("class count must be in 1..={max} and not cover the ignore label {ignore}")]
    ClassCount { max: usize, ignore: u8 },
    #[error("confusion matrices have different shapes")]
    Shape,
    #[error("no pixels accumulated")]
    NoPixels,
}

/// Single-channel 8-bit map of class indices, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Option<Self> {
        (data.len() == width as usize * height as usize).then_some(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    ignore_label: u8,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    /// `ignore_label` must not be a valid class index.
    pub fn new(num_classes: usize, ignore_label: u8) -> Result<Self, MetricsError> {
        if num_classes == 0 || num_classes > 256 || (ignore_label as usize) < num_classes {
            return Err(MetricsError::ClassCount {
                max: ignore_label as usize,
                ignore: ignore_label,
            });
        }
        Ok(Self {
            num_classes,
            ignore_label,
            counts: vec![0; num_classes * num_classes],
        })
    }

    /// Builds a matrix from row-major counts (rows = ground truth).
    pub fn from_counts(
        num_classes: usize,
        ignore_label: u8,
        counts: Vec<u64>,
    ) -> Result<Self, MetricsError> {
        let mut cm = Self::new(num_classes, ignore_label)?;
        if counts.len() != num_classes * num_classes {
            return Err(MetricsError::Shape);
        }
        cm.counts = counts;
        Ok(cm)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn ignore_label(&self) -> u8 {
        self.ignore_label
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one prediction/ground-truth pair. On error the matrix is unchanged.
    pub fn accumulate(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<(), MetricsError> {
        if pred.width != gt.width || pred.height != gt.height {
            return Err(MetricsError::Dimensions {
                pred_w: pred.width,
                pred_h: pred.height,
                gt_w: gt.width,
                gt_h: gt.height,
            });
        }
        self.accumulate_slices(&pred.data, &gt.data)
    }

    pub fn accumulate_slices(&mut self, pred: &[u8], gt: &[u8]) -> Result<(), MetricsError> {
        assert_eq!(pred.len(), gt.len(), "label slices differ in length");
        let k = self.num_classes;
        let mut local = vec![0u64; k * k];
        for (index, (&p, &g)) in pred.iter().zip(gt).enumerate() {
            if g == self.ignore_label {
                continue;
            }
            if g as usize >= k {
                return Err(MetricsError::GroundTruthLabel {
                    label: g,
                    index,
                    num_classes: k,
                });
            }
            if p as usize >= k {
                return Err(MetricsError::PredictedLabel {
                    label: p,
                    index,
                    num_classes: k,
                });
            }
            local[g as usize * k + p as usize] += 1;
        }
        for (a, b) in self.counts.iter_mut().zip(local) {
            *a += b;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), MetricsError> {
        if self.num_classes != other.num_classes || self.ignore_label != other.ignore_label {
            return Err(MetricsError::Shape);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

impl AddAssign<&ConfusionMatrix> for ConfusionMatrix {
    fn add_assign(&mut self, rhs: &ConfusionMatrix) {
        self.merge(rhs).expect("confusion matrix shapes differ");
    }
}

/// Functional form of [`ConfusionMatrix::accumulate`].
pub fn accumulate(
    pred: &LabelMap,
    gt: &LabelMap,
    mut cm: ConfusionMatrix,
) -> Result<ConfusionMatrix, MetricsError> {
    cm.accumulate(pred, gt)?;
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub gt_pixels: u64,
    /// `None` when the class is absent from the ground truth.
    pub iou: Option<f64>,
    pub recall: Option<f64>,
}

/// Percentages in `[0, 100]`, kept at full precision. Use [`round2`] or
/// [`MetricReport::format_table`] for display.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub a_acc: f64,
    pub m_iou: f64,
    pub m_acc: f64,
    pub pixels: u64,
    pub per_class: Vec<ClassMetrics>,
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<MetricReport, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::NoPixels);
    }
    let k = cm.num_classes;
    let mut trace = 0u64;
    let mut per_class = Vec::with_capacity(k);
    let (mut iou_sum, mut acc_sum, mut present) = (0.0, 0.0, 0usize);
    for c in 0..k {
        let tp = cm.get(c, c);
        trace += tp;
        let row: u64 = (0..k).map(|p| cm.get(c, p)).sum();
        let col: u64 = (0..k).map(|g| cm.get(g, c)).sum();
        let (iou, recall) = if row > 0 {
            let iou = 100.0 * tp as f64 / (row + col - tp) as f64;
            let recall = 100.0 * tp as f64 / row as f64;
            iou_sum += iou;
            acc_sum += recall;
            present += 1;
            (Some(iou), Some(recall))
        } else {
            (None, None)
        };
        per_class.push(ClassMetrics {
            class: c,
            gt_pixels: row,
            iou,
            recall,
        });
    }
    Ok(MetricReport {
        a_acc: 100.0 * trace as f64 / total as f64,
        m_iou: iou_sum / present as f64,
        m_acc: acc_sum / present as f64,
        pixels: total,
        per_class,
    })
}

/// Rounds half-up to two decimals.
pub fn round2(x: f64) -> f64 {
    // The nudge keeps values like 12.345 (stored as 12.34499…) rounding up.
    ((x * 100.0) * (1.0 + 1e-12)).round() / 100.0
}

fn fmt2(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{:.2}", round2(v)))
}

impl MetricReport {
    /// Summary row in `aAcc | mIoU | mAcc` order plus a per-class appendix.
    pub fn format_table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{:>8} {:>8} {:>8}", "aAcc", "mIoU", "mAcc").unwrap();
        writeln!(
            s,
            "{:>8} {:>8} {:>8}",
            fmt2(Some(self.a_acc)),
            fmt2(Some(self.m_iou)),
            fmt2(Some(self.m_acc))
        )
        .unwrap();
        writeln!(s).unwrap();
        writeln!(
            s,
            "{:>6} {:>8} {:>8} {:>12}",
            "class", "IoU", "Acc", "gt_pixels"
        )
        .unwrap();
        for c in &self.per_class {
            writeln!(
                s,
                "{:>6} {:>8} {:>8} {:>12}",
                c.class,
                fmt2(c.iou),
                fmt2(c.recall),
                c.gt_pixels
            )
            .unwrap();
        }
        s
    }

    /// One JSON object per line: a summary record, then one per class.
    pub fn to_json_lines(&self) -> String {
        let mut s = serde_json::json!({
            "record": "summary",
            "aAcc": round2(self.a_acc),
            "mIoU": round2(self.m_iou),
            "mAcc": round2(self.m_acc),
            "aAcc_exact": self.a_acc,
            "mIoU_exact": self.m_iou,
            "mAcc_exact": self.m_acc,
            "pixels": self.pixels,
        })
        .to_string();
        s.push('\n');
        for c in &self.per_class {
            s.push_str(
                &serde_json::json!({
                    "record": "class",
                    "class": c.class,
                    "gt_pixels": c.gt_pixels,
                    "iou": c.iou.map(round2),
                    "acc": c.recall.map(round2),
                })
                .to_string(),
            );
            s.push('\n');
        }
        s
    }
}
