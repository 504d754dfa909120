//! Segmentation evaluation: Precision@X (P@0.5–0.9), overall IoU, and
//! mean IoU.
//!
//! `oIoU` pools intersections and unions over the whole set before
//! dividing; `mIoU` averages per-sample IoU; `P@t` counts samples whose
//! IoU strictly exceeds the threshold. Two empty masks count as IoU 1.0.

use crate::error::{Error, Result};
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// The five precision thresholds reported alongside oIoU/mIoU.
pub const PRECISION_THRESHOLDS: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];

/// Evaluation summary for one split.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Threshold (as a string key, "0.5".."0.9") to fraction of samples
    /// with IoU strictly above it.
    pub p_at: BTreeMap<String, f64>,
    pub oiou: f64,
    pub miou: f64,
    pub n_samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_sample_iou: Option<Vec<f64>>,
}

impl MetricsReport {
    pub fn precision_at(&self, threshold: f64) -> f64 {
        self.p_at[&threshold_key(threshold)]
    }

    /// Plain-text table mirroring the P@0.5..P@0.9, oIoU, mIoU column order.
    pub fn render_table(&self, label: &str) -> String {
        let mut head = format!("{:<12}", "split");
        let mut row = format!("{label:<12}");
        for t in PRECISION_THRESHOLDS {
            head.push_str(&format!("{:>8}", format!("P@{t}")));
            row.push_str(&format!("{:>8.2}", self.precision_at(t) * 100.0));
        }
        head.push_str(&format!("{:>8}{:>8}", "oIoU", "mIoU"));
        row.push_str(&format!("{:>8.2}{:>8.2}", self.oiou * 100.0, self.miou * 100.0));
        format!("{head}\n{row}\n")
    }
}

fn threshold_key(t: f64) -> String {
    format!("{t}")
}

/// Intersection-over-union of two binary masks. Defined as 1.0 when both
/// masks are empty.
pub fn iou(pred: ArrayView2<'_, bool>, gt: ArrayView2<'_, bool>) -> Result<f64> {
    let (i, u) = intersection_union(pred, gt)?;
    Ok(if u == 0 { 1.0 } else { i as f64 / u as f64 })
}

/// Pixel counts (intersection, union) of two binary masks.
pub fn intersection_union(
    pred: ArrayView2<'_, bool>,
    gt: ArrayView2<'_, bool>,
) -> Result<(u64, u64)> {
    if pred.dim() != gt.dim() {
        return Err(Error::Shape(format!(
            "mask shapes differ: {:?} vs {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    let mut inter = 0u64;
    let mut union = 0u64;
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        inter += (p && g) as u64;
        union += (p || g) as u64;
    }
    Ok((inter, union))
}

/// Streaming accumulator over per-sample (intersection, union, IoU)
/// triples. The reduction is associative and commutative, so shards can
/// be accumulated independently and merged.
#[derive(Clone, Debug, Default)]
pub struct MetricsAccumulator {
    sum_intersection: u64,
    sum_union: u64,
    ious: Vec<f64>,
}

impl MetricsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, pred: ArrayView2<'_, bool>, gt: ArrayView2<'_, bool>) -> Result<()> {
        let (i, u) = intersection_union(pred, gt)?;
        self.sum_intersection += i;
        self.sum_union += u;
        self.ious.push(if u == 0 { 1.0 } else { i as f64 / u as f64 });
        Ok(())
    }

    pub fn merge(&mut self, other: MetricsAccumulator) {
        self.sum_intersection += other.sum_intersection;
        self.sum_union += other.sum_union;
        self.ious.extend(other.ious);
    }

    pub fn len(&self) -> usize {
        self.ious.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ious.is_empty()
    }

    pub fn finish(self, keep_per_sample: bool) -> Result<MetricsReport> {
        if self.ious.is_empty() {
            return Err(Error::InvalidInput(
                "metrics require at least one sample".into(),
            ));
        }
        let n = self.ious.len();
        let miou = self.ious.iter().sum::<f64>() / n as f64;
        let oiou = if self.sum_union == 0 {
            1.0
        } else {
            self.sum_intersection as f64 / self.sum_union as f64
        };
        let mut p_at = BTreeMap::new();
        for t in PRECISION_THRESHOLDS {
            let hits = self.ious.iter().filter(|&&v| v > t).count();
            p_at.insert(threshold_key(t), hits as f64 / n as f64);
        }
        Ok(MetricsReport {
            p_at,
            oiou,
            miou,
            n_samples: n,
            per_sample_iou: keep_per_sample.then_some(self.ious),
        })
    }
}

/// One-shot report over a sequence of (prediction, ground-truth) pairs.
pub fn compute_report<'a, I>(pairs: I) -> Result<MetricsReport>
where
    I: IntoIterator<Item = (ArrayView2<'a, bool>, ArrayView2<'a, bool>)>,
{
    let mut acc = MetricsAccumulator::new();
    for (pred, gt) in pairs {
        acc.push(pred, gt)?;
    }
    acc.finish(false)
}
