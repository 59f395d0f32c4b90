//! Segmentation quality, cross-domain cluster distances and discriminator
//! diagnostics, plus CSV/JSON/SVG export.

pub mod ccd;
pub mod export;
pub mod svg;

use serde::{Deserialize, Serialize};

use crate::data::LabelMap;
use crate::error::{Error, Result};
use crate::grad::Tensor;
use crate::trainer::RunRecord;

pub use ccd::{ccd_raw, class_centers, CcdSeries, ClassCenters};

/// Rows are ground truth, columns are predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one labelled map and its predicted map.
    pub fn accumulate(&mut self, truth: &LabelMap, pred: &LabelMap) -> Result<()> {
        if truth.height != pred.height || truth.width != pred.width {
            return Err(Error::ShapeMismatch {
                op: "confusion_matrix",
                lhs: vec![truth.height, truth.width],
                rhs: vec![pred.height, pred.width],
            });
        }
        let c = self.num_classes;
        for (p, (&t, &q)) in truth.data.iter().zip(&pred.data).enumerate() {
            for l in [t, q] {
                if l as usize >= c {
                    return Err(Error::LabelOutOfRange {
                        image: 0,
                        row: p / truth.width,
                        col: p % truth.width,
                        label: l as usize,
                        num_classes: c,
                    });
                }
            }
            self.counts[t as usize * c + q as usize] += 1;
        }
        Ok(())
    }
}

/// Per-class IoU (None for classes absent from both ground truth and
/// prediction) and their mean over the present classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IouReport {
    pub iou: Vec<Option<f64>>,
    pub miou: Option<f64>,
}

pub fn per_class_iou(conf: &ConfusionMatrix) -> IouReport {
    let c = conf.num_classes;
    let iou: Vec<Option<f64>> = (0..c)
        .map(|k| {
            let tp = conf.get(k, k);
            let fn_: u64 = (0..c).filter(|&j| j != k).map(|j| conf.get(k, j)).sum();
            let fp: u64 = (0..c).filter(|&j| j != k).map(|j| conf.get(j, k)).sum();
            let denom = tp + fp + fn_;
            (denom > 0).then(|| tp as f64 / denom as f64)
        })
        .collect();
    let present: Vec<f64> = iou.iter().flatten().copied().collect();
    let miou = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
    IouReport { iou, miou }
}

/// Per-pixel argmax over the class axis of `[N,C,H,W]` probabilities;
/// ties go to the lowest class index.
pub fn argmax_labels(probs: &Tensor) -> Result<Vec<LabelMap>> {
    let [n, c, h, w] = probs.dims4()?;
    let plane = h * w;
    let d = probs.data();
    (0..n)
        .map(|i| {
            let data = (0..plane)
                .map(|px| {
                    let mut best = 0;
                    for k in 1..c {
                        if d[(i * c + k) * plane + px] > d[(i * c + best) * plane + px] {
                            best = k;
                        }
                    }
                    best as u8
                })
                .collect();
            LabelMap::new(h, w, data)
        })
        .collect()
}

/// Mean of `|D - 0.5|` over the trailing window of a run, per domain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DConvergence {
    pub source: f64,
    pub target: f64,
}

/// `window_fraction` of the iterations that carry discriminator statistics
/// (rounded up) are averaged.
pub fn d_convergence_stat(run: &RunRecord, window_fraction: f64) -> Result<DConvergence> {
    if !(window_fraction > 0.0 && window_fraction <= 1.0) {
        return Err(Error::invalid("d_convergence_stat", format!("window fraction {window_fraction}")));
    }
    let stats: Vec<(f64, f64)> = run
        .iterations()
        .filter_map(|it| Some((it.d_source?.abs_dev, it.d_target?.abs_dev)))
        .collect();
    let len = (stats.len() as f64 * window_fraction).ceil() as usize;
    let window = &stats[stats.len() - len.min(stats.len())..];
    if window.is_empty() {
        return Err(Error::Empty("no discriminator statistics in the trailing window"));
    }
    let n = window.len() as f64;
    Ok(DConvergence {
        source: window.iter().map(|s| s.0).sum::<f64>() / n,
        target: window.iter().map(|s| s.1).sum::<f64>() / n,
    })
}
