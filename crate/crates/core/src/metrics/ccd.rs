use serde::{Deserialize, Serialize};

use crate::data::LabelMap;
use crate::error::{Error, Result};
use crate::grad::Tensor;

/// Running per-class feature sums; reduction order follows input order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassCenters {
    pub num_classes: usize,
    pub channels: usize,
    sums: Vec<f64>,
    pub counts: Vec<u64>,
}

impl ClassCenters {
    pub fn new(num_classes: usize, channels: usize) -> Self {
        Self {
            num_classes,
            channels,
            sums: vec![0.0; num_classes * channels],
            counts: vec![0; num_classes],
        }
    }

    /// Adds `[N,F,H,W]` features with their `N` label maps.
    pub fn accumulate(&mut self, features: &Tensor, labels: &[LabelMap]) -> Result<()> {
        let [n, f, h, w] = features.dims4()?;
        if f != self.channels || labels.len() != n || labels.iter().any(|l| l.height != h || l.width != w) {
            return Err(Error::ShapeMismatch {
                op: "class_centers",
                lhs: vec![n, f, h, w],
                rhs: vec![labels.len(), self.channels],
            });
        }
        let plane = h * w;
        let d = features.data();
        for (i, l) in labels.iter().enumerate() {
            for (px, &class) in l.data.iter().enumerate() {
                let k = class as usize;
                if k >= self.num_classes {
                    return Err(Error::LabelOutOfRange {
                        image: i,
                        row: px / w,
                        col: px % w,
                        label: k,
                        num_classes: self.num_classes,
                    });
                }
                self.counts[k] += 1;
                for ch in 0..f {
                    self.sums[k * f + ch] += d[(i * f + ch) * plane + px];
                }
            }
        }
        Ok(())
    }

    /// Mean feature vector of class `k`, or None when it has no pixels.
    pub fn center(&self, k: usize) -> Option<Vec<f64>> {
        let n = self.counts[k];
        (n > 0).then(|| {
            self.sums[k * self.channels..(k + 1) * self.channels]
                .iter()
                .map(|s| s / n as f64)
                .collect()
        })
    }
}

pub fn class_centers(features: &Tensor, labels: &[LabelMap], num_classes: usize) -> Result<ClassCenters> {
    let [_, f, _, _] = features.dims4()?;
    let mut c = ClassCenters::new(num_classes, f);
    c.accumulate(features, labels)?;
    Ok(c)
}

/// Euclidean distance between source and target centers of each class;
/// None when the class is missing from either domain.
pub fn ccd_raw(source: &ClassCenters, target: &ClassCenters) -> Vec<Option<f64>> {
    (0..source.num_classes.min(target.num_classes))
        .map(|k| {
            let (a, b) = (source.center(k)?, target.center(k)?);
            Some(a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
        })
        .collect()
}

/// Distances over time, normalized by the first entry.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CcdSeries {
    pub epochs: Vec<usize>,
    pub raw: Vec<Vec<Option<f64>>>,
    pub normalized: Vec<Vec<Option<f64>>>,
    pub source_centers: Vec<ClassCenters>,
    pub target_centers: Vec<ClassCenters>,
}

impl CcdSeries {
    pub fn push(&mut self, epoch: usize, source: ClassCenters, target: ClassCenters) -> Vec<Option<f64>> {
        let raw = ccd_raw(&source, &target);
        let reference = self.raw.first().unwrap_or(&raw);
        let normalized = normalize(&raw, reference);
        self.epochs.push(epoch);
        self.raw.push(raw);
        self.normalized.push(normalized.clone());
        self.source_centers.push(source);
        self.target_centers.push(target);
        normalized
    }
}

/// `raw / reference` per class. Missing or zero references yield None.
pub fn normalize(raw: &[Option<f64>], reference: &[Option<f64>]) -> Vec<Option<f64>> {
    raw.iter()
        .zip(reference)
        .map(|(r, r0)| match (r, r0) {
            (Some(r), Some(r0)) if *r0 > 0.0 => Some(r / r0),
            _ => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_inputs_have_zero_distance() {
        let f = Tensor::new(vec![1, 2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let l = [LabelMap::new(1, 2, vec![0, 1]).unwrap()];
        let c = class_centers(&f, &l, 3).unwrap();
        assert_eq!(ccd_raw(&c, &c), vec![Some(0.0), Some(0.0), None]);
    }

    #[test]
    fn first_epoch_normalizes_to_one() {
        let fs = Tensor::new(vec![1, 1, 1, 2], vec![1.0, 5.0]).unwrap();
        let ft = Tensor::new(vec![1, 1, 1, 2], vec![4.0, 5.5]).unwrap();
        let l = [LabelMap::new(1, 2, vec![0, 1]).unwrap()];
        let mut s = CcdSeries::default();
        let n = s.push(0, class_centers(&fs, &l, 2).unwrap(), class_centers(&ft, &l, 2).unwrap());
        assert_eq!(n, vec![Some(1.0), Some(1.0)]);
        assert_eq!(s.raw[0], vec![Some(3.0), Some(0.5)]);
    }
}
