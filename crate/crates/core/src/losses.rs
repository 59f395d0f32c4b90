//! Segmentation, weight-discrepancy and discrepancy-weighted adversarial losses.
//!
//! Conventions:
//! - every loss is a mean over pixels (and batch items), so the lambdas do
//!   not depend on resolution;
//! - the discriminator minimizes binary cross-entropy with source labelled 1
//!   and target labelled 0; the generator minimizes the non-saturating
//!   `-log D(target)` fooling loss;
//! - the adaptive weight map enters every graph as a constant, so no gradient
//!   reaches the classifiers through it;
//! - the source term of the discriminator loss is unweighted, the target term
//!   is weighted in both the generator and the discriminator updates.

use serde::{Deserialize, Serialize};

use crate::data::LabelMap;
use crate::error::{Error, Result};
use crate::grad::{cosine, Graph, Tensor, Var};

/// Per-pixel cosine distance between the two heads' class-probability
/// vectors, shaped `[N,1,H,W]`. Entries lie in `[0, 2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscrepancyMap {
    pub values: Tensor,
}

/// `lambda_local * discrepancy + epsilon`, shaped `[N,1,H,W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveWeightMap {
    pub values: Tensor,
    pub lambda_local: f64,
    pub epsilon: f64,
}

impl AdaptiveWeightMap {
    /// Uniform map, as used by the plain adversarial baseline.
    pub fn uniform(shape: &[usize], value: f64) -> Self {
        Self {
            values: Tensor::full(shape, value),
            lambda_local: 0.0,
            epsilon: value,
        }
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.epsilon, 2.0 * self.lambda_local + self.epsilon)
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .data()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Scalar loss values recorded for one training iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub seg: f64,
    pub weight_disc: f64,
    pub adv_g: f64,
    pub adv_d: f64,
    pub total_g: f64,
}

impl LossBundle {
    pub fn is_finite(&self) -> bool {
        [self.seg, self.weight_disc, self.adv_g, self.adv_d, self.total_g]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// One-hot `[N,C,H,W]` encoding of a label batch; rejects out-of-range labels.
pub fn one_hot(labels: &[LabelMap], num_classes: usize) -> Result<Tensor> {
    let first = labels.first().ok_or(Error::Empty("label batch"))?;
    let (h, w) = (first.height, first.width);
    let plane = h * w;
    let mut data = vec![0.0; labels.len() * num_classes * plane];
    for (n, map) in labels.iter().enumerate() {
        if map.height != h || map.width != w {
            return Err(Error::ShapeMismatch {
                op: "one_hot",
                lhs: vec![h, w],
                rhs: vec![map.height, map.width],
            });
        }
        for (px, &label) in map.data.iter().enumerate() {
            let label = label as usize;
            if label >= num_classes {
                return Err(Error::LabelOutOfRange {
                    image: n,
                    row: px / w,
                    col: px % w,
                    label,
                    num_classes,
                });
            }
            data[(n * num_classes + label) * plane + px] = 1.0;
        }
    }
    Tensor::new(vec![labels.len(), num_classes, h, w], data)
}

/// Mean over pixels of `-log p(true class)` for an ensemble probability map.
pub fn seg_loss(g: &mut Graph, ensemble: Var, labels: &[LabelMap]) -> Result<Var> {
    let [n, c, h, w] = g.value(ensemble).dims4()?;
    if labels.len() != n || labels.iter().any(|l| l.height != h || l.width != w) {
        return Err(Error::ShapeMismatch {
            op: "seg_loss",
            lhs: vec![n, c, h, w],
            rhs: vec![labels.len(), labels.first().map_or(0, |l| l.height), labels.first().map_or(0, |l| l.width)],
        });
    }
    let target = g.constant(one_hot(labels, c)?);
    let logp = g.log(ensemble);
    let picked = g.mul(target, logp)?;
    let total = g.sum(picked);
    Ok(g.scale(total, -1.0 / (n * h * w) as f64))
}

/// Cosine similarity of the flattened head weights (to be minimized).
/// The flag reports a degenerate (near-zero norm) input, in which case the
/// loss is 0 and carries no gradient.
pub fn weight_discrepancy_loss(g: &mut Graph, w1: Var, w2: Var) -> Result<(Var, bool)> {
    let degenerate = cosine(g.value(w1), g.value(w2))?.degenerate;
    Ok((g.cosine_similarity(w1, w2)?, degenerate))
}

/// `1 - cos(p1_ij, p2_ij)` over the channel axis for every pixel.
pub fn discrepancy_map(p1: &Tensor, p2: &Tensor) -> Result<DiscrepancyMap> {
    p1.expect_same_shape(p2, "discrepancy_map")?;
    let [n, c, h, w] = p1.dims4()?;
    let plane = h * w;
    let (a, b) = (p1.data(), p2.data());
    let mut out = vec![0.0; n * plane];
    for img in 0..n {
        for px in 0..plane {
            let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
            for ch in 0..c {
                let j = (img * c + ch) * plane + px;
                dot += a[j] * b[j];
                na += a[j] * a[j];
                nb += b[j] * b[j];
            }
            let floor = crate::grad::NORM_FLOOR * crate::grad::NORM_FLOOR;
            let cos = if na < floor || nb < floor {
                0.0
            } else {
                (dot / (na * nb).sqrt()).clamp(-1.0, 1.0)
            };
            out[img * plane + px] = (1.0 - cos).clamp(0.0, 2.0);
        }
    }
    Ok(DiscrepancyMap {
        values: Tensor::new(vec![n, 1, h, w], out)?,
    })
}

pub fn adaptive_weight_map(m: &DiscrepancyMap, lambda_local: f64, epsilon: f64) -> Result<AdaptiveWeightMap> {
    if !(lambda_local >= 0.0 && lambda_local.is_finite()) {
        return Err(Error::invalid("adaptive_weight_map", format!("lambda_local = {lambda_local}")));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid("adaptive_weight_map", format!("epsilon = {epsilon}")));
    }
    Ok(AdaptiveWeightMap {
        values: m.values.map(|d| lambda_local * d + epsilon),
        lambda_local,
        epsilon,
    })
}

fn expect_map_shape(g: &Graph, d: Var, w: &AdaptiveWeightMap, op: &'static str) -> Result<()> {
    let dv = g.value(d);
    if dv.shape() != w.values.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: dv.shape().to_vec(),
            rhs: w.values.shape().to_vec(),
        });
    }
    Ok(())
}

/// Mean over pixels of `w * -log D(target)`; gradient flows only through `d_target`.
pub fn adv_loss_generator(g: &mut Graph, d_target: Var, w: &AdaptiveWeightMap) -> Result<Var> {
    expect_map_shape(g, d_target, w, "adv_loss_generator")?;
    let weights = g.constant(w.values.clone());
    let logd = g.log(d_target);
    let nll = g.neg(logd);
    let weighted = g.mul(weights, nll)?;
    Ok(g.mean(weighted))
}

/// `mean(-log D(source)) + mean(w * -log(1 - D(target)))`
pub fn adv_loss_discriminator(g: &mut Graph, d_source: Var, d_target: Var, w: &AdaptiveWeightMap) -> Result<Var> {
    expect_map_shape(g, d_target, w, "adv_loss_discriminator")?;
    let log_src = g.log(d_source);
    let src_mean = g.mean(log_src);
    let src_term = g.neg(src_mean);

    let weights = g.constant(w.values.clone());
    let not_d = g.one_minus(d_target);
    let log_tgt = g.log(not_d);
    let nll = g.neg(log_tgt);
    let weighted = g.mul(weights, nll)?;
    let tgt_term = g.mean(weighted);
    g.add(src_term, tgt_term)
}

/// `seg + lambda_weight * weight_disc + lambda_adv * adv_g`
pub fn total_generator_loss(
    g: &mut Graph,
    seg: Var,
    weight_disc: Var,
    adv_g: Var,
    lambda_weight: f64,
    lambda_adv: f64,
) -> Result<Var> {
    let wd = g.scale(weight_disc, lambda_weight);
    let adv = g.scale(adv_g, lambda_adv);
    let partial = g.add(seg, wd)?;
    g.add(partial, adv)
}

pub fn total_generator_value(seg: f64, weight_disc: f64, adv_g: f64, lambda_weight: f64, lambda_adv: f64) -> f64 {
    seg + lambda_weight * weight_disc + lambda_adv * adv_g
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(h: usize, w: usize, data: Vec<u8>) -> LabelMap {
        LabelMap::new(h, w, data).unwrap()
    }

    fn seg_value(p: Tensor, l: &[LabelMap]) -> Result<f64> {
        let mut g = Graph::new();
        let pv = g.constant(p);
        let s = seg_loss(&mut g, pv, l)?;
        Ok(g.value(s).item())
    }

    #[test]
    fn seg_loss_reference_values() {
        let uniform = Tensor::full(&[1, 5, 2, 2], 0.2);
        let v = seg_value(uniform, &[labels(2, 2, vec![0, 1, 2, 4])]).unwrap();
        assert!((v - 5f64.ln()).abs() < 1e-14);

        let half = Tensor::new(vec![1, 2, 1, 1], vec![0.5, 0.5]).unwrap();
        let v = seg_value(half, &[labels(1, 1, vec![1])]).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);

        let mut onehot = vec![0.0; 3 * 4];
        for (px, &c) in [0usize, 2, 1, 1].iter().enumerate() {
            onehot[c * 4 + px] = 1.0;
        }
        let v = seg_value(Tensor::new(vec![1, 3, 2, 2], onehot).unwrap(), &[labels(2, 2, vec![0, 2, 1, 1])]).unwrap();
        assert!((0.0..=4.0 * 1.1e-11).contains(&v));
    }

    #[test]
    fn seg_loss_reports_offending_pixel() {
        let p = Tensor::full(&[1, 3, 2, 2], 1.0 / 3.0);
        let err = seg_value(p, &[labels(2, 2, vec![0, 1, 2, 7])]).unwrap_err();
        assert!(
            matches!(err, Error::LabelOutOfRange { row: 1, col: 1, label: 7, .. }),
            "{err}"
        );
    }

    #[test]
    fn discrepancy_reference_values() {
        let p1 = Tensor::new(vec![1, 2, 1, 3], vec![0.5, 1.0, 0.3, 0.5, 0.0, 0.7]).unwrap();
        let p2 = Tensor::new(vec![1, 2, 1, 3], vec![1.0, 0.0, 0.3, 0.0, 1.0, 0.7]).unwrap();
        let m = discrepancy_map(&p1, &p2).unwrap();
        assert_eq!(m.values.shape(), &[1, 1, 1, 3]);
        // 1 - 1/sqrt(2), mpmath
        assert!((m.values.data()[0] - 0.292_893_218_813_452_5).abs() < 1e-15);
        assert_eq!(m.values.data()[1], 1.0);
        assert!(m.values.data()[2].abs() < 1e-15);
    }

    #[test]
    fn adaptive_weight_reference_values() {
        let m = DiscrepancyMap {
            values: Tensor::new(vec![1, 1, 1, 2], vec![0.0, 0.5]).unwrap(),
        };
        let w = adaptive_weight_map(&m, 40.0, 0.4).unwrap();
        assert!((w.values.data()[0] - 0.4).abs() < 1e-15);
        assert!((w.values.data()[1] - 20.4).abs() < 1e-12);
        let tan = adaptive_weight_map(&m, 0.0, 1.0).unwrap();
        assert!(tan.values.data().iter().all(|&v| v == 1.0));
        assert!(adaptive_weight_map(&m, -1.0, 0.4).is_err());
        assert!(adaptive_weight_map(&m, 1.0, 0.0).is_err());
    }

    fn adv_g_value(d: f64, w: f64) -> f64 {
        let mut g = Graph::new();
        let dv = g.constant(Tensor::full(&[1, 1, 2, 2], d));
        let l = adv_loss_generator(&mut g, dv, &AdaptiveWeightMap::uniform(&[1, 1, 2, 2], w)).unwrap();
        g.value(l).item()
    }

    #[test]
    fn adv_generator_reference_values() {
        assert!((adv_g_value(0.5, 1.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(adv_g_value(0.3, 0.0), 0.0);
        assert!((adv_g_value(0.3, 2.0) - 2.0 * adv_g_value(0.3, 1.0)).abs() < 1e-15);
    }

    #[test]
    fn adv_discriminator_reference_values() {
        let run = |ds: f64, dt: f64, w: f64| {
            let mut g = Graph::new();
            let s = g.constant(Tensor::full(&[1, 1, 2, 2], ds));
            let t = g.constant(Tensor::full(&[1, 1, 2, 2], dt));
            let l = adv_loss_discriminator(&mut g, s, t, &AdaptiveWeightMap::uniform(&[1, 1, 2, 2], w)).unwrap();
            g.value(l).item()
        };
        assert!((run(0.5, 0.5, 1.0) - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert!(run(1.0 - 1e-13, 1e-13, 1.0) < 1e-12);
        let src_only = run(0.7, 0.0, 1.0);
        let eps_scaled = run(0.7, 0.4, 0.4) - src_only;
        let unit = run(0.7, 0.4, 1.0) - src_only;
        assert!((eps_scaled - 0.4 * unit).abs() < 1e-15);
    }

    #[test]
    fn total_loss_combination() {
        assert!((total_generator_value(1.0, 1.0, 1.0, 0.01, 0.001) - 1.011).abs() < 1e-15);
        assert_eq!(total_generator_value(0.7, 3.0, 9.0, 0.0, 0.0), 0.7);
        let mut g = Graph::new();
        let (s, w, a) = (
            g.constant(Tensor::scalar(0.9)),
            g.constant(Tensor::scalar(-0.2)),
            g.constant(Tensor::scalar(1.3)),
        );
        let t = total_generator_loss(&mut g, s, w, a, 0.01, 0.001).unwrap();
        assert!((g.value(t).item() - total_generator_value(0.9, -0.2, 1.3, 0.01, 0.001)).abs() < 1e-15);
    }

    #[test]
    fn weight_map_blocks_gradient() {
        let mut g = Graph::new();
        let d = g.param(Tensor::full(&[1, 1, 1, 2], 0.25));
        let w = AdaptiveWeightMap::uniform(&[1, 1, 1, 2], 3.0);
        let l = adv_loss_generator(&mut g, d, &w).unwrap();
        g.backward(l).unwrap();
        // d/dd mean(3 * -log d) = -3 / (2 d)
        for &v in g.grad(d).unwrap().data() {
            assert!((v + 3.0 / (2.0 * 0.25)).abs() < 1e-12);
        }
    }
}
