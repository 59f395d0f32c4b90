//! SGD with momentum under a poly schedule, and Adam with a fixed rate.
//!
//! Weight decay enters both as an additive gradient term `decay * theta`.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgdConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub power: f64,
    pub max_iter: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr0: 2.5e-4,
            momentum: 0.9,
            weight_decay: 5e-4,
            power: 0.9,
            max_iter: 100_000,
        }
    }
}

/// `lr0 * (1 - iter/max_iter)^power`
pub fn poly_lr(config: &SgdConfig, iter: usize) -> Result<f64> {
    if iter > config.max_iter {
        return Err(Error::IterationOutOfRange {
            iter,
            max_iter: config.max_iter,
        });
    }
    let frac = 1.0 - iter as f64 / config.max_iter as f64;
    Ok(config.lr0 * frac.powf(config.power))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SgdState {
    pub velocity: Vec<Tensor>,
}

impl SgdState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            velocity: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }
}

fn check_shapes(params: &[Tensor], grads: &[Tensor], buffers: &[&[Tensor]]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::StateMismatch(format!(
            "{} params vs {} grads",
            params.len(),
            grads.len()
        )));
    }
    for buf in buffers {
        if buf.len() != params.len() {
            return Err(Error::StateMismatch(format!(
                "{} params vs {} state buffers",
                params.len(),
                buf.len()
            )));
        }
    }
    for (i, p) in params.iter().enumerate() {
        if grads[i].shape() != p.shape() || buffers.iter().any(|b| b[i].shape() != p.shape()) {
            return Err(Error::StateMismatch(format!("parameter {i} has shape {:?}", p.shape())));
        }
    }
    Ok(())
}

/// One momentum step at the scheduled rate for `iter`. Returns the rate used.
pub fn sgd_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut SgdState,
    config: &SgdConfig,
    iter: usize,
) -> Result<f64> {
    let lr = poly_lr(config, iter)?;
    check_shapes(params, grads, &[&state.velocity])?;
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
        for ((theta, &grad), vel) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            let d = grad + config.weight_decay * *theta;
            *vel = config.momentum * *vel + d;
            *theta -= lr * *vel;
        }
    }
    Ok(lr)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 5e-4,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }
}

/// Bias-corrected Adam step at the constant configured rate.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, config: &AdamConfig) -> Result<()> {
    check_shapes(params, grads, &[&state.m, &state.v])?;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        for (j, theta) in p.data_mut().iter_mut().enumerate() {
            let d = grads[i].data()[j] + config.weight_decay * *theta;
            m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * d;
            v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * d * d;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *theta -= config.lr * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(max_iter: usize) -> SgdConfig {
        SgdConfig {
            max_iter,
            ..SgdConfig::default()
        }
    }

    #[test]
    fn poly_schedule_endpoints() {
        let c = cfg(2000);
        assert_eq!(poly_lr(&c, 0).unwrap(), 2.5e-4);
        assert_eq!(poly_lr(&c, 2000).unwrap(), 0.0);
        // 0.5^0.9 = 0.535886731268146... (mpmath, 30 digits)
        let mid = poly_lr(&c, 1000).unwrap();
        assert!((mid - 2.5e-4 * 0.535_886_731_268_146_2).abs() < 1e-18, "{mid}");
        assert!((mid - 1.3397e-4).abs() < 1e-8);
        assert!(matches!(poly_lr(&c, 2001), Err(Error::IterationOutOfRange { .. })));
    }

    #[test]
    fn sgd_momentum_buffer_precedes_step() {
        let c = SgdConfig {
            lr0: 0.1,
            momentum: 0.5,
            weight_decay: 0.0,
            power: 1.0,
            max_iter: 10,
        };
        let mut p = vec![Tensor::scalar(1.0)];
        let g = vec![Tensor::scalar(2.0)];
        let mut s = SgdState::new(&p);
        sgd_step(&mut p, &g, &mut s, &c, 0).unwrap();
        assert!((p[0].item() - 0.8).abs() < 1e-15);
        // v = 0.5*2 + 2 = 3, lr = 0.1*0.9
        sgd_step(&mut p, &g, &mut s, &c, 1).unwrap();
        assert!((p[0].item() - (0.8 - 0.09 * 3.0)).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_minus_lr() {
        let c = AdamConfig {
            eps: 0.0,
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut p = vec![Tensor::from_vec(vec![0.3, -0.7])];
        let g = vec![Tensor::ones(&[2])];
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, &c).unwrap();
        assert!((p[0].data()[0] - (0.3 - 5e-5)).abs() < 1e-16);
        assert!((p[0].data()[1] - (-0.7 - 5e-5)).abs() < 1e-16);
    }

    #[test]
    fn adam_zero_gradient_only_decays() {
        let c = AdamConfig::default();
        let mut p = vec![Tensor::from_vec(vec![0.3, -0.7, 0.0])];
        let before = p[0].clone();
        let g = vec![Tensor::zeros(&[3])];
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, &c).unwrap();
        for (a, b) in p[0].data().iter().zip(before.data()) {
            assert!(a.abs() <= b.abs());
            assert_eq!(a.signum(), b.signum());
        }
        assert_eq!(p[0].data()[2], 0.0);

        let no_decay = AdamConfig {
            weight_decay: 0.0,
            ..c
        };
        let mut q = vec![before.clone()];
        let mut s = AdamState::new(&q);
        adam_step(&mut q, &g, &mut s, &no_decay).unwrap();
        assert_eq!(q[0], before);
    }

    #[test]
    fn adam_rejects_mismatched_state() {
        let mut p = vec![Tensor::zeros(&[2])];
        let mut s = AdamState::new(&[Tensor::zeros(&[3])]);
        let g = vec![Tensor::zeros(&[2])];
        assert!(adam_step(&mut p, &g, &mut s, &AdamConfig::default()).is_err());
    }
}
