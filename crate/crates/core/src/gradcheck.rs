//! Central finite-difference checks of every differentiable op and of the
//! composed generator and discriminator objectives.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::LabelMap;
use crate::error::{Error, Result};
use crate::grad::{Graph, Tensor, Var};
use crate::losses::{
    adaptive_weight_map, adv_loss_discriminator, adv_loss_generator, discrepancy_map, seg_loss,
    total_generator_loss, weight_discrepancy_loss, AdaptiveWeightMap,
};
use crate::models::{
    BoundConv, BoundDiscriminator, BoundGenerator, DiscriminatorParams, GeneratorParams, Heads, ModelConfig,
};
use crate::rng::stream_rng;

/// Op names accepted by the fault-injection hook.
pub const OP_NAMES: [&str; 19] = [
    "add",
    "sub",
    "mul",
    "scale",
    "add_scalar",
    "matmul",
    "conv2d",
    "bias_add",
    "leaky_relu",
    "relu",
    "sigmoid",
    "softmax",
    "log",
    "sum",
    "mean",
    "upsample_nearest",
    "flatten_concat",
    "stop_gradient",
    "cosine_similarity",
];

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    /// Negate the backward pass of this op (a deliberately broken build).
    pub fault: Option<&'static str>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            step: 1e-5,
            tolerance: 1e-4,
            fault: None,
        }
    }
}

impl GradCheckOptions {
    pub fn with_fault(mut self, op: &str) -> Result<Self> {
        let name = OP_NAMES
            .iter()
            .find(|n| **n == op)
            .ok_or_else(|| Error::invalid("grad_check", format!("unknown op `{op}`")))?;
        self.fault = Some(name);
        Ok(self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CaseReport {
    pub name: String,
    pub max_rel_error: f64,
    pub entries: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub step: f64,
    pub cases: Vec<CaseReport>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.cases.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }
}

/// `|a - n| / max(|a|, |n|, 1e-6)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

type Build<'a> = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var> + 'a>;

struct Case<'a> {
    name: &'static str,
    inputs: Vec<Tensor>,
    build: Build<'a>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape")
}

/// Uniform in `[-2, 2]` but at least `gap` away from zero, for ops with a kink there.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor {
    uniform(rng, shape, -2.0, 2.0).map(|v| if v.abs() < gap { v.signum() * gap + v } else { v })
}

/// Reduces any output to a scalar through a fixed random projection.
fn project(g: &mut Graph, out: Var, weights: &Tensor) -> Result<Var> {
    let r = g.constant(weights.clone());
    let m = g.mul(r, out)?;
    Ok(g.sum(m))
}

fn evaluate(case: &Case, inputs: &[Tensor]) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let root = (case.build)(&mut g, &vars)?;
    Ok(g.value(root).item())
}

fn check(case: &Case, opts: &GradCheckOptions) -> Result<CaseReport> {
    let mut g = Graph::new();
    if let Some(f) = opts.fault {
        g.inject_sign_fault(f);
    }
    let vars: Vec<Var> = case.inputs.iter().map(|t| g.param(t.clone())).collect();
    let root = (case.build)(&mut g, &vars)?;
    g.backward(root)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(g.value(v).shape())))
        .collect();

    let mut worst: f64 = 0.0;
    let mut entries = 0;
    let mut probe = case.inputs.clone();
    for (i, a) in analytic.iter().enumerate() {
        for j in 0..a.len() {
            let base = probe[i].data()[j];
            probe[i].data_mut()[j] = base + opts.step;
            let up = evaluate(case, &probe)?;
            probe[i].data_mut()[j] = base - opts.step;
            let down = evaluate(case, &probe)?;
            probe[i].data_mut()[j] = base;
            let numeric = (up - down) / (2.0 * opts.step);
            worst = worst.max(relative_error(a.data()[j], numeric));
            entries += 1;
        }
    }
    Ok(CaseReport {
        name: case.name.to_string(),
        max_rel_error: worst,
        entries,
        passed: worst < opts.tolerance,
    })
}

/// Forward values through `stop_gradient` must be untouched and its parents
/// must receive exactly nothing through it.
fn check_stop_gradient(rng: &mut ChaCha8Rng, opts: &GradCheckOptions) -> Result<CaseReport> {
    let x = uniform(rng, &[2, 3], -2.0, 2.0);
    let r1 = uniform(rng, &[2, 3], -1.0, 1.0);
    let r2 = uniform(rng, &[2, 3], -1.0, 1.0);
    let mut g = Graph::new();
    if let Some(f) = opts.fault {
        g.inject_sign_fault(f);
    }
    let xv = g.param(x.clone());
    let stopped = g.stop_gradient(xv);
    let a = project(&mut g, xv, &r1)?;
    let b = project(&mut g, stopped, &r2)?;
    let root = g.add(a, b)?;
    let same_value = g.value(stopped) == &x;
    g.backward(root)?;
    let grad = g.grad(xv).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));
    let worst = grad
        .data()
        .iter()
        .zip(r1.data())
        .map(|(&a, &e)| relative_error(a, e))
        .fold(if same_value { 0.0 } else { f64::INFINITY }, f64::max);
    Ok(CaseReport {
        name: "stop_gradient".into(),
        max_rel_error: worst,
        entries: x.len(),
        passed: worst < opts.tolerance,
    })
}

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<Case<'static>> {
    let mut cases = Vec::new();
    let mut push = |name, inputs: Vec<Tensor>, proj: Tensor, f: fn(&mut Graph, &[Var]) -> Result<Var>| {
        cases.push(Case {
            name,
            inputs,
            build: Box::new(move |g: &mut Graph, v: &[Var]| {
                let out = f(g, v)?;
                project(g, out, &proj)
            }),
        });
    };
    let u = |rng: &mut ChaCha8Rng, s: &[usize]| uniform(rng, s, -2.0, 2.0);
    let p = |rng: &mut ChaCha8Rng, s: &[usize]| uniform(rng, s, -1.0, 1.0);

    let (a, b, r) = (u(rng, &[2, 3]), u(rng, &[2, 3]), p(rng, &[2, 3]));
    push("add", vec![a.clone(), b.clone()], r.clone(), |g, v| g.add(v[0], v[1]));
    push("sub", vec![a.clone(), b.clone()], r.clone(), |g, v| g.sub(v[0], v[1]));
    push("mul", vec![a.clone(), b], r.clone(), |g, v| g.mul(v[0], v[1]));
    push("scale", vec![a.clone()], r.clone(), |g, v| Ok(g.scale(v[0], -1.7)));
    push("add_scalar", vec![a], r, |g, v| Ok(g.add_scalar(v[0], 0.3)));

    let (a, b, r) = (u(rng, &[2, 3]), u(rng, &[3, 4]), p(rng, &[2, 4]));
    push("matmul", vec![a, b], r, |g, v| g.matmul(v[0], v[1]));

    let (x, k, r) = (u(rng, &[2, 2, 5, 5]), u(rng, &[3, 2, 3, 3]), p(rng, &[2, 3, 5, 5]));
    push("conv2d", vec![x, k], r, |g, v| g.conv2d(v[0], v[1], 1, 1));
    let (x, k, r) = (u(rng, &[1, 2, 8, 8]), u(rng, &[2, 2, 4, 4]), p(rng, &[1, 2, 4, 4]));
    push("conv2d", vec![x, k], r, |g, v| g.conv2d(v[0], v[1], 2, 1));

    let (x, bias, r) = (u(rng, &[2, 3, 2, 2]), u(rng, &[3]), p(rng, &[2, 3, 2, 2]));
    push("bias_add", vec![x, bias], r, |g, v| g.bias_add(v[0], v[1]));

    let (x, r) = (away_from_zero(rng, &[2, 3, 2], 1e-3), p(rng, &[2, 3, 2]));
    push("leaky_relu", vec![x.clone()], r.clone(), |g, v| Ok(g.leaky_relu(v[0], 0.2)));
    push("relu", vec![x.clone()], r.clone(), |g, v| Ok(g.relu(v[0])));
    push("sigmoid", vec![x], r, |g, v| Ok(g.sigmoid(v[0])));

    let (x, r) = (u(rng, &[2, 3, 2, 2]), p(rng, &[2, 3, 2, 2]));
    push("softmax", vec![x], r, |g, v| g.softmax(v[0], 1));

    let (x, r) = (uniform(rng, &[2, 3], 0.1, 2.0), p(rng, &[2, 3]));
    push("log", vec![x], r, |g, v| Ok(g.log(v[0])));

    let x = u(rng, &[2, 3]);
    let one = Tensor::scalar(1.0);
    push("sum", vec![x.clone()], one.clone(), |g, v| Ok(g.sum(v[0])));
    push("mean", vec![x], one.clone(), |g, v| Ok(g.mean(v[0])));

    let (x, r) = (u(rng, &[1, 2, 2, 2]), p(rng, &[1, 2, 4, 4]));
    push("upsample_nearest", vec![x], r, |g, v| g.upsample_nearest(v[0], 2));

    let (a, b, r) = (u(rng, &[2, 2]), u(rng, &[3]), p(rng, &[7]));
    push("flatten_concat", vec![a, b], r, |g, v| g.flatten_concat(&[v[0], v[1]]));

    let (a, b) = (u(rng, &[6]), u(rng, &[6]));
    push("cosine_similarity", vec![a, b], one, |g, v| g.cosine_similarity(v[0], v[1]));
    cases
}

fn tiny_model() -> ModelConfig {
    ModelConfig {
        in_channels: 3,
        num_classes: 3,
        extractor_channels: vec![4, 4],
        extractor_kernel: 3,
        disc_channels: vec![2, 1],
    }
}

fn random_labels(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize, c: usize) -> Vec<LabelMap> {
    (0..n)
        .map(|_| LabelMap::new(h, w, (0..h * w).map(|_| rng.random_range(0..c) as u8).collect()).expect("shape"))
        .collect()
}

/// Full generator objective on a 4x4, 3-class toy: segmentation on the
/// source ensemble, head-weight cosine, and weighted adversarial loss on the
/// target through a frozen discriminator.
fn generator_case(rng: &mut ChaCha8Rng, seed: u64) -> Result<Case<'static>> {
    let cfg = tiny_model();
    let mut gen = GeneratorParams::init(&cfg, seed);
    let disc = DiscriminatorParams::init(&cfg, seed);
    let xs = uniform(rng, &[2, 3, 4, 4], 0.0, 1.0);
    let xt = uniform(rng, &[2, 3, 4, 4], 0.0, 1.0);
    let labels = random_labels(rng, 2, 4, 4, 3);

    // The weight map is a constant of the objective, so fix it at the base point.
    let pred = crate::models::forward_generator(&xt, &gen)?;
    let w: AdaptiveWeightMap = adaptive_weight_map(&discrepancy_map(&pred.p1, &pred.p2)?, 40.0, 0.4)?;

    let layout: Vec<(usize, usize)> = gen.extractor.iter().chain([&gen.classifier1, &gen.classifier2]).map(|l| (l.stride, l.padding)).collect();
    Ok(Case {
        name: "clan_generator_loss",
        inputs: gen.take_tensors(),
        build: Box::new(move |g: &mut Graph, v: &[Var]| {
            let mut convs = bind_vars(v, &layout);
            let heads = [convs.pop().expect("head"), convs.pop().expect("head")];
            let bound = BoundGenerator {
                extractor: convs,
                heads: [heads[1], heads[0]],
            };
            let d = disc.bind(g, false);
            let s = g.constant(xs.clone());
            let t = g.constant(xt.clone());
            let out_s = bound.forward(g, s, Heads::Twin)?;
            let seg = seg_loss(g, out_s.ensemble, &labels)?;
            let out_t = bound.forward(g, t, Heads::Twin)?;
            let d_t = d.forward(g, out_t.ensemble)?;
            let adv = adv_loss_generator(g, d_t, &w)?;
            let (w1, w2) = bound.classifier_weight_vectors(g)?;
            let (wd, _) = weight_discrepancy_loss(g, w1, w2)?;
            total_generator_loss(g, seg, wd, adv, 0.01, 0.001)
        }),
    })
}

/// Pairs consecutive (weight, bias) vars with each layer's geometry.
fn bind_vars(v: &[Var], layout: &[(usize, usize)]) -> Vec<BoundConv> {
    v.chunks(2)
        .zip(layout)
        .map(|(wb, &(stride, padding))| BoundConv {
            weight: wb[0],
            bias: wb[1],
            stride,
            padding,
        })
        .collect()
}

fn discriminator_case(rng: &mut ChaCha8Rng, seed: u64) -> Result<Case<'static>> {
    let cfg = tiny_model();
    let mut disc = DiscriminatorParams::init(&cfg, seed);
    let gen = GeneratorParams::init(&cfg, seed);
    let ps = crate::models::forward_generator(&uniform(rng, &[2, 3, 4, 4], 0.0, 1.0), &gen)?.ensemble;
    let pt = crate::models::forward_generator(&uniform(rng, &[2, 3, 4, 4], 0.0, 1.0), &gen)?;
    let w = adaptive_weight_map(&discrepancy_map(&pt.p1, &pt.p2)?, 40.0, 0.4)?;
    let pt = pt.ensemble;
    let layout: Vec<(usize, usize)> = disc.layers.iter().map(|l| (l.stride, l.padding)).collect();
    Ok(Case {
        name: "clan_discriminator_loss",
        inputs: disc.take_tensors(),
        build: Box::new(move |g: &mut Graph, v: &[Var]| {
            let bound = BoundDiscriminator {
                layers: bind_vars(v, &layout),
            };
            let s = g.constant(ps.clone());
            let t = g.constant(pt.clone());
            let d_s = bound.forward(g, s)?;
            let d_t = bound.forward(g, t)?;
            adv_loss_discriminator(g, d_s, d_t, &w)
        }),
    })
}

/// Runs every case; the report lists the worst relative error per case.
pub fn run_grad_check(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = stream_rng(opts.seed, 0x6772_6164);
    let mut cases = op_cases(&mut rng);
    cases.push(generator_case(&mut rng, opts.seed)?);
    cases.push(discriminator_case(&mut rng, opts.seed)?);

    let mut reports: Vec<CaseReport> = Vec::new();
    for case in &cases {
        let r = check(case, opts)?;
        // Several cases may exercise the same op; keep the worst.
        match reports.iter_mut().find(|x| x.name == r.name) {
            Some(x) => {
                x.max_rel_error = x.max_rel_error.max(r.max_rel_error);
                x.entries += r.entries;
                x.passed &= r.passed;
            }
            None => reports.push(r),
        }
    }
    reports.push(check_stop_gradient(&mut rng, opts)?);
    Ok(GradCheckReport {
        tolerance: opts.tolerance,
        step: opts.step,
        cases: reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_build_passes() {
        let r = run_grad_check(&GradCheckOptions::default()).unwrap();
        for c in &r.cases {
            assert!(c.passed, "{} rel err {}", c.name, c.max_rel_error);
        }
        assert!(r.cases.iter().any(|c| c.name == "clan_generator_loss"));
    }

    #[test]
    fn sign_fault_is_caught() {
        let opts = GradCheckOptions::default().with_fault("softmax").unwrap();
        let r = run_grad_check(&opts).unwrap();
        let failed = r.failures();
        assert!(failed.contains(&"softmax"));
        assert!(failed.contains(&"clan_generator_loss"));
    }

    #[test]
    fn unknown_fault_is_rejected() {
        assert!(GradCheckOptions::default().with_fault("tanh").is_err());
    }
}
