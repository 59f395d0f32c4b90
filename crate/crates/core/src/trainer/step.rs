use super::record::DStat;
use super::TrainConfig;
use crate::data::LabelMap;
use crate::error::{Error, Result};
use crate::grad::{adam_step, sgd_step, AdamState, Graph, SgdState, Tensor, Var};
use crate::losses::{
    adaptive_weight_map, adv_loss_discriminator, adv_loss_generator, discrepancy_map, seg_loss,
    total_generator_loss, weight_discrepancy_loss, AdaptiveWeightMap, LossBundle,
};
use crate::models::{DiscriminatorParams, GeneratorParams, Heads};

/// Labelled source images.
#[derive(Clone, Debug)]
pub struct SourceBatch {
    pub images: Tensor,
    pub labels: Vec<LabelMap>,
    pub indices: Vec<usize>,
}

/// Target images. No labels: they never reach the training step.
#[derive(Clone, Debug)]
pub struct TargetBatch {
    pub images: Tensor,
    pub indices: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub generator: GeneratorParams,
    pub discriminator: DiscriminatorParams,
    pub sgd: SgdState,
    pub adam: AdamState,
    /// Completed iterations.
    pub iteration: usize,
}

impl TrainState {
    pub fn init(config: &TrainConfig) -> Self {
        let mut generator = GeneratorParams::init(&config.model, config.seed);
        let mut discriminator = DiscriminatorParams::init(&config.model, config.seed);
        let g = generator.take_tensors();
        let d = discriminator.take_tensors();
        let sgd = SgdState::new(&g);
        let adam = AdamState::new(&d);
        generator.restore(g);
        discriminator.restore(d);
        Self {
            generator,
            discriminator,
            sgd,
            adam,
            iteration: 0,
        }
    }
}

/// What one iteration produced besides the parameter updates.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub losses: LossBundle,
    pub lr: f64,
    pub d_source: Option<DStat>,
    pub d_target: Option<DStat>,
    /// The map used by both phases; None for source-only training.
    pub weight_map: Option<AdaptiveWeightMap>,
}

fn grads_or_zero(g: &Graph, vars: &[Var]) -> Vec<Tensor> {
    vars.iter()
        .map(|&v| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(g.value(v).shape())))
        .collect()
}

fn ensure_finite(value: f64, term: &'static str, state: &TrainState, s: &SourceBatch, t: &TargetBatch) -> Result<()> {
    if value.is_finite() {
        return Ok(());
    }
    Err(Error::NonFiniteLoss {
        iteration: state.iteration,
        term,
        source_indices: s.indices.clone(),
        target_indices: t.indices.clone(),
    })
}

/// Phase 1 updates the generator by SGD with the discriminator frozen;
/// phase 2 updates the discriminator by Adam on the phase-1 predictions
/// with the generator frozen. The adaptive weight map is computed once.
pub fn train_iteration(
    state: &mut TrainState,
    config: &TrainConfig,
    source: &SourceBatch,
    target: &TargetBatch,
) -> Result<StepOutput> {
    let eff = config.effective();

    // Phase 1: generator.
    let mut g = Graph::new();
    let gen = state.generator.bind(&mut g, true);
    let disc = state.discriminator.bind(&mut g, false);
    let xs = g.constant(source.images.clone());
    let out_s = gen.forward(&mut g, xs, eff.heads)?;
    let seg = seg_loss(&mut g, out_s.ensemble, &source.labels)?;
    let mut losses = LossBundle {
        seg: g.value(seg).item(),
        ..LossBundle::default()
    };
    ensure_finite(losses.seg, "seg", state, source, target)?;

    let mut phase2 = None;
    let root = if eff.adversarial {
        let xt = g.constant(target.images.clone());
        let out_t = gen.forward(&mut g, xt, Heads::Twin)?;
        let m = discrepancy_map(g.value(out_t.p1), g.value(out_t.p2))?;
        let w = adaptive_weight_map(&m, eff.lambda_local, eff.epsilon)?;
        let d_t = disc.forward(&mut g, out_t.ensemble)?;
        let adv_g = adv_loss_generator(&mut g, d_t, &w)?;
        let (w1, w2) = gen.classifier_weight_vectors(&mut g)?;
        let (wd, _) = weight_discrepancy_loss(&mut g, w1, w2)?;
        let total = total_generator_loss(&mut g, seg, wd, adv_g, eff.lambda_weight, eff.lambda_adv)?;
        losses.weight_disc = g.value(wd).item();
        losses.adv_g = g.value(adv_g).item();
        losses.total_g = g.value(total).item();
        ensure_finite(losses.weight_disc, "weight", state, source, target)?;
        ensure_finite(losses.adv_g, "adv_g", state, source, target)?;
        phase2 = Some((g.value(out_s.ensemble).clone(), g.value(out_t.ensemble).clone(), w));
        total
    } else {
        losses.total_g = losses.seg;
        seg
    };
    ensure_finite(losses.total_g, "total_g", state, source, target)?;
    g.backward(root)?;
    let vars = gen.param_vars();
    let grads = grads_or_zero(&g, &vars);
    drop(g);

    let schedule = config.sgd_schedule();
    let mut params = state.generator.take_tensors();
    let lr = sgd_step(&mut params, &grads, &mut state.sgd, &schedule, state.iteration);
    state.generator.restore(params);
    let lr = lr?;

    // Phase 2: discriminator.
    let mut output = StepOutput {
        losses,
        lr,
        d_source: None,
        d_target: None,
        weight_map: None,
    };
    if let Some((p_s, p_t, w)) = phase2 {
        for step in 0..config.d_steps {
            let mut g = Graph::new();
            let disc = state.discriminator.bind(&mut g, true);
            let ps = g.constant(p_s.clone());
            let pt = g.constant(p_t.clone());
            let d_s = disc.forward(&mut g, ps)?;
            let d_t = disc.forward(&mut g, pt)?;
            let adv_d = adv_loss_discriminator(&mut g, d_s, d_t, &w)?;
            let value = g.value(adv_d).item();
            ensure_finite(value, "adv_d", state, source, target)?;
            if step == 0 {
                output.losses.adv_d = value;
                output.d_source = Some(DStat::of(g.value(d_s).data()));
                output.d_target = Some(DStat::of(g.value(d_t).data()));
            }
            g.backward(adv_d)?;
            let grads = grads_or_zero(&g, &disc.param_vars());
            drop(g);
            let mut params = state.discriminator.take_tensors();
            let r = adam_step(&mut params, &grads, &mut state.adam, &config.adam);
            state.discriminator.restore(params);
            r?;
        }
        output.weight_map = Some(w);
    }
    state.iteration += 1;
    Ok(output)
}
