use std::path::Path;

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;

use super::record::{EvalSnapshot, Event, IterationRecord, RunRecord};
use super::step::{train_iteration, SourceBatch, StepOutput, TargetBatch, TrainState};
use super::TrainConfig;
use crate::data::{io::load_bundle, stack_images, DatasetBundle, LabeledImage};
use crate::error::{Error, Result};
use crate::metrics::{argmax_labels, ccd, per_class_iou, ClassCenters, ConfusionMatrix};
use crate::models::{config_hash, forward_generator_with, Checkpoint, GeneratorParams, Heads};
use crate::rng::{stream, stream_rng};

const EVAL_CHUNK: usize = 16;

/// Evaluation-time view of a generator: target-split IoU and class centers
/// of extractor features on both evaluation splits.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub source_centers: ClassCenters,
    pub target_centers: ClassCenters,
}

pub fn evaluate(generator: &GeneratorParams, heads: Heads, data: &DatasetBundle) -> Result<Evaluation> {
    let c = generator.num_classes();
    let f = generator.classifier1.weight.shape()[1];
    let mut confusion = ConfusionMatrix::new(c);
    let mut source_centers = ClassCenters::new(c, f);
    let mut target_centers = ClassCenters::new(c, f);
    let splits: [(&[LabeledImage], bool); 2] = [(&data.source_eval, false), (&data.target_eval, true)];
    for (items, is_target) in splits {
        for start in (0..items.len()).step_by(EVAL_CHUNK) {
            let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(items.len())).collect();
            let x = stack_images(items, &idx)?;
            let pred = forward_generator_with(&x, generator, heads)?;
            let labels: Vec<_> = idx.iter().map(|&i| items[i].labels.clone()).collect();
            if is_target {
                for (truth, p) in labels.iter().zip(argmax_labels(&pred.ensemble)?) {
                    confusion.accumulate(truth, &p)?;
                }
                target_centers.accumulate(&pred.features, &labels)?;
            } else {
                source_centers.accumulate(&pred.features, &labels)?;
            }
        }
    }
    Ok(Evaluation {
        confusion,
        source_centers,
        target_centers,
    })
}

/// Result of a complete run.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub record: RunRecord,
    pub initial: Checkpoint,
    pub last: Checkpoint,
    pub ccd: ccd::CcdSeries,
}

fn sample_source(rng: &mut ChaCha8Rng, items: &[LabeledImage], batch: usize) -> Result<SourceBatch> {
    let indices = sample(rng, items.len(), batch).into_vec();
    Ok(SourceBatch {
        images: stack_images(items, &indices)?,
        labels: indices.iter().map(|&i| items[i].labels.clone()).collect(),
        indices,
    })
}

fn sample_target(rng: &mut ChaCha8Rng, items: &[LabeledImage], batch: usize) -> Result<TargetBatch> {
    let indices = sample(rng, items.len(), batch).into_vec();
    Ok(TargetBatch {
        images: stack_images(items, &indices)?,
        indices,
    })
}

fn checkpoint(config: &TrainConfig, state: &TrainState) -> Checkpoint {
    Checkpoint::new(
        config_hash(config),
        config.model.clone(),
        state.iteration,
        state.generator.clone(),
        state.discriminator.clone(),
    )
}

/// Runs the configured number of iterations, evaluating at iteration 0,
/// every `eval_every` iterations and at the end. Single-threaded and
/// deterministic given the config.
pub fn train(config: &TrainConfig, data: &DatasetBundle) -> Result<TrainOutput> {
    train_with(config, data, |_, _| {})
}

/// [`train`] with a callback after every iteration (progress reporting,
/// invariant checks).
pub fn train_with(
    config: &TrainConfig,
    data: &DatasetBundle,
    mut on_step: impl FnMut(&TrainState, &StepOutput),
) -> Result<TrainOutput> {
    config.validate()?;
    if data.config != config.data || data.config_hash != config_hash(&data.config) {
        return Err(Error::Config {
            key: "data".into(),
            msg: "dataset does not match the data section of the config".into(),
        });
    }
    let heads = config.effective().heads;
    let mut state = TrainState::init(config);
    let initial = checkpoint(config, &state);
    let mut record = RunRecord::new(config.clone(), data.config_hash.clone());
    let mut series = ccd::CcdSeries::default();

    let mut snapshot = |state: &TrainState, record: &mut RunRecord| -> Result<()> {
        let ev = evaluate(&state.generator, heads, data)?;
        let report = per_class_iou(&ev.confusion);
        let normalized = series.push(state.iteration, ev.source_centers, ev.target_centers);
        record.push(Event::Eval(EvalSnapshot {
            iteration: state.iteration,
            miou: report.miou,
            iou: report.iou,
            ccd_raw: series.raw.last().cloned().unwrap_or_default(),
            ccd: normalized,
        }));
        Ok(())
    };

    snapshot(&state, &mut record)?;
    let mut src_rng = stream_rng(config.seed, stream::SOURCE_BATCHES);
    let mut tgt_rng = stream_rng(config.seed, stream::TARGET_BATCHES);
    for _ in 0..config.iterations {
        let s = sample_source(&mut src_rng, &data.source_train, config.batch_source)?;
        let t = sample_target(&mut tgt_rng, &data.target_train, config.batch_target)?;
        let out = train_iteration(&mut state, config, &s, &t)?;
        on_step(&state, &out);
        let (weight_min, weight_max) = match &out.weight_map {
            Some(w) => {
                let (lo, hi) = w.min_max();
                (Some(lo), Some(hi))
            }
            None => (None, None),
        };
        record.push(Event::Iteration(IterationRecord {
            iteration: state.iteration,
            losses: out.losses,
            lr: out.lr,
            d_source: out.d_source,
            d_target: out.d_target,
            weight_min,
            weight_max,
            source_indices: s.indices,
            target_indices: t.indices,
        }));
        if state.iteration.is_multiple_of(config.eval_every) || state.iteration == config.iterations {
            snapshot(&state, &mut record)?;
        }
    }
    let last = checkpoint(config, &state);
    Ok(TrainOutput {
        record,
        initial,
        last,
        ccd: series,
    })
}

/// Loads the dataset directory, adopts its data config and trains.
pub fn train_from_dir(config: &TrainConfig, dir: &Path) -> Result<TrainOutput> {
    let data = load_bundle(dir)?;
    let config = TrainConfig {
        data: data.config.clone(),
        ..config.clone()
    };
    train(&config, &data)
}
