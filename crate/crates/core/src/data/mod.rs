//! Synthetic source/target segmentation domains and their on-disk format.

pub mod io;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::Tensor;

pub use synth::{
    generate_bundle, generate_scene, make_dataset, render, DatasetBundle, DomainTransform, SceneGenerator, SceneSpec,
    SynthConfig,
};

/// Per-pixel class indices, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::InvalidShape {
                shape: vec![height, width],
                len: data.len(),
            });
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, class: u8) -> Self {
        Self {
            height,
            width,
            data: vec![class; height * width],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    pub fn max_label(&self) -> u8 {
        self.data.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn tag(self) -> u64 {
        match self {
            Domain::Source => 1,
            Domain::Target => 2,
        }
    }
}

/// Who may read the labels of an item.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelRole {
    Training,
    EvaluationOnly,
}

impl From<Domain> for LabelRole {
    fn from(d: Domain) -> Self {
        match d {
            Domain::Source => LabelRole::Training,
            Domain::Target => LabelRole::EvaluationOnly,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    /// `[F, H, W]`, values in `[0, 1]`.
    pub image: Tensor,
    pub labels: LabelMap,
    pub domain: Domain,
}

impl LabeledImage {
    pub fn label_role(&self) -> LabelRole {
        self.domain.into()
    }
}

/// Stacks images of the selected items into an `[N,F,H,W]` batch.
pub fn stack_images(items: &[LabeledImage], indices: &[usize]) -> Result<Tensor> {
    let imgs: Vec<Tensor> = indices.iter().map(|&i| items[i].image.clone()).collect();
    Tensor::stack(&imgs)
}
