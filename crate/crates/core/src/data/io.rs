//! On-disk dataset layout: a directory holding `manifest.json` plus one flat
//! little-endian `f64` image array and one `u8` label array per split.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Domain, LabelMap, LabelRole, LabeledImage};
use super::synth::{DatasetBundle, SynthConfig};
use crate::error::{Error, Result};
use crate::grad::Tensor;
use crate::models::config_hash;

pub const DATASET_FORMAT: &str = "clan-forge-dataset/1";
pub const MANIFEST_FILE: &str = "manifest.json";
const IMAGE_CHANNELS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitEntry {
    pub name: String,
    pub domain: Domain,
    pub labels_role: LabelRole,
    pub count: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub images_file: String,
    pub images_sha256: String,
    pub labels_file: String,
    pub labels_sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub config: SynthConfig,
    pub config_hash: String,
    pub splits: Vec<SplitEntry>,
}

const SPLITS: [(&str, Domain); 4] = [
    ("source_train", Domain::Source),
    ("target_train", Domain::Target),
    ("source_eval", Domain::Source),
    ("target_eval", Domain::Target),
];

impl Manifest {
    /// Parses and checks a manifest without touching any array files.
    pub fn from_json(text: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(text).map_err(|e| Error::format("dataset manifest", e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Error::format("dataset manifest", msg);
        if self.format != DATASET_FORMAT {
            return Err(bad(format!("unknown format `{}`", self.format)));
        }
        self.config.validate().map_err(|e| bad(e.to_string()))?;
        if config_hash(&self.config) != self.config_hash {
            return Err(bad("config hash does not match config".into()));
        }
        if self.splits.len() != SPLITS.len() {
            return Err(bad(format!("expected {} splits, found {}", SPLITS.len(), self.splits.len())));
        }
        let scene = &self.config.scene;
        for (entry, (name, domain)) in self.splits.iter().zip(SPLITS) {
            if entry.name != name || entry.domain != domain {
                return Err(bad(format!("split `{}` out of place (expected `{name}`)", entry.name)));
            }
            if entry.labels_role != LabelRole::from(domain) {
                return Err(bad(format!("split `{name}` has the wrong label role")));
            }
            if entry.channels != IMAGE_CHANNELS || entry.height != scene.height || entry.width != scene.width {
                return Err(bad(format!("split `{name}` dimensions disagree with the scene spec")));
            }
            if entry.count == 0 {
                return Err(bad(format!("split `{name}` is empty")));
            }
            for file in [&entry.images_file, &entry.labels_file] {
                if file.is_empty() || file.contains(['/', '\\']) || file.starts_with('.') {
                    return Err(bad(format!("file name `{file}` must be a plain name inside the dataset directory")));
                }
            }
        }
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn encode_images(items: &[LabeledImage]) -> Vec<u8> {
    items
        .iter()
        .flat_map(|it| it.image.data().iter().flat_map(|v| v.to_le_bytes()))
        .collect()
}

pub fn encode_labels(items: &[LabeledImage]) -> Vec<u8> {
    items.iter().flat_map(|it| it.labels.data.iter().copied()).collect()
}

/// Decodes `count` images of shape `[channels, height, width]`. Every value
/// must be finite and inside `[0, 1]`.
pub fn decode_images(bytes: &[u8], count: usize, channels: usize, height: usize, width: usize) -> Result<Vec<Tensor>> {
    let per_image = channels
        .checked_mul(height)
        .and_then(|v| v.checked_mul(width))
        .filter(|&v| v > 0)
        .ok_or_else(|| Error::format("image array", "degenerate image dimensions"))?;
    let expected = per_image
        .checked_mul(count)
        .and_then(|v| v.checked_mul(8))
        .ok_or_else(|| Error::format("image array", "size overflows"))?;
    if bytes.len() != expected {
        return Err(Error::format(
            "image array",
            format!("{} bytes, expected {expected}", bytes.len()),
        ));
    }
    bytes
        .chunks_exact(per_image * 8)
        .enumerate()
        .map(|(i, chunk)| {
            let data: Vec<f64> = chunk
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                .collect();
            if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::format("image array", format!("image {i} has value {v} outside [0, 1]")));
            }
            Tensor::new(vec![channels, height, width], data)
        })
        .collect()
}

/// Decodes `count` label maps, rejecting labels outside `[0, num_classes)`.
pub fn decode_labels(bytes: &[u8], count: usize, height: usize, width: usize, num_classes: usize) -> Result<Vec<LabelMap>> {
    let plane = height
        .checked_mul(width)
        .filter(|&v| v > 0)
        .ok_or_else(|| Error::format("label array", "degenerate label dimensions"))?;
    if Some(bytes.len()) != plane.checked_mul(count) {
        return Err(Error::format(
            "label array",
            format!("{} bytes for {count} maps of {height}x{width}", bytes.len()),
        ));
    }
    bytes
        .chunks_exact(plane)
        .enumerate()
        .map(|(image, chunk)| {
            if let Some(p) = chunk.iter().position(|&l| l as usize >= num_classes) {
                return Err(Error::LabelOutOfRange {
                    image,
                    row: p / width,
                    col: p % width,
                    label: chunk[p] as usize,
                    num_classes,
                });
            }
            LabelMap::new(height, width, chunk.to_vec())
        })
        .collect()
}

fn split_items<'a>(bundle: &'a DatasetBundle, name: &str) -> &'a [LabeledImage] {
    match name {
        "source_train" => &bundle.source_train,
        "target_train" => &bundle.target_train,
        "source_eval" => &bundle.source_eval,
        _ => &bundle.target_eval,
    }
}

/// Writes the bundle into `dir` (created if needed). Output bytes depend only
/// on the bundle contents.
pub fn save_bundle(bundle: &DatasetBundle, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let scene = &bundle.config.scene;
    let mut splits = Vec::new();
    for (name, domain) in SPLITS {
        let items = split_items(bundle, name);
        let images = encode_images(items);
        let labels = encode_labels(items);
        let images_file = format!("{name}.images.f64le");
        let labels_file = format!("{name}.labels.u8");
        std::fs::write(dir.join(&images_file), &images)?;
        std::fs::write(dir.join(&labels_file), &labels)?;
        splits.push(SplitEntry {
            name: name.to_string(),
            domain,
            labels_role: domain.into(),
            count: items.len(),
            channels: IMAGE_CHANNELS,
            height: scene.height,
            width: scene.width,
            images_file,
            images_sha256: sha256_hex(&images),
            labels_file,
            labels_sha256: sha256_hex(&labels),
        });
    }
    let manifest = Manifest {
        format: DATASET_FORMAT.to_string(),
        config: bundle.config.clone(),
        config_hash: bundle.config_hash.clone(),
        splits,
    };
    std::fs::write(dir.join(MANIFEST_FILE), manifest.to_json())?;
    Ok(())
}

pub fn load_bundle(dir: &Path) -> Result<DatasetBundle> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(Error::MissingDataset(dir.to_path_buf()));
    }
    let manifest = Manifest::from_json(&std::fs::read_to_string(&manifest_path)?)?;
    let num_classes = manifest.config.scene.num_classes;
    let mut loaded = Vec::new();
    for entry in &manifest.splits {
        let images = std::fs::read(dir.join(&entry.images_file))?;
        let labels = std::fs::read(dir.join(&entry.labels_file))?;
        if sha256_hex(&images) != entry.images_sha256 || sha256_hex(&labels) != entry.labels_sha256 {
            return Err(Error::format("dataset", format!("checksum mismatch in split `{}`", entry.name)));
        }
        let images = decode_images(&images, entry.count, entry.channels, entry.height, entry.width)?;
        let labels = decode_labels(&labels, entry.count, entry.height, entry.width, num_classes)?;
        loaded.push(
            images
                .into_iter()
                .zip(labels)
                .map(|(image, labels)| LabeledImage {
                    image,
                    labels,
                    domain: entry.domain,
                })
                .collect::<Vec<_>>(),
        );
    }
    let mut it = loaded.into_iter();
    let mut next = || it.next().expect("four validated splits");
    Ok(DatasetBundle {
        config: manifest.config.clone(),
        config_hash: manifest.config_hash.clone(),
        source_train: next(),
        target_train: next(),
        source_eval: next(),
        target_eval: next(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_decoder_locates_bad_pixel() {
        let err = decode_labels(&[0, 1, 2, 0, 0, 7], 1, 2, 3, 5).unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { row: 1, col: 2, label: 7, .. }));
        assert!(decode_labels(&[0; 5], 1, 2, 3, 5).is_err());
    }

    #[test]
    fn image_decoder_rejects_out_of_range() {
        let mut bytes: Vec<u8> = [0.5f64, 0.25, 1.0].iter().flat_map(|v| v.to_le_bytes()).collect();
        assert_eq!(decode_images(&bytes, 1, 3, 1, 1).unwrap()[0].data(), &[0.5, 0.25, 1.0]);
        bytes[16..24].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(decode_images(&bytes, 1, 3, 1, 1).is_err());
        assert!(decode_images(&bytes, usize::MAX, 3, 1, 1).is_err());
    }
}
