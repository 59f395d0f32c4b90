//! Procedural scenes: random rectangles, discs and stripes composited over a
//! background class, rendered through a per-domain colour transform.
//!
//! Label generation is shared by both domains; only rendering differs, so
//! the shift between source and target is purely in pixel space.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Domain, LabelMap, LabeledImage};
use crate::error::{Error, Result};
use crate::grad::Tensor;
use crate::models::config_hash;
use crate::rng::{derive_seed, stream, stream_rng};

/// Classes at or below this frequency count as rare.
pub const RARE_FREQUENCY: f64 = 0.05;

const CALIBRATION_SCENES: usize = 400;
const CALIBRATION_ROUNDS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub class_frequency: Vec<f64>,
    /// Inclusive range of shapes composited per scene.
    pub shape_count_range: [usize; 2],
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            num_classes: 5,
            class_frequency: vec![0.55, 0.20, 0.15, 0.06, 0.04],
            shape_count_range: [3, 9],
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Error::Config {
            key: format!("scene.{key}"),
            msg,
        };
        if self.height == 0 || self.width == 0 {
            return Err(bad("height", "image dimensions must be positive".into()));
        }
        if self.num_classes < 3 || self.num_classes > 255 {
            return Err(bad("num_classes", format!("{} not in [3, 255]", self.num_classes)));
        }
        if self.class_frequency.len() != self.num_classes {
            return Err(bad(
                "class_frequency",
                format!("{} entries for {} classes", self.class_frequency.len(), self.num_classes),
            ));
        }
        if self.class_frequency.iter().any(|&f| !(f > 0.0 && f.is_finite())) {
            return Err(bad("class_frequency", "entries must be positive".into()));
        }
        let total: f64 = self.class_frequency.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(bad("class_frequency", format!("sums to {total}, not 1")));
        }
        if !self.class_frequency.iter().any(|&f| f <= RARE_FREQUENCY) {
            return Err(bad(
                "class_frequency",
                format!("needs at least one rare class (frequency <= {RARE_FREQUENCY})"),
            ));
        }
        if self.shape_count_range[0] > self.shape_count_range[1] {
            return Err(bad("shape_count_range", "min exceeds max".into()));
        }
        Ok(())
    }

    /// The most frequent class, which fills everything no shape covers.
    pub fn background(&self) -> usize {
        self.class_frequency
            .iter()
            .enumerate()
            .fold(0, |best, (i, &f)| if f > self.class_frequency[best] { i } else { best })
    }

    pub fn rare_classes(&self) -> Vec<usize> {
        (0..self.num_classes)
            .filter(|&c| self.class_frequency[c] <= RARE_FREQUENCY)
            .collect()
    }
}

#[derive(Clone, Copy, Debug)]
enum ShapeKind {
    Rect,
    Disc,
    Stripe,
}

/// Scene sampler with per-class shape areas calibrated so that the expected
/// class frequencies match the spec despite occlusion and clipping.
#[derive(Clone, Debug)]
pub struct SceneGenerator {
    spec: SceneSpec,
    background: usize,
    /// Probability that a shape gets class `c` (0 for the background).
    class_weights: Vec<f64>,
    area_scale: Vec<f64>,
}

impl SceneGenerator {
    pub fn new(spec: &SceneSpec) -> Result<Self> {
        spec.validate()?;
        let background = spec.background();
        let fg_total = 1.0 - spec.class_frequency[background];
        let class_weights = (0..spec.num_classes)
            .map(|c| if c == background { 0.0 } else { spec.class_frequency[c] / fg_total })
            .collect();
        let mut gen = Self {
            spec: spec.clone(),
            background,
            class_weights,
            area_scale: vec![1.0; spec.num_classes],
        };
        gen.calibrate();
        Ok(gen)
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    fn base_area(&self) -> f64 {
        let [lo, hi] = self.spec.shape_count_range;
        let mean_count = (lo + hi) as f64 / 2.0;
        let fg = 1.0 - self.spec.class_frequency[self.background];
        fg * (self.spec.height * self.spec.width) as f64 / mean_count.max(1.0)
    }

    fn calibrate(&mut self) {
        if self.spec.shape_count_range[1] == 0 {
            return;
        }
        let c = self.spec.num_classes;
        for round in 0..CALIBRATION_ROUNDS {
            let mut counts = vec![0usize; c];
            for i in 0..CALIBRATION_SCENES {
                let map = self.generate(derive_seed(round as u64, stream::CALIBRATION, i as u64));
                for &l in &map.data {
                    counts[l as usize] += 1;
                }
            }
            let total = (CALIBRATION_SCENES * self.spec.height * self.spec.width) as f64;
            for k in 0..c {
                if k == self.background {
                    continue;
                }
                let observed = counts[k] as f64 / total;
                let ratio = if observed > 0.0 {
                    self.spec.class_frequency[k] / observed
                } else {
                    2.0
                };
                self.area_scale[k] = (self.area_scale[k] * ratio.powf(0.8)).clamp(0.02, 50.0);
            }
        }
        for k in 0..c {
            if k != self.background && self.area_scale[k] * self.base_area() * 0.5 < 1.0 {
                log::warn!(
                    "class {k}: frequency target {} implies shapes under one pixel; it may be unreachable",
                    self.spec.class_frequency[k]
                );
            }
        }
    }

    pub fn generate(&self, seed: u64) -> LabelMap {
        let (h, w) = (self.spec.height, self.spec.width);
        let mut map = LabelMap::filled(h, w, self.background as u8);
        let mut rng = stream_rng(seed, stream::SCENE);
        let [lo, hi] = self.spec.shape_count_range;
        let count = rng.random_range(lo..=hi);
        for _ in 0..count {
            let class = self.sample_class(&mut rng);
            let area = self.area_scale[class] * self.base_area() * rng.random_range(0.5..1.5);
            let kind = match rng.random_range(0..3) {
                0 => ShapeKind::Rect,
                1 => ShapeKind::Disc,
                _ => ShapeKind::Stripe,
            };
            paint(&mut map, kind, area, class as u8, &mut rng);
        }
        map
    }

    fn sample_class(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (c, &p) in self.class_weights.iter().enumerate() {
            acc += p;
            if u < acc {
                return c;
            }
        }
        self.class_weights.iter().rposition(|&p| p > 0.0).expect("a foreground class")
    }
}

fn paint(map: &mut LabelMap, kind: ShapeKind, area: f64, class: u8, rng: &mut ChaCha8Rng) {
    let (h, w) = (map.height as f64, map.width as f64);
    let cx = rng.random_range(0.0..w);
    let cy = rng.random_range(0.0..h);
    let inside: Box<dyn Fn(f64, f64) -> bool> = match kind {
        ShapeKind::Rect => {
            let aspect = rng.random_range(0.5..2.0);
            let half_w = (area * aspect).sqrt() / 2.0;
            let half_h = area / (4.0 * half_w);
            Box::new(move |x, y| (x - cx).abs() <= half_w && (y - cy).abs() <= half_h)
        }
        ShapeKind::Disc => {
            let r2 = area / PI;
            Box::new(move |x, y| (x - cx).powi(2) + (y - cy).powi(2) <= r2)
        }
        ShapeKind::Stripe => {
            let theta = rng.random_range(0.0..PI);
            let (dx, dy) = (theta.cos(), theta.sin());
            let len = rng.random_range(0.5..1.0) * h.max(w);
            let half_t = (area / len / 2.0).max(0.5);
            Box::new(move |x, y| {
                let (rx, ry) = (x - cx, y - cy);
                (rx * dx + ry * dy).abs() <= len / 2.0 && (-rx * dy + ry * dx).abs() <= half_t
            })
        }
    };
    for row in 0..map.height {
        for col in 0..map.width {
            if inside(col as f64 + 0.5, row as f64 + 0.5) {
                map.data[row * map.width + col] = class;
            }
        }
    }
}

/// Label map for one scene. Builds (and calibrates) a [`SceneGenerator`];
/// reuse a generator directly when sampling many scenes.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<LabelMap> {
    Ok(SceneGenerator::new(spec)?.generate(seed))
}

/// Pixel-space appearance of one domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainTransform {
    /// Mean RGB colour per class.
    pub class_colors: Vec<[f64; 3]>,
    pub noise_std: f64,
    pub gain: f64,
    pub offset: f64,
    /// Spatial frequency (cycles per pixel) of the class-oriented texture.
    pub texture_frequency: f64,
    pub texture_amplitude: f64,
}

fn hsv_to_rgb(hue_deg: f64, s: f64, v: f64) -> [f64; 3] {
    let h = hue_deg.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

pub const DEFAULT_HUE_ROTATION: f64 = 30.0;

impl DomainTransform {
    /// Evenly spaced hues, rotated by `hue_rotation` degrees.
    pub fn palette(num_classes: usize, hue_rotation: f64) -> Vec<[f64; 3]> {
        (0..num_classes)
            .map(|c| {
                let value = if c % 2 == 0 { 0.8 } else { 0.6 };
                hsv_to_rgb(360.0 * c as f64 / num_classes as f64 + hue_rotation, 0.65, value)
            })
            .collect()
    }

    pub fn source_default(num_classes: usize) -> Self {
        Self {
            class_colors: Self::palette(num_classes, 0.0),
            noise_std: 0.05,
            gain: 1.0,
            offset: 0.0,
            texture_frequency: 0.25,
            texture_amplitude: 0.1,
        }
    }

    /// Hue-rotated palette, doubled noise, gain 0.8 and offset 0.1.
    pub fn target_default(num_classes: usize) -> Self {
        Self {
            class_colors: Self::palette(num_classes, DEFAULT_HUE_ROTATION),
            noise_std: 0.10,
            gain: 0.8,
            offset: 0.1,
            ..Self::source_default(num_classes)
        }
    }

    pub fn validate(&self, num_classes: usize, key: &str) -> Result<()> {
        let bad = |msg: String| Error::Config {
            key: key.to_string(),
            msg,
        };
        if self.class_colors.len() != num_classes {
            return Err(bad(format!("{} colours for {num_classes} classes", self.class_colors.len())));
        }
        let finite = self
            .class_colors
            .iter()
            .flatten()
            .chain([&self.noise_std, &self.gain, &self.offset, &self.texture_frequency, &self.texture_amplitude])
            .all(|v| v.is_finite());
        if !finite || self.noise_std < 0.0 {
            return Err(bad("parameters must be finite and noise_std non-negative".into()));
        }
        Ok(())
    }
}

/// `[3, H, W]` image: class colour plus oriented texture plus Gaussian noise,
/// then gain and offset, clipped to `[0, 1]`.
pub fn render(labels: &LabelMap, transform: &DomainTransform, seed: u64) -> Result<Tensor> {
    let c = transform.class_colors.len();
    if labels.max_label() as usize >= c {
        return Err(Error::invalid(
            "render",
            format!("label {} has no colour ({} classes)", labels.max_label(), c),
        ));
    }
    let (h, w) = (labels.height, labels.width);
    let plane = h * w;
    let mut rng = stream_rng(seed, stream::RENDER);
    let noise = Normal::new(0.0, transform.noise_std).map_err(|e| Error::invalid("render", e.to_string()))?;
    let mut data = vec![0.0; 3 * plane];
    for row in 0..h {
        for col in 0..w {
            let class = labels.get(row, col) as usize;
            let theta = PI * class as f64 / c as f64;
            let phase = 2.0 * PI * transform.texture_frequency * (col as f64 * theta.cos() + row as f64 * theta.sin());
            let texture = transform.texture_amplitude * phase.sin();
            for ch in 0..3 {
                let n = if transform.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                let v = transform.class_colors[class][ch] + texture + n;
                data[ch * plane + row * w + col] = (transform.gain * v + transform.offset).clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new(vec![3, h, w], data)
}

/// A generated split with the hash of everything that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub items: Vec<LabeledImage>,
    pub config_hash: String,
}

fn make_split(
    generator: &SceneGenerator,
    n: usize,
    domain: Domain,
    split_tag: u64,
    transform: &DomainTransform,
    seed: u64,
) -> Result<Vec<LabeledImage>> {
    (0..n as u64)
        .map(|i| {
            let labels = generator.generate(derive_seed(seed, split_tag, i));
            let image = render(&labels, transform, derive_seed(seed, split_tag + 1000, i))?;
            Ok(LabeledImage { image, labels, domain })
        })
        .collect()
}

/// `n` independent scenes for one domain. Source and target draw scene
/// seeds from disjoint streams.
pub fn make_dataset(n: usize, domain: Domain, spec: &SceneSpec, transform: &DomainTransform, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("make_dataset", "n must be at least 1"));
    }
    transform.validate(spec.num_classes, "transform")?;
    let generator = SceneGenerator::new(spec)?;
    let items = make_split(&generator, n, domain, domain.tag(), transform, seed)?;
    Ok(Dataset {
        items,
        config_hash: config_hash(&(spec, transform, seed, n, domain)),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub scene: SceneSpec,
    pub source: DomainTransform,
    pub target: DomainTransform,
    pub n_source: usize,
    pub n_target: usize,
    pub n_eval: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let scene = SceneSpec::default();
        let c = scene.num_classes;
        Self {
            scene,
            source: DomainTransform::source_default(c),
            target: DomainTransform::target_default(c),
            n_source: 256,
            n_target: 256,
            n_eval: 32,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.source.validate(self.scene.num_classes, "data.source")?;
        self.target.validate(self.scene.num_classes, "data.target")?;
        for (key, n) in [("n_source", self.n_source), ("n_target", self.n_target), ("n_eval", self.n_eval)] {
            if n == 0 {
                return Err(Error::Config {
                    key: format!("data.{key}"),
                    msg: "must be at least 1".into(),
                });
            }
        }
        Ok(())
    }
}

/// Training and evaluation splits for both domains. Target-domain labels are
/// only ever read by evaluation code.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub config: SynthConfig,
    pub config_hash: String,
    pub source_train: Vec<LabeledImage>,
    pub target_train: Vec<LabeledImage>,
    pub source_eval: Vec<LabeledImage>,
    pub target_eval: Vec<LabeledImage>,
}

mod split_tag {
    pub const SOURCE_TRAIN: u64 = 1;
    pub const TARGET_TRAIN: u64 = 2;
    pub const SOURCE_EVAL: u64 = 3;
    pub const TARGET_EVAL: u64 = 4;
}

pub fn generate_bundle(config: &SynthConfig) -> Result<DatasetBundle> {
    config.validate()?;
    let generator = SceneGenerator::new(&config.scene)?;
    let split = |n, domain, tag, t: &DomainTransform| make_split(&generator, n, domain, tag, t, config.seed);
    Ok(DatasetBundle {
        config: config.clone(),
        config_hash: config_hash(config),
        source_train: split(config.n_source, Domain::Source, split_tag::SOURCE_TRAIN, &config.source)?,
        target_train: split(config.n_target, Domain::Target, split_tag::TARGET_TRAIN, &config.target)?,
        source_eval: split(config.n_eval, Domain::Source, split_tag::SOURCE_EVAL, &config.source)?,
        target_eval: split(config.n_eval, Domain::Target, split_tag::TARGET_EVAL, &config.target)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_shapes_means_all_background() {
        let spec = SceneSpec {
            shape_count_range: [0, 0],
            ..SceneSpec::default()
        };
        let map = generate_scene(&spec, 42).unwrap();
        assert!(map.data.iter().all(|&l| l == 0));
    }

    #[test]
    fn scenes_are_seed_deterministic() {
        let g = SceneGenerator::new(&SceneSpec::default()).unwrap();
        assert_eq!(g.generate(9), g.generate(9));
        assert_ne!(g.generate(9), g.generate(10));
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = SceneSpec::default();
        s.class_frequency = vec![0.5, 0.3, 0.2, 0.0, 0.0];
        assert!(s.validate().is_err());
        let mut s = SceneSpec::default();
        s.class_frequency = vec![0.4, 0.2, 0.2, 0.1, 0.1];
        assert!(s.validate().is_err(), "no rare class");
        let mut s = SceneSpec::default();
        s.num_classes = 2;
        s.class_frequency = vec![0.96, 0.04];
        assert!(s.validate().is_err());
    }

    #[test]
    fn clean_render_is_colour_fill() {
        let map = LabelMap::new(2, 3, vec![0, 1, 2, 2, 1, 0]).unwrap();
        let mut t = DomainTransform::source_default(3);
        t.noise_std = 0.0;
        t.texture_amplitude = 0.0;
        let img = render(&map, &t, 1).unwrap();
        for (px, &l) in map.data.iter().enumerate() {
            for ch in 0..3 {
                assert_eq!(img.data()[ch * 6 + px], t.class_colors[l as usize][ch]);
            }
        }
    }

    #[test]
    fn domains_share_labels_differ_in_pixels() {
        let map = generate_scene(&SceneSpec::default(), 5).unwrap();
        let s = render(&map, &DomainTransform::source_default(5), 3).unwrap();
        let t = render(&map, &DomainTransform::target_default(5), 3).unwrap();
        assert_ne!(s, t);
        assert_eq!(s, render(&map, &DomainTransform::source_default(5), 3).unwrap());
        assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn dataset_contracts() {
        let spec = SceneSpec::default();
        let one = make_dataset(1, Domain::Source, &spec, &DomainTransform::source_default(5), 3).unwrap();
        assert_eq!(one.items.len(), 1);
        assert_eq!(one.config_hash.len(), 64);
        let src = make_dataset(8, Domain::Source, &spec, &DomainTransform::source_default(5), 3).unwrap();
        let tgt = make_dataset(8, Domain::Target, &spec, &DomainTransform::target_default(5), 3).unwrap();
        for a in &src.items {
            assert!(tgt.items.iter().all(|b| a.labels != b.labels));
        }
        assert!(make_dataset(0, Domain::Source, &spec, &DomainTransform::source_default(5), 3).is_err());
        assert_eq!(tgt.items[0].label_role(), super::super::LabelRole::EvaluationOnly);
    }
}
