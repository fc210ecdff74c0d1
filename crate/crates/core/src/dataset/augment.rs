//! Seeded image augmentation.
//!
//! Two recipes are available. `Set1` is photometric (grayscale on ~3% of
//! outputs, saturation ±5%, brightness ±10%, exposure ±10%, Gaussian blur with
//! sigma up to 0.5px, salt-and-pepper noise on up to 1% of pixels) followed by
//! a 2×2 mosaic. `Set2` flips horizontally and vertically (each with
//! probability 1/2), varies saturation ±25% and adds noise on up to 5% of
//! pixels.
//!
//! Brightness scales every channel by `1 + b`. Exposure draws `f ∈ [-1, 1]` and
//! scales by `1.1^f`, a stop-like factor inside the ±10% band.

use std::path::Path;

use image::imageops::{self, FilterType};
use image::{Rgb, RgbImage};
use rand::distributions::{Bernoulli, Distribution};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::domain::GroundTruth;

/// Boxes smaller than this (normalized area) are dropped after geometric ops.
pub const MIN_BOX_AREA: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Recipe {
    None,
    Set1,
    Set2,
}

/// Parameter ranges of a recipe. Symmetric ranges are given by their half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecipeBounds {
    pub grayscale_probability: f64,
    pub saturation: f64,
    pub brightness: f64,
    pub exposure: f64,
    pub blur_sigma_max: f64,
    pub noise_max: f64,
    pub flip: bool,
    pub mosaic: bool,
}

impl Recipe {
    pub fn bounds(self) -> RecipeBounds {
        match self {
            Recipe::None => RecipeBounds {
                grayscale_probability: 0.0,
                saturation: 0.0,
                brightness: 0.0,
                exposure: 0.0,
                blur_sigma_max: 0.0,
                noise_max: 0.0,
                flip: false,
                mosaic: false,
            },
            Recipe::Set1 => RecipeBounds {
                grayscale_probability: 0.03,
                saturation: 0.05,
                brightness: 0.10,
                exposure: 0.10,
                blur_sigma_max: 0.5,
                noise_max: 0.01,
                flip: false,
                mosaic: true,
            },
            Recipe::Set2 => RecipeBounds {
                grayscale_probability: 0.0,
                saturation: 0.25,
                brightness: 0.0,
                exposure: 0.0,
                blur_sigma_max: 0.0,
                noise_max: 0.05,
                flip: true,
                mosaic: false,
            },
        }
    }
}

impl std::str::FromStr for Recipe {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Recipe::None),
            "set1" | "set3" => Ok(Recipe::Set1),
            "set2" => Ok(Recipe::Set2),
            other => Err(DatasetError::Config(format!("unknown augmentation recipe `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AugmentationPlan {
    pub recipe: Recipe,
    pub seed: u64,
    /// Augmented outputs produced per source image.
    pub copies: usize,
}

impl AugmentationPlan {
    pub fn new(recipe: Recipe, seed: u64) -> Self {
        Self { recipe, seed, copies: 1 }
    }
}

/// One draw of augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AugmentParams {
    pub grayscale: bool,
    /// Relative saturation change.
    pub saturation: f64,
    /// Relative brightness change.
    pub brightness: f64,
    /// Relative exposure change (`factor - 1`).
    pub exposure: f64,
    pub blur_sigma: f64,
    /// Fraction of pixels replaced by salt-and-pepper noise.
    pub noise_fraction: f64,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
}

fn symmetric<R: Rng>(rng: &mut R, half_width: f64) -> f64 {
    if half_width > 0.0 {
        rng.gen_range(-half_width..=half_width)
    } else {
        0.0
    }
}

impl AugmentParams {
    /// Draws parameters. Grayscale is always the first draw so that the
    /// selection is a plain Bernoulli trial on the stream.
    pub fn draw<R: Rng>(bounds: &RecipeBounds, rng: &mut R) -> Self {
        let grayscale = Bernoulli::new(bounds.grayscale_probability)
            .expect("probability in [0, 1]")
            .sample(rng);
        let saturation = symmetric(rng, bounds.saturation);
        let brightness = symmetric(rng, bounds.brightness);
        let exposure = if bounds.exposure > 0.0 {
            let stops: f64 = rng.gen_range(-1.0..=1.0);
            (1.0 + bounds.exposure).powf(stops) - 1.0
        } else {
            0.0
        };
        let blur_sigma = if bounds.blur_sigma_max > 0.0 {
            rng.gen_range(0.0..=bounds.blur_sigma_max)
        } else {
            0.0
        };
        let noise_fraction = if bounds.noise_max > 0.0 {
            rng.gen_range(0.0..=bounds.noise_max)
        } else {
            0.0
        };
        let (flip_horizontal, flip_vertical) = if bounds.flip {
            (rng.gen_bool(0.5), rng.gen_bool(0.5))
        } else {
            (false, false)
        };
        Self {
            grayscale,
            saturation,
            brightness,
            exposure,
            blur_sigma,
            noise_fraction,
            flip_horizontal,
            flip_vertical,
        }
    }

    pub fn within(&self, bounds: &RecipeBounds) -> bool {
        let sym = |v: f64, b: f64| v >= -b && v <= b;
        (bounds.grayscale_probability > 0.0 || !self.grayscale)
            && sym(self.saturation, bounds.saturation)
            && sym(self.brightness, bounds.brightness)
            && sym(self.exposure, bounds.exposure)
            && (0.0..=bounds.blur_sigma_max).contains(&self.blur_sigma)
            && (0.0..=bounds.noise_max).contains(&self.noise_fraction)
            && (bounds.flip || !(self.flip_horizontal || self.flip_vertical))
    }
}

/// Pixels plus their boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: RgbImage,
    pub truths: Vec<GroundTruth>,
}

impl LabeledImage {
    pub fn new(image: RgbImage, truths: Vec<GroundTruth>) -> Self {
        Self { image, truths }
    }

    pub fn load(path: impl AsRef<Path>, truths: Vec<GroundTruth>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let image = image::open(path)
            .map_err(|e| DatasetError::Image {
                path: path.display().to_string(),
                message: e.to_string(),
            })?
            .to_rgb8();
        Ok(Self { image, truths })
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let path = path.as_ref();
        self.image
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| DatasetError::Image {
                path: path.display().to_string(),
                message: e.to_string(),
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub sample: LabeledImage,
    pub params: AugmentParams,
    /// Ids of the other images composited in, when mosaic ran.
    pub mosaic_partners: Vec<String>,
}

/// Per-image random stream: depends only on the plan seed and the image id.
pub fn image_rng(seed: u64, image_id: &str) -> ChaCha8Rng {
    // FNV-1a of the id, then a splitmix64 finalizer over the combined value
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in image_id.bytes() {
        h ^= u64::from(byte);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = (seed ^ h).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn luma(p: &Rgb<u8>) -> f64 {
    0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2])
}

/// Replaces each pixel by its floor-rounded luma on all channels.
pub(crate) fn grayscale(image: &mut RgbImage) {
    for p in image.pixels_mut() {
        let y = luma(p).floor() as u8;
        *p = Rgb([y, y, y]);
    }
}

pub(crate) fn adjust_saturation(image: &mut RgbImage, change: f64) {
    if change == 0.0 {
        return;
    }
    for p in image.pixels_mut() {
        let y = luma(p);
        for c in p.0.iter_mut() {
            *c = clamp_u8(y + (1.0 + change) * (f64::from(*c) - y));
        }
    }
}

pub(crate) fn scale_channels(image: &mut RgbImage, factor: f64) {
    if factor == 1.0 {
        return;
    }
    for c in image.iter_mut() {
        *c = clamp_u8(f64::from(*c) * factor);
    }
}

/// Sets `floor(fraction * pixels)` distinct pixels to black or white.
/// Returns the number of pixels touched.
pub(crate) fn salt_and_pepper<R: Rng>(image: &mut RgbImage, fraction: f64, rng: &mut R) -> usize {
    let total = (image.width() * image.height()) as usize;
    let count = ((fraction * total as f64).floor() as usize).min(total);
    if count == 0 {
        return 0;
    }
    let width = image.width() as usize;
    for idx in rand::seq::index::sample(rng, total, count) {
        let value = if rng.gen_bool(0.5) { 255 } else { 0 };
        image.put_pixel((idx % width) as u32, (idx / width) as u32, Rgb([value; 3]));
    }
    count
}

fn apply<R: Rng>(source: &LabeledImage, params: &AugmentParams, rng: &mut R) -> LabeledImage {
    let mut image = source.image.clone();
    let mut truths = source.truths.clone();
    if params.flip_horizontal {
        imageops::flip_horizontal_in_place(&mut image);
        for t in &mut truths {
            t.bbox = t.bbox.flip_horizontal();
        }
    }
    if params.flip_vertical {
        imageops::flip_vertical_in_place(&mut image);
        for t in &mut truths {
            t.bbox = t.bbox.flip_vertical();
        }
    }
    if params.grayscale {
        grayscale(&mut image);
    }
    adjust_saturation(&mut image, params.saturation);
    scale_channels(&mut image, 1.0 + params.brightness);
    scale_channels(&mut image, 1.0 + params.exposure);
    if params.blur_sigma > 0.0 {
        image = imageops::blur(&image, params.blur_sigma as f32);
    }
    salt_and_pepper(&mut image, params.noise_fraction, rng);
    LabeledImage { image, truths }
}

/// Produces `plan.copies` augmented versions of one image (without mosaic).
/// Deterministic in `(plan, image_id)`.
pub fn augment_image(source: &LabeledImage, image_id: &str, plan: &AugmentationPlan) -> Vec<Augmented> {
    let bounds = plan.recipe.bounds();
    let mut rng = image_rng(plan.seed, image_id);
    (0..plan.copies)
        .map(|_| {
            let params = AugmentParams::draw(&bounds, &mut rng);
            Augmented {
                sample: apply(source, &params, &mut rng),
                params,
                mosaic_partners: Vec::new(),
            }
        })
        .collect()
}

/// 2×2 composite on an equal grid: inputs fill top-left, top-right,
/// bottom-left, bottom-right. Each quadrant has the first image's size; other
/// inputs are resized to fit. Boxes below [`MIN_BOX_AREA`] are dropped.
pub fn mosaic(four: [&LabeledImage; 4]) -> LabeledImage {
    let (qw, qh) = four[0].image.dimensions();
    let mut canvas = RgbImage::new(qw * 2, qh * 2);
    let mut truths = Vec::new();
    for (i, part) in four.iter().enumerate() {
        let (col, row) = ((i % 2) as u32, (i / 2) as u32);
        let tile = if part.image.dimensions() == (qw, qh) {
            part.image.clone()
        } else {
            imageops::resize(&part.image, qw, qh, FilterType::Triangle)
        };
        imageops::replace(&mut canvas, &tile, i64::from(col * qw), i64::from(row * qh));
        for t in &part.truths {
            let moved = t.bbox.affine(0.5, 0.5 * f64::from(col), 0.5, 0.5 * f64::from(row));
            if let Ok(bbox) = moved {
                if bbox.area() >= MIN_BOX_AREA {
                    truths.push(GroundTruth::new(t.class, bbox));
                }
            }
        }
    }
    LabeledImage { image: canvas, truths }
}

/// Augments a whole dataset. With mosaic enabled, each output is composited
/// with three partner images picked from the id-sorted dataset, so results do
/// not depend on input order.
pub fn augment_dataset(items: &[(String, LabeledImage)], plan: &AugmentationPlan) -> Vec<(String, Augmented)> {
    let bounds = plan.recipe.bounds();
    let mut by_id: Vec<usize> = (0..items.len()).collect();
    by_id.sort_by(|&a, &b| items[a].0.cmp(&items[b].0));
    let mut out = Vec::new();
    for (id, source) in items {
        let mut rng = image_rng(plan.seed, id);
        for copy in 0..plan.copies {
            let params = AugmentParams::draw(&bounds, &mut rng);
            let mut sample = apply(source, &params, &mut rng);
            let mut partners = Vec::new();
            if bounds.mosaic && !items.is_empty() {
                let picks: Vec<usize> = (0..3).map(|_| by_id[rng.gen_range(0..by_id.len())]).collect();
                partners = picks.iter().map(|&p| items[p].0.clone()).collect();
                sample = mosaic([&sample, &items[picks[0]].1, &items[picks[1]].1, &items[picks[2]].1]);
            }
            out.push((
                format!("{id}-aug{copy}"),
                Augmented {
                    sample,
                    params,
                    mosaic_partners: partners,
                },
            ));
        }
    }
    out
}
