//! Subcommand bodies. Input problems surface as errors (exit 2); a simulator
//! run with invariant violations is a normal return with `passed() == false`.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use fruitpal_core::dataset::{
    augment_dataset, convert_center_pixels, health_check, load_manifest, split_dataset, write_manifest,
    AnnotatedImage, AugmentParams, AugmentationPlan, HealthReport, LabeledImage, Recipe, SplitRatios,
};
use fruitpal_core::detection::read_fixtures;
use fruitpal_core::evaluation::{evaluate, EvalConfig, EvalReport, ImageSample};
use fruitpal_core::sim::{run_scenario, RunReport, SimError};

pub const LOG_DIR_ENV: &str = "FRUITPAL_LOG_DIR";

/// Exit code for a failed command: 1 when the run itself broke, 2 for bad input.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<SimError>() {
        Some(SimError::Hub(_)) => 1,
        _ => 2,
    }
}

/// Output directory: explicit flag, then `FRUITPAL_LOG_DIR`, then `default`.
pub fn resolve_out(flag: Option<PathBuf>, default: impl Into<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(LOG_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| default.into())
}

pub fn sim_run(dir: &Path, out: &Path) -> Result<RunReport> {
    let report = run_scenario(dir)?;
    report
        .write_to(out)
        .with_context(|| format!("writing run output to {}", out.display()))?;
    Ok(report)
}

/// Pairs detection fixtures (one line per image, keyed by image id) with a
/// ground-truth manifest. Images without a fixture line have no predictions.
pub fn load_eval_samples(preds: &Path, truths: &Path) -> Result<Vec<ImageSample>> {
    let truth_images = load_manifest(truths).with_context(|| format!("reading {}", truths.display()))?;
    let file = File::open(preds).with_context(|| format!("opening {}", preds.display()))?;
    let fixtures = read_fixtures::<f64, _>(file).with_context(|| format!("reading {}", preds.display()))?;
    let mut by_id: HashMap<String, Vec<_>> = HashMap::new();
    for (id, dets) in fixtures {
        if by_id.insert(id.clone(), dets).is_some() {
            bail!("{}: image `{id}` listed twice", preds.display());
        }
    }
    let mut samples = Vec::with_capacity(truth_images.len());
    for img in truth_images {
        let dets = by_id.remove(&img.image_id).unwrap_or_default();
        samples.push(ImageSample::new(img.image_id, dets, img.truths));
    }
    if let Some(id) = by_id.keys().min() {
        bail!("{}: predictions for `{id}`, which is not in {}", preds.display(), truths.display());
    }
    Ok(samples)
}

pub fn eval(preds: &Path, truths: &Path, config: EvalConfig) -> Result<EvalReport> {
    for (name, v) in [("conf", config.conf_threshold), ("iou", config.iou_threshold)] {
        if !(0.0..=1.0).contains(&v) {
            bail!("--{name} must be in [0, 1], got {v}");
        }
    }
    Ok(evaluate(&load_eval_samples(preds, truths)?, config))
}

/// Writes `report.txt`, `report.json` and `confusion.csv`.
pub fn write_eval(report: &EvalReport, out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("report.txt"), report.to_text())?;
    fs::write(out.join("report.json"), serde_json::to_string_pretty(report)? + "\n")?;
    fs::write(out.join("confusion.csv"), report.confusion.to_csv())?;
    Ok(())
}

pub fn dataset_health(manifest: &Path) -> Result<HealthReport> {
    let images = load_manifest(manifest).with_context(|| format!("reading {}", manifest.display()))?;
    Ok(health_check(&images))
}

fn write_images(path: &Path, images: &[AnnotatedImage]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_manifest(BufWriter::new(file), images)?;
    Ok(())
}

/// Assigns splits and writes the manifest to `out`. Returns images per split.
pub fn dataset_split(manifest: &Path, ratios: SplitRatios, seed: u64, out: &Path) -> Result<[usize; 3]> {
    let images = load_manifest(manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let split = split_dataset(&images, ratios, seed)?;
    write_images(out, &split)?;
    let mut counts = [0usize; 3];
    for img in &split {
        use fruitpal_core::dataset::Split::*;
        match img.split {
            Training => counts[0] += 1,
            Validation => counts[1] += 1,
            Testing => counts[2] += 1,
            Unassigned => {}
        }
    }
    Ok(counts)
}

#[derive(Debug, Serialize)]
struct ParamRecord<'a> {
    image_id: &'a str,
    source: &'a str,
    params: &'a AugmentParams,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    mosaic_partners: &'a [String],
}

#[derive(Debug)]
pub struct AugmentSummary {
    pub outputs: usize,
    pub within_bounds: usize,
}

/// Augments every image of the manifest that names a pixel file. Writes
/// `images/*.png`, `manifest.jsonl` and the parameter log `params.jsonl`.
pub fn dataset_augment(manifest: &Path, plan: AugmentationPlan, out: &Path) -> Result<AugmentSummary> {
    let images = load_manifest(manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut items = Vec::with_capacity(images.len());
    let mut splits = BTreeMap::new();
    for img in &images {
        let Some(file) = &img.file else {
            bail!("image `{}` has no pixel file", img.image_id);
        };
        items.push((img.image_id.clone(), LabeledImage::load(base.join(file), img.truths.clone())?));
        splits.insert(img.image_id.clone(), img.split);
    }
    let augmented = augment_dataset(&items, &plan);
    let image_dir = out.join("images");
    fs::create_dir_all(&image_dir).with_context(|| format!("creating {}", image_dir.display()))?;
    let bounds = plan.recipe.bounds();
    let mut records = Vec::with_capacity(augmented.len());
    let mut params = BufWriter::new(File::create(out.join("params.jsonl"))?);
    let mut within_bounds = 0;
    for (id, aug) in &augmented {
        let source = id.rsplit_once("-aug").map_or(id.as_str(), |(s, _)| s);
        let rel = format!("images/{id}.png");
        aug.sample.save_png(out.join(&rel))?;
        let mut rec = AnnotatedImage::new(
            id.clone(),
            aug.sample.image.width(),
            aug.sample.image.height(),
            aug.sample.truths.clone(),
        );
        rec.split = splits.get(source).copied().unwrap_or_default();
        rec.file = Some(rel);
        records.push(rec);
        within_bounds += usize::from(aug.params.within(&bounds));
        let line = ParamRecord {
            image_id: id,
            source,
            params: &aug.params,
            mosaic_partners: &aug.mosaic_partners,
        };
        writeln!(params, "{}", serde_json::to_string(&line)?)?;
    }
    params.flush()?;
    write_images(&out.join("manifest.jsonl"), &records)?;
    Ok(AugmentSummary {
        outputs: augmented.len(),
        within_bounds,
    })
}

pub fn parse_recipe(s: &str) -> Result<Recipe> {
    Ok(s.parse()?)
}

/// Converts center-form pixel annotations into a manifest at `out`.
pub fn dataset_convert(input: &Path, out: &Path) -> Result<usize> {
    let file = File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let images = convert_center_pixels(file).with_context(|| format!("reading {}", input.display()))?;
    write_images(out, &images)?;
    Ok(images.len())
}
