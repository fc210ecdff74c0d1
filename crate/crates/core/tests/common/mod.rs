//! Fixture builders shared by the integration tests of both crates.
#![allow(dead_code)]

use std::fs;
use std::path::Path;

use fruitpal_core::dataset::{write_manifest, AnnotatedImage, Split};
use fruitpal_core::domain::{BoundingBox, GroundTruth};
use fruitpal_core::FruitClass::{self, *};

/// Per-class (images, annotations) of the published dataset health check.
pub const HEALTH_TABLE: [(FruitClass, u64, u64); 15] = [
    (Strawberry, 630, 3368),
    (Orange, 519, 2957),
    (Lemon, 426, 1638),
    (Pear, 149, 547),
    (Pineapple, 212, 539),
    (Grapefruit, 92, 429),
    (Peach, 138, 1425),
    (Banana, 471, 1401),
    (CommonFig, 66, 356),
    (Apple, 188, 631),
    (Grape, 454, 1546),
    (Mango, 105, 639),
    (Watermelon, 223, 660),
    (Pomegranate, 131, 343),
    (Cantaloupe, 85, 283),
];
pub const HEALTH_NULL_IMAGES: u64 = 170;
pub const HEALTH_NON_NULL_IMAGES: u64 = 3862;
pub const HEALTH_TOTAL_ANNOTATIONS: u64 = 16_762;

/// Per-class (train, val, test) box counts of the published split table.
pub const SPLIT_TABLE: [(FruitClass, u64, u64, u64); 15] = [
    (Strawberry, 2458, 592, 314),
    (Orange, 2019, 607, 321),
    (Lemon, 958, 449, 241),
    (Pear, 374, 122, 56),
    (Pineapple, 346, 135, 56),
    (Grapefruit, 342, 65, 29),
    (Peach, 888, 411, 128),
    (Banana, 831, 416, 181),
    (CommonFig, 66, 25, 33),
    (Apple, 397, 122, 107),
    (Grape, 1118, 295, 135),
    (Mango, 481, 85, 72),
    (Watermelon, 423, 122, 130),
    (Pomegranate, 230, 89, 29),
    (Cantaloupe, 166, 71, 48),
];

/// Per-class image counts sum to 3,889 but only 3,862 images are non-null,
/// so 27 images must hold two classes. The fixture merges the first 27
/// Orange images into the first 27 Strawberry images.
pub const MERGED_IMAGES: usize = 27;

fn grid_box(k: usize) -> BoundingBox {
    let x = (k % 10) as f64 * 0.1;
    let y = (k / 10 % 10) as f64 * 0.1;
    BoundingBox::new(x + 0.01, y + 0.01, x + 0.09, y + 0.09).expect("grid box is valid")
}

/// Spreads `boxes` annotations over `images` images as evenly as possible.
fn spread(class: FruitClass, images: usize, boxes: usize) -> Vec<Vec<GroundTruth>> {
    (0..images)
        .map(|i| {
            let n = boxes / images + usize::from(i < boxes % images);
            (0..n).map(|_| GroundTruth::new(class, grid_box(0))).collect()
        })
        .collect()
}

fn place(truths: Vec<GroundTruth>) -> Vec<GroundTruth> {
    truths
        .into_iter()
        .enumerate()
        .map(|(k, t)| GroundTruth::new(t.class, grid_box(k)))
        .collect()
}

/// Dataset mirroring the published health-check table.
pub fn health_dataset() -> Vec<AnnotatedImage> {
    let mut groups: Vec<(FruitClass, Vec<Vec<GroundTruth>>)> = HEALTH_TABLE
        .iter()
        .map(|&(c, imgs, boxes)| (c, spread(c, imgs as usize, boxes as usize)))
        .collect();
    let orange_extra: Vec<Vec<GroundTruth>> = groups[1].1.drain(..MERGED_IMAGES).collect();
    for (img, extra) in groups[0].1.iter_mut().zip(orange_extra) {
        img.extend(extra);
    }
    let mut out = Vec::new();
    for (class, images) in groups {
        for (i, truths) in images.into_iter().enumerate() {
            out.push(AnnotatedImage::new(format!("{}-{i:04}", class.label().replace(' ', "_")), 640, 480, place(truths)));
        }
    }
    for i in 0..HEALTH_NULL_IMAGES {
        out.push(AnnotatedImage::new(format!("null-{i:04}"), 640, 480, vec![]));
    }
    out
}

/// Dataset whose images carry the published per-split box counts.
pub fn split_dataset_fixture() -> Vec<AnnotatedImage> {
    let mut out = Vec::new();
    for &(class, train, val, test) in &SPLIT_TABLE {
        for (split, boxes) in [(Split::Training, train), (Split::Validation, val), (Split::Testing, test)] {
            let images = (boxes as usize).div_ceil(4);
            for (i, truths) in spread(class, images, boxes as usize).into_iter().enumerate() {
                let mut img = AnnotatedImage::new(
                    format!("{}-{split:?}-{i:04}", class.label().replace(' ', "_")),
                    640,
                    480,
                    place(truths),
                );
                img.split = split;
                out.push(img);
            }
        }
    }
    out
}

pub fn write_dataset(path: &Path, images: &[AnnotatedImage]) {
    let file = fs::File::create(path).expect("create manifest");
    write_manifest(std::io::BufWriter::new(file), images).expect("write manifest");
}

fn frame_line(id: &str, dets: &[(&str, f64)]) -> String {
    let rows: Vec<String> = dets
        .iter()
        .enumerate()
        .map(|(k, (class, conf))| {
            let x = (k % 10) as f64 * 0.1;
            let y = (k / 10) as f64 * 0.1;
            format!("[\"{class}\",{},{},{},{},{conf}]", x + 0.01, y + 0.01, x + 0.09, y + 0.09)
        })
        .collect();
    format!("{{\"frame_id\":\"{id}\",\"detections\":[{}]}}", rows.join(","))
}

fn repeat<'a>(items: &[(&'a str, usize)], conf: f64) -> Vec<(&'a str, f64)> {
    items
        .iter()
        .flat_map(|&(c, n)| std::iter::repeat_n((c, conf), n))
        .collect()
}

/// Nutrition day: plate of 2 apples, 1 banana and 3 strawberries; one apple
/// eaten in hour 1, two mangoes added in hour 2, one strawberry eaten in
/// hour 3, digest at 20:00.
pub fn write_nutrition_scenario(dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    fs::write(
        dir.join("scenario.toml"),
        r#"name = "nutrition-day"
seed = 7
start_date = "2024-03-01"

[[device]]
kind = "nutrition"
id = "kitchen"
person_id = "resident-1"
digest_time = "20:00"
reset_time = "06:00"
"#,
    )
    .unwrap();
    let frames = [
        frame_line("base", &repeat(&[("Apple", 2), ("Banana", 1), ("Strawberry", 3)], 0.9)),
        frame_line("hour1", &repeat(&[("Apple", 1), ("Banana", 1), ("Strawberry", 3)], 0.9)),
        frame_line("hour2", &repeat(&[("Apple", 1), ("Banana", 1), ("Strawberry", 3), ("Mango", 2)], 0.9)),
        frame_line("hour3", &repeat(&[("Apple", 1), ("Banana", 1), ("Strawberry", 2), ("Mango", 2)], 0.9)),
    ];
    fs::write(dir.join("frames.jsonl"), frames.join("\n") + "\n").unwrap();
    let timeline = [
        r#"{"at":0,"kind":"Frame","frame_id":"base"}"#,
        r#"{"at":3000,"kind":"Frame","frame_id":"hour1"}"#,
        r#"{"at":6600,"kind":"Frame","frame_id":"hour2"}"#,
        r#"{"at":10200,"kind":"Frame","frame_id":"hour3"}"#,
        r#"{"at":10800,"kind":"AdvanceHours","hours":18}"#,
    ];
    fs::write(dir.join("timeline.jsonl"), timeline.join("\n") + "\n").unwrap();
}

/// Allergen device watching for mango: one alert acknowledged by a
/// caregiver (twice), then a second alert cleared by departure.
pub fn write_allergen_scenario(dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    fs::write(
        dir.join("scenario.toml"),
        r#"name = "allergen-lifecycle"
seed = 11
start_date = "2024-03-01"

[[device]]
kind = "allergen"
id = "plate"
r9_ohms = 1e6
c7_farads = 1e-8
no_motion_timeout_ticks = 300
profile = { person_id = "child-1", allergens = ["Mango"], confidence_threshold = 0.5 }
"#,
    )
    .unwrap();
    let frames = [
        frame_line("mango", &[("Mango", 0.95), ("Apple", 0.8)]),
        frame_line("apple", &[("Apple", 0.9)]),
        frame_line("weak-mango", &[("Mango", 0.3)]),
    ];
    fs::write(dir.join("frames.jsonl"), frames.join("\n") + "\n").unwrap();
    let timeline = [
        r#"{"at":100,"kind":"Motion"}"#,
        r#"{"at":101,"kind":"Frame","frame_id":"apple"}"#,
        r#"{"at":102,"kind":"Frame","frame_id":"weak-mango"}"#,
        r#"{"at":103,"kind":"Frame","frame_id":"mango"}"#,
        r#"{"at":130,"kind":"CaregiverAck","alert_id":"plate-alert-1","caregiver_id":"nurse"}"#,
        r#"{"at":131,"kind":"CaregiverAck","alert_id":"plate-alert-1","caregiver_id":"nurse"}"#,
        r#"{"at":1000,"kind":"Motion"}"#,
        r#"{"at":1001,"kind":"Frame","frame_id":"mango"}"#,
        r#"{"at":1100,"kind":"Motion"}"#,
        r#"{"at":1101,"kind":"AdvanceHours","hours":1}"#,
    ];
    fs::write(dir.join("timeline.jsonl"), timeline.join("\n") + "\n").unwrap();
}
