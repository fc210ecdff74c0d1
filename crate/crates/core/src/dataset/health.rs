use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use super::{AnnotatedImage, Split};
use crate::domain::FruitClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ClassStats {
    /// Images containing at least one box of the class.
    pub images: u64,
    pub annotations: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct SplitCounts {
    pub train: u64,
    pub val: u64,
    pub test: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct HealthReport {
    pub per_class: BTreeMap<FruitClass, ClassStats>,
    pub total_images: u64,
    pub null_images: u64,
    pub total_annotations: u64,
    /// Annotations per non-null image.
    pub avg_objects_per_image: f64,
    pub per_split_boxes: BTreeMap<FruitClass, SplitCounts>,
}

impl HealthReport {
    pub fn non_null_images(&self) -> u64 {
        self.total_images - self.null_images
    }

    pub fn class(&self, class: FruitClass) -> ClassStats {
        self.per_class.get(&class).copied().unwrap_or_default()
    }

    pub fn split_boxes(&self, class: FruitClass) -> SplitCounts {
        self.per_split_boxes.get(&class).copied().unwrap_or_default()
    }

    /// Table in the layout of a dataset health check, largest class first.
    pub fn to_table(&self) -> String {
        let mut rows: Vec<(FruitClass, ClassStats)> = self.per_class.iter().map(|(&c, &s)| (c, s)).collect();
        rows.sort_by(|a, b| b.1.annotations.cmp(&a.1.annotations).then(a.0.cmp(&b.0)));
        let mut out = String::new();
        writeln!(out, "{:<14} {:>8} {:>12} {:>9} {:>9} {:>9}", "class", "images", "annotations", "train", "val", "test").unwrap();
        for (class, stats) in rows {
            let s = self.split_boxes(class);
            writeln!(
                out,
                "{:<14} {:>8} {:>12} {:>9} {:>9} {:>9}",
                class.label(),
                stats.images,
                stats.annotations,
                s.train,
                s.val,
                s.test
            )
            .unwrap();
        }
        writeln!(out, "{:<14} {:>8} {:>12}", "Null", self.null_images, 0).unwrap();
        writeln!(out, "total images        {} ({} without null images)", self.total_images, self.non_null_images()).unwrap();
        writeln!(out, "total annotations   {}", self.total_annotations).unwrap();
        writeln!(out, "avg objects/image   {:.2}", self.avg_objects_per_image).unwrap();
        out
    }
}

pub fn health_check(dataset: &[AnnotatedImage]) -> HealthReport {
    let mut report = HealthReport::default();
    for image in dataset {
        report.total_images += 1;
        if image.is_null() {
            report.null_images += 1;
            continue;
        }
        let mut counts: BTreeMap<FruitClass, u64> = BTreeMap::new();
        for truth in &image.truths {
            *counts.entry(truth.class).or_default() += 1;
        }
        for (class, n) in counts {
            let stats = report.per_class.entry(class).or_default();
            stats.images += 1;
            stats.annotations += n;
            report.total_annotations += n;
            let split = report.per_split_boxes.entry(class).or_default();
            match image.split {
                Split::Training => split.train += n,
                Split::Validation => split.val += n,
                Split::Testing => split.test += n,
                Split::Unassigned => {}
            }
        }
    }
    let non_null = report.non_null_images();
    report.avg_objects_per_image = if non_null == 0 {
        0.0
    } else {
        report.total_annotations as f64 / non_null as f64
    };
    report
}
