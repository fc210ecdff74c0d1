//! Detection quality metrics: IoU, greedy matching, precision/recall curves,
//! 101-point interpolated AP, mAP at one or many IoU thresholds, and a
//! detection confusion matrix with a background row and column.
//!
//! Matching is greedy: predictions are visited by descending confidence (ties
//! in input order) and each takes the unmatched truth with the highest IoU at
//! or above the threshold (ties to the lowest truth index).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::detection::confidence_order;
use crate::domain::{BoundingBox, Detection, FruitClass, GroundTruth};
use crate::scalar::Scalar;

/// Intersection over union; 0 for disjoint boxes.
pub fn iou<T: Scalar>(a: &BoundingBox<T>, b: &BoundingBox<T>) -> T {
    let inter = a.intersection_area(b);
    if inter <= T::zero() {
        return T::zero();
    }
    let union = a.area() + b.area() - inter;
    (inter / union).min(T::one())
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult<T: Scalar = f64> {
    /// `(prediction index, truth index, IoU)` in the order the matches were made.
    pub pairs: Vec<(usize, usize, T)>,
    pub unmatched_detections: Vec<usize>,
    pub unmatched_truths: Vec<usize>,
}

impl<T: Scalar> MatchResult<T> {
    /// Per prediction: `true` when it was matched.
    pub fn tp_flags(&self, num_preds: usize) -> Vec<bool> {
        let mut flags = vec![false; num_preds];
        for &(p, _, _) in &self.pairs {
            flags[p] = true;
        }
        flags
    }
}

fn greedy_match<T: Scalar>(
    preds: &[Detection<T>],
    truths: &[GroundTruth<T>],
    iou_threshold: T,
    class_gate: bool,
) -> MatchResult<T> {
    let mut truth_taken = vec![false; truths.len()];
    let mut result = MatchResult {
        pairs: Vec::new(),
        unmatched_detections: Vec::new(),
        unmatched_truths: Vec::new(),
    };
    for p in confidence_order(preds) {
        let pred = &preds[p];
        let mut best: Option<(usize, T)> = None;
        for (t, truth) in truths.iter().enumerate() {
            if truth_taken[t] || (class_gate && truth.class != pred.class) {
                continue;
            }
            let overlap = iou(&pred.bbox, &truth.bbox);
            if overlap < iou_threshold {
                continue;
            }
            if best.is_none_or(|(_, b)| overlap > b) {
                best = Some((t, overlap));
            }
        }
        match best {
            Some((t, overlap)) => {
                truth_taken[t] = true;
                result.pairs.push((p, t, overlap));
            }
            None => result.unmatched_detections.push(p),
        }
    }
    result.unmatched_detections.sort_unstable();
    result.unmatched_truths = (0..truths.len()).filter(|&t| !truth_taken[t]).collect();
    result
}

/// Class-gated greedy matching of predictions to truths within one image.
pub fn match_detections<T: Scalar>(
    preds: &[Detection<T>],
    truths: &[GroundTruth<T>],
    iou_threshold: T,
) -> MatchResult<T> {
    greedy_match(preds, truths, iou_threshold, true)
}

/// Precision/recall points swept over detections in descending confidence.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct PRCurve<T: Scalar = f64> {
    points: Vec<(T, T)>,
    num_truths: usize,
}

impl<T: Scalar> PRCurve<T> {
    /// Builds the curve from TP/FP outcomes already sorted by descending confidence.
    pub fn from_outcomes(outcomes: &[bool], num_truths: usize) -> Self {
        let mut tp = 0usize;
        let points = outcomes
            .iter()
            .enumerate()
            .map(|(k, &is_tp)| {
                tp += usize::from(is_tp);
                let recall = if num_truths == 0 { T::zero() } else { T::ratio(tp, num_truths) };
                (recall, T::ratio(tp, k + 1))
            })
            .collect();
        Self { points, num_truths }
    }

    /// `(recall, precision)` pairs.
    pub fn points(&self) -> &[(T, T)] {
        &self.points
    }

    pub fn num_truths(&self) -> usize {
        self.num_truths
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Number of recall levels used for interpolation: 0, 0.01, …, 1.
pub const RECALL_LEVELS: usize = 101;

/// 101-point interpolated average precision: the mean, over recall levels
/// `r ∈ {0, 0.01, …, 1}`, of the highest precision at any recall `>= r`
/// (0 where no point reaches `r`). An empty curve scores 0.
pub fn average_precision<T: Scalar>(curve: &PRCurve<T>) -> T {
    let points = curve.points();
    if points.is_empty() || curve.num_truths == 0 {
        return T::zero();
    }
    // running max of precision from the right
    let mut envelope: Vec<T> = points.iter().map(|&(_, p)| p).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut sum = T::zero();
    for level in 0..RECALL_LEVELS {
        let r = T::ratio(level, RECALL_LEVELS - 1);
        let idx = points.partition_point(|&(recall, _)| recall < r);
        if idx < points.len() {
            sum = sum + envelope[idx];
        }
    }
    sum / T::lit(RECALL_LEVELS as f64)
}

/// Predictions and truths for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample<T: Scalar = f64> {
    pub image_id: String,
    pub preds: Vec<Detection<T>>,
    pub truths: Vec<GroundTruth<T>>,
}

impl<T: Scalar> ImageSample<T> {
    pub fn new(image_id: impl Into<String>, preds: Vec<Detection<T>>, truths: Vec<GroundTruth<T>>) -> Self {
        Self {
            image_id: image_id.into(),
            preds,
            truths,
        }
    }
}

/// Per-class PR curves pooled over the dataset at one IoU threshold.
///
/// Only classes with at least one prediction or truth appear.
pub fn pooled_curves<T: Scalar>(samples: &[ImageSample<T>], iou_threshold: T) -> BTreeMap<FruitClass, PRCurve<T>> {
    // (confidence, image, pred index, tp) per class
    let mut scored: BTreeMap<FruitClass, Vec<(T, usize, usize, bool)>> = BTreeMap::new();
    let mut truth_counts: BTreeMap<FruitClass, usize> = BTreeMap::new();
    for (img, sample) in samples.iter().enumerate() {
        for truth in &sample.truths {
            *truth_counts.entry(truth.class).or_default() += 1;
        }
        let matched = match_detections(&sample.preds, &sample.truths, iou_threshold);
        let tp = matched.tp_flags(sample.preds.len());
        for (p, pred) in sample.preds.iter().enumerate() {
            scored
                .entry(pred.class)
                .or_default()
                .push((pred.confidence(), img, p, tp[p]));
        }
    }
    let mut curves = BTreeMap::new();
    for class in FruitClass::ALL {
        let n_truth = truth_counts.get(&class).copied().unwrap_or(0);
        let mut rows = scored.remove(&class).unwrap_or_default();
        if rows.is_empty() && n_truth == 0 {
            continue;
        }
        rows.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .expect("confidence is never NaN")
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        let outcomes: Vec<bool> = rows.iter().map(|r| r.3).collect();
        curves.insert(class, PRCurve::from_outcomes(&outcomes, n_truth));
    }
    curves
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct MapResult<T: Scalar = f64> {
    /// AP for every class with at least one truth.
    pub per_class: BTreeMap<FruitClass, T>,
    /// Unweighted mean of `per_class`; 0 when no class has truths.
    pub mean: T,
}

fn bounded_mean<T: Scalar>(values: impl IntoIterator<Item = T>) -> T {
    let mut sum = T::zero();
    let mut n = 0usize;
    let mut lo = T::infinity();
    let mut hi = T::neg_infinity();
    for v in values {
        sum = sum + v;
        n += 1;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if n == 0 {
        return T::zero();
    }
    // rounding in the sum must not push the mean outside [min, max]
    (sum / T::lit(n as f64)).max(lo).min(hi)
}

/// Per-class AP over the pooled dataset at `iou_threshold`, and its mean over
/// classes that have ground truth.
pub fn map_at<T: Scalar>(samples: &[ImageSample<T>], iou_threshold: T) -> MapResult<T> {
    let per_class: BTreeMap<FruitClass, T> = pooled_curves(samples, iou_threshold)
        .into_iter()
        .filter(|(_, curve)| curve.num_truths() > 0)
        .map(|(class, curve)| (class, average_precision(&curve)))
        .collect();
    let mean = bounded_mean(per_class.values().copied());
    MapResult { per_class, mean }
}

/// IoU thresholds 0.50, 0.55, …, 0.95.
pub fn coco_iou_thresholds<T: Scalar>() -> [T; 10] {
    std::array::from_fn(|i| T::ratio(50 + 5 * i, 100))
}

/// Mean of [`map_at`] over the ten thresholds of [`coco_iou_thresholds`].
pub fn map_50_95<T: Scalar>(samples: &[ImageSample<T>]) -> T {
    bounded_mean(coco_iou_thresholds::<T>().iter().map(|&t| map_at(samples, t).mean))
}

/// Number of rows/columns: fifteen classes plus background.
pub const CONFUSION_SIZE: usize = FruitClass::COUNT + 1;
pub const BACKGROUND: usize = FruitClass::COUNT;

/// Rows are true classes, columns predicted classes; index 15 is background.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ConfusionMatrix {
    cells: [[u64; CONFUSION_SIZE]; CONFUSION_SIZE],
}

impl ConfusionMatrix {
    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.cells[truth][predicted]
    }

    pub fn cell(&self, truth: Option<FruitClass>, predicted: Option<FruitClass>) -> u64 {
        let idx = |c: Option<FruitClass>| c.map_or(BACKGROUND, FruitClass::index);
        self.cells[idx(truth)][idx(predicted)]
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().flatten().sum()
    }

    pub fn is_diagonal(&self) -> bool {
        (0..CONFUSION_SIZE).all(|i| (0..CONFUSION_SIZE).all(|j| i == j || self.cells[i][j] == 0))
    }

    pub fn label(index: usize) -> &'static str {
        FruitClass::from_index(index).map_or("background", FruitClass::label)
    }

    /// CSV with a header row and a leading label column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\predicted");
        for j in 0..CONFUSION_SIZE {
            out.push(',');
            out.push_str(Self::label(j));
        }
        out.push('\n');
        for i in 0..CONFUSION_SIZE {
            out.push_str(Self::label(i));
            for j in 0..CONFUSION_SIZE {
                write!(out, ",{}", self.cells[i][j]).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Detection confusion matrix. Predictions below `conf_threshold` are ignored;
/// matching here ignores class so that cross-class confusions are counted.
pub fn confusion_matrix<T: Scalar>(samples: &[ImageSample<T>], conf_threshold: T, iou_threshold: T) -> ConfusionMatrix {
    let mut m = ConfusionMatrix::default();
    for sample in samples {
        let preds: Vec<Detection<T>> = sample
            .preds
            .iter()
            .copied()
            .filter(|d| d.confidence() >= conf_threshold)
            .collect();
        let matched = greedy_match(&preds, &sample.truths, iou_threshold, false);
        for &(p, t, _) in &matched.pairs {
            m.cells[sample.truths[t].class.index()][preds[p].class.index()] += 1;
        }
        for &t in &matched.unmatched_truths {
            m.cells[sample.truths[t].class.index()][BACKGROUND] += 1;
        }
        for &p in &matched.unmatched_detections {
            m.cells[BACKGROUND][preds[p].class.index()] += 1;
        }
    }
    m
}

/// Operating point for dataset-level precision/recall and the confusion matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct EvalConfig<T: Scalar = f64> {
    pub conf_threshold: T,
    pub iou_threshold: T,
}

impl<T: Scalar> Default for EvalConfig<T> {
    fn default() -> Self {
        Self {
            conf_threshold: T::lit(0.25),
            iou_threshold: T::lit(0.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct EvalReport<T: Scalar = f64> {
    pub images: usize,
    pub predictions: usize,
    pub truths: usize,
    pub config: EvalConfig<T>,
    pub per_class_ap: BTreeMap<FruitClass, T>,
    pub map50: T,
    pub map50_95: T,
    pub precision: T,
    pub recall: T,
    pub confusion: ConfusionMatrix,
}

/// Runs every metric over `samples`.
///
/// Precision and recall use class-gated matching at the configured IoU after
/// dropping predictions below the confidence threshold; either is 0 when its
/// denominator is empty.
pub fn evaluate<T: Scalar>(samples: &[ImageSample<T>], config: EvalConfig<T>) -> EvalReport<T> {
    let at50 = map_at(samples, T::lit(0.5));
    let mut tp = 0usize;
    let mut kept = 0usize;
    let mut truths = 0usize;
    let mut predictions = 0usize;
    for sample in samples {
        predictions += sample.preds.len();
        truths += sample.truths.len();
        let preds: Vec<Detection<T>> = sample
            .preds
            .iter()
            .copied()
            .filter(|d| d.confidence() >= config.conf_threshold)
            .collect();
        kept += preds.len();
        tp += match_detections(&preds, &sample.truths, config.iou_threshold).pairs.len();
    }
    let ratio = |num: usize, den: usize| if den == 0 { T::zero() } else { T::ratio(num, den) };
    EvalReport {
        images: samples.len(),
        predictions,
        truths,
        config,
        per_class_ap: at50.per_class,
        map50: at50.mean,
        map50_95: map_50_95(samples),
        precision: ratio(tp, kept),
        recall: ratio(tp, truths),
        confusion: confusion_matrix(samples, config.conf_threshold, config.iou_threshold),
    }
}

impl<T: Scalar> EvalReport<T> {
    /// One-line summary printed by the CLI.
    pub fn summary_line(&self) -> String {
        format!(
            "precision={:.4} recall={:.4} mAP50={:.4} mAP50-95={:.4}",
            self.precision, self.recall, self.map50, self.map50_95
        )
    }

    /// Human-readable report.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "images       {}", self.images).unwrap();
        writeln!(out, "predictions  {}", self.predictions).unwrap();
        writeln!(out, "truths       {}", self.truths).unwrap();
        writeln!(
            out,
            "operating point: conf >= {} and IoU >= {}",
            self.config.conf_threshold, self.config.iou_threshold
        )
        .unwrap();
        writeln!(out, "precision    {:.4}", self.precision).unwrap();
        writeln!(out, "recall       {:.4}", self.recall).unwrap();
        writeln!(out, "mAP50        {:.4}", self.map50).unwrap();
        writeln!(out, "mAP50-95     {:.4}", self.map50_95).unwrap();
        writeln!(out).unwrap();
        writeln!(out, "{:<14} AP50", "class").unwrap();
        for (class, ap) in &self.per_class_ap {
            writeln!(out, "{:<14} {:.4}", class.label(), ap).unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use FruitClass::*;

    fn bx(b: [f64; 4]) -> BoundingBox {
        BoundingBox::new(b[0], b[1], b[2], b[3]).unwrap()
    }

    fn det(class: FruitClass, b: [f64; 4], conf: f64) -> Detection {
        Detection::new(class, bx(b), conf).unwrap()
    }

    fn gt(class: FruitClass, b: [f64; 4]) -> GroundTruth {
        GroundTruth::new(class, bx(b))
    }

    /// Box sharing `y` extent with [0,1]x[0,1]-like base so that IoU is the 1-D overlap ratio.
    fn strip(x0: f64, x1: f64) -> [f64; 4] {
        [x0, 0.0, x1, 1.0]
    }

    #[test]
    fn iou_examples() {
        let a = bx([0.0, 0.0, 0.5, 0.5]);
        let b = bx([0.25, 0.25, 0.75, 0.75]);
        assert_eq!(iou(&a, &a), 1.0);
        assert!((iou(&a, &b) - 1.0 / 7.0).abs() < 1e-12);
        assert_eq!(iou(&a, &bx([0.6, 0.6, 0.9, 0.9])), 0.0);
        // touching edges
        assert_eq!(iou(&a, &bx([0.5, 0.0, 0.9, 0.5])), 0.0);
        let af = BoundingBox::<f32>::new(0.0, 0.0, 0.5, 0.5).unwrap();
        let bf = BoundingBox::<f32>::new(0.25, 0.25, 0.75, 0.75).unwrap();
        assert!((iou(&af, &bf) - 1.0 / 7.0).abs() < 1e-6);
    }

    #[test]
    fn match_single_pair() {
        // IoU 0.8
        let m = match_detections(&[det(Apple, strip(0.0, 0.8), 0.9)], &[gt(Apple, strip(0.0, 1.0))], 0.5);
        assert_eq!(m.pairs.len(), 1);
        assert!((m.pairs[0].2 - 0.8).abs() < 1e-12);
        assert!(m.unmatched_detections.is_empty() && m.unmatched_truths.is_empty());
    }

    #[test]
    fn match_prefers_higher_confidence() {
        let truth = gt(Apple, strip(0.0, 1.0));
        let p_high = det(Apple, strip(0.0, 0.6), 0.9); // IoU .6
        let p_low = det(Apple, strip(0.0, 0.9), 0.8); // IoU .9
        let m = match_detections(&[p_low, p_high], &[truth], 0.5);
        assert_eq!(m.pairs.len(), 1);
        assert_eq!(m.pairs[0].0, 1);
        assert_eq!(m.unmatched_detections, vec![0]);
    }

    #[test]
    fn match_is_class_gated() {
        let m = match_detections(&[det(Apple, strip(0.0, 0.9), 0.9)], &[gt(Pear, strip(0.0, 1.0))], 0.5);
        assert!(m.pairs.is_empty());
        assert_eq!(m.unmatched_truths, vec![0]);
    }

    #[test]
    fn match_iou_ties_go_to_lowest_truth_index() {
        let truths = [gt(Apple, strip(0.0, 0.5)), gt(Apple, strip(0.0, 0.5))];
        let m = match_detections(&[det(Apple, strip(0.0, 0.5), 0.9)], &truths, 0.5);
        assert_eq!(m.pairs[0].1, 0);
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&PRCurve::<f64>::from_outcomes(&[true], 1)), 1.0);
        assert_eq!(average_precision(&PRCurve::<f64>::from_outcomes(&[], 1)), 0.0);
        assert_eq!(average_precision(&PRCurve::<f64>::from_outcomes(&[true, false], 1)), 1.0);
        // FP then TP: precision 0.5 reachable at every recall level
        assert_eq!(average_precision(&PRCurve::<f64>::from_outcomes(&[false, true], 1)), 0.5);
        // half the truths found with perfect precision: 51 of 101 levels
        let half = average_precision(&PRCurve::<f64>::from_outcomes(&[true], 2));
        assert!((half - 51.0 / 101.0).abs() < 1e-15);
    }

    #[test]
    fn pr_curve_points() {
        let c = PRCurve::<f64>::from_outcomes(&[true, false, true], 4);
        assert_eq!(c.points(), &[(0.25, 1.0), (0.25, 0.5), (0.5, 2.0 / 3.0)]);
    }

    #[test]
    fn map_examples() {
        let perfect = vec![ImageSample::new(
            "a",
            vec![det(Apple, strip(0.0, 0.5), 0.9), det(Mango, strip(0.5, 1.0), 0.8)],
            vec![gt(Apple, strip(0.0, 0.5)), gt(Mango, strip(0.5, 1.0))],
        )];
        let r = map_at(&perfect, 0.5);
        assert_eq!(r.mean, 1.0);
        assert!(r.per_class.values().all(|&ap| ap == 1.0));
        assert_eq!(map_50_95(&perfect), 1.0);

        let wrong = vec![ImageSample::new(
            "a",
            vec![det(Pear, strip(0.0, 0.5), 0.9)],
            vec![gt(Apple, strip(0.0, 0.5))],
        )];
        assert_eq!(map_at(&wrong, 0.5).mean, 0.0);

        // one class perfect, the other has no predictions
        let half = vec![ImageSample::new(
            "a",
            vec![det(Apple, strip(0.0, 0.5), 0.9)],
            vec![gt(Apple, strip(0.0, 0.5)), gt(Lemon, strip(0.5, 1.0))],
        )];
        let r = map_at(&half, 0.5);
        assert_eq!(r.per_class[&Apple], 1.0);
        assert_eq!(r.per_class[&Lemon], 0.0);
        assert_eq!(r.mean, 0.5);
    }

    #[test]
    fn map_50_95_single_detection_iou_062() {
        let samples = vec![ImageSample::new(
            "a",
            vec![det(Apple, strip(0.0, 0.62), 0.9)],
            vec![gt(Apple, strip(0.0, 1.0))],
        )];
        assert_eq!(map_50_95(&samples), 0.3);
        let none = vec![ImageSample::new("a", vec![], vec![gt(Apple, strip(0.0, 1.0))])];
        assert_eq!(map_50_95(&none), 0.0);
    }

    #[test]
    fn coco_thresholds_are_exact_decimals() {
        let t = coco_iou_thresholds::<f64>();
        assert_eq!(t[0], 0.5);
        assert_eq!(t[2], 0.6);
        assert_eq!(t[9], 0.95);
    }

    #[test]
    fn confusion_examples() {
        assert_eq!(confusion_matrix::<f64>(&[], 0.25, 0.5).total(), 0);

        let cross = vec![ImageSample::new(
            "a",
            vec![det(Banana, strip(0.0, 0.7), 0.9)],
            vec![gt(Apple, strip(0.0, 1.0))],
        )];
        let m = confusion_matrix(&cross, 0.25, 0.5);
        assert_eq!(m.cell(Some(Apple), Some(Banana)), 1);
        assert_eq!(m.total(), 1);

        let perfect = vec![ImageSample::new(
            "a",
            vec![det(Apple, strip(0.0, 0.5), 0.9), det(Mango, strip(0.5, 1.0), 0.8)],
            vec![gt(Apple, strip(0.0, 0.5)), gt(Mango, strip(0.5, 1.0))],
        )];
        let m = confusion_matrix(&perfect, 0.25, 0.5);
        assert!(m.is_diagonal());
        assert_eq!(m.total(), 2);

        let misses = vec![ImageSample::new(
            "a",
            vec![det(Grape, strip(0.0, 0.2), 0.9), det(Lemon, strip(0.0, 0.2), 0.1)],
            vec![gt(Apple, strip(0.5, 1.0))],
        )];
        let m = confusion_matrix(&misses, 0.25, 0.5);
        assert_eq!(m.cell(Some(Apple), None), 1);
        assert_eq!(m.cell(None, Some(Grape)), 1);
        assert_eq!(m.cell(None, Some(Lemon)), 0);
    }

    #[test]
    fn confusion_csv_layout() {
        let csv = ConfusionMatrix::default().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), CONFUSION_SIZE + 1);
        assert!(lines[0].starts_with("true\\predicted,Apple,Banana"));
        assert!(lines[0].ends_with(",background"));
        assert!(lines[4].starts_with("Common fig,"));
        assert_eq!(lines[1].split(',').count(), CONFUSION_SIZE + 1);
    }

    #[test]
    fn evaluate_operating_point() {
        let samples = vec![ImageSample::new(
            "a",
            vec![
                det(Apple, strip(0.0, 0.5), 0.9),
                det(Apple, strip(0.5, 1.0), 0.2),
                det(Pear, strip(0.0, 0.1), 0.6),
            ],
            vec![gt(Apple, strip(0.0, 0.5)), gt(Apple, strip(0.5, 1.0))],
        )];
        let r = evaluate(&samples, EvalConfig::default());
        assert_eq!(r.precision, 0.5);
        assert_eq!(r.recall, 0.5);
        assert_eq!(r.per_class_ap.len(), 1);
        assert_eq!(r.map50, 1.0);
        assert!(r.summary_line().starts_with("precision=0.5000 recall=0.5000 mAP50=1.0000"));
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["per_class_ap"]["Apple"], 1.0);
        let empty = evaluate::<f64>(&[], EvalConfig::default());
        assert_eq!((empty.precision, empty.recall, empty.map50), (0.0, 0.0, 0.0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_box() -> impl Strategy<Value = BoundingBox> {
            (0.0f64..0.9, 0.0f64..0.9, 0.01f64..0.5, 0.01f64..0.5)
                .prop_map(|(x, y, w, h)| bx([x, y, (x + w).min(1.0), (y + h).min(1.0)]))
        }

        proptest! {
            #[test]
            fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
                let ab = iou(&a, &b);
                prop_assert_eq!(ab, iou(&b, &a));
                prop_assert!((0.0..=1.0).contains(&ab));
                prop_assert_eq!(iou(&a, &a), 1.0);
            }

            #[test]
            fn matching_is_injective_and_thresholded(
                preds in prop::collection::vec((0usize..2, arb_box(), 0.0f64..=1.0), 0..8),
                truths in prop::collection::vec((0usize..2, arb_box()), 0..8),
                t1 in 0.0f64..=1.0,
                t2 in 0.0f64..=1.0,
            ) {
                let preds: Vec<Detection> = preds.into_iter().map(|(c, b, s)| Detection::new(FruitClass::ALL[c], b, s).unwrap()).collect();
                let truths: Vec<GroundTruth> = truths.into_iter().map(|(c, b)| GroundTruth::new(FruitClass::ALL[c], b)).collect();
                let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
                let m = match_detections(&preds, &truths, lo);
                let mut seen_p = std::collections::HashSet::new();
                let mut seen_t = std::collections::HashSet::new();
                for &(p, t, v) in &m.pairs {
                    prop_assert!(seen_p.insert(p));
                    prop_assert!(seen_t.insert(t));
                    prop_assert!(v >= lo);
                    prop_assert_eq!(preds[p].class, truths[t].class);
                }
                for &p in &m.unmatched_detections { prop_assert!(seen_p.insert(p)); }
                for &t in &m.unmatched_truths { prop_assert!(seen_t.insert(t)); }
                prop_assert_eq!(seen_p.len(), preds.len());
                prop_assert_eq!(seen_t.len(), truths.len());
                let m_hi = match_detections(&preds, &truths, hi);
                prop_assert!(m_hi.pairs.len() <= m.pairs.len());
            }
        }
    }
}
