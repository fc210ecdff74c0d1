//! Shared vocabulary: fruit classes, boxes, detections, inventories,
//! allergy profiles and the nutrient grouping table.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("unknown fruit class `{0}`")]
    UnknownClass(String),
    #[error("invalid bounding box ({x_min}, {y_min}, {x_max}, {y_max}): {reason}")]
    InvalidBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
        reason: &'static str,
    },
    #[error("confidence {0} outside [0, 1]")]
    InvalidConfidence(f64),
    #[error("allergy profile for `{0}` lists no allergens")]
    EmptyAllergens(String),
    #[error("confidence threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
}

/// The fifteen fruit classes of the detection vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FruitClass {
    Apple,
    Banana,
    Cantaloupe,
    CommonFig,
    Grape,
    Grapefruit,
    Lemon,
    Mango,
    Orange,
    Peach,
    Pear,
    Pineapple,
    Pomegranate,
    Strawberry,
    Watermelon,
}

impl FruitClass {
    pub const COUNT: usize = 15;

    pub const ALL: [FruitClass; Self::COUNT] = [
        FruitClass::Apple,
        FruitClass::Banana,
        FruitClass::Cantaloupe,
        FruitClass::CommonFig,
        FruitClass::Grape,
        FruitClass::Grapefruit,
        FruitClass::Lemon,
        FruitClass::Mango,
        FruitClass::Orange,
        FruitClass::Peach,
        FruitClass::Pear,
        FruitClass::Pineapple,
        FruitClass::Pomegranate,
        FruitClass::Strawberry,
        FruitClass::Watermelon,
    ];

    /// Position in [`FruitClass::ALL`]; also the confusion-matrix row/column.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    /// External spelling used in every file format.
    pub fn label(self) -> &'static str {
        match self {
            FruitClass::Apple => "Apple",
            FruitClass::Banana => "Banana",
            FruitClass::Cantaloupe => "Cantaloupe",
            FruitClass::CommonFig => "Common fig",
            FruitClass::Grape => "Grape",
            FruitClass::Grapefruit => "Grapefruit",
            FruitClass::Lemon => "Lemon",
            FruitClass::Mango => "Mango",
            FruitClass::Orange => "Orange",
            FruitClass::Peach => "Peach",
            FruitClass::Pear => "Pear",
            FruitClass::Pineapple => "Pineapple",
            FruitClass::Pomegranate => "Pomegranate",
            FruitClass::Strawberry => "Strawberry",
            FruitClass::Watermelon => "Watermelon",
        }
    }

    pub fn nutrient_group(self) -> NutrientGroup {
        use FruitClass::*;
        match self {
            Grapefruit | Lemon | Orange => NutrientGroup::Citrus,
            Banana | Mango | Pineapple => NutrientGroup::Tropical,
            Apple | CommonFig | Pomegranate => NutrientGroup::Pome,
            Peach | Pear => NutrientGroup::Stone,
            Cantaloupe | Watermelon => NutrientGroup::Melons,
            Grape | Strawberry => NutrientGroup::Berries,
        }
    }
}

impl fmt::Display for FruitClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for FruitClass {
    type Err = DomainError;

    /// Accepts the external spelling ("Common fig") and the identifier form ("CommonFig").
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "CommonFig" {
            return Ok(FruitClass::CommonFig);
        }
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.label() == s)
            .ok_or_else(|| DomainError::UnknownClass(s.to_string()))
    }
}

impl Serialize for FruitClass {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for FruitClass {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = std::borrow::Cow::<'de, str>::deserialize(deserializer)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

/// Axis-aligned box in normalized image coordinates, corner form.
///
/// Always satisfies `0 <= x_min < x_max <= 1` and `0 <= y_min < y_max <= 1`.
/// Serialized as `[x_min, y_min, x_max, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[T; 4]", into = "[T; 4]", bound = "T: Scalar")]
pub struct BoundingBox<T: Scalar = f64> {
    x_min: T,
    y_min: T,
    x_max: T,
    y_max: T,
}

impl<T: Scalar> BoundingBox<T> {
    pub fn new(x_min: T, y_min: T, x_max: T, y_max: T) -> Result<Self, DomainError> {
        let invalid = |reason| DomainError::InvalidBox {
            x_min: x_min.to_f64().unwrap_or(f64::NAN),
            y_min: y_min.to_f64().unwrap_or(f64::NAN),
            x_max: x_max.to_f64().unwrap_or(f64::NAN),
            y_max: y_max.to_f64().unwrap_or(f64::NAN),
            reason,
        };
        let unit = |v: T| v >= T::zero() && v <= T::one();
        if !(unit(x_min) && unit(y_min) && unit(x_max) && unit(y_max)) {
            return Err(invalid("coordinates must lie in [0, 1]"));
        }
        if x_min >= x_max || y_min >= y_max {
            return Err(invalid("box must have positive area"));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Builds a box from center-form pixel coordinates, clipping to the image.
    pub fn from_center_pixels(
        cx: T,
        cy: T,
        w: T,
        h: T,
        image_width: u32,
        image_height: u32,
    ) -> Result<Self, DomainError> {
        let two = T::lit(2.0);
        let iw = T::lit(image_width as f64);
        let ih = T::lit(image_height as f64);
        let clip = |v: T| v.max(T::zero()).min(T::one());
        Self::new(
            clip((cx - w / two) / iw),
            clip((cy - h / two) / ih),
            clip((cx + w / two) / iw),
            clip((cy + h / two) / ih),
        )
    }

    pub fn x_min(&self) -> T {
        self.x_min
    }

    pub fn y_min(&self) -> T {
        self.y_min
    }

    pub fn x_max(&self) -> T {
        self.x_max
    }

    pub fn y_max(&self) -> T {
        self.y_max
    }

    pub fn width(&self) -> T {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> T {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    pub fn intersection_area(&self, other: &Self) -> T {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= T::zero() || h <= T::zero() {
            T::zero()
        } else {
            w * h
        }
    }

    /// Mirror across the vertical center line: `x' = 1 - x`.
    pub fn flip_horizontal(&self) -> Self {
        Self {
            x_min: T::one() - self.x_max,
            y_min: self.y_min,
            x_max: T::one() - self.x_min,
            y_max: self.y_max,
        }
    }

    /// Mirror across the horizontal center line: `y' = 1 - y`.
    pub fn flip_vertical(&self) -> Self {
        Self {
            x_min: self.x_min,
            y_min: T::one() - self.y_max,
            x_max: self.x_max,
            y_max: T::one() - self.y_min,
        }
    }

    /// Applies `v -> v * scale + offset` per axis. Fails if the result is degenerate
    /// or leaves the unit square.
    pub fn affine(&self, scale_x: T, offset_x: T, scale_y: T, offset_y: T) -> Result<Self, DomainError> {
        Self::new(
            self.x_min * scale_x + offset_x,
            self.y_min * scale_y + offset_y,
            self.x_max * scale_x + offset_x,
            self.y_max * scale_y + offset_y,
        )
    }

    pub fn to_array(&self) -> [T; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

impl<T: Scalar> TryFrom<[T; 4]> for BoundingBox<T> {
    type Error = DomainError;

    fn try_from(v: [T; 4]) -> Result<Self, Self::Error> {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl<T: Scalar> From<BoundingBox<T>> for [T; 4] {
    fn from(b: BoundingBox<T>) -> Self {
        b.to_array()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct Detection<T: Scalar = f64> {
    pub class: FruitClass,
    pub bbox: BoundingBox<T>,
    confidence: T,
}

impl<T: Scalar> Detection<T> {
    pub fn new(class: FruitClass, bbox: BoundingBox<T>, confidence: T) -> Result<Self, DomainError> {
        if !(confidence >= T::zero() && confidence <= T::one()) {
            return Err(DomainError::InvalidConfidence(confidence.to_f64().unwrap_or(f64::NAN)));
        }
        Ok(Self {
            class,
            bbox,
            confidence,
        })
    }

    pub fn confidence(&self) -> T {
        self.confidence
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GroundTruth<T: Scalar = f64> {
    pub class: FruitClass,
    pub bbox: BoundingBox<T>,
}

impl<T: Scalar> GroundTruth<T> {
    pub fn new(class: FruitClass, bbox: BoundingBox<T>) -> Self {
        Self { class, bbox }
    }
}

/// Per-class fruit counts. Classes with count zero are never stored.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FruitInventory {
    counts: BTreeMap<FruitClass, u32>,
}

impl FruitInventory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, class: FruitClass) -> u32 {
        self.counts.get(&class).copied().unwrap_or(0)
    }

    pub fn set(&mut self, class: FruitClass, count: u32) {
        if count == 0 {
            self.counts.remove(&class);
        } else {
            self.counts.insert(class, count);
        }
    }

    pub fn add(&mut self, class: FruitClass, count: u32) {
        let current = self.get(class);
        self.set(class, current + count);
    }

    pub fn total(&self) -> u64 {
        self.counts.values().map(|&c| u64::from(c)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Non-zero entries in class order.
    pub fn iter(&self) -> impl Iterator<Item = (FruitClass, u32)> + '_ {
        self.counts.iter().map(|(&c, &n)| (c, n))
    }

    /// Classes present in either inventory, in class order.
    pub fn union_classes<'a>(&'a self, other: &'a Self) -> impl Iterator<Item = FruitClass> + 'a {
        let keys: BTreeSet<FruitClass> = self.counts.keys().chain(other.counts.keys()).copied().collect();
        keys.into_iter()
    }
}

impl FromIterator<(FruitClass, u32)> for FruitInventory {
    fn from_iter<I: IntoIterator<Item = (FruitClass, u32)>>(iter: I) -> Self {
        let mut inv = Self::new();
        for (class, count) in iter {
            inv.add(class, count);
        }
        inv
    }
}

impl fmt::Display for FruitInventory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (class, n)) in self.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{class}:{n}")?;
        }
        f.write_str("}")
    }
}

/// Who is monitored and which fruit classes must raise an alert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProfile")]
pub struct AllergyProfile {
    person_id: String,
    allergens: BTreeSet<FruitClass>,
    confidence_threshold: f64,
}

#[derive(Deserialize)]
struct RawProfile {
    person_id: String,
    allergens: BTreeSet<FruitClass>,
    confidence_threshold: f64,
}

impl TryFrom<RawProfile> for AllergyProfile {
    type Error = DomainError;

    fn try_from(raw: RawProfile) -> Result<Self, Self::Error> {
        Self::new(raw.person_id, raw.allergens, raw.confidence_threshold)
    }
}

impl AllergyProfile {
    pub fn new(
        person_id: impl Into<String>,
        allergens: impl IntoIterator<Item = FruitClass>,
        confidence_threshold: f64,
    ) -> Result<Self, DomainError> {
        let person_id = person_id.into();
        let allergens: BTreeSet<_> = allergens.into_iter().collect();
        if allergens.is_empty() {
            return Err(DomainError::EmptyAllergens(person_id));
        }
        if !(0.0..=1.0).contains(&confidence_threshold) {
            return Err(DomainError::InvalidThreshold(confidence_threshold));
        }
        Ok(Self {
            person_id,
            allergens,
            confidence_threshold,
        })
    }

    pub fn person_id(&self) -> &str {
        &self.person_id
    }

    pub fn allergens(&self) -> &BTreeSet<FruitClass> {
        &self.allergens
    }

    pub fn confidence_threshold(&self) -> f64 {
        self.confidence_threshold
    }

    pub fn is_allergen(&self, class: FruitClass) -> bool {
        self.allergens.contains(&class)
    }
}

/// The six nutrient groups; together they partition the fifteen classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NutrientGroup {
    Citrus,
    Tropical,
    Pome,
    Stone,
    Melons,
    Berries,
}

impl NutrientGroup {
    pub const ALL: [NutrientGroup; 6] = [
        NutrientGroup::Citrus,
        NutrientGroup::Tropical,
        NutrientGroup::Pome,
        NutrientGroup::Stone,
        NutrientGroup::Melons,
        NutrientGroup::Berries,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NutrientGroup::Citrus => "Citrus",
            NutrientGroup::Tropical => "Tropical",
            NutrientGroup::Pome => "Pome",
            NutrientGroup::Stone => "Stone",
            NutrientGroup::Melons => "Melons",
            NutrientGroup::Berries => "Berries",
        }
    }

    /// Nutrient strings, spelled exactly as in the source table (including its
    /// inconsistent capitalisation).
    pub fn nutrients(self) -> &'static [&'static str] {
        match self {
            NutrientGroup::Citrus => &["Vitamin C and Potassium"],
            NutrientGroup::Tropical => &["Vitamin B6 and C"],
            NutrientGroup::Pome => &["vitamin C and Manganese"],
            NutrientGroup::Stone => &["vitamins A, C, and E"],
            NutrientGroup::Melons => &["Vitamins A and C"],
            NutrientGroup::Berries => &["Vitamin K and Folate"],
        }
    }

    pub fn members(self) -> Vec<FruitClass> {
        FruitClass::ALL
            .iter()
            .copied()
            .filter(|c| c.nutrient_group() == self)
            .collect()
    }
}

impl fmt::Display for NutrientGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Group and nutrient list for a fruit.
pub fn nutrient_lookup(fruit: FruitClass) -> (NutrientGroup, &'static [&'static str]) {
    let group = fruit.nutrient_group();
    (group, group.nutrients())
}
