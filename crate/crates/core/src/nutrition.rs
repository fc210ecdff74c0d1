//! Nutrition tracker: hourly plate inventories turned into consumption
//! counts and a daily nutrient digest.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{nutrient_lookup, FruitClass, FruitInventory};

/// Hourly ticks per tracking day.
pub const TICKS_PER_DAY: u32 = 24;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackerState {
    pub baseline: FruitInventory,
    pub eaten: FruitInventory,
    pub ticks_elapsed: u32,
    pub day_start: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NutritionError {
    #[error("tracking day already has {0} hourly ticks; reset before ticking again")]
    DayComplete(u32),
}

/// Starts a day from the morning inventory.
pub fn start_day(morning: FruitInventory, date: NaiveDate) -> TrackerState {
    TrackerState {
        baseline: morning,
        eaten: FruitInventory::new(),
        ticks_elapsed: 0,
        day_start: date,
    }
}

/// Folds one hourly observation into the state and returns the fruit eaten
/// this hour. A count that went down was eaten; a count that went up was
/// restocked and only moves the baseline.
pub fn hourly_tick(state: &TrackerState, observed: &FruitInventory) -> Result<(TrackerState, FruitInventory), NutritionError> {
    if state.ticks_elapsed >= TICKS_PER_DAY {
        return Err(NutritionError::DayComplete(state.ticks_elapsed));
    }
    let mut next = state.clone();
    let mut delta = FruitInventory::new();
    for class in state.baseline.union_classes(observed) {
        let before = state.baseline.get(class);
        let now = observed.get(class);
        if before > now {
            delta.add(class, before - now);
            next.eaten.add(class, before - now);
        }
    }
    next.baseline = observed.clone();
    next.ticks_elapsed += 1;
    Ok((next, delta))
}

impl TrackerState {
    pub fn day_complete(&self) -> bool {
        self.ticks_elapsed >= TICKS_PER_DAY
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DigestMessage {
    pub date: NaiveDate,
    pub eaten: FruitInventory,
    /// Nutrient phrases of the eaten fruits, first occurrence in class order.
    pub nutrients: Vec<String>,
    pub text: String,
}

pub fn compose_digest(state: &TrackerState, date: NaiveDate) -> DigestMessage {
    let mut nutrients: Vec<String> = Vec::new();
    let mut lines = Vec::new();
    for (class, count) in state.eaten.iter() {
        let (_, phrases) = nutrient_lookup(class);
        for phrase in phrases {
            if !nutrients.iter().any(|n| n == phrase) {
                nutrients.push((*phrase).to_string());
            }
        }
        lines.push(format!("- {} x{}: {}", class.label(), count, phrases.join("; ")));
    }
    let text = if lines.is_empty() {
        format!("Daily fruit digest for {date}: no fruit consumed.")
    } else {
        format!(
            "Daily fruit digest for {date}: {} fruit eaten.\n{}\nNutrients: {}.",
            state.eaten.total(),
            lines.join("\n"),
            nutrients.join(", ")
        )
    };
    DigestMessage {
        date,
        eaten: state.eaten.clone(),
        nutrients,
        text,
    }
}

/// New day starting from the current morning inventory; consumption is cleared.
pub fn daily_reset(_state: &TrackerState, observed: FruitInventory, date: NaiveDate) -> TrackerState {
    start_day(observed, date)
}

/// Per-class median of several inventories (lower median for even counts).
/// Used to smooth a burst of captures into one observation.
pub fn median_inventory(samples: &[FruitInventory]) -> FruitInventory {
    let mut out = FruitInventory::new();
    if samples.is_empty() {
        return out;
    }
    for class in FruitClass::ALL {
        let mut counts: Vec<u32> = samples.iter().map(|s| s.get(class)).collect();
        counts.sort_unstable();
        out.set(class, counts[(counts.len() - 1) / 2]);
    }
    out
}
