//! The 5-minute day grid: 265 slots starting at 04:00, the last one at
//! 02:00 the next morning.

use std::f64::consts::PI;

pub const GRID_LEN: usize = 265;
/// Last valid grid index.
pub const T_MAX: usize = GRID_LEN - 1;
pub const SLOT_MINUTES: usize = 5;
/// Minutes after midnight of grid index 0.
pub const GRID_START_MINUTES: usize = 4 * 60;
/// Slots between the labelled event and the physical departure (30 min).
pub const EVENT_LEAD_SLOTS: usize = 6;
/// Width of the absolute-time encoding.
pub const TIME_FEATURES: usize = 2;

const DAY_MINUTES: usize = 24 * 60;

/// Minutes after midnight of the grid's start day; exceeds 1440 past midnight.
pub fn index_to_minutes(t: usize) -> usize {
    GRID_START_MINUTES + t * SLOT_MINUTES
}

/// Grid index as hours after midnight, in `[4, 26]`.
pub fn index_to_hours(t: usize) -> f64 {
    index_to_minutes(t) as f64 / 60.0
}

/// Nearest grid index for a clock time in hours after midnight (values past
/// 24 denote the next morning). Clamped to the grid.
pub fn hours_to_index(hours: f64) -> usize {
    let slot = ((hours - GRID_START_MINUTES as f64 / 60.0) * 60.0 / SLOT_MINUTES as f64).round();
    slot.clamp(0.0, T_MAX as f64) as usize
}

/// Wall-clock label `HH:MM` of a grid index.
pub fn clock_label(t: usize) -> String {
    let m = index_to_minutes(t) % DAY_MINUTES;
    format!("{:02}:{:02}", m / 60, m % 60)
}

/// Inverse of [`clock_label`]: `None` for times off the 5-minute grid or in
/// the uncovered 02:05–03:55 gap.
pub fn clock_to_index(hour: usize, minute: usize) -> Option<usize> {
    if hour >= 24 || minute >= 60 {
        return None;
    }
    let mut m = hour * 60 + minute;
    if m < GRID_START_MINUTES {
        m += DAY_MINUTES;
    }
    let offset = m - GRID_START_MINUTES;
    if offset % SLOT_MINUTES != 0 {
        return None;
    }
    let t = offset / SLOT_MINUTES;
    (t <= T_MAX).then_some(t)
}

/// Event index for a physical departure slot.
pub fn event_from_departure(departure_index: usize) -> usize {
    departure_index.saturating_sub(EVENT_LEAD_SLOTS)
}

/// `(sin, cos)` of the fraction of the day elapsed at grid index `t`.
pub fn abs_time_features(t: usize) -> [f64; TIME_FEATURES] {
    let frac = (index_to_minutes(t) % DAY_MINUTES) as f64 / DAY_MINUTES as f64;
    let angle = 2.0 * PI * frac;
    [angle.sin(), angle.cos()]
}
