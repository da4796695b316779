use chrono::NaiveDate;
use serde::de::Error as _;
use serde::ser::SerializeStruct;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::grid::{GRID_LEN, TIME_FEATURES};
use super::{DayType, DOW_FEATURES};
use crate::error::{Error, Result};
use crate::loss::SequenceLabel;

/// One user-day on the grid. Features are stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DaySequence {
    pub user_id: String,
    pub date: NaiveDate,
    pub day_type: DayType,
    event_index: usize,
    n_features: usize,
    context: Vec<f64>,
    abs_time: Vec<f64>,
    normalized: bool,
}

impl DaySequence {
    /// `context` is `T×n_features`, `abs_time` is `T×2`, both row-major.
    pub fn new(
        user_id: impl Into<String>,
        date: NaiveDate,
        day_type: DayType,
        event_index: usize,
        n_features: usize,
        context: Vec<f64>,
        abs_time: Vec<f64>,
    ) -> Result<Self> {
        if n_features == 0 {
            return Err(Error::usage("sequence needs at least one context feature"));
        }
        if abs_time.len() % TIME_FEATURES != 0 {
            return Err(Error::usage(format!("abs_time length {} is not a multiple of {TIME_FEATURES}", abs_time.len())));
        }
        let len = abs_time.len() / TIME_FEATURES;
        if len == 0 || len > GRID_LEN {
            return Err(Error::usage(format!("sequence length {len} outside 1..={GRID_LEN}")));
        }
        if context.len() != len * n_features {
            return Err(Error::usage(format!(
                "context holds {} values, expected {len}×{n_features}",
                context.len()
            )));
        }
        if event_index >= GRID_LEN {
            return Err(Error::usage(format!("event_index {event_index} outside the grid")));
        }
        if context.iter().chain(&abs_time).any(|v| !v.is_finite()) {
            return Err(Error::usage("non-finite feature value"));
        }
        Ok(Self {
            user_id: user_id.into(),
            date,
            day_type,
            event_index,
            n_features,
            context,
            abs_time,
            normalized: false,
        })
    }

    /// Number of observed grid slots.
    pub fn len(&self) -> usize {
        self.abs_time.len() / TIME_FEATURES
    }

    pub fn is_empty(&self) -> bool {
        self.abs_time.is_empty()
    }

    pub fn event_index(&self) -> usize {
        self.event_index
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn context(&self) -> &[f64] {
        &self.context
    }

    pub fn context_row(&self, t: usize) -> &[f64] {
        &self.context[t * self.n_features..(t + 1) * self.n_features]
    }

    pub(crate) fn context_mut(&mut self) -> &mut [f64] {
        &mut self.context
    }

    pub fn abs_time(&self) -> &[f64] {
        &self.abs_time
    }

    pub fn abs_time_row(&self, t: usize) -> &[f64] {
        &self.abs_time[t * TIME_FEATURES..(t + 1) * TIME_FEATURES]
    }

    pub fn dow_onehot(&self) -> [f64; DOW_FEATURES] {
        self.day_type.onehot()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub(crate) fn set_normalized(&mut self) {
        self.normalized = true;
    }

    pub fn label(&self) -> SequenceLabel {
        SequenceLabel::new(self.event_index, self.day_type)
    }

    /// The first `len` slots (clamped to the observed length).
    pub fn prefix(&self, len: usize) -> DaySequence {
        let len = len.min(self.len());
        DaySequence {
            context: self.context[..len * self.n_features].to_vec(),
            abs_time: self.abs_time[..len * TIME_FEATURES].to_vec(),
            ..self.clone_header()
        }
    }

    fn clone_header(&self) -> DaySequence {
        DaySequence {
            user_id: self.user_id.clone(),
            date: self.date,
            day_type: self.day_type,
            event_index: self.event_index,
            n_features: self.n_features,
            context: Vec::new(),
            abs_time: Vec::new(),
            normalized: self.normalized,
        }
    }
}

struct Rows<'a> {
    data: &'a [f64],
    cols: usize,
}

impl Serialize for Rows<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.data.chunks(self.cols))
    }
}

impl Serialize for DaySequence {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("DaySequence", 6)?;
        st.serialize_field("user_id", &self.user_id)?;
        st.serialize_field("date", &self.date)?;
        st.serialize_field("day_type", &self.day_type)?;
        st.serialize_field("event_index", &self.event_index)?;
        st.serialize_field("context", &Rows { data: &self.context, cols: self.n_features })?;
        st.serialize_field("abs_time", &Rows { data: &self.abs_time, cols: TIME_FEATURES })?;
        st.end()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Wire {
    user_id: String,
    date: NaiveDate,
    day_type: DayType,
    event_index: usize,
    context: Vec<Vec<f64>>,
    abs_time: Vec<Vec<f64>>,
}

fn flatten(rows: Vec<Vec<f64>>, name: &str) -> std::result::Result<(usize, Vec<f64>), String> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(format!("{name} rows have unequal widths"));
    }
    Ok((cols, rows.into_iter().flatten().collect()))
}

impl<'de> Deserialize<'de> for DaySequence {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let w = Wire::deserialize(d)?;
        if w.context.len() != w.abs_time.len() {
            return Err(D::Error::custom(format!(
                "context has {} rows but abs_time has {}",
                w.context.len(),
                w.abs_time.len()
            )));
        }
        let (n_features, context) = flatten(w.context, "context").map_err(D::Error::custom)?;
        let (tw, abs_time) = flatten(w.abs_time, "abs_time").map_err(D::Error::custom)?;
        if tw != TIME_FEATURES {
            return Err(D::Error::custom(format!("abs_time rows must have {TIME_FEATURES} values, got {tw}")));
        }
        DaySequence::new(w.user_id, w.date, w.day_type, w.event_index, n_features, context, abs_time)
            .map_err(D::Error::custom)
    }
}
