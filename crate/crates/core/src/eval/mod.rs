//! Error metrics, the history-feature regression baseline, kernel density
//! summaries and report files.

mod kde;
mod mlr;


use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use kde::{kde, KdeCurve, KDE_GRID_POINTS, KDE_GRID_STEP};
pub use mlr::{history_design, MlrBaseline, DEFAULT_RIDGE};

use crate::data::grid::{hours_to_index, index_to_hours};
use crate::data::{DayType, DaySequence, HistoryRow};
use crate::error::{Error, Result};
use crate::infer::{detect_offline, finalize, DetectionResult};
use crate::model::TtdModel;

/// Mean absolute error in hours overall and per day group. Holidays count as
/// weekend; an empty group is `None`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaeBreakdown {
    pub all: f64,
    pub weekday: Option<f64>,
    pub weekend: Option<f64>,
    pub n_all: usize,
    pub n_weekday: usize,
    pub n_weekend: usize,
}

pub fn mae_hours(results: &[DetectionResult], day_types: &[DayType]) -> Result<MaeBreakdown> {
    if results.is_empty() {
        return Err(Error::usage("no results to average"));
    }
    if results.len() != day_types.len() {
        return Err(Error::usage(format!("{} results but {} day types", results.len(), day_types.len())));
    }
    let (mut s_wd, mut n_wd, mut s_we, mut n_we) = (0.0, 0usize, 0.0, 0usize);
    for (r, d) in results.iter().zip(day_types) {
        if d.is_weekend_like() {
            s_we += r.abs_error_hours;
            n_we += 1;
        } else {
            s_wd += r.abs_error_hours;
            n_wd += 1;
        }
    }
    let n = results.len();
    Ok(MaeBreakdown {
        all: (s_wd + s_we) / n as f64,
        weekday: (n_wd > 0).then(|| s_wd / n_wd as f64),
        weekend: (n_we > 0).then(|| s_we / n_we as f64),
        n_all: n,
        n_weekday: n_wd,
        n_weekend: n_we,
    })
}

/// One scored day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceOutcome {
    pub user_id: String,
    pub date: NaiveDate,
    pub day_type: DayType,
    #[serde(flatten)]
    pub result: DetectionResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdeSummary {
    pub predicted: KdeCurve,
    pub actual: KdeCurve,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Predictor name, e.g. `ttd` or `mlr`.
    pub predictor: String,
    /// Detection threshold; absent for the regression baseline.
    pub threshold: Option<f64>,
    pub mae: MaeBreakdown,
    pub mean_signed_error_hours: f64,
    pub n_detected: usize,
    pub outcomes: Vec<SequenceOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kde: Option<KdeSummary>,
}

impl EvalReport {
    pub fn from_outcomes(predictor: &str, threshold: Option<f64>, outcomes: Vec<SequenceOutcome>) -> Result<Self> {
        let results: Vec<DetectionResult> = outcomes.iter().map(|o| o.result).collect();
        let days: Vec<DayType> = outcomes.iter().map(|o| o.day_type).collect();
        let mae = mae_hours(&results, &days)?;
        let mean_signed_error_hours = results.iter().map(|r| r.signed_error_hours).sum::<f64>() / results.len() as f64;
        Ok(Self {
            predictor: predictor.into(),
            threshold,
            mae,
            mean_signed_error_hours,
            n_detected: results.iter().filter(|r| r.detected).count(),
            outcomes,
            kde: None,
        })
    }

    /// Adds densities of predicted and labelled event hours.
    pub fn with_kde(mut self) -> Result<Self> {
        let pred: Vec<f64> = self.outcomes.iter().map(|o| index_to_hours(o.result.predicted_index)).collect();
        let actual: Vec<f64> = self.outcomes.iter().map(|o| index_to_hours(o.result.true_index)).collect();
        self.kde = Some(KdeSummary { predicted: kde(&pred, None)?, actual: kde(&actual, None)? });
        Ok(self)
    }

    /// Restricts the report to the given (user, date) days.
    pub fn subset(&self, keep: &[(String, NaiveDate)]) -> Result<Self> {
        let outcomes =
            self.outcomes.iter().filter(|o| keep.iter().any(|(u, d)| *u == o.user_id && *d == o.date)).cloned().collect();
        Self::from_outcomes(&self.predictor, self.threshold, outcomes)
    }
}

fn run_parallel<T: Send>(threads: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    if threads <= 1 {
        return Ok(job());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    Ok(pool.install(job))
}

/// Eval-mode curves for each sequence, in input order.
pub fn predict_curves(model: &TtdModel, seqs: &[&DaySequence], threads: usize) -> Result<Vec<Vec<f64>>> {
    let curves: Vec<Result<Vec<f64>>> = run_parallel(threads, || {
        if threads <= 1 {
            seqs.iter().map(|s| model.predict(s).map(|c| c.0)).collect()
        } else {
            seqs.par_iter().map(|s| model.predict(s).map(|c| c.0)).collect()
        }
    })?;
    curves.into_iter().collect()
}

/// Scores precomputed curves at threshold `p`.
pub fn evaluate_curves(seqs: &[&DaySequence], curves: &[Vec<f64>], p: f64) -> Result<EvalReport> {
    crate::infer::check_threshold(p)?;
    if seqs.len() != curves.len() {
        return Err(Error::usage("one curve per sequence is required"));
    }
    let outcomes = seqs
        .iter()
        .zip(curves)
        .map(|(s, c)| SequenceOutcome {
            user_id: s.user_id.clone(),
            date: s.date,
            day_type: s.day_type,
            result: finalize(detect_offline(c, p), s.event_index()),
        })
        .collect();
    EvalReport::from_outcomes("ttd", Some(p), outcomes)
}

/// Offline detection at threshold `p` on every sequence.
pub fn evaluate_model(model: &TtdModel, seqs: &[&DaySequence], p: f64, threads: usize) -> Result<EvalReport> {
    let curves = predict_curves(model, seqs, threads)?;
    evaluate_curves(seqs, &curves, p)
}

/// Scores the regression baseline on prepared history rows; predictions are
/// rounded to the nearest grid slot.
pub fn evaluate_baseline(baseline: &MlrBaseline, rows: &[HistoryRow]) -> Result<EvalReport> {
    let outcomes = rows
        .iter()
        .map(|r| {
            let hours = baseline.predict(&r.features)?;
            Ok(SequenceOutcome {
                user_id: r.user_id.clone(),
                date: r.date,
                day_type: r.day_type,
                result: DetectionResult::new(hours_to_index(hours), r.event_index, true),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_outcomes("mlr", None, outcomes)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

pub const OUTCOME_CSV_HEADER: &str =
    "user_id,date,day_type,true_index,predicted_index,detected,signed_error_hours,abs_error_hours";

/// Writes the report as pretty JSON or as one CSV row per scored day.
pub fn emit_report(report: &EvalReport, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut w, report)?;
            w.write_all(b"\n")?;
        }
        ReportFormat::Csv => {
            writeln!(w, "{OUTCOME_CSV_HEADER}")?;
            for o in &report.outcomes {
                let r = &o.result;
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{}",
                    o.user_id,
                    o.date,
                    o.day_type.as_str(),
                    r.true_index,
                    r.predicted_index,
                    r.detected,
                    r.signed_error_hours,
                    r.abs_error_hours
                )?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Two-column `hour,density` CSV.
pub fn emit_kde_csv(curve: &KdeCurve, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "hour,density")?;
    for (h, d) in curve.hours.iter().zip(&curve.density) {
        writeln!(w, "{h},{d}")?;
    }
    w.flush()?;
    Ok(())
}

/// File stem carrying the run id, predictor and threshold, e.g.
/// `run7_ttd_p0.10`.
pub fn report_stem(run_id: &str, predictor: &str, threshold: Option<f64>) -> String {
    match threshold {
        Some(p) => format!("{run_id}_{predictor}_p{p:.2}"),
        None => format!("{run_id}_{predictor}"),
    }
}
