use serde_json::json;
use ttd_core::data::grid::clock_label;
use ttd_core::infer::{attribution_report, detect_offline};
use ttd_core::StreamSession;

use super::{load_checkpoint, load_for_checkpoint, print_json, select};
use crate::error::{CliError, CliResult};
use crate::{AttributeArgs, StreamArgs};

pub fn stream(a: StreamArgs) -> CliResult<()> {
    let (ck, model) = load_checkpoint(&a.checkpoint)?;
    let data = load_for_checkpoint(&a.select.sequence, &ck, a.select.normalized)?;
    let day = select(&data, &a.select)?;
    let mut session = StreamSession::new(&model, day.day_type, a.threshold)?;
    print_json(&json!({
        "event": "start",
        "user_id": day.user_id,
        "date": day.date,
        "day_type": day.day_type,
        "threshold": a.threshold,
        "slots": day.len(),
    }))?;
    for t in 0..day.len() {
        let update = session.push(day.context_row(t), day.abs_time_row(t))?;
        if a.emit_curve {
            print_json(&json!({ "event": "step", "t": t, "clock": clock_label(t), "survival": update.survival }))?;
        }
        if let Some(d) = update.detection {
            print_json(&json!({ "event": "detection", "t": d, "clock": clock_label(d), "survival": update.survival }))?;
            break;
        }
        if session.state() != ttd_core::SessionState::Open {
            break;
        }
    }
    let result = session.finish(day.event_index());
    print_json(&json!({
        "event": "end",
        "state": session.state(),
        "detected": result.detected,
        "predicted_index": result.predicted_index,
        "predicted_clock": clock_label(result.predicted_index),
        "true_index": result.true_index,
        "true_clock": clock_label(result.true_index),
        "signed_error_hours": result.signed_error_hours,
    }))?;
    if result.detected {
        Ok(())
    } else {
        Err(CliError::NoDetection(format!("survival never fell below {}", a.threshold)))
    }
}

pub fn attribute(a: AttributeArgs) -> CliResult<()> {
    let (ck, model) = load_checkpoint(&a.checkpoint)?;
    let data = load_for_checkpoint(&a.select.sequence, &ck, a.select.normalized)?;
    let day = select(&data, &a.select)?;
    let target = match a.at {
        Some(t) => t,
        None => {
            let curve = model.predict(day)?;
            detect_offline(curve.values(), a.threshold)
                .ok_or_else(|| CliError::NoDetection(format!("survival never fell below {}; use --at", a.threshold)))?
        }
    };
    let report = attribution_report(&model, day, target, a.top, a.steps)?;
    let text = serde_json::to_string_pretty(&report)?;
    match &a.out {
        Some(path) => std::fs::write(path, text)?,
        None => println!("{text}"),
    }
    Ok(())
}
