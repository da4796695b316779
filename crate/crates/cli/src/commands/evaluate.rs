use serde_json::json;
use ttd_core::data::SplitRole;
use ttd_core::eval::{
    emit_kde_csv, emit_report, evaluate_baseline, evaluate_curves, history_design, predict_curves, report_stem,
    EvalReport, ReportFormat, DEFAULT_RIDGE,
};
use ttd_core::{DaySequence, MlrBaseline};

use super::{load_checkpoint, load_for_checkpoint, print_json, sha256_of};
use crate::error::{usage, CliResult};
use crate::manifest::{run_dir, ManifestBuilder, MANIFEST_FILE};
use crate::{Baseline, EvalArgs, FormatArg, SplitArg};

pub fn eval(a: EvalArgs) -> CliResult<()> {
    let (ck, model) = load_checkpoint(&a.checkpoint)?;
    let data = load_for_checkpoint(&a.data, &ck, false)?;
    let seqs: Vec<&DaySequence> = match a.split {
        SplitArg::All => data.sequences.iter().collect(),
        SplitArg::Train => data.role(SplitRole::Train)?,
        SplitArg::Val => data.role(SplitRole::Val)?,
        SplitArg::Test => data.role(SplitRole::Test)?,
    };
    if seqs.is_empty() {
        return Err(usage("the selected split holds no sequences"));
    }
    let snapshot = json!({
        "checkpoint_sha256": sha256_of(&a.checkpoint)?,
        "data_sha256": sha256_of(&a.data)?,
        "thresholds": a.threshold,
        "baseline": a.baseline.map(|_| "mlr"),
        "split": format!("{:?}", a.split).to_lowercase(),
        "kde": a.kde,
    });
    let dir = run_dir(a.out.as_deref(), "eval", &snapshot)?;
    let run_id = a.run_id.clone().unwrap_or_else(|| {
        dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "eval".into())
    });
    let mut manifest = ManifestBuilder::new("eval", &snapshot, a.threads)?;
    manifest.input(&a.checkpoint)?.input(&a.data)?;

    let reports: Vec<EvalReport> = match a.baseline {
        Some(Baseline::Mlr) => {
            let train = data.role(SplitRole::Train)?;
            let mlr = MlrBaseline::fit_sequences(&train, DEFAULT_RIDGE)?;
            vec![evaluate_baseline(&mlr, &history_design(&seqs)?)?]
        }
        None => {
            let curves = predict_curves(&model, &seqs, a.threads)?;
            a.threshold.iter().map(|&p| evaluate_curves(&seqs, &curves, p)).collect::<Result<_, _>>()?
        }
    };
    for report in reports {
        let report = if a.kde { report.with_kde()? } else { report };
        let stem = report_stem(&run_id, &report.predictor, report.threshold);
        let formats: &[ReportFormat] = match a.format {
            FormatArg::Json => &[ReportFormat::Json],
            FormatArg::Csv => &[ReportFormat::Csv],
            FormatArg::Both => &[ReportFormat::Json, ReportFormat::Csv],
        };
        for &f in formats {
            let ext = if f == ReportFormat::Json { "json" } else { "csv" };
            let path = dir.join(format!("{stem}.{ext}"));
            emit_report(&report, &path, f)?;
            manifest.output(&path)?;
        }
        if let Some(k) = &report.kde {
            for (name, curve) in [("predicted", &k.predicted), ("actual", &k.actual)] {
                let path = dir.join(format!("{stem}_kde_{name}.csv"));
                emit_kde_csv(curve, &path)?;
                manifest.output(&path)?;
            }
        }
        print_json(&json!({
            "predictor": report.predictor,
            "threshold": report.threshold,
            "n": report.mae.n_all,
            "mae_hours": report.mae.all,
            "mae_weekday_hours": report.mae.weekday,
            "mae_weekend_hours": report.mae.weekend,
            "mean_signed_error_hours": report.mean_signed_error_hours,
            "n_detected": report.n_detected,
        }))?;
    }
    manifest.write(&dir.join(MANIFEST_FILE))?;
    Ok(())
}
