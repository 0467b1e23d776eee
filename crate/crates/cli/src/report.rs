//! Terminal tables and CSV exports layered over the JSON reports.

use std::fmt::Write as _;
use std::path::Path;

use riskroute_core::ablate::{AblationBundle, AblationRow};
use riskroute_core::eval::{MetricsReport, SweepRow};

use crate::CliError;

pub fn metrics_table(report: &MetricsReport) -> String {
    let mut out = String::new();
    let mut line = |k: &str, v: String| {
        let _ = writeln!(out, "{k:<16} {v}");
    };
    line("samples", report.n.to_string());
    line(
        "confusion",
        format!(
            "tp {} fp {} tn {} fn {}",
            report.true_positives,
            report.false_positives,
            report.true_negatives,
            report.false_negatives
        ),
    );
    line("precision", format!("{:.4}", report.precision));
    line("recall", format!("{:.4}", report.recall));
    line("f1", format!("{:.4}", report.f1));
    line(
        "routing",
        format!(
            "sl {:.3} llm {:.3} parse_failures {}",
            report.sl_fraction, report.llm_fraction, report.parse_failures
        ),
    );
    out
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<7} {:>6} {:>10} {:>8} {:>8} {:>8} {:>9} {:>12}",
        "sigma", "n", "precision", "recall", "f1", "sl_frac", "llm_frac", "parse_fail"
    );
    for row in rows {
        let r = &row.report;
        let _ = writeln!(
            out,
            "{:<7.2} {:>6} {:>10.4} {:>8.4} {:>8.4} {:>8.3} {:>9.3} {:>12}",
            row.sigma, r.n, r.precision, r.recall, r.f1, r.sl_fraction, r.llm_fraction,
            r.parse_failures
        );
    }
    out
}

/// The five ablation parts, one titled block each, in suite order.
pub fn ablation_table(bundle: &AblationBundle) -> String {
    let mut out = String::new();
    for (title, rows) in parts(bundle) {
        if rows.is_empty() {
            continue;
        }
        let _ = writeln!(out, "== {title} ==");
        let _ = writeln!(
            out,
            "{:<22} {:>5} {:>19} {:>19} {:>19}",
            "arm", "runs", "precision", "recall", "f1"
        );
        for row in rows {
            let s = &row.summary;
            let _ = writeln!(
                out,
                "{:<22} {:>5} {:>19} {:>19} {:>19}",
                row.name,
                s.runs,
                s.precision.to_string(),
                s.recall.to_string(),
                s.f1.to_string()
            );
        }
        let _ = writeln!(out);
    }
    out
}

fn parts(bundle: &AblationBundle) -> [(&'static str, &[AblationRow]); 5] {
    [
        ("prompt text", &bundle.summary_vs_concat),
        ("demonstration retrieval", &bundle.retrieval),
        ("demonstration pool", &bundle.denoising),
        ("routing threshold", &bundle.sweep),
        ("difficulty strata", &bundle.strata),
    ]
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::validation(format!("open {}: {e}", path.display())))?;
    let io_err = |e: csv::Error| CliError::validation(format!("write {}: {e}", path.display()));
    w.write_record([
        "sigma",
        "n",
        "true_positives",
        "false_positives",
        "true_negatives",
        "false_negatives",
        "precision",
        "recall",
        "f1",
        "sl_fraction",
        "llm_fraction",
        "parse_failures",
    ])
    .map_err(io_err)?;
    for row in rows {
        let r = &row.report;
        w.write_record([
            row.sigma.to_string(),
            r.n.to_string(),
            r.true_positives.to_string(),
            r.false_positives.to_string(),
            r.true_negatives.to_string(),
            r.false_negatives.to_string(),
            r.precision.to_string(),
            r.recall.to_string(),
            r.f1.to_string(),
            r.sl_fraction.to_string(),
            r.llm_fraction.to_string(),
            r.parse_failures.to_string(),
        ])
        .map_err(io_err)?;
    }
    w.flush()
        .map_err(|e| CliError::validation(format!("write {}: {e}", path.display())))
}

pub fn write_ablation_csv(path: &Path, bundle: &AblationBundle) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::validation(format!("open {}: {e}", path.display())))?;
    let io_err = |e: csv::Error| CliError::validation(format!("write {}: {e}", path.display()));
    w.write_record([
        "part",
        "arm",
        "runs",
        "precision_mean",
        "precision_std",
        "recall_mean",
        "recall_std",
        "f1_mean",
        "f1_std",
    ])
    .map_err(io_err)?;
    for (title, rows) in parts(bundle) {
        for row in rows {
            let s = &row.summary;
            w.write_record([
                title.to_string(),
                row.name.clone(),
                s.runs.to_string(),
                s.precision.mean.to_string(),
                s.precision.std.to_string(),
                s.recall.mean.to_string(),
                s.recall.std.to_string(),
                s.f1.mean.to_string(),
                s.f1.std.to_string(),
            ])
            .map_err(io_err)?;
        }
    }
    w.flush()
        .map_err(|e| CliError::validation(format!("write {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use riskroute_core::eval::{summarize_runs, RunsSummary};

    fn report(f1_scale: f64) -> MetricsReport {
        MetricsReport {
            n: 20,
            true_positives: 4,
            false_positives: 2,
            true_negatives: 12,
            false_negatives: 2,
            precision: 4.0 / 6.0,
            recall: 4.0 / 6.0,
            f1: (4.0 / 6.0) * f1_scale,
            sl_fraction: 0.75,
            llm_fraction: 0.25,
            parse_failures: 1,
        }
    }

    fn summary() -> RunsSummary {
        summarize_runs(&[report(1.0), report(0.9)]).unwrap()
    }

    #[test]
    fn tables_carry_every_column() {
        let text = metrics_table(&report(1.0));
        assert!(text.contains("tp 4 fp 2 tn 12 fn 2"), "{text}");
        assert!(text.contains("0.6667"), "{text}");
        assert!(text.contains("parse_failures 1"), "{text}");

        let rows = vec![
            SweepRow { sigma: 0.5, report: report(1.0) },
            SweepRow { sigma: 0.6, report: report(0.9) },
        ];
        let text = sweep_table(&rows);
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(1).unwrap().starts_with("0.50"), "{text}");

        let bundle = AblationBundle {
            summary_vs_concat: vec![
                AblationRow { name: "summarized".into(), summary: summary() },
                AblationRow { name: "raw_record".into(), summary: summary() },
            ],
            retrieval: vec![],
            denoising: vec![],
            sweep: vec![],
            strata: vec![AblationRow { name: "hard_llm".into(), summary: summary() }],
        };
        let text = ablation_table(&bundle);
        assert!(text.contains("== prompt text =="), "{text}");
        assert!(!text.contains("demonstration retrieval"), "{text}");
        assert!(text.contains("hard_llm"), "{text}");
        assert!(text.contains("+/-"), "{text}");
    }

    #[test]
    fn csv_exports_round_trip_through_a_reader() {
        let dir = tempfile::tempdir().unwrap();
        let sweep_path = dir.path().join("sweep.csv");
        write_sweep_csv(
            &sweep_path,
            &[SweepRow { sigma: 0.5, report: report(1.0) }],
        )
        .unwrap();
        let mut rdr = csv::Reader::from_path(&sweep_path).unwrap();
        let records: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
        assert_eq!(records.len(), 1);
        assert_eq!(&records[0][0], "0.5");
        assert_eq!(&records[0][8], &(4.0f64 / 6.0).to_string());

        let ab_path = dir.path().join("ablation.csv");
        let bundle = AblationBundle {
            summary_vs_concat: vec![AblationRow { name: "summarized".into(), summary: summary() }],
            retrieval: vec![],
            denoising: vec![],
            sweep: vec![],
            strata: vec![],
        };
        write_ablation_csv(&ab_path, &bundle).unwrap();
        let mut rdr = csv::Reader::from_path(&ab_path).unwrap();
        let records: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
        assert_eq!(records.len(), 1);
        assert_eq!(&records[0][0], "prompt text");
        assert_eq!(&records[0][2], "2");
    }
}
