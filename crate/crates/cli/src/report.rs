//! Collate per-method aggregates from an output directory into one table:
//! UA, MIA-Efficacy, RA, TA, Avg. Disparity (vs the retrain run when
//! present), Run Time.

use std::path::Path;

use anyhow::{Context, Result};

use crate::experiment::AggregateReport;

pub struct ReportRow {
    pub label: String,
    pub ua: String,
    pub mia_efficacy: String,
    pub ra: String,
    pub ta: String,
    pub avg_disparity: Option<f64>,
    pub runtime_min: String,
}

/// Find `aggregate.json` files one level under `dir` (one per method label).
pub fn collect_aggregates(dir: &Path) -> Result<Vec<AggregateReport>> {
    let mut found = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        let agg = path.join("aggregate.json");
        if agg.is_file() {
            let text = std::fs::read_to_string(&agg)?;
            let report: AggregateReport =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", agg.display()))?;
            found.push(report);
        }
    }
    found.sort_by(|a, b| a.label.cmp(&b.label));
    Ok(found)
}

fn disparity_vs(gold: &AggregateReport, agg: &AggregateReport) -> f64 {
    let keys = ["ua", "mia_efficacy", "ra", "ta"];
    keys.iter()
        .map(|k| (agg.metrics[*k].mean - gold.metrics[*k].mean).abs())
        .sum::<f64>()
        / keys.len() as f64
}

pub fn build_rows(aggregates: &[AggregateReport]) -> Vec<ReportRow> {
    let gold = aggregates.iter().find(|a| a.label == "retrain");
    aggregates
        .iter()
        .map(|a| ReportRow {
            label: a.label.clone(),
            ua: a.metrics["ua"].formatted(),
            mia_efficacy: a.metrics["mia_efficacy"].formatted(),
            ra: a.metrics["ra"].formatted(),
            ta: a.metrics["ta"].formatted(),
            avg_disparity: gold.map(|g| disparity_vs(g, a)),
            runtime_min: a.runtime_minutes.formatted(),
        })
        .collect()
}

pub fn to_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("method,ua,mia_efficacy,ra,ta,avg_disparity,runtime_min\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.label,
            r.ua,
            r.mia_efficacy,
            r.ra,
            r.ta,
            r.avg_disparity.map(|d| format!("{d:.2}")).unwrap_or_default(),
            r.runtime_min,
        ));
    }
    out
}

pub fn to_markdown(rows: &[ReportRow]) -> String {
    let mut out = String::new();
    out.push_str("| Method | UA | MIA-Efficacy | RA | TA | Avg. Disparity | Run Time (min) |\n");
    out.push_str("|---|---|---|---|---|---|---|\n");
    for r in rows {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} |\n",
            r.label,
            r.ua,
            r.mia_efficacy,
            r.ra,
            r.ta,
            r.avg_disparity.map(|d| format!("{d:.2}")).unwrap_or_else(|| "-".into()),
            r.runtime_min,
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::MeanStd;
    use std::collections::BTreeMap;

    fn agg(label: &str, vals: [f64; 4]) -> AggregateReport {
        let mut metrics = BTreeMap::new();
        for (k, v) in ["ua", "mia_efficacy", "ra", "ta"].iter().zip(vals) {
            metrics.insert(k.to_string(), MeanStd { mean: v, std: 0.1 });
        }
        AggregateReport {
            label: label.to_string(),
            n_seeds: 5,
            metrics,
            runtime_minutes: MeanStd { mean: 1.0, std: 0.0 },
        }
    }

    #[test]
    fn disparity_against_retrain_row() {
        let rows = build_rows(&[
            agg("ours", [3.46, 8.25, 99.50, 93.50]),
            agg("retrain", [5.80, 13.91, 100.00, 94.30]),
        ]);
        let ours = rows.iter().find(|r| r.label == "ours").unwrap();
        assert!((ours.avg_disparity.unwrap() - 2.325).abs() < 1e-12);
        let retrain = rows.iter().find(|r| r.label == "retrain").unwrap();
        assert_eq!(retrain.avg_disparity.unwrap(), 0.0);
    }

    #[test]
    fn no_gold_run_leaves_disparity_blank() {
        let rows = build_rows(&[agg("ft", [1.0, 2.0, 3.0, 4.0])]);
        assert!(rows[0].avg_disparity.is_none());
        assert!(to_markdown(&rows).contains("| - |"));
        assert!(to_csv(&rows).contains("ft,"));
    }
}
