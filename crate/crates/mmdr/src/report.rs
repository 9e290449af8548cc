//! Metric tables: CSV (`model,view,class,AP,AR,block_acc`), an aligned text
//! table with one block per view, and the training log.

use std::fmt::Write as _;

use mmdr_core::eval::{EvalReport, View};

use crate::kitti::CLASS_NAMES;
use crate::pipeline::LogRow;

pub const CSV_HEADER: &str = "model,view,class,AP,AR,block_acc";

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.6}"))
}

/// One row per class plus an `All` row holding the unweighted class means.
/// Values are fractions in `[0, 1]`; `NA` marks a class without ground
/// truth or a model without a block head.
pub fn to_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        let block = cell(r.block_acc);
        let rows = CLASS_NAMES
            .iter()
            .zip(&r.classes)
            .map(|(name, c)| (*name, c.ap, c.ar))
            .chain([("All", r.map(), r.mar())]);
        for (name, ap, ar) in rows {
            let _ = writeln!(out, "{},{},{name},{},{},{block}", r.model, r.view.as_str(), cell(ap), cell(ar));
        }
    }
    out
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{:.1}", 100.0 * x))
}

/// Per view, models as rows and `AP AR` per class plus `All` as columns,
/// in percent.
pub fn to_table(reports: &[EvalReport], title: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{title}");
    let _ = writeln!(
        out,
        "Baselines are capacity-matched internal models, not the externally trained detectors of published comparisons."
    );
    let width = reports.iter().map(|r| r.model.len()).max().unwrap_or(5).max(5);
    for view in [View::Image, View::Bev] {
        let rows: Vec<&EvalReport> = reports.iter().filter(|r| r.view == view).collect();
        if rows.is_empty() {
            continue;
        }
        let _ = writeln!(out, "\n[{}]", view.as_str());
        let mut header = format!("{:width$}", "Model");
        for name in CLASS_NAMES.iter().chain(&["All"]) {
            let _ = write!(header, " | {name:^13}");
        }
        header.push_str(" | Block");
        let _ = writeln!(out, "{header}");
        let mut sub = format!("{:width$}", "");
        for _ in 0..=CLASS_NAMES.len() {
            let _ = write!(sub, " | {:>6} {:>6}", "AP", "AR");
        }
        sub.push_str(" |");
        let _ = writeln!(out, "{sub}");
        let _ = writeln!(out, "{}", "-".repeat(header.len()));
        for r in rows {
            let mut line = format!("{:width$}", r.model);
            for c in &r.classes {
                let _ = write!(line, " | {:>6} {:>6}", pct(c.ap), pct(c.ar));
            }
            let _ = write!(line, " | {:>6} {:>6}", pct(r.map()), pct(r.mar()));
            let _ = write!(line, " | {:>5}", pct(r.block_acc));
            let _ = writeln!(out, "{line}");
        }
    }
    out
}

pub fn log_to_csv(rows: &[LogRow]) -> String {
    let mut out = String::from("stage,epoch,loss,val_map\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:.6},{}", r.stage, r.epoch, r.loss, cell(r.val_map));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use mmdr_core::eval::ClassMetrics;

    fn report(model: &str, view: View, block: Option<f64>) -> EvalReport {
        EvalReport {
            model: model.into(),
            view,
            classes: [
                ClassMetrics {
                    ap: Some(0.5),
                    ar: Some(0.75),
                },
                ClassMetrics {
                    ap: Some(1.0),
                    ar: Some(1.0),
                },
                ClassMetrics { ap: None, ar: None },
            ],
            block_acc: block,
        }
    }

    #[test]
    fn csv_layout() {
        let csv = to_csv(&[report("MMDR", View::Image, Some(0.9))]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "MMDR,2D,Pedestrian,0.500000,0.750000,0.900000");
        assert_eq!(lines[3], "MMDR,2D,Cyclist,NA,NA,0.900000");
        assert_eq!(lines[4], "MMDR,2D,All,0.750000,0.875000,0.900000");
    }

    #[test]
    fn table_groups_by_view() {
        let t = to_table(&[report("a", View::Image, None), report("b", View::Bev, None)], "T");
        let image = t.find("[2D]").unwrap();
        let bev = t.find("[BEV]").unwrap();
        assert!(image < t.find("\na ").unwrap() && t.find("\na ").unwrap() < bev);
        assert!(t.contains("75.0"));
    }
}
