//! Result tables: per-combination metrics and timings as markdown and CSV.

use std::fmt::Write as _;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::metrics::Confusion;

/// One horizon of one evaluated combination.
#[derive(Clone, Debug, PartialEq)]
pub struct HorizonSummary {
    pub f1: f64,
    pub auc: Option<f64>,
    pub counts: Confusion,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CombinationMetrics {
    pub combination: String,
    /// Index `i` holds horizon `t+(i+1)`.
    pub horizons: Vec<HorizonSummary>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimingRow {
    pub combination: String,
    pub preprocess_ms_mean: f64,
    pub preprocess_ms_p95: f64,
    pub inference_ms_mean: f64,
    pub inference_ms_p95: f64,
    /// Fusion share of the inference time.
    pub fusion_ms_mean: f64,
    /// Payload loading per window, excluded from the other columns.
    pub io_ms_mean: f64,
    pub total_ms_mean: f64,
    pub total_ms_p95: f64,
    pub windows: usize,
}

impl TimingRow {
    pub fn over_budget(&self, budget_ms: f64) -> bool {
        self.total_ms_mean > budget_ms
    }
}

/// Inference budget per window: one sampling interval.
pub const BUDGET_MS: f64 = 300.0;

pub const METRICS_HEADER: [&str; 8] = ["combination", "horizon", "f1", "auc", "tp", "fp", "tn", "fn"];

pub fn write_metrics_csv<W: Write>(rows: &[CombinationMetrics], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(METRICS_HEADER)?;
    for row in rows {
        for (h, m) in row.horizons.iter().enumerate() {
            let c = m.counts;
            out.write_record([
                row.combination.clone(),
                (h + 1).to_string(),
                m.f1.to_string(),
                m.auc.map(|a| a.to_string()).unwrap_or_default(),
                c.tp.to_string(),
                c.fp.to_string(),
                c.tn.to_string(),
                c.fn_.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Inverse of [`write_metrics_csv`]; combinations keep their file order.
pub fn read_metrics_csv<R: Read>(r: R) -> Result<Vec<CombinationMetrics>> {
    let mut rd = csv::Reader::from_reader(r);
    if rd.headers()?.iter().ne(METRICS_HEADER) {
        return Err(Error::Data(format!("metrics header must be {}", METRICS_HEADER.join(","))));
    }
    let mut rows: Vec<CombinationMetrics> = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let bad = |what: &str| Error::Data(format!("bad {what} in metrics row {:?}", rec.iter().collect::<Vec<_>>()));
        let num = |i: usize| rec[i].parse::<u64>().map_err(|_| bad(METRICS_HEADER[i]));
        let horizon: usize = rec[1].parse().map_err(|_| bad("horizon"))?;
        let summary = HorizonSummary {
            f1: rec[2].parse().map_err(|_| bad("f1"))?,
            auc: if rec[3].is_empty() {
                None
            } else {
                Some(rec[3].parse().map_err(|_| bad("auc"))?)
            },
            counts: Confusion {
                tp: num(4)?,
                fp: num(5)?,
                tn: num(6)?,
                fn_: num(7)?,
            },
        };
        match rows.last_mut() {
            Some(last) if last.combination == rec[0] => {
                if horizon != last.horizons.len() + 1 {
                    return Err(bad("horizon order"));
                }
                last.horizons.push(summary);
            }
            _ => {
                if horizon != 1 {
                    return Err(bad("horizon order"));
                }
                rows.push(CombinationMetrics {
                    combination: rec[0].to_string(),
                    horizons: vec![summary],
                });
            }
        }
    }
    Ok(rows)
}

pub const TIMINGS_HEADER: [&str; 10] = [
    "combination",
    "preprocess_ms_mean",
    "preprocess_ms_p95",
    "inference_ms_mean",
    "inference_ms_p95",
    "fusion_ms_mean",
    "io_ms_mean",
    "total_ms_mean",
    "total_ms_p95",
    "windows",
];

pub fn write_timings_csv<W: Write>(rows: &[TimingRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TIMINGS_HEADER)?;
    for r in rows {
        out.write_record([
            r.combination.clone(),
            r.preprocess_ms_mean.to_string(),
            r.preprocess_ms_p95.to_string(),
            r.inference_ms_mean.to_string(),
            r.inference_ms_p95.to_string(),
            r.fusion_ms_mean.to_string(),
            r.io_ms_mean.to_string(),
            r.total_ms_mean.to_string(),
            r.total_ms_p95.to_string(),
            r.windows.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_timings_csv<R: Read>(r: R) -> Result<Vec<TimingRow>> {
    let mut rd = csv::Reader::from_reader(r);
    if rd.headers()?.iter().ne(TIMINGS_HEADER) {
        return Err(Error::Data(format!("timings header must be {}", TIMINGS_HEADER.join(","))));
    }
    rd.records()
        .map(|rec| {
            let rec = rec?;
            let f = |i: usize| {
                rec[i]
                    .parse::<f64>()
                    .map_err(|_| Error::Data(format!("bad {} `{}`", TIMINGS_HEADER[i], &rec[i])))
            };
            Ok(TimingRow {
                combination: rec[0].to_string(),
                preprocess_ms_mean: f(1)?,
                preprocess_ms_p95: f(2)?,
                inference_ms_mean: f(3)?,
                inference_ms_p95: f(4)?,
                fusion_ms_mean: f(5)?,
                io_ms_mean: f(6)?,
                total_ms_mean: f(7)?,
                total_ms_p95: f(8)?,
                windows: rec[9].parse().map_err(|_| Error::Data(format!("bad windows `{}`", &rec[9])))?,
            })
        })
        .collect()
}

/// `98.4%` for an F1 of 0.984.
pub fn format_f1(f1: f64) -> String {
    format!("{:.1}%", f1 * 100.0)
}

/// `0.988`, or `n/a` when undefined.
pub fn format_auc(auc: Option<f64>) -> String {
    auc.map_or_else(|| "n/a".to_string(), |a| format!("{a:.3}"))
}

pub fn format_ms(ms: f64) -> String {
    if ms < 1.0 {
        "<1".to_string()
    } else {
        format!("{ms:.1}")
    }
}

/// Rows ordered by F1 at the last horizon, best first; ties keep their input order.
pub fn sort_by_last_f1(rows: &[CombinationMetrics]) -> Vec<&CombinationMetrics> {
    let mut sorted: Vec<&CombinationMetrics> = rows.iter().collect();
    let last = |r: &CombinationMetrics| r.horizons.last().map_or(f64::NEG_INFINITY, |h| h.f1);
    sorted.sort_by(|a, b| last(b).total_cmp(&last(a)));
    sorted
}

/// Markdown performance grid and, when timings are given, the latency table.
pub fn emit_report(rows: &[CombinationMetrics], timings: &[TimingRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Input("report needs at least one evaluated combination".into()));
    }
    let k = rows[0].horizons.len();
    if let Some(r) = rows.iter().find(|r| r.horizons.len() != k) {
        return Err(Error::Input(format!("{} has {} horizons, expected {k}", r.combination, r.horizons.len())));
    }
    let mut md = String::from("## Blockage prediction performance\n\n| Modality |");
    for h in 1..=k {
        let _ = write!(md, " t+{h} F1 | t+{h} AUC-ROC |");
    }
    md.push_str("\n|---|");
    md.push_str(&"---|---|".repeat(k));
    md.push('\n');
    for row in sort_by_last_f1(rows) {
        let _ = write!(md, "| {} |", row.combination);
        for h in &row.horizons {
            let _ = write!(md, " {} | {} |", format_f1(h.f1), format_auc(h.auc));
        }
        md.push('\n');
    }
    if !timings.is_empty() {
        md.push_str("\n## Timings (ms per window)\n\n");
        md.push_str("| Modality | Preprocessing | Inference | Total | Total p95 | Within 300 ms |\n");
        md.push_str("|---|---|---|---|---|---|\n");
        let mut sorted: Vec<&TimingRow> = timings.iter().collect();
        sorted.sort_by(|a, b| b.total_ms_mean.total_cmp(&a.total_ms_mean));
        for t in sorted {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} |",
                t.combination,
                format_ms(t.preprocess_ms_mean),
                format_ms(t.inference_ms_mean),
                format_ms(t.total_ms_mean),
                format_ms(t.total_ms_p95),
                if t.over_budget(BUDGET_MS) { "no" } else { "yes" }
            );
        }
    }
    Ok(md)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(name: &str, f1: &[f64]) -> CombinationMetrics {
        CombinationMetrics {
            combination: name.into(),
            horizons: f1
                .iter()
                .map(|&f1| HorizonSummary {
                    f1,
                    auc: Some(0.5),
                    counts: Confusion::default(),
                })
                .collect(),
        }
    }

    #[test]
    fn cell_formats() {
        assert_eq!(format_f1(0.984), "98.4%");
        assert_eq!(format_f1(1.0), "100.0%");
        assert_eq!(format_auc(Some(0.988)), "0.988");
        assert_eq!(format_auc(None), "n/a");
        assert_eq!(format_ms(0.4), "<1");
        assert_eq!(format_ms(89.84), "89.8");
    }

    #[test]
    fn sorting_is_stable() {
        let rows = [row("a", &[0.5, 0.7]), row("b", &[0.9, 0.8]), row("c", &[0.1, 0.7])];
        let names: Vec<&str> = sort_by_last_f1(&rows).iter().map(|r| r.combination.as_str()).collect();
        assert_eq!(names, ["b", "a", "c"]);
    }

    #[test]
    fn single_row_tables() {
        let md = emit_report(&[row("gps_only", &[0.6])], &[]).unwrap();
        assert_eq!(md.lines().filter(|l| l.starts_with("| gps_only")).count(), 1);
        assert!(emit_report(&[], &[]).is_err());
    }

    #[test]
    fn metrics_csv_round_trip() {
        let mut rows = vec![row("camera_only", &[0.1 + 0.2, 1.0 / 3.0]), row("gps_only", &[0.0, 1.0])];
        rows[1].horizons[0].auc = None;
        rows[0].horizons[1].counts = Confusion {
            tp: 1,
            fp: 2,
            tn: 3,
            fn_: 4,
        };
        let mut buf = Vec::new();
        write_metrics_csv(&rows, &mut buf).unwrap();
        assert_eq!(read_metrics_csv(buf.as_slice()).unwrap(), rows);
    }
}
