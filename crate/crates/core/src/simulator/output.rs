//! CSV emission. Floats use fixed precision so reruns are byte-identical.

use std::collections::BTreeMap;
use std::io::Write;

use super::{Traffic, WindowMetrics};
use crate::model::{ClusterId, BITRATE_LADDER_KBPS};

pub const METRICS_HEADER: [&str; 12] = [
    "window_start",
    "strategy",
    "alpha",
    "fluctuation",
    "offloading_ratio",
    "sat_400",
    "sat_750",
    "sat_1000",
    "sat_2500",
    "edge_kb",
    "origin_kb",
    "degenerate",
];

fn fixed(x: f64) -> String {
    format!("{x:.6}")
}

/// Mean of the per-window offloading ratios; 0 for no rows.
pub fn mean_offloading(rows: &[WindowMetrics]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter().map(|r| r.offloading_ratio).sum::<f64>() / rows.len() as f64
}

/// One row per window. Tiers nobody watched are left empty.
pub fn write_metrics_csv(rows: &[WindowMetrics], out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        let mut record = vec![
            r.window_start.to_string(),
            r.strategy.to_string(),
            fixed(r.alpha),
            fixed(r.fluctuation),
            fixed(r.offloading_ratio),
        ];
        for tier in BITRATE_LADDER_KBPS {
            record.push(r.satisfaction.get(&tier).map(|&s| fixed(s)).unwrap_or_default());
        }
        record.push(r.edge_kb.to_string());
        record.push(r.origin_kb.to_string());
        record.push(r.degenerate.to_string());
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// `cluster_id,offloading_ratio`, one row per cluster.
pub fn write_cluster_csv(totals: &BTreeMap<ClusterId, Traffic>, out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cluster_id", "offloading_ratio"])?;
    for (id, t) in totals {
        w.write_record([id.as_str(), &fixed(t.ratio())])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::Strategy;
    use super::*;

    fn row(ratio: f64) -> WindowMetrics {
        WindowMetrics {
            window_start: 300,
            strategy: Strategy::Abr,
            alpha: 0.4,
            fluctuation: 0.0,
            offloading_ratio: ratio,
            degenerate: false,
            satisfaction: [(400, 1.0), (2500, 0.25)].into_iter().collect(),
            per_cluster: BTreeMap::new(),
            edge_kb: 10,
            origin_kb: 30,
            violations: vec![],
        }
    }

    #[test]
    fn metrics_layout() {
        let mut buf = Vec::new();
        write_metrics_csv(&[row(0.25)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER.join(","));
        assert_eq!(lines[1], "300,abr,0.400000,0.000000,0.250000,1.000000,,,0.250000,10,30,false");
    }

    #[test]
    fn cluster_layout() {
        let totals: BTreeMap<ClusterId, Traffic> =
            [("c1".into(), Traffic { edge_kb: 1, total_kb: 4 })].into_iter().collect();
        let mut buf = Vec::new();
        write_cluster_csv(&totals, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "cluster_id,offloading_ratio\nc1,0.250000\n");
    }

    #[test]
    fn mean_of_rows() {
        assert_eq!(mean_offloading(&[]), 0.0);
        assert_eq!(mean_offloading(&[row(0.2), row(0.6)]), 0.4);
    }
}
