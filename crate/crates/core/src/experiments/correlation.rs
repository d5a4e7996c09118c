use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::SpectrumMetrics;

/// Groups with fewer rows are skipped.
pub const MIN_GROUP_ROWS: usize = 4;

const Z_95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PearsonCi {
    pub r: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub m: usize,
}

/// Fisher-z 95% interval `tanh(atanh(r) -/+ 1.96 / sqrt(m - 3))`.
pub fn fisher_interval(r: f64, m: usize) -> Result<(f64, f64)> {
    if m < 4 {
        return Err(Error::Invalid(format!(
            "confidence interval needs at least 4 samples, got {m}"
        )));
    }
    let z = r.clamp(-1.0, 1.0).atanh();
    let half = Z_95 / ((m - 3) as f64).sqrt();
    // atanh(+-1) is infinite and tanh maps it back to +-1.
    Ok(((z - half).tanh(), (z + half).tanh()))
}

/// Sample Pearson correlation with its Fisher-z 95% interval.
pub fn pearson_ci(xs: &[f64], ys: &[f64]) -> Result<PearsonCi> {
    if xs.len() != ys.len() {
        return Err(Error::Invalid("pearson inputs differ in length".into()));
    }
    let m = xs.len();
    if m < 4 {
        return Err(Error::Invalid(format!("pearson needs at least 4 pairs, got {m}")));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Invalid("pearson inputs must be finite".into()));
    }
    let mx = xs.iter().sum::<f64>() / m as f64;
    let my = ys.iter().sum::<f64>() / m as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Invalid(
            "pearson correlation undefined for constant input".into(),
        ));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let (ci_low, ci_high) = fisher_interval(r, m)?;
    Ok(PearsonCi { r, ci_low, ci_high, m })
}

/// One representation/kernel combination: its (truncated) spectrum metrics
/// and the across-property average R².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub group: String,
    pub representation: String,
    pub kernel: String,
    pub metrics: SpectrumMetrics,
    pub avg_r2: f64,
}

impl MetricRow {
    /// Metric values oriented so that larger means a richer spectrum.
    pub fn oriented(&self) -> [f64; 4] {
        [-self.metrics.alpha, self.metrics.sse, self.metrics.id, self.metrics.sr]
    }
}

pub const METRIC_NAMES: [&str; 4] = ["neg_alpha", "sse", "id", "sr"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCorrelation {
    pub metric: String,
    /// `None` when the correlation is undefined (constant metric or R²).
    pub pearson: Option<PearsonCi>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCorrelation {
    pub group: String,
    pub rows: usize,
    pub metrics: Vec<MetricCorrelation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedGroup {
    pub group: String,
    pub rows: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub groups: Vec<GroupCorrelation>,
    pub skipped: Vec<SkippedGroup>,
}

impl CorrelationReport {
    /// `group,metric,m,r,ci_low,ci_high`; undefined entries have empty fields.
    pub fn table_csv(&self) -> String {
        let mut out = String::from("group,metric,m,r,ci_low,ci_high\n");
        for g in &self.groups {
            for mc in &g.metrics {
                match mc.pearson {
                    Some(p) => {
                        let _ = writeln!(
                            out,
                            "{},{},{},{},{},{}",
                            g.group, mc.metric, p.m, p.r, p.ci_low, p.ci_high
                        );
                    }
                    None => {
                        let _ = writeln!(out, "{},{},{},,,", g.group, mc.metric, g.rows);
                    }
                }
            }
        }
        out
    }
}

/// Groups in order of first appearance.
fn grouped(rows: &[MetricRow]) -> Vec<(&str, Vec<&MetricRow>)> {
    let mut groups: Vec<(&str, Vec<&MetricRow>)> = Vec::new();
    for row in rows {
        match groups.iter_mut().find(|(g, _)| *g == row.group) {
            Some((_, members)) => members.push(row),
            None => groups.push((&row.group, vec![row])),
        }
    }
    groups
}

/// Pearson correlation of each metric (with alpha negated) against the
/// average R², per group.
pub fn correlate_metrics(rows: &[MetricRow]) -> Result<CorrelationReport> {
    if rows.is_empty() {
        return Err(Error::Invalid("no rows to correlate".into()));
    }
    let mut report = CorrelationReport {
        groups: Vec::new(),
        skipped: Vec::new(),
    };
    for (group, members) in grouped(rows) {
        if members.len() < MIN_GROUP_ROWS {
            log::warn!("group {group} has {} rows; skipped", members.len());
            report.skipped.push(SkippedGroup {
                group: group.to_string(),
                rows: members.len(),
                reason: format!("fewer than {MIN_GROUP_ROWS} rows"),
            });
            continue;
        }
        let r2: Vec<f64> = members.iter().map(|r| r.avg_r2).collect();
        let metrics = METRIC_NAMES
            .iter()
            .enumerate()
            .map(|(k, name)| {
                let xs: Vec<f64> = members.iter().map(|r| r.oriented()[k]).collect();
                match pearson_ci(&xs, &r2) {
                    Ok(p) => MetricCorrelation {
                        metric: name.to_string(),
                        pearson: Some(p),
                        note: None,
                    },
                    Err(e) => MetricCorrelation {
                        metric: name.to_string(),
                        pearson: None,
                        note: Some(e.to_string()),
                    },
                }
            })
            .collect();
        report.groups.push(GroupCorrelation {
            group: group.to_string(),
            rows: members.len(),
            metrics,
        });
    }
    Ok(report)
}

/// Scatter data: one line per row with the oriented metrics and average R².
pub fn scatter_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from("group,representation,kernel,neg_alpha,sse,id,sr,avg_r2\n");
    for row in rows {
        let [a, s, i, r] = row.oriented();
        let _ = writeln!(
            out,
            "{},{},{},{a},{s},{i},{r},{}",
            row.group, row.representation, row.kernel, row.avg_r2
        );
    }
    out
}
