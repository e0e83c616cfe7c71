//! Saliency evaluation: MAE, F-measure, weighted F, S-measure, E-measure.

mod maps;
mod s_measure;
mod scores;
mod weighted_f;

use std::fmt::Write as _;

pub use maps::{GroundTruthMask, SaliencyMap};
pub(crate) use maps::nearest_taps;
pub use s_measure::{s_measure, S_ALPHA};
pub use scores::{binarize, e_measure, f_measure, mae, Threshold, E_EPSILON, F_BETA2};
pub use weighted_f::weighted_f;

use crate::error::{Error, Result};

/// The five scores of one pair, in report column order.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Scores {
    pub e_measure: f64,
    pub s_measure: f64,
    pub weighted_f: f64,
    pub f_measure: f64,
    pub mae: f64,
}

impl Scores {
    pub const COLUMNS: [&'static str; 5] = ["E", "S", "Wf", "F", "MAE"];

    pub fn as_array(&self) -> [f64; 5] {
        [self.e_measure, self.s_measure, self.weighted_f, self.f_measure, self.mae]
    }
}

/// Scores of one pair of equal dims (adaptive-threshold F).
pub fn score_pair(s: &SaliencyMap, g: &GroundTruthMask) -> Result<Scores> {
    Ok(Scores {
        e_measure: e_measure(s, g)?,
        s_measure: s_measure(s, g)?,
        weighted_f: weighted_f(s, g)?,
        f_measure: f_measure(s, g, Threshold::Adaptive)?,
        mae: mae(s, g)?,
    })
}

/// Arithmetic mean of per-pair scores.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub e_measure: f64,
    pub s_measure: f64,
    pub weighted_f: f64,
    pub f_measure: f64,
    pub mae: f64,
    pub count: usize,
}

impl MetricReport {
    pub fn mean_of(rows: &[Scores]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Data("no pairs to evaluate".into()));
        }
        let mut acc = [0.0; 5];
        for r in rows {
            for (a, v) in acc.iter_mut().zip(r.as_array()) {
                *a += v;
            }
        }
        let n = rows.len() as f64;
        Ok(MetricReport {
            e_measure: acc[0] / n,
            s_measure: acc[1] / n,
            weighted_f: acc[2] / n,
            f_measure: acc[3] / n,
            mae: acc[4] / n,
            count: rows.len(),
        })
    }

    pub fn scores(&self) -> Scores {
        Scores {
            e_measure: self.e_measure,
            s_measure: self.s_measure,
            weighted_f: self.weighted_f,
            f_measure: self.f_measure,
            mae: self.mae,
        }
    }
}

/// Per-pair rows plus their mean.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub rows: Vec<(String, Scores)>,
    pub report: MetricReport,
}

/// Scores named pairs after bringing each prediction to its mask's native
/// size (bilinear). Rows keep the input order.
pub fn evaluate_pairs(pairs: &[(String, SaliencyMap, GroundTruthMask)]) -> Result<Evaluation> {
    let mut rows = Vec::with_capacity(pairs.len());
    for (name, s, g) in pairs {
        let s = s.resized(g.height(), g.width())?;
        rows.push((name.clone(), score_pair(&s, g)?));
    }
    let scores: Vec<Scores> = rows.iter().map(|r| r.1).collect();
    let report = MetricReport::mean_of(&scores)?;
    Ok(Evaluation { rows, report })
}

impl Evaluation {
    /// `name,E,S,Wf,F,MAE` header, one row per pair, then a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = format!("name,{}\n", Scores::COLUMNS.join(","));
        let mut line = |name: &str, s: &Scores| {
            let vals: Vec<String> = s.as_array().iter().map(|v| format!("{v:.6}")).collect();
            let _ = writeln!(out, "{},{}", csv_field(name), vals.join(","));
        };
        for (name, s) in &self.rows {
            line(name, s);
        }
        line("mean", &self.report.scores());
        out
    }

    /// Aligned plain-text table with the mean row last.
    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(4);
        let mut out = format!("{:<width$}", "name");
        for c in Scores::COLUMNS {
            let _ = write!(out, " {c:>8}");
        }
        out.push('\n');
        let mut line = |name: &str, s: &Scores| {
            let _ = write!(out, "{name:<width$}");
            for v in s.as_array() {
                let _ = write!(out, " {v:>8.4}");
            }
            out.push('\n');
        };
        for (name, s) in &self.rows {
            line(name, s);
        }
        line("mean", &self.report.scores());
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
