//! Evaluation, bootstrap aggregation, audits and the frequency baseline.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{MetricValues, PatientMetrics};
use crate::correction::{correct, uncorrected, Branch, CorrectionConfig, RecommendationResult};
use crate::ehr::{DdiMatrix, PatientRecord, Visit};
use crate::error::{Error, Result};
use crate::mining::CausalEffectMatrix;
use crate::model::Model;

/// Effect matrices and thresholds used for bias correction.
#[derive(Debug, Clone, Copy)]
pub struct Correction<'a> {
    pub dm: &'a CausalEffectMatrix,
    pub pm: &'a CausalEffectMatrix,
    pub config: &'a CorrectionConfig,
}

impl Correction<'_> {
    pub fn apply(&self, raw: &[f64], visit: &Visit) -> Result<RecommendationResult> {
        correct(raw, visit, self.dm, self.pm, self.config)
    }
}

/// Turns raw probabilities into a recommendation, corrected or not.
pub fn recommend(
    raw: &[f64],
    visit: &Visit,
    correction: Option<&Correction<'_>>,
    threshold: f64,
) -> Result<RecommendationResult> {
    match correction {
        Some(c) => c.apply(raw, visit),
        None => Ok(uncorrected(raw, threshold)),
    }
}

/// Metrics of one patient from precomputed per-visit probabilities.
pub fn patient_metrics(
    record: &PatientRecord,
    probs: &[Vec<f64>],
    correction: Option<&Correction<'_>>,
    threshold: f64,
    ddi: &DdiMatrix,
) -> Result<PatientMetrics> {
    let recs: Vec<RecommendationResult> = record
        .visits
        .iter()
        .zip(probs)
        .map(|(v, p)| recommend(p, v, correction, threshold))
        .collect::<Result<_>>()?;
    let rows: Vec<(&[usize], &[f64], &[usize])> = record
        .visits
        .iter()
        .zip(&recs)
        .map(|(v, r)| {
            (
                v.medications.as_slice(),
                r.corrected.as_slice(),
                r.selected.as_slice(),
            )
        })
        .collect();
    Ok(PatientMetrics::compute(&rows, ddi))
}

/// Per-patient metrics of the model on `records`.
pub fn evaluate_patients(
    model: &Model,
    records: &[PatientRecord],
    ddi: &DdiMatrix,
    correction: Option<&Correction<'_>>,
    threshold: f64,
) -> Result<Vec<PatientMetrics>> {
    records
        .iter()
        .map(|r| {
            let probs = model.predict(r)?;
            patient_metrics(r, &probs, correction, threshold, ddi)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rounds: Vec<MetricValues>,
    pub mean: MetricValues,
    pub stderr: MetricValues,
}

pub const REPORT_COLUMNS: [&str; 6] = [
    "jaccard",
    "ddi_rate",
    "f1",
    "prauc",
    "avg_med",
    "ddi_rate_label",
];

fn from_columns(c: [f64; 6]) -> MetricValues {
    MetricValues {
        jaccard: c[0],
        ddi_rate: c[1],
        f1: c[2],
        prauc: c[3],
        avg_med: c[4],
        ddi_rate_label: c[5],
    }
}

impl MetricReport {
    pub fn from_rounds(rounds: Vec<MetricValues>) -> Result<Self> {
        if rounds.is_empty() {
            return Err(Error::Empty("metric report without rounds".into()));
        }
        let n = rounds.len() as f64;
        let mut mean = [0.0; 6];
        for r in &rounds {
            for (m, v) in mean.iter_mut().zip(r.columns()) {
                *m += v / n;
            }
        }
        let mut se = [0.0; 6];
        if rounds.len() > 1 {
            for (k, s) in se.iter_mut().enumerate() {
                let var = rounds
                    .iter()
                    .map(|r| (r.columns()[k] - mean[k]).powi(2))
                    .sum::<f64>()
                    / (n - 1.0);
                *s = (var / n).sqrt();
            }
        }
        Ok(MetricReport {
            rounds,
            mean: from_columns(mean),
            stderr: from_columns(se),
        })
    }

    /// Rows: one per round, then `mean`, `stderr`, and `mean±stderr` text.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "row,{}", REPORT_COLUMNS.join(","));
        let fmt = |c: [f64; 6]| {
            c.iter()
                .map(|v| format!("{v:.6}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        for (i, r) in self.rounds.iter().enumerate() {
            let _ = writeln!(s, "round{},{}", i + 1, fmt(r.columns()));
        }
        let _ = writeln!(s, "mean,{}", fmt(self.mean.columns()));
        let _ = writeln!(s, "stderr,{}", fmt(self.stderr.columns()));
        let pm: Vec<String> = self
            .mean
            .columns()
            .iter()
            .zip(self.stderr.columns())
            .map(|(m, e)| format!("{m:.4}±{e:.4}"))
            .collect();
        let _ = writeln!(s, "summary,{}", pm.join(","));
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Aggregates cached per-patient metrics over bootstrap rounds of indices.
pub fn evaluate_bootstrap(
    per_patient: &[PatientMetrics],
    rounds: &[Vec<usize>],
) -> Result<MetricReport> {
    let vals = rounds
        .iter()
        .map(|r| MetricValues::aggregate(r.iter().map(|&i| &per_patient[i])))
        .collect();
    MetricReport::from_rounds(vals)
}

/// Correction audit row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub patient_id: String,
    pub visit: usize,
    pub medication: usize,
    pub raw: f64,
    pub effect: f64,
    pub branch: Branch,
    pub corrected: f64,
    pub selected: bool,
    pub prescribed: bool,
}

pub fn audit_patient(
    model: &Model,
    record: &PatientRecord,
    correction: &Correction<'_>,
) -> Result<Vec<AuditRow>> {
    let probs = model.predict(record)?;
    let mut rows = Vec::new();
    for (k, (visit, p)) in record.visits.iter().zip(&probs).enumerate() {
        let r = correction.apply(p, visit)?;
        for m in 0..p.len() {
            rows.push(AuditRow {
                patient_id: record.patient_id.clone(),
                visit: k,
                medication: m,
                raw: r.raw[m],
                effect: r.effects[m],
                branch: r.branch[m],
                corrected: r.corrected[m],
                selected: r.selected.contains(&m),
                prescribed: visit.medications.contains(&m),
            });
        }
    }
    Ok(rows)
}

/// Recommends the `k` most frequent training medications for every visit,
/// with `k` the rounded mean training prescription size.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyBaseline {
    pub frequency: Vec<f64>,
    pub k: usize,
    pub selected: Vec<usize>,
}

impl FrequencyBaseline {
    pub fn fit(train: &[PatientRecord], n_meds: usize) -> Self {
        let mut counts = vec![0usize; n_meds];
        let mut visits = 0usize;
        let mut total = 0usize;
        for v in train.iter().flat_map(|r| &r.visits) {
            visits += 1;
            total += v.medications.len();
            for &m in &v.medications {
                counts[m] += 1;
            }
        }
        let frequency: Vec<f64> = counts
            .iter()
            .map(|&c| {
                if visits == 0 {
                    0.0
                } else {
                    c as f64 / visits as f64
                }
            })
            .collect();
        let k = if visits == 0 {
            0
        } else {
            (total as f64 / visits as f64).round() as usize
        };
        let mut selected: Vec<usize> = super::metrics::ranking(&frequency)
            .into_iter()
            .take(k)
            .collect();
        selected.sort_unstable();
        FrequencyBaseline {
            frequency,
            k,
            selected,
        }
    }

    pub fn evaluate(&self, records: &[PatientRecord], ddi: &DdiMatrix) -> Vec<PatientMetrics> {
        records
            .iter()
            .map(|r| {
                let rows: Vec<(&[usize], &[f64], &[usize])> = r
                    .visits
                    .iter()
                    .map(|v| {
                        (
                            v.medications.as_slice(),
                            self.frequency.as_slice(),
                            self.selected.as_slice(),
                        )
                    })
                    .collect();
                PatientMetrics::compute(&rows, ddi)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stderr_and_single_round() {
        let a = MetricValues {
            jaccard: 0.4,
            ..MetricValues::default()
        };
        let b = MetricValues {
            jaccard: 0.6,
            ..MetricValues::default()
        };
        let r = MetricReport::from_rounds(vec![a, b]).unwrap();
        assert!((r.mean.jaccard - 0.5).abs() < 1e-15);
        // sample sd = sqrt(0.02), se = sd / sqrt(2) = 0.1
        assert!((r.stderr.jaccard - 0.1).abs() < 1e-12);
        let one = MetricReport::from_rounds(vec![a]).unwrap();
        assert_eq!(one.stderr.jaccard, 0.0);
        assert!(one
            .to_csv()
            .starts_with("row,jaccard,ddi_rate,f1,prauc,avg_med"));
    }

    #[test]
    fn frequency_baseline_picks_top_k() {
        let rec = |meds: Vec<usize>| PatientRecord {
            patient_id: "p".into(),
            visits: vec![Visit::new(vec![0], vec![0], meds)],
        };
        let train = vec![rec(vec![0, 1]), rec(vec![1, 2]), rec(vec![1, 3])];
        let b = FrequencyBaseline::fit(&train, 4);
        assert_eq!(b.k, 2);
        assert_eq!(b.selected, vec![0, 1]);
    }
}
