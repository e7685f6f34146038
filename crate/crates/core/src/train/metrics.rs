//! Set and ranking metrics for multi-label recommendation.

use serde::{Deserialize, Serialize};

use crate::ehr::DdiMatrix;

fn intersection(a: &[usize], b: &[usize]) -> usize {
    a.iter().filter(|x| b.contains(x)).count()
}

/// `|pred ∩ truth| / |pred ∪ truth|`; 0 when both are empty.
pub fn metric_jaccard(truth: &[usize], pred: &[usize]) -> f64 {
    let inter = intersection(truth, pred);
    let union = truth.len() + pred.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Precision is 0 for an empty prediction.
pub fn precision_recall(truth: &[usize], pred: &[usize]) -> (f64, f64) {
    let inter = intersection(truth, pred) as f64;
    let p = if pred.is_empty() {
        0.0
    } else {
        inter / pred.len() as f64
    };
    let r = if truth.is_empty() {
        0.0
    } else {
        inter / truth.len() as f64
    };
    (p, r)
}

pub fn metric_f1(truth: &[usize], pred: &[usize]) -> f64 {
    let (p, r) = precision_recall(truth, pred);
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Medication ranking by descending probability, ties by index.
pub fn ranking(probs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
    order
}

/// Step-sum area `sum_k Precision_k (Recall_k - Recall_{k-1})` over the
/// ranking cut-offs.
pub fn metric_prauc(truth: &[usize], probs: &[f64]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut area = 0.0;
    for (k, m) in ranking(probs).into_iter().enumerate() {
        if truth.contains(&m) {
            hits += 1;
            area += (hits as f64 / (k + 1) as f64) / truth.len() as f64;
        }
    }
    area
}

/// `(interacting pairs, all pairs)` within one set.
pub fn ddi_pair_counts(set: &[usize], ddi: &DdiMatrix) -> (usize, usize) {
    let mut hit = 0;
    let mut all = 0;
    for (i, &a) in set.iter().enumerate() {
        for &b in &set[i + 1..] {
            all += 1;
            if ddi.get(a, b) {
                hit += 1;
            }
        }
    }
    (hit, all)
}

/// Interacting pairs over all pairs, pooled across the given sets.
pub fn metric_ddi<'a>(sets: impl IntoIterator<Item = &'a [usize]>, ddi: &DdiMatrix) -> f64 {
    let (hit, all) = sets
        .into_iter()
        .map(|s| ddi_pair_counts(s, ddi))
        .fold((0, 0), |(h, a), (x, y)| (h + x, a + y));
    if all == 0 {
        0.0
    } else {
        hit as f64 / all as f64
    }
}

pub fn metric_avg_med<'a>(sets: impl IntoIterator<Item = &'a [usize]>) -> f64 {
    let (n, total) = sets
        .into_iter()
        .fold((0usize, 0usize), |(n, t), s| (n + 1, t + s.len()));
    if n == 0 {
        0.0
    } else {
        total as f64 / n as f64
    }
}

/// Per-patient metric cache: means over the patient's visits plus pooled
/// counts for the rate-type metrics.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PatientMetrics {
    pub jaccard: f64,
    pub f1: f64,
    pub prauc: f64,
    pub ddi_hits: usize,
    pub ddi_pairs: usize,
    /// Pairs within the ground-truth sets.
    pub label_pairs: usize,
    pub visits: usize,
    pub selected: usize,
}

impl PatientMetrics {
    /// `visits` holds `(truth, probabilities, selected set)` per visit.
    pub fn compute(visits: &[(&[usize], &[f64], &[usize])], ddi: &DdiMatrix) -> Self {
        let n = visits.len().max(1) as f64;
        let mut m = PatientMetrics {
            visits: visits.len(),
            ..Self::default()
        };
        for &(truth, probs, sel) in visits {
            m.jaccard += metric_jaccard(truth, sel) / n;
            m.f1 += metric_f1(truth, sel) / n;
            m.prauc += metric_prauc(truth, probs) / n;
            let (h, a) = ddi_pair_counts(sel, ddi);
            m.ddi_hits += h;
            m.ddi_pairs += a;
            m.label_pairs += truth.len() * truth.len().saturating_sub(1) / 2;
            m.selected += sel.len();
        }
        m
    }
}

/// Aggregate over a (multi)set of patients.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricValues {
    pub jaccard: f64,
    pub ddi_rate: f64,
    pub f1: f64,
    pub prauc: f64,
    pub avg_med: f64,
    /// DDI count normalized by ground-truth pair count.
    pub ddi_rate_label: f64,
}

impl MetricValues {
    pub fn aggregate<'a>(patients: impl IntoIterator<Item = &'a PatientMetrics>) -> Self {
        let mut n = 0usize;
        let mut out = MetricValues::default();
        let (mut hits, mut pairs, mut label, mut visits, mut sel) = (0, 0, 0, 0, 0);
        for p in patients {
            n += 1;
            out.jaccard += p.jaccard;
            out.f1 += p.f1;
            out.prauc += p.prauc;
            hits += p.ddi_hits;
            pairs += p.ddi_pairs;
            label += p.label_pairs;
            visits += p.visits;
            sel += p.selected;
        }
        if n == 0 {
            return out;
        }
        let nf = n as f64;
        out.jaccard /= nf;
        out.f1 /= nf;
        out.prauc /= nf;
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        out.ddi_rate = ratio(hits, pairs);
        out.ddi_rate_label = ratio(hits, label);
        out.avg_med = ratio(sel, visits);
        out
    }

    /// Values in report column order.
    pub fn columns(&self) -> [f64; 6] {
        [
            self.jaccard,
            self.ddi_rate,
            self.f1,
            self.prauc,
            self.avg_med,
            self.ddi_rate_label,
        ]
    }
}
