//! Per-patient training loop with best-checkpoint retention.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::{patient_metrics, Correction};
use super::loss::{alpha_schedule, combined_with_alpha, grad_combined, LossConfig, LossParts};
use super::metrics::{ddi_pair_counts, MetricValues, PatientMetrics};
use super::optim::AdamW;
use crate::correction::{correct_one, select_set};
use crate::ehr::{DdiMatrix, PatientRecord};
use crate::error::{Error, Result};
use crate::model::{Grads, Model, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
    pub seed: u64,
    /// Probability cut used for `rate_ddi` and uncorrected selection.
    pub threshold: f64,
    /// Feed corrected probabilities to the loss.
    pub correct_in_loss: bool,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            lr: 5e-4,
            weight_decay: 0.05,
            seed: 0,
            threshold: 0.5,
            correct_in_loss: false,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight decay must be non-negative".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config("threshold must lie in (0, 1)".into()));
        }
        self.loss.validate()
    }
}

/// One row of the append-only run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "row", rename_all = "lowercase")]
pub enum LogRow {
    Step {
        epoch: usize,
        step: u64,
        patient_id: String,
        rate_ddi: f64,
        loss: LossParts,
    },
    Epoch {
        epoch: usize,
        steps: u64,
        loss: LossParts,
        val: Option<MetricValues>,
        val_corrected: Option<MetricValues>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Mean training loss before the first update.
    pub initial_loss: f64,
    /// Mean loss components per epoch, in order.
    pub epoch_losses: Vec<LossParts>,
    pub val_metrics: Vec<Option<MetricValues>>,
    /// 1-based epoch whose parameters were retained.
    pub best_epoch: usize,
    pub best_val_jaccard: Option<f64>,
}

/// Predicted sets at `threshold`, pooled DDI rate over a patient's visits.
fn step_rate_ddi(probs: &[Vec<f64>], ddi: &DdiMatrix, threshold: f64) -> f64 {
    let (h, a) = probs
        .iter()
        .map(|p| ddi_pair_counts(&select_set(p, threshold), ddi))
        .fold((0, 0), |(h, a), (x, y)| (h + x, a + y));
    if a == 0 {
        0.0
    } else {
        h as f64 / a as f64
    }
}

/// Loss of one patient, averaged over visits.  When `grads` is given the
/// parameter gradients are accumulated into it.
pub fn patient_loss(
    model: &Model,
    record: &PatientRecord,
    ddi: &DdiMatrix,
    cfg: &TrainConfig,
    correction: Option<&Correction<'_>>,
    grads: Option<&mut Grads>,
) -> Result<(LossParts, f64)> {
    let mut t = Tape::new(&model.params);
    let outs = model.forward(&mut t, record)?;
    let n = outs.len() as f64;
    let mut preds = Vec::with_capacity(outs.len());
    // Derivative of the loss input with respect to the raw probability.
    let mut pass = Vec::with_capacity(outs.len());
    for (o, visit) in outs.iter().zip(&record.visits) {
        let raw = t.value(o.probs);
        match (cfg.correct_in_loss, correction) {
            (true, Some(c)) => {
                let r = c.apply(raw, visit)?;
                let keep: Vec<f64> = raw
                    .iter()
                    .zip(&r.effects)
                    .map(|(&p, &e)| {
                        let (v, _) = correct_one(p, e, c.config);
                        if v <= 0.0 || v >= 1.0 {
                            0.0
                        } else {
                            1.0
                        }
                    })
                    .collect();
                preds.push(r.corrected);
                pass.push(Some(keep));
            }
            _ => {
                preds.push(raw.to_vec());
                pass.push(None);
            }
        }
    }
    let rate = step_rate_ddi(&preds, ddi, cfg.threshold);
    let alpha = alpha_schedule(rate, cfg.loss.gamma, cfg.loss.kp);
    let mut parts = LossParts {
        alpha,
        ..LossParts::default()
    };
    let mut seeds = Vec::with_capacity(outs.len());
    for (k, visit) in record.visits.iter().enumerate() {
        let mut truth = vec![false; preds[k].len()];
        for &m in &visit.medications {
            truth[m] = true;
        }
        let l = combined_with_alpha(&truth, &preds[k], ddi, alpha, cfg.loss.beta);
        parts.total += l.total / n;
        parts.bce += l.bce / n;
        parts.multi += l.multi / n;
        parts.ddi += l.ddi / n;
        if grads.is_some() {
            let mut g = grad_combined(&truth, &preds[k], ddi, alpha, cfg.loss.beta);
            for (i, gi) in g.iter_mut().enumerate() {
                *gi /= n;
                if let Some(keep) = &pass[k] {
                    *gi *= keep[i];
                }
            }
            seeds.push(g);
        }
    }
    if !parts.total.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss {} for patient {}",
            parts.total, record.patient_id
        )));
    }
    if let Some(grads) = grads {
        let pairs: Vec<_> = outs
            .iter()
            .zip(&seeds)
            .map(|(o, s)| (o.probs, s.as_slice()))
            .collect();
        t.backward_many(&pairs, grads);
    }
    Ok((parts, rate))
}

/// Mean loss over `records` without updating anything.
pub fn dataset_loss(
    model: &Model,
    records: &[PatientRecord],
    ddi: &DdiMatrix,
    cfg: &TrainConfig,
    correction: Option<&Correction<'_>>,
) -> Result<f64> {
    if records.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for r in records {
        total += patient_loss(model, r, ddi, cfg, correction, None)?.0.total;
    }
    Ok(total / records.len() as f64)
}

/// Per-patient `alpha` of the current model.
pub fn patient_alphas(
    model: &Model,
    records: &[PatientRecord],
    ddi: &DdiMatrix,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    records
        .iter()
        .map(|r| Ok(patient_loss(model, r, ddi, cfg, None, None)?.0.alpha))
        .collect()
}

/// Mean loss with every patient's `alpha` held at the given value, so
/// that losses of different parameter states are comparable.
pub fn dataset_loss_at(
    model: &Model,
    records: &[PatientRecord],
    ddi: &DdiMatrix,
    cfg: &TrainConfig,
    alphas: &[f64],
) -> Result<f64> {
    if records.len() != alphas.len() {
        return Err(Error::Shape {
            expected: records.len(),
            actual: alphas.len(),
        });
    }
    if records.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (r, &a) in records.iter().zip(alphas) {
        total += patient_loss(model, r, ddi, cfg, None, None)?
            .0
            .at_alpha(a, cfg.loss.beta);
    }
    Ok(total / records.len() as f64)
}

fn validate_metrics(
    model: &Model,
    val: &[PatientRecord],
    ddi: &DdiMatrix,
    threshold: f64,
    correction: Option<&Correction<'_>>,
) -> Result<(MetricValues, Option<MetricValues>)> {
    let mut plain: Vec<PatientMetrics> = Vec::with_capacity(val.len());
    let mut corrected: Vec<PatientMetrics> = Vec::new();
    for r in val {
        let probs = model.predict(r)?;
        plain.push(patient_metrics(r, &probs, None, threshold, ddi)?);
        if let Some(c) = correction {
            corrected.push(patient_metrics(r, &probs, Some(c), threshold, ddi)?);
        }
    }
    let c = correction.map(|_| MetricValues::aggregate(&corrected));
    Ok((MetricValues::aggregate(&plain), c))
}

/// Trains `model` in place.  One optimizer step per patient; patients are
/// shuffled every epoch from `cfg.seed`.  The parameters of the epoch with
/// the best uncorrected validation Jaccard are restored at the end.
pub fn train(
    model: &mut Model,
    train: &[PatientRecord],
    val: &[PatientRecord],
    ddi: &DdiMatrix,
    cfg: &TrainConfig,
    correction: Option<&Correction<'_>>,
    log: &mut dyn FnMut(&LogRow) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("no training patients".into()));
    }
    let initial_loss = dataset_loss(model, train, ddi, cfg, correction)?;
    let mut opt = AdamW::new(&model.params, cfg.lr, cfg.weight_decay);
    let mut grads = Grads::zeros_like(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut val_metrics = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Vec<Tensor>)> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossParts::default();
        for &i in &order {
            let rec = &train[i];
            grads.zero();
            let (parts, rate) = patient_loss(model, rec, ddi, cfg, correction, Some(&mut grads))?;
            if !grads.all_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient for patient {} in epoch {epoch}",
                    rec.patient_id
                )));
            }
            opt.step(&mut model.params, &grads);
            sum.total += parts.total;
            sum.bce += parts.bce;
            sum.multi += parts.multi;
            sum.ddi += parts.ddi;
            sum.alpha += parts.alpha;
            log(&LogRow::Step {
                epoch,
                step: opt.steps(),
                patient_id: rec.patient_id.clone(),
                rate_ddi: rate,
                loss: parts,
            })?;
        }
        let n = train.len() as f64;
        let mean = LossParts {
            total: sum.total / n,
            bce: sum.bce / n,
            multi: sum.multi / n,
            ddi: sum.ddi / n,
            alpha: sum.alpha / n,
        };
        let (v, vc) = if val.is_empty() {
            (None, None)
        } else {
            let (v, vc) = validate_metrics(model, val, ddi, cfg.threshold, correction)?;
            (Some(v), vc)
        };
        log(&LogRow::Epoch {
            epoch,
            steps: opt.steps(),
            loss: mean,
            val: v,
            val_corrected: vc,
        })?;
        let score = v.map_or(f64::NEG_INFINITY, |m| m.jaccard);
        let improved = match &best {
            None => true,
            Some((s, _, _)) => score > *s || (v.is_none()),
        };
        if improved {
            best = Some((score, epoch, model.params.tensors().to_vec()));
        }
        epoch_losses.push(mean);
        val_metrics.push(v);
    }
    let (score, best_epoch, tensors) = best.expect("at least one epoch");
    model.params.load_from(&tensors)?;
    Ok(TrainOutcome {
        initial_loss,
        epoch_losses,
        val_metrics,
        best_epoch,
        best_val_jaccard: score.is_finite().then_some(score),
    })
}
