//! Logistic-link GLM estimates of disease/procedure → medication effects.
//!
//! For every medication a single logistic regression is fitted on the
//! training visits, with disease and procedure indicators as covariates.
//! Candidate sources are the entities co-occurring with the medication at
//! least `min_support` times; their causal-graph parents join the design as
//! adjustment covariates.  The effect of source `s` on medication `m` is the
//! fitted response probability with only `s` active,
//! `logistic(beta_0 + beta_s)`.

use std::collections::{BTreeSet, HashMap};

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::data::OccurrenceTable;
use super::graph::CausalGraph;
use crate::ehr::EntityKind;
use crate::error::{Error, Result};

/// Clamp applied to every candidate effect.
pub const EFFECT_EPSILON: f64 = 1e-4;
/// Coefficients beyond this magnitude indicate (quasi-)separation.
const SEPARATION_BETA: f64 = 15.0;
const RIDGE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectConfig {
    pub min_support: usize,
    pub epsilon: f64,
    /// Add causal-graph parents of candidates as adjustment covariates.
    pub adjust_for_parents: bool,
}

impl Default for EffectConfig {
    fn default() -> Self {
        EffectConfig {
            min_support: 5,
            epsilon: EFFECT_EPSILON,
            adjust_for_parents: true,
        }
    }
}

/// Effects of one source kind on every medication, row-major
/// `sources × medications`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalEffectMatrix {
    pub source_kind: EntityKind,
    pub n_sources: usize,
    pub n_medications: usize,
    pub values: Vec<f64>,
    /// Fitted `beta_s` for candidate pairs, 0 elsewhere.
    pub coefficients: Vec<f64>,
    /// Fitted intercept per medication.
    pub intercepts: Vec<f64>,
}

impl CausalEffectMatrix {
    pub fn zeros(source_kind: EntityKind, n_sources: usize, n_medications: usize) -> Self {
        CausalEffectMatrix {
            source_kind,
            n_sources,
            n_medications,
            values: vec![0.0; n_sources * n_medications],
            coefficients: vec![0.0; n_sources * n_medications],
            intercepts: vec![0.0; n_medications],
        }
    }

    #[inline]
    pub fn get(&self, source: usize, med: usize) -> f64 {
        self.values[source * self.n_medications + med]
    }

    pub fn set(&mut self, source: usize, med: usize, v: f64) {
        self.values[source * self.n_medications + med] = v;
    }

    /// Nonzero `(source, medication, effect)` entries in row-major order.
    pub fn nonzero(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for s in 0..self.n_sources {
            for m in 0..self.n_medications {
                let v = self.get(s, m);
                if v != 0.0 {
                    out.push((s, m, v));
                }
            }
        }
        out
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Weighted binomial design: unique covariate patterns with trial and
/// success counts.
struct GroupedDesign {
    patterns: Vec<Vec<usize>>,
    trials: Vec<f64>,
    successes: Vec<f64>,
    n_cov: usize,
}

#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

fn penalized_loglik(d: &GroupedDesign, beta: &[f64]) -> f64 {
    let mut ll = 0.0;
    for (i, pat) in d.patterns.iter().enumerate() {
        let eta = beta[0] + pat.iter().map(|&c| beta[c + 1]).sum::<f64>();
        // log(1 + e^eta), stable.
        let softplus = if eta > 0.0 {
            eta + (-eta).exp().ln_1p()
        } else {
            eta.exp().ln_1p()
        };
        ll += d.successes[i] * eta - d.trials[i] * softplus;
    }
    ll - 0.5 * RIDGE * beta[1..].iter().map(|b| b * b).sum::<f64>()
}

/// Newton–Raphson (IRLS) with a small ridge on the slopes and step halving.
fn fit_logistic(d: &GroupedDesign) -> Result<LogisticFit> {
    let p = d.n_cov + 1;
    let mut beta = vec![0.0; p];
    let total_n: f64 = d.trials.iter().sum();
    let total_y: f64 = d.successes.iter().sum();
    let base = ((total_y + 0.5) / (total_n + 1.0)).clamp(1e-6, 1.0 - 1e-6);
    beta[0] = (base / (1.0 - base)).ln();
    let mut ll = penalized_loglik(d, &beta);
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..100 {
        iterations = it + 1;
        let mut grad = DVector::<f64>::zeros(p);
        let mut hess = DMatrix::<f64>::zeros(p, p);
        for (i, pat) in d.patterns.iter().enumerate() {
            let eta = beta[0] + pat.iter().map(|&c| beta[c + 1]).sum::<f64>();
            let mu = logistic(eta);
            let r = d.successes[i] - d.trials[i] * mu;
            let w = d.trials[i] * mu * (1.0 - mu);
            let idx: Vec<usize> = std::iter::once(0)
                .chain(pat.iter().map(|&c| c + 1))
                .collect();
            for &a in &idx {
                grad[a] += r;
                for &b in &idx {
                    hess[(a, b)] += w;
                }
            }
        }
        for a in 1..p {
            grad[a] -= RIDGE * beta[a];
            hess[(a, a)] += RIDGE;
        }
        // Tiny jitter keeps the intercept row positive definite.
        hess[(0, 0)] += 1e-12;
        let step = hess
            .cholesky()
            .ok_or_else(|| Error::Numeric("GLM Hessian is not positive definite".into()))?
            .solve(&grad);
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand: Vec<f64> = beta
                .iter()
                .zip(step.iter())
                .map(|(b, s)| b + scale * s)
                .collect();
            let cand_ll = penalized_loglik(d, &cand);
            if cand_ll >= ll - 1e-12 {
                beta = cand;
                ll = cand_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        let max_step = step.iter().fold(0.0f64, |m, s| m.max((s * scale).abs()));
        if !accepted || max_step < 1e-8 {
            converged = accepted || max_step < 1e-8;
            break;
        }
    }
    Ok(LogisticFit {
        intercept: beta[0],
        coefficients: beta[1..].to_vec(),
        converged,
        iterations,
    })
}

/// A covariate column: source kind and entity index.
type Covariate = (EntityKind, usize);

fn group_design(
    covariates: &[Covariate],
    diseases: &OccurrenceTable,
    procedures: &OccurrenceTable,
    meds: &OccurrenceTable,
    med: usize,
) -> GroupedDesign {
    let mut groups: HashMap<Vec<usize>, (f64, f64)> = HashMap::new();
    let mut order: Vec<Vec<usize>> = Vec::new();
    for s in 0..meds.n_samples() {
        let pat: Vec<usize> = covariates
            .iter()
            .enumerate()
            .filter(|(_, (kind, e))| match kind {
                EntityKind::Disease => diseases.get(s, *e),
                _ => procedures.get(s, *e),
            })
            .map(|(i, _)| i)
            .collect();
        let y = if meds.get(s, med) { 1.0 } else { 0.0 };
        let entry = groups.entry(pat.clone()).or_insert_with(|| {
            order.push(pat);
            (0.0, 0.0)
        });
        entry.0 += 1.0;
        entry.1 += y;
    }
    let (trials, successes) = order.iter().map(|p| groups[p]).unzip();
    GroupedDesign {
        patterns: order,
        trials,
        successes,
        n_cov: covariates.len(),
    }
}

/// Estimates `(M^dm, M^pm)` from per-visit occurrence tables sharing rows.
pub fn estimate_causal_effects(
    disease_graph: &CausalGraph,
    procedure_graph: &CausalGraph,
    diseases: &OccurrenceTable,
    procedures: &OccurrenceTable,
    meds: &OccurrenceTable,
    cfg: EffectConfig,
) -> Result<(CausalEffectMatrix, CausalEffectMatrix)> {
    if diseases.n_samples() != meds.n_samples() || procedures.n_samples() != meds.n_samples() {
        return Err(Error::Shape {
            expected: meds.n_samples(),
            actual: diseases.n_samples().min(procedures.n_samples()),
        });
    }
    let nm = meds.n_vars();
    let mut dm = CausalEffectMatrix::zeros(EntityKind::Disease, diseases.n_vars(), nm);
    let mut pm = CausalEffectMatrix::zeros(EntityKind::Procedure, procedures.n_vars(), nm);

    let mut separated = 0usize;
    for m in 0..nm {
        let mut candidates: Vec<Covariate> = Vec::new();
        for d in 0..diseases.n_vars() {
            if cooccur(diseases, d, meds, m) >= cfg.min_support {
                candidates.push((EntityKind::Disease, d));
            }
        }
        for p in 0..procedures.n_vars() {
            if cooccur(procedures, p, meds, m) >= cfg.min_support {
                candidates.push((EntityKind::Procedure, p));
            }
        }
        if candidates.is_empty() {
            continue;
        }
        let mut covs: BTreeSet<Covariate> = candidates.iter().copied().collect();
        if cfg.adjust_for_parents {
            for &(kind, e) in &candidates {
                let g = if kind == EntityKind::Disease {
                    disease_graph
                } else {
                    procedure_graph
                };
                for &parent in g.parents(e) {
                    covs.insert((kind, parent));
                }
            }
        }
        let covs: Vec<Covariate> = covs.into_iter().collect();
        let design = group_design(&covs, diseases, procedures, meds, m);
        let fit = fit_logistic(&design)?;
        if !fit.converged {
            warn!(
                "GLM for medication {m} did not converge in {} iterations",
                fit.iterations
            );
        }
        dm.intercepts[m] = fit.intercept;
        pm.intercepts[m] = fit.intercept;
        for &(kind, e) in &candidates {
            let pos = covs.binary_search(&(kind, e)).expect("candidate in design");
            let beta = fit.coefficients[pos];
            if beta.abs() > SEPARATION_BETA {
                debug!("GLM separation for {kind} {e} -> medication {m} (beta = {beta:.2})");
                separated += 1;
            }
            let effect = logistic(fit.intercept + beta).clamp(cfg.epsilon, 1.0 - cfg.epsilon);
            let target = if kind == EntityKind::Disease {
                &mut dm
            } else {
                &mut pm
            };
            target.set(e, m, effect);
            target.coefficients[e * nm + m] = beta;
        }
    }
    if separated > 0 {
        warn!("{separated} GLM coefficients show separation (|beta| > {SEPARATION_BETA}); their effects are clamped");
    }
    Ok((dm, pm))
}

fn cooccur(a: &OccurrenceTable, i: usize, b: &OccurrenceTable, j: usize) -> usize {
    a.column(i)
        .iter()
        .zip(b.column(j))
        .map(|(x, y)| (x & y).count_ones() as usize)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_covariate_matches_contingency_table() {
        // 2x2 table: P(m | d) = 30/40, P(m | !d) = 6/60.
        let n = 100;
        let mut d = vec![false; n];
        let mut m = vec![false; n];
        for i in 0..40 {
            d[i] = true;
            m[i] = i < 30;
        }
        for i in 40..n {
            m[i] = i < 46;
        }
        let dt = OccurrenceTable::from_columns(&[d]);
        let pt = OccurrenceTable::from_columns(&[vec![false; n]]);
        let mt = OccurrenceTable::from_columns(&[m]);
        let g = CausalGraph::empty(EntityKind::Disease);
        let gp = CausalGraph::empty(EntityKind::Procedure);
        let (dm, pm) =
            estimate_causal_effects(&g, &gp, &dt, &pt, &mt, EffectConfig::default()).unwrap();
        assert!((dm.get(0, 0) - 0.75).abs() < 1e-3, "{}", dm.get(0, 0));
        assert_eq!(pm.get(0, 0), 0.0);
        assert!((logistic(dm.intercepts[0]) - 0.1).abs() < 1e-3);
    }

    #[test]
    fn separated_pair_is_clamped() {
        let n = 50;
        let d: Vec<bool> = (0..n).map(|i| i < 20).collect();
        let dt = OccurrenceTable::from_columns(&[d.clone()]);
        let pt = OccurrenceTable::from_columns(&[vec![false; n]]);
        let mt = OccurrenceTable::from_columns(&[d]);
        let g = CausalGraph::empty(EntityKind::Disease);
        let gp = CausalGraph::empty(EntityKind::Procedure);
        let (dm, _) =
            estimate_causal_effects(&g, &gp, &dt, &pt, &mt, EffectConfig::default()).unwrap();
        let e = dm.get(0, 0);
        assert!(e <= 1.0 - EFFECT_EPSILON && e > 0.99);
    }
}
