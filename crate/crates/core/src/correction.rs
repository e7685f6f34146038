//! Post-hoc correction of medication probabilities with mined effects.

use serde::{Deserialize, Serialize};

use crate::ehr::Visit;
use crate::error::{Error, Result};
use crate::mining::CausalEffectMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectionConfig {
    /// Upper threshold `delta_1`.
    pub upper: f64,
    /// Lower threshold `delta_2`.
    pub lower: f64,
    /// Boost `tau_1`.
    pub boost: f64,
    /// Penalty `tau_2`.
    pub penalty: f64,
    pub selection_threshold: f64,
}

impl Default for CorrectionConfig {
    fn default() -> Self {
        CorrectionConfig {
            upper: 0.97,
            lower: 0.90,
            boost: 0.10,
            penalty: 0.10,
            selection_threshold: 0.5,
        }
    }
}

impl CorrectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.lower && self.lower < self.upper && self.upper <= 1.0) {
            return Err(Error::Config(format!(
                "correction thresholds need 0 <= delta_2 ({}) < delta_1 ({}) <= 1",
                self.lower, self.upper
            )));
        }
        if self.boost < 0.0 || self.penalty < 0.0 {
            return Err(Error::Config("tau_1 and tau_2 must be non-negative".into()));
        }
        if !(self.selection_threshold > 0.0 && self.selection_threshold < 1.0) {
            return Err(Error::Config(
                "selection threshold must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Boost,
    Keep,
    Penalize,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Boost => "boost",
            Branch::Keep => "keep",
            Branch::Penalize => "penalize",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationResult {
    pub raw: Vec<f64>,
    pub corrected: Vec<f64>,
    pub effects: Vec<f64>,
    pub branch: Vec<Branch>,
    pub selected: Vec<usize>,
}

/// Largest effect of `med` over the visit's diseases and procedures; 0 when
/// no pair carries an effect.
pub fn max_relevant_effect(
    med: usize,
    visit: &Visit,
    dm: &CausalEffectMatrix,
    pm: &CausalEffectMatrix,
) -> f64 {
    let d = visit.diseases.iter().map(|&d| dm.get(d, med));
    let p = visit.procedures.iter().map(|&p| pm.get(p, med));
    d.chain(p).fold(0.0, f64::max)
}

/// Branch rule for one probability.
pub fn correct_one(raw: f64, effect: f64, cfg: &CorrectionConfig) -> (f64, Branch) {
    let (v, b) = if effect >= cfg.upper {
        (raw + cfg.boost, Branch::Boost)
    } else if effect >= cfg.lower {
        (raw, Branch::Keep)
    } else {
        (raw - cfg.penalty, Branch::Penalize)
    };
    (v.clamp(0.0, 1.0), b)
}

pub fn correct(
    raw: &[f64],
    visit: &Visit,
    dm: &CausalEffectMatrix,
    pm: &CausalEffectMatrix,
    cfg: &CorrectionConfig,
) -> Result<RecommendationResult> {
    cfg.validate()?;
    if raw.len() != dm.n_medications || raw.len() != pm.n_medications {
        return Err(Error::Shape {
            expected: dm.n_medications,
            actual: raw.len(),
        });
    }
    let effects: Vec<f64> = (0..raw.len())
        .map(|m| max_relevant_effect(m, visit, dm, pm))
        .collect();
    let (corrected, branch): (Vec<f64>, Vec<Branch>) = raw
        .iter()
        .zip(&effects)
        .map(|(&p, &e)| correct_one(p, e, cfg))
        .unzip();
    let selected = select_set(&corrected, cfg.selection_threshold);
    Ok(RecommendationResult {
        raw: raw.to_vec(),
        corrected,
        effects,
        branch,
        selected,
    })
}

/// Identity correction used when bias correction is disabled.
pub fn uncorrected(raw: &[f64], threshold: f64) -> RecommendationResult {
    RecommendationResult {
        raw: raw.to_vec(),
        corrected: raw.to_vec(),
        effects: vec![0.0; raw.len()],
        branch: vec![Branch::Keep; raw.len()],
        selected: select_set(raw, threshold),
    }
}

pub fn select_set(corrected: &[f64], threshold: f64) -> Vec<usize> {
    corrected
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= threshold)
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehr::EntityKind;
    use proptest::prelude::*;

    fn mats(
        d_eff: &[(usize, usize, f64)],
        p_eff: &[(usize, usize, f64)],
        nm: usize,
    ) -> (CausalEffectMatrix, CausalEffectMatrix) {
        let mut dm = CausalEffectMatrix::zeros(EntityKind::Disease, 4, nm);
        let mut pm = CausalEffectMatrix::zeros(EntityKind::Procedure, 4, nm);
        for &(s, m, e) in d_eff {
            dm.set(s, m, e);
        }
        for &(s, m, e) in p_eff {
            pm.set(s, m, e);
        }
        (dm, pm)
    }

    #[test]
    fn max_effect_restricted_to_visit() {
        let (dm, pm) = mats(&[(1, 0, 0.98), (2, 0, 0.99)], &[(1, 0, 0.5)], 1);
        let v = Visit::new(vec![1], vec![1], vec![0]);
        assert_eq!(max_relevant_effect(0, &v, &dm, &pm), 0.98);
        let v = Visit::new(vec![3], vec![3], vec![0]);
        assert_eq!(max_relevant_effect(0, &v, &dm, &pm), 0.0);
    }

    #[test]
    fn branch_examples() {
        let cfg = CorrectionConfig::default();
        let (p, b) = correct_one(0.40, 0.98, &cfg);
        assert!((p - 0.50).abs() < 1e-15);
        assert_eq!(b, Branch::Boost);
        assert_eq!(correct_one(0.40, 0.93, &cfg), (0.40, Branch::Keep));
        assert_eq!(correct_one(0.05, 0.10, &cfg), (0.0, Branch::Penalize));
        assert_eq!(select_set(&[0.6, 0.4, 0.5], 0.5), vec![0, 2]);
        assert!(select_set(&[0.1, 0.2], 0.5).is_empty());
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = CorrectionConfig {
            lower: 0.98,
            ..CorrectionConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn monotone_bounded_and_identity(p1 in 0.0f64..1.0, p2 in 0.0f64..1.0, e in 0.0f64..1.0,
                                          t1 in 0.0f64..0.5, t2 in 0.0f64..0.5) {
            let cfg = CorrectionConfig { boost: t1, penalty: t2, ..CorrectionConfig::default() };
            let (lo, hi) = (p1.min(p2), p1.max(p2));
            let (a, ba) = correct_one(lo, e, &cfg);
            let (b, bb) = correct_one(hi, e, &cfg);
            prop_assert!(a <= b);
            prop_assert_eq!(ba, bb);
            prop_assert!((0.0..=1.0).contains(&a));
            let id = CorrectionConfig { boost: 0.0, penalty: 0.0, ..cfg };
            prop_assert_eq!(correct_one(p1, e, &id).0, p1);
        }

        #[test]
        fn raising_threshold_never_adds(ps in prop::collection::vec(0.0f64..1.0, 0..12), t in 0.05f64..0.9, dt in 0.0f64..0.1) {
            let a = select_set(&ps, t);
            let b = select_set(&ps, t + dt);
            prop_assert!(b.iter().all(|i| a.contains(i)));
        }
    }
}
