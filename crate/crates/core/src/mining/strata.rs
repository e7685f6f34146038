//! Pyramid stratification of causal effects into relevance layers.

use log::warn;
use serde::{Deserialize, Serialize};

use super::glm::CausalEffectMatrix;
use crate::ehr::EntityKind;
use crate::error::{Error, Result};

pub const DEFAULT_LAYERS: usize = 5;
pub const DEFAULT_GRADIENT: f64 = 1.0 / 3.0;

/// Layer assignment for every nonzero effect pair.  Layers are numbered
/// `1..=n_layers`; layer `n_layers` holds the strongest effects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceStrata {
    pub n_layers: usize,
    pub gradient: f64,
    /// `(source kind, source, medication, effect, layer)`.
    pub pairs: Vec<StratifiedPair>,
    /// Mean effect per layer, index `layer - 1`; 0 for empty layers.
    pub relevance: Vec<f64>,
    pub sizes: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratifiedPair {
    pub kind: EntityKind,
    pub source: usize,
    pub medication: usize,
    pub effect: f64,
    pub layer: usize,
}

/// Real-valued pyramid sizes, bottom layer first.
pub fn ideal_layer_sizes(total: usize, n_layers: usize, gradient: f64) -> Vec<f64> {
    let n = total as f64;
    let norm = if (gradient - 1.0).abs() < 1e-12 {
        n_layers as f64
    } else {
        (1.0 - gradient.powi(n_layers as i32)) / (1.0 - gradient)
    };
    (0..n_layers)
        .map(|j| n * gradient.powi(j as i32) / norm)
        .collect()
}

/// Integer layer sizes, bottom first, summing to `total`.  Rounding uses the
/// largest remainder; when `total >= n_layers` every layer is non-empty.
/// With fewer pairs than layers the top layers are filled one pair each.
pub fn layer_sizes(total: usize, n_layers: usize, gradient: f64) -> Vec<usize> {
    if total < n_layers {
        let mut s = vec![0; n_layers];
        for slot in s.iter_mut().rev().take(total) {
            *slot = 1;
        }
        return s;
    }
    let ideal = ideal_layer_sizes(total, n_layers, gradient);
    // Snap values within rounding noise of an integer before flooring.
    let snapped: Vec<f64> = ideal
        .iter()
        .map(|&x| {
            if (x - x.round()).abs() < 1e-9 {
                x.round()
            } else {
                x
            }
        })
        .collect();
    let mut sizes: Vec<usize> = snapped.iter().map(|x| x.floor() as usize).collect();
    let mut rest = total - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..n_layers).collect();
    order.sort_by(|&a, &b| {
        let fa = snapped[a] - snapped[a].floor();
        let fb = snapped[b] - snapped[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in &order {
        if rest == 0 {
            break;
        }
        sizes[i] += 1;
        rest -= 1;
    }
    for j in (0..n_layers).rev() {
        while sizes[j] == 0 {
            let donor = (0..n_layers)
                .max_by_key(|&i| (sizes[i], n_layers - i))
                .unwrap();
            sizes[donor] -= 1;
            sizes[j] += 1;
        }
    }
    sizes
}

/// Stratifies the nonzero entries of both effect matrices jointly.
pub fn stratify(
    effects: &[&CausalEffectMatrix],
    n_layers: usize,
    gradient: f64,
) -> Result<RelevanceStrata> {
    if n_layers == 0 {
        return Err(Error::Config("n_layers must be positive".into()));
    }
    if !(gradient > 0.0 && gradient < 1.0) {
        return Err(Error::Config(format!(
            "gradient K={gradient} must be in (0, 1)"
        )));
    }
    let mut pairs: Vec<StratifiedPair> = effects
        .iter()
        .flat_map(|m| {
            m.nonzero().into_iter().map(|(s, med, e)| StratifiedPair {
                kind: m.source_kind,
                source: s,
                medication: med,
                effect: e,
                layer: 0,
            })
        })
        .collect();
    if pairs.len() < n_layers {
        warn!(
            "only {} causal pairs for {n_layers} layers; lower layers stay empty",
            pairs.len()
        );
    }
    let sizes = layer_sizes(pairs.len(), n_layers, gradient);
    // Strongest first; ties keep enumeration order.
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| {
        pairs[b]
            .effect
            .partial_cmp(&pairs[a].effect)
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut cursor = 0;
    for layer in (1..=n_layers).rev() {
        for &i in &order[cursor..cursor + sizes[layer - 1]] {
            pairs[i].layer = layer;
        }
        cursor += sizes[layer - 1];
    }
    let relevance = layer_means(&pairs, n_layers);
    Ok(RelevanceStrata {
        n_layers,
        gradient,
        pairs,
        relevance,
        sizes,
    })
}

fn layer_means(pairs: &[StratifiedPair], n_layers: usize) -> Vec<f64> {
    let mut sum = vec![0.0; n_layers];
    let mut cnt = vec![0usize; n_layers];
    for p in pairs {
        sum[p.layer - 1] += p.effect;
        cnt[p.layer - 1] += 1;
    }
    sum.iter()
        .zip(&cnt)
        .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect()
}

impl RelevanceStrata {
    /// Rebuilds sizes and relevance from explicit assignments.
    pub fn from_pairs(pairs: Vec<StratifiedPair>, n_layers: usize, gradient: f64) -> Result<Self> {
        let mut sizes = vec![0; n_layers];
        for p in &pairs {
            if p.layer == 0 || p.layer > n_layers {
                return Err(Error::Bounds {
                    index: p.layer,
                    len: n_layers,
                });
            }
            sizes[p.layer - 1] += 1;
        }
        let relevance = layer_means(&pairs, n_layers);
        Ok(RelevanceStrata {
            n_layers,
            gradient,
            pairs,
            relevance,
            sizes,
        })
    }

    /// Layer of a pair, if it carries a nonzero effect.
    pub fn layer_of(&self, kind: EntityKind, source: usize, med: usize) -> Option<usize> {
        self.pairs
            .iter()
            .find(|p| p.kind == kind && p.source == source && p.medication == med)
            .map(|p| p.layer)
    }

    /// Dense lookup `source × medication → relevance` for one kind, 0 for
    /// pairs without an effect.
    pub fn relevance_matrix(&self, kind: EntityKind, n_sources: usize, n_meds: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_sources * n_meds];
        for p in self.pairs.iter().filter(|p| p.kind == kind) {
            out[p.source * n_meds + p.medication] = self.relevance[p.layer - 1];
        }
        out
    }

    /// Dense lookup `source × medication → layer` (0 = no effect).
    pub fn layer_matrix(&self, kind: EntityKind, n_sources: usize, n_meds: usize) -> Vec<u8> {
        let mut out = vec![0u8; n_sources * n_meds];
        for p in self.pairs.iter().filter(|p| p.kind == kind) {
            out[p.source * n_meds + p.medication] = p.layer as u8;
        }
        out
    }

    /// Layer sizes as shares of all pairs, bottom first.
    pub fn shares(&self) -> Vec<f64> {
        let n: usize = self.sizes.iter().sum();
        self.sizes
            .iter()
            .map(|&s| if n == 0 { 0.0 } else { s as f64 / n as f64 })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_pyramid_for_121() {
        assert_eq!(layer_sizes(121, 5, 1.0 / 3.0), vec![81, 27, 9, 3, 1]);
    }

    #[test]
    fn fewer_pairs_than_layers_fill_from_top() {
        assert_eq!(layer_sizes(3, 5, 1.0 / 3.0), vec![0, 0, 1, 1, 1]);
    }

    #[test]
    fn assignment_orders_by_effect() {
        let mut m = CausalEffectMatrix::zeros(EntityKind::Disease, 11, 11);
        let mut k = 0;
        for s in 0..11 {
            for med in 0..11 {
                k += 1;
                m.set(s, med, k as f64 / 200.0);
            }
        }
        let st = stratify(&[&m], 5, 1.0 / 3.0).unwrap();
        assert_eq!(st.sizes, vec![81, 27, 9, 3, 1]);
        assert_eq!(st.layer_of(EntityKind::Disease, 10, 10), Some(5));
        assert_eq!(st.layer_of(EntityKind::Disease, 0, 0), Some(1));
        for w in st.relevance.windows(2) {
            assert!(w[0] < w[1]);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]
        #[test]
        fn sizes_partition_and_shrink(total in 5usize..3000, n in 1usize..8, k in 0.05f64..0.95) {
            prop_assume!(total >= n);
            let s = layer_sizes(total, n, k);
            prop_assert_eq!(s.iter().sum::<usize>(), total);
            prop_assert!(s.iter().all(|&x| x >= 1));
            for w in s.windows(2) {
                prop_assert!(w[0] >= w[1]);
            }
            // Rounding stays within one pair unless empty layers had to be filled.
            let ideal = ideal_layer_sizes(total, n, k);
            if ideal.iter().all(|&x| x >= 1.0) {
                for (a, b) in s.iter().zip(&ideal) {
                    prop_assert!((*a as f64 - b).abs() < 1.0 + 1e-9);
                }
            }
        }

        #[test]
        fn relevance_increases_with_layer(vals in prop::collection::vec(1e-4f64..1.0, 5..200)) {
            let mut m = CausalEffectMatrix::zeros(EntityKind::Procedure, vals.len(), 1);
            for (i, v) in vals.iter().enumerate() {
                m.set(i, 0, *v);
            }
            let st = stratify(&[&m], 5, 1.0 / 3.0).unwrap();
            for w in st.relevance.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
            // Every pair in a higher layer has at least the effect of any lower-layer pair.
            for a in &st.pairs {
                for b in &st.pairs {
                    if a.layer > b.layer {
                        prop_assert!(a.effect >= b.effect);
                    }
                }
            }
        }
    }
}
