//! Bayesian–Dirichlet equivalent-uniform (BDeu) scoring of binary networks.

use std::collections::HashMap;

use statrs::function::gamma::ln_gamma;

use super::data::OccurrenceTable;
use super::graph::CausalGraph;
use crate::error::{Error, Result};

/// Equivalent sample size of the uniform Dirichlet prior.
pub const DEFAULT_ESS: f64 = 1.0;

/// Joint counts `N_jk` of `node` against each parent configuration `j`.
fn config_counts(data: &OccurrenceTable, node: usize, parents: &[usize]) -> Vec<[usize; 2]> {
    let q = 1usize << parents.len();
    let words = data.words();
    let x = data.column(node);
    let mut counts = vec![[0usize; 2]; q];
    for (j, c) in counts.iter_mut().enumerate() {
        let mut total = 0usize;
        let mut ones = 0usize;
        for w in 0..words {
            let mut mask = if w + 1 == words {
                data.tail_mask()
            } else {
                u64::MAX
            };
            for (bit, &p) in parents.iter().enumerate() {
                let col = data.column(p)[w];
                mask &= if j >> bit & 1 == 1 { col } else { !col };
                if mask == 0 {
                    break;
                }
            }
            total += mask.count_ones() as usize;
            ones += (mask & x[w]).count_ones() as usize;
        }
        *c = [total - ones, ones];
    }
    counts
}

/// BDeu local score of a binary `node` given `parents`.
pub fn bdeu_local(data: &OccurrenceTable, node: usize, parents: &[usize], ess: f64) -> f64 {
    let q = (1usize << parents.len()) as f64;
    let a_j = ess / q;
    let a_jk = ess / (2.0 * q);
    let lg_aj = ln_gamma(a_j);
    let lg_ajk = ln_gamma(a_jk);
    config_counts(data, node, parents)
        .into_iter()
        .filter(|c| c[0] + c[1] > 0)
        .map(|[n0, n1]| {
            let nj = (n0 + n1) as f64;
            lg_aj - ln_gamma(a_j + nj) + ln_gamma(a_jk + n0 as f64) - lg_ajk
                + ln_gamma(a_jk + n1 as f64)
                - lg_ajk
        })
        .sum()
}

/// Memoized local scores keyed by `(node, sorted parent set)`.
#[derive(Debug)]
pub struct ScoreCache<'a> {
    data: &'a OccurrenceTable,
    ess: f64,
    max_indegree: usize,
    table: HashMap<(usize, Vec<usize>), f64>,
}

impl<'a> ScoreCache<'a> {
    pub fn new(data: &'a OccurrenceTable, max_indegree: usize) -> Self {
        ScoreCache {
            data,
            ess: DEFAULT_ESS,
            max_indegree,
            table: HashMap::new(),
        }
    }

    pub fn with_ess(mut self, ess: f64) -> Self {
        self.ess = ess;
        self
    }

    pub fn data(&self) -> &'a OccurrenceTable {
        self.data
    }

    pub fn max_indegree(&self) -> usize {
        self.max_indegree
    }

    /// `f(X_i, Q_i)`; parents need not be sorted.
    pub fn local(&mut self, node: usize, parents: &[usize]) -> Result<f64> {
        if parents.contains(&node) {
            return Err(Error::Constraint(format!(
                "node {node} listed among its own parents"
            )));
        }
        if parents.len() > self.max_indegree {
            return Err(Error::Constraint(format!(
                "parent set of size {} exceeds max in-degree {}",
                parents.len(),
                self.max_indegree
            )));
        }
        let mut key = parents.to_vec();
        key.sort_unstable();
        key.dedup();
        if let Some(&s) = self.table.get(&(node, key.clone())) {
            return Ok(s);
        }
        let s = bdeu_local(self.data, node, &key, self.ess);
        self.table.insert((node, key), s);
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// Sum of cached local scores over the graph's nodes.
    pub fn total(&mut self, graph: &CausalGraph) -> Result<f64> {
        if !graph.is_acyclic() {
            return Err(Error::Structure("graph contains a cycle".into()));
        }
        let mut sum = 0.0;
        for &n in graph.nodes() {
            sum += self.local(n, graph.parents(n))?;
        }
        Ok(sum)
    }
}

/// Local score with an in-degree bound check and no caching.
pub fn local_score(
    node: usize,
    parents: &[usize],
    data: &OccurrenceTable,
    max_indegree: usize,
) -> Result<f64> {
    ScoreCache::new(data, max_indegree).local(node, parents)
}

/// `F(G, U)`: the decomposable total score of an acyclic graph.
pub fn total_score(graph: &CausalGraph, data: &OccurrenceTable) -> Result<f64> {
    let cap = graph
        .nodes()
        .iter()
        .map(|&n| graph.parents(n).len())
        .max()
        .unwrap_or(0);
    ScoreCache::new(data, cap).total(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehr::EntityKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct per-sample count loop; independent of the bitset path.
    fn naive_bdeu(cols: &[Vec<bool>], node: usize, parents: &[usize], ess: f64) -> f64 {
        let q = 1usize << parents.len();
        let mut n = vec![[0f64; 2]; q];
        for s in 0..cols[node].len() {
            let mut j = 0;
            for (b, &p) in parents.iter().enumerate() {
                if cols[p][s] {
                    j |= 1 << b;
                }
            }
            n[j][cols[node][s] as usize] += 1.0;
        }
        let qf = q as f64;
        let mut total = 0.0;
        for c in n {
            let nj = c[0] + c[1];
            total += ln_gamma(ess / qf) - ln_gamma(ess / qf + nj);
            for k in c {
                total += ln_gamma(ess / (2.0 * qf) + k) - ln_gamma(ess / (2.0 * qf));
            }
        }
        total
    }

    fn random_cols(rng: &mut ChaCha8Rng, vars: usize, n: usize) -> Vec<Vec<bool>> {
        (0..vars)
            .map(|_| (0..n).map(|_| rng.gen::<f64>() < 0.3).collect())
            .collect()
    }

    #[test]
    fn matches_naive_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [1usize, 63, 64, 65, 300] {
            let cols = random_cols(&mut rng, 5, n);
            let t = OccurrenceTable::from_columns(&cols);
            for parents in [vec![], vec![1], vec![1, 2], vec![4, 3, 1]] {
                let a = bdeu_local(&t, 0, &parents, 1.0);
                let b = naive_bdeu(&cols, 0, &parents, 1.0);
                assert!(
                    (a - b).abs() < 1e-9,
                    "n={n} parents={parents:?}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn all_zero_column_is_finite_and_deterministic() {
        let t = OccurrenceTable::from_columns(&[vec![false; 50]]);
        let s = local_score(0, &[], &t, 4).unwrap();
        assert!(s.is_finite());
        assert_eq!(s, local_score(0, &[], &t, 4).unwrap());
        // Only the zero outcome is observed: lnG(1) - lnG(51) + lnG(50.5) - lnG(0.5).
        let expect = -ln_gamma(51.0) + ln_gamma(50.5) - ln_gamma(0.5);
        assert!((s - expect).abs() < 1e-9);
    }

    #[test]
    fn copy_beats_independence() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<bool> = (0..5000).map(|_| rng.gen::<f64>() < 0.5).collect();
        let indep: Vec<bool> = (0..5000).map(|_| rng.gen::<f64>() < 0.5).collect();
        let t = OccurrenceTable::from_columns(&[x.clone(), x, indep]);
        let alone = local_score(0, &[], &t, 4).unwrap();
        assert!(local_score(0, &[1], &t, 4).unwrap() > alone);
        // An independent parent costs at least the prior penalty; it never
        // buys more than a few nats of fit.
        assert!(local_score(0, &[2], &t, 4).unwrap() <= alone + 3.0);
        assert!(local_score(0, &[2], &t, 4).unwrap() < alone);
    }

    #[test]
    fn constraint_errors() {
        let t = OccurrenceTable::from_columns(&[vec![true; 4], vec![false; 4], vec![true; 4]]);
        assert!(matches!(
            local_score(0, &[0], &t, 4),
            Err(Error::Constraint(_))
        ));
        assert!(matches!(
            local_score(0, &[1, 2], &t, 1),
            Err(Error::Constraint(_))
        ));
    }

    #[test]
    fn total_is_sum_of_locals_and_single_edge_delta() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cols = random_cols(&mut rng, 3, 400);
        let t = OccurrenceTable::from_columns(&cols);
        let empty = CausalGraph::new(EntityKind::Disease, vec![0, 1, 2], vec![]).unwrap();
        let base: f64 = (0..3).map(|i| naive_bdeu(&cols, i, &[], 1.0)).sum();
        assert!((total_score(&empty, &t).unwrap() - base).abs() < 1e-9);

        let one = CausalGraph::new(EntityKind::Disease, vec![0, 1, 2], vec![(0, 2)]).unwrap();
        let delta = naive_bdeu(&cols, 2, &[0], 1.0) - naive_bdeu(&cols, 2, &[], 1.0);
        let got = total_score(&one, &t).unwrap() - total_score(&empty, &t).unwrap();
        assert!((got - delta).abs() < 1e-9);
    }
}
