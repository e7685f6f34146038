use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::record::PatientRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 2.0 / 3.0,
            val: 1.0 / 6.0,
            test: 1.0 / 6.0,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::Config(format!("invalid split ratios {parts:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }
}

/// Index-level partition of a patient list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_indices(n: usize, ratios: SplitRatios, seed: u64) -> Result<SplitIndices> {
    ratios.validate()?;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_train = ((n as f64) * ratios.train).round() as usize;
    let n_val = (((n as f64) * ratios.val).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    let test = order.split_off(n_train + n_val);
    let val = order.split_off(n_train);
    Ok(SplitIndices {
        train: order,
        val,
        test,
    })
}

/// Patient-level train/validation/test partition, deterministic per seed.
pub fn split_dataset(
    records: &[PatientRecord],
    ratios: SplitRatios,
    seed: u64,
) -> Result<(Vec<PatientRecord>, Vec<PatientRecord>, Vec<PatientRecord>)> {
    let idx = split_indices(records.len(), ratios, seed)?;
    let pick = |ix: &[usize]| ix.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    Ok((pick(&idx.train), pick(&idx.val), pick(&idx.test)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub rounds: usize,
    pub fraction: f64,
    pub with_replacement: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            rounds: 10,
            fraction: 0.8,
            with_replacement: true,
        }
    }
}

/// Draws `rounds` index samples of size `ceil(fraction * n)` over `0..n`.
/// Without replacement each round is a sorted subset.
pub fn bootstrap_rounds(n: usize, cfg: BootstrapConfig, seed: u64) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::Empty("bootstrap over an empty test set".into()));
    }
    if cfg.rounds == 0 {
        return Err(Error::Config("bootstrap rounds must be >= 1".into()));
    }
    if !(cfg.fraction > 0.0 && cfg.fraction <= 1.0) {
        return Err(Error::Config(format!(
            "bootstrap fraction must lie in (0, 1], got {}",
            cfg.fraction
        )));
    }
    let size = ((n as f64) * cfg.fraction).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rounds = (0..cfg.rounds)
        .map(|_| {
            if cfg.with_replacement {
                (0..size).map(|_| rng.gen_range(0..n)).collect()
            } else {
                let mut all: Vec<usize> = (0..n).collect();
                all.shuffle(&mut rng);
                all.truncate(size);
                all.sort_unstable();
                all
            }
        })
        .collect();
    Ok(rounds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn default_sizes() {
        let s = split_indices(600, SplitRatios::default(), 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (400, 100, 100));
    }

    #[test]
    fn partition_property() {
        let s = split_indices(137, SplitRatios::default(), 9).unwrap();
        let all: HashSet<usize> = s
            .train
            .iter()
            .chain(&s.val)
            .chain(&s.test)
            .copied()
            .collect();
        assert_eq!(all.len(), 137);
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), 137);
        assert_eq!(s, split_indices(137, SplitRatios::default(), 9).unwrap());
        assert_ne!(s, split_indices(137, SplitRatios::default(), 10).unwrap());
    }

    #[test]
    fn bad_ratios() {
        let r = SplitRatios {
            train: 0.5,
            val: 0.3,
            test: 0.3,
        };
        assert!(matches!(split_indices(10, r, 0), Err(Error::Config(_))));
    }

    #[test]
    fn bootstrap_shapes() {
        let rounds = bootstrap_rounds(100, BootstrapConfig::default(), 3).unwrap();
        assert_eq!(rounds.len(), 10);
        assert!(rounds
            .iter()
            .all(|r| r.len() == 80 && r.iter().all(|&i| i < 100)));
        assert_eq!(
            rounds,
            bootstrap_rounds(100, BootstrapConfig::default(), 3).unwrap()
        );

        let full = BootstrapConfig {
            rounds: 1,
            fraction: 1.0,
            with_replacement: false,
        };
        assert_eq!(
            bootstrap_rounds(5, full, 0).unwrap(),
            vec![vec![0, 1, 2, 3, 4]]
        );
        assert!(bootstrap_rounds(0, full, 0).is_err());
    }
}
