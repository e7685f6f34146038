use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One admission: the diagnosed diseases, performed procedures and the
/// prescribed medications, each stored as a sorted, duplicate-free index list.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Visit {
    pub diseases: Vec<usize>,
    pub procedures: Vec<usize>,
    pub medications: Vec<usize>,
}

fn normalize(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v.dedup();
    v
}

impl Visit {
    pub fn new(diseases: Vec<usize>, procedures: Vec<usize>, medications: Vec<usize>) -> Self {
        Visit {
            diseases: normalize(diseases),
            procedures: normalize(procedures),
            medications: normalize(medications),
        }
    }

    /// A visit is retained only when all three code sets are present.
    pub fn is_complete(&self) -> bool {
        !self.diseases.is_empty() && !self.procedures.is_empty() && !self.medications.is_empty()
    }

    pub fn check_bounds(
        &self,
        n_diseases: usize,
        n_procedures: usize,
        n_meds: usize,
    ) -> Result<()> {
        for (set, len) in [
            (&self.diseases, n_diseases),
            (&self.procedures, n_procedures),
            (&self.medications, n_meds),
        ] {
            if let Some(&bad) = set.iter().find(|&&i| i >= len) {
                return Err(Error::Bounds { index: bad, len });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub visits: Vec<Visit>,
}

impl PatientRecord {
    pub fn num_visits(&self) -> usize {
        self.visits.len()
    }
}

/// Binary indicator vector sized to a vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiHotVector {
    bits: Vec<bool>,
}

impl MultiHotVector {
    pub fn encode(codes: &[usize], vocab_len: usize) -> Result<Self> {
        let mut bits = vec![false; vocab_len];
        for &c in codes {
            if c >= vocab_len {
                return Err(Error::Bounds {
                    index: c,
                    len: vocab_len,
                });
            }
            bits[c] = true;
        }
        Ok(MultiHotVector { bits })
    }

    pub fn decode(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.bits
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect()
    }
}

impl std::fmt::Display for MultiHotVector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Symmetric 0/1 adjacency over medications with an empty diagonal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DdiMatrix {
    n: usize,
    cells: Vec<u8>,
}

impl DdiMatrix {
    pub fn zeros(n: usize) -> Self {
        DdiMatrix {
            n,
            cells: vec![0; n * n],
        }
    }

    pub fn from_pairs(n: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut m = DdiMatrix::zeros(n);
        for &(a, b) in pairs {
            m.insert(a, b)?;
        }
        Ok(m)
    }

    pub fn insert(&mut self, a: usize, b: usize) -> Result<()> {
        if a >= self.n || b >= self.n {
            return Err(Error::Bounds {
                index: a.max(b),
                len: self.n,
            });
        }
        if a == b {
            return Err(Error::Constraint(format!(
                "DDI self-pair on medication {a}"
            )));
        }
        self.cells[a * self.n + b] = 1;
        self.cells[b * self.n + a] = 1;
        Ok(())
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> bool {
        self.cells[a * self.n + b] != 0
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// Unordered interacting pairs `(a, b)` with `a < b`.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for a in 0..self.n {
            for b in (a + 1)..self.n {
                if self.get(a, b) {
                    out.push((a, b));
                }
            }
        }
        out
    }

    pub fn num_pairs(&self) -> usize {
        self.cells.iter().filter(|&&c| c != 0).count() / 2
    }
}

/// Medication → molecule membership.  Every medication owns at least one
/// molecule; molecules may be shared between medications.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoleculeMap {
    membership: Vec<Vec<usize>>,
    n_molecules: usize,
}

impl MoleculeMap {
    pub fn new(membership: Vec<Vec<usize>>, n_molecules: usize) -> Result<Self> {
        let membership: Vec<Vec<usize>> = membership.into_iter().map(normalize).collect();
        for (m, mols) in membership.iter().enumerate() {
            if mols.is_empty() {
                return Err(Error::Constraint(format!(
                    "medication {m} has no molecules"
                )));
            }
            if let Some(&bad) = mols.iter().find(|&&s| s >= n_molecules) {
                return Err(Error::Bounds {
                    index: bad,
                    len: n_molecules,
                });
            }
        }
        Ok(MoleculeMap {
            membership,
            n_molecules,
        })
    }

    pub fn molecules_of(&self, med: usize) -> &[usize] {
        &self.membership[med]
    }

    pub fn num_medications(&self) -> usize {
        self.membership.len()
    }

    pub fn num_molecules(&self) -> usize {
        self.n_molecules
    }

    pub fn contains(&self, med: usize, mol: usize) -> bool {
        self.membership
            .get(med)
            .is_some_and(|m| m.binary_search(&mol).is_ok())
    }

    pub fn rows(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.membership
            .iter()
            .enumerate()
            .flat_map(|(m, mols)| mols.iter().map(move |&s| (m, s)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn encode_examples() {
        assert_eq!(MultiHotVector::encode(&[], 5).unwrap().to_string(), "00000");
        assert_eq!(
            MultiHotVector::encode(&[0, 4], 5).unwrap().to_string(),
            "10001"
        );
        assert!(matches!(
            MultiHotVector::encode(&[5], 5),
            Err(Error::Bounds { index: 5, len: 5 })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn multi_hot_round_trip(len in 1usize..64, picks in proptest::collection::vec(any::<u16>(), 0..40)) {
            let set: Vec<usize> = normalize(picks.into_iter().map(|p| p as usize % len).collect());
            let enc = MultiHotVector::encode(&set, len).unwrap();
            prop_assert_eq!(enc.len(), len);
            prop_assert_eq!(enc.decode(), set);
        }
    }

    #[test]
    fn ddi_symmetry_and_self_pair() {
        let mut m = DdiMatrix::zeros(3);
        m.insert(1, 2).unwrap();
        assert!(m.get(1, 2) && m.get(2, 1));
        assert!(!m.get(0, 1));
        assert!(m.insert(0, 0).is_err());
        m.insert(2, 1).unwrap();
        assert_eq!(m.num_pairs(), 1);
    }

    #[test]
    fn molecule_map_requires_membership() {
        assert!(MoleculeMap::new(vec![vec![0], vec![]], 2).is_err());
        assert!(MoleculeMap::new(vec![vec![3]], 2).is_err());
        let mm = MoleculeMap::new(vec![vec![1, 0, 1], vec![1]], 2).unwrap();
        assert_eq!(mm.molecules_of(0), &[0, 1]);
        assert!(mm.contains(1, 1) && !mm.contains(1, 0));
    }

    #[test]
    fn completeness() {
        assert!(Visit::new(vec![0], vec![0], vec![0]).is_complete());
        assert!(!Visit::new(vec![0], vec![0], vec![]).is_complete());
    }
}
