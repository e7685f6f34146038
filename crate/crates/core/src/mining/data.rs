use crate::ehr::{EntityKind, PatientRecord, Visit};

/// Column-major binary sample table.  Each column is a bitset over samples.
#[derive(Debug, Clone)]
pub struct OccurrenceTable {
    n_samples: usize,
    words: usize,
    columns: Vec<Vec<u64>>,
    tail_mask: u64,
}

impl OccurrenceTable {
    pub fn new(n_samples: usize, n_vars: usize) -> Self {
        let words = n_samples.div_ceil(64).max(1);
        let rem = n_samples % 64;
        let tail_mask = if rem == 0 && n_samples > 0 {
            u64::MAX
        } else if n_samples == 0 {
            0
        } else {
            (1u64 << rem) - 1
        };
        OccurrenceTable {
            n_samples,
            words,
            columns: vec![vec![0; words]; n_vars],
            tail_mask,
        }
    }

    pub fn from_columns(columns: &[Vec<bool>]) -> Self {
        let n = columns.first().map_or(0, Vec::len);
        let mut t = OccurrenceTable::new(n, columns.len());
        for (v, col) in columns.iter().enumerate() {
            assert_eq!(col.len(), n, "ragged columns");
            for (s, &b) in col.iter().enumerate() {
                if b {
                    t.set(s, v);
                }
            }
        }
        t
    }

    /// One row per visit, one column per entity of `kind`.
    pub fn from_visits<'a>(
        visits: impl IntoIterator<Item = &'a Visit>,
        kind: EntityKind,
        n_vars: usize,
    ) -> Self {
        let visits: Vec<&Visit> = visits.into_iter().collect();
        let mut t = OccurrenceTable::new(visits.len(), n_vars);
        for (s, v) in visits.iter().enumerate() {
            let set = match kind {
                EntityKind::Disease => &v.diseases,
                EntityKind::Procedure => &v.procedures,
                EntityKind::Medication => &v.medications,
                EntityKind::Molecule => panic!("molecules are not recorded per visit"),
            };
            for &e in set {
                t.set(s, e);
            }
        }
        t
    }

    pub fn from_records(records: &[PatientRecord], kind: EntityKind, n_vars: usize) -> Self {
        Self::from_visits(records.iter().flat_map(|r| r.visits.iter()), kind, n_vars)
    }

    pub fn set(&mut self, sample: usize, var: usize) {
        self.columns[var][sample / 64] |= 1 << (sample % 64);
    }

    pub fn get(&self, sample: usize, var: usize) -> bool {
        self.columns[var][sample / 64] >> (sample % 64) & 1 == 1
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_vars(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, var: usize) -> &[u64] {
        &self.columns[var]
    }

    pub fn count(&self, var: usize) -> usize {
        self.columns[var]
            .iter()
            .map(|w| w.count_ones() as usize)
            .sum()
    }

    pub fn co_count(&self, a: usize, b: usize) -> usize {
        self.columns[a]
            .iter()
            .zip(&self.columns[b])
            .map(|(x, y)| (x & y).count_ones() as usize)
            .sum()
    }

    pub(crate) fn words(&self) -> usize {
        self.words
    }

    pub(crate) fn tail_mask(&self) -> u64 {
        self.tail_mask
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        let t = OccurrenceTable::from_columns(&[
            vec![true, false, true, true],
            vec![true, true, false, true],
        ]);
        assert_eq!(t.count(0), 3);
        assert_eq!(t.co_count(0, 1), 2);
        assert!(t.get(1, 1) && !t.get(1, 0));
    }
}
