//! Synthetic EHR corpus with planted causal structure.
//!
//! Diseases follow a random DAG and are drawn per visit by ancestral
//! sampling, procedures hang off a parent disease, and every medication is
//! planted on one disease or procedure with a response probability `rho`.
//! The planted structure is returned alongside the data so that mining and
//! training can be checked against it.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::record::{DdiMatrix, MoleculeMap, PatientRecord, Visit};
use super::vocab::{EntityKind, Vocabularies, Vocabulary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_diseases: usize,
    pub n_procedures: usize,
    pub n_medications: usize,
    pub n_molecules: usize,
    pub n_patients: usize,
    pub min_visits: usize,
    pub max_visits: usize,
    /// Edge probability between topologically ordered disease pairs.
    pub dag_density: f64,
    pub max_dag_parents: usize,
    pub root_rate: f64,
    /// Presence probability of a disease with at least one present parent.
    pub child_rate: f64,
    pub child_base_rate: f64,
    /// Probability that a disease from the previous visit recurs.
    pub persistence: f64,
    pub procedure_rate: f64,
    pub procedure_base_rate: f64,
    /// Pairs planted with `boost_rho` (strongest tier).
    pub boost_pairs: usize,
    pub boost_rho: f64,
    /// Pairs planted with `strong_rho`.
    pub strong_pairs: usize,
    pub strong_rho: f64,
    pub medium_rho_min: f64,
    pub medium_rho_max: f64,
    /// Probability of a medication appearing without its planted source.
    pub spurious_rate: f64,
    /// Fraction of medication pairs marked as interacting.
    pub ddi_density: f64,
    pub max_molecules_per_med: usize,
    /// Explicitly planted `(source kind, source index, medication, rho)`
    /// pairs; these take precedence over the random assignment.
    pub explicit_pairs: Vec<PlantedPair>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_diseases: 30,
            n_procedures: 10,
            n_medications: 20,
            n_molecules: 15,
            n_patients: 2000,
            min_visits: 1,
            max_visits: 4,
            dag_density: 0.06,
            max_dag_parents: 3,
            root_rate: 0.12,
            child_rate: 0.65,
            child_base_rate: 0.02,
            persistence: 0.5,
            procedure_rate: 0.7,
            procedure_base_rate: 0.03,
            boost_pairs: 2,
            boost_rho: 0.99,
            strong_pairs: 3,
            strong_rho: 0.95,
            medium_rho_min: 0.55,
            medium_rho_max: 0.85,
            spurious_rate: 0.02,
            ddi_density: 0.1,
            max_molecules_per_med: 3,
            explicit_pairs: Vec::new(),
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedPair {
    pub source_kind: EntityKind,
    pub source: usize,
    pub medication: usize,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticGroundTruth {
    /// Parent → child edges over disease indices.
    pub disease_dag: Vec<(usize, usize)>,
    /// Parent disease of every procedure.
    pub procedure_parent: Vec<usize>,
    pub effect_pairs: Vec<PlantedPair>,
    pub ddi_pairs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub records: Vec<PatientRecord>,
    pub vocabs: Vocabularies,
    pub ddi: DdiMatrix,
    pub molecules: MoleculeMap,
    pub truth: SyntheticGroundTruth,
}

fn prob(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) || !p.is_finite() {
        return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
    }
    Ok(())
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, n) in [
            ("n_diseases", self.n_diseases),
            ("n_procedures", self.n_procedures),
            ("n_medications", self.n_medications),
            ("n_molecules", self.n_molecules),
        ] {
            if n < 2 {
                return Err(Error::Config(format!("{name} must be >= 2, got {n}")));
            }
        }
        if self.n_patients == 0 {
            return Err(Error::Config("n_patients must be >= 1".into()));
        }
        if self.min_visits == 0 || self.min_visits > self.max_visits {
            return Err(Error::Config(format!(
                "visit range [{}, {}] is empty",
                self.min_visits, self.max_visits
            )));
        }
        for (name, p) in [
            ("dag_density", self.dag_density),
            ("root_rate", self.root_rate),
            ("child_rate", self.child_rate),
            ("child_base_rate", self.child_base_rate),
            ("persistence", self.persistence),
            ("procedure_rate", self.procedure_rate),
            ("procedure_base_rate", self.procedure_base_rate),
            ("boost_rho", self.boost_rho),
            ("strong_rho", self.strong_rho),
            ("medium_rho_min", self.medium_rho_min),
            ("medium_rho_max", self.medium_rho_max),
            ("ddi_density", self.ddi_density),
        ] {
            prob(name, p)?;
        }
        if !(0.0..=0.05).contains(&self.spurious_rate) {
            return Err(Error::Config(format!(
                "spurious_rate must lie in [0, 0.05], got {}",
                self.spurious_rate
            )));
        }
        if self.medium_rho_min > self.medium_rho_max {
            return Err(Error::Config("medium_rho_min > medium_rho_max".into()));
        }
        if self.boost_pairs + self.strong_pairs > self.n_medications {
            return Err(Error::Config(
                "more boost/strong pairs than medications".into(),
            ));
        }
        if self.max_molecules_per_med == 0 {
            return Err(Error::Config("max_molecules_per_med must be >= 1".into()));
        }
        for p in &self.explicit_pairs {
            prob("explicit rho", p.rho)?;
            let limit = match p.source_kind {
                EntityKind::Disease => self.n_diseases,
                EntityKind::Procedure => self.n_procedures,
                _ => {
                    return Err(Error::Config(
                        "planted sources must be diseases or procedures".into(),
                    ))
                }
            };
            if p.source >= limit || p.medication >= self.n_medications {
                return Err(Error::Config(format!("explicit pair {p:?} out of range")));
            }
        }
        Ok(())
    }
}

fn vocab(kind: EntityKind, prefix: &str, n: usize) -> Vocabulary {
    Vocabulary::from_codes(kind, (0..n).map(|i| format!("{prefix}{i}")))
        .expect("generated codes are unique")
}

/// Generates a corpus; identical specs give identical output.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let nd = spec.n_diseases;
    let np = spec.n_procedures;
    let nm = spec.n_medications;

    // Disease DAG over a random topological order.
    let mut topo: Vec<usize> = (0..nd).collect();
    topo.shuffle(&mut rng);
    let mut parents: Vec<Vec<usize>> = vec![Vec::new(); nd];
    let mut dag = Vec::new();
    for j in 1..nd {
        for i in 0..j {
            let (a, b) = (topo[i], topo[j]);
            if parents[b].len() < spec.max_dag_parents && rng.gen::<f64>() < spec.dag_density {
                parents[b].push(a);
                dag.push((a, b));
            }
        }
    }
    dag.sort_unstable();

    let procedure_parent: Vec<usize> = (0..np).map(|_| rng.gen_range(0..nd)).collect();

    // Planted medication sources.  Boost/strong tiers sit on root diseases
    // when possible so they have plenty of qualifying visits.
    let mut planted: Vec<Option<PlantedPair>> = vec![None; nm];
    for p in &spec.explicit_pairs {
        planted[p.medication] = Some(*p);
    }
    let mut roots: Vec<usize> = (0..nd).filter(|&d| parents[d].is_empty()).collect();
    roots.shuffle(&mut rng);
    let mut used: HashSet<(EntityKind, usize)> = spec
        .explicit_pairs
        .iter()
        .map(|p| (p.source_kind, p.source))
        .collect();
    let mut free_meds: Vec<usize> = (0..nm).filter(|&m| planted[m].is_none()).collect();
    free_meds.shuffle(&mut rng);
    let tiers = std::iter::repeat_n(spec.boost_rho, spec.boost_pairs)
        .chain(std::iter::repeat_n(spec.strong_rho, spec.strong_pairs));
    let mut root_iter = roots.iter().copied();
    let mut meds_iter = free_meds.into_iter();
    for rho in tiers {
        let Some(m) = meds_iter.next() else { break };
        let d = root_iter
            .by_ref()
            .find(|d| !used.contains(&(EntityKind::Disease, *d)))
            .unwrap_or_else(|| rng.gen_range(0..nd));
        used.insert((EntityKind::Disease, d));
        planted[m] = Some(PlantedPair {
            source_kind: EntityKind::Disease,
            source: d,
            medication: m,
            rho,
        });
    }
    for m in meds_iter {
        let (kind, source) = if rng.gen::<f64>() < 0.75 {
            (EntityKind::Disease, rng.gen_range(0..nd))
        } else {
            (EntityKind::Procedure, rng.gen_range(0..np))
        };
        let rho = rng.gen_range(spec.medium_rho_min..=spec.medium_rho_max);
        planted[m] = Some(PlantedPair {
            source_kind: kind,
            source,
            medication: m,
            rho,
        });
    }
    let effect_pairs: Vec<PlantedPair> = planted.into_iter().map(|p| p.unwrap()).collect();

    // Molecules: each medication draws 1..=max distinct molecules.
    let mut membership = Vec::with_capacity(nm);
    for _ in 0..nm {
        let k = rng.gen_range(1..=spec.max_molecules_per_med.min(spec.n_molecules));
        let mut pool: Vec<usize> = (0..spec.n_molecules).collect();
        pool.shuffle(&mut rng);
        pool.truncate(k);
        membership.push(pool);
    }
    let molecules = MoleculeMap::new(membership, spec.n_molecules)?;

    let topo_order = topo;
    let sample_visit = |rng: &mut ChaCha8Rng, prev: Option<&Visit>| -> Visit {
        loop {
            let mut present = vec![false; nd];
            let prev_d: HashSet<usize> = prev
                .map(|v| v.diseases.iter().copied().collect())
                .unwrap_or_default();
            for &d in &topo_order {
                let mut p = if parents[d].is_empty() {
                    spec.root_rate
                } else if parents[d].iter().any(|&a| present[a]) {
                    spec.child_rate
                } else {
                    spec.child_base_rate
                };
                if prev_d.contains(&d) {
                    p = p.max(spec.persistence);
                }
                present[d] = rng.gen::<f64>() < p;
            }
            let diseases: Vec<usize> = (0..nd).filter(|&d| present[d]).collect();
            let procedures: Vec<usize> = (0..np)
                .filter(|&j| {
                    let p = if present[procedure_parent[j]] {
                        spec.procedure_rate
                    } else {
                        spec.procedure_base_rate
                    };
                    rng.gen::<f64>() < p
                })
                .collect();
            let proc_set: HashSet<usize> = procedures.iter().copied().collect();
            let meds: Vec<usize> = effect_pairs
                .iter()
                .filter(|pp| {
                    let active = match pp.source_kind {
                        EntityKind::Disease => present[pp.source],
                        _ => proc_set.contains(&pp.source),
                    };
                    let p = if active { pp.rho } else { spec.spurious_rate };
                    rng.gen::<f64>() < p
                })
                .map(|pp| pp.medication)
                .collect();
            let v = Visit::new(diseases, procedures, meds);
            if v.is_complete() {
                return v;
            }
        }
    };

    let width = (spec.n_patients.max(1) as f64).log10().floor() as usize + 1;
    let mut records = Vec::with_capacity(spec.n_patients);
    for i in 0..spec.n_patients {
        let n_visits = rng.gen_range(spec.min_visits..=spec.max_visits);
        let mut visits: Vec<Visit> = Vec::with_capacity(n_visits);
        for _ in 0..n_visits {
            let v = sample_visit(&mut rng, visits.last());
            visits.push(v);
        }
        records.push(PatientRecord {
            patient_id: format!("patient{i:0width$}"),
            visits,
        });
    }

    // Interactions go to the least co-prescribed medication pairs.
    let mut co = vec![0usize; nm * nm];
    for r in &records {
        for v in &r.visits {
            for (x, &a) in v.medications.iter().enumerate() {
                for &b in &v.medications[x + 1..] {
                    co[a * nm + b] += 1;
                }
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (0..nm)
        .flat_map(|a| ((a + 1)..nm).map(move |b| (a, b)))
        .collect();
    pairs.shuffle(&mut rng);
    pairs.sort_by_key(|&(a, b)| co[a * nm + b]);
    let n_ddi = ((pairs.len() as f64) * spec.ddi_density).round() as usize;
    let mut ddi_pairs: Vec<(usize, usize)> = pairs.into_iter().take(n_ddi).collect();
    ddi_pairs.sort_unstable();
    let ddi = DdiMatrix::from_pairs(nm, &ddi_pairs)?;

    let vocabs = Vocabularies {
        diseases: vocab(EntityKind::Disease, "D", nd),
        procedures: vocab(EntityKind::Procedure, "P", np),
        medications: vocab(EntityKind::Medication, "M", nm),
        molecules: vocab(EntityKind::Molecule, "S", spec.n_molecules),
    };

    Ok(SyntheticDataset {
        records,
        vocabs,
        ddi,
        molecules,
        truth: SyntheticGroundTruth {
            disease_dag: dag,
            procedure_parent,
            effect_pairs,
            ddi_pairs,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invalid_densities_rejected() {
        let spec = SyntheticSpec {
            dag_density: 1.5,
            ..Default::default()
        };
        assert!(matches!(generate_synthetic(&spec), Err(Error::Config(_))));
        let spec = SyntheticSpec {
            n_medications: 1,
            ..Default::default()
        };
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn truth_is_acyclic_and_visits_complete() {
        let spec = SyntheticSpec {
            n_patients: 200,
            ..Default::default()
        };
        let ds = generate_synthetic(&spec).unwrap();
        assert_eq!(ds.records.len(), 200);
        assert!(ds
            .records
            .iter()
            .all(|r| r.visits.iter().all(Visit::is_complete)));
        // Kahn's algorithm drains every node iff the edge set is acyclic.
        let n = spec.n_diseases;
        let mut indeg = vec![0; n];
        for &(_, b) in &ds.truth.disease_dag {
            indeg[b] += 1;
        }
        let mut stack: Vec<usize> = (0..n).filter(|&d| indeg[d] == 0).collect();
        let mut seen = 0;
        while let Some(u) = stack.pop() {
            seen += 1;
            for &(a, b) in &ds.truth.disease_dag {
                if a == u {
                    indeg[b] -= 1;
                    if indeg[b] == 0 {
                        stack.push(b);
                    }
                }
            }
        }
        assert_eq!(seen, n);
        assert!(ds
            .truth
            .effect_pairs
            .iter()
            .all(|p| (0.0..=1.0).contains(&p.rho)));
    }
}
