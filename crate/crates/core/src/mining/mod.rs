//! Causal structure mining, effect estimation and relevance stratification.

pub mod data;
pub mod glm;
pub mod graph;
pub mod io;
pub mod score;
pub mod search;
pub mod strata;

use std::time::Instant;

use log::info;

pub use data::OccurrenceTable;
pub use glm::{estimate_causal_effects, CausalEffectMatrix, EffectConfig, EFFECT_EPSILON};
pub use graph::{visit_causal_subgraph, CausalGraph, VisitCausalSubgraph};
pub use score::{bdeu_local, local_score, total_score, ScoreCache};
pub use search::{greedy_equivalence_search, SearchConfig, SearchOutcome};
pub use strata::{layer_sizes, stratify, RelevanceStrata, StratifiedPair};

use crate::ehr::{EntityKind, PatientRecord, Vocabularies};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiningConfig {
    pub max_indegree: usize,
    pub min_support: usize,
    pub n_layers: usize,
    pub gradient: f64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            max_indegree: 4,
            min_support: 5,
            n_layers: strata::DEFAULT_LAYERS,
            gradient: strata::DEFAULT_GRADIENT,
        }
    }
}

/// Frozen outputs of the mining stage.
#[derive(Debug, Clone)]
pub struct MiningArtifacts {
    pub disease_graph: CausalGraph,
    pub procedure_graph: CausalGraph,
    pub medication_graph: CausalGraph,
    pub disease_effects: CausalEffectMatrix,
    pub procedure_effects: CausalEffectMatrix,
    pub strata: RelevanceStrata,
}

impl MiningArtifacts {
    pub fn graph(&self, kind: EntityKind) -> &CausalGraph {
        match kind {
            EntityKind::Disease => &self.disease_graph,
            EntityKind::Procedure => &self.procedure_graph,
            _ => &self.medication_graph,
        }
    }

    pub fn effects(&self, kind: EntityKind) -> &CausalEffectMatrix {
        match kind {
            EntityKind::Procedure => &self.procedure_effects,
            _ => &self.disease_effects,
        }
    }
}

/// Runs structure search per entity kind, effect estimation and
/// stratification on the training records.
pub fn mine(
    train: &[PatientRecord],
    vocabs: &Vocabularies,
    cfg: &MiningConfig,
) -> Result<MiningArtifacts> {
    let search = SearchConfig {
        max_indegree: cfg.max_indegree,
        min_support: cfg.min_support,
        ..SearchConfig::default()
    };
    let nd = vocabs.diseases.len();
    let np = vocabs.procedures.len();
    let nm = vocabs.medications.len();
    let d_tab = OccurrenceTable::from_records(train, EntityKind::Disease, nd);
    let p_tab = OccurrenceTable::from_records(train, EntityKind::Procedure, np);
    let m_tab = OccurrenceTable::from_records(train, EntityKind::Medication, nm);

    let mut graphs = Vec::new();
    for (kind, tab) in [
        (EntityKind::Disease, &d_tab),
        (EntityKind::Procedure, &p_tab),
        (EntityKind::Medication, &m_tab),
    ] {
        let t0 = Instant::now();
        let out = greedy_equivalence_search(tab, kind, search)?;
        info!(
            "{kind} graph: {} nodes, {} edges ({} inserts, {} deletes, {} turns) in {:.2?}",
            out.graph.nodes().len(),
            out.graph.edges().len(),
            out.inserts,
            out.deletes,
            out.turns,
            t0.elapsed()
        );
        graphs.push(out.graph);
    }
    let medication_graph = graphs.pop().unwrap();
    let procedure_graph = graphs.pop().unwrap();
    let disease_graph = graphs.pop().unwrap();

    let (disease_effects, procedure_effects) = estimate_causal_effects(
        &disease_graph,
        &procedure_graph,
        &d_tab,
        &p_tab,
        &m_tab,
        EffectConfig {
            min_support: cfg.min_support,
            ..EffectConfig::default()
        },
    )?;
    let strata = stratify(
        &[&disease_effects, &procedure_effects],
        cfg.n_layers,
        cfg.gradient,
    )?;
    info!(
        "strata: {} pairs, sizes {:?}, relevance {:?}",
        strata.pairs.len(),
        strata.sizes,
        strata.relevance
    );
    Ok(MiningArtifacts {
        disease_graph,
        procedure_graph,
        medication_graph,
        disease_effects,
        procedure_effects,
        strata,
    })
}
