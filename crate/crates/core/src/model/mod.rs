//! Dual-granularity patient representation model.
//!
//! Per visit, molecule vectors of the previous visit's medications are
//! propagated over intra-medication cliques (GIN), composed into medication
//! vectors, and fused with the current diseases and procedures through a
//! weighted relational convolution over stratified causal edges.  DAC
//! aggregation turns each entity group into one vector; the visit sequence
//! is encoded by a GRU and an MLP, and a logistic head scores medications.

pub mod checkpoint;
pub mod layers;
pub mod params;
pub mod tape;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use layers::{
    build_visit_repr, coarse_propagate, compose_medication, dac_aggregate, dac_classify,
    embed_entities, fine_neighbors, fine_propagate, gru_step, mlp, predict_probabilities,
    Activation, Category, CoarseEdge, CoarseLayer, GruParams, MlpParams,
};
pub use params::{Grads, ParamId, ParamStore, Tensor};
pub use tape::{Tape, Var};

use crate::ehr::{EntityKind, MoleculeMap, PatientRecord, Visit};
use crate::error::{Error, Result};
use crate::mining::{CausalGraph, MiningArtifacts, OccurrenceTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub fusion_cycles: usize,
    pub coarse_layers: usize,
    pub relation_types: usize,
    pub activation: Activation,
    pub coarse_self_loop: bool,
    pub mlp_hidden: usize,
    /// Replace causal strata with co-occurrence edges and drop DAC structure.
    pub wo_c: bool,
    /// Replace molecule-composed medication vectors with a free table.
    pub wo_f: bool,
    pub embedding_init: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 64,
            fusion_cycles: 1,
            coarse_layers: 2,
            relation_types: 5,
            activation: Activation::Tanh,
            coarse_self_loop: true,
            mlp_hidden: 64,
            wo_c: false,
            wo_f: false,
            embedding_init: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.mlp_hidden == 0 {
            return Err(Error::Config("dim and mlp_hidden must be positive".into()));
        }
        if self.fusion_cycles == 0 {
            return Err(Error::Config("fusion_cycles must be at least 1".into()));
        }
        if self.relation_types == 0 {
            return Err(Error::Config("relation_types must be at least 1".into()));
        }
        Ok(())
    }
}

/// Frozen structure the model reads: vocabulary sizes, molecule map,
/// per-kind causal graphs and the typed coarse edges.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelContext {
    pub n_diseases: usize,
    pub n_procedures: usize,
    pub n_medications: usize,
    pub molecules: MoleculeMap,
    pub disease_graph: CausalGraph,
    pub procedure_graph: CausalGraph,
    pub medication_graph: CausalGraph,
    pub relation_types: usize,
    /// `source × medication`: relation index + 1, or 0 for no edge.
    pub dm_relation: Vec<u8>,
    pub dm_relevance: Vec<f64>,
    pub pm_relation: Vec<u8>,
    pub pm_relevance: Vec<f64>,
}

impl ModelContext {
    pub fn from_mining(
        art: &MiningArtifacts,
        n_diseases: usize,
        n_procedures: usize,
        molecules: MoleculeMap,
    ) -> Self {
        let nm = molecules.num_medications();
        let s = &art.strata;
        ModelContext {
            n_diseases,
            n_procedures,
            n_medications: nm,
            molecules,
            disease_graph: art.disease_graph.clone(),
            procedure_graph: art.procedure_graph.clone(),
            medication_graph: art.medication_graph.clone(),
            relation_types: s.n_layers,
            dm_relation: s.layer_matrix(EntityKind::Disease, n_diseases, nm),
            dm_relevance: s.relevance_matrix(EntityKind::Disease, n_diseases, nm),
            pm_relation: s.layer_matrix(EntityKind::Procedure, n_procedures, nm),
            pm_relevance: s.relevance_matrix(EntityKind::Procedure, n_procedures, nm),
        }
    }

    /// Causal-free context: one relation type whose edges join sources and
    /// medications co-occurring at least `min_support` times, weighted by
    /// the rate `P(m | source)`.  Causal graphs are empty.
    pub fn from_cooccurrence(
        train: &[PatientRecord],
        n_diseases: usize,
        n_procedures: usize,
        molecules: MoleculeMap,
        min_support: usize,
    ) -> Self {
        let nm = molecules.num_medications();
        let m_tab = OccurrenceTable::from_records(train, EntityKind::Medication, nm);
        let build = |kind, n| {
            let tab = OccurrenceTable::from_records(train, kind, n);
            let mut rel = vec![0u8; n * nm];
            let mut r = vec![0.0; n * nm];
            for s in 0..n {
                let cs = tab.count(s);
                for m in 0..nm {
                    let co: usize = tab
                        .column(s)
                        .iter()
                        .zip(m_tab.column(m))
                        .map(|(a, b)| (a & b).count_ones() as usize)
                        .sum();
                    if co >= min_support.max(1) {
                        rel[s * nm + m] = 1;
                        r[s * nm + m] = co as f64 / cs as f64;
                    }
                }
            }
            (rel, r)
        };
        let (dm_relation, dm_relevance) = build(EntityKind::Disease, n_diseases);
        let (pm_relation, pm_relevance) = build(EntityKind::Procedure, n_procedures);
        ModelContext {
            n_diseases,
            n_procedures,
            n_medications: nm,
            molecules,
            disease_graph: CausalGraph::empty(EntityKind::Disease),
            procedure_graph: CausalGraph::empty(EntityKind::Procedure),
            medication_graph: CausalGraph::empty(EntityKind::Medication),
            relation_types: 1,
            dm_relation,
            dm_relevance,
            pm_relation,
            pm_relevance,
        }
    }

    pub fn n_molecules(&self) -> usize {
        self.molecules.num_molecules()
    }
}

#[derive(Debug, Clone)]
struct ParamIds {
    emb_d: ParamId,
    emb_p: ParamId,
    emb_s: Option<ParamId>,
    emb_m: Option<ParamId>,
    medmol: Option<ParamId>,
    gin_eps: Option<ParamId>,
    coarse: Vec<CoarseLayer>,
    dac: [(ParamId, ParamId); 3],
    gru: GruParams,
    mlp: MlpParams,
    head_w: ParamId,
    head_b: ParamId,
}

/// Intermediate values of one visit's forward pass.
#[derive(Debug, Clone)]
pub struct VisitOutput {
    pub probs: Var,
    pub h_d: Var,
    pub h_p: Var,
    pub h_m: Var,
    pub h_v: Var,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub context: ModelContext,
    pub params: ParamStore,
    ids: ParamIds,
}

impl Model {
    pub fn new(config: ModelConfig, context: ModelContext, seed: u64) -> Result<Self> {
        config.validate()?;
        let relations = context.relation_types;
        if !config.wo_c && relations != config.relation_types {
            return Err(Error::Config(format!(
                "strata provide {relations} relation types, config expects {}",
                config.relation_types
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let d = config.dim;
        let nm = context.n_medications;
        let ns = context.n_molecules();
        let lin = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
        let e0 = config.embedding_init;

        let emb_d = p.uniform("emb.disease", context.n_diseases, d, e0, &mut rng);
        let emb_p = p.uniform("emb.procedure", context.n_procedures, d, e0, &mut rng);
        let (emb_s, emb_m, medmol, gin_eps) = if config.wo_f {
            let m = p.uniform("emb.medication", nm, d, e0, &mut rng);
            (None, Some(m), None, None)
        } else {
            let s = p.uniform("emb.molecule", ns, d, e0, &mut rng);
            let mut data = vec![0.0; nm * ns];
            let mut mask = vec![false; nm * ns];
            for m in 0..nm {
                let mols = context.molecules.molecules_of(m);
                for &j in mols {
                    data[m * ns + j] = 1.0 / mols.len() as f64;
                    mask[m * ns + j] = true;
                }
            }
            let a = p.add(Tensor {
                name: "medmol.a".into(),
                rows: nm,
                cols: ns,
                data,
                mask: Some(mask),
                no_decay: false,
            })?;
            let eps = p.zeros("gin.eps", 1, 1);
            (Some(s), None, Some(a), Some(eps))
        };
        let mut coarse = Vec::new();
        for l in 0..config.coarse_layers {
            let delta = (0..relations)
                .map(|r| {
                    p.uniform(
                        &format!("coarse.{l}.delta.{r}"),
                        d,
                        d,
                        0.1 * lin(d),
                        &mut rng,
                    )
                })
                .collect();
            let log_norm = p.zeros(&format!("coarse.{l}.log_norm"), 1, relations);
            let self_delta = config
                .coarse_self_loop
                .then(|| p.uniform(&format!("coarse.{l}.self"), d, d, 0.1 * lin(d), &mut rng));
            coarse.push(CoarseLayer {
                delta,
                log_norm,
                self_delta,
            });
        }
        let mut dac = Vec::new();
        for k in ["disease", "procedure", "medication"] {
            let w = p.uniform(&format!("dac.{k}.w"), 1, d, lin(d), &mut rng);
            let b = p.zeros(&format!("dac.{k}.b"), 1, 1);
            dac.push((w, b));
        }
        let x = 3 * d;
        let mut g = |n: &str, c: usize| p.uniform(&format!("gru.{n}"), d, c, lin(d), &mut rng);
        let (wz, uz, wr, ur, wn, un) = (
            g("wz", x),
            g("uz", d),
            g("wr", x),
            g("ur", d),
            g("wn", x),
            g("un", d),
        );
        let gru = GruParams {
            wz,
            uz,
            wr,
            ur,
            wn,
            un,
            bz: p.zeros("gru.bz", 1, d),
            br: p.zeros("gru.br", 1, d),
            bn: p.zeros("gru.bn", 1, d),
        };
        let h = config.mlp_hidden;
        let mlp = MlpParams {
            w1: p.uniform("mlp.w1", h, d, lin(d), &mut rng),
            b1: p.zeros("mlp.b1", 1, h),
            w2: p.uniform("mlp.w2", d, h, lin(h), &mut rng),
            b2: p.zeros("mlp.b2", 1, d),
        };
        let head_w = p.uniform("head.w", nm, d, lin(d), &mut rng);
        let head_b = p.zeros("head.b", 1, nm);
        let ids = ParamIds {
            emb_d,
            emb_p,
            emb_s,
            emb_m,
            medmol,
            gin_eps,
            coarse,
            dac: [dac[0], dac[1], dac[2]],
            gru,
            mlp,
            head_w,
            head_b,
        };
        Ok(Model {
            config,
            context,
            params: p,
            ids,
        })
    }

    pub fn n_medications(&self) -> usize {
        self.context.n_medications
    }

    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        self.params.id(name)
    }

    /// Coarse edges between current sources and previous medications.
    /// Node order is diseases, procedures, medications.
    pub fn coarse_edges(&self, visit: &Visit, prev_meds: &[usize]) -> Vec<CoarseEdge> {
        let ctx = &self.context;
        let nm = ctx.n_medications;
        let nd = visit.diseases.len();
        let np = visit.procedures.len();
        let mut edges = Vec::new();
        for (k, &m) in prev_meds.iter().enumerate() {
            for (i, &d) in visit.diseases.iter().enumerate() {
                let rel = ctx.dm_relation[d * nm + m];
                if rel > 0 {
                    edges.push(CoarseEdge {
                        a: i,
                        b: nd + np + k,
                        relation: rel as usize - 1,
                        relevance: ctx.dm_relevance[d * nm + m],
                    });
                }
            }
            for (i, &p) in visit.procedures.iter().enumerate() {
                let rel = ctx.pm_relation[p * nm + m];
                if rel > 0 {
                    edges.push(CoarseEdge {
                        a: nd + i,
                        b: nd + np + k,
                        relation: rel as usize - 1,
                        relevance: ctx.pm_relevance[p * nm + m],
                    });
                }
            }
        }
        edges
    }

    fn check_visit(&self, v: &Visit) -> Result<()> {
        v.check_bounds(
            self.context.n_diseases,
            self.context.n_procedures,
            self.context.n_medications,
        )
    }

    /// Dual fusion for one visit: returns fused disease, procedure and
    /// previous-medication vectors in visit order.
    pub fn dual_fusion(
        &self,
        t: &mut Tape,
        visit: &Visit,
        prev_meds: &[usize],
    ) -> Result<(Vec<Var>, Vec<Var>, Vec<Var>)> {
        self.check_visit(visit)?;
        let ids = &self.ids;
        let ctx = &self.context;
        let mut d: Vec<Var> = visit
            .diseases
            .iter()
            .map(|&i| t.row(ids.emb_d, i))
            .collect();
        let mut p: Vec<Var> = visit
            .procedures
            .iter()
            .map(|&i| t.row(ids.emb_p, i))
            .collect();
        let mut mols: BTreeMap<usize, Var> = BTreeMap::new();
        if let Some(es) = ids.emb_s {
            for &m in prev_meds {
                for &s in ctx.molecules.molecules_of(m) {
                    mols.entry(s).or_insert_with(|| t.row(es, s));
                }
            }
        }
        let neighbors = fine_neighbors(&ctx.molecules, prev_meds);
        let edges = self.coarse_edges(visit, prev_meds);
        let mut m = Vec::new();
        for _ in 0..self.config.fusion_cycles {
            m = match (ids.emb_m, ids.medmol, ids.gin_eps) {
                (Some(em), _, _) => prev_meds.iter().map(|&i| t.row(em, i)).collect(),
                (None, Some(a), Some(eps)) => {
                    let eps = t.elem(eps, 0);
                    mols = fine_propagate(t, &mols, &neighbors, eps, self.config.activation);
                    prev_meds
                        .iter()
                        .map(|&i| {
                            compose_medication(t, a, ctx.n_molecules(), &ctx.molecules, i, &mols)
                        })
                        .collect()
                }
                _ => unreachable!("medication embedding source"),
            };
            let mut nodes: Vec<Var> = d.iter().chain(&p).chain(&m).copied().collect();
            for layer in &ids.coarse {
                nodes = coarse_propagate(t, &nodes, &edges, layer, self.config.activation);
            }
            let (nd, np) = (d.len(), p.len());
            d = nodes[..nd].to_vec();
            p = nodes[nd..nd + np].to_vec();
            m = nodes[nd + np..].to_vec();
        }
        Ok((d, p, m))
    }

    fn dac_group(
        &self,
        t: &mut Tape,
        vectors: &[Var],
        entities: &[usize],
        graph: &CausalGraph,
        slot: usize,
    ) -> Result<Var> {
        if vectors.is_empty() {
            return Ok(t.zeros(self.config.dim));
        }
        let sub = graph.visit_subgraph(entities);
        let cats: Vec<Category> = entities.iter().map(|&e| dac_classify(e, &sub)).collect();
        let (w, b) = self.ids.dac[slot];
        Ok(dac_aggregate(t, vectors, &cats, w, b)?.0)
    }

    /// Records the forward pass for every visit of `record`.  Visit `t`
    /// sees diseases and procedures of visit `t` and medications of `t - 1`.
    pub fn forward(&self, t: &mut Tape, record: &PatientRecord) -> Result<Vec<VisitOutput>> {
        if record.visits.is_empty() {
            return Err(Error::Empty(format!(
                "patient {} has no visits",
                record.patient_id
            )));
        }
        let ctx = &self.context;
        let mut state = t.zeros(self.config.dim);
        let mut out = Vec::with_capacity(record.visits.len());
        let empty: Vec<usize> = Vec::new();
        for (k, visit) in record.visits.iter().enumerate() {
            let prev = if k == 0 {
                &empty
            } else {
                &record.visits[k - 1].medications
            };
            let (d, p, m) = self.dual_fusion(t, visit, prev)?;
            let h_d = self.dac_group(t, &d, &visit.diseases, &ctx.disease_graph, 0)?;
            let h_p = self.dac_group(t, &p, &visit.procedures, &ctx.procedure_graph, 1)?;
            let h_m = self.dac_group(t, &m, prev, &ctx.medication_graph, 2)?;
            let h_v = build_visit_repr(t, h_d, h_p, h_m)?;
            state = gru_step(t, &self.ids.gru, h_v, state);
            let h_h = mlp(t, &self.ids.mlp, state);
            let probs = predict_probabilities(t, self.ids.head_w, self.ids.head_b, h_h);
            if t.value(probs).iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite probabilities for patient {}",
                    record.patient_id
                )));
            }
            out.push(VisitOutput {
                probs,
                h_d,
                h_p,
                h_m,
                h_v,
            });
        }
        Ok(out)
    }

    /// Per-visit medication probabilities.
    pub fn predict(&self, record: &PatientRecord) -> Result<Vec<Vec<f64>>> {
        let mut t = Tape::new(&self.params);
        let outs = self.forward(&mut t, record)?;
        Ok(outs.iter().map(|o| t.value(o.probs).to_vec()).collect())
    }

    /// Tensors held fixed at zero outside their mask.
    pub fn masked_entries(&self) -> Option<(ParamId, &[bool])> {
        let a = self.ids.medmol?;
        Some((a, self.params.get(a).mask.as_deref()?))
    }

    pub(crate) fn from_parts(
        config: ModelConfig,
        context: ModelContext,
        tensors: &[Tensor],
    ) -> Result<Self> {
        let mut m = Model::new(config, context, 0)?;
        m.params.load_from(tensors)?;
        Ok(m)
    }
}
