//! Differentiable building blocks recorded on a [`Tape`].

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::ehr::MoleculeMap;
use crate::error::{Error, Result};
use crate::mining::VisitCausalSubgraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply(self, t: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Sigmoid => t.sigmoid(x),
            Activation::Tanh => t.tanh(x),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "identity" => Some(Activation::Identity),
            "sigmoid" => Some(Activation::Sigmoid),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
        }
    }
}

/// Plain row lookup with bounds checking.
pub fn embed_entities(
    params: &ParamStore,
    table: ParamId,
    indices: &[usize],
) -> Result<Vec<Vec<f64>>> {
    let t = params.get(table);
    indices
        .iter()
        .map(|&i| {
            if i >= t.rows {
                Err(Error::Bounds {
                    index: i,
                    len: t.rows,
                })
            } else {
                Ok(t.row(i).to_vec())
            }
        })
        .collect()
}

/// `h_m = sum_j a_mj h_{s_j}` over the medication's own molecules.
/// `mol_vars` maps molecule index to its current vector.
pub fn compose_medication(
    t: &mut Tape,
    a: ParamId,
    n_molecules: usize,
    map: &MoleculeMap,
    med: usize,
    mol_vars: &BTreeMap<usize, Var>,
) -> Var {
    let mols = map.molecules_of(med);
    let mut terms = Vec::with_capacity(mols.len());
    let mut all_zero = true;
    for &s in mols {
        let w = t.elem(a, med * n_molecules + s);
        all_zero &= t.value(w)[0] == 0.0;
        terms.push(t.scale_by(mol_vars[&s], w));
    }
    if all_zero {
        warn!("medication {med} has an all-zero composition row");
    }
    t.sum(&terms)
}

/// Molecule adjacency: molecules sharing any of `meds` are neighbours.
pub fn fine_neighbors(map: &MoleculeMap, meds: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut nb: BTreeMap<usize, std::collections::BTreeSet<usize>> = BTreeMap::new();
    for &m in meds {
        let mols = map.molecules_of(m);
        for &a in mols {
            let e = nb.entry(a).or_default();
            e.extend(mols.iter().copied().filter(|&b| b != a));
        }
    }
    nb.into_iter()
        .map(|(k, v)| (k, v.into_iter().collect()))
        .collect()
}

/// One GIN layer: `act((1 + eps) h_i + sum_{j in N(i)} h_j)`.
pub fn fine_propagate(
    t: &mut Tape,
    mol_vars: &BTreeMap<usize, Var>,
    neighbors: &BTreeMap<usize, Vec<usize>>,
    eps: Var,
    act: Activation,
) -> BTreeMap<usize, Var> {
    let mut out = BTreeMap::new();
    for (&i, &h) in mol_vars {
        let scaled = t.scale_by(h, eps);
        let mut terms = vec![h, scaled];
        if let Some(ns) = neighbors.get(&i) {
            terms.extend(ns.iter().map(|j| mol_vars[j]));
        }
        let pre = t.sum(&terms);
        out.insert(i, act.apply(t, pre));
    }
    out
}

/// Undirected typed edge between two coarse-graph nodes with relevance `r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseEdge {
    pub a: usize,
    pub b: usize,
    pub relation: usize,
    pub relevance: f64,
}

/// Parameters of one weighted relational convolution layer.
#[derive(Debug, Clone)]
pub struct CoarseLayer {
    /// `Delta W` per relation type.
    pub delta: Vec<ParamId>,
    /// Log-scale `s` per relation; `q = |N| exp(s)`.
    pub log_norm: ParamId,
    /// Self-loop transform `(I + Delta W_0)`, if enabled.
    pub self_delta: Option<ParamId>,
}

/// One W-RGCN layer.  For node `i` and relation `e`:
/// `(1 / q_{e,i}) sum_{j in N_e(i)} (r_j I + Delta W_e) h_j`, summed over
/// relations (plus the optional self-loop) and passed through `act`.
/// Nodes without coarse edges are returned unchanged.
pub fn coarse_propagate(
    t: &mut Tape,
    nodes: &[Var],
    edges: &[CoarseEdge],
    layer: &CoarseLayer,
    act: Activation,
) -> Vec<Var> {
    // incident[i][relation] = [(neighbor, relevance)]
    let mut incident: Vec<BTreeMap<usize, Vec<(usize, f64)>>> = vec![BTreeMap::new(); nodes.len()];
    for e in edges {
        incident[e.a]
            .entry(e.relation)
            .or_default()
            .push((e.b, e.relevance));
        incident[e.b]
            .entry(e.relation)
            .or_default()
            .push((e.a, e.relevance));
    }
    let mut out = Vec::with_capacity(nodes.len());
    for (i, rels) in incident.iter().enumerate() {
        if rels.is_empty() {
            out.push(nodes[i]);
            continue;
        }
        let mut terms = Vec::new();
        if let Some(sd) = layer.self_delta {
            terms.push(nodes[i]);
            terms.push(t.matvec(sd, nodes[i]));
        }
        for (&rel, nb) in rels {
            let weighted: Vec<Var> = nb.iter().map(|&(j, r)| t.scale(nodes[j], r)).collect();
            let plain: Vec<Var> = nb.iter().map(|&(j, _)| nodes[j]).collect();
            let s_sum = t.sum(&weighted);
            let h_sum = t.sum(&plain);
            let d = t.matvec(layer.delta[rel], h_sum);
            let msg = t.add(s_sum, d);
            let s = t.elem(layer.log_norm, rel);
            let neg = t.scale(s, -1.0);
            let inv_q = t.exp(neg);
            let msg = t.scale_by(msg, inv_q);
            terms.push(t.scale(msg, 1.0 / nb.len() as f64));
        }
        let pre = t.sum(&terms);
        out.push(act.apply(t, pre));
    }
    out
}

/// Position of an entity in its visit-induced causal subgraph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Cause,
    Effect,
    Middle,
    Independent,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Cause,
        Category::Effect,
        Category::Middle,
        Category::Independent,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

pub fn dac_classify(entity: usize, sub: &VisitCausalSubgraph) -> Category {
    let (i, o) = (sub.in_degree(entity), sub.out_degree(entity));
    match (i > 0, o > 0) {
        (false, true) => Category::Cause,
        (true, false) => Category::Effect,
        (true, true) => Category::Middle,
        (false, false) => Category::Independent,
    }
}

/// DAC weights for one visit: per category mean, softmax over non-empty
/// categories of `W h + b`, then each member scaled by its category weight
/// and summed.  Returns the aggregate and the category weight nodes.
pub fn dac_aggregate(
    t: &mut Tape,
    vectors: &[Var],
    categories: &[Category],
    w: ParamId,
    b: ParamId,
) -> Result<(Var, BTreeMap<Category, Var>)> {
    if vectors.is_empty() {
        return Err(Error::Empty("DAC aggregation over no entities".into()));
    }
    let mut groups: BTreeMap<Category, Vec<Var>> = BTreeMap::new();
    for (&v, &c) in vectors.iter().zip(categories) {
        groups.entry(c).or_default().push(v);
    }
    let mut logits = Vec::with_capacity(groups.len());
    for members in groups.values() {
        let s = t.sum(members);
        let mean = t.scale(s, 1.0 / members.len() as f64);
        logits.push(t.affine(w, Some(b), mean));
    }
    let cat = t.concat(&logits);
    let soft = t.softmax(cat);
    let mut weights = BTreeMap::new();
    for (k, &c) in groups.keys().enumerate() {
        weights.insert(c, t.index(soft, k));
    }
    let terms: Vec<Var> = vectors
        .iter()
        .zip(categories)
        .map(|(&v, c)| t.scale_by(v, weights[c]))
        .collect();
    Ok((t.sum(&terms), weights))
}

/// `[h_D || h_P || h_M]`.
pub fn build_visit_repr(t: &mut Tape, h_d: Var, h_p: Var, h_m: Var) -> Result<Var> {
    let n = t.dim(h_d);
    for v in [h_p, h_m] {
        if t.dim(v) != n {
            return Err(Error::Shape {
                expected: n,
                actual: t.dim(v),
            });
        }
    }
    Ok(t.concat(&[h_d, h_p, h_m]))
}

#[derive(Debug, Clone)]
pub struct GruParams {
    pub wz: ParamId,
    pub uz: ParamId,
    pub bz: ParamId,
    pub wr: ParamId,
    pub ur: ParamId,
    pub br: ParamId,
    pub wn: ParamId,
    pub un: ParamId,
    pub bn: ParamId,
}

/// Gated recurrent update `o' = (1 - z) n + z o`.
pub fn gru_step(t: &mut Tape, p: &GruParams, x: Var, h: Var) -> Var {
    let zx = t.affine(p.wz, Some(p.bz), x);
    let zh = t.matvec(p.uz, h);
    let z = t.add(zx, zh);
    let z = t.sigmoid(z);
    let rx = t.affine(p.wr, Some(p.br), x);
    let rh = t.matvec(p.ur, h);
    let r = t.add(rx, rh);
    let r = t.sigmoid(r);
    let rhh = t.mul(r, h);
    let nx = t.affine(p.wn, Some(p.bn), x);
    let nh = t.matvec(p.un, rhh);
    let n = t.add(nx, nh);
    let n = t.tanh(n);
    let neg_n = t.scale(n, -1.0);
    let diff = t.add(h, neg_n);
    let zd = t.mul(z, diff);
    t.add(n, zd)
}

#[derive(Debug, Clone)]
pub struct MlpParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

/// One sigmoid hidden layer followed by a linear projection.
pub fn mlp(t: &mut Tape, p: &MlpParams, x: Var) -> Var {
    let h = t.affine(p.w1, Some(p.b1), x);
    let h = t.sigmoid(h);
    t.affine(p.w2, Some(p.b2), h)
}

/// `P = logistic(W h + b)`, elementwise over medications.
pub fn predict_probabilities(t: &mut Tape, w: ParamId, b: ParamId, h: Var) -> Var {
    let logits = t.affine(w, Some(b), h);
    t.sigmoid(logits)
}
