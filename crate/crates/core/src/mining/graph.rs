use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ehr::EntityKind;
use crate::error::{Error, Result};

/// Directed graph over entities of a single kind.  Node ids are vocabulary
/// indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CausalGraph {
    kind: EntityKind,
    nodes: Vec<usize>,
    edges: Vec<(usize, usize)>,
    #[serde(skip)]
    parents: BTreeMap<usize, Vec<usize>>,
    #[serde(skip)]
    children: BTreeMap<usize, Vec<usize>>,
}

impl CausalGraph {
    /// Builds an acyclic graph; edges must connect listed nodes.
    pub fn new(kind: EntityKind, nodes: Vec<usize>, edges: Vec<(usize, usize)>) -> Result<Self> {
        let g = Self::new_unchecked(kind, nodes, edges)?;
        if !g.is_acyclic() {
            return Err(Error::Structure(format!("{kind} graph contains a cycle")));
        }
        Ok(g)
    }

    /// Like [`CausalGraph::new`] but accepts cycles.
    pub fn new_unchecked(
        kind: EntityKind,
        nodes: Vec<usize>,
        edges: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let nodes: Vec<usize> = nodes
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let edges: Vec<(usize, usize)> = edges
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        for &(a, b) in &edges {
            if a == b {
                return Err(Error::Structure(format!("self-loop on {a}")));
            }
            if nodes.binary_search(&a).is_err() || nodes.binary_search(&b).is_err() {
                return Err(Error::Structure(format!(
                    "edge {a}->{b} references a node outside the graph"
                )));
            }
        }
        let mut g = CausalGraph {
            kind,
            nodes,
            edges,
            parents: BTreeMap::new(),
            children: BTreeMap::new(),
        };
        g.index();
        Ok(g)
    }

    pub fn empty(kind: EntityKind) -> Self {
        CausalGraph {
            kind,
            nodes: Vec::new(),
            edges: Vec::new(),
            parents: BTreeMap::new(),
            children: BTreeMap::new(),
        }
    }

    fn index(&mut self) {
        self.parents.clear();
        self.children.clear();
        for &(a, b) in &self.edges {
            self.parents.entry(b).or_default().push(a);
            self.children.entry(a).or_default().push(b);
        }
    }

    /// Restores adjacency indices after deserialization.
    pub fn reindex(mut self) -> Self {
        self.index();
        self
    }

    pub fn kind(&self) -> EntityKind {
        self.kind
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn contains(&self, node: usize) -> bool {
        self.nodes.binary_search(&node).is_ok()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.binary_search(&(a, b)).is_ok()
    }

    pub fn parents(&self, node: usize) -> &[usize] {
        self.parents.get(&node).map_or(&[], Vec::as_slice)
    }

    pub fn children(&self, node: usize) -> &[usize] {
        self.children.get(&node).map_or(&[], Vec::as_slice)
    }

    /// Undirected skeleton as sorted `(min, max)` pairs.
    pub fn skeleton(&self) -> BTreeSet<(usize, usize)> {
        self.edges
            .iter()
            .map(|&(a, b)| (a.min(b), a.max(b)))
            .collect()
    }

    pub fn is_acyclic(&self) -> bool {
        let mut indeg: BTreeMap<usize, usize> = self.nodes.iter().map(|&n| (n, 0)).collect();
        for &(_, b) in &self.edges {
            *indeg.get_mut(&b).expect("edge endpoints are nodes") += 1;
        }
        let mut ready: Vec<usize> = indeg
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&n, _)| n)
            .collect();
        let mut seen = 0;
        while let Some(u) = ready.pop() {
            seen += 1;
            for &c in self.children(u) {
                let d = indeg.get_mut(&c).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.push(c);
                }
            }
        }
        seen == self.nodes.len()
    }

    /// Induced subgraph over a visit's entities; entities outside the global
    /// graph appear as isolated nodes.
    pub fn visit_subgraph(&self, entities: &[usize]) -> VisitCausalSubgraph {
        let nodes: BTreeSet<usize> = entities.iter().copied().collect();
        let edges = self
            .edges
            .iter()
            .filter(|(a, b)| nodes.contains(a) && nodes.contains(b))
            .copied()
            .collect();
        VisitCausalSubgraph {
            nodes: nodes.into_iter().collect(),
            edges,
        }
    }
}

/// Free-function form of [`CausalGraph::visit_subgraph`].
pub fn visit_causal_subgraph(global: &CausalGraph, entities: &[usize]) -> VisitCausalSubgraph {
    global.visit_subgraph(entities)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisitCausalSubgraph {
    pub nodes: Vec<usize>,
    pub edges: Vec<(usize, usize)>,
}

impl VisitCausalSubgraph {
    pub fn in_degree(&self, node: usize) -> usize {
        self.edges.iter().filter(|e| e.1 == node).count()
    }

    pub fn out_degree(&self, node: usize) -> usize {
        self.edges.iter().filter(|e| e.0 == node).count()
    }

    pub fn contains(&self, node: usize) -> bool {
        self.nodes.binary_search(&node).is_ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> CausalGraph {
        CausalGraph::new(EntityKind::Disease, vec![1, 2, 3, 4], vec![(1, 2), (2, 3)]).unwrap()
    }

    #[test]
    fn cycles_rejected() {
        assert!(CausalGraph::new(EntityKind::Disease, vec![0, 1], vec![(0, 1), (1, 0)]).is_err());
        let g = CausalGraph::new_unchecked(EntityKind::Disease, vec![0, 1], vec![(0, 1), (1, 0)])
            .unwrap();
        assert!(!g.is_acyclic());
    }

    #[test]
    fn induced_subgraph() {
        let g = chain();
        assert_eq!(g.visit_subgraph(&[1, 2]).edges, vec![(1, 2)]);
        let iso = g.visit_subgraph(&[4]);
        assert_eq!(iso.nodes, vec![4]);
        assert!(iso.edges.is_empty());
        let all = g.visit_subgraph(g.nodes());
        assert_eq!(all.edges, g.edges());
        // Entities unknown to the global graph stay as isolated nodes.
        let extra = g.visit_subgraph(&[1, 9]);
        assert_eq!(extra.nodes, vec![1, 9]);
        assert!(extra.edges.is_empty());
    }
}
