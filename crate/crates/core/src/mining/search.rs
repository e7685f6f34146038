//! Greedy equivalence search over completed partially directed acyclic
//! graphs (CPDAGs).
//!
//! The search alternates three phases until none of them changes the
//! equivalence class: forward insertion, backward deletion and edge turning.
//! Insert and delete follow Chickering's operators on the CPDAG; turning
//! reverses a single edge of a consistent DAG extension, which moves to a
//! different class whenever the edge is not covered.

use log::debug;

use super::data::OccurrenceTable;
use super::graph::CausalGraph;
use super::score::ScoreCache;
use crate::ehr::EntityKind;
use crate::error::Result;

/// Minimum score gain for a move to count as an improvement.
const MIN_GAIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchConfig {
    pub max_indegree: usize,
    /// Nodes need at least this many occurrences, and node pairs at least
    /// this many co-occurrences, before an edge between them is considered.
    pub min_support: usize,
    /// Hard cap on accepted moves across all phases.
    pub max_moves: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            max_indegree: 4,
            min_support: 5,
            max_moves: 100_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub graph: CausalGraph,
    pub score: f64,
    pub inserts: usize,
    pub deletes: usize,
    pub turns: usize,
    /// Score after every accepted move, starting with the empty graph.
    pub trace: Vec<f64>,
}

/// Partially directed graph on local indices `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Pdag {
    n: usize,
    dir: Vec<bool>,
    und: Vec<bool>,
}

impl Pdag {
    pub(crate) fn new(n: usize) -> Self {
        Pdag {
            n,
            dir: vec![false; n * n],
            und: vec![false; n * n],
        }
    }

    #[inline]
    fn d(&self, a: usize, b: usize) -> bool {
        self.dir[a * self.n + b]
    }

    #[inline]
    fn u(&self, a: usize, b: usize) -> bool {
        self.und[a * self.n + b]
    }

    #[inline]
    fn adjacent(&self, a: usize, b: usize) -> bool {
        self.d(a, b) || self.d(b, a) || self.u(a, b)
    }

    fn set_dir(&mut self, a: usize, b: usize) {
        self.und[a * self.n + b] = false;
        self.und[b * self.n + a] = false;
        self.dir[b * self.n + a] = false;
        self.dir[a * self.n + b] = true;
    }

    fn set_und(&mut self, a: usize, b: usize) {
        self.dir[a * self.n + b] = false;
        self.dir[b * self.n + a] = false;
        self.und[a * self.n + b] = true;
        self.und[b * self.n + a] = true;
    }

    fn remove(&mut self, a: usize, b: usize) {
        let n = self.n;
        self.dir[a * n + b] = false;
        self.dir[b * n + a] = false;
        self.und[a * n + b] = false;
        self.und[b * n + a] = false;
    }

    fn parents(&self, y: usize) -> Vec<usize> {
        (0..self.n).filter(|&x| self.d(x, y)).collect()
    }

    fn neighbors(&self, y: usize) -> Vec<usize> {
        (0..self.n).filter(|&x| self.u(x, y)).collect()
    }

    fn is_clique(&self, set: &[usize]) -> bool {
        set.iter()
            .enumerate()
            .all(|(i, &a)| set[i + 1..].iter().all(|&b| self.adjacent(a, b)))
    }

    /// True when a path `from ⇝ to` exists using `a→b` or `a−b` steps and
    /// avoiding `blocked` nodes.
    fn semi_directed_path(&self, from: usize, to: usize, blocked: &[usize]) -> bool {
        let mut seen = vec![false; self.n];
        for &b in blocked {
            seen[b] = true;
        }
        seen[from] = true;
        let mut stack = vec![from];
        while let Some(a) = stack.pop() {
            for b in 0..self.n {
                if (self.d(a, b) || self.u(a, b)) && !seen[b] {
                    if b == to {
                        return true;
                    }
                    seen[b] = true;
                    stack.push(b);
                }
            }
        }
        false
    }

    /// Consistent DAG extension (Dor & Tarsi), as parent lists.  Returns
    /// `None` when the PDAG admits no extension.
    pub(crate) fn extension(&self) -> Option<Vec<Vec<usize>>> {
        let n = self.n;
        let mut parents: Vec<Vec<usize>> = (0..n).map(|y| self.parents(y)).collect();
        let mut alive = vec![true; n];
        for _ in 0..n {
            let pick = (0..n).find(|&x| {
                if !alive[x] {
                    return false;
                }
                if (0..n).any(|y| alive[y] && self.d(x, y)) {
                    return false;
                }
                let adj: Vec<usize> = (0..n)
                    .filter(|&z| z != x && alive[z] && self.adjacent(x, z))
                    .collect();
                adj.iter()
                    .filter(|&&y| self.u(x, y))
                    .all(|&y| adj.iter().all(|&z| z == y || self.adjacent(y, z)))
            })?;
            for y in 0..n {
                if alive[y] && self.u(pick, y) {
                    parents[pick].push(y);
                }
            }
            alive[pick] = false;
        }
        for p in &mut parents {
            p.sort_unstable();
        }
        Some(parents)
    }

    /// CPDAG of the equivalence class of a DAG given as parent lists.
    pub(crate) fn from_dag(parents: &[Vec<usize>]) -> Pdag {
        let n = parents.len();
        let mut g = Pdag::new(n);
        for (y, ps) in parents.iter().enumerate() {
            for &x in ps {
                g.set_und(x, y);
            }
        }
        // Compelled v-structures.
        for (c, ps) in parents.iter().enumerate() {
            for (i, &a) in ps.iter().enumerate() {
                for &b in &ps[i + 1..] {
                    if !g.adjacent(a, b) {
                        g.set_dir(a, c);
                        g.set_dir(b, c);
                    }
                }
            }
        }
        // Meek rules 1-3 to closure.
        loop {
            let mut changed = false;
            for b in 0..n {
                for c in 0..n {
                    if !g.u(b, c) {
                        continue;
                    }
                    // R1: a→b−c with a, c non-adjacent.
                    let r1 = (0..n).any(|a| a != c && g.d(a, b) && !g.adjacent(a, c));
                    // R2: b→a→c with b−c.
                    let r2 = (0..n).any(|a| g.d(b, a) && g.d(a, c));
                    // R3: b−a1→c, b−a2→c, a1 and a2 non-adjacent.
                    let r3 = {
                        let mids: Vec<usize> = (0..n).filter(|&a| g.u(b, a) && g.d(a, c)).collect();
                        mids.iter()
                            .enumerate()
                            .any(|(i, &a1)| mids[i + 1..].iter().any(|&a2| !g.adjacent(a1, a2)))
                    };
                    if r1 || r2 || r3 {
                        g.set_dir(b, c);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        g
    }

    fn recomplete(&self) -> Option<Pdag> {
        self.extension().map(|dag| Pdag::from_dag(&dag))
    }
}

fn union_sorted(parts: &[&[usize]]) -> Vec<usize> {
    let mut v: Vec<usize> = parts.iter().flat_map(|p| p.iter().copied()).collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Subsets of `items` with at most `max_size` members, smallest first and
/// lexicographic within a size.
fn subsets(items: &[usize], max_size: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut frontier: Vec<(Vec<usize>, usize)> = vec![(Vec::new(), 0)];
    for _ in 0..max_size.min(items.len()) {
        let mut next = Vec::new();
        for (set, start) in &frontier {
            for i in *start..items.len() {
                let mut s = set.clone();
                s.push(items[i]);
                out.push(s.clone());
                next.push((s, i + 1));
            }
        }
        frontier = next;
    }
    out
}

struct Searcher<'c, 'd> {
    cache: &'c mut ScoreCache<'d>,
    /// Local index → entity index.
    ids: Vec<usize>,
    allowed: Vec<bool>,
    max_indegree: usize,
}

#[derive(Debug, Clone)]
enum Move {
    Insert { x: usize, y: usize, t: Vec<usize> },
    Delete { x: usize, y: usize, h: Vec<usize> },
    Turn { dag: Vec<Vec<usize>> },
}

impl Searcher<'_, '_> {
    fn n(&self) -> usize {
        self.ids.len()
    }

    fn local(&mut self, y: usize, parents: &[usize]) -> Result<f64> {
        let node = self.ids[y];
        let ps: Vec<usize> = parents.iter().map(|&p| self.ids[p]).collect();
        self.cache.local(node, &ps)
    }

    fn best_insert(&mut self, g: &Pdag) -> Result<Option<(f64, Move)>> {
        let n = self.n();
        let mut best: Option<(f64, Move)> = None;
        for x in 0..n {
            for y in 0..n {
                if x == y || g.adjacent(x, y) || !self.allowed[x * n + y] {
                    continue;
                }
                let nbrs = g.neighbors(y);
                let na: Vec<usize> = nbrs.iter().copied().filter(|&z| g.adjacent(z, x)).collect();
                let t0: Vec<usize> = nbrs
                    .iter()
                    .copied()
                    .filter(|&z| z != x && !g.adjacent(z, x))
                    .collect();
                let pa = g.parents(y);
                let base = union_sorted(&[&na, &pa]);
                if base.len() + 1 > self.max_indegree {
                    continue;
                }
                let budget = self.max_indegree - base.len() - 1;
                for t in subsets(&t0, budget) {
                    let na_t = union_sorted(&[&na, &t]);
                    if !g.is_clique(&na_t) || g.semi_directed_path(y, x, &na_t) {
                        continue;
                    }
                    let without = union_sorted(&[&base, &t]);
                    let with = union_sorted(&[&without, &[x]]);
                    let gain = self.local(y, &with)? - self.local(y, &without)?;
                    if gain > MIN_GAIN && best.as_ref().is_none_or(|(b, _)| gain > *b) {
                        best = Some((gain, Move::Insert { x, y, t }));
                    }
                }
            }
        }
        Ok(best)
    }

    fn best_delete(&mut self, g: &Pdag) -> Result<Option<(f64, Move)>> {
        let n = self.n();
        let mut best: Option<(f64, Move)> = None;
        for x in 0..n {
            for y in 0..n {
                if x == y || !(g.d(x, y) || g.u(x, y)) {
                    continue;
                }
                let na: Vec<usize> = g
                    .neighbors(y)
                    .into_iter()
                    .filter(|&z| z != x && g.adjacent(z, x))
                    .collect();
                let pa_no_x: Vec<usize> = g.parents(y).into_iter().filter(|&p| p != x).collect();
                for h in subsets(&na, na.len()) {
                    let rest: Vec<usize> = na.iter().copied().filter(|z| !h.contains(z)).collect();
                    if !g.is_clique(&rest) {
                        continue;
                    }
                    let without = union_sorted(&[&rest, &pa_no_x]);
                    let with = union_sorted(&[&without, &[x]]);
                    if with.len() > self.max_indegree {
                        continue;
                    }
                    let gain = self.local(y, &without)? - self.local(y, &with)?;
                    if gain > MIN_GAIN && best.as_ref().is_none_or(|(b, _)| gain > *b) {
                        best = Some((gain, Move::Delete { x, y, h }));
                    }
                }
            }
        }
        Ok(best)
    }

    fn best_turn(&mut self, g: &Pdag) -> Result<Option<(f64, Move)>> {
        let Some(dag) = g.extension() else {
            return Ok(None);
        };
        let n = self.n();
        let mut best: Option<(f64, Move)> = None;
        for y in 0..n {
            for &x in &dag[y] {
                // Reverse x→y into y→x.
                if dag[x].len() + 1 > self.max_indegree || reaches_without(&dag, x, y) {
                    continue;
                }
                let new_px = union_sorted(&[&dag[x], &[y]]);
                let new_py: Vec<usize> = dag[y].iter().copied().filter(|&p| p != x).collect();
                let gain = self.local(x, &new_px)? - self.local(x, &dag[x])?
                    + self.local(y, &new_py)?
                    - self.local(y, &dag[y])?;
                if gain > MIN_GAIN && best.as_ref().is_none_or(|(b, _)| gain > *b) {
                    let mut next = dag.clone();
                    next[x] = new_px;
                    next[y] = new_py;
                    best = Some((gain, Move::Turn { dag: next }));
                }
            }
        }
        Ok(best)
    }
}

/// True if `to` is reachable from `from` in the DAG without the direct edge
/// `from → to` (reversing that edge would then close a cycle).
fn reaches_without(parents: &[Vec<usize>], from: usize, to: usize) -> bool {
    let n = parents.len();
    let mut children = vec![Vec::new(); n];
    for (c, ps) in parents.iter().enumerate() {
        for &p in ps {
            children[p].push(c);
        }
    }
    let mut seen = vec![false; n];
    let mut stack: Vec<usize> = children[from]
        .iter()
        .copied()
        .filter(|&c| c != to)
        .collect();
    while let Some(a) = stack.pop() {
        if a == to {
            return true;
        }
        if std::mem::replace(&mut seen[a], true) {
            continue;
        }
        stack.extend(children[a].iter().copied());
    }
    false
}

fn apply(g: &Pdag, mv: &Move) -> Option<Pdag> {
    let mut next = g.clone();
    match mv {
        Move::Insert { x, y, t } => {
            next.set_dir(*x, *y);
            for &z in t {
                next.set_dir(z, *y);
            }
            next.recomplete()
        }
        Move::Delete { x, y, h } => {
            next.remove(*x, *y);
            for &z in h {
                if next.u(*y, z) {
                    next.set_dir(*y, z);
                }
                if next.u(*x, z) {
                    next.set_dir(*x, z);
                }
            }
            next.recomplete()
        }
        Move::Turn { dag } => Some(Pdag::from_dag(dag)),
    }
}

/// Runs the three-phase greedy search on the columns of `data` that pass the
/// support prefilter.
pub fn greedy_equivalence_search(
    data: &OccurrenceTable,
    kind: EntityKind,
    cfg: SearchConfig,
) -> Result<SearchOutcome> {
    let mut cache = ScoreCache::new(data, cfg.max_indegree);
    greedy_equivalence_search_with(&mut cache, kind, cfg)
}

pub fn greedy_equivalence_search_with(
    cache: &mut ScoreCache<'_>,
    kind: EntityKind,
    cfg: SearchConfig,
) -> Result<SearchOutcome> {
    let data = cache.data();
    let ids: Vec<usize> = (0..data.n_vars())
        .filter(|&v| data.count(v) >= cfg.min_support.max(1))
        .collect();
    let n = ids.len();
    let mut allowed = vec![false; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let ok = data.co_count(ids[i], ids[j]) >= cfg.min_support;
            allowed[i * n + j] = ok;
            allowed[j * n + i] = ok;
        }
    }
    let mut s = Searcher {
        cache,
        ids,
        allowed,
        max_indegree: cfg.max_indegree,
    };

    let mut g = Pdag::new(n);
    let mut score = 0.0;
    for y in 0..n {
        score += s.local(y, &[])?;
    }
    let mut trace = vec![score];
    let (mut inserts, mut deletes, mut turns) = (0, 0, 0);
    let mut moves = 0usize;
    'outer: loop {
        let mut changed = false;
        for phase in 0..3 {
            loop {
                if moves >= cfg.max_moves {
                    break 'outer;
                }
                let best = match phase {
                    0 => s.best_insert(&g)?,
                    1 => s.best_delete(&g)?,
                    _ => s.best_turn(&g)?,
                };
                let Some((gain, mv)) = best else { break };
                let Some(next) = apply(&g, &mv) else {
                    debug!("move {mv:?} produced a PDAG without extension; skipping phase");
                    break;
                };
                g = next;
                score += gain;
                trace.push(score);
                moves += 1;
                changed = true;
                match phase {
                    0 => inserts += 1,
                    1 => deletes += 1,
                    _ => turns += 1,
                }
            }
        }
        if !changed {
            break;
        }
    }

    let dag = g.extension().expect("CPDAG always admits an extension");
    let mut edges = Vec::new();
    for (y, ps) in dag.iter().enumerate() {
        for &x in ps {
            edges.push((s.ids[x], s.ids[y]));
        }
    }
    let graph = CausalGraph::new(kind, s.ids.clone(), edges)?;
    let exact = s.cache.total(&graph)?;
    debug!(
        "{kind} search: {n} nodes, {} edges, {inserts} inserts, {deletes} deletes, {turns} turns",
        graph.edges().len()
    );
    Ok(SearchOutcome {
        graph,
        score: exact,
        inserts,
        deletes,
        turns,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dag(parents: &[&[usize]]) -> Vec<Vec<usize>> {
        parents.iter().map(|p| p.to_vec()).collect()
    }

    #[test]
    fn chain_cpdag_is_undirected() {
        let g = Pdag::from_dag(&dag(&[&[], &[0], &[1]]));
        assert!(g.u(0, 1) && g.u(1, 2) && !g.adjacent(0, 2));
    }

    #[test]
    fn collider_is_compelled() {
        let g = Pdag::from_dag(&dag(&[&[], &[0, 2], &[]]));
        assert!(g.d(0, 1) && g.d(2, 1));
        // Meek R1 then orients 1−3 away from the collider.
        let g = Pdag::from_dag(&dag(&[&[], &[0, 2], &[], &[1]]));
        assert!(g.d(1, 3));
    }

    #[test]
    fn extension_round_trips_class() {
        let d = dag(&[&[], &[0], &[0, 1], &[2]]);
        let cp = Pdag::from_dag(&d);
        let ext = cp.extension().unwrap();
        assert_eq!(Pdag::from_dag(&ext), cp);
    }

    #[test]
    fn subsets_enumeration() {
        let s = subsets(&[1, 2, 3], 2);
        assert_eq!(s.len(), 1 + 3 + 3);
        assert_eq!(s[0], Vec::<usize>::new());
        assert!(s.contains(&vec![1, 3]));
    }
}
