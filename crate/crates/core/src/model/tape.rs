//! Minimal reverse-mode automatic differentiation over `f64` vectors.
//!
//! Every node holds a dense vector.  Parameters enter the tape either as
//! whole rows/elements or implicitly through matrix-vector products, and
//! their gradients are accumulated directly into a [`Grads`] buffer.

use super::params::{Grads, ParamId, ParamStore};

pub type Var = usize;

#[derive(Debug, Clone)]
enum Op {
    Const,
    Row {
        pid: ParamId,
        row: usize,
    },
    Elem {
        pid: ParamId,
        idx: usize,
    },
    /// `W x (+ b)` with `W` a parameter matrix.
    Affine {
        w: ParamId,
        b: Option<ParamId>,
        x: Var,
    },
    Add(Var, Var),
    Sum(Vec<Var>),
    Mul(Var, Var),
    Scale(Var, f64),
    /// Vector times a length-one node.
    ScaleBy(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Concat(Vec<Var>),
    Dot(Var, Var),
    Softmax(Var),
    Index(Var, usize),
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(1024),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v].value
    }

    pub fn dim(&self, v: Var) -> usize {
        self.nodes[v].value.len()
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Const)
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.constant(vec![0.0; n])
    }

    pub fn row(&mut self, pid: ParamId, row: usize) -> Var {
        let v = self.params.get(pid).row(row).to_vec();
        self.push(v, Op::Row { pid, row })
    }

    /// Whole parameter as a single vector (for vectors and biases).
    pub fn vector(&mut self, pid: ParamId) -> Var {
        let t = self.params.get(pid);
        debug_assert_eq!(t.rows, 1);
        let v = t.data.clone();
        self.push(v, Op::Row { pid, row: 0 })
    }

    pub fn elem(&mut self, pid: ParamId, idx: usize) -> Var {
        let v = vec![self.params.get(pid).data[idx]];
        self.push(v, Op::Elem { pid, idx })
    }

    pub fn matvec(&mut self, w: ParamId, x: Var) -> Var {
        self.affine(w, None, x)
    }

    pub fn affine(&mut self, w: ParamId, b: Option<ParamId>, x: Var) -> Var {
        let t = self.params.get(w);
        let xv = &self.nodes[x].value;
        assert_eq!(t.cols, xv.len(), "matvec shape mismatch for `{}`", t.name);
        let mut out = match b {
            Some(b) => self.params.get(b).data.clone(),
            None => vec![0.0; t.rows],
        };
        for (r, o) in out.iter_mut().enumerate() {
            *o += t.row(r).iter().zip(xv).map(|(a, b)| a * b).sum::<f64>();
        }
        self.push(out, Op::Affine { w, b, x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(x, y)| x + y)
            .collect();
        self.push(v, Op::Add(a, b))
    }

    /// Sum of equally sized vectors; an empty list is not allowed.
    pub fn sum(&mut self, vars: &[Var]) -> Var {
        assert!(!vars.is_empty(), "sum of no vectors");
        if vars.len() == 1 {
            return vars[0];
        }
        let mut v = self.nodes[vars[0]].value.clone();
        for &x in &vars[1..] {
            for (a, b) in v.iter_mut().zip(&self.nodes[x].value) {
                *a += b;
            }
        }
        self.push(v, Op::Sum(vars.to_vec()))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(x, y)| x * y)
            .collect();
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.nodes[a].value.iter().map(|x| x * c).collect();
        self.push(v, Op::Scale(a, c))
    }

    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        let c = self.nodes[s].value[0];
        let v = self.nodes[a].value.iter().map(|x| x * c).collect();
        self.push(v, Op::ScaleBy(a, s))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.nodes[a].value.iter().map(|&x| sigmoid(x)).collect();
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.nodes[a].value.iter().map(|x| x.tanh()).collect();
        self.push(v, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.nodes[a].value.iter().map(|x| x.exp()).collect();
        self.push(v, Op::Exp(a))
    }

    pub fn concat(&mut self, vars: &[Var]) -> Var {
        let mut v = Vec::new();
        for &x in vars {
            v.extend_from_slice(&self.nodes[x].value);
        }
        self.push(v, Op::Concat(vars.to_vec()))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let d = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(x, y)| x * y)
            .sum();
        self.push(vec![d], Op::Dot(a, b))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let x = &self.nodes[a].value;
        let m = x.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = e.iter().sum();
        let v = e.into_iter().map(|v| v / z).collect();
        self.push(v, Op::Softmax(a))
    }

    pub fn index(&mut self, a: Var, i: usize) -> Var {
        let v = vec![self.nodes[a].value[i]];
        self.push(v, Op::Index(a, i))
    }

    /// Back-propagates `seed` (the gradient of a scalar objective with
    /// respect to `out`) and accumulates parameter gradients into `grads`.
    pub fn backward(&self, out: Var, seed: &[f64], grads: &mut Grads) {
        self.backward_many(&[(out, seed)], grads)
    }

    /// Like [`Tape::backward`] with several seeded outputs.
    pub fn backward_many(&self, seeds: &[(Var, &[f64])], grads: &mut Grads) {
        let top = seeds.iter().map(|s| s.0).max().map_or(0, |m| m + 1);
        let mut g: Vec<Option<Vec<f64>>> = vec![None; top];
        for &(v, s) in seeds {
            assert_eq!(s.len(), self.dim(v), "seed shape");
            accumulate(&mut g[v], s);
        }
        for i in (0..top).rev() {
            let Some(gi) = g[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Const => {}
                Op::Row { pid, row } => {
                    let cols = gi.len();
                    let dst = &mut grads.get_mut(*pid)[row * cols..(row + 1) * cols];
                    for (d, v) in dst.iter_mut().zip(&gi) {
                        *d += v;
                    }
                }
                Op::Elem { pid, idx } => grads.get_mut(*pid)[*idx] += gi[0],
                Op::Affine { w, b, x } => {
                    let t = self.params.get(*w);
                    let xv = &self.nodes[*x].value;
                    let gw = grads.get_mut(*w);
                    let mut gx = vec![0.0; t.cols];
                    for (r, &go) in gi.iter().enumerate() {
                        if go == 0.0 {
                            continue;
                        }
                        let wr = t.row(r);
                        let gwr = &mut gw[r * t.cols..(r + 1) * t.cols];
                        for c in 0..t.cols {
                            gwr[c] += go * xv[c];
                            gx[c] += go * wr[c];
                        }
                    }
                    if let Some(b) = b {
                        for (d, v) in grads.get_mut(*b).iter_mut().zip(&gi) {
                            *d += v;
                        }
                    }
                    accumulate(&mut g[*x], &gx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut g[*a], &gi);
                    accumulate(&mut g[*b], &gi);
                }
                Op::Sum(vs) => {
                    for &v in vs {
                        accumulate(&mut g[v], &gi);
                    }
                }
                Op::Mul(a, b) => {
                    let ga: Vec<f64> = gi
                        .iter()
                        .zip(&self.nodes[*b].value)
                        .map(|(x, y)| x * y)
                        .collect();
                    let gb: Vec<f64> = gi
                        .iter()
                        .zip(&self.nodes[*a].value)
                        .map(|(x, y)| x * y)
                        .collect();
                    accumulate(&mut g[*a], &ga);
                    accumulate(&mut g[*b], &gb);
                }
                Op::Scale(a, c) => {
                    let ga: Vec<f64> = gi.iter().map(|x| x * c).collect();
                    accumulate(&mut g[*a], &ga);
                }
                Op::ScaleBy(a, s) => {
                    let c = self.nodes[*s].value[0];
                    let ga: Vec<f64> = gi.iter().map(|x| x * c).collect();
                    let gs: f64 = gi
                        .iter()
                        .zip(&self.nodes[*a].value)
                        .map(|(x, y)| x * y)
                        .sum();
                    accumulate(&mut g[*a], &ga);
                    accumulate(&mut g[*s], &[gs]);
                }
                Op::Sigmoid(a) => {
                    let ga: Vec<f64> = gi
                        .iter()
                        .zip(&node.value)
                        .map(|(x, y)| x * y * (1.0 - y))
                        .collect();
                    accumulate(&mut g[*a], &ga);
                }
                Op::Tanh(a) => {
                    let ga: Vec<f64> = gi
                        .iter()
                        .zip(&node.value)
                        .map(|(x, y)| x * (1.0 - y * y))
                        .collect();
                    accumulate(&mut g[*a], &ga);
                }
                Op::Exp(a) => {
                    let ga: Vec<f64> = gi.iter().zip(&node.value).map(|(x, y)| x * y).collect();
                    accumulate(&mut g[*a], &ga);
                }
                Op::Concat(vs) => {
                    let mut off = 0;
                    for &v in vs {
                        let n = self.dim(v);
                        accumulate(&mut g[v], &gi[off..off + n]);
                        off += n;
                    }
                }
                Op::Dot(a, b) => {
                    let ga: Vec<f64> = self.nodes[*b].value.iter().map(|y| y * gi[0]).collect();
                    let gb: Vec<f64> = self.nodes[*a].value.iter().map(|y| y * gi[0]).collect();
                    accumulate(&mut g[*a], &ga);
                    accumulate(&mut g[*b], &gb);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let inner: f64 = gi.iter().zip(y).map(|(x, y)| x * y).sum();
                    let ga: Vec<f64> = gi.iter().zip(y).map(|(x, y)| y * (x - inner)).collect();
                    accumulate(&mut g[*a], &ga);
                }
                Op::Index(a, i) => {
                    let mut ga = vec![0.0; self.dim(*a)];
                    ga[*i] = gi[0];
                    accumulate(&mut g[*a], &ga);
                }
            }
        }
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(v) => {
            for (a, b) in v.iter_mut().zip(g) {
                *a += b;
            }
        }
        None => *slot = Some(g.to_vec()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Scalar objective exercising every op; returns (value, tape output).
    fn objective(p: &ParamStore) -> (f64, Grads) {
        let w = p.id("w").unwrap();
        let b = p.id("b").unwrap();
        let e = p.id("e").unwrap();
        let mut t = Tape::new(p);
        let x0 = t.row(e, 0);
        let x1 = t.row(e, 1);
        let s = t.elem(b, 1);
        let h = t.affine(w, Some(b), x0);
        let h = t.tanh(h);
        let k = t.scale_by(x1, s);
        let k = t.exp(k);
        let m = t.mul(h, k);
        let c = t.concat(&[m, x0]);
        let sm = t.softmax(c);
        let sg = t.sigmoid(x1);
        let sum = t.sum(&[x0, x1, sg]);
        let sc = t.scale(sum, -0.7);
        let add = t.add(sc, h);
        let d = t.dot(add, x1);
        let i = t.index(sm, 2);
        let out = t.concat(&[d, i]);
        let val = t.value(out)[0] + 3.0 * t.value(out)[1];
        let mut g = Grads::zeros_like(p);
        t.backward(out, &[1.0, 3.0], &mut g);
        (val, g)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = ParamStore::new();
        p.uniform("w", 3, 3, 0.8, &mut rng);
        p.uniform("b", 1, 3, 0.8, &mut rng);
        p.uniform("e", 2, 3, 0.8, &mut rng);
        let (_, g) = objective(&p);
        for id in p.ids().collect::<Vec<_>>() {
            for k in 0..p.get(id).len() {
                let h = 1e-6;
                let orig = p.get(id).data[k];
                p.get_mut(id).data[k] = orig + h;
                let up = objective(&p).0;
                p.get_mut(id).data[k] = orig - h;
                let dn = objective(&p).0;
                p.get_mut(id).data[k] = orig;
                let fd = (up - dn) / (2.0 * h);
                let an = g.get(id)[k];
                assert!(
                    (fd - an).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "{}[{k}]: fd {fd} vs analytic {an}",
                    p.get(id).name
                );
            }
        }
    }
}
