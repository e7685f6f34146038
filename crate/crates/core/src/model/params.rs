//! Named parameter tensors with optional update masks.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Row-major tensor.  Vectors have `cols == 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    /// Entries marked `false` are held at their value and never updated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<bool>>,
    /// Excluded from weight decay.
    #[serde(default)]
    pub no_decay: bool,
}

impl Tensor {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: Vec<Tensor>,
    names: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, tensor: Tensor) -> Result<ParamId> {
        if tensor.data.len() != tensor.rows * tensor.cols {
            return Err(Error::Shape {
                expected: tensor.rows * tensor.cols,
                actual: tensor.data.len(),
            });
        }
        if self.names.contains_key(&tensor.name) {
            return Err(Error::Config(format!(
                "duplicate parameter `{}`",
                tensor.name
            )));
        }
        let id = ParamId(self.tensors.len());
        self.names.insert(tensor.name.clone(), id);
        self.tensors.push(tensor);
        Ok(id)
    }

    pub fn zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.add(Tensor {
            name: name.to_string(),
            rows,
            cols,
            data: vec![0.0; rows * cols],
            mask: None,
            no_decay: false,
        })
        .expect("fresh parameter")
    }

    /// Uniform `(-scale, scale)` initialization.
    pub fn uniform(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        scale: f64,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let id = self.zeros(name, rows, cols);
        for v in &mut self.tensors[id.0].data {
            *v = rng.gen_range(-scale..scale);
        }
        id
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|i| &self.tensors[i.0])
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Replaces values from same-named, same-shaped tensors.
    pub fn load_from(&mut self, tensors: &[Tensor]) -> Result<()> {
        if tensors.len() != self.tensors.len() {
            return Err(Error::Shape {
                expected: self.tensors.len(),
                actual: tensors.len(),
            });
        }
        for t in tensors {
            let id = self
                .id(&t.name)
                .ok_or_else(|| Error::Config(format!("unexpected parameter `{}`", t.name)))?;
            let dst = &mut self.tensors[id.0];
            if dst.rows != t.rows || dst.cols != t.cols {
                return Err(Error::Shape {
                    expected: dst.rows * dst.cols,
                    actual: t.rows * t.cols,
                });
            }
            dst.data.clone_from(&t.data);
        }
        Ok(())
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub(crate) data: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Grads {
            data: store.tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[id.0]
    }

    pub(crate) fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.data[id.0]
    }

    pub fn scale(&mut self, c: f64) {
        for g in &mut self.data {
            for v in g {
                *v *= c;
            }
        }
    }

    pub fn zero(&mut self) {
        for g in &mut self.data {
            g.fill(0.0);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|g| g.iter().all(|v| v.is_finite()))
    }
}
