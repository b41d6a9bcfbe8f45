use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::numerics::{Gradients, NodeId, Tape, Tensor};

/// Ordered collection of named tensors. Order is fixed by the model layout
/// and is the order used by the optimizer, checkpoints and digests.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, idx: usize) -> &Tensor {
        &self.tensors[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.tensors[idx]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Appends every tensor of `other`, prefixing names.
    pub fn extend_prefixed(&mut self, prefix: &str, other: ParamStore) {
        for (name, t) in other.names.into_iter().zip(other.tensors) {
            self.push(format!("{prefix}{name}"), t);
        }
    }

    /// Borrows every tensor onto `tape` as a leaf, in store order.
    pub fn register<'a>(&'a self, tape: &mut Tape<'a>) -> Vec<NodeId> {
        self.tensors.iter().map(|t| tape.param(t)).collect()
    }

    /// Gradients for `leaves` in store order; unreached parameters get zeros.
    pub fn collect_grads(&self, grads: &mut Gradients, leaves: &[NodeId]) -> Vec<Tensor> {
        self.tensors
            .iter()
            .zip(leaves)
            .map(|(t, &id)| grads.take(id).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect()
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.iter() {
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn bitwise_eq(&self, other: &ParamStore) -> bool {
        self.names == other.names
            && self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| {
                a.shape() == b.shape()
                    && a.data()
                        .iter()
                        .zip(b.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// Seeded scaled-normal initializer shared by all model builders.
pub(crate) struct Initializer {
    rng: ChaCha8Rng,
    normal: Normal<f64>,
}

pub(crate) const INIT_STD: f64 = 0.02;

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal: Normal::new(0.0, INIT_STD).unwrap(),
        }
    }

    pub fn normal(&mut self, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.normal.sample(&mut self.rng)).collect();
        Tensor::new(shape.to_vec(), data).expect("initializer shape")
    }
}
