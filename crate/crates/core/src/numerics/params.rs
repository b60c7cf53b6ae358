use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

/// How a parameter is treated by initialization and regularization, derived
/// from its name: `*.bias` are biases, `embed.*` are embedding tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    Weight,
    Bias,
    Embedding,
}

impl ParamRole {
    pub fn of(name: &str) -> Self {
        if name.ends_with(".bias") {
            ParamRole::Bias
        } else if name.starts_with("embed.") {
            ParamRole::Embedding
        } else {
            ParamRole::Weight
        }
    }
}

/// Named parameter tensors, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor) {
        self.tensors.insert(name.to_string(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Replaces every value with zero.
    pub fn zeroed(&self) -> ParamStore {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }
}

/// Fan-in/fan-out of a weight: the last axis is the output, the rest the input.
fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (*n, 1),
        [i, o] => (*i, *o),
        [k, i, o] => (k * i, k * o),
        _ => (shape.iter().product(), 1),
    }
}

/// Seeded initialization: Glorot-uniform weights, zero biases, embeddings
/// uniform on ±0.05. Parameters are visited in name order, so the result
/// depends only on the shapes and the seed.
pub fn initialize(shapes: &BTreeMap<String, Vec<usize>>, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (name, shape) in shapes {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = match ParamRole::of(name) {
            ParamRole::Bias => vec![0.0; n],
            ParamRole::Embedding => (0..n).map(|_| rng.random_range(-0.05..0.05)).collect(),
            ParamRole::Weight => {
                let (fan_in, fan_out) = fans(shape);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-limit..limit)).collect()
            }
        };
        store.insert(name, Tensor::new(shape.clone(), data).expect("declared shape"));
    }
    store
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roles_follow_names() {
        assert_eq!(ParamRole::of("intraop.conv0.bias"), ParamRole::Bias);
        assert_eq!(ParamRole::of("embed.zip_code"), ParamRole::Embedding);
        assert_eq!(ParamRole::of("intraop.conv0.kernel"), ParamRole::Weight);
    }

    #[test]
    fn initialization_respects_bounds_and_seed() {
        let shapes = BTreeMap::from([
            ("a.weight".to_string(), vec![30, 20]),
            ("a.bias".to_string(), vec![20]),
            ("embed.x".to_string(), vec![50, 10]),
        ]);
        let p = initialize(&shapes, 11);
        let limit = (6.0f64 / 50.0).sqrt();
        assert!(p.get("a.weight").unwrap().data().iter().all(|v| v.abs() <= limit));
        assert!(p.get("a.bias").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(p.get("embed.x").unwrap().data().iter().all(|v| v.abs() <= 0.05));
        assert_eq!(p, initialize(&shapes, 11));
        assert_ne!(p, initialize(&shapes, 12));
    }
}
