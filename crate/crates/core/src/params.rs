//! Named parameter storage shared by every module of the model.

use std::collections::{BTreeMap, HashMap};

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: ArrayD<T>,
    /// Buffers such as running statistics are stored alongside parameters
    /// but never receive gradients.
    pub trainable: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<T>) -> ParamId {
        self.insert(name.into(), value, true)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: ArrayD<T>) -> ParamId {
        self.insert(name.into(), value, false)
    }

    fn insert(&mut self, name: String, value: ArrayD<T>, trainable: bool) -> ParamId {
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id);
        self.entries.push(ParamEntry {
            name,
            value,
            trainable,
        });
        id
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn get(&self, id: ParamId) -> &ArrayD<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ArrayD<T> {
        &mut self.entries[id.0].value
    }

    pub fn set(&mut self, id: ParamId, value: ArrayD<T>) {
        assert_eq!(
            value.shape(),
            self.entries[id.0].value.shape(),
            "shape change for {}",
            self.entries[id.0].name
        );
        self.entries[id.0].value = value;
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<T>)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.len())
            .sum()
    }

    /// Names that start with `prefix`, in registration order.
    pub fn names_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.entries
            .iter()
            .map(|e| e.name.as_str())
            .filter(move |n| n.starts_with(prefix))
    }

    /// Convert every entry to another scalar type.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: e.value.mapv(|v| U::from_f64_lossy(v.to_f64_lossy())),
                    trainable: e.trainable,
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

/// Gradients keyed by parameter.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    map: BTreeMap<ParamId, ArrayD<T>>,
}

impl<T> Default for Gradients<T> {
    fn default() -> Self {
        Gradients {
            map: BTreeMap::new(),
        }
    }
}

impl<T: Scalar> Gradients<T> {
    pub fn insert(&mut self, id: ParamId, g: ArrayD<T>) {
        match self.map.get_mut(&id) {
            Some(acc) => *acc += &g,
            None => {
                self.map.insert(id, g);
            }
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&ArrayD<T>> {
        self.map.get(&id)
    }

    pub fn merge(&mut self, other: Gradients<T>) {
        for (id, g) in other.map {
            self.insert(id, g);
        }
    }

    pub fn scale(&mut self, c: T) {
        for g in self.map.values_mut() {
            g.mapv_inplace(|v| v * c);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamId, &ArrayD<T>)> {
        self.map.iter()
    }

    pub fn global_norm(&self) -> T {
        self.map
            .values()
            .map(|g| g.iter().fold(T::zero(), |a, &v| a + v * v))
            .fold(T::zero(), |a, b| a + b)
            .sqrt()
    }
}

/// Kaiming-normal initialisation for a layer with `fan_in` inputs feeding a ReLU.
pub fn kaiming_normal<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> ArrayD<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).unwrap();
    ArrayD::from_shape_simple_fn(IxDyn(shape), || T::from_f64_lossy(dist.sample(rng)))
}

/// Glorot-uniform initialisation.
pub fn xavier_uniform<T: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> ArrayD<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).unwrap();
    ArrayD::from_shape_simple_fn(IxDyn(shape), || T::from_f64_lossy(dist.sample(rng)))
}

pub fn zeros<T: Scalar>(shape: &[usize]) -> ArrayD<T> {
    ArrayD::zeros(IxDyn(shape))
}

pub fn filled<T: Scalar>(shape: &[usize], v: f64) -> ArrayD<T> {
    ArrayD::from_elem(IxDyn(shape), T::from_f64_lossy(v))
}
