use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Which model a parameter table belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Group {
    Tdm,
    Snp,
    Free,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamKey {
    pub group: Group,
    pub index: usize,
}

/// Named parameter tables of one group, in registration order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    group: Group,
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new(group: Group) -> Self {
        ParamStore {
            group,
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn group(&self) -> Group {
        self.group
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamKey {
        self.names.push(name.into());
        self.values.push(value);
        ParamKey {
            group: self.group,
            index: self.values.len() - 1,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = ParamKey> + '_ {
        (0..self.values.len()).map(move |index| ParamKey {
            group: self.group,
            index,
        })
    }

    pub fn get(&self, key: ParamKey) -> &Tensor<T> {
        debug_assert_eq!(key.group, self.group);
        &self.values[key.index]
    }

    pub fn get_mut(&mut self, key: ParamKey) -> &mut Tensor<T> {
        debug_assert_eq!(key.group, self.group);
        &mut self.values[key.index]
    }

    pub fn name(&self, key: ParamKey) -> &str {
        &self.names[key.index]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamKey, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(move |(index, (n, v))| {
                (
                    ParamKey {
                        group: self.group,
                        index,
                    },
                    n.as_str(),
                    v,
                )
            })
    }

    /// Tables in registration order.
    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.values.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamKey> {
        self.names.iter().position(|n| n == name).map(|index| ParamKey {
            group: self.group,
            index,
        })
    }

    /// Replaces every table with one of identical name and shape.
    pub fn assign_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if self.names != other.names {
            return Err(Error::invalid("parameter stores have different layouts"));
        }
        for (dst, src) in self.values.iter_mut().zip(&other.values) {
            if dst.shape() != src.shape() {
                return Err(Error::Shape {
                    op: "assign",
                    lhs: dst.shape().to_vec(),
                    rhs: src.shape().to_vec(),
                });
            }
            *dst = src.clone();
        }
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }
}

/// Gradients keyed by parameter, ordered for deterministic iteration.
#[derive(Clone, Debug, Default)]
pub struct ParamGrads<T> {
    map: BTreeMap<ParamKey, Tensor<T>>,
}

impl<T: Real> ParamGrads<T> {
    pub fn new() -> Self {
        ParamGrads {
            map: BTreeMap::new(),
        }
    }

    pub fn get(&self, key: ParamKey) -> Option<&Tensor<T>> {
        self.map.get(&key)
    }

    pub fn get_mut(&mut self, key: ParamKey) -> Option<&mut Tensor<T>> {
        self.map.get_mut(&key)
    }

    pub fn insert(&mut self, key: ParamKey, grad: Tensor<T>) {
        self.map.insert(key, grad);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamKey, &Tensor<T>)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Adds `grad` into the entry for `key`.
    pub fn accumulate(&mut self, key: ParamKey, grad: &Tensor<T>) {
        match self.map.get_mut(&key) {
            Some(existing) => {
                for (a, &b) in existing.data_mut().iter_mut().zip(grad.data()) {
                    *a += b;
                }
            }
            None => {
                self.map.insert(key, grad.clone());
            }
        }
    }

    pub fn merge(&mut self, other: &ParamGrads<T>) {
        for (k, g) in other.iter() {
            self.accumulate(*k, g);
        }
    }

    pub fn scale(&mut self, factor: T) {
        for g in self.map.values_mut() {
            for x in g.data_mut() {
                *x *= factor;
            }
        }
    }

    pub fn global_norm(&self) -> T {
        let mut total = T::zero();
        for g in self.map.values() {
            for &x in g.data() {
                total += x * x;
            }
        }
        total.sqrt()
    }

    /// Drops entries of groups other than `group`.
    pub fn retain_group(&mut self, group: Group) {
        self.map.retain(|k, _| k.group == group);
    }
}
