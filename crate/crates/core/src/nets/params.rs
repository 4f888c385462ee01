use std::collections::HashMap;

use autograd::{Float, Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Float> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

impl<T: Float> ParamStore<T> {
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(move |i| &mut self.tensors[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }
}

/// A network: architecture description plus its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<C, T> {
    pub config: C,
    pub params: ParamStore<T>,
}

impl<C, T: Float> Network<C, T> {
    /// Places every parameter on `graph`, as trainable leaves or as constants.
    pub fn bind<'a, 'g>(&'a self, graph: &'g Graph<T>, trainable: bool) -> Bound<'a, 'g, C, T> {
        let vars = self
            .params
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    graph.param(t.clone())
                } else {
                    graph.constant(t.clone())
                }
            })
            .collect();
        let index = self
            .params
            .names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        Bound {
            config: &self.config,
            graph,
            vars,
            index,
        }
    }

    pub fn cast<U: Float>(&self) -> Network<C, U>
    where
        C: Clone,
    {
        Network {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }
}

/// A network's parameters as graph variables.
pub struct Bound<'a, 'g, C, T> {
    pub config: &'a C,
    pub graph: &'g Graph<T>,
    vars: Vec<Var<'g, T>>,
    index: HashMap<&'a str, usize>,
}

impl<'g, C, T: Float> Bound<'_, 'g, C, T> {
    pub fn get(&self, name: &str) -> Var<'g, T> {
        match self.index.get(name) {
            Some(&i) => self.vars[i],
            None => panic!("no parameter named {name}"),
        }
    }

    /// Variables in store order.
    pub fn vars(&self) -> &[Var<'g, T>] {
        &self.vars
    }
}

/// Serializable snapshot of a store, used in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) struct StoreLayout {
    pub names: Vec<String>,
    pub shapes: Vec<Vec<usize>>,
}

impl<T: Float> ParamStore<T> {
    pub(crate) fn layout(&self) -> StoreLayout {
        StoreLayout {
            names: self.names.clone(),
            shapes: self.tensors.iter().map(|t| t.shape().to_vec()).collect(),
        }
    }
}
