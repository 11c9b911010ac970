use indexmap::IndexMap;

use super::graph::{Gradients, Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A trainable tensor together with its gradient slot.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Tensor,
}

/// Ordered, uniquely named collection of the parameters of one network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    entries: IndexMap<String, Parameter>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::DuplicateParameter(name));
        }
        let grad = Tensor::zeros(value.shape());
        self.entries.insert(name, Parameter { value, grad });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries.get(name).map(|p| &p.value).ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries.get_mut(name).map(|p| &mut p.value).ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor> {
        self.entries.get(name).map(|p| &p.grad).ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Parameter)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_elements(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.data_mut().fill(0.0);
        }
    }

    pub fn grad_norm_sq(&self) -> f64 {
        self.entries.values().map(|p| p.grad.norm_sq()).sum()
    }

    /// Registers every parameter as a trainable leaf of `graph`.
    pub fn bind<'g>(&self, graph: &'g Graph) -> Bound<'g> {
        self.bind_with(graph, true)
    }

    /// Registers every parameter as a constant of `graph`.
    pub fn bind_frozen<'g>(&self, graph: &'g Graph) -> Bound<'g> {
        self.bind_with(graph, false)
    }

    fn bind_with<'g>(&self, graph: &'g Graph, trainable: bool) -> Bound<'g> {
        let vars = self
            .entries
            .iter()
            .map(|(name, p)| {
                let v = if trainable { graph.parameter(p.value.clone()) } else { graph.constant(p.value.clone()) };
                (name.clone(), v)
            })
            .collect();
        Bound { vars }
    }

    /// Overwrites the gradient slots from a backward sweep. Parameters the
    /// loss does not reach get exact zeros.
    pub fn store_grads(&mut self, bound: &Bound<'_>, grads: &Gradients) -> Result<()> {
        for (name, p) in self.entries.iter_mut() {
            let var = bound.get(name)?;
            match grads.get(var) {
                Some(g) => p.grad.data_mut().copy_from_slice(g.data()),
                None => p.grad.data_mut().fill(0.0),
            }
        }
        Ok(())
    }
}

/// The graph nodes of a [`ParameterSet`] bound to one [`Graph`].
#[derive(Clone)]
pub struct Bound<'g> {
    vars: IndexMap<String, Var<'g>>,
}

impl<'g> Bound<'g> {
    pub fn get(&self, name: &str) -> Result<Var<'g>> {
        self.vars.get(name).copied().ok_or_else(|| Error::MissingParameter(name.to_string()))
    }
}

/// Builds the loss on a fresh graph, runs the backward sweep and writes the
/// gradient of every parameter of `sets` into its slot.
pub fn evaluate_with_gradients<F>(sets: &mut [&mut ParameterSet], loss_fn: F) -> Result<f64>
where
    F: for<'g> FnOnce(&'g Graph, &[Bound<'g>]) -> Result<Var<'g>>,
{
    let graph = Graph::new();
    let bound: Vec<Bound<'_>> = sets.iter().map(|s| s.bind(&graph)).collect();
    let loss = loss_fn(&graph, &bound)?;
    let value = loss.value();
    if value.len() != 1 {
        return Err(Error::NonScalarLoss(value.shape().to_vec()));
    }
    let grads = graph.backward(loss)?;
    for (set, b) in sets.iter_mut().zip(&bound) {
        set.store_grads(b, &grads)?;
    }
    Ok(value.item())
}

/// Forward-only evaluation of a scalar loss.
pub fn evaluate<F>(sets: &[&ParameterSet], loss_fn: F) -> Result<f64>
where
    F: for<'g> FnOnce(&'g Graph, &[Bound<'g>]) -> Result<Var<'g>>,
{
    let graph = Graph::new();
    let bound: Vec<Bound<'_>> = sets.iter().map(|s| s.bind_frozen(&graph)).collect();
    let loss = loss_fn(&graph, &bound)?;
    let value = loss.value();
    if value.len() != 1 {
        return Err(Error::NonScalarLoss(value.shape().to_vec()));
    }
    Ok(value.item())
}
