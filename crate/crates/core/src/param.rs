//! Named parameters and the per-forward binding of parameters onto a tape.

use std::collections::HashMap;
use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Owns every parameter of one model instance. Names are unique.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            value,
            trainable: false,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    pub fn freeze_all(&mut self) {
        for p in &mut self.params {
            p.trainable = false;
        }
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, p)| p.trainable)
            .map(|(id, _)| id)
            .collect()
    }

    /// Overwrites values (and flags) from `other`, matching by name.
    /// Every parameter of `self` must be present in `other` with the same shape.
    pub fn load_from(&mut self, other: &[Parameter]) -> Result<()> {
        let incoming: HashMap<&str, &Parameter> =
            other.iter().map(|p| (p.name.as_str(), p)).collect();
        for p in &mut self.params {
            let src = incoming
                .get(p.name.as_str())
                .ok_or_else(|| Error::MissingParam(p.name.clone()))?;
            if src.value.shape() != p.value.shape() {
                return Err(Error::shape(
                    "load",
                    format!(
                        "`{}`: {:?} vs {:?}",
                        p.name,
                        src.value.shape(),
                        p.value.shape()
                    ),
                ));
            }
            p.value = src.value.clone();
            p.trainable = src.trainable;
        }
        Ok(())
    }

    pub fn to_vec(&self) -> Vec<Parameter> {
        self.params.clone()
    }
}

/// Gradient of each bound parameter, flattened.
pub type ParamGrads = Vec<(ParamId, Vec<f64>)>;

/// Which parameters receive gradients when bound onto a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradPolicy {
    /// Only parameters flagged trainable.
    Trainable,
    /// Every parameter (gradient checks).
    All,
    /// No parameter (inference).
    None,
}

/// One forward pass: a fresh tape plus lazy parameter bindings.
pub struct Graph<'a> {
    tape: Tape,
    store: &'a ParamStore,
    bound: Vec<Option<Var>>,
    policy: GradPolicy,
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParamStore, policy: GradPolicy) -> Self {
        Self {
            tape: Tape::new(),
            store,
            bound: vec![None; store.len()],
            policy,
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    /// Binds a parameter as a tape leaf (once per graph).
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let p = self.store.get(id);
        let rg = match self.policy {
            GradPolicy::Trainable => p.trainable,
            GradPolicy::All => true,
            GradPolicy::None => false,
        };
        let v = self.tape.leaf(p.value.clone(), rg);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn bound_var(&self, id: ParamId) -> Option<Var> {
        self.bound[id.0]
    }

    /// Gradients of every grad-enabled bound parameter after `backward`.
    /// Parameters that were never bound get no entry.
    pub fn param_grads(&self) -> ParamGrads {
        self.bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let v = (*v)?;
                self.tape.grad(v).map(|g| (ParamId(i), g.to_vec()))
            })
            .collect()
    }

    pub fn into_tape(self) -> Tape {
        self.tape
    }
}

impl Deref for Graph<'_> {
    type Target = Tape;
    fn deref(&self) -> &Tape {
        &self.tape
    }
}

impl DerefMut for Graph<'_> {
    fn deref_mut(&mut self) -> &mut Tape {
        &mut self.tape
    }
}
