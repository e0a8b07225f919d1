//! Named parameter registry partitioned into the five trainable groups, and
//! the forward context that binds parameters onto a tape.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use sgrec_tensor::{AdamW, Checkpoint, Real, Tape, Tensor, Var};

use crate::error::{Error, Result};

/// Parameter groups scheduled by the two-stage tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    /// Session recommender backbone.
    Sbr,
    /// Frozen language model.
    Llm,
    /// Low-rank adapters.
    Lora,
    /// ID-to-word-space projection.
    In,
    /// Item-vocabulary output head.
    Out,
}

impl Group {
    pub const ALL: [Group; 5] = [Group::Sbr, Group::Llm, Group::Lora, Group::In, Group::Out];

    /// Checkpoint namespace.
    pub fn prefix(self) -> &'static str {
        match self {
            Group::Sbr => "sbr",
            Group::Llm => "llm",
            Group::Lora => "lora",
            Group::In => "in",
            Group::Out => "head",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Group::Sbr => "SBR",
            Group::Llm => "LLM",
            Group::Lora => "LORA",
            Group::In => "IN",
            Group::Out => "OUT",
        };
        f.write_str(name)
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Group::ALL
            .into_iter()
            .find(|g| g.to_string().eq_ignore_ascii_case(s) || g.prefix() == s)
            .ok_or_else(|| Error::invalid(format!("unknown parameter group `{s}`")))
    }
}

pub type GroupSet = BTreeSet<Group>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone)]
struct Entry<T> {
    name: String,
    group: Group,
    tensor: Tensor<T>,
}

/// Every trainable tensor in the system, each owned by exactly one group.
#[derive(Debug, Clone)]
pub struct ParameterStore<T> {
    entries: Vec<Entry<T>>,
    index: HashMap<String, ParamId>,
}

impl<T: Real> Default for ParameterStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParameterStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Registers `tensor` as `<group prefix>.<local>`.
    ///
    /// Panics on duplicate names; names are fixed by model construction.
    pub fn add(&mut self, group: Group, local: &str, tensor: Tensor<T>) -> ParamId {
        let name = format!("{}.{local}", group.prefix());
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.entries.len());
        self.index.insert(name.clone(), id);
        self.entries.push(Entry {
            name,
            group,
            tensor,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].tensor
    }

    pub fn set(&mut self, id: ParamId, tensor: Tensor<T>) -> Result<()> {
        let e = &mut self.entries[id.0];
        if e.tensor.shape() != tensor.shape() {
            return Err(Error::invalid(format!(
                "{}: expected shape {:?}, got {:?}",
                e.name,
                e.tensor.shape(),
                tensor.shape()
            )));
        }
        e.tensor = tensor;
        Ok(())
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn group(&self, id: ParamId) -> Group {
        self.entries[id.0].group
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn ids_in(&self, group: Group) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(move |&id| self.group(id) == group)
    }

    /// Mutable views of every parameter whose group is in `groups`.
    pub fn params_in_mut(&mut self, groups: &GroupSet) -> Vec<(ParamId, &mut Tensor<T>)> {
        self.entries
            .iter_mut()
            .enumerate()
            .filter(|(_, e)| groups.contains(&e.group))
            .map(|(i, e)| (ParamId(i), &mut e.tensor))
            .collect()
    }

    pub fn count_in(&self, group: Group) -> usize {
        self.ids_in(group).map(|id| self.get(id).numel()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParameterStore<U> {
        ParameterStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    name: e.name.clone(),
                    group: e.group,
                    tensor: e.tensor.cast(),
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Writes every parameter (or only those in `groups`) under its name.
    pub fn write_to(&self, ck: &mut Checkpoint, groups: Option<&GroupSet>) {
        for e in &self.entries {
            if groups.map_or(true, |g| g.contains(&e.group)) {
                ck.insert(e.name.clone(), &e.tensor);
            }
        }
    }

    /// Overwrites parameters present in `ck`. Returns how many were loaded;
    /// names missing from the checkpoint keep their current values.
    pub fn read_from(&mut self, ck: &Checkpoint, groups: Option<&GroupSet>) -> Result<usize> {
        let mut loaded = 0;
        for id in 0..self.entries.len() {
            let e = &self.entries[id];
            if !groups.map_or(true, |g| g.contains(&e.group)) || !ck.contains(&e.name) {
                continue;
            }
            let t = ck.get::<T>(&e.name)?;
            self.set(ParamId(id), t)?;
            loaded += 1;
        }
        Ok(loaded)
    }
}

/// A tape plus lazily created parameter leaves. Parameters in trainable
/// groups become gradient-requiring leaves; the rest enter as constants, so
/// frozen groups never get gradient buffers.
pub struct Ctx<'s, T: Real> {
    pub tape: Tape<T>,
    store: &'s ParameterStore<T>,
    trainable: &'s GroupSet,
    bound: Vec<Option<Var>>,
    pub training: bool,
}

impl<'s, T: Real> Ctx<'s, T> {
    pub fn new(store: &'s ParameterStore<T>, trainable: &'s GroupSet) -> Self {
        Self {
            tape: Tape::new(),
            store,
            trainable,
            bound: vec![None; store.len()],
            training: false,
        }
    }

    pub fn training(mut self, on: bool) -> Self {
        self.training = on;
        self
    }

    pub fn store(&self) -> &ParameterStore<T> {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let trainable = self.trainable.contains(&self.store.group(id));
        let v = self.tape.leaf(self.store.get(id).clone(), trainable);
        self.bound[id.0] = Some(v);
        v
    }

    /// `x · w (+ b)` for a row-major activation matrix `x`.
    pub fn linear(&mut self, x: Var, w: ParamId, b: Option<ParamId>) -> Result<Var> {
        let wv = self.param(w);
        let y = self.tape.matmul(x, wv)?;
        match b {
            Some(b) => {
                let bv = self.param(b);
                Ok(self.tape.add(y, bv)?)
            }
            None => Ok(y),
        }
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.tape.constant(t)
    }

    /// Back-propagates `loss` and returns gradients of every bound
    /// trainable parameter.
    pub fn gradients(&self, loss: Var) -> Result<BTreeMap<ParamId, Tensor<T>>> {
        let mut grads = self.tape.backward(loss)?;
        let mut out = BTreeMap::new();
        for (i, v) in self.bound.iter().enumerate() {
            if let Some(v) = v {
                if let Some(g) = grads.take(*v) {
                    out.insert(ParamId(i), g);
                }
            }
        }
        Ok(out)
    }
}

/// Instances processed sequentially inside one reduction chunk. Fixed so
/// that the summation order, and therefore every bit of the result, is
/// independent of the worker count.
pub const REDUCTION_CHUNK: usize = 8;

/// Sums losses and gradients of `loss_fn` over `items`, fanning chunks out
/// over the rayon pool and folding them back in input order.
pub fn batch_gradients<T, I, F>(
    store: &ParameterStore<T>,
    trainable: &GroupSet,
    items: &[I],
    loss_fn: F,
) -> Result<(f64, BTreeMap<ParamId, Tensor<T>>)>
where
    T: Real,
    I: Sync,
    F: Fn(&mut Ctx<'_, T>, &I, usize) -> Result<Var> + Sync,
{
    let partials: Vec<Result<(f64, BTreeMap<ParamId, Tensor<T>>)>> = items
        .par_chunks(REDUCTION_CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut loss_sum = 0.0;
            let mut acc: BTreeMap<ParamId, Tensor<T>> = BTreeMap::new();
            for (j, item) in chunk.iter().enumerate() {
                let mut ctx = Ctx::new(store, trainable).training(true);
                let loss = loss_fn(&mut ctx, item, c * REDUCTION_CHUNK + j)?;
                loss_sum += ctx.tape.value(loss).item().as_f64();
                for (id, g) in ctx.gradients(loss)? {
                    add_gradient(&mut acc, id, g);
                }
            }
            Ok((loss_sum, acc))
        })
        .collect();

    let mut total = 0.0;
    let mut grads = BTreeMap::new();
    for part in partials {
        let (l, g) = part?;
        total += l;
        for (id, t) in g {
            add_gradient(&mut grads, id, t);
        }
    }
    Ok((total, grads))
}

/// Averages summed gradients over `count` instances, gives trainable
/// parameters the loss never reached a zero gradient, and applies one update.
pub fn optimizer_step<T: Real>(
    store: &mut ParameterStore<T>,
    opt: &mut AdamW<ParamId, T>,
    trainable: &GroupSet,
    mut grads: BTreeMap<ParamId, Tensor<T>>,
    count: usize,
    lr: f64,
) -> Result<()> {
    let inv = T::of(1.0 / count.max(1) as f64);
    for g in grads.values_mut() {
        g.data_mut().iter_mut().for_each(|x| *x *= inv);
    }
    for id in store.ids().collect::<Vec<_>>() {
        if trainable.contains(&store.group(id)) {
            grads
                .entry(id)
                .or_insert_with(|| Tensor::zeros(store.get(id).shape()));
        }
    }
    opt.step(lr, store.params_in_mut(trainable), &grads)?;
    Ok(())
}

fn add_gradient<T: Real>(acc: &mut BTreeMap<ParamId, Tensor<T>>, id: ParamId, g: Tensor<T>) {
    match acc.get_mut(&id) {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        None => {
            acc.insert(id, g);
        }
    }
}
