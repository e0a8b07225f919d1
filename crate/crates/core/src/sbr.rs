//! Gated session-graph recommender and its graph-free recurrent variant.

use sgrec_tensor::{Real, Stream, Tensor, Var};

use crate::error::{Error, Result};
use crate::graph::{Adjacency, SessionGraph};
use crate::params::{Ctx, Group, ParamId, ParameterStore};

/// Upper bound on propagation depth.
pub const MAX_LAYERS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    /// Gated graph propagation with attention readout.
    Graph,
    /// Gated recurrence over the raw sequence.
    Recurrent,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SbrConfig {
    pub dim: usize,
    pub layers: usize,
    pub adjacency: Adjacency,
    pub backend: Backend,
}

impl Default for SbrConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            layers: 1,
            adjacency: Adjacency::Weighted,
            backend: Backend::Graph,
        }
    }
}

#[derive(Debug, Clone)]
struct GnnLayer {
    w_out: ParamId,
    w_in: ParamId,
    bias: ParamId,
    w_r: ParamId,
    b_r: ParamId,
    w_z: ParamId,
    b_z: ParamId,
    w_h: ParamId,
    b_h: ParamId,
}

#[derive(Debug, Clone)]
struct Readout {
    q: ParamId,
    w1: ParamId,
    w2: ParamId,
    c: ParamId,
    w3: ParamId,
}

#[derive(Debug, Clone)]
struct Recurrence {
    wx: ParamId,
    wh: ParamId,
    bx: ParamId,
    bh: ParamId,
}

/// Parameter handles of the recommender; values live in a [`ParameterStore`].
#[derive(Debug, Clone)]
pub struct Sbr {
    pub config: SbrConfig,
    pub num_items: usize,
    pub embeddings: ParamId,
    layers: Vec<GnnLayer>,
    readout: Option<Readout>,
    recurrence: Option<Recurrence>,
}

impl Sbr {
    /// Registers parameters under `sbr.*`, uniform in `±1/√d`.
    pub fn new<T: Real>(store: &mut ParameterStore<T>, num_items: usize, config: SbrConfig, rng: &mut Stream) -> Result<Self> {
        if config.layers > MAX_LAYERS {
            return Err(Error::invalid(format!(
                "{} propagation layers exceeds the limit of {MAX_LAYERS}",
                config.layers
            )));
        }
        if num_items == 0 || config.dim == 0 {
            return Err(Error::invalid("recommender needs at least one item and a positive dimension"));
        }
        let d = config.dim;
        let bound = 1.0 / (d as f64).sqrt();
        let mut add = |name: &str, shape: &[usize]| store.add(Group::Sbr, name, Tensor::uniform(shape, bound, rng));

        let embeddings = add("item_embeddings", &[num_items, d]);
        let (mut layers, mut readout, mut recurrence) = (Vec::new(), None, None);
        match config.backend {
            Backend::Graph => {
                for l in 0..config.layers {
                    let p = |s: &str| format!("layer{l}.{s}");
                    layers.push(GnnLayer {
                        w_out: add(&p("w_out"), &[d, d]),
                        w_in: add(&p("w_in"), &[d, d]),
                        bias: add(&p("bias"), &[2 * d]),
                        w_r: add(&p("reset.weight"), &[3 * d, d]),
                        b_r: add(&p("reset.bias"), &[d]),
                        w_z: add(&p("update.weight"), &[3 * d, d]),
                        b_z: add(&p("update.bias"), &[d]),
                        w_h: add(&p("candidate.weight"), &[3 * d, d]),
                        b_h: add(&p("candidate.bias"), &[d]),
                    });
                }
                readout = Some(Readout {
                    q: add("readout.q", &[d, 1]),
                    w1: add("readout.w1", &[d, d]),
                    w2: add("readout.w2", &[d, d]),
                    c: add("readout.c", &[d]),
                    w3: add("readout.w3", &[2 * d, d]),
                });
            }
            Backend::Recurrent => {
                recurrence = Some(Recurrence {
                    wx: add("gru.wx", &[d, 3 * d]),
                    wh: add("gru.wh", &[d, 3 * d]),
                    bx: add("gru.bx", &[3 * d]),
                    bh: add("gru.bh", &[3 * d]),
                });
            }
        }
        Ok(Self {
            config,
            num_items,
            embeddings,
            layers,
            readout,
            recurrence,
        })
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    /// Embedding rows for `items`, with optional inverted dropout.
    pub fn embed<T: Real>(&self, ctx: &mut Ctx<'_, T>, items: &[usize], dropout: Option<(f64, &mut Stream)>) -> Result<Var> {
        let table = ctx.param(self.embeddings);
        let rows = ctx.tape.embedding(table, items)?;
        match dropout {
            Some((rate, rng)) if rate > 0.0 => Ok(ctx.tape.dropout(rows, rate, rng)?),
            _ => Ok(rows),
        }
    }

    /// Runs every propagation layer over node states `h` (`u × d`).
    pub fn propagate<T: Real>(&self, ctx: &mut Ctx<'_, T>, graph: &SessionGraph, mut h: Var) -> Result<Var> {
        if self.layers.is_empty() {
            return Ok(h);
        }
        let u = graph.len();
        let adj = |a: &[f64]| Tensor::from_vec([u, u], a.iter().map(|&x| T::of(x)).collect());
        let a_out = ctx.constant(adj(&graph.a_out));
        let a_in = ctx.constant(adj(&graph.a_in));
        for layer in &self.layers {
            h = self.step(ctx, layer, a_out, a_in, h)?;
        }
        Ok(h)
    }

    fn step<T: Real>(&self, ctx: &mut Ctx<'_, T>, l: &GnnLayer, a_out: Var, a_in: Var, h: Var) -> Result<Var> {
        let ho = ctx.linear(h, l.w_out, None)?;
        let hi = ctx.linear(h, l.w_in, None)?;
        let mo = ctx.tape.matmul(a_out, ho)?;
        let mi = ctx.tape.matmul(a_in, hi)?;
        let m = ctx.tape.concat(&[mo, mi], 1)?;
        let bias = ctx.param(l.bias);
        let t = ctx.tape.add(m, bias)?;

        let th = ctx.tape.concat(&[t, h], 1)?;
        let r = ctx.linear(th, l.w_r, Some(l.b_r))?;
        let r = ctx.tape.sigmoid(r)?;
        let z = ctx.linear(th, l.w_z, Some(l.b_z))?;
        let z = ctx.tape.sigmoid(z)?;
        let rh = ctx.tape.mul(r, h)?;
        let trh = ctx.tape.concat(&[t, rh], 1)?;
        let cand = ctx.linear(trh, l.w_h, Some(l.b_h))?;
        let cand = ctx.tape.tanh(cand)?;
        let delta = ctx.tape.sub(cand, h)?;
        let gated = ctx.tape.mul(z, delta)?;
        Ok(ctx.tape.add(h, gated)?)
    }

    /// Attention readout keyed on the final position; returns `1 × d`.
    pub fn readout<T: Real>(&self, ctx: &mut Ctx<'_, T>, graph: &SessionGraph, h: Var) -> Result<Var> {
        let r = self
            .readout
            .as_ref()
            .ok_or_else(|| Error::invalid("readout requires the graph backend"))?;
        let d = self.dim();
        let last = graph.last_slot();
        let x_last = ctx.tape.slice(h, 0, last, last + 1)?;
        let key = ctx.linear(x_last, r.w1, Some(r.c))?;
        let key = ctx.tape.reshape(key, [d])?;
        let hw = ctx.linear(h, r.w2, None)?;
        let pre = ctx.tape.add(hw, key)?;
        let gate = ctx.tape.sigmoid(pre)?;
        let alpha = ctx.linear(gate, r.q, None)?;
        let alpha_t = ctx.tape.transpose(alpha)?;
        let global = ctx.tape.matmul(alpha_t, h)?;
        let both = ctx.tape.concat(&[global, x_last], 1)?;
        ctx.linear(both, r.w3, None)
    }

    /// Final hidden state of a gated recurrence over `rows` (`n × d`),
    /// starting from zero.
    pub fn recur<T: Real>(&self, ctx: &mut Ctx<'_, T>, rows: Var) -> Result<Var> {
        let g = self
            .recurrence
            .as_ref()
            .ok_or_else(|| Error::invalid("recurrence requires the recurrent backend"))?;
        let d = self.dim();
        let n = ctx.tape.shape(rows)[0];
        let gx_all = ctx.linear(rows, g.wx, Some(g.bx))?;
        let mut h = ctx.constant(Tensor::zeros([1, d]));
        for t in 0..n {
            let gx = ctx.tape.slice(gx_all, 0, t, t + 1)?;
            let gh = ctx.linear(h, g.wh, Some(g.bh))?;
            let part = |ctx: &mut Ctx<'_, T>, v: Var, k: usize| ctx.tape.slice(v, 1, k * d, (k + 1) * d);
            let (xr, xz, xn) = (part(ctx, gx, 0)?, part(ctx, gx, 1)?, part(ctx, gx, 2)?);
            let (hr, hz, hn) = (part(ctx, gh, 0)?, part(ctx, gh, 1)?, part(ctx, gh, 2)?);
            let r = ctx.tape.add(xr, hr)?;
            let r = ctx.tape.sigmoid(r)?;
            let z = ctx.tape.add(xz, hz)?;
            let z = ctx.tape.sigmoid(z)?;
            let rn = ctx.tape.mul(r, hn)?;
            let cand = ctx.tape.add(xn, rn)?;
            let cand = ctx.tape.tanh(cand)?;
            let delta = ctx.tape.sub(cand, h)?;
            let gated = ctx.tape.mul(z, delta)?;
            h = ctx.tape.add(h, gated)?;
        }
        Ok(h)
    }

    /// Session embedding (`1 × d`) from whichever backend is configured.
    pub fn session_embedding<T: Real>(
        &self,
        ctx: &mut Ctx<'_, T>,
        session: &[usize],
        dropout: Option<(f64, &mut Stream)>,
    ) -> Result<Var> {
        match self.config.backend {
            Backend::Graph => {
                let graph = SessionGraph::build_with(session, self.config.adjacency)?;
                let h0 = self.embed(ctx, &graph.nodes, dropout)?;
                let h = self.propagate(ctx, &graph, h0)?;
                self.readout(ctx, &graph, h)
            }
            Backend::Recurrent => {
                if session.is_empty() {
                    return Err(Error::invalid("cannot encode an empty session"));
                }
                let rows = self.embed(ctx, session, dropout)?;
                self.recur(ctx, rows)
            }
        }
    }

    /// Inner product of `z` (`1 × d`) with every item embedding: `1 × m`.
    pub fn score<T: Real>(&self, ctx: &mut Ctx<'_, T>, z: Var) -> Result<Var> {
        let table = ctx.param(self.embeddings);
        let table_t = ctx.tape.transpose(table)?;
        Ok(ctx.tape.matmul(z, table_t)?)
    }
}
