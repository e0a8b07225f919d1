//! Small pre-norm causal transformer with low-rank adapters on the query and
//! value projections, and the item-vocabulary head.

use sgrec_tensor::{Real, Stream, Tensor, Var};

use crate::error::{Error, Result};
use crate::params::{Ctx, Group, ParamId, ParameterStore};

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LlmConfig {
    pub dim: usize,
    pub blocks: usize,
    pub heads: usize,
    pub max_len: usize,
    pub lora_rank: usize,
    pub lora_alpha: f64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            blocks: 2,
            heads: 4,
            max_len: 256,
            lora_rank: 4,
            lora_alpha: 8.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Adapter {
    a: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct Block {
    ln1: (ParamId, ParamId),
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    ln2: (ParamId, ParamId),
    ff1: (ParamId, ParamId),
    ff2: (ParamId, ParamId),
    lora_q: Adapter,
    lora_v: Adapter,
}

#[derive(Debug, Clone)]
pub struct Llm {
    pub config: LlmConfig,
    pub word_embeddings: ParamId,
    positions: ParamId,
    blocks: Vec<Block>,
    ln_f: (ParamId, ParamId),
}

impl Llm {
    /// Registers `llm.*` (normal, std 0.02; norms at identity) and `lora.*`
    /// (A normal with std 0.02, B zero).
    pub fn new<T: Real>(store: &mut ParameterStore<T>, vocab: usize, config: LlmConfig, rng: &mut Stream) -> Result<Self> {
        let d = config.dim;
        if config.heads == 0 || d % config.heads != 0 {
            return Err(Error::invalid(format!("{} heads do not divide dimension {d}", config.heads)));
        }
        if config.blocks == 0 || config.lora_rank == 0 || config.max_len == 0 {
            return Err(Error::invalid("blocks, adapter rank and max length must be positive"));
        }
        let r = config.lora_rank;
        let mut normal = |store: &mut ParameterStore<T>, g: Group, name: &str, shape: [usize; 2]| {
            store.add(g, name, Tensor::normal(shape, INIT_STD, rng))
        };
        let word_embeddings = normal(store, Group::Llm, "word_embeddings", [vocab, d]);
        let positions = normal(store, Group::Llm, "positions", [config.max_len, d]);
        let norm = |store: &mut ParameterStore<T>, name: &str| {
            (
                store.add(Group::Llm, &format!("{name}.gamma"), Tensor::full([d], T::one())),
                store.add(Group::Llm, &format!("{name}.beta"), Tensor::zeros([d])),
            )
        };
        let mut blocks = Vec::new();
        for i in 0..config.blocks {
            let p = |s: &str| format!("block{i}.{s}");
            let ln1 = norm(store, &p("ln1"));
            let wq = normal(store, Group::Llm, &p("q"), [d, d]);
            let wk = normal(store, Group::Llm, &p("k"), [d, d]);
            let wv = normal(store, Group::Llm, &p("v"), [d, d]);
            let wo = normal(store, Group::Llm, &p("o"), [d, d]);
            let ln2 = norm(store, &p("ln2"));
            let ff1 = (
                normal(store, Group::Llm, &p("ff1.weight"), [d, 4 * d]),
                store.add(Group::Llm, &p("ff1.bias"), Tensor::zeros([4 * d])),
            );
            let ff2 = (
                normal(store, Group::Llm, &p("ff2.weight"), [4 * d, d]),
                store.add(Group::Llm, &p("ff2.bias"), Tensor::zeros([d])),
            );
            let mut adapter = |store: &mut ParameterStore<T>, which: &str| Adapter {
                a: normal(store, Group::Lora, &p(&format!("{which}.a")), [d, r]),
                b: store.add(Group::Lora, &p(&format!("{which}.b")), Tensor::zeros([r, d])),
            };
            let lora_q = adapter(store, "q");
            let lora_v = adapter(store, "v");
            blocks.push(Block {
                ln1,
                wq,
                wk,
                wv,
                wo,
                ln2,
                ff1,
                ff2,
                lora_q,
                lora_v,
            });
        }
        let ln_f = norm(store, "final");
        Ok(Self {
            config,
            word_embeddings,
            positions,
            blocks,
            ln_f,
        })
    }

    /// Hidden state at the final position (`1 × d`).
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, e: Var, adapters: bool) -> Result<Var> {
        self.run(ctx, e, adapters, false)
    }

    /// Final-norm hidden states of every position (`n × d`).
    pub fn hidden_states<T: Real>(&self, ctx: &mut Ctx<'_, T>, e: Var, adapters: bool) -> Result<Var> {
        self.run(ctx, e, adapters, true)
    }

    fn run<T: Real>(&self, ctx: &mut Ctx<'_, T>, e: Var, adapters: bool, all: bool) -> Result<Var> {
        let shape = ctx.tape.shape(e).to_vec();
        let d = self.config.dim;
        if shape.len() != 2 || shape[1] != d {
            return Err(Error::invalid(format!("expected n × {d} input, got {shape:?}")));
        }
        let n = shape[0];
        if n > self.config.max_len {
            return Err(Error::invalid(format!(
                "sequence of length {n} exceeds the maximum of {}",
                self.config.max_len
            )));
        }
        let pos = ctx.param(self.positions);
        let pos = ctx.tape.slice(pos, 0, 0, n)?;
        let mut x = ctx.tape.add(e, pos)?;
        for (i, block) in self.blocks.iter().enumerate() {
            // Only the last position feeds the output, so the final block
            // computes a single query row.
            let last_only = !all && i + 1 == self.blocks.len();
            x = self.block(ctx, block, x, adapters, last_only)?;
        }
        let (g, b) = (ctx.param(self.ln_f.0), ctx.param(self.ln_f.1));
        let h = ctx.tape.layer_norm(x, g, b, LN_EPS)?;
        if all || ctx.tape.shape(h)[0] == 1 {
            Ok(h)
        } else {
            let rows = ctx.tape.shape(h)[0];
            Ok(ctx.tape.slice(h, 0, rows - 1, rows)?)
        }
    }

    fn project<T: Real>(&self, ctx: &mut Ctx<'_, T>, h: Var, w: ParamId, adapter: Option<Adapter>) -> Result<Var> {
        let base = ctx.linear(h, w, None)?;
        let Some(ad) = adapter else { return Ok(base) };
        let low = ctx.linear(h, ad.a, None)?;
        let delta = ctx.linear(low, ad.b, None)?;
        let scaling = self.config.lora_alpha / self.config.lora_rank as f64;
        let delta = ctx.tape.scale(delta, scaling)?;
        Ok(ctx.tape.add(base, delta)?)
    }

    fn block<T: Real>(&self, ctx: &mut Ctx<'_, T>, b: &Block, x: Var, adapters: bool, last_only: bool) -> Result<Var> {
        let n = ctx.tape.shape(x)[0];
        let (heads, d) = (self.config.heads, self.config.dim);
        let dh = d / heads;
        let (g1, b1) = (ctx.param(b.ln1.0), ctx.param(b.ln1.1));
        let h = ctx.tape.layer_norm(x, g1, b1, LN_EPS)?;
        let (lq, lv) = if adapters {
            (Some(b.lora_q), Some(b.lora_v))
        } else {
            (None, None)
        };
        let (hq, residual) = if last_only && n > 1 {
            (ctx.tape.slice(h, 0, n - 1, n)?, ctx.tape.slice(x, 0, n - 1, n)?)
        } else {
            (h, x)
        };
        let q = self.project(ctx, hq, b.wq, lq)?;
        let k = self.project(ctx, h, b.wk, None)?;
        let v = self.project(ctx, h, b.wv, lv)?;
        let kt = ctx.tape.transpose(k)?;
        let scale = 1.0 / (dh as f64).sqrt();

        let mut outs = Vec::with_capacity(heads);
        for hd in 0..heads {
            let (lo, hi) = (hd * dh, (hd + 1) * dh);
            let qh = ctx.tape.slice(q, 1, lo, hi)?;
            let kth = ctx.tape.slice(kt, 0, lo, hi)?;
            let vh = ctx.tape.slice(v, 1, lo, hi)?;
            let scores = ctx.tape.matmul(qh, kth)?;
            let scores = ctx.tape.scale(scores, scale)?;
            let probs = if ctx.tape.shape(scores)[0] == n {
                ctx.tape.causal_softmax(scores)?
            } else {
                ctx.tape.softmax(scores)?
            };
            outs.push(ctx.tape.matmul(probs, vh)?);
        }
        let att = ctx.tape.concat(&outs, 1)?;
        let att = ctx.linear(att, b.wo, None)?;
        let x = ctx.tape.add(residual, att)?;

        let (g2, b2) = (ctx.param(b.ln2.0), ctx.param(b.ln2.1));
        let h2 = ctx.tape.layer_norm(x, g2, b2, LN_EPS)?;
        let f = ctx.linear(h2, b.ff1.0, Some(b.ff1.1))?;
        let f = ctx.tape.gelu(f)?;
        let f = ctx.linear(f, b.ff2.0, Some(b.ff2.1))?;
        Ok(ctx.tape.add(x, f)?)
    }
}

/// Two-layer perceptron from the model dimension to item logits.
#[derive(Debug, Clone)]
pub struct OutputHead {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl OutputHead {
    pub fn new<T: Real>(store: &mut ParameterStore<T>, dim: usize, num_items: usize, rng: &mut Stream) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        Self {
            w1: store.add(Group::Out, "w1", Tensor::uniform([dim, dim], bound, rng)),
            b1: store.add(Group::Out, "b1", Tensor::uniform([dim], bound, rng)),
            w2: store.add(Group::Out, "w2", Tensor::uniform([dim, num_items], bound, rng)),
            b2: store.add(Group::Out, "b2", Tensor::uniform([num_items], bound, rng)),
        }
    }

    /// Item logits (`1 × m`) from `o` (`1 × d`).
    pub fn logits<T: Real>(&self, ctx: &mut Ctx<'_, T>, o: Var) -> Result<Var> {
        let h = ctx.linear(o, self.w1, Some(self.b1))?;
        let h = ctx.tape.gelu(h)?;
        ctx.linear(h, self.w2, Some(self.b2))
    }

    pub fn params(&self) -> [ParamId; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }
}
