//! The assembled recommender: SBR backbone, hybrid encoder, adapted language
//! model and item head over one parameter store.

use sgrec_tensor::{rng, Checkpoint, Real, Var};

use crate::encoder::{HybridEncoder, Tokenizer};
use crate::error::{Error, Result};
use crate::llm::{Llm, LlmConfig, OutputHead};
use crate::nn::cross_entropy;
use crate::params::{Ctx, ParameterStore};
use crate::prompt::{render_behavior, PromptInstance};
use crate::sbr::{Backend, Sbr, SbrConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub sbr: SbrConfig,
    pub llm: LlmConfig,
    /// Behavior prompts omit the graph placeholder.
    pub graph_free: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            sbr: SbrConfig::default(),
            llm: LlmConfig::default(),
            graph_free: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Llmgr {
    pub config: ModelConfig,
    pub sbr: Sbr,
    pub encoder: HybridEncoder,
    pub llm: Llm,
    pub head: OutputHead,
    pub tokenizer: Tokenizer,
}

impl Llmgr {
    /// Builds every component with deterministic initialization from
    /// `seed`. Registration order (and thus parameter ids) is fixed.
    pub fn new<T: Real>(
        store: &mut ParameterStore<T>,
        num_items: usize,
        tokenizer: Tokenizer,
        config: ModelConfig,
        seed: u64,
    ) -> Result<Self> {
        if config.graph_free != (config.sbr.backend == Backend::Recurrent) {
            return Err(Error::invalid(
                "graph-free prompts pair with the recurrent backend and graph prompts with the graph backend",
            ));
        }
        let sbr = Sbr::new(store, num_items, config.sbr, &mut rng::stream(seed, 1))?;
        let llm = Llm::new(store, tokenizer.len(), config.llm, &mut rng::stream(seed, 2))?;
        let encoder = HybridEncoder::new(store, llm.word_embeddings, config.sbr.dim, &mut rng::stream(seed, 3))?;
        let head = OutputHead::new(store, config.llm.dim, num_items, &mut rng::stream(seed, 4));
        Ok(Self {
            config,
            sbr,
            encoder,
            llm,
            head,
            tokenizer,
        })
    }

    pub fn num_items(&self) -> usize {
        self.sbr.num_items
    }

    /// Item logits (`1 × m`) for a prompt.
    pub fn logits<T: Real>(&self, ctx: &mut Ctx<'_, T>, prompt: &PromptInstance) -> Result<Var> {
        let e = self.encoder.encode(ctx, prompt, &self.tokenizer, &self.sbr)?;
        let o = self.llm.forward(ctx, e.rows, true)?;
        self.head.logits(ctx, o)
    }

    pub fn loss<T: Real>(&self, ctx: &mut Ctx<'_, T>, prompt: &PromptInstance) -> Result<Var> {
        let logits = self.logits(ctx, prompt)?;
        cross_entropy(&mut ctx.tape, logits, &prompt.target)
    }

    /// Next-item logits for a session prefix via the behavior prompt.
    pub fn recommend<T: Real>(&self, ctx: &mut Ctx<'_, T>, prefix: &[usize]) -> Result<Vec<f64>> {
        let prompt = render_behavior(prefix, 0, self.config.graph_free)?;
        let l = self.logits(ctx, &prompt)?;
        Ok(ctx.tape.value(l).to_f64_vec())
    }

    /// Stores the tokenizer vocabulary next to the parameters.
    pub fn write_tokenizer(&self, ck: &mut Checkpoint) {
        ck.insert_text("tokenizer", self.tokenizer.to_lines());
    }

    pub fn read_tokenizer(ck: &Checkpoint) -> Result<Tokenizer> {
        let lines = ck
            .text("tokenizer")
            .ok_or_else(|| Error::invalid("checkpoint has no tokenizer vocabulary"))?;
        Tokenizer::from_lines(lines)
    }
}
