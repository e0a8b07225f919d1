//! Word-level tokenizer and the hybrid text/ID input encoder.

use std::collections::HashMap;

use sgrec_tensor::{Real, Stream, Tensor, Var};

use crate::error::{Error, Result};
use crate::params::{Ctx, Group, ParamId, ParameterStore};
use crate::prompt::{
    PromptInstance, Segment, ALIGN_PREFIX, ALIGN_SUFFIX, BEHAVIOR_PREFIX, PROMPT_SUFFIX, STRUCTURE_PREFIX,
};
use crate::sbr::Sbr;

pub const UNK: usize = 0;
pub const BOS: usize = 1;
const RESERVED: [&str; 2] = ["<unk>", "<bos>"];

/// Lowercased words; every punctuation character is its own token.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            word.extend(ch.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Tokenizer {
    /// Vocabulary in first-appearance order over `texts`, after the reserved
    /// tokens.
    pub fn fit<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut tok = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for r in RESERVED {
            tok.push(r.to_string());
        }
        for text in texts {
            for w in split_words(text) {
                if !tok.index.contains_key(&w) {
                    tok.push(w);
                }
            }
        }
        tok
    }

    /// Template wording followed by every title.
    pub fn for_corpus(titles: &[String]) -> Self {
        let templates = [BEHAVIOR_PREFIX, PROMPT_SUFFIX, ALIGN_PREFIX, ALIGN_SUFFIX, STRUCTURE_PREFIX];
        Self::fit(templates.into_iter().chain(titles.iter().map(String::as_str)))
    }

    fn push(&mut self, t: String) {
        self.index.insert(t.clone(), self.tokens.len());
        self.tokens.push(t);
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    /// Unknown words map to [`UNK`]. Reserved spellings in text are words
    /// like any other and never produce the reserved ids.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        split_words(text)
            .into_iter()
            .map(|w| match self.index.get(&w) {
                Some(&id) if id >= RESERVED.len() => id,
                _ => UNK,
            })
            .collect()
    }

    /// One token per line; line number is the id.
    pub fn to_lines(&self) -> Vec<String> {
        self.tokens.clone()
    }

    pub fn from_lines(lines: &[String]) -> Result<Self> {
        if lines.len() < RESERVED.len() || lines[..RESERVED.len()] != RESERVED {
            return Err(Error::invalid("tokenizer vocabulary does not start with the reserved tokens"));
        }
        let mut tok = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for l in lines {
            if tok.index.contains_key(l) {
                return Err(Error::invalid(format!("duplicate token `{l}` in vocabulary")));
            }
            tok.push(l.clone());
        }
        Ok(tok)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Text,
    Node,
    Graph,
}

/// `E` plus the origin of each row.
#[derive(Debug, Clone)]
pub struct Embedded {
    pub rows: Var,
    pub provenance: Vec<Provenance>,
}

/// Projection `f_in` from the recommender space into the word space.
#[derive(Debug, Clone)]
pub struct HybridEncoder {
    pub word_embeddings: ParamId,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl HybridEncoder {
    /// Registers `in.weight` (`d1 × d2`) and `in.bias`; `word_embeddings`
    /// belongs to the language model.
    pub fn new<T: Real>(store: &mut ParameterStore<T>, word_embeddings: ParamId, d1: usize, rng: &mut Stream) -> Result<Self> {
        let d2 = store.get(word_embeddings).cols();
        if d2 <= d1 {
            return Err(Error::invalid(format!("word dimension {d2} must exceed id dimension {d1}")));
        }
        let bound = 1.0 / (d1 as f64).sqrt();
        let weight = store.add(Group::In, "weight", Tensor::uniform([d1, d2], bound, rng));
        let bias = store.add(Group::In, "bias", Tensor::uniform([d2], bound, rng));
        Ok(Self {
            word_embeddings,
            weight,
            bias,
        })
    }

    /// BOS, then every segment in order: text as word rows, nodes and graphs
    /// as projected recommender embeddings. Graph embeddings are recomputed
    /// here on every call.
    pub fn encode<T: Real>(
        &self,
        ctx: &mut Ctx<'_, T>,
        prompt: &PromptInstance,
        tokenizer: &Tokenizer,
        sbr: &Sbr,
    ) -> Result<Embedded> {
        let mut words = vec![BOS];
        let mut items = Vec::new();
        let mut sessions = Vec::new();
        // (source block, index within block): 0 text, 1 node, 2 graph
        let mut order = vec![(0usize, 0usize)];
        let mut provenance = vec![Provenance::Text];
        for seg in &prompt.segments {
            match seg {
                Segment::Text(t) => {
                    for id in tokenizer.encode(t) {
                        order.push((0, words.len()));
                        words.push(id);
                        provenance.push(Provenance::Text);
                    }
                }
                Segment::Node(v) => {
                    if *v >= sbr.num_items {
                        return Err(Error::invalid(format!("node {v} outside [0, {})", sbr.num_items)));
                    }
                    order.push((1, items.len()));
                    items.push(*v);
                    provenance.push(Provenance::Node);
                }
                Segment::Graph(s) => {
                    order.push((2, sessions.len()));
                    sessions.push(s.as_slice());
                    provenance.push(Provenance::Graph);
                }
            }
        }

        let table = ctx.param(self.word_embeddings);
        let mut blocks = vec![ctx.tape.embedding(table, &words)?];
        let mut ids = Vec::new();
        if !items.is_empty() {
            ids.push(sbr.embed(ctx, &items, None)?);
        }
        for s in &sessions {
            ids.push(sbr.session_embedding(ctx, s, None)?);
        }
        if !ids.is_empty() {
            let stacked = if ids.len() == 1 { ids[0] } else { ctx.tape.concat(&ids, 0)? };
            blocks.push(ctx.linear(stacked, self.weight, Some(self.bias))?);
        }

        let (nw, ni) = (words.len(), items.len());
        let all = if blocks.len() == 1 { blocks[0] } else { ctx.tape.concat(&blocks, 0)? };
        let gather: Vec<usize> = order
            .iter()
            .map(|&(b, i)| match b {
                0 => i,
                1 => nw + i,
                _ => nw + ni + i,
            })
            .collect();
        let identity = gather.iter().enumerate().all(|(k, &g)| k == g);
        let rows = if identity { all } else { ctx.tape.embedding(all, &gather)? };
        Ok(Embedded { rows, provenance })
    }
}
