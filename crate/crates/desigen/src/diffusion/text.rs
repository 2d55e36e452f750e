//! Grammar tokenizer and the small transformer text encoder trained jointly
//! with the denoiser.
//!
//! Sequences are `[bos] w1 .. wn [eos]`; encoding happens per sample, so no
//! padding ever enters attention. `[pad]` exists in the vocabulary only for
//! external consumers that batch token ids.

use crate::error::{DesigenError, Result};
use crate::nn::{self, Attention, LayerNorm, Linear, Module, Param, ParamSlot, Visitor};
use crate::rng::Rng;
use ndarray::{Array2, Ix2};
use std::collections::BTreeMap;

pub const MAX_TEXT_LEN: usize = 32;
pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
const FIRST_WORD: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct Tokenizer {
    words: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Tokenizer {
    pub fn new(words: Vec<String>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), FIRST_WORD + i))
            .collect();
        Tokenizer { words, index }
    }

    pub fn from_grammar() -> Self {
        Tokenizer::new(crate::corpus::vocabulary().into_iter().collect())
    }

    pub fn vocab_size(&self) -> usize {
        FIRST_WORD + self.words.len()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// `[bos] tokens [eos]`; the empty prompt is valid conditioning.
    pub fn encode(&self, prompt: &str) -> Result<Vec<usize>> {
        let mut ids = vec![BOS];
        for word in prompt.split_whitespace() {
            let lw = word.to_lowercase();
            match self.index.get(&lw) {
                Some(&id) => ids.push(id),
                None => return Err(DesigenError::UnknownToken { token: word.to_string() }),
            }
        }
        ids.push(EOS);
        if ids.len() > MAX_TEXT_LEN {
            return Err(DesigenError::InvalidArgument(format!(
                "prompt has {} tokens; the maximum is {MAX_TEXT_LEN}",
                ids.len()
            )));
        }
        Ok(ids)
    }

    /// True for real prompt words (not bos/eos/pad); used by attention
    /// aggregation and the constraint loss.
    pub fn content_mask(tokens: &[usize]) -> Vec<bool> {
        tokens.iter().map(|&t| t >= FIRST_WORD).collect()
    }
}

#[derive(Clone, Debug)]
struct EncBlock {
    ln1: LayerNorm,
    attn: Attention,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

#[derive(Clone, Debug)]
struct EncBlockCache {
    ln1c: crate::nn::norm::LnCache,
    attn_c: crate::nn::AttnCache,
    ln2c: crate::nn::norm::LnCache,
    ln2_out: Array2<f32>,
    f1_out: Array2<f32>,
    f1_act: Array2<f32>,
}

impl EncBlock {
    fn new(rng: &mut Rng, dim: usize, heads: usize) -> Self {
        EncBlock {
            ln1: LayerNorm::new(dim),
            attn: Attention::new(rng, dim, dim, heads),
            ln2: LayerNorm::new(dim),
            fc1: Linear::new(rng, dim, dim * 2, true),
            fc2: Linear::new(rng, dim * 2, dim, true),
        }
    }

    fn forward(&self, x: &Array2<f32>) -> (Array2<f32>, EncBlockCache) {
        let (n1, ln1c) = self.ln1.forward(x);
        let (att, attn_c) = self.attn.forward(&n1, &n1, None, None);
        let x_mid = x + &att;
        let (n2, ln2c) = self.ln2.forward(&x_mid);
        let f1 = self.fc1.forward(&n2);
        let act = f1.mapv(nn::gelu);
        let f2 = self.fc2.forward(&act);
        let out = &x_mid + &f2;
        let cache = EncBlockCache {
            ln1c,
            attn_c,
            ln2c,
            ln2_out: n2,
            f1_out: f1,
            f1_act: act,
        };
        (out, cache)
    }

    fn backward(&mut self, c: &EncBlockCache, dy: &Array2<f32>) -> Array2<f32> {
        // ffn branch
        let dact = self.fc2.backward(&c.f1_act, dy);
        let df1 = &dact * &c.f1_out.mapv(nn::dgelu);
        let dn2 = self.fc1.backward(&c.ln2_out, &df1);
        let mut dx_mid = dy.clone();
        dx_mid += &self.ln2.backward(&c.ln2c, &dn2);
        // attention branch: self-attention feeds q and kv from the same input
        let (dq_in, dkv_in) = self.attn.backward(&c.attn_c, &dx_mid, None);
        let dn1 = dq_in + dkv_in;
        let mut dx = dx_mid;
        dx += &self.ln1.backward(&c.ln1c, &dn1);
        dx
    }
}

impl Module for EncBlock {
    fn visit_params(&mut self, prefix: &str, v: &mut dyn Visitor) {
        self.ln1.visit_params(&format!("{prefix}.ln1"), v);
        self.attn.visit_params(&format!("{prefix}.attn"), v);
        self.ln2.visit_params(&format!("{prefix}.ln2"), v);
        self.fc1.visit_params(&format!("{prefix}.fc1"), v);
        self.fc2.visit_params(&format!("{prefix}.fc2"), v);
    }
}

#[derive(Clone, Debug)]
pub struct TextEncoder {
    pub dim: usize,
    embed: Param<Ix2>,
    pos: Param<Ix2>,
    blocks: Vec<EncBlock>,
    ln_f: LayerNorm,
}

#[derive(Clone, Debug)]
pub struct TextCache {
    tokens: Vec<usize>,
    block_caches: Vec<EncBlockCache>,
    lnf_c: crate::nn::norm::LnCache,
}

impl TextEncoder {
    pub fn new(rng: &mut Rng, vocab_size: usize, dim: usize, layers: usize, heads: usize) -> Self {
        TextEncoder {
            dim,
            embed: Param::new(nn::init::normal2(rng, vocab_size, dim, 0.02)),
            pos: Param::new(nn::init::normal2(rng, MAX_TEXT_LEN, dim, 0.02)),
            blocks: (0..layers).map(|_| EncBlock::new(rng, dim, heads)).collect(),
            ln_f: LayerNorm::new(dim),
        }
    }

    /// Token ids -> `(len, dim)` context matrix.
    pub fn forward(&self, tokens: &[usize]) -> (Array2<f32>, TextCache) {
        let n = tokens.len();
        let mut x = Array2::zeros((n, self.dim));
        for (i, &tok) in tokens.iter().enumerate() {
            for d in 0..self.dim {
                x[[i, d]] = self.embed.v[[tok, d]] + self.pos.v[[i, d]];
            }
        }
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (nx, cache) = block.forward(&x);
            x = nx;
            block_caches.push(cache);
        }
        let (out, lnf_c) = self.ln_f.forward(&x);
        (out, TextCache { tokens: tokens.to_vec(), block_caches, lnf_c })
    }

    pub fn backward(&mut self, cache: &TextCache, dctx: &Array2<f32>) {
        let mut dx = self.ln_f.backward(&cache.lnf_c, dctx);
        for (block, bc) in self.blocks.iter_mut().zip(&cache.block_caches).rev() {
            dx = block.backward(bc, &dx);
        }
        for (i, &tok) in cache.tokens.iter().enumerate() {
            for d in 0..self.dim {
                self.embed.g[[tok, d]] += dx[[i, d]];
                self.pos.g[[i, d]] += dx[[i, d]];
            }
        }
    }
}

impl Module for TextEncoder {
    fn visit_params(&mut self, prefix: &str, v: &mut dyn Visitor) {
        v.visit(&format!("{prefix}.embed"), &mut self.embed as &mut dyn ParamSlot);
        v.visit(&format!("{prefix}.pos"), &mut self.pos as &mut dyn ParamSlot);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_params(&format!("{prefix}.block{i}"), v);
        }
        self.ln_f.visit_params(&format!("{prefix}.ln_f"), v);
    }
}
