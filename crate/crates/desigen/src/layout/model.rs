//! Layout model: a convolutional background encoder feeding a causal
//! Transformer decoder over layout token sequences, trained with next-token
//! cross-entropy.

use super::{tokenize_layout, LayoutVocabulary};
use crate::corpus::BannerRecord;
use crate::error::{DesigenError, Result};
use crate::nn::{
    self, batch, causal_bias, AdamW, Attention, Conv2d, LayerNorm, Linear, Module, Param,
    ParamSlot, Visitor,
};
use crate::raster::Rgb;
use crate::rng::{derived_rng, Rng};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutModelConfig {
    pub res: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub enc_base: usize,
    pub vocab: LayoutVocabulary,
}

impl LayoutModelConfig {
    pub fn for_res(res: usize) -> Self {
        LayoutModelConfig {
            res,
            d_model: 128,
            layers: 3,
            heads: 4,
            enc_base: 32,
            vocab: LayoutVocabulary::default(),
        }
    }
}

/// Stride-2 conv stack down to a 4x4 grid of feature tokens with learned
/// positional embeddings.
#[derive(Clone, Debug)]
pub struct ImageEncoder {
    convs: Vec<Conv2d>,
    proj: Conv2d,
    pos: Param<ndarray::Ix2>,
    d_model: usize,
}

#[derive(Clone, Debug)]
pub struct ImageEncCache {
    pre: Vec<Array3<f32>>,
    post: Vec<Array3<f32>>,
    proj_in: Array3<f32>,
}

impl ImageEncoder {
    fn new(rng: &mut Rng, res: usize, base: usize, d_model: usize) -> Self {
        assert!(res >= 8 && res.is_power_of_two());
        let stages = (res / 4).trailing_zeros() as usize;
        let mut convs = Vec::new();
        let mut cin = 3;
        let mut c = base;
        for _ in 0..stages {
            convs.push(Conv2d::new(rng, cin, c, 3, 2, 1));
            cin = c;
            c = (c * 2).min(256);
        }
        let proj = Conv2d::new(rng, cin, d_model, 1, 1, 0);
        let pos = Param::new(nn::init::normal2(rng, 16, d_model, 0.02));
        ImageEncoder { convs, proj, pos, d_model }
    }

    /// `(16, d_model)` feature tokens.
    pub fn forward(&self, img: &Rgb) -> (Array2<f32>, ImageEncCache) {
        let mut x = img.mapv(|v| v * 2.0 - 1.0);
        let mut pre = Vec::new();
        let mut post = Vec::new();
        for conv in &self.convs {
            pre.push(x.clone());
            let y = conv.forward(&x);
            post.push(y.clone());
            x = y.mapv(nn::silu);
        }
        let proj_in = x;
        let p = self.proj.forward(&proj_in); // (d, 4, 4)
        let tokens_t = p.into_shape_with_order((self.d_model, 16)).unwrap();
        let mut tokens = tokens_t.t().as_standard_layout().into_owned();
        tokens += &self.pos.v;
        (tokens, ImageEncCache { pre, post, proj_in })
    }

    pub fn backward(&mut self, cache: &ImageEncCache, d_tokens: &Array2<f32>) {
        self.pos.g += d_tokens;
        let dp = d_tokens
            .t()
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((self.d_model, 4, 4))
            .unwrap();
        let mut grad = self.proj.backward(&cache.proj_in, &dp);
        for i in (0..self.convs.len()).rev() {
            grad = &grad * &cache.post[i].mapv(nn::dsilu);
            grad = self.convs[i].backward(&cache.pre[i], &grad);
        }
    }
}

impl Module for ImageEncoder {
    fn visit_params(&mut self, prefix: &str, v: &mut dyn Visitor) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.visit_params(&format!("{prefix}.conv{i}"), v);
        }
        self.proj.visit_params(&format!("{prefix}.proj"), v);
        v.visit(&format!("{prefix}.pos"), &mut self.pos as &mut dyn ParamSlot);
    }
}

#[derive(Clone, Debug)]
struct DecBlock {
    ln1: LayerNorm,
    self_attn: Attention,
    ln2: LayerNorm,
    cross_attn: Attention,
    ln3: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

#[derive(Clone, Debug)]
struct DecBlockCache {
    ln1c: nn::norm::LnCache,
    sa_c: nn::AttnCache,
    ln2c: nn::norm::LnCache,
    ca_c: nn::AttnCache,
    ln3c: nn::norm::LnCache,
    ln3_out: Array2<f32>,
    f1_out: Array2<f32>,
    f1_act: Array2<f32>,
}

impl DecBlock {
    fn new(rng: &mut Rng, d: usize, heads: usize) -> Self {
        DecBlock {
            ln1: LayerNorm::new(d),
            self_attn: Attention::new(rng, d, d, heads),
            ln2: LayerNorm::new(d),
            cross_attn: Attention::new(rng, d, d, heads),
            ln3: LayerNorm::new(d),
            fc1: Linear::new(rng, d, 2 * d, true),
            fc2: Linear::new(rng, 2 * d, d, true),
        }
    }

    fn forward(
        &self,
        x: &Array2<f32>,
        img_tokens: &Array2<f32>,
        causal: &Array2<f32>,
    ) -> (Array2<f32>, DecBlockCache) {
        let (n1, ln1c) = self.ln1.forward(x);
        let (sa, sa_c) = self.self_attn.forward(&n1, &n1, Some(causal), None);
        let x1 = x + &sa;
        let (n2, ln2c) = self.ln2.forward(&x1);
        let (ca, ca_c) = self.cross_attn.forward(&n2, img_tokens, None, None);
        let x2 = &x1 + &ca;
        let (n3, ln3c) = self.ln3.forward(&x2);
        let f1 = self.fc1.forward(&n3);
        let act = f1.mapv(nn::gelu);
        let f2 = self.fc2.forward(&act);
        let out = &x2 + &f2;
        let cache = DecBlockCache {
            ln1c,
            sa_c,
            ln2c,
            ca_c,
            ln3c,
            ln3_out: n3,
            f1_out: f1,
            f1_act: act,
        };
        (out, cache)
    }

    /// Returns `(dx, d_img_tokens)`.
    fn backward(&mut self, c: &DecBlockCache, dy: &Array2<f32>) -> (Array2<f32>, Array2<f32>) {
        let dact = self.fc2.backward(&c.f1_act, dy);
        let df1 = &dact * &c.f1_out.mapv(nn::dgelu);
        let dn3 = self.fc1.backward(&c.ln3_out, &df1);
        let mut dx2 = dy.clone();
        dx2 += &self.ln3.backward(&c.ln3c, &dn3);
        let (dn2, d_img) = self.cross_attn.backward(&c.ca_c, &dx2, None);
        let mut dx1 = dx2;
        dx1 += &self.ln2.backward(&c.ln2c, &dn2);
        let (dq, dkv) = self.self_attn.backward(&c.sa_c, &dx1, None);
        let dn1 = dq + dkv;
        let mut dx = dx1;
        dx += &self.ln1.backward(&c.ln1c, &dn1);
        (dx, d_img)
    }
}

impl Module for DecBlock {
    fn visit_params(&mut self, prefix: &str, v: &mut dyn Visitor) {
        self.ln1.visit_params(&format!("{prefix}.ln1"), v);
        self.self_attn.visit_params(&format!("{prefix}.self_attn"), v);
        self.ln2.visit_params(&format!("{prefix}.ln2"), v);
        self.cross_attn.visit_params(&format!("{prefix}.cross_attn"), v);
        self.ln3.visit_params(&format!("{prefix}.ln3"), v);
        self.fc1.visit_params(&format!("{prefix}.fc1"), v);
        self.fc2.visit_params(&format!("{prefix}.fc2"), v);
    }
}

#[derive(Clone, Debug)]
pub struct LayoutModel {
    pub cfg: LayoutModelConfig,
    pub encoder: ImageEncoder,
    tok_embed: Param<ndarray::Ix2>,
    pos_embed: Param<ndarray::Ix2>,
    blocks: Vec<DecBlock>,
    ln_f: LayerNorm,
    head: Linear,
}

impl LayoutModel {
    pub fn new(rng: &mut Rng, cfg: LayoutModelConfig) -> Self {
        let d = cfg.d_model;
        let encoder = ImageEncoder::new(rng, cfg.res, cfg.enc_base, d);
        let tok_embed = Param::new(nn::init::normal2(rng, cfg.vocab.size(), d, 0.02));
        let pos_embed = Param::new(nn::init::normal2(rng, cfg.vocab.max_len(), d, 0.02));
        let blocks = (0..cfg.layers).map(|_| DecBlock::new(rng, d, cfg.heads)).collect();
        let ln_f = LayerNorm::new(d);
        let head = Linear::new(rng, d, cfg.vocab.size(), true);
        LayoutModel { cfg, encoder, tok_embed, pos_embed, blocks, ln_f, head }
    }

    /// Next-token logits for each input position, conditioned on the image.
    pub fn logits(
        &self,
        input_tokens: &[usize],
        img_tokens: &Array2<f32>,
    ) -> (Array2<f32>, LayoutForwardCache) {
        let n = input_tokens.len();
        let d = self.cfg.d_model;
        let mut x = Array2::zeros((n, d));
        for (i, &tok) in input_tokens.iter().enumerate() {
            for k in 0..d {
                x[[i, k]] = self.tok_embed.v[[tok, k]] + self.pos_embed.v[[i, k]];
            }
        }
        let causal = causal_bias(n);
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (nx, cache) = block.forward(&x, img_tokens, &causal);
            x = nx;
            block_caches.push(cache);
        }
        let (nf, lnf_c) = self.ln_f.forward(&x);
        let logits = self.head.forward(&nf);
        let cache = LayoutForwardCache {
            input_tokens: input_tokens.to_vec(),
            block_caches,
            lnf_c,
            lnf_out: nf,
        };
        (logits, cache)
    }

    /// Backward from d(logits); returns the image-token gradient.
    pub fn backward(&mut self, cache: &LayoutForwardCache, d_logits: &Array2<f32>) -> Array2<f32> {
        let dnf = self.head.backward(&cache.lnf_out, d_logits);
        let mut dx = self.ln_f.backward(&cache.lnf_c, &dnf);
        let mut d_img: Option<Array2<f32>> = None;
        for (block, bc) in self.blocks.iter_mut().zip(&cache.block_caches).rev() {
            let (ndx, di) = block.backward(bc, &dx);
            dx = ndx;
            match &mut d_img {
                Some(acc) => *acc += &di,
                None => d_img = Some(di),
            }
        }
        for (i, &tok) in cache.input_tokens.iter().enumerate() {
            for k in 0..self.cfg.d_model {
                self.tok_embed.g[[tok, k]] += dx[[i, k]];
                self.pos_embed.g[[i, k]] += dx[[i, k]];
            }
        }
        d_img.expect("decoder has at least one block")
    }

    /// Teacher-forced cross-entropy over all tokens after `[bos]`,
    /// with backward. Returns the mean loss.
    pub fn train_sample(&mut self, image: &Rgb, tokens: &[usize]) -> f64 {
        debug_assert!(tokens.len() >= 2);
        let (img_tokens, enc_cache) = self.encoder.forward(image);
        let inputs = &tokens[..tokens.len() - 1];
        let targets = &tokens[1..];
        let (logits, cache) = self.logits(inputs, &img_tokens);
        let (n, v) = logits.dim();
        let mut d_logits = Array2::zeros((n, v));
        let mut loss = 0.0f64;
        for i in 0..n {
            let row = logits.row(i);
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let exps: Vec<f64> = row.iter().map(|&z| ((z - max) as f64).exp()).collect();
            let sum: f64 = exps.iter().sum();
            let tgt = targets[i];
            loss -= (exps[tgt] / sum).ln();
            for j in 0..v {
                let p = (exps[j] / sum) as f32;
                d_logits[[i, j]] = (p - if j == tgt { 1.0 } else { 0.0 }) / n as f32;
            }
        }
        let d_img = self.backward(&cache, &d_logits);
        self.encoder.backward(&enc_cache, &d_img);
        loss / n as f64
    }
}

#[derive(Clone, Debug)]
pub struct LayoutForwardCache {
    input_tokens: Vec<usize>,
    block_caches: Vec<DecBlockCache>,
    lnf_c: nn::norm::LnCache,
    lnf_out: Array2<f32>,
}

impl Module for LayoutModel {
    fn visit_params(&mut self, prefix: &str, v: &mut dyn Visitor) {
        self.encoder.visit_params(&format!("{prefix}.encoder"), v);
        v.visit(&format!("{prefix}.tok_embed"), &mut self.tok_embed as &mut dyn ParamSlot);
        v.visit(&format!("{prefix}.pos_embed"), &mut self.pos_embed as &mut dyn ParamSlot);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_params(&format!("{prefix}.block{i}"), v);
        }
        self.ln_f.visit_params(&format!("{prefix}.ln_f"), v);
        self.head.visit_params(&format!("{prefix}.head"), v);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LayoutTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub grad_clip: f32,
    pub seed: u64,
    pub quiet: bool,
}

impl Default for LayoutTrainConfig {
    fn default() -> Self {
        LayoutTrainConfig { epochs: 30, batch_size: 16, lr: 3e-4, grad_clip: 1.0, seed: 0, quiet: false }
    }
}

/// Trains the layout generator on (background, tokenized layout) pairs.
pub fn train_layout(
    records: &[&BannerRecord],
    cfg: &LayoutModelConfig,
    tc: &LayoutTrainConfig,
) -> Result<(LayoutModel, Vec<f64>)> {
    if records.is_empty() {
        return Err(DesigenError::InvalidArgument("empty training set".into()));
    }
    let mut rng = derived_rng(tc.seed, "layout-init", 0);
    let mut model = LayoutModel::new(&mut rng, cfg.clone());
    let mut opt = AdamW::new(tc.lr, 0.9, 0.999, 0.0);
    let items: Vec<(&Rgb, Vec<usize>)> = records
        .iter()
        .map(|r| (&r.image, tokenize_layout(&r.elements, &cfg.vocab).tokens))
        .collect();
    let mut losses = Vec::new();
    let mut step = 0usize;
    for epoch in 0..tc.epochs {
        let mut order: Vec<usize> = (0..items.len()).collect();
        use rand::seq::SliceRandom;
        let mut erng = derived_rng(tc.seed, "layout-shuffle", epoch as u64);
        order.shuffle(&mut erng);
        for chunk in order.chunks(tc.batch_size) {
            let batch_items: Vec<&(&Rgb, Vec<usize>)> = chunk.iter().map(|&i| &items[i]).collect();
            let (grads, ls) = batch::parallel_grads(&model, &batch_items, |m, (img, toks)| {
                m.train_sample(img, toks)
            });
            let loss = ls.iter().sum::<f64>() / ls.len() as f64;
            if !loss.is_finite() {
                return Err(DesigenError::Divergence { step, detail: format!("layout CE {loss}") });
            }
            nn::zero_grads(&mut model);
            nn::add_flat_grads(&mut model, &grads);
            nn::scale_grads(&mut model, 1.0 / batch_items.len() as f32);
            nn::clip_grad_norm(&mut model, tc.grad_clip);
            opt.step(&mut model);
            losses.push(loss);
            step += 1;
        }
        if !tc.quiet {
            eprintln!("layout epoch {epoch}: ce {:.4}", losses.last().unwrap());
        }
    }
    Ok((model, losses))
}

#[derive(Serialize, Deserialize)]
struct LayoutHeader {
    version: u32,
    cfg: LayoutModelConfig,
    train_seed: u64,
}

pub fn save_layout(model: &mut LayoutModel, train_seed: u64, path: &Path) -> Result<()> {
    let header = LayoutHeader { version: 1, cfg: model.cfg.clone(), train_seed };
    nn::ckpt::save(model, &header, path)
}

pub fn load_layout(path: &Path) -> Result<LayoutModel> {
    let header: LayoutHeader = nn::ckpt::load_header(path)?;
    let mut rng = derived_rng(0, "layout-load", 0);
    let mut model = LayoutModel::new(&mut rng, header.cfg);
    nn::ckpt::load_into(&mut model, path)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_record, StyleSpace};
    use crate::nn::{grad_check, zero_grads};

    fn tiny_cfg() -> LayoutModelConfig {
        LayoutModelConfig {
            res: 32,
            d_model: 16,
            layers: 1,
            heads: 2,
            enc_base: 4,
            vocab: LayoutVocabulary::default(),
        }
    }

    #[test]
    fn uniform_logits_give_log_vocab_loss() {
        // a fresh model with zeroed head weights outputs uniform logits
        let mut rng = derived_rng(0, "t", 0);
        let mut model = LayoutModel::new(&mut rng, tiny_cfg());
        model.head.w.v.fill(0.0);
        if let Some(b) = &mut model.head.b {
            b.v.fill(0.0);
        }
        let img: Rgb = Array3::from_elem((3, 32, 32), 0.5);
        let vocab = LayoutVocabulary::default();
        let tokens = vec![super::super::BOS, vocab.cat_token(crate::corpus::ElementCategory::Text), vocab.bin_token(4), vocab.bin_token(5), vocab.bin_token(3), vocab.bin_token(6), super::super::EOS];
        let loss = model.train_sample(&img, &tokens);
        let expect = (vocab.size() as f64).ln();
        assert!((loss - expect).abs() < 1e-5, "{loss} vs ln V {expect}");
    }

    #[test]
    fn layout_model_grads_match_finite_differences() {
        let mut rng = derived_rng(1, "t", 0);
        let mut model = LayoutModel::new(&mut rng, tiny_cfg());
        // embeddings scaled up so LayerNorm curvature stays mild
        model.tok_embed.v.mapv_inplace(|v| v * 25.0);
        model.pos_embed.v.mapv_inplace(|v| v * 25.0);
        use rand::Rng as _;
        let img: Rgb = Array3::from_shape_fn((3, 32, 32), |_| rng.gen_range(0.0..1.0f32));
        let vocab = LayoutVocabulary::default();
        let tokens = vec![
            super::super::BOS,
            vocab.cat_token(crate::corpus::ElementCategory::Button),
            vocab.bin_token(1),
            vocab.bin_token(2),
            vocab.bin_token(3),
            vocab.bin_token(4),
            super::super::EOS,
        ];
        grad_check::check(
            &mut model,
            |m| {
                zero_grads(m);
                m.train_sample(&img, &tokens)
            },
            30,
            1e-2,
            1e-3,
            3e-2,
        );
    }

    #[test]
    fn training_reduces_loss_on_tiny_corpus() {
        let records: Vec<_> = (0..6u64)
            .map(|s| synth_record(s, (32, 32), &StyleSpace::default()).unwrap())
            .collect();
        let refs: Vec<&BannerRecord> = records.iter().collect();
        let tc = LayoutTrainConfig { epochs: 12, batch_size: 3, lr: 1e-3, quiet: true, ..Default::default() };
        let (_, losses) = train_layout(&refs, &tiny_cfg(), &tc).unwrap();
        let head: f64 = losses[..3].iter().sum::<f64>() / 3.0;
        let tail: f64 = losses[losses.len() - 3..].iter().sum::<f64>() / 3.0;
        assert!(tail < head, "loss should fall: {head} -> {tail}");
    }

    #[test]
    fn training_is_deterministic() {
        let records: Vec<_> = (0..4u64)
            .map(|s| synth_record(s, (32, 32), &StyleSpace::default()).unwrap())
            .collect();
        let refs: Vec<&BannerRecord> = records.iter().collect();
        let tc = LayoutTrainConfig { epochs: 2, batch_size: 2, quiet: true, ..Default::default() };
        let (_, a) = train_layout(&refs, &tiny_cfg(), &tc).unwrap();
        let (_, b) = train_layout(&refs, &tiny_cfg(), &tc).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut rng = derived_rng(3, "t", 0);
        let mut model = LayoutModel::new(&mut rng, tiny_cfg());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("layout.ckpt");
        save_layout(&mut model, 7, &p).unwrap();
        let loaded = load_layout(&p).unwrap();
        let img: Rgb = Array3::from_elem((3, 32, 32), 0.25);
        let (ta, _) = model.encoder.forward(&img);
        let (tb, _) = loaded.encoder.forward(&img);
        assert_eq!(ta, tb);
    }

    use ndarray::Array3;
}
