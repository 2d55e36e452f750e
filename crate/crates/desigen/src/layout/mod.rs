//! Background-conditioned autoregressive layout generation over flattened
//! token sequences `[bos], (category, a, b, h, w)*, [eos]`, plus conversion
//! of layouts to region masks.

pub mod generate;
pub mod mask;
pub mod model;

pub use generate::{generate_layout, DecodeConfig};
pub use mask::layout_to_mask;
pub use model::{
    load_layout, save_layout, train_layout, ImageEncoder, LayoutModel, LayoutModelConfig,
    LayoutTrainConfig,
};

use crate::corpus::{ElementCategory, LayoutElement};
use crate::error::{DesigenError, Result};
use serde::{Deserialize, Serialize};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
const FIRST_CAT: usize = 3;
const N_CATS: usize = 3;

/// Token id layout: `[pad]=0, [bos]=1, [eos]=2`, three category tokens, then
/// `bins` shared position/size tokens (roles disambiguated by position in
/// the 5-token element span).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutVocabulary {
    pub bins: usize,
    pub max_elements: usize,
}

impl Default for LayoutVocabulary {
    fn default() -> Self {
        LayoutVocabulary { bins: 32, max_elements: 8 }
    }
}

impl LayoutVocabulary {
    pub fn size(&self) -> usize {
        FIRST_CAT + N_CATS + self.bins
    }

    pub fn max_len(&self) -> usize {
        self.max_elements * 5 + 2
    }

    pub fn cat_token(&self, cat: ElementCategory) -> usize {
        FIRST_CAT
            + match cat {
                ElementCategory::Text => 0,
                ElementCategory::Button => 1,
                ElementCategory::Image => 2,
            }
    }

    pub fn bin_token(&self, bin: usize) -> usize {
        debug_assert!(bin < self.bins);
        FIRST_CAT + N_CATS + bin
    }

    pub fn as_category(&self, token: usize) -> Option<ElementCategory> {
        match token.checked_sub(FIRST_CAT) {
            Some(0) => Some(ElementCategory::Text),
            Some(1) => Some(ElementCategory::Button),
            Some(2) => Some(ElementCategory::Image),
            _ => None,
        }
    }

    pub fn as_bin(&self, token: usize) -> Option<usize> {
        let b = token.checked_sub(FIRST_CAT + N_CATS)?;
        (b < self.bins).then_some(b)
    }

    fn quantize(&self, v: f32) -> usize {
        ((v * self.bins as f32).floor() as isize).clamp(0, self.bins as isize - 1) as usize
    }

    fn bin_center(&self, bin: usize) -> f32 {
        (bin as f32 + 0.5) / self.bins as f32
    }
}

/// Flattened layout token sequence; always `[bos] .. [eos]`, length `5n+2`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayoutSequence {
    pub tokens: Vec<usize>,
}

/// Reading order: top-to-bottom, then left-to-right.
fn reading_order(elements: &[LayoutElement]) -> Vec<LayoutElement> {
    let mut sorted = elements.to_vec();
    sorted.sort_by(|a, b| {
        (a.top, a.left)
            .partial_cmp(&(b.top, b.left))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    sorted
}

/// Elements -> token sequence: positions quantized by `floor(value*bins)`,
/// elements in reading order.
pub fn tokenize_layout(elements: &[LayoutElement], vocab: &LayoutVocabulary) -> LayoutSequence {
    let mut tokens = vec![BOS];
    for e in reading_order(elements) {
        tokens.push(vocab.cat_token(e.category));
        tokens.push(vocab.bin_token(vocab.quantize(e.left)));
        tokens.push(vocab.bin_token(vocab.quantize(e.top)));
        tokens.push(vocab.bin_token(vocab.quantize(e.height)));
        tokens.push(vocab.bin_token(vocab.quantize(e.width)));
    }
    tokens.push(EOS);
    LayoutSequence { tokens }
}

fn decode_err(index: usize, detail: impl Into<String>) -> DesigenError {
    DesigenError::LayoutDecode { index, detail: detail.into() }
}

/// Token sequence -> elements: bins map back to their centers; width/height
/// clamp so boxes stay inside the canvas (error stays within half a bin).
pub fn detokenize_layout(seq: &LayoutSequence, vocab: &LayoutVocabulary) -> Result<Vec<LayoutElement>> {
    let t = &seq.tokens;
    if t.is_empty() || t[0] != BOS {
        return Err(decode_err(0, "sequence must start with [bos]"));
    }
    if *t.last().unwrap() != EOS {
        return Err(decode_err(t.len().saturating_sub(1), "sequence must end with [eos]"));
    }
    let body = &t[1..t.len() - 1];
    if body.len() % 5 != 0 {
        return Err(decode_err(t.len() - 1, format!("element span truncated ({} tokens)", body.len())));
    }
    let mut elements = Vec::with_capacity(body.len() / 5);
    for (k, span) in body.chunks(5).enumerate() {
        let base = 1 + k * 5;
        let cat = vocab
            .as_category(span[0])
            .ok_or_else(|| decode_err(base, format!("expected category token, got {}", span[0])))?;
        let mut vals = [0f32; 4];
        for (i, v) in vals.iter_mut().enumerate() {
            let bin = vocab.as_bin(span[1 + i]).ok_or_else(|| {
                decode_err(base + 1 + i, format!("expected position token, got {}", span[1 + i]))
            })?;
            *v = vocab.bin_center(bin);
        }
        let [left, top, height, width] = vals;
        let e = LayoutElement::new(
            cat,
            left,
            top,
            width.min(1.0 - left),
            height.min(1.0 - top),
        );
        e.validate()
            .map_err(|err| decode_err(base, format!("decoded box invalid: {err}")))?;
        elements.push(e);
    }
    Ok(elements)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ElementCategory::{Button, Image, Text};

    fn el(cat: ElementCategory, left: f32, top: f32, width: f32, height: f32) -> LayoutElement {
        LayoutElement::new(cat, left, top, width, height)
    }

    #[test]
    fn empty_layout_is_bos_eos() {
        let vocab = LayoutVocabulary::default();
        let seq = tokenize_layout(&[], &vocab);
        assert_eq!(seq.tokens, vec![BOS, EOS]);
        assert_eq!(detokenize_layout(&seq, &vocab).unwrap(), vec![]);
    }

    #[test]
    fn one_element_is_seven_tokens() {
        let vocab = LayoutVocabulary::default();
        let seq = tokenize_layout(&[el(Text, 0.5, 0.25, 0.25, 0.125)], &vocab);
        assert_eq!(seq.tokens.len(), 7);
        // left=0.5 at 32 bins -> bin 16
        assert_eq!(vocab.as_bin(seq.tokens[2]), Some(16));
    }

    #[test]
    fn roundtrip_error_within_half_bin() {
        let vocab = LayoutVocabulary::default();
        let mut worst = 0.0f32;
        let mut rng = crate::rng::rng_from_seed(7);
        use rand::Rng as _;
        for _ in 0..1000 {
            let left = rng.gen_range(0.0..0.95);
            let top = rng.gen_range(0.0..0.95);
            let width = rng.gen_range(0.01..(1.0 - left));
            let height = rng.gen_range(0.01..(1.0 - top));
            let cats = [Text, Button, Image];
            let e = el(cats[rng.gen_range(0..3)], left, top, width, height);
            let back = detokenize_layout(&tokenize_layout(&[e], &vocab), &vocab).unwrap();
            assert_eq!(back.len(), 1);
            let b = back[0];
            for (x, y) in [
                (e.left, b.left),
                (e.top, b.top),
                (e.width, b.width),
                (e.height, b.height),
            ] {
                worst = worst.max((x - y).abs());
            }
            assert_eq!(e.category, b.category);
            b.validate().unwrap();
        }
        assert!(worst <= 1.0 / 64.0 + 1e-6, "worst error {worst}");
    }

    #[test]
    fn reading_order_is_applied() {
        let vocab = LayoutVocabulary::default();
        let a = el(Text, 0.5, 0.5, 0.2, 0.1);
        let b = el(Button, 0.1, 0.1, 0.2, 0.1);
        let seq = tokenize_layout(&[a, b], &vocab);
        let back = detokenize_layout(&seq, &vocab).unwrap();
        assert_eq!(back[0].category, Button);
        assert_eq!(back[1].category, Text);
    }

    #[test]
    fn malformed_sequences_name_the_offending_index() {
        let vocab = LayoutVocabulary::default();
        // category token where a position is expected
        let bad = LayoutSequence {
            tokens: vec![
                BOS,
                vocab.cat_token(Text),
                vocab.cat_token(Text),
                vocab.bin_token(0),
                vocab.bin_token(0),
                vocab.bin_token(0),
                EOS,
            ],
        };
        match detokenize_layout(&bad, &vocab) {
            Err(DesigenError::LayoutDecode { index, .. }) => assert_eq!(index, 2),
            other => panic!("expected decode error, got {other:?}"),
        }
        // truncated span
        let trunc = LayoutSequence { tokens: vec![BOS, vocab.cat_token(Text), vocab.bin_token(0), EOS] };
        assert!(detokenize_layout(&trunc, &vocab).is_err());
        // missing bos
        let nobos = LayoutSequence { tokens: vec![EOS] };
        assert!(detokenize_layout(&nobos, &vocab).is_err());
    }

    #[test]
    fn edge_boxes_survive_roundtrip() {
        let vocab = LayoutVocabulary::default();
        // full-canvas element: quantization clamps keep it valid
        let e = el(Image, 0.0, 0.0, 1.0, 1.0);
        let back = detokenize_layout(&tokenize_layout(&[e], &vocab), &vocab).unwrap()[0];
        back.validate().unwrap();
        assert!((back.width - (1.0 - back.left)).abs() < 1e-6);
    }
}
