//! Cross-attention capture and manipulation: the attention stack, attention
//! reduction, spatial aggregation and the salient attention constraint loss.

use crate::error::{DesigenError, Result};
use crate::raster::Gray;
use crate::saliency::{resize_map, ResizeMode};
use ndarray::{Array1, Array2};
use std::collections::BTreeMap;

/// Post-softmax probabilities of one cross-attention layer (pre-reduction):
/// one `(spatial, tokens)` matrix per head.
#[derive(Clone, Debug)]
pub struct AttnLayerCapture {
    pub layer: usize,
    pub res: (usize, usize),
    pub heads: Vec<Array2<f32>>,
}

/// All cross-attention layers captured during one denoiser forward pass.
#[derive(Clone, Debug)]
pub struct StepCapture {
    pub t: usize,
    pub layers: Vec<AttnLayerCapture>,
}

/// Captures across a denoising trajectory, plus which token columns are real
/// prompt words (bos/eos excluded from all aggregation).
#[derive(Clone, Debug)]
pub struct AttentionStack {
    pub content: Vec<bool>,
    pub steps: Vec<StepCapture>,
}

impl AttentionStack {
    pub fn single_step(content: Vec<bool>, step: StepCapture) -> Self {
        AttentionStack { content, steps: vec![step] }
    }

    pub fn is_empty(&self) -> bool {
        self.steps.iter().all(|s| s.layers.is_empty())
    }
}

/// Row scale implementing the reduction `A' = beta*A.m + A.(1-m)` for a mask
/// already resized to the layer resolution.
pub fn row_scale_from_mask(mask: &Gray, beta: f32) -> Array1<f32> {
    let flat: Vec<f32> = mask.iter().map(|&m| beta * m + (1.0 - m)).collect();
    Array1::from_vec(flat)
}

/// Attention reduction on one probability matrix: rows are spatial
/// positions, the mask value of a row scales every token column in it. Rows
/// are not renormalized.
pub fn reduce_attention(weights: &Array2<f32>, mask: &Gray, beta: f32) -> Array2<f32> {
    let scale = row_scale_from_mask(mask, beta);
    assert_eq!(
        weights.nrows(),
        scale.len(),
        "mask resolution must match the attention spatial dimension"
    );
    let mut out = weights.clone();
    for (mut row, &s) in out.rows_mut().into_iter().zip(scale.iter()) {
        row.mapv_inplace(|v| v * s);
    }
    out
}

/// Mean over content-token columns of one head's probabilities, reshaped to
/// the layer's spatial grid.
fn content_mean_map(probs: &Array2<f32>, content: &[bool], res: (usize, usize)) -> Result<Gray> {
    let (hw, l) = probs.dim();
    if hw != res.0 * res.1 {
        return Err(DesigenError::Internal(format!(
            "attention rows {hw} do not match resolution {res:?}"
        )));
    }
    if l != content.len() {
        return Err(DesigenError::Internal(format!(
            "attention columns {l} do not match token count {}",
            content.len()
        )));
    }
    let n_content = content.iter().filter(|&&c| c).count().max(1);
    let mut map = Array2::zeros(res);
    for p in 0..hw {
        let mut acc = 0.0f32;
        for j in 0..l {
            if content[j] {
                acc += probs[[p, j]];
            }
        }
        map[[p / res.1, p % res.1]] = acc / n_content as f32;
    }
    Ok(map)
}

/// Mean over steps, layers, heads and content tokens, each layer resized to
/// `target` before averaging (area for down, bilinear for up). Unnormalized.
pub fn aggregate_attention_raw(stack: &AttentionStack, target: (usize, usize)) -> Result<Gray> {
    if stack.is_empty() {
        return Err(DesigenError::InvalidArgument("attention stack is empty".into()));
    }
    let mut sum: Gray = Array2::zeros(target);
    let mut count = 0usize;
    for step in &stack.steps {
        for layer in &step.layers {
            for head in &layer.heads {
                let map = content_mean_map(head, &stack.content, layer.res)?;
                let resized = if layer.res == target {
                    map
                } else if layer.res.0 >= target.0 && layer.res.1 >= target.1 {
                    resize_map(&map, target, ResizeMode::Area)
                } else {
                    resize_map(&map, target, ResizeMode::Bilinear)
                };
                sum += &resized;
                count += 1;
            }
        }
    }
    Ok(sum.mapv(|v| v / count as f32))
}

/// [`aggregate_attention_raw`] rescaled to `[0,1]` by max-normalization.
pub fn aggregate_attention(stack: &AttentionStack, target: (usize, usize)) -> Result<Gray> {
    let mut map = aggregate_attention_raw(stack, target)?;
    let max = map.iter().copied().fold(0.0f32, f32::max);
    if max > 0.0 {
        map.mapv_inplace(|v| v / max);
    }
    Ok(map)
}

/// Salient attention constraint: mean over all captured content entries of
/// `A * M_x`, with `M_x` area-resized to each layer resolution.
pub fn saliency_attention_loss(stack: &AttentionStack, m_x: &Gray) -> Result<f64> {
    if stack.is_empty() {
        return Err(DesigenError::InvalidArgument("attention stack is empty".into()));
    }
    let n_content = stack.content.iter().filter(|&&c| c).count();
    if n_content == 0 {
        return Ok(0.0);
    }
    let mut resized: BTreeMap<(usize, usize), Vec<f32>> = BTreeMap::new();
    let mut total = 0.0f64;
    let mut entries = 0usize;
    for step in &stack.steps {
        for layer in &step.layers {
            let mask = resized.entry(layer.res).or_insert_with(|| {
                resize_map(m_x, layer.res, ResizeMode::Area).iter().copied().collect()
            });
            for head in &layer.heads {
                let (hw, l) = head.dim();
                if hw != mask.len() || l != stack.content.len() {
                    return Err(DesigenError::Internal(
                        "attention shape does not match mask/token metadata".into(),
                    ));
                }
                for p in 0..hw {
                    let m = mask[p] as f64;
                    if m == 0.0 {
                        entries += n_content;
                        continue;
                    }
                    for j in 0..l {
                        if stack.content[j] {
                            total += head[[p, j]] as f64 * m;
                        }
                    }
                    entries += n_content;
                }
            }
        }
    }
    Ok(total / entries as f64)
}

/// Gradient of `gamma * saliency_attention_loss` with respect to each
/// captured probability matrix, in capture order.
pub fn constraint_prob_grads(
    step: &StepCapture,
    content: &[bool],
    m_x: &Gray,
    gamma: f32,
) -> Vec<Vec<Array2<f32>>> {
    let n_content = content.iter().filter(|&&c| c).count();
    let mut entries = 0usize;
    for layer in &step.layers {
        for _ in &layer.heads {
            entries += layer.res.0 * layer.res.1 * n_content;
        }
    }
    if entries == 0 || gamma == 0.0 {
        return step
            .layers
            .iter()
            .map(|l| l.heads.iter().map(|h| Array2::zeros(h.raw_dim())).collect())
            .collect();
    }
    let scale = gamma / entries as f32;
    let mut resized: BTreeMap<(usize, usize), Vec<f32>> = BTreeMap::new();
    step.layers
        .iter()
        .map(|layer| {
            let mask = resized
                .entry(layer.res)
                .or_insert_with(|| {
                    resize_map(m_x, layer.res, ResizeMode::Area).iter().copied().collect()
                })
                .clone();
            layer
                .heads
                .iter()
                .map(|h| {
                    let (hw, l) = h.dim();
                    Array2::from_shape_fn((hw, l), |(p, j)| {
                        if content[j] {
                            scale * mask[p]
                        } else {
                            0.0
                        }
                    })
                })
                .collect()
        })
        .collect()
}
