//! Deterministic parallel gradient accumulation.
//!
//! A batch is split into a fixed number of contiguous chunks (independent of
//! thread count). Each chunk runs on its own clone of the model, and chunk
//! gradients are merged in chunk order, so the result is bit-identical no
//! matter how rayon schedules the work.

use super::{flat_grads, zero_grads, Module};
use rayon::prelude::*;

pub const GRAD_CHUNKS: usize = 4;

/// Runs `per_sample` (forward + backward, accumulating into the clone's
/// grads) for every item, merges gradients into a flat vector, and returns
/// per-item outputs in input order.
pub fn parallel_grads<M, T, S, F>(model: &M, items: &[T], per_sample: F) -> (Vec<f32>, Vec<S>)
where
    M: Module + Clone + Send + Sync,
    T: Sync,
    S: Send,
    F: Fn(&mut M, &T) -> S + Sync,
{
    let n_chunks = GRAD_CHUNKS.min(items.len().max(1));
    let chunk_size = items.len().div_ceil(n_chunks);
    let chunks: Vec<&[T]> = items.chunks(chunk_size.max(1)).collect();
    let results: Vec<(Vec<f32>, Vec<S>)> = chunks
        .par_iter()
        .map(|chunk| {
            let mut local = model.clone();
            zero_grads(&mut local);
            let outs: Vec<S> = chunk.iter().map(|item| per_sample(&mut local, item)).collect();
            (flat_grads(&mut local), outs)
        })
        .collect();
    let mut grads: Vec<f32> = Vec::new();
    let mut stats = Vec::with_capacity(items.len());
    for (g, s) in results {
        if grads.is_empty() {
            grads = g;
        } else {
            for (a, b) in grads.iter_mut().zip(g.iter()) {
                *a += *b;
            }
        }
        stats.extend(s);
    }
    (grads, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{add_flat_grads, Linear};
    use crate::rng::rng_from_seed;
    use ndarray::Array2;

    #[test]
    fn parallel_matches_sequential() {
        let mut rng = rng_from_seed(0);
        let lin = Linear::new(&mut rng, 3, 2, true);
        let items: Vec<Array2<f32>> = (0..9)
            .map(|i| Array2::from_shape_fn((1, 3), |(_, j)| (i * 3 + j) as f32 / 10.0))
            .collect();
        let run = |m: &mut Linear, x: &Array2<f32>| -> f64 {
            let y = m.forward(x);
            let dy = y.mapv(|v| 2.0 * v);
            let _ = m.backward(x, &dy);
            y.iter().map(|v| (*v as f64).powi(2)).sum()
        };
        let (pg, ps) = parallel_grads(&lin, &items, run);
        // sequential reference
        let mut seq = lin.clone();
        zero_grads(&mut seq);
        let mut seq_losses = Vec::new();
        for x in &items {
            seq_losses.push(run(&mut seq, x));
        }
        let sg = flat_grads(&mut seq);
        assert_eq!(ps.len(), seq_losses.len());
        for (a, b) in ps.iter().zip(seq_losses.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
        for (a, b) in pg.iter().zip(sg.iter()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
        // and merging back works
        let mut target = lin.clone();
        zero_grads(&mut target);
        add_flat_grads(&mut target, &pg);
    }
}
