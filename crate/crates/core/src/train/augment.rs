//! Training-time input perturbations: whole-word dropout, inverted dropout
//! on word embeddings, and pair scrambling. All three are driven by the
//! shared [`RandomSource`] and are identities at evaluation time (the
//! evaluation paths simply never call them).
//!
//! Draw order is part of the reproducibility contract: scrambling draws
//! come first (per pair: one coin, then one permutation per scrambled
//! side), then word-dropout draws (per pair: first sentence then second,
//! one coin per token), then embedding-dropout mask draws (per sentence in
//! flat batch order, one coin per token per coordinate).

use crate::error::{Error, Result};
use crate::numeric::{seeded_permutation, RandomSource, Real, Tensor};
use crate::vocab::TokenSequence;

/// Remove each token independently with probability `rate`. If every token
/// is removed the original sequence is restored unchanged.
pub fn word_dropout(seq: &TokenSequence, rate: f64, rng: &mut RandomSource) -> TokenSequence {
    if rate <= 0.0 {
        return seq.clone();
    }
    let mut indices = Vec::with_capacity(seq.len());
    let mut surface = Vec::with_capacity(seq.len());
    for (i, &idx) in seq.indices.iter().enumerate() {
        if !rng.coin(rate) {
            indices.push(idx);
            surface.push(seq.surface[i].clone());
        }
    }
    if indices.is_empty() {
        return seq.clone();
    }
    TokenSequence { indices, surface }
}

/// Pre-scaled inverted-dropout mask: each entry is 0 with probability
/// `rate`, else `1/(1-rate)`. Multiplying a word vector by the mask is the
/// whole dropout operation, which lets the tape treat the mask as a
/// constant.
pub fn dropout_mask<F: Real>(dim: usize, rate: f64, rng: &mut RandomSource) -> Result<Tensor<F>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!(
            "dropout rate {rate} outside [0, 1)"
        )));
    }
    let keep_scale = F::from_f64(1.0 / (1.0 - rate));
    let data = (0..dim)
        .map(|_| if rng.coin(rate) { F::ZERO } else { keep_scale })
        .collect();
    Ok(Tensor::vector(data))
}

/// Inverted dropout on one word vector.
pub fn embedding_dropout<F: Real>(
    x: &Tensor<F>,
    rate: f64,
    rng: &mut RandomSource,
) -> Result<Tensor<F>> {
    if rate == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask::<F>(x.len(), rate, rng)?;
    crate::numeric::hadamard(x, &mask)
}

/// With probability `rate` per pair, independently permute the words of
/// both sentences. Applied strictly before negative selection.
pub fn scramble(
    pairs: &mut [(TokenSequence, TokenSequence)],
    rate: f64,
    rng: &mut RandomSource,
) {
    if rate <= 0.0 {
        return;
    }
    for (s1, s2) in pairs.iter_mut() {
        if rng.coin(rate) {
            permute_in_place(s1, rng);
            permute_in_place(s2, rng);
        }
    }
}

fn permute_in_place(seq: &mut TokenSequence, rng: &mut RandomSource) {
    let perm = seeded_permutation(seq.len(), rng);
    let indices = perm.iter().map(|&i| seq.indices[i]).collect();
    let surface = perm.iter().map(|&i| seq.surface[i].clone()).collect();
    seq.indices = indices;
    seq.surface = surface;
}
