//! Paraphrastic sentence embeddings: training and evaluation toolkit.
//!
//! Implements three families of sentence encoders — word averaging, a
//! peephole LSTM (final-state or averaged readout), and gated recurrent
//! averaging networks — together with a margin-based contrastive training
//! procedure over noisy paraphrase pairs, a supervised KL similarity
//! objective, a semantic-textual-similarity evaluation harness, and gate
//! norm analysis over tagged corpora. Everything runs on a small dense
//! tensor core with reverse-mode differentiation certified against central
//! finite differences.

pub mod autodiff;
pub mod checkpoint;
pub mod corpus;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod gates;
pub mod gradcheck;
pub mod numeric;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
pub use numeric::{RandomSource, Real, Tensor};
