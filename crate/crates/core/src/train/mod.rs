//! Training loops and their building blocks: Adam, input perturbations,
//! the margin-based transfer objective, and the supervised KL objective.

pub mod adam;
pub mod augment;
pub mod supervised;
pub mod transfer;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use augment::{dropout_mask, embedding_dropout, scramble, word_dropout};
pub use supervised::{
    kl_loss, similarity_head, target_distribution, train_supervised, HeadParams, InitMode,
    ScoredPair, SupervisedOutcome,
};
pub use transfer::{
    margin_loss, pick_negatives, select_negatives, train_transfer, PairBatch, TrainConfig,
    TransferOutcome,
};
