//! Source training, hard-label self-training, the gradual chain and the
//! cycle-consistency check used to pick α.

mod chain;
mod classifier;
mod select;

pub use chain::{cycle_consistency, gradual_chain, self_train, ChainResult, CycleReport, CycleScore};
pub use classifier::{label_from_scores, pseudo_label, train_source, Classifier, ClassifierConfig, Fitted};
pub use select::{lowest_loss, select_alpha, AlphaOutcome, AlphaSelection, DEFAULT_ALPHA_GRID};
