//! Siamese scoring networks, the pairwise ranking loss and its
//! indicator-gated combination with the spatial penalties.

mod category;
mod extractor;
mod loss;
mod net;

pub use category::{CategoryNet, CATEGORY_SIDE};
pub use extractor::{ExtractorCache, FeatureExtractor};
pub use loss::{check_label, combined_loss, rank_loss, rank_loss_grad, rank_prob, LossBreakdown};
pub use net::{ArchConfig, BranchCache, PairForward, PairTarget, ScoreTrace, ScoringNet, Variant};
