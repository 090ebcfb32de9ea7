//! Losses, pseudo labels, training passes and the co-teaching driver.

mod config;
mod coteach;
mod losses;
mod network;
mod pseudo;
mod trainer;

pub use config::TrainingConfig;
pub use coteach::{
    choose_network, co_teach, init_networks, select_inference_model, train_standalone, CoTeachOutcome, Selection,
};
pub use losses::{
    combined_loss, cross_entropy, cross_entropy_loss, cross_entropy_sum_node, mil_pair_node, mil_ranking_loss,
    BagPair, LossBreakdown, MilBatch, PROB_CLAMP,
};
pub use network::{
    clip_scores, coverage_average, dataset_clip_scores, frame_auc, subset_score, video_auc, Network, NetworkKind,
};
pub use pseudo::{generate_pseudo_labels, label_videos, pseudo_label, PseudoLabelStore};
pub use trainer::{train_pass, BatchTrace, EpochLoss, RoundReport};
