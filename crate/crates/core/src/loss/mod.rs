//! Triplet-selection machinery and the contrastive-regression losses.

mod mask;
mod scoreq;
mod triplet;

pub use mask::{is_valid_triplet, label_distance, LabelVector, TripletMask};
pub use scoreq::{
    adaptive_grad_condition, anchor_gradient, scoreq_adaptive, scoreq_fixed,
    scoreq_from_distances, scoreq_on_graph, scoreq_with_grad, LossOutput, MarginMode,
    MarginSpec, Reduction, SignMode,
};
pub use triplet::{
    offline_hard_triplets, triplet_list_on_graph, triplet_loss_classification, Triplet,
};
