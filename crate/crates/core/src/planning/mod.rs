//! Truncated MPPI with a critic bootstrap, paired planner evaluation, and
//! model-based dataset augmentation.

mod augment;
mod critic;
mod mppi;

pub use augment::{augment_dataset, augmentation_count, AugmentedDataset};
pub use critic::{Critic, LqCritic, ZeroCritic};
pub use mppi::{evaluate_planner, mppi_plan, mppi_plan_detailed, softmax_weights, MppiConfig, PlanOutcome, PlannerEvaluation};
