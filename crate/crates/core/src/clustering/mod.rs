//! Mixture-model clustering and transition-state segmentation.

mod gmm;
mod tsc;

pub use gmm::{fit_gmm, parameter_count, select_gmm, EmOptions, GmmModel};
pub use tsc::{tsc_segment, Transition, TransitionCluster, TransitionReport, TscConfig, TscOutput};
