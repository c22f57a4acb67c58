//! Robustness evaluation and loss-geometry probes.

mod diversity;
mod hessian;
mod landscape;
mod pca;
mod robust;
mod transfer;

pub use diversity::{dist_samples, diversity_l2, restart_endpoints};
pub use hessian::{dominant_hessian_eigenvalue, power_iteration, EigenEstimate};
pub use landscape::{loss_surface_grid, LossSurface};
pub use pca::{pca_project, Projection};
pub use robust::{aggregate, robust_accuracy, AttackOutcome, EvalReport};
pub use transfer::transfer_eval;
