//! Convex improvement steps, initializations and the phase loop, built on a
//! swappable conic solver.

mod clarabel_backend;
pub mod conic;
pub mod init;
pub mod phase;
pub mod step;

pub use clarabel_backend::ClarabelBackend;
pub use conic::{AffineExpr, ConicBackend, ConicProgram, PsdBlock, Solution, SolveStatus};
pub use init::{BarrierInit, InitBranch, Initialized, StorageInit};
pub use phase::{run_phase, HistoryRecord, PhaseEnd, PhaseLimits, Stepper};
pub use step::{coupling_block, cross_term_block, step_barrier, step_hj, Objective, StepResult, StepSettings};

/// Environment variable naming the conic backend.
pub const SOLVER_ENV: &str = "CPAGAIN_SOLVER";

/// Backend selected by name: `clarabel` (2x2 blocks as second-order cones) or
/// `clarabel-psd` (all blocks as semidefinite cones).
pub fn backend_by_name(name: &str) -> Option<Box<dyn ConicBackend>> {
    match name {
        "clarabel" => Some(Box::new(ClarabelBackend {
            lower_small_blocks: true,
        })),
        "clarabel-psd" => Some(Box::new(ClarabelBackend {
            lower_small_blocks: false,
        })),
        _ => None,
    }
}

/// Backend named by `CPAGAIN_SOLVER`, defaulting to `clarabel`.
pub fn backend_from_env() -> Result<Box<dyn ConicBackend>, String> {
    let name = std::env::var(SOLVER_ENV).unwrap_or_else(|_| "clarabel".to_string());
    backend_by_name(&name).ok_or_else(|| format!("unknown conic backend {name:?} in {SOLVER_ENV}"))
}
