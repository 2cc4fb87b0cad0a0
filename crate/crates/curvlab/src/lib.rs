//! Scenario runner for `curvlab-core`: JSON scenarios in, CSV/JSON
//! artifacts and a hashed manifest out.

pub mod cache;
pub mod error;
mod experiments;
pub mod io;
pub mod run;
pub mod scenario;
pub mod suite;

pub use error::{Result, RunError};
pub use experiments::oracle_min;
pub use run::{run_file, run_scenario, Manifest, RunOptions, RunReport};
pub use scenario::Scenario;
pub use suite::{run_suite, SuiteReport};

/// Size the global rayon pool from `CURVLAB_THREADS` when set. Later calls
/// are no-ops.
pub fn configure_threads() {
    let Some(n) = std::env::var("CURVLAB_THREADS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
    else {
        return;
    };
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
}
