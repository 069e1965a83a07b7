//! Experiment plumbing: configuration, field generation, runs, output files
//! and the command line.

pub mod checks;
pub mod cli;
pub mod config;
pub mod fields;
pub mod io;
pub mod run;

pub use config::{ExperimentConfig, SchemeKind};
pub use run::{error_norms, run_comparison, ComparisonReport, ErrorNorms, Trajectory};

use std::sync::Once;

/// Sizes the worker pool from `FRACSTEP_THREADS` and keeps the sparse
/// factorizations single-threaded so results do not depend on the pool.
pub fn configure_threads() {
    static INIT: Once = Once::new();
    INIT.call_once(|| {
        faer::set_global_parallelism(faer::Par::Seq);
        if let Some(n) = std::env::var("FRACSTEP_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    });
}
