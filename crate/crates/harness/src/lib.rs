//! Scenario runner for the `bem-core` solver: configuration files, run
//! reports, parameter sweeps, verification suites, field grids and mesh
//! utilities. The `bem` binary is a thin command-line layer over this crate.

pub mod config;
pub mod error;
pub mod field;
pub mod mesh_tools;
pub mod report;
pub mod run;
pub mod sweep;
pub mod verify;

pub use error::{HarnessError, Result};

/// Environment variable holding the worker-thread count.
pub const THREADS_ENV: &str = "BEM_THREADS";

/// Sizes the global worker pool: one thread when `single_thread` is set,
/// otherwise `BEM_THREADS` if present, otherwise the rayon default.
pub fn configure_threads(single_thread: bool) -> Result<usize> {
    let threads = if single_thread {
        Some(1)
    } else {
        match std::env::var(THREADS_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse::<usize>()
                    .ok()
                    .filter(|&n| n > 0)
                    .ok_or_else(|| HarnessError::config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?,
            ),
            Err(_) => None,
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    // A pool that already exists (tests, repeated calls) is kept.
    let _ = builder.build_global();
    Ok(rayon::current_num_threads())
}
