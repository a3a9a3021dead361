//! Worker-count policy for the embarrassingly parallel parts (grid search,
//! refinement ladders).

use std::num::NonZeroUsize;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "DELTAVAR_THREADS";

/// Available parallelism, capped by `DELTAVAR_THREADS` when it holds a
/// positive integer.
pub fn worker_threads() -> usize {
    let available = std::thread::available_parallelism().map_or(1, NonZeroUsize::get);
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(cap) if cap > 0 => available.min(cap),
        _ => available,
    }
}
