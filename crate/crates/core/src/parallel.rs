//! Worker-pool control. All parallel maps in this crate write each task's
//! result to its own slot, so output never depends on the pool size.

use rayon::ThreadPoolBuilder;

use crate::error::{Error, Result};

/// Runs `f` inside a dedicated pool with `workers` threads (`None` = rayon's
/// default, one per logical core).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = ThreadPoolBuilder::new();
    if let Some(n) = workers {
        if n == 0 {
            return Err(Error::domain("worker count must be positive"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::numerical(format!("failed to build thread pool: {e}")))?;
    Ok(pool.install(f))
}
