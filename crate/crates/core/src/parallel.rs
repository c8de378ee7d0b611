//! Process-wide switch between serial and rayon-backed execution.
//!
//! Every parallel region in the crate splits work per batch sample and
//! reduces partial results in sample order, so both modes produce
//! bit-identical values.

use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;

static SERIAL: AtomicBool = AtomicBool::new(false);

/// Configure internal parallelism. `0` selects the strictly serial mode;
/// any other value sizes the global rayon pool (ignored if the pool was
/// already built).
pub fn set_threads(threads: usize) {
    if threads == 0 {
        SERIAL.store(true, Ordering::SeqCst);
    } else {
        SERIAL.store(false, Ordering::SeqCst);
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
}

/// Reads `WNET_THREADS` and applies it; returns the value applied, if any.
pub fn configure_from_env() -> Option<usize> {
    let threads = std::env::var("WNET_THREADS").ok()?.trim().parse().ok()?;
    set_threads(threads);
    Some(threads)
}

pub fn is_serial() -> bool {
    SERIAL.load(Ordering::SeqCst)
}

pub(crate) fn map_indexed<R, F>(count: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    if is_serial() || count <= 1 {
        (0..count).map(f).collect()
    } else {
        (0..count).into_par_iter().map(f).collect()
    }
}
