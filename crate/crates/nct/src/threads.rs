//! Worker-pool setup. `NCT_THREADS` caps the number of rayon workers.

use std::sync::Once;

static INIT: Once = Once::new();

/// Install the global rayon pool, honoring `NCT_THREADS` if set.
/// Safe to call repeatedly; only the first call takes effect.
pub fn init_pool() {
    INIT.call_once(|| {
        if let Ok(v) = std::env::var("NCT_THREADS") {
            if let Ok(n) = v.trim().parse::<usize>() {
                if n >= 1 {
                    // Ignore failure: a pool may already exist in tests.
                    let _ = rayon::ThreadPoolBuilder::new()
                        .num_threads(n)
                        .build_global();
                }
            }
        }
    });
}
