//! Seed discipline: one 64-bit master seed, one ChaCha stream per replicate.
//!
//! Replicate `i` uses `ChaCha8Rng::seed_from_u64(master)` with stream `i`.
//! Streams are independent keystreams of the same key, so results do not
//! depend on how replicates are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// RNG for replicate `index` under `master`.
pub fn replicate_rng(master: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

/// Worker cap from `RETREE_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var("RETREE_THREADS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Runs `f(index, rng)` for every replicate and returns results in index order.
#[cfg(feature = "parallel")]
pub fn map_replicates<T, F>(master: u64, count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut SimRng) -> T + Sync + Send,
{
    use rayon::prelude::*;
    let run = || {
        (0..count)
            .into_par_iter()
            .map(|i| f(i, &mut replicate_rng(master, i as u64)))
            .collect()
    };
    match thread_cap() {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(run),
            Err(_) => run(),
        },
        None => run(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_replicates<T, F>(master: u64, count: usize, f: F) -> Vec<T>
where
    F: Fn(usize, &mut SimRng) -> T,
{
    (0..count)
        .map(|i| f(i, &mut replicate_rng(master, i as u64)))
        .collect()
}
