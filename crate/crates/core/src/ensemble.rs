//! Seeded random streams and deterministic parallel maps for trajectory
//! ensembles.
//!
//! Every trajectory draws from its own ChaCha8 stream: the generator is seeded
//! with the master seed and then switched to stream number
//! `(group << 32) | index`, where `group` distinguishes e.g. the true
//! hypothesis of a readout run and `index` is the trajectory number. Streams
//! depend only on `(seed, group, index)`, never on the worker that runs them,
//! so results are identical for any thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Random stream of one trajectory.
pub fn stream_rng(master_seed: u64, group: u32, index: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream_id(group, index));
    rng
}

pub fn stream_id(group: u32, index: u32) -> u64 {
    (u64::from(group) << 32) | u64::from(index)
}

/// Maps `f` over `0..n` in parallel; output is in index order.
pub fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Fallible [`par_map`]; returns the error of the lowest failing index.
pub fn try_par_map<T, E, F>(n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    par_map(n, f).into_iter().collect()
}

/// Chunk size of [`par_sum`]; fixed so the summation order never changes.
pub const SUM_CHUNK: usize = 64;

/// Sums per-index contributions with a fixed association order: indices are
/// accumulated sequentially within chunks of [`SUM_CHUNK`], then the chunk
/// totals are added in chunk order. Floating-point results are therefore
/// independent of scheduling.
pub fn par_sum<A, E, Init, F, Merge>(n: usize, init: Init, f: F, merge: Merge) -> Result<A, E>
where
    A: Send,
    E: Send,
    Init: Fn() -> A + Sync + Send,
    F: Fn(usize, &mut A) -> Result<(), E> + Sync + Send,
    Merge: Fn(&mut A, A),
{
    let chunks = n.div_ceil(SUM_CHUNK);
    let partial: Vec<A> = try_par_map(chunks, |c| {
        let mut acc = init();
        for i in c * SUM_CHUNK..((c + 1) * SUM_CHUNK).min(n) {
            f(i, &mut acc)?;
        }
        Ok(acc)
    })?;
    let mut total = init();
    for p in partial {
        merge(&mut total, p);
    }
    Ok(total)
}
