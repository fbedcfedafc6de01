//! Execution mode for the data-parallel loops.
//!
//! Every hot loop in the crate (per-sample convolution, batch augmentation,
//! per-frame evaluation) goes through [`map_indexed`]. With the `parallel`
//! feature enabled and the mode set to [`ExecMode::Parallel`] the work is
//! spread over the current rayon pool; otherwise it runs as a plain iterator.
//!
//! Results are always collected in index order and any reduction over them is
//! performed sequentially by the caller, so both modes produce bit-identical
//! outputs.

use std::sync::atomic::{AtomicBool, Ordering};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    Parallel,
}

static PARALLEL: AtomicBool = AtomicBool::new(cfg!(feature = "parallel"));

pub fn set_mode(mode: ExecMode) {
    PARALLEL.store(
        mode == ExecMode::Parallel && cfg!(feature = "parallel"),
        Ordering::SeqCst,
    );
}

pub fn mode() -> ExecMode {
    if PARALLEL.load(Ordering::SeqCst) {
        ExecMode::Parallel
    } else {
        ExecMode::Sequential
    }
}

/// Run `f` with the given mode and restore the previous one afterwards.
pub fn with_mode<R>(mode: ExecMode, f: impl FnOnce() -> R) -> R {
    let prev = self::mode();
    set_mode(mode);
    let out = f();
    set_mode(prev);
    out
}

/// Configure execution for `workers` threads. `1` selects the sequential
/// reference mode.
pub fn configure_workers(workers: usize) {
    if workers <= 1 {
        set_mode(ExecMode::Sequential);
        return;
    }
    set_mode(ExecMode::Parallel);
    #[cfg(feature = "parallel")]
    {
        // The global pool can only be built once; later calls keep the first size.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
}

/// `(0..n).map(f).collect()`, possibly in parallel. Output order is index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if mode() == ExecMode::Parallel && n > 1 {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

/// Apply `f` to each disjoint `chunk`-sized piece of `data`, possibly in parallel.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    {
        if mode() == ExecMode::Parallel && data.len() > chunk {
            use rayon::prelude::*;
            data.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
    }
    data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let f = |i: usize| (i as f64).sqrt().sin();
        let a = with_mode(ExecMode::Sequential, || map_indexed(1000, f));
        let b = with_mode(ExecMode::Parallel, || map_indexed(1000, f));
        assert_eq!(a, b);
    }

    #[test]
    fn chunks_cover_everything() {
        let mut v = vec![0usize; 103];
        for_each_chunk_mut(&mut v, 10, |i, c| c.iter_mut().for_each(|x| *x = i));
        assert_eq!(v[0], 0);
        assert_eq!(v[102], 10);
    }
}
