//! Order-preserving data-parallel helpers.
//!
//! With the `parallel` feature (default) and `jobs > 1`, work is spread over a
//! dedicated rayon pool. Otherwise everything runs sequentially on the calling
//! thread. Results always come back in input order, so callers that reduce them
//! left to right get bitwise-identical sums whatever the job count.

/// Maps `f` over `items`, returning results in input order.
pub fn map_ordered<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if jobs > 1 && items.len() > 1 {
            return with_pool(jobs, || {
                use rayon::prelude::*;
                items.par_iter().map(&f).collect()
            });
        }
    }
    let _ = jobs;
    items.iter().map(f).collect()
}

/// Like [`map_ordered`] but the closure also receives the item index.
pub fn map_indexed<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if jobs > 1 && items.len() > 1 {
            return with_pool(jobs, || {
                use rayon::prelude::*;
                items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
            });
        }
    }
    let _ = jobs;
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// True when this build can actually run work in parallel.
pub fn parallel_available() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(feature = "parallel")]
fn with_pool<R: Send>(jobs: usize, op: impl FnOnce() -> R + Send) -> R {
    use std::collections::HashMap;
    use std::sync::{Arc, Mutex, OnceLock};

    // Pools are cached per job count; building one per call costs more than small batches.
    static POOLS: OnceLock<Mutex<HashMap<usize, Arc<rayon::ThreadPool>>>> = OnceLock::new();
    let pool = {
        let mut pools = POOLS.get_or_init(Default::default).lock().unwrap();
        pools
            .entry(jobs)
            .or_insert_with(|| {
                Arc::new(
                    rayon::ThreadPoolBuilder::new()
                        .num_threads(jobs)
                        .build()
                        .expect("failed to build rayon pool"),
                )
            })
            .clone()
    };
    pool.install(op)
}
