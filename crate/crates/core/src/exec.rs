//! Data-parallel maps with a sequential fallback.
//!
//! Every map returns results in input order and closures only touch their
//! own item, so both schedules produce identical output.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheduling {
    Sequential,
    /// Runs on the rayon pool when the `parallel` feature is enabled, and
    /// sequentially otherwise.
    #[default]
    Parallel,
}

impl Scheduling {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Scheduling::Parallel
    }
}

/// `items.iter_mut().map(f)`, possibly in parallel.
pub fn map_mut<T, R, F>(scheduling: Scheduling, items: &mut [T], f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(&mut T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if scheduling.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter_mut().map(f).collect();
    }
    let _ = scheduling;
    items.iter_mut().map(f).collect()
}

/// `(0..n).map(f)`, possibly in parallel.
pub fn map_range<R, F>(scheduling: Scheduling, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if scheduling.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = scheduling;
    (0..n).map(f).collect()
}
