//! Order-preserving map used for all embarrassingly parallel loops.
//!
//! With the `parallel` feature the work is spread over the rayon pool when
//! the caller asks for it; otherwise it runs on the current thread. Output
//! order always matches input order, so results do not depend on the mode.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub fn par_map<T, R, F>(items: &[T], parallel: bool, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel && items.len() > 1 {
        return items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let _ = parallel;
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// `par_map` over `0..n`.
pub fn par_range<R, F>(n: usize, parallel: bool, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    let idx: Vec<usize> = (0..n).collect();
    par_map(&idx, parallel, |_, &i| f(i))
}

pub fn parallel_available() -> bool {
    cfg!(feature = "parallel")
}
