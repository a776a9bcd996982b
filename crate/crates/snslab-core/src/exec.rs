//! Execution strategy for embarrassingly parallel trajectory maps.
//!
//! Ensembles map an index range through a pure function and then reduce the
//! results in index order, so the output is identical whether the map runs on
//! one worker or many. With the `parallel` feature (the default) the map is
//! dispatched through rayon; without it the same code path degrades to a
//! plain sequential iterator.

/// Maps `0..n` through `f`, preserving index order in the output.
///
/// Uses the rayon thread pool when the `parallel` feature is enabled.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

/// Maps `0..n` through `f`, preserving index order in the output.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Sequential variant, always available. Used by benches to compare against
/// the parallel path and by tests that pin down schedule independence.
pub fn map_indexed_sequential<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree_in_order() {
        let a = map_indexed(257, |i| i * i);
        let b = map_indexed_sequential(257, |i| i * i);
        assert_eq!(a, b);
    }
}
