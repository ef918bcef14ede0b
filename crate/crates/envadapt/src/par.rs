//! Data-parallel map helpers. With the `parallel` feature (default) the
//! parallel variants run on rayon; without it they fall back to the
//! sequential implementation. Results are order-preserving either way, so
//! outputs never depend on the feature or thread count.

/// Sequential map, always available (benchmark baseline).
pub fn map_collect_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    map_collect_seq(items, f)
}

/// Map over a range of u64 keys, order-preserving.
#[cfg(feature = "parallel")]
pub fn map_range<U, F>(range: std::ops::Range<u64>, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(u64) -> U + Sync + Send,
{
    use rayon::prelude::*;
    range.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<U, F>(range: std::ops::Range<u64>, f: F) -> Vec<U>
where
    F: Fn(u64) -> U,
{
    range.map(f).collect()
}
