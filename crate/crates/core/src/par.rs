//! Data-parallel helpers.
//!
//! With the `parallel` feature, work is spread over a rayon pool sized by the
//! caller's worker count. Without it every helper degrades to a plain
//! sequential iterator. Results are always returned in input order, so output
//! never depends on scheduling.

/// Number of worker threads. `0` means "use all available cores".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Workers(pub usize);

impl Workers {
    pub const SEQUENTIAL: Workers = Workers(1);
    pub const AUTO: Workers = Workers(0);

    pub fn is_sequential(self) -> bool {
        self.0 == 1 || !cfg!(feature = "parallel")
    }
}

/// Map `f` over `items`, preserving order.
pub fn map<T, U, F>(items: &[T], workers: Workers, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    if workers.is_sequential() {
        return items.iter().map(f).collect();
    }
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        install(workers, || items.par_iter().map(&f).collect())
    }
    #[cfg(not(feature = "parallel"))]
    unreachable!()
}

/// Map `f` over `0..n`, preserving order.
pub fn map_range<U, F>(n: usize, workers: Workers, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    if workers.is_sequential() {
        return (0..n).map(f).collect();
    }
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        install(workers, || (0..n).into_par_iter().map(&f).collect())
    }
    #[cfg(not(feature = "parallel"))]
    unreachable!()
}

#[cfg(feature = "parallel")]
fn install<R: Send>(workers: Workers, op: impl FnOnce() -> R + Send) -> R {
    if workers.0 == 0 {
        return op();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers.0).build() {
        Ok(pool) => pool.install(op),
        Err(e) => {
            log::warn!("could not build a {}-thread pool ({e}); using the global pool", workers.0);
            op()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let items: Vec<u64> = (0..1000).collect();
        let seq = map(&items, Workers::SEQUENTIAL, |x| x * x);
        let par = map(&items, Workers(4), |x| x * x);
        assert_eq!(seq, par);
        assert_eq!(map_range(10, Workers::AUTO, |i| i), (0..10).collect::<Vec<_>>());
    }
}
