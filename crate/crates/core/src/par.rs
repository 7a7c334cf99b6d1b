//! Data-parallel helpers. With the `parallel` feature the work is spread
//! over a rayon pool; without it everything runs on the calling thread.
//! Results always come back in input order.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parallelism {
    Sequential,
    /// Worker count; 0 uses rayon's default.
    Parallel(usize),
    #[default]
    Auto,
}

impl Parallelism {
    pub fn from_jobs(jobs: Option<usize>) -> Self {
        match jobs {
            None => Parallelism::Auto,
            Some(1) => Parallelism::Sequential,
            Some(n) => Parallelism::Parallel(n),
        }
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self != Parallelism::Sequential
    }
}

/// Maps `f` over `items`, preserving order.
pub fn par_map<T, R, F>(items: &[T], mode: Parallelism, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let run = || items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect();
        match mode {
            Parallelism::Sequential => {}
            Parallelism::Auto | Parallelism::Parallel(0) => return run(),
            Parallelism::Parallel(n) => {
                if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                    return pool.install(run);
                }
                return run();
            }
        }
    }
    let _ = mode;
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let xs: Vec<u64> = (0..100).collect();
        for mode in [Parallelism::Sequential, Parallelism::Auto, Parallelism::Parallel(3)] {
            let out = par_map(&xs, mode, |i, x| (i as u64) * 1000 + x * x);
            assert_eq!(out, xs.iter().map(|x| x * 1000 + x * x).collect::<Vec<_>>());
        }
    }
}
