//! Order-preserving map over independent jobs.
//!
//! With the `parallel` feature the work is spread over a rayon pool; without
//! it every [`Execution`] runs sequentially. Results always come back in input
//! order, so output never depends on completion order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Global pool, one thread per processor.
    #[default]
    Parallel,
    ParallelWith {
        threads: usize,
    },
}

impl Execution {
    pub fn from_jobs(jobs: Option<usize>) -> Self {
        match jobs {
            Some(1) => Self::Sequential,
            Some(k) if k > 1 => Self::ParallelWith { threads: k },
            _ => Self::Parallel,
        }
    }

    pub fn is_parallel(&self) -> bool {
        cfg!(feature = "parallel") && !matches!(self, Self::Sequential)
    }

    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        {
            match *self {
                Self::Sequential => items.iter().map(f).collect(),
                Self::Parallel => items.par_iter().map(f).collect(),
                Self::ParallelWith { threads } => {
                    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
                        Ok(pool) => pool.install(|| items.par_iter().map(f).collect()),
                        Err(_) => items.par_iter().map(f).collect(),
                    }
                }
            }
        }
        #[cfg(not(feature = "parallel"))]
        {
            items.iter().map(f).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let items: Vec<u64> = (0..500).collect();
        let square = |v: &u64| v * v;
        let seq = Execution::Sequential.map(&items, square);
        assert_eq!(seq, Execution::Parallel.map(&items, square));
        assert_eq!(seq, Execution::ParallelWith { threads: 3 }.map(&items, square));
    }

    #[test]
    fn jobs_flag_mapping() {
        assert_eq!(Execution::from_jobs(Some(1)), Execution::Sequential);
        assert_eq!(Execution::from_jobs(None), Execution::Parallel);
        assert_eq!(
            Execution::from_jobs(Some(4)),
            Execution::ParallelWith { threads: 4 }
        );
    }
}
