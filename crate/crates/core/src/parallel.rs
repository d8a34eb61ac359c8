//! Trial-level fan-out. With the `parallel` feature trials run on a rayon
//! pool; without it (or with one worker) they run in order on the caller's
//! thread. Output order is always by trial id.

/// Maps `f` over `0..n_trials`, returning results in trial order.
pub fn map_trials<T, F>(n_trials: u64, workers: Option<usize>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if workers != Some(1) {
            return map_trials_parallel(n_trials, workers, f);
        }
    }
    let _ = workers;
    map_trials_sequential(n_trials, f)
}

pub fn map_trials_sequential<T, F>(n_trials: u64, f: F) -> Vec<T>
where
    F: Fn(u64) -> T,
{
    (0..n_trials).map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_trials_parallel<T, F>(n_trials: u64, workers: Option<usize>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    use rayon::prelude::*;
    let run = || (0..n_trials).into_par_iter().map(&f).collect();
    match workers {
        Some(n) if n > 0 => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(run),
            Err(_) => run(),
        },
        _ => run(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_by_trial_id() {
        let seq = map_trials_sequential(100, |i| i * i);
        assert_eq!(map_trials(100, None, |i| i * i), seq);
        assert_eq!(map_trials(100, Some(3), |i| i * i), seq);
        assert_eq!(map_trials(100, Some(1), |i| i * i), seq);
    }
}
