//! Deterministic fan-out: trial i gets its own derived seed, results are
//! re-assembled by index, so aggregation never depends on scheduling.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

/// Run `f(0..n)` on up to `jobs` threads, returning results in index order.
pub fn run_indexed<T, F>(n: usize, jobs: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let jobs = jobs.max(1).min(n.max(1));
    if jobs <= 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            let tx = tx.clone();
            let next = &next;
            let f = &f;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let value = f(i);
                if tx.send((i, value)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut out: Vec<Option<T>> = (0..n).map(|_| None).collect();
        for (i, value) in rx {
            out[i] = Some(value);
        }
        out.into_iter()
            .map(|o| o.expect("every index produced"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_arrive_in_index_order_regardless_of_jobs() {
        let serial = run_indexed(100, 1, |i| i * i);
        let parallel = run_indexed(100, 8, |i| i * i);
        assert_eq!(serial, parallel);
    }

    #[test]
    fn handles_more_jobs_than_work() {
        assert_eq!(run_indexed(2, 16, |i| i), vec![0, 1]);
        assert_eq!(run_indexed(0, 4, |i| i), Vec::<usize>::new());
    }
}
