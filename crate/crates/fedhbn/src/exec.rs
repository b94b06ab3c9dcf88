use std::thread;

use fedhbn_core::federation::Executor;

/// Runs client jobs on up to `threads` scoped threads. Output order matches
/// input order, so results are identical to sequential execution.
#[derive(Debug, Clone, Copy)]
pub struct Threaded {
    pub threads: usize,
}

impl Threaded {
    pub fn new(threads: usize) -> Self {
        Self {
            threads: threads.max(1),
        }
    }
}

impl Executor for Threaded {
    fn map<I, O, F>(&self, items: Vec<I>, f: F) -> Vec<O>
    where
        I: Send,
        O: Send,
        F: Fn(I) -> O + Sync,
    {
        let workers = self.threads.min(items.len());
        if workers <= 1 {
            return items.into_iter().map(f).collect();
        }
        let mut buckets: Vec<Vec<(usize, I)>> = (0..workers).map(|_| Vec::new()).collect();
        for (i, item) in items.into_iter().enumerate() {
            buckets[i % workers].push((i, item));
        }
        let f = &f;
        let mut done: Vec<(usize, O)> = thread::scope(|s| {
            let handles: Vec<_> = buckets
                .into_iter()
                .map(|bucket| {
                    s.spawn(move || {
                        bucket
                            .into_iter()
                            .map(|(i, item)| (i, f(item)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("client worker panicked"))
                .collect()
        });
        done.sort_by_key(|(i, _)| *i);
        done.into_iter().map(|(_, o)| o).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use fedhbn_core::federation::Sequential;

    #[test]
    fn preserves_order_and_matches_sequential() {
        let items: Vec<u64> = (0..37).collect();
        let f = |x: u64| x * x + 1;
        let seq = Sequential.map(items.clone(), f);
        for threads in [1, 2, 5, 64] {
            assert_eq!(Threaded::new(threads).map(items.clone(), f), seq);
        }
    }
}
