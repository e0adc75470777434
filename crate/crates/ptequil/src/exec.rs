//! Scoped-thread scenario executor and a wall clock for traces.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use ptequil_core::admm::{Clock, ScenarioExecutor};

/// Runs scenario jobs on up to `threads` workers. Workers pull indices from
/// a shared counter; results are returned in index order.
#[derive(Debug, Clone, Copy)]
pub struct Threaded {
    pub threads: usize,
}

impl ScenarioExecutor for Threaded {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync,
    {
        let workers = self.threads.min(n);
        if workers <= 1 {
            return (0..n).map(f).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<T>>> = (0..n).map(|_| Mutex::new(None)).collect();
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let k = next.fetch_add(1, Ordering::Relaxed);
                    if k >= n {
                        break;
                    }
                    let value = f(k);
                    *slots[k].lock().expect("slot") = Some(value);
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().expect("slot").expect("every index ran"))
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct WallClock(Instant);

impl WallClock {
    pub fn start() -> Self {
        Self(Instant::now())
    }
}

impl Clock for WallClock {
    fn elapsed_ms(&self) -> f64 {
        self.0.elapsed().as_secs_f64() * 1e3
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threaded_preserves_order() {
        let out = Threaded { threads: 3 }.map(10, |k| k * k);
        assert_eq!(out, (0..10).map(|k| k * k).collect::<Vec<_>>());
        assert!(Threaded { threads: 4 }.map(0, |k| k).is_empty());
    }
}
