use std::sync::Mutex;
use std::time::{Duration, Instant};

/// Grants at most `rate` permits per second. Successive grants are at least
/// `1 / rate` apart, so N grants span at least `(N - 1) / rate`.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn new(per_sec: f64) -> Self {
        assert!(per_sec.is_finite() && per_sec > 0.0, "rate must be positive");
        Self {
            interval: Duration::from_secs_f64(1.0 / per_sec),
            next: Mutex::new(None),
        }
    }

    pub fn interval(&self) -> Duration {
        self.interval
    }

    /// Block until the next slot. Safe to call from many threads; the slot
    /// is reserved under the lock and the sleep happens outside it.
    pub fn acquire(&self) {
        let wait = {
            let mut next = self.next.lock().unwrap_or_else(|e| e.into_inner());
            let now = Instant::now();
            let slot = match *next {
                Some(t) if t > now => t,
                _ => now,
            };
            *next = Some(slot + self.interval);
            slot.saturating_duration_since(now)
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn spacing_holds_across_threads() {
        let lim = Arc::new(RateLimiter::new(50.0));
        let start = Instant::now();
        let handles: Vec<_> = (0..4)
            .map(|_| {
                let lim = Arc::clone(&lim);
                std::thread::spawn(move || {
                    for _ in 0..3 {
                        lim.acquire();
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        // 12 grants at 50/s: at least 11 intervals of 20 ms.
        assert!(start.elapsed() >= Duration::from_millis(220));
    }

    #[test]
    fn first_grant_is_immediate() {
        let lim = RateLimiter::new(0.5);
        let start = Instant::now();
        lim.acquire();
        assert!(start.elapsed() < Duration::from_millis(100));
    }
}
