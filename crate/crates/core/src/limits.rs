//! Concurrency and rate limits for calls to remote services.

use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};

/// Counting semaphore bounding the number of in-flight calls.
#[derive(Debug)]
pub struct InflightLimit {
    max: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

pub struct InflightPermit<'a> {
    limit: &'a InflightLimit,
}

impl InflightLimit {
    pub fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn max(&self) -> usize {
        self.max
    }

    pub fn acquire(&self) -> InflightPermit<'_> {
        let mut active = self.active.lock();
        while *active >= self.max {
            self.freed.wait(&mut active);
        }
        *active += 1;
        InflightPermit { limit: self }
    }

    pub fn active(&self) -> usize {
        *self.active.lock()
    }
}

impl Drop for InflightPermit<'_> {
    fn drop(&mut self) {
        let mut active = self.limit.active.lock();
        *active -= 1;
        self.limit.freed.notify_one();
    }
}

/// Token bucket: `capacity` burst, refilled at `per_second` tokens/s.
#[derive(Debug)]
pub struct TokenBucket {
    capacity: f64,
    per_second: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn new(capacity: u32, per_second: f64) -> Self {
        assert!(per_second > 0.0, "refill rate must be positive");
        let capacity = f64::from(capacity.max(1));
        Self {
            capacity,
            per_second,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    /// Takes one token if available without waiting.
    pub fn try_acquire(&self) -> bool {
        let mut state = self.state.lock();
        self.refill(&mut state);
        if state.0 >= 1.0 {
            state.0 -= 1.0;
            true
        } else {
            false
        }
    }

    /// Blocks until a token is available.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock();
                self.refill(&mut state);
                if state.0 >= 1.0 {
                    state.0 -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - state.0) / self.per_second)
            };
            std::thread::sleep(wait);
        }
    }

    fn refill(&self, state: &mut (f64, Instant)) {
        let now = Instant::now();
        let elapsed = now.duration_since(state.1).as_secs_f64();
        state.0 = (state.0 + elapsed * self.per_second).min(self.capacity);
        state.1 = now;
    }
}
