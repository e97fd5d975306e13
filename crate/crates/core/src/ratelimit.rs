//! Token-bucket byte-rate limiter shared by all streams of one storage node.
//!
//! The bucket holds at most 0.1 s worth of tokens and starts empty. Callers
//! take tokens before moving bytes; when the balance goes negative the caller
//! sleeps until the debt is repaid, so concurrent streams split the rate
//! between them instead of each getting the full rate.

use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

/// Burst allowance, in seconds of tokens.
pub const BURST_SECONDS: f64 = 0.1;

#[derive(Debug)]
struct Bucket {
    rate: f64,
    capacity: f64,
    tokens: f64,
    last_refill: Instant,
}

impl Bucket {
    fn refill(&mut self, now: Instant) {
        let elapsed = now.saturating_duration_since(self.last_refill).as_secs_f64();
        self.tokens = (self.tokens + elapsed * self.rate).min(self.capacity);
        self.last_refill = now;
    }
}

/// A thread-safe limiter. `rate_bps == 0` means unlimited.
#[derive(Debug)]
pub struct RateLimiter {
    bucket: Option<Mutex<Bucket>>,
    rate_bps: u64,
}

impl RateLimiter {
    pub fn new(rate_bps: u64) -> Self {
        let bucket = (rate_bps > 0).then(|| {
            let rate = rate_bps as f64;
            Mutex::new(Bucket {
                rate,
                capacity: rate * BURST_SECONDS,
                tokens: 0.0,
                last_refill: Instant::now(),
            })
        });
        RateLimiter { bucket, rate_bps }
    }

    pub fn unlimited() -> Self {
        Self::new(0)
    }

    pub fn rate_bps(&self) -> u64 {
        self.rate_bps
    }

    pub fn is_limited(&self) -> bool {
        self.bucket.is_some()
    }

    /// Take `n` tokens, sleeping as long as needed to stay under the rate.
    pub fn acquire(&self, n: u64) {
        let Some(bucket) = &self.bucket else { return };
        let wait = {
            let mut b = bucket.lock().unwrap_or_else(|e| e.into_inner());
            b.refill(Instant::now());
            b.tokens -= n as f64;
            if b.tokens < 0.0 {
                Duration::from_secs_f64(-b.tokens / b.rate)
            } else {
                Duration::ZERO
            }
        };
        if !wait.is_zero() {
            thread::sleep(wait);
        }
    }

    /// Forfeit any accumulated burst credit. Outstanding debt is kept.
    pub fn drain_burst(&self) {
        if let Some(bucket) = &self.bucket {
            let mut b = bucket.lock().unwrap_or_else(|e| e.into_inner());
            b.refill(Instant::now());
            b.tokens = b.tokens.min(0.0);
        }
    }
}

impl Default for RateLimiter {
    fn default() -> Self {
        Self::unlimited()
    }
}
