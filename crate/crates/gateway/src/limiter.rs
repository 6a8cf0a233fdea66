//! Token-bucket rate limiter.

use std::time::Duration;

use tokio::sync::Mutex;

use crate::clock::Clock;

/// Bucket holding up to `capacity` tokens, refilled continuously at
/// `capacity` per minute. Starts full.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBucket {
    capacity: f64,
    tokens: f64,
    per_sec: f64,
    last: Duration,
}

impl TokenBucket {
    pub fn per_minute(requests_per_minute: u32, now: Duration) -> Self {
        let capacity = requests_per_minute.max(1) as f64;
        Self {
            capacity,
            tokens: capacity,
            per_sec: capacity / 60.0,
            last: now,
        }
    }

    fn refill(&mut self, now: Duration) {
        if now > self.last {
            let gained = (now - self.last).as_secs_f64() * self.per_sec;
            self.tokens = (self.tokens + gained).min(self.capacity);
            self.last = now;
        }
    }

    /// Take one token, or report how long until one is available.
    pub fn try_take(&mut self, now: Duration) -> Result<(), Duration> {
        self.refill(now);
        if self.tokens >= 1.0 {
            self.tokens -= 1.0;
            Ok(())
        } else {
            Err(Duration::from_secs_f64((1.0 - self.tokens) / self.per_sec))
        }
    }

    pub fn available(&self) -> f64 {
        self.tokens
    }
}

#[derive(Debug)]
pub struct RateLimiter {
    bucket: Mutex<TokenBucket>,
}

impl RateLimiter {
    pub fn new(requests_per_minute: u32, clock: &dyn Clock) -> Self {
        Self {
            bucket: Mutex::new(TokenBucket::per_minute(requests_per_minute, clock.now())),
        }
    }

    /// Wait until a token is available and take it.
    pub async fn acquire(&self, clock: &dyn Clock) {
        loop {
            let wait = match self.bucket.lock().await.try_take(clock.now()) {
                Ok(()) => return,
                Err(wait) => wait,
            };
            clock.sleep(wait).await;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::VirtualClock;

    #[test]
    fn bucket_drains_then_refills() {
        let mut b = TokenBucket::per_minute(2, Duration::ZERO);
        assert!(b.try_take(Duration::ZERO).is_ok());
        assert!(b.try_take(Duration::ZERO).is_ok());
        let wait = b.try_take(Duration::ZERO).unwrap_err();
        assert_eq!(wait, Duration::from_secs(30));
        assert!(b.try_take(Duration::from_secs(30)).is_ok());
        assert!(b.try_take(Duration::from_secs(30)).is_err());
    }

    #[test]
    fn bucket_caps_at_capacity() {
        let mut b = TokenBucket::per_minute(3, Duration::ZERO);
        b.try_take(Duration::ZERO).unwrap();
        b.refill(Duration::from_secs(3600));
        assert_eq!(b.available(), 3.0);
    }

    #[tokio::test]
    async fn limiter_waits_on_virtual_clock() {
        let clock = VirtualClock::new();
        let limiter = RateLimiter::new(60, &clock);
        for _ in 0..65 {
            limiter.acquire(&clock).await;
        }
        // 60 free tokens, then one per second
        assert_eq!(clock.sleeps().len(), 5);
        assert!((clock.now().as_secs_f64() - 5.0).abs() < 1e-6);
    }
}
