//! Bounded retry with exponential backoff, shared by the HTTP clients.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    #[serde(with = "millis")]
    pub initial_backoff: Duration,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff: Duration::from_secs(1),
            multiplier: 2.0,
        }
    }
}

/// Outcome of one attempt: either worth retrying or final.
#[derive(Debug)]
pub enum Attempt<E> {
    Retry(E),
    Fatal(E),
}

impl RetryPolicy {
    pub fn no_delay(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            initial_backoff: Duration::ZERO,
            multiplier: 1.0,
        }
    }

    /// Delay slept after the given failed attempt (1-based).
    pub fn backoff_after(&self, attempt: u32) -> Duration {
        let factor = self.multiplier.powi(attempt.saturating_sub(1) as i32);
        self.initial_backoff.mul_f64(factor)
    }

    /// Runs `op` until it succeeds, fails fatally, or attempts run out.
    /// The closure receives the 1-based attempt number.
    pub fn run<T, E>(&self, mut op: impl FnMut(u32) -> Result<T, Attempt<E>>) -> Result<T, E> {
        let attempts = self.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            match op(attempt) {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) if attempt >= attempts => return Err(e),
                Err(Attempt::Retry(_)) => {
                    let delay = self.backoff_after(attempt);
                    tracing::debug!(attempt, ?delay, "retrying");
                    if !delay.is_zero() {
                        thread::sleep(delay);
                    }
                    attempt += 1;
                }
            }
        }
    }
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_from_one_second() {
        let p = RetryPolicy::default();
        assert_eq!(p.backoff_after(1), Duration::from_secs(1));
        assert_eq!(p.backoff_after(2), Duration::from_secs(2));
        assert_eq!(p.backoff_after(3), Duration::from_secs(4));
    }

    #[test]
    fn stops_after_max_attempts() {
        let mut calls = 0;
        let r: Result<(), &str> = RetryPolicy::no_delay(3).run(|_| {
            calls += 1;
            Err(Attempt::Retry("down"))
        });
        assert_eq!(r, Err("down"));
        assert_eq!(calls, 3);
    }

    #[test]
    fn fatal_is_not_retried() {
        let mut calls = 0;
        let r: Result<(), &str> = RetryPolicy::no_delay(3).run(|_| {
            calls += 1;
            Err(Attempt::Fatal("bad request"))
        });
        assert!(r.is_err());
        assert_eq!(calls, 1);
    }

    #[test]
    fn succeeds_on_second_attempt() {
        let r: Result<u32, &str> = RetryPolicy::no_delay(3).run(|a| {
            if a < 2 {
                Err(Attempt::Retry("flaky"))
            } else {
                Ok(a)
            }
        });
        assert_eq!(r, Ok(2));
    }
}
