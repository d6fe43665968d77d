//! Blocking HTTP plumbing shared by the search and generator clients.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Retry schedule for transport failures. Delays double after each attempt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff_ms: 1000,
        }
    }
}

impl RetryPolicy {
    /// Runs `op` until it succeeds, returns a non-transport error, or the
    /// attempts run out.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T>) -> Result<T> {
        let attempts = self.attempts.max(1);
        let mut delay = Duration::from_millis(self.initial_backoff_ms);
        let mut attempt = 1;
        loop {
            match op() {
                Err(Error::Transport(msg)) if attempt < attempts => {
                    tracing::warn!(attempt, %msg, "transport failure, retrying");
                    thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                Err(Error::Transport(msg)) => {
                    return Err(Error::Transport(format!(
                        "{msg} (after {attempts} attempts)"
                    )))
                }
                other => return other,
            }
        }
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
pub struct Limiter {
    available: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a>(&'a Limiter);

impl Limiter {
    pub fn new(capacity: usize) -> Self {
        Limiter {
            available: Mutex::new(capacity.max(1)),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap();
        while *n == 0 {
            n = self.freed.wait(n).unwrap();
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().unwrap() += 1;
        self.0.freed.notify_one();
    }
}

pub(crate) fn agent(timeout: Duration, user_agent: &str) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .user_agent(user_agent)
        .http_status_as_error(false)
        .build()
        .into()
}

/// Maps a ureq outcome onto the toolkit's error kinds: connection-level
/// failures are `Transport`, non-2xx statuses are `Backend`.
pub(crate) fn check(
    result: std::result::Result<ureq::http::Response<ureq::Body>, ureq::Error>,
) -> Result<ureq::http::Response<ureq::Body>> {
    let mut resp = result.map_err(|e| Error::Transport(e.to_string()))?;
    let status = resp.status().as_u16();
    if !(200..300).contains(&status) {
        let message = resp.body_mut().read_to_string().unwrap_or_default();
        return Err(Error::Backend { status, message });
    }
    Ok(resp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn retries_transport_then_gives_up() {
        let policy = RetryPolicy {
            attempts: 3,
            initial_backoff_ms: 1,
        };
        let mut calls = 0;
        let r: Result<()> = policy.run(|| {
            calls += 1;
            Err(Error::Transport("down".into()))
        });
        assert_eq!(calls, 3);
        assert!(matches!(r, Err(Error::Transport(_))));
    }

    #[test]
    fn backend_errors_not_retried() {
        let policy = RetryPolicy {
            attempts: 3,
            initial_backoff_ms: 1,
        };
        let mut calls = 0;
        let r: Result<()> = policy.run(|| {
            calls += 1;
            Err(Error::Backend {
                status: 500,
                message: String::new(),
            })
        });
        assert_eq!(calls, 1);
        assert!(r.is_err());
    }

    #[test]
    fn recovers_after_transient_failure() {
        let policy = RetryPolicy {
            attempts: 3,
            initial_backoff_ms: 1,
        };
        let mut calls = 0;
        let r = policy.run(|| {
            calls += 1;
            if calls < 2 {
                Err(Error::Transport("blip".into()))
            } else {
                Ok(7)
            }
        });
        assert_eq!(r.unwrap(), 7);
    }

    #[test]
    fn limiter_caps_concurrency() {
        let limiter = Arc::new(Limiter::new(2));
        let active = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let (limiter, active, peak) = (limiter.clone(), active.clone(), peak.clone());
                thread::spawn(move || {
                    let _p = limiter.acquire();
                    let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    thread::sleep(Duration::from_millis(5));
                    active.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
