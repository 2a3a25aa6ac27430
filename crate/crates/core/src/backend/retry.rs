use std::fmt;
use std::time::Duration;

use super::BackendError;

/// Bounded retries with a per-attempt backoff schedule. When there are more
/// retries than schedule entries the last delay repeats.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff: Vec<Duration>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff: vec![Duration::from_millis(500), Duration::from_secs(2), Duration::from_secs(5)],
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            backoff: Vec::new(),
        }
    }

    /// Delay before retry number `retry` (1-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let idx = (retry as usize).saturating_sub(1);
        self.backoff
            .get(idx)
            .or_else(|| self.backoff.last())
            .copied()
            .unwrap_or(Duration::ZERO)
    }
}

/// Transport-level failure worth retrying.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransientCause {
    Timeout,
    Connect(String),
    Unavailable(u16),
}

impl fmt::Display for TransientCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Timeout => f.write_str("timeout"),
            Self::Connect(msg) => write!(f, "connection failed: {msg}"),
            Self::Unavailable(status) => write!(f, "service unavailable (HTTP {status})"),
        }
    }
}

#[derive(Debug)]
pub enum AttemptError {
    Transient(TransientCause),
    /// Not retried. Well-formed model errors land here so reruns stay
    /// reproducible.
    Fatal(BackendError),
}

/// Runs `op` until it succeeds, fails fatally, or the attempt budget is
/// spent. Returns the value and the number of attempts made.
pub fn run_with_retry<T>(
    policy: &RetryPolicy,
    endpoint: &str,
    mut op: impl FnMut(u32) -> Result<T, AttemptError>,
) -> Result<(T, u32), BackendError> {
    let max = policy.max_attempts.max(1);
    let mut attempt = 1;
    loop {
        match op(attempt) {
            Ok(v) => return Ok((v, attempt)),
            Err(AttemptError::Fatal(e)) => return Err(e),
            Err(AttemptError::Transient(cause)) if attempt >= max => {
                return Err(BackendError::ExhaustedRetries {
                    endpoint: endpoint.to_string(),
                    attempts: attempt,
                    last: cause,
                })
            }
            Err(AttemptError::Transient(cause)) => {
                let delay = policy.delay(attempt);
                log::warn!("{endpoint}: attempt {attempt} failed ({cause}), retrying in {delay:?}");
                std::thread::sleep(delay);
                attempt += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flaky(failures: u32) -> impl FnMut(u32) -> Result<&'static str, AttemptError> {
        let mut seen = 0;
        move |_| {
            seen += 1;
            if seen <= failures {
                Err(AttemptError::Transient(TransientCause::Unavailable(503)))
            } else {
                Ok("ok")
            }
        }
    }

    #[test]
    fn succeeds_on_third_attempt() {
        let (v, attempts) = run_with_retry(&RetryPolicy::no_delay(3), "gen", flaky(2)).unwrap();
        assert_eq!((v, attempts), ("ok", 3));
    }

    #[test]
    fn single_attempt_exhausts() {
        let err = run_with_retry(&RetryPolicy::no_delay(1), "gen", flaky(1)).unwrap_err();
        assert!(matches!(err, BackendError::ExhaustedRetries { attempts: 1, .. }));
    }

    #[test]
    fn fatal_errors_are_not_retried() {
        let mut calls = 0;
        let err = run_with_retry(&RetryPolicy::no_delay(5), "gen", |_| -> Result<(), _> {
            calls += 1;
            Err(AttemptError::Fatal(BackendError::Protocol("bad json".into())))
        })
        .unwrap_err();
        assert_eq!(calls, 1);
        assert!(matches!(err, BackendError::Protocol(_)));
    }

    #[test]
    fn delay_schedule_repeats_last() {
        let p = RetryPolicy {
            max_attempts: 5,
            backoff: vec![Duration::from_millis(1), Duration::from_millis(2)],
        };
        assert_eq!(p.delay(1), Duration::from_millis(1));
        assert_eq!(p.delay(2), Duration::from_millis(2));
        assert_eq!(p.delay(4), Duration::from_millis(2));
        assert_eq!(RetryPolicy::no_delay(2).delay(1), Duration::ZERO);
    }
}
