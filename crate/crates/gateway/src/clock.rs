use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use prometheus_core::Timestamp;

/// Wall clock, or a manually advanced one shared by clones.
#[derive(Clone, Debug)]
pub enum Clock {
    Real,
    Simulated(SimulatedClock),
}

#[derive(Clone, Debug)]
pub struct SimulatedClock(Arc<AtomicI64>);

impl SimulatedClock {
    pub fn new(start: Timestamp) -> Self {
        SimulatedClock(Arc::new(AtomicI64::new(start.unix())))
    }

    pub fn now(&self) -> Timestamp {
        Timestamp::from_unix(self.0.load(Ordering::SeqCst))
    }

    pub fn advance(&self, seconds: i64) -> Timestamp {
        Timestamp::from_unix(self.0.fetch_add(seconds, Ordering::SeqCst) + seconds)
    }

    pub fn set(&self, at: Timestamp) {
        self.0.store(at.unix(), Ordering::SeqCst);
    }
}

impl Clock {
    pub fn simulated(start: Timestamp) -> Self {
        Clock::Simulated(SimulatedClock::new(start))
    }

    /// `real`, or `simulated:<rfc3339>` (the prefix is case-insensitive).
    pub fn parse(text: &str) -> Result<Self, String> {
        if text.eq_ignore_ascii_case("real") {
            return Ok(Clock::Real);
        }
        match text.split_once(':') {
            Some((mode, start)) if mode.eq_ignore_ascii_case("simulated") => Timestamp::parse_rfc3339(start)
                .map(Clock::simulated)
                .map_err(|_| format!("invalid simulated clock start {start:?}")),
            _ => Err(format!("unknown clock mode {text:?}")),
        }
    }

    pub fn now(&self) -> Timestamp {
        match self {
            Clock::Real => {
                let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs() as i64).unwrap_or(0);
                Timestamp::from_unix(secs)
            }
            Clock::Simulated(c) => c.now(),
        }
    }

    pub fn as_simulated(&self) -> Option<&SimulatedClock> {
        match self {
            Clock::Simulated(c) => Some(c),
            Clock::Real => None,
        }
    }
}
