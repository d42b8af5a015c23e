//! Edge admission control keyed by client IP.
//!
//! Order of checks in [`GuardState::admit`]: whitelist, active cooldown,
//! concurrent-connection limit. A non-whitelisted address is turned away and
//! earns a cooldown of its own. Three consecutive sign-in failures from an
//! address start a cooldown of exactly `cooldown_seconds`; a success in
//! between resets the count. Cooldown deadlines are never extended.
//!
//! Time is always passed in; nothing here reads a clock.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::net::IpAddr;

use crate::identity::PolicyConstants;
use crate::time::{Timestamp, SECONDS_PER_HOUR};

pub const DEFAULT_MAX_CONCURRENT_PER_IP: u32 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GuardConfig {
    pub max_failures: u32,
    pub cooldown_seconds: i64,
    pub max_concurrent_per_ip: u32,
}

impl GuardConfig {
    pub fn from_policy(policy: &PolicyConstants, max_concurrent_per_ip: u32) -> Self {
        GuardConfig {
            max_failures: policy.max_signin_failures,
            cooldown_seconds: policy.cooldown_hours as i64 * SECONDS_PER_HOUR,
            max_concurrent_per_ip,
        }
    }
}

impl Default for GuardConfig {
    fn default() -> Self {
        GuardConfig::from_policy(&PolicyConstants::default(), DEFAULT_MAX_CONCURRENT_PER_IP)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdmitReject {
    NotWhitelisted,
    CoolingDown { until: Timestamp },
    TooManyConnections,
}

impl AdmitReject {
    pub fn name(self) -> &'static str {
        match self {
            AdmitReject::NotWhitelisted => "NotWhitelisted",
            AdmitReject::CoolingDown { .. } => "CoolingDown",
            AdmitReject::TooManyConnections => "TooManyConnections",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdmitVerdict {
    Admit,
    Reject(AdmitReject),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CooldownCause {
    NotWhitelisted,
    RepeatedFailures,
}

impl CooldownCause {
    pub fn name(self) -> &'static str {
        match self {
            CooldownCause::NotWhitelisted => "NotWhitelisted",
            CooldownCause::RepeatedFailures => "RepeatedFailures",
        }
    }
}

/// Emitted whenever a new cooldown starts; drained by the caller for auditing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CooldownStarted {
    pub ip: IpAddr,
    pub started_at: Timestamp,
    pub until: Timestamp,
    pub cause: CooldownCause,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FailureOutcome {
    Counted { count: u32 },
    CooldownStarted { until: Timestamp },
    /// Already cooling down; the deadline is left alone.
    AlreadyCoolingDown { until: Timestamp },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct FailureWindow {
    count: u32,
    window_start: Timestamp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("{0} has no active connection")]
pub struct NotConnected(pub IpAddr);

#[derive(Clone, Debug)]
pub struct GuardState {
    config: GuardConfig,
    whitelist: BTreeSet<IpAddr>,
    failures: BTreeMap<IpAddr, FailureWindow>,
    cooldowns: BTreeMap<IpAddr, Timestamp>,
    active_connections: BTreeMap<IpAddr, u32>,
    events: Vec<CooldownStarted>,
}

impl GuardState {
    pub fn new(config: GuardConfig, whitelist: impl IntoIterator<Item = IpAddr>) -> Self {
        GuardState {
            config,
            whitelist: whitelist.into_iter().collect(),
            failures: BTreeMap::new(),
            cooldowns: BTreeMap::new(),
            active_connections: BTreeMap::new(),
            events: Vec::new(),
        }
    }

    pub fn config(&self) -> &GuardConfig {
        &self.config
    }

    pub fn is_whitelisted(&self, ip: IpAddr) -> bool {
        self.whitelist.contains(&ip)
    }

    pub fn whitelist(&self) -> impl Iterator<Item = &IpAddr> {
        self.whitelist.iter()
    }

    pub fn failure_count(&self, ip: IpAddr) -> u32 {
        self.failures.get(&ip).map_or(0, |w| w.count)
    }

    pub fn active_connections(&self, ip: IpAddr) -> u32 {
        self.active_connections.get(&ip).copied().unwrap_or(0)
    }

    pub fn cooldown_until(&self, ip: IpAddr, now: Timestamp) -> Option<Timestamp> {
        self.cooldowns.get(&ip).copied().filter(|until| now < *until)
    }

    /// Restores a persisted cooldown entry.
    pub fn restore_cooldown(&mut self, ip: IpAddr, until: Timestamp) {
        self.cooldowns.insert(ip, until);
    }

    pub fn admit(&mut self, ip: IpAddr, now: Timestamp) -> AdmitVerdict {
        if !self.whitelist.contains(&ip) {
            if self.cooldown_until(ip, now).is_none() {
                self.start_cooldown(ip, now, CooldownCause::NotWhitelisted);
            }
            return AdmitVerdict::Reject(AdmitReject::NotWhitelisted);
        }
        if let Some(until) = self.cooldown_until(ip, now) {
            return AdmitVerdict::Reject(AdmitReject::CoolingDown { until });
        }
        let active = self.active_connections.entry(ip).or_insert(0);
        if *active >= self.config.max_concurrent_per_ip {
            return AdmitVerdict::Reject(AdmitReject::TooManyConnections);
        }
        *active += 1;
        AdmitVerdict::Admit
    }

    pub fn record_failure(&mut self, ip: IpAddr, now: Timestamp) -> FailureOutcome {
        if let Some(until) = self.cooldown_until(ip, now) {
            return FailureOutcome::AlreadyCoolingDown { until };
        }
        let window = self.failures.entry(ip).or_insert(FailureWindow { count: 0, window_start: now });
        if window.count == 0 {
            window.window_start = now;
        }
        window.count += 1;
        if window.count < self.config.max_failures {
            return FailureOutcome::Counted { count: window.count };
        }
        self.failures.remove(&ip);
        let until = self.start_cooldown(ip, now, CooldownCause::RepeatedFailures);
        FailureOutcome::CooldownStarted { until }
    }

    pub fn record_success(&mut self, ip: IpAddr) {
        self.failures.remove(&ip);
    }

    pub fn release(&mut self, ip: IpAddr) -> Result<(), NotConnected> {
        match self.active_connections.get_mut(&ip) {
            Some(n) if *n > 0 => {
                *n -= 1;
                if *n == 0 {
                    self.active_connections.remove(&ip);
                }
                Ok(())
            }
            _ => Err(NotConnected(ip)),
        }
    }

    /// Active cooldowns, soonest deadline first.
    pub fn cooldown_report(&self, now: Timestamp) -> Vec<(IpAddr, Timestamp)> {
        let mut report: Vec<(IpAddr, Timestamp)> = self
            .cooldowns
            .iter()
            .filter(|(_, until)| **until > now)
            .map(|(ip, until)| (*ip, *until))
            .collect();
        report.sort_by_key(|(ip, until)| (*until, *ip));
        report
    }

    /// Drops expired cooldown entries.
    pub fn purge_expired(&mut self, now: Timestamp) {
        self.cooldowns.retain(|_, until| *until > now);
    }

    /// Cooldowns started since the last call.
    pub fn take_events(&mut self) -> Vec<CooldownStarted> {
        core::mem::take(&mut self.events)
    }

    fn start_cooldown(&mut self, ip: IpAddr, now: Timestamp, cause: CooldownCause) -> Timestamp {
        let until = now.plus_seconds(self.config.cooldown_seconds);
        self.cooldowns.insert(ip, until);
        self.events.push(CooldownStarted { ip, started_at: now, until, cause });
        until
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::net::Ipv4Addr;

    const T: Timestamp = Timestamp::from_unix(1_790_000_000);
    const DAY: i64 = 86_400;

    fn ip(last: u8) -> IpAddr {
        IpAddr::V4(Ipv4Addr::new(10, 0, 0, last))
    }

    fn guard() -> GuardState {
        GuardState::new(GuardConfig::default(), [ip(1), ip(2), ip(3)])
    }

    #[test]
    fn whitelisted_ip_is_admitted() {
        let mut g = guard();
        assert_eq!(g.admit(ip(1), T), AdmitVerdict::Admit);
        assert_eq!(g.active_connections(ip(1)), 1);
    }

    #[test]
    fn stranger_is_kicked_and_locked_out() {
        let mut g = guard();
        assert_eq!(g.admit(ip(9), T), AdmitVerdict::Reject(AdmitReject::NotWhitelisted));
        assert_eq!(g.cooldown_report(T), [(ip(9), T.plus_seconds(DAY))]);
        let events = g.take_events();
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].cause, CooldownCause::NotWhitelisted);
        // A second probe neither extends the lockout nor changes the verdict.
        assert_eq!(g.admit(ip(9), T.plus_seconds(5)), AdmitVerdict::Reject(AdmitReject::NotWhitelisted));
        assert_eq!(g.cooldown_report(T), [(ip(9), T.plus_seconds(DAY))]);
        assert!(g.take_events().is_empty());
    }

    #[test]
    fn three_strikes() {
        let mut g = guard();
        g.admit(ip(1), T);
        assert_eq!(g.record_failure(ip(1), T), FailureOutcome::Counted { count: 1 });
        assert_eq!(g.record_failure(ip(1), T.plus_seconds(1)), FailureOutcome::Counted { count: 2 });
        let until = T.plus_seconds(2 + DAY);
        assert_eq!(g.record_failure(ip(1), T.plus_seconds(2)), FailureOutcome::CooldownStarted { until });
        assert_eq!(g.failure_count(ip(1)), 0);
        assert_eq!(
            g.admit(ip(1), T.plus_seconds(3)),
            AdmitVerdict::Reject(AdmitReject::CoolingDown { until })
        );
        assert_eq!(g.record_failure(ip(1), T.plus_seconds(4)), FailureOutcome::AlreadyCoolingDown { until });
        assert_eq!(g.cooldown_report(T.plus_seconds(4)), [(ip(1), until)]);
        assert_eq!(g.admit(ip(1), until.minus_seconds(1)), AdmitVerdict::Reject(AdmitReject::CoolingDown { until }));
        assert_eq!(g.admit(ip(1), until), AdmitVerdict::Admit);
    }

    #[test]
    fn success_resets_the_count() {
        let mut g = guard();
        g.record_failure(ip(1), T);
        g.record_failure(ip(1), T);
        g.record_success(ip(1));
        assert_eq!(g.failure_count(ip(1)), 0);
        g.record_failure(ip(1), T);
        g.record_failure(ip(1), T);
        assert!(g.cooldown_report(T).is_empty());
        assert!(matches!(g.record_failure(ip(1), T), FailureOutcome::CooldownStarted { .. }));
    }

    #[test]
    fn success_without_failures_is_identity() {
        let mut g = guard();
        g.record_success(ip(1));
        assert_eq!(g.failure_count(ip(1)), 0);
        assert!(g.cooldown_report(T).is_empty());
    }

    #[test]
    fn connection_limit() {
        let mut g = guard();
        for _ in 0..8 {
            assert_eq!(g.admit(ip(2), T), AdmitVerdict::Admit);
        }
        assert_eq!(g.admit(ip(2), T), AdmitVerdict::Reject(AdmitReject::TooManyConnections));
        g.release(ip(2)).unwrap();
        assert_eq!(g.admit(ip(2), T), AdmitVerdict::Admit);
        assert_eq!(g.release(ip(3)), Err(NotConnected(ip(3))));
    }

    #[test]
    fn report_filters_and_sorts() {
        let mut g = guard();
        assert!(g.cooldown_report(T).is_empty());
        g.restore_cooldown(ip(1), T.plus_seconds(300));
        g.restore_cooldown(ip(2), T.plus_seconds(100));
        g.restore_cooldown(ip(3), T.plus_seconds(200));
        g.restore_cooldown(ip(4), T.minus_seconds(1));
        let report = g.cooldown_report(T);
        assert_eq!(report.iter().map(|(i, _)| *i).collect::<Vec<_>>(), [ip(2), ip(3), ip(1)]);
        g.purge_expired(T.plus_seconds(150));
        assert_eq!(g.cooldown_report(T).len(), 2);
    }
}
