use alloc::collections::BTreeMap;
use alloc::string::String;
use core::fmt;

use crate::crypto::{hash, Digest};
use crate::time::Timestamp;

pub const NONCE_LEN: usize = 16;
pub const DEFAULT_MAX_AGE_SECONDS: i64 = 120;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Nonce([u8; NONCE_LEN]);

impl Nonce {
    pub const fn from_bytes(bytes: [u8; NONCE_LEN]) -> Self {
        Nonce(bytes)
    }

    pub fn random(rng: &mut impl rand_core::CryptoRngCore) -> Self {
        let mut bytes = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut bytes);
        Nonce(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; NONCE_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Exactly 32 lowercase hex characters.
    pub fn from_hex(text: &str) -> Option<Self> {
        if text.len() != 2 * NONCE_LEN || !crate::crypto::is_lower_hex(text) {
            return None;
        }
        let mut bytes = [0u8; NONCE_LEN];
        hex::decode_to_slice(text, &mut bytes).ok()?;
        Some(Nonce(bytes))
    }
}

impl fmt::Debug for Nonce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Nonce({})", self.to_hex())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Freshness {
    Ok,
    Stale,
    Replayed,
}

impl Freshness {
    pub fn name(self) -> &'static str {
        match self {
            Freshness::Ok => "Ok",
            Freshness::Stale => "Stale",
            Freshness::Replayed => "Replayed",
        }
    }
}

/// Replay window. A request is fresh when its nonce has not been seen and its
/// timestamp is within `max_age_seconds` of `now` in either direction. A
/// remembered nonce reports `Replayed` whatever its timestamp. Nonces are
/// remembered until their timestamp ages out, after which any copy of the
/// request is stale anyway.
#[derive(Clone, Debug)]
pub struct FreshnessWindow {
    max_age_seconds: i64,
    seen: BTreeMap<Nonce, Timestamp>,
}

impl Default for FreshnessWindow {
    fn default() -> Self {
        FreshnessWindow::new(DEFAULT_MAX_AGE_SECONDS)
    }
}

impl FreshnessWindow {
    pub fn new(max_age_seconds: i64) -> Self {
        FreshnessWindow { max_age_seconds: max_age_seconds.max(0), seen: BTreeMap::new() }
    }

    pub fn max_age_seconds(&self) -> i64 {
        self.max_age_seconds
    }

    pub fn remembered(&self) -> usize {
        self.seen.len()
    }

    pub fn check_freshness(&mut self, request_ts: Timestamp, nonce: Nonce, now: Timestamp) -> Freshness {
        if let Some(expiry) = self.seen.get(&nonce) {
            if *expiry >= now {
                return Freshness::Replayed;
            }
        }
        if now.seconds_since(request_ts).saturating_abs() > self.max_age_seconds {
            return Freshness::Stale;
        }
        if self.seen.len() % 1024 == 1023 {
            self.prune(now);
        }
        self.seen.insert(nonce, request_ts.plus_seconds(self.max_age_seconds));
        Freshness::Ok
    }

    pub fn prune(&mut self, now: Timestamp) {
        self.seen.retain(|_, expiry| *expiry >= now);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Integrity {
    Ok,
    TamperDetected,
}

/// Compares the digest of `message` against the one the sender claimed.
pub fn verify_payload_integrity(message: &[u8], claimed: &Digest) -> Integrity {
    if hash(message) == *claimed {
        Integrity::Ok
    } else {
        Integrity::TamperDetected
    }
}
