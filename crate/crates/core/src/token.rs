//! Time-stepped one-time codes (the hardware-token factor).
//!
//! A code is HMAC-SHA-256 of the 8-byte big-endian time counter under the
//! principal's seed, reduced by 31-bit dynamic truncation and taken modulo
//! `10^digits`. Verification accepts counters within one step either side of
//! the current one, and only counters strictly above the last accepted one,
//! so every code is usable at most once.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};

use rand_core::CryptoRngCore;

use crate::crypto::{ct_eq, mac};
use crate::identity::Registry;
use crate::time::Timestamp;

pub const SEED_LEN: usize = 20;
pub const DEFAULT_STEP_SECONDS: u32 = 30;
pub const DEFAULT_DIGITS: u8 = 6;
pub const MIN_DIGITS: u8 = 6;
pub const MAX_DIGITS: u8 = 9;
/// Counters accepted either side of the current one.
pub const SKEW_STEPS: i64 = 1;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum TokenError {
    #[error("no principal {0:?}")]
    UnknownPrincipal(String),
    #[error("principal {0:?} already has a token seed; an administrator must reset it first")]
    AlreadyProvisioned(String),
    #[error("digits must be in {MIN_DIGITS}..={MAX_DIGITS}, got {0}")]
    InvalidDigits(u8),
    #[error("step must be positive")]
    InvalidStep,
}

#[derive(Clone, PartialEq, Eq)]
pub struct TokenSeed {
    principal_id: String,
    seed: [u8; SEED_LEN],
    step_seconds: u32,
    digits: u8,
    last_accepted_counter: i64,
}

impl core::fmt::Debug for TokenSeed {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("TokenSeed")
            .field("principal_id", &self.principal_id)
            .field("step_seconds", &self.step_seconds)
            .field("digits", &self.digits)
            .field("last_accepted_counter", &self.last_accepted_counter)
            .finish_non_exhaustive()
    }
}

impl TokenSeed {
    pub fn new(principal_id: &str, seed: [u8; SEED_LEN], step_seconds: u32, digits: u8) -> Result<Self, TokenError> {
        if !(MIN_DIGITS..=MAX_DIGITS).contains(&digits) {
            return Err(TokenError::InvalidDigits(digits));
        }
        if step_seconds == 0 {
            return Err(TokenError::InvalidStep);
        }
        Ok(TokenSeed {
            principal_id: principal_id.to_string(),
            seed,
            step_seconds,
            digits,
            last_accepted_counter: -1,
        })
    }

    /// Restores persisted state including the replay high-water mark.
    pub fn with_last_accepted(mut self, counter: i64) -> Self {
        self.last_accepted_counter = counter;
        self
    }

    pub fn principal_id(&self) -> &str {
        &self.principal_id
    }

    pub fn seed(&self) -> &[u8; SEED_LEN] {
        &self.seed
    }

    pub fn step_seconds(&self) -> u32 {
        self.step_seconds
    }

    pub fn digits(&self) -> u8 {
        self.digits
    }

    pub fn last_accepted_counter(&self) -> i64 {
        self.last_accepted_counter
    }

    pub fn counter_at(&self, now: Timestamp) -> i64 {
        now.unix().div_euclid(self.step_seconds as i64)
    }

    pub fn code_for_counter(&self, counter: i64) -> String {
        let tag = mac(&self.seed, &(counter as u64).to_be_bytes()).expect("seed is 20 bytes");
        let offset = (tag[tag.len() - 1] & 0x0f) as usize;
        let word = u32::from_be_bytes([tag[offset], tag[offset + 1], tag[offset + 2], tag[offset + 3]]) & 0x7fff_ffff;
        let modulus = 10u64.pow(self.digits as u32);
        format!("{:0width$}", word as u64 % modulus, width = self.digits as usize)
    }
}

pub fn current_token(seed: &TokenSeed, now: Timestamp) -> String {
    seed.code_for_counter(seed.counter_at(now))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenReject {
    BadCode,
    Replay,
    UnknownPrincipal,
}

impl TokenReject {
    pub fn name(self) -> &'static str {
        match self {
            TokenReject::BadCode => "BadCode",
            TokenReject::Replay => "Replay",
            TokenReject::UnknownPrincipal => "UnknownPrincipal",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenVerdict {
    Accept { counter: i64 },
    Reject(TokenReject),
}

/// Seeds by principal id.
///
/// `verify_token` is a compare-and-advance on the principal's counter;
/// concurrent callers must hold exclusive access to the store.
#[derive(Clone, Debug, Default)]
pub struct TokenStore {
    seeds: BTreeMap<String, TokenSeed>,
    step_seconds: u32,
    digits: u8,
}

impl TokenStore {
    pub fn new() -> Self {
        TokenStore::with_parameters(DEFAULT_STEP_SECONDS, DEFAULT_DIGITS).expect("defaults are valid")
    }

    /// Store whose newly provisioned seeds use `step_seconds` and `digits`.
    pub fn with_parameters(step_seconds: u32, digits: u8) -> Result<Self, TokenError> {
        TokenSeed::new("", [0; SEED_LEN], step_seconds, digits)?;
        Ok(TokenStore { seeds: BTreeMap::new(), step_seconds, digits })
    }

    pub fn get(&self, principal_id: &str) -> Option<&TokenSeed> {
        self.seeds.get(principal_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &TokenSeed> {
        self.seeds.values()
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    /// Inserts previously persisted state.
    pub fn insert(&mut self, seed: TokenSeed) {
        self.seeds.insert(seed.principal_id.clone(), seed);
    }

    /// Draws a fresh seed for a registered principal. The returned value is
    /// the only copy handed out for enrollment.
    pub fn provision_seed(
        &mut self,
        registry: &Registry,
        principal_id: &str,
        rng: &mut impl CryptoRngCore,
    ) -> Result<TokenSeed, TokenError> {
        if !registry.contains(principal_id) {
            return Err(TokenError::UnknownPrincipal(principal_id.to_string()));
        }
        if self.seeds.contains_key(principal_id) {
            return Err(TokenError::AlreadyProvisioned(principal_id.to_string()));
        }
        let mut seed = [0u8; SEED_LEN];
        rng.fill_bytes(&mut seed);
        let token = TokenSeed::new(principal_id, seed, self.step_seconds, self.digits)?;
        self.seeds.insert(principal_id.to_string(), token.clone());
        Ok(token)
    }

    /// Administrative reset; the principal must be provisioned again.
    pub fn reset_seed(&mut self, principal_id: &str) -> Result<(), TokenError> {
        self.seeds
            .remove(principal_id)
            .map(|_| ())
            .ok_or_else(|| TokenError::UnknownPrincipal(principal_id.to_string()))
    }

    pub fn verify_token(&mut self, principal_id: &str, code: &str, now: Timestamp) -> TokenVerdict {
        let Some(seed) = self.seeds.get_mut(principal_id) else {
            return TokenVerdict::Reject(TokenReject::UnknownPrincipal);
        };
        if code.len() != seed.digits as usize || !code.bytes().all(|b| b.is_ascii_digit()) {
            return TokenVerdict::Reject(TokenReject::BadCode);
        }
        let current = seed.counter_at(now);
        let mut replayed = false;
        for counter in current - SKEW_STEPS..=current + SKEW_STEPS {
            if !ct_eq(seed.code_for_counter(counter).as_bytes(), code.as_bytes()) {
                continue;
            }
            if counter > seed.last_accepted_counter {
                seed.last_accepted_counter = counter;
                return TokenVerdict::Accept { counter };
            }
            replayed = true;
        }
        TokenVerdict::Reject(if replayed { TokenReject::Replay } else { TokenReject::BadCode })
    }
}
