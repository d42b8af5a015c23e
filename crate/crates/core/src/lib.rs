//! Core state machines for the Prometheus identity gateway.
//!
//! Everything in this crate is `no_std` + `alloc`, performs no IO and never
//! reads a clock: every time-dependent operation takes the current
//! [`Timestamp`] as an argument, and every operation needing randomness takes
//! a caller-supplied [`rand_core::CryptoRngCore`]. The `prometheus-gateway`
//! crate wires these pieces to files, HTTP and a real or simulated clock.
//!
//! Module map:
//!
//! - [`crypto`]: SHA-256 digests, salted credentials, HMAC, RSA signatures.
//! - [`pki`]: certificate authority, certificates, signed revocation lists.
//! - [`token`]: time-stepped one-time codes with replay rejection.
//! - [`identity`]: principal registry, ACLs, least-privilege decisions.
//! - [`guard`]: IP whitelist, three-strike cooldown, connection limits.
//! - [`session`]: two-factor sign-in, SSO sessions, freshness, receipts.
//! - [`audit`]: hash-chained append-only log and escalation detection.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod audit;
pub mod crypto;
pub mod guard;
pub mod identity;
pub mod pki;
pub mod session;
pub mod time;
pub mod token;

pub use time::Timestamp;
