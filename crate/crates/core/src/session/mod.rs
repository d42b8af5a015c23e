//! Two-factor sign-in and single-sign-on sessions.
//!
//! A session is issued only when at least two distinct factor kinds verify
//! for the same principal. Sessions live server-side, keyed by the digest of
//! their bearer id, and are bound to the client IP they were issued to: a
//! request from any other address invalidates the session on the spot.

mod context;
mod freshness;
mod receipt;

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::net::IpAddr;

use alloc::collections::BTreeMap;
use rand_core::CryptoRngCore;

use crate::audit::{actions, AuditLog, Outcome};
use crate::crypto::{hash, verify_salted, verify_signature, PublicKey, Signature};
use crate::guard::{CooldownStarted, GuardState};
use crate::identity::{check_access, AccessDecision, AccessDenyReason, AccessPolicy, FactorKind, FactorSet, Registry};
use crate::pki::{validate_certificate, Certificate, InvalidReason, RevocationList, ValidationResult};
use crate::time::{Timestamp, SECONDS_PER_MINUTE};
use crate::token::{TokenReject, TokenStore, TokenVerdict};

pub use context::{
    establish_trusted_context, ContextError, ContextOutcome, ContextScope, EncryptionLevel, TrustedContext,
    ADMIN_CONTACT_NOTICE,
};
pub use freshness::{verify_payload_integrity, Freshness, FreshnessWindow, Integrity, Nonce, DEFAULT_MAX_AGE_SECONDS};
pub use receipt::{issue_receipt, verify_receipt, ReceiptError, SignedReceipt};

pub const SESSION_ID_LEN: usize = 32;

/// Bearer identifier; 64 hex characters on the wire.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct SessionId([u8; SESSION_ID_LEN]);

impl SessionId {
    pub fn random(rng: &mut impl CryptoRngCore) -> Self {
        let mut bytes = [0u8; SESSION_ID_LEN];
        rng.fill_bytes(&mut bytes);
        SessionId(bytes)
    }

    pub const fn from_bytes(bytes: [u8; SESSION_ID_LEN]) -> Self {
        SessionId(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; SESSION_ID_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(text: &str) -> Option<Self> {
        if text.len() != 2 * SESSION_ID_LEN || !crate::crypto::is_lower_hex(text) {
            return None;
        }
        let mut bytes = [0u8; SESSION_ID_LEN];
        hex::decode_to_slice(text, &mut bytes).ok()?;
        Some(SessionId(bytes))
    }

    fn lookup_key(&self) -> [u8; 32] {
        *hash(&self.0).as_bytes()
    }
}

impl fmt::Debug for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Bearer secret; show a prefix only.
        write!(f, "SessionId({}..)", &self.to_hex()[..8])
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Session {
    pub session_id: SessionId,
    pub principal_id: String,
    pub issued_at: Timestamp,
    pub expires_at: Timestamp,
    pub bound_ip: IpAddr,
    pub factors: FactorSet,
}

impl Session {
    pub fn is_live(&self, now: Timestamp) -> bool {
        self.issued_at <= now && now <= self.expires_at
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FactorFailure {
    Certificate(InvalidReason),
    Token(TokenReject),
    Password,
}

impl FactorFailure {
    pub fn kind(&self) -> FactorKind {
        match self {
            FactorFailure::Certificate(_) => FactorKind::Certificate,
            FactorFailure::Token(_) => FactorKind::Token,
            FactorFailure::Password => FactorKind::Password,
        }
    }

    /// e.g. `Certificate:Revoked`, `Token:Replay`, `Password:Mismatch`.
    pub fn describe(&self) -> String {
        match self {
            FactorFailure::Certificate(r) => format!("Certificate:{}", r.name()),
            FactorFailure::Token(r) => format!("Token:{}", r.name()),
            FactorFailure::Password => "Password:Mismatch".to_string(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum SigninFailure {
    #[error("at least two distinct factor kinds are required")]
    InsufficientFactors,
    #[error("factor rejected: {0:?}")]
    FactorInvalid(FactorFailure),
    #[error("factors name different principals")]
    IdentityMismatch,
}

impl SigninFailure {
    pub fn name(&self) -> &'static str {
        match self {
            SigninFailure::InsufficientFactors => "InsufficientFactors",
            SigninFailure::FactorInvalid(_) => "FactorInvalid",
            SigninFailure::IdentityMismatch => "IdentityMismatch",
        }
    }

    pub fn describe(&self) -> String {
        match self {
            SigninFailure::FactorInvalid(f) => format!("FactorInvalid:{}", f.describe()),
            other => other.name().to_string(),
        }
    }
}

/// Message a client signs to prove possession of its certificate key.
pub fn signin_challenge(principal_id: &str, request_ts: Timestamp, nonce: &Nonce) -> String {
    format!("PROMETHEUS SIGNIN V1;{principal_id};{request_ts};{}", nonce.to_hex())
}

/// A client certificate plus proof that the presenter holds its private key:
/// a signature by `certificate.subject_public_key` over `challenge`.
#[derive(Clone, Copy, Debug)]
pub struct PresentedCertificate<'a> {
    pub certificate: &'a Certificate,
    pub challenge: &'a [u8],
    pub proof: &'a Signature,
}

#[derive(Clone, Copy, Debug)]
pub struct Credentials<'a> {
    pub principal_id: &'a str,
    pub certificate: Option<PresentedCertificate<'a>>,
    pub token_code: Option<&'a str>,
    pub password: Option<&'a [u8]>,
}

impl<'a> Credentials<'a> {
    pub fn new(principal_id: &'a str) -> Self {
        Credentials { principal_id, certificate: None, token_code: None, password: None }
    }

    pub fn supplied(&self) -> FactorSet {
        let mut set = FactorSet::EMPTY;
        if self.certificate.is_some() {
            set.insert(FactorKind::Certificate);
        }
        if self.token_code.is_some() {
            set.insert(FactorKind::Token);
        }
        if self.password.is_some() {
            set.insert(FactorKind::Password);
        }
        set
    }
}

/// Checks individual factors. The gateway implements this over its own
/// locks; [`LocalVerifier`] works over plain references.
pub trait FactorVerifier {
    fn certificate(&mut self, certificate: &Certificate, now: Timestamp) -> ValidationResult;
    fn token(&mut self, principal_id: &str, code: &str, now: Timestamp) -> TokenVerdict;
    fn password(&mut self, principal_id: &str, secret: &[u8]) -> bool;
}

pub struct LocalVerifier<'a> {
    pub trust_anchor: &'a PublicKey,
    pub crl: &'a RevocationList,
    pub tokens: &'a mut TokenStore,
    pub registry: &'a Registry,
}

impl FactorVerifier for LocalVerifier<'_> {
    fn certificate(&mut self, certificate: &Certificate, now: Timestamp) -> ValidationResult {
        validate_certificate(certificate, self.trust_anchor, self.crl, now)
    }

    fn token(&mut self, principal_id: &str, code: &str, now: Timestamp) -> TokenVerdict {
        self.tokens.verify_token(principal_id, code, now)
    }

    fn password(&mut self, principal_id: &str, secret: &[u8]) -> bool {
        self.registry
            .get(principal_id)
            .and_then(|p| p.password_credential.as_ref())
            .is_some_and(|cred| verify_salted(cred, secret))
    }
}

/// Decides which factors hold, without side effects beyond the verifier's
/// own (token counters advance on acceptance).
///
/// Order: certificate subject must name the principal; at least two kinds
/// must be supplied; then certificate, token and password are checked in
/// that order and the first failure is returned. A request that cannot reach
/// two factors never touches the token counter.
pub fn evaluate_factors(
    credentials: &Credentials<'_>,
    now: Timestamp,
    verifier: &mut impl FactorVerifier,
) -> Result<FactorSet, SigninFailure> {
    if let Some(presented) = &credentials.certificate {
        if presented.certificate.subject != credentials.principal_id {
            return Err(SigninFailure::IdentityMismatch);
        }
    }
    if credentials.supplied().len() < 2 {
        return Err(SigninFailure::InsufficientFactors);
    }
    let mut proven = FactorSet::EMPTY;
    if let Some(presented) = &credentials.certificate {
        if let ValidationResult::Invalid(reason) = verifier.certificate(presented.certificate, now) {
            return Err(SigninFailure::FactorInvalid(FactorFailure::Certificate(reason)));
        }
        if !verify_signature(&presented.certificate.subject_public_key, presented.challenge, presented.proof) {
            return Err(SigninFailure::FactorInvalid(FactorFailure::Certificate(InvalidReason::ProofOfPossession)));
        }
        proven.insert(FactorKind::Certificate);
    }
    if let Some(code) = credentials.token_code {
        match verifier.token(credentials.principal_id, code, now) {
            TokenVerdict::Accept { .. } => proven.insert(FactorKind::Token),
            TokenVerdict::Reject(reason) => {
                return Err(SigninFailure::FactorInvalid(FactorFailure::Token(reason)));
            }
        }
    }
    if let Some(secret) = credentials.password {
        if !verifier.password(credentials.principal_id, secret) {
            return Err(SigninFailure::FactorInvalid(FactorFailure::Password));
        }
        proven.insert(FactorKind::Password);
    }
    if proven.len() < 2 {
        return Err(SigninFailure::InsufficientFactors);
    }
    Ok(proven)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SessionDeny {
    NoSession,
    Expired,
    HijackSuspected,
    Access(AccessDenyReason),
}

impl SessionDeny {
    pub fn name(self) -> &'static str {
        match self {
            SessionDeny::NoSession => "NoSession",
            SessionDeny::Expired => "Expired",
            SessionDeny::HijackSuspected => "HijackSuspected",
            SessionDeny::Access(reason) => reason.name(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Authorization {
    Allow(Session),
    Deny(SessionDeny),
}

/// Server-side session table.
#[derive(Clone, Debug)]
pub struct SessionStore {
    sessions: BTreeMap<[u8; 32], Session>,
    ttl_seconds: i64,
}

impl SessionStore {
    pub fn new(ttl_minutes: u32) -> Self {
        SessionStore { sessions: BTreeMap::new(), ttl_seconds: ttl_minutes as i64 * SECONDS_PER_MINUTE }
    }

    pub fn ttl_seconds(&self) -> i64 {
        self.ttl_seconds
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    /// Issues a session for `factors`; fewer than two kinds is refused.
    pub fn issue(
        &mut self,
        principal_id: &str,
        ip: IpAddr,
        factors: FactorSet,
        now: Timestamp,
        rng: &mut impl CryptoRngCore,
    ) -> Result<Session, SigninFailure> {
        if factors.len() < 2 {
            return Err(SigninFailure::InsufficientFactors);
        }
        let mut session_id = SessionId::random(rng);
        while self.sessions.contains_key(&session_id.lookup_key()) {
            session_id = SessionId::random(rng);
        }
        let session = Session {
            session_id,
            principal_id: principal_id.to_string(),
            issued_at: now,
            expires_at: now.plus_seconds(self.ttl_seconds),
            bound_ip: ip,
            factors,
        };
        self.sessions.insert(session_id.lookup_key(), session.clone());
        Ok(session)
    }

    pub fn get(&self, session_id: &SessionId) -> Option<&Session> {
        self.sessions.get(&session_id.lookup_key())
    }

    /// Looks up a live session for a request from `ip`. Expired sessions are
    /// dropped. A foreign IP invalidates the session as part of the denial.
    pub fn resolve(&mut self, session_id: &SessionId, ip: IpAddr, now: Timestamp) -> Result<Session, SessionDeny> {
        let key = session_id.lookup_key();
        let Some(session) = self.sessions.get(&key) else {
            return Err(SessionDeny::NoSession);
        };
        if now > session.expires_at {
            self.sessions.remove(&key);
            return Err(SessionDeny::Expired);
        }
        if session.bound_ip != ip {
            self.sessions.remove(&key);
            return Err(SessionDeny::HijackSuspected);
        }
        Ok(session.clone())
    }

    pub fn invalidate(&mut self, session_id: &SessionId) -> bool {
        self.sessions.remove(&session_id.lookup_key()).is_some()
    }

    pub fn purge_expired(&mut self, now: Timestamp) {
        self.sessions.retain(|_, s| now <= s.expires_at);
    }
}

/// Mutable state touched by a full sign-in.
pub struct SigninContext<'a, V> {
    pub verifier: &'a mut V,
    pub guard: &'a mut GuardState,
    pub sessions: &'a mut SessionStore,
    pub audit: &'a mut AuditLog,
}

/// Full sign-in: evaluate factors, update the guard's failure count for
/// `ip`, issue the session, and audit the attempt (plus any cooldown it
/// triggered). The caller must already have been admitted by the guard.
pub fn signin<V: FactorVerifier>(
    credentials: &Credentials<'_>,
    ip: IpAddr,
    now: Timestamp,
    ctx: SigninContext<'_, V>,
    rng: &mut impl CryptoRngCore,
) -> Result<Session, SigninFailure> {
    let outcome = evaluate_factors(credentials, now, ctx.verifier)
        .and_then(|factors| ctx.sessions.issue(credentials.principal_id, ip, factors, now, rng));
    match &outcome {
        Ok(_) => ctx.guard.record_success(ip),
        Err(_) => {
            ctx.guard.record_failure(ip, now);
        }
    }
    record_signin(ctx.audit, credentials.principal_id, ip, &outcome, now);
    record_cooldowns(ctx.audit, &ctx.guard.take_events());
    outcome
}

pub fn record_signin(
    audit: &mut AuditLog,
    principal_id: &str,
    ip: IpAddr,
    outcome: &Result<Session, SigninFailure>,
    now: Timestamp,
) {
    match outcome {
        Ok(session) => {
            let factors: Vec<&str> = session.factors.iter().map(factor_name).collect();
            let detail = format!("ip={ip};factors={}", factors.join("+"));
            audit.append_with(principal_id, actions::SIGNIN, &detail, Outcome::Success, now);
        }
        Err(failure) => {
            let detail = format!("ip={ip}");
            audit.append_with(principal_id, actions::SIGNIN, &detail, Outcome::failure(failure.describe()), now);
        }
    }
}

pub fn record_cooldowns(audit: &mut AuditLog, events: &[CooldownStarted]) {
    for event in events {
        let detail = format!("until={};cause={}", event.until, event.cause.name());
        audit.append_with(&event.ip.to_string(), actions::COOLDOWN_STARTED, &detail, Outcome::Success, event.started_at);
    }
}

/// Session lookup, IP binding and ACL decision for one request, with the
/// decision audited. The returned session is the one that authorized it.
#[allow(clippy::too_many_arguments)]
pub fn authorize_request(
    sessions: &mut SessionStore,
    session_id: &SessionId,
    ip: IpAddr,
    resource: &str,
    now: Timestamp,
    policy: &AccessPolicy,
    registry: &Registry,
    audit: &mut AuditLog,
) -> Authorization {
    let (principal, authorization) = match sessions.resolve(session_id, ip, now) {
        Err(deny) => (None, Authorization::Deny(deny)),
        Ok(session) => (Some(session.principal_id.clone()), decide_access(session, resource, policy, registry)),
    };
    record_authorization(audit, principal.as_deref(), ip, resource, &authorization, now);
    authorization
}

/// ACL half of [`authorize_request`] for an already resolved session.
pub fn decide_access(session: Session, resource: &str, policy: &AccessPolicy, registry: &Registry) -> Authorization {
    let Some(principal) = registry.get(&session.principal_id) else {
        return Authorization::Deny(SessionDeny::NoSession);
    };
    match check_access(principal, resource, policy, session.factors) {
        AccessDecision::Allow => Authorization::Allow(session),
        AccessDecision::Deny(reason) => Authorization::Deny(SessionDeny::Access(reason)),
    }
}

/// One audit record per authorization decision. ACL denials are recorded as
/// `access-denied` by the session's principal, which feeds escalation
/// detection.
pub fn record_authorization(
    audit: &mut AuditLog,
    principal_id: Option<&str>,
    ip: IpAddr,
    resource: &str,
    authorization: &Authorization,
    now: Timestamp,
) {
    let detail = format!("resource={resource};ip={ip}");
    match authorization {
        Authorization::Allow(session) => {
            audit.append_with(&session.principal_id, actions::ACCESS_GRANTED, &detail, Outcome::Success, now);
        }
        Authorization::Deny(SessionDeny::Access(reason)) => {
            let actor = principal_id.map(String::from).unwrap_or_else(|| ip.to_string());
            audit.append_with(&actor, actions::ACCESS_DENIED, &detail, Outcome::failure(reason.name()), now);
        }
        Authorization::Deny(SessionDeny::HijackSuspected) => {
            audit.append_with(&ip.to_string(), actions::HIJACK_SUSPECTED, &detail, Outcome::failure("HijackSuspected"), now);
        }
        Authorization::Deny(deny) => {
            audit.append_with(&ip.to_string(), actions::SESSION_DENIED, &detail, Outcome::failure(deny.name()), now);
        }
    }
}

pub fn factor_name(kind: FactorKind) -> &'static str {
    match kind {
        FactorKind::Certificate => "Certificate",
        FactorKind::Token => "Token",
        FactorKind::Password => "Password",
    }
}
