//! Shared gateway state and the request pipeline.
//!
//! Every request runs the same gates in the same order: guard admission,
//! input validation, freshness, payload integrity, then the endpoint
//! (sign-in, resource or admin). No code path holds more than one state
//! lock at a time.

use std::collections::{BTreeMap, BTreeSet};
use std::net::IpAddr;
use std::sync::{Mutex, MutexGuard, PoisonError};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use prometheus_core::audit::{actions, AuditLog, ChainStatus, Outcome};
use prometheus_core::crypto::{hash, provision_salted, verify_salted, Digest, KeyPair, PublicKey, Signature};
use prometheus_core::guard::{AdmitReject, AdmitVerdict, GuardConfig, GuardState};
use prometheus_core::identity::{AccessDenyReason, AccessPolicy, AclError, IdentityError, Principal, Registry};
use prometheus_core::pki::{validate_certificate, Certificate, CertificateAuthority, PkiError, RevocationList, ValidationResult};
use prometheus_core::session::{
    decide_access, evaluate_factors, factor_name, issue_receipt, record_authorization, record_cooldowns,
    record_signin, signin_challenge, verify_payload_integrity, Authorization, Credentials, FactorFailure,
    FactorVerifier, Freshness, FreshnessWindow, Integrity, Nonce, PresentedCertificate, Session, SessionDeny,
    SessionId, SessionStore, SigninFailure,
};
use prometheus_core::token::{TokenStore, TokenVerdict};
use prometheus_core::Timestamp;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::clock::Clock;
use crate::config::GatewayConfig;
use crate::formats::{self, CooldownEntry};
use crate::state::{GatewayParts, Home, StateError};
use crate::validate::{self, validate_input, FieldSpec, Rejected};
use crate::wire::{self, GrantRoleBody, Method, OnboardBody, Request, Response, RevokeBody, SigninBody, SigninReply};

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error(transparent)]
    State(#[from] StateError),
    #[error("{0}")]
    Acl(#[from] AclError),
    #[error("gateway key has {bits} bits, policy requires {floor}")]
    WeakKey { bits: usize, floor: usize },
    #[error("{0}")]
    Pki(#[from] PkiError),
}

impl GatewayError {
    pub fn name(&self) -> &'static str {
        match self {
            GatewayError::State(e) => e.name(),
            GatewayError::Acl(_) => "InvalidAcl",
            GatewayError::WeakKey { .. } => "PolicyFloorViolation",
            GatewayError::Pki(_) => "InvalidState",
        }
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(PoisonError::into_inner)
}

struct PkiState {
    ca: CertificateAuthority,
    crl: RevocationList,
}

struct AuditSink {
    log: AuditLog,
    persisted: usize,
    investigations: BTreeSet<(String, String)>,
}

enum Route {
    Signin,
    Resource(String),
    Onboard,
    Revoke,
    GrantRole,
    Cooldowns,
    AuditVerify,
}

impl Route {
    fn parse(method: Method, path: &str) -> Option<Route> {
        let route = match (method, path) {
            (Method::Post, "/signin") => Route::Signin,
            (Method::Post, "/admin/onboard") => Route::Onboard,
            (Method::Post, "/admin/revoke") => Route::Revoke,
            (Method::Post, "/admin/grant-role") => Route::GrantRole,
            (Method::Get, "/admin/cooldowns") => Route::Cooldowns,
            (Method::Get, "/admin/audit/verify") => Route::AuditVerify,
            (Method::Get, p) => Route::Resource(p.strip_prefix("/resource/")?.to_string()),
            _ => return None,
        };
        Some(route)
    }

    fn needs_session(&self) -> bool {
        !matches!(self, Route::Signin)
    }
}

/// Validated request metadata.
struct Checked {
    route: Route,
    timestamp: Timestamp,
    nonce: Nonce,
    session: Option<SessionId>,
    payload_digest: Option<Digest>,
}

/// Early exit from the pipeline with the response to send.
struct Stop(Response);

pub struct Gateway {
    config: GatewayConfig,
    home: Option<Home>,
    clock: Clock,
    policy: AccessPolicy,
    resources: BTreeMap<String, Vec<u8>>,
    gateway_key: KeyPair,
    rng: Mutex<ChaCha20Rng>,
    guard: Mutex<GuardState>,
    sessions: Mutex<SessionStore>,
    freshness: Mutex<FreshnessWindow>,
    audit: Mutex<AuditSink>,
    pki: Mutex<PkiState>,
    registry: Mutex<Registry>,
    tokens: Mutex<TokenStore>,
}

impl Gateway {
    /// Builds a gateway from loaded parts. With `home`, every state change is
    /// written back to the state directory.
    pub fn new(
        config: GatewayConfig,
        parts: GatewayParts,
        clock: Clock,
        home: Option<Home>,
        rng: ChaCha20Rng,
    ) -> Result<Self, GatewayError> {
        let bits = parts.gateway_key.public_key.modulus_bits();
        let floor = config.policy.min_asymmetric_bits as usize;
        if bits < floor {
            return Err(GatewayError::WeakKey { bits, floor });
        }
        let policy = AccessPolicy::new(parts.acl, config.admin_resources.iter().cloned())?;
        let now = clock.now();
        let mut guard = GuardState::new(
            GuardConfig::from_policy(&config.policy, config.max_concurrent_per_ip),
            parts.whitelist,
        );
        for entry in parts.cooldowns {
            guard.restore_cooldown(entry.ip, entry.until);
        }
        let crl = parts.ca.current_crl(now)?;
        let persisted = if home.is_some() { parts.audit.len() } else { 0 };
        Ok(Gateway {
            sessions: Mutex::new(SessionStore::new(config.policy.session_ttl_minutes)),
            freshness: Mutex::new(FreshnessWindow::new(config.freshness_max_age_seconds)),
            guard: Mutex::new(guard),
            audit: Mutex::new(AuditSink { log: parts.audit, persisted, investigations: BTreeSet::new() }),
            pki: Mutex::new(PkiState { ca: parts.ca, crl }),
            registry: Mutex::new(parts.registry),
            tokens: Mutex::new(parts.tokens),
            rng: Mutex::new(rng),
            resources: parts.resources,
            gateway_key: parts.gateway_key,
            policy,
            config,
            home,
            clock,
        })
    }

    /// Loads the state directory and keeps it updated.
    pub fn open(home: Home, clock: Clock) -> Result<Self, GatewayError> {
        let parts = home.load_parts()?;
        Gateway::new(home.config().clone(), parts, clock, Some(home), ChaCha20Rng::from_entropy())
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn clock(&self) -> &Clock {
        &self.clock
    }

    pub fn gateway_public_key(&self) -> &PublicKey {
        &self.gateway_key.public_key
    }

    pub fn audit_snapshot(&self) -> AuditLog {
        lock(&self.audit).log.clone()
    }

    pub fn active_sessions(&self) -> usize {
        lock(&self.sessions).len()
    }

    pub fn principal(&self, id: &str) -> Option<Principal> {
        lock(&self.registry).get(id).cloned()
    }

    pub fn cooldowns(&self) -> Vec<CooldownEntry> {
        let now = self.clock.now();
        lock(&self.guard).cooldown_report(now).into_iter().map(|(ip, until)| CooldownEntry { ip, until }).collect()
    }

    pub fn active_connections(&self, ip: IpAddr) -> u32 {
        lock(&self.guard).active_connections(ip)
    }

    /// Full pipeline for one request: admission, processing, release.
    pub fn handle(&self, req: &Request) -> Response {
        if let Err(response) = self.admit(req.peer) {
            return response;
        }
        let response = self.process(req);
        self.release(req.peer);
        response
    }

    /// First gate. A rejected connection gets its response here; an admitted
    /// one must be paired with [`Gateway::release`].
    pub fn admit(&self, ip: IpAddr) -> Result<(), Response> {
        let now = self.clock.now();
        let (verdict, events) = {
            let mut guard = lock(&self.guard);
            let verdict = guard.admit(ip, now);
            (verdict, guard.take_events())
        };
        let AdmitVerdict::Reject(reject) = verdict else {
            return Ok(());
        };
        self.audited(|log| {
            let detail = format!("ip={ip}");
            log.append_with(&ip.to_string(), actions::ADMIT_REJECTED, &detail, Outcome::failure(reject.name()), now);
            record_cooldowns(log, &events);
        });
        if !events.is_empty() {
            self.persist_cooldowns();
        }
        Err(match reject {
            AdmitReject::NotWhitelisted => Response::empty(403),
            other => Response::error(403, other.name()),
        })
    }

    pub fn release(&self, ip: IpAddr) {
        let _ = lock(&self.guard).release(ip);
    }

    /// Everything after admission.
    pub fn process(&self, req: &Request) -> Response {
        let now = self.clock.now();
        match self.admitted(req, now) {
            Ok(response) | Err(Stop(response)) => response,
        }
    }

    /// Audited rejection for a body the transport refused to read.
    pub fn reject_body(&self, req: &Request, reason: &str) -> Response {
        let Stop(response) = self.bad_request(req, "body", reason, self.clock.now());
        response
    }

    fn admitted(&self, req: &Request, now: Timestamp) -> Result<Response, Stop> {
        let checked = self.check_request(req, now)?;
        self.check_freshness(req, &checked, now)?;
        if let Some(claimed) = &checked.payload_digest {
            if verify_payload_integrity(&req.body, claimed) == Integrity::TamperDetected {
                self.audited(|log| {
                    let detail = format!("ip={};path={}", req.peer, req.path);
                    log.append_with(&req.peer.to_string(), actions::INTEGRITY_REJECTED, &detail, Outcome::failure("TamperDetected"), now);
                });
                return Err(Stop(Response::error(400, "TamperDetected")));
            }
        }
        match &checked.route {
            Route::Signin => self.signin(req, &checked, now),
            Route::Resource(name) => self.resource(req, &checked, name, now),
            _ => self.admin(req, &checked, now),
        }
    }

    fn reject_input(&self, req: &Request, rejected: Rejected, now: Timestamp) -> Stop {
        self.audited(|log| {
            let detail = format!("ip={};field={};reason={}", req.peer, rejected.field, rejected.reason.name());
            log.append_with(&req.peer.to_string(), actions::INPUT_REJECTED, &detail, Outcome::failure(rejected.reason.name()), now);
        });
        Stop(Response::error(400, rejected.reason.name()))
    }

    fn bad_request(&self, req: &Request, field: &str, reason: &str, now: Timestamp) -> Stop {
        self.audited(|log| {
            let detail = format!("ip={};field={field};reason={reason}", req.peer);
            log.append_with(&req.peer.to_string(), actions::INPUT_REJECTED, &detail, Outcome::failure(reason), now);
        });
        Stop(Response::error(400, reason))
    }

    fn field(&self, req: &Request, name: &str, value: &str, spec: FieldSpec, now: Timestamp) -> Result<(), Stop> {
        validate_input(name, value, spec).map_err(|r| self.reject_input(req, r, now))
    }

    fn header<'r>(&self, req: &'r Request, name: &str, spec: FieldSpec, now: Timestamp) -> Result<Option<&'r str>, Stop> {
        match req.header(name) {
            None => Ok(None),
            Some(value) => self.field(req, name, value, spec, now).map(|()| Some(value)),
        }
    }

    fn required_header<'r>(&self, req: &'r Request, name: &str, spec: FieldSpec, now: Timestamp) -> Result<&'r str, Stop> {
        self.header(req, name, spec, now)?.ok_or_else(|| self.bad_request(req, name, "MissingHeader", now))
    }

    fn check_request(&self, req: &Request, now: Timestamp) -> Result<Checked, Stop> {
        self.field(req, "path", &req.path, FieldSpec::new(256, validate::Pattern::Text), now)?;
        let Some(route) = Route::parse(req.method, &req.path) else {
            self.audited(|log| {
                let detail = format!("ip={};field=path;reason=NotFound", req.peer);
                log.append_with(&req.peer.to_string(), actions::INPUT_REJECTED, &detail, Outcome::failure("NotFound"), now);
            });
            return Err(Stop(Response::error(404, "NotFound")));
        };
        if let Route::Resource(name) = &route {
            self.field(req, "resource", name, validate::IDENTIFIER, now)?;
        }
        let ts = self.required_header(req, wire::TIMESTAMP_HEADER, validate::TIMESTAMP_HEADER, now)?;
        let timestamp = Timestamp::parse_rfc3339(ts)
            .map_err(|_| self.bad_request(req, wire::TIMESTAMP_HEADER, "PatternMismatch", now))?;
        let nonce = self.required_header(req, wire::NONCE_HEADER, validate::NONCE_HEADER, now)?;
        let nonce = Nonce::from_hex(nonce).ok_or_else(|| self.bad_request(req, wire::NONCE_HEADER, "PatternMismatch", now))?;
        let session = if route.needs_session() {
            let sid = self.required_header(req, wire::SESSION_HEADER, validate::SESSION_HEADER, now)?;
            Some(SessionId::from_hex(sid).ok_or_else(|| self.bad_request(req, wire::SESSION_HEADER, "PatternMismatch", now))?)
        } else {
            None
        };
        let payload_digest = match self.header(req, wire::PAYLOAD_DIGEST_HEADER, validate::DIGEST_HEADER, now)? {
            None => None,
            Some(hex) => Some(
                Digest::from_hex(hex)
                    .ok_or_else(|| self.bad_request(req, wire::PAYLOAD_DIGEST_HEADER, "PatternMismatch", now))?,
            ),
        };
        let checked = Checked { route, timestamp, nonce, session, payload_digest };
        self.check_body(req, &checked, now)?;
        Ok(checked)
    }

    /// Validates every JSON field before anything stateful runs.
    fn check_body(&self, req: &Request, checked: &Checked, now: Timestamp) -> Result<(), Stop> {
        use validate::{CERTIFICATE, FREE_TEXT, IDENTIFIER, PASSWORD, PROOF, TOKEN_CODE};
        match &checked.route {
            Route::Signin => {
                let body: SigninBody = self.json(req, now)?;
                self.field(req, "principal_id", &body.principal_id, IDENTIFIER, now)?;
                let optional = [
                    ("certificate", &body.certificate, CERTIFICATE),
                    ("certificate_proof", &body.certificate_proof, PROOF),
                    ("token_code", &body.token_code, TOKEN_CODE),
                    ("password", &body.password, PASSWORD),
                ];
                for (name, value, spec) in optional {
                    if let Some(value) = value {
                        self.field(req, name, value, spec, now)?;
                    }
                }
            }
            Route::Onboard => {
                let body: OnboardBody = self.json(req, now)?;
                self.field(req, "id", &body.id, IDENTIFIER, now)?;
                for role in &body.roles {
                    self.field(req, "roles", role, IDENTIFIER, now)?;
                }
                if let Some(name) = &body.display_name {
                    self.field(req, "display_name", name, FREE_TEXT, now)?;
                }
                if let Some(password) = &body.password {
                    self.field(req, "password", password, PASSWORD, now)?;
                }
            }
            Route::Revoke => {
                let body: RevokeBody = self.json(req, now)?;
                self.field(req, "reason", &body.reason, FREE_TEXT, now)?;
            }
            Route::GrantRole => {
                let body: GrantRoleBody = self.json(req, now)?;
                self.field(req, "id", &body.id, IDENTIFIER, now)?;
                self.field(req, "role", &body.role, IDENTIFIER, now)?;
                if !body.ticket.is_empty() {
                    self.field(req, "ticket", &body.ticket, FREE_TEXT, now)?;
                }
            }
            Route::Resource(_) | Route::Cooldowns | Route::AuditVerify => {
                if !req.body.is_empty() {
                    return Err(self.bad_request(req, "body", "MalformedRequest", now));
                }
            }
        }
        Ok(())
    }

    fn json<T: serde::de::DeserializeOwned>(&self, req: &Request, now: Timestamp) -> Result<T, Stop> {
        serde_json::from_slice(&req.body).map_err(|_| self.bad_request(req, "body", "MalformedRequest", now))
    }

    fn check_freshness(&self, req: &Request, checked: &Checked, now: Timestamp) -> Result<(), Stop> {
        let verdict = lock(&self.freshness).check_freshness(checked.timestamp, checked.nonce, now);
        if verdict == Freshness::Ok {
            return Ok(());
        }
        self.audited(|log| {
            let detail = format!("ip={};path={};nonce={}", req.peer, req.path, checked.nonce.to_hex());
            log.append_with(&req.peer.to_string(), actions::FRESHNESS_REJECTED, &detail, Outcome::failure(verdict.name()), now);
        });
        Err(Stop(Response::error(401, verdict.name())))
    }

    fn signin(&self, req: &Request, checked: &Checked, now: Timestamp) -> Result<Response, Stop> {
        let body: SigninBody = self.json(req, now)?;
        let certificate = match &body.certificate {
            None => None,
            Some(text) => Some(
                formats::decode_certificate(text)
                    .map_err(|_| self.bad_request(req, "certificate", "MalformedRequest", now))?,
            ),
        };
        let proof = match (&body.certificate_proof, &certificate) {
            (Some(_), None) => return Err(self.bad_request(req, "certificate_proof", "MalformedRequest", now)),
            (Some(b64), Some(_)) => Signature::from_bytes(
                B64.decode(b64).map_err(|_| self.bad_request(req, "certificate_proof", "MalformedRequest", now))?,
            ),
            (None, _) => Signature::from_bytes(Vec::new()),
        };
        let challenge = signin_challenge(&body.principal_id, checked.timestamp, &checked.nonce);
        let credentials = Credentials {
            principal_id: &body.principal_id,
            certificate: certificate.as_ref().map(|certificate| PresentedCertificate {
                certificate,
                challenge: challenge.as_bytes(),
                proof: &proof,
            }),
            token_code: body.token_code.as_deref(),
            password: body.password.as_deref().map(str::as_bytes),
        };
        let ip = req.peer;
        let outcome = evaluate_factors(&credentials, now, &mut GatewayVerifier { gateway: self }).and_then(|factors| {
            let mut rng = self.child_rng();
            lock(&self.sessions).issue(&body.principal_id, ip, factors, now, &mut rng)
        });
        let events = {
            let mut guard = lock(&self.guard);
            match &outcome {
                Ok(_) => guard.record_success(ip),
                Err(_) => {
                    guard.record_failure(ip, now);
                }
            }
            guard.take_events()
        };
        self.audited(|log| {
            record_signin(log, &body.principal_id, ip, &outcome, now);
            record_cooldowns(log, &events);
        });
        if !events.is_empty() {
            self.persist_cooldowns();
        }
        match outcome {
            Ok(session) => Ok(Response::json(
                200,
                &SigninReply {
                    session_id: session.session_id.to_hex(),
                    expires_at: session.expires_at.to_string(),
                    factors: session.factors.iter().map(|k| factor_name(k).to_string()).collect(),
                },
            )),
            Err(failure) => Ok(Response::error(401, signin_reason(&failure))),
        }
    }

    /// Session lookup and ACL decision, audited, with escalation checks.
    fn authorize(&self, req: &Request, checked: &Checked, resource: &str, now: Timestamp) -> Result<Session, Stop> {
        let ip = req.peer;
        let session_id = checked.session.expect("session routes carry an id");
        let (principal, authorization) = match lock(&self.sessions).resolve(&session_id, ip, now) {
            Err(deny) => (None, Authorization::Deny(deny)),
            Ok(session) => (Some(session.principal_id.clone()), Authorization::Allow(session)),
        };
        let authorization = match authorization {
            Authorization::Allow(session) => decide_access(session, resource, &self.policy, &lock(&self.registry)),
            deny => deny,
        };
        let threshold = self.config.policy.escalation_threshold;
        self.audited(|sink_log| {
            record_authorization(sink_log, principal.as_deref(), ip, resource, &authorization, now);
        });
        if let (Authorization::Deny(SessionDeny::Access(_)), Some(principal)) = (&authorization, &principal) {
            self.check_escalation(principal, threshold, now);
        }
        match authorization {
            Authorization::Allow(session) => Ok(session),
            Authorization::Deny(deny) => Err(Stop(Response::error(deny_status(deny), deny.name()))),
        }
    }

    fn check_escalation(&self, principal: &str, threshold: u32, now: Timestamp) {
        let mut sink = lock(&self.audit);
        let Some(investigation) = sink.log.detect_escalation_with(principal, now, threshold) else {
            return;
        };
        let key = (investigation.principal_id.clone(), investigation.resource.clone());
        if !sink.investigations.insert(key) {
            return;
        }
        let detail = format!("resource={};attempts={}", investigation.resource, investigation.attempt_count);
        sink.log.append_with(principal, actions::INVESTIGATION_OPENED, &detail, Outcome::Success, now);
        self.flush(&mut sink);
    }

    fn resource(&self, req: &Request, checked: &Checked, name: &str, now: Timestamp) -> Result<Response, Stop> {
        let session = self.authorize(req, checked, name, now)?;
        let Some(payload) = self.resources.get(name) else {
            return Err(Stop(Response::error(404, AccessDenyReason::NoSuchResource.name())));
        };
        let mut response = Response {
            status: 200,
            headers: vec![("content-type".into(), "application/octet-stream".into())],
            body: payload.clone(),
        };
        response.headers.push((wire::PAYLOAD_DIGEST_HEADER.into(), hash(payload).to_hex()));
        self.attach_receipt(req, &session, now, response)
    }

    fn attach_receipt(&self, req: &Request, session: &Session, now: Timestamp, mut response: Response) -> Result<Response, Stop> {
        match issue_receipt(&self.gateway_key.private_key, session, &req.signed_content(), now) {
            Ok(receipt) => {
                response.headers.push((wire::RECEIPT_HEADER.into(), B64.encode(receipt.to_bytes())));
                Ok(response)
            }
            Err(_) => Err(Stop(Response::error(500, "ReceiptUnavailable"))),
        }
    }

    fn admin(&self, req: &Request, checked: &Checked, now: Timestamp) -> Result<Response, Stop> {
        let session = self.authorize(req, checked, &self.config.admin_console, now)?;
        let actor = session.principal_id.as_str();
        let response = match &checked.route {
            Route::Onboard => self.admin_onboard(self.json(req, now)?, actor, now),
            Route::Revoke => self.admin_revoke(self.json(req, now)?, actor, now),
            Route::GrantRole => self.admin_grant_role(self.json(req, now)?, actor, now),
            Route::Cooldowns => Response::json(200, &self.cooldowns()),
            Route::AuditVerify => {
                let log = self.audit_snapshot();
                Response::json(200, &AuditReport::from_status(log.verify_chain(), log.len()))
            }
            Route::Signin | Route::Resource(_) => unreachable!("not an admin route"),
        };
        if response.status == 200 {
            self.attach_receipt(req, &session, now, response)
        } else {
            Ok(response)
        }
    }

    fn admin_onboard(&self, body: OnboardBody, actor: &str, now: Timestamp) -> Response {
        let mut principal = Principal::new(&body.id, body.roles.iter().map(String::as_str));
        if let Some(name) = body.display_name {
            principal.display_name = name;
        }
        principal.hardware_credential = body.hardware_credential;
        if let Some(password) = &body.password {
            principal.password_credential = Some(provision_salted(&mut self.child_rng(), password.as_bytes()));
        }
        let result = {
            let mut registry = lock(&self.registry);
            let result = registry.onboard(principal);
            if result.is_ok() {
                self.persist(|home| home.save_registry(&registry));
            }
            result
        };
        let detail = format!("id={};roles={}", body.id, body.roles.join("+"));
        match result {
            Ok(id) => {
                self.audited(|log| {
                    log.append_with(actor, actions::ONBOARD, &detail, Outcome::Success, now);
                });
                Response::json(200, &serde_json::json!({ "id": id }))
            }
            Err(e) => {
                let (status, reason) = identity_error(&e);
                self.audited(|log| {
                    log.append_with(actor, actions::ONBOARD, &detail, Outcome::failure(reason), now);
                });
                Response::error(status, reason)
            }
        }
    }

    fn admin_revoke(&self, body: RevokeBody, actor: &str, now: Timestamp) -> Response {
        let result = {
            let mut pki = lock(&self.pki);
            match pki.ca.revoke(body.serial, &body.reason, now) {
                Ok(crl) => {
                    pki.crl = crl;
                    self.persist(|home| home.save_ca(&pki.ca, now));
                    Ok(())
                }
                Err(e) => Err(e),
            }
        };
        let detail = format!("serial={}", body.serial);
        match result {
            Ok(()) => {
                self.audited(|log| {
                    log.append_with(actor, actions::CERTIFICATE_REVOKED, &detail, Outcome::Success, now);
                });
                Response::json(200, &serde_json::json!({ "serial": body.serial }))
            }
            Err(e) => {
                let reason = match e {
                    PkiError::UnknownSerial(_) => "UnknownSerial",
                    _ => "RevocationFailed",
                };
                self.audited(|log| {
                    log.append_with(actor, actions::CERTIFICATE_REVOKED, &detail, Outcome::failure(reason), now);
                });
                Response::error(if reason == "UnknownSerial" { 404 } else { 500 }, reason)
            }
        }
    }

    fn admin_grant_role(&self, body: GrantRoleBody, actor: &str, now: Timestamp) -> Response {
        // The registry appends its record to a scratch log, which is then
        // replayed into the shared log once the registry lock is released.
        let mut scratch = AuditLog::new();
        let result = {
            let mut registry = lock(&self.registry);
            let result = registry.grant_role(&body.id, &body.role, &body.ticket, &mut scratch, now).map(|_| ());
            if result.is_ok() {
                self.persist(|home| home.save_registry(&registry));
            }
            result
        };
        match result {
            Ok(()) => {
                self.audited(|log| {
                    for r in scratch.records() {
                        let detail = format!("{};by={actor}", r.detail);
                        log.append_with(&r.actor, &r.action, &detail, r.outcome.clone(), r.timestamp);
                    }
                });
                Response::json(200, &serde_json::json!({ "id": body.id, "role": body.role }))
            }
            Err(e) => {
                let (status, reason) = identity_error(&e);
                self.audited(|log| {
                    let detail = format!("id={};role={};by={actor}", body.id, body.role);
                    log.append_with(&body.id, actions::PRIVILEGE_CHANGE, &detail, Outcome::failure(reason), now);
                });
                Response::error(status, reason)
            }
        }
    }

    /// An independent generator seeded from the shared one, so the shared
    /// lock is never held alongside another.
    fn child_rng(&self) -> ChaCha20Rng {
        let mut seed = [0u8; 32];
        rand::RngCore::fill_bytes(&mut *lock(&self.rng), &mut seed);
        ChaCha20Rng::from_seed(seed)
    }

    /// Runs `f` on the audit log, then writes any new records out.
    fn audited(&self, f: impl FnOnce(&mut AuditLog)) {
        let mut sink = lock(&self.audit);
        f(&mut sink.log);
        self.flush(&mut sink);
    }

    fn flush(&self, sink: &mut AuditSink) {
        let Some(home) = &self.home else {
            return;
        };
        if sink.persisted == sink.log.len() {
            return;
        }
        match home.append_audit(&sink.log.records()[sink.persisted..], sink.log.head()) {
            Ok(()) => sink.persisted = sink.log.len(),
            Err(e) => eprintln!("audit write failed: {e}"),
        }
    }

    fn persist(&self, f: impl FnOnce(&Home) -> Result<(), StateError>) {
        if let Some(home) = &self.home {
            if let Err(e) = f(home) {
                eprintln!("state write failed: {e}");
            }
        }
    }

    fn persist_cooldowns(&self) {
        if self.home.is_some() {
            let entries = self.cooldowns();
            self.persist(|home| home.save_cooldowns(&entries));
        }
    }
}

/// Factor checks over the gateway's locks, one lock per check.
struct GatewayVerifier<'g> {
    gateway: &'g Gateway,
}

impl FactorVerifier for GatewayVerifier<'_> {
    fn certificate(&mut self, certificate: &Certificate, now: Timestamp) -> ValidationResult {
        let pki = lock(&self.gateway.pki);
        validate_certificate(certificate, pki.ca.public_key(), &pki.crl, now)
    }

    fn token(&mut self, principal_id: &str, code: &str, now: Timestamp) -> TokenVerdict {
        let mut tokens = lock(&self.gateway.tokens);
        let verdict = tokens.verify_token(principal_id, code, now);
        if let TokenVerdict::Accept { .. } = verdict {
            self.gateway.persist(|home| home.save_tokens(&tokens));
        }
        verdict
    }

    fn password(&mut self, principal_id: &str, secret: &[u8]) -> bool {
        lock(&self.gateway.registry)
            .get(principal_id)
            .and_then(|p| p.password_credential.as_ref())
            .is_some_and(|cred| verify_salted(cred, secret))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct AuditReport {
    pub status: String,
    pub records: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrupt_at: Option<u64>,
}

impl AuditReport {
    pub fn from_status(status: ChainStatus, records: usize) -> Self {
        match status {
            ChainStatus::Ok => AuditReport { status: "Ok".into(), records, corrupt_at: None },
            ChainStatus::CorruptAt { seq } => AuditReport { status: "CorruptAt".into(), records, corrupt_at: Some(seq) },
        }
    }
}

/// Reason names on the wire: the innermost cause.
pub fn signin_reason(failure: &SigninFailure) -> &'static str {
    match failure {
        SigninFailure::InsufficientFactors => "InsufficientFactors",
        SigninFailure::IdentityMismatch => "IdentityMismatch",
        SigninFailure::FactorInvalid(FactorFailure::Certificate(r)) => r.name(),
        SigninFailure::FactorInvalid(FactorFailure::Token(r)) => r.name(),
        SigninFailure::FactorInvalid(FactorFailure::Password) => "PasswordMismatch",
    }
}

pub fn deny_status(deny: SessionDeny) -> u16 {
    match deny {
        SessionDeny::NoSession | SessionDeny::Expired => 401,
        SessionDeny::HijackSuspected => 403,
        SessionDeny::Access(AccessDenyReason::NoSuchResource) => 404,
        SessionDeny::Access(_) => 403,
    }
}

fn identity_error(e: &IdentityError) -> (u16, &'static str) {
    match e {
        IdentityError::DuplicateId(_) => (409, "DuplicateId"),
        IdentityError::CapacityExceeded(_) => (503, "CapacityExceeded"),
        IdentityError::UnknownPrincipal(_) => (404, "UnknownPrincipal"),
        IdentityError::MissingChangeTicket => (400, "MissingChangeTicket"),
        IdentityError::InvalidId(_) => (400, "InvalidId"),
    }
}
