//! Attack scenarios. Each one drives an attack against a gateway, checks that
//! the defense fired, and runs benign traffic that must still succeed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::net::IpAddr;

use prometheus_core::crypto::{hash, PublicKey};
use prometheus_core::session::{Integrity, Nonce};
use prometheus_core::token::SKEW_STEPS;
use prometheus_core::Timestamp;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::client::{self, check_payload, check_receipt, ClientIdentity, Factors, Transport, TransportError};
use crate::clock::Clock;
use crate::formats::CooldownEntry;
use crate::harness::{lan, Harness};
use crate::wire::{self, Request, Response, RevokeBody};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Scenario {
    Replay,
    Guessing,
    RevokedCert,
    Hijack,
    Tamper,
    Lockout,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::Replay,
        Scenario::Guessing,
        Scenario::RevokedCert,
        Scenario::Hijack,
        Scenario::Tamper,
        Scenario::Lockout,
    ];

    pub fn parse(name: &str) -> Option<Scenario> {
        Scenario::ALL.into_iter().find(|s| s.name() == name)
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Replay => "replay",
            Scenario::Guessing => "guessing",
            Scenario::RevokedCert => "revoked-cert",
            Scenario::Hijack => "hijack",
            Scenario::Tamper => "tamper",
            Scenario::Lockout => "lockout",
        }
    }

    /// The verdict line when every check passes.
    pub fn verdict(self) -> &'static str {
        match self {
            Scenario::Replay => "replay rejected",
            Scenario::Guessing => "guessing locked out",
            Scenario::RevokedCert => "revoked-cert refused",
            Scenario::Hijack => "hijack contained",
            Scenario::Tamper => "tamper detected",
            Scenario::Lockout => "lockout enforced",
        }
    }

    /// Scenarios that need an administrator or a clock the driver controls.
    pub fn needs_harness(self) -> bool {
        matches!(self, Scenario::RevokedCert | Scenario::Lockout)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimulateError {
    #[error("no scenario named {0:?}")]
    UnknownScenario(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("{0} runs only against the in-process gateway")]
    NeedsHarness(&'static str),
}

impl SimulateError {
    pub fn name(&self) -> &'static str {
        match self {
            SimulateError::UnknownScenario(_) => "UnknownScenario",
            SimulateError::Transport(_) => "TargetUnreachable",
            SimulateError::NeedsHarness(_) => "ScenarioNeedsHarness",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Check {
    pub label: String,
    pub expected: String,
    pub observed: String,
    pub control: bool,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.expected == self.observed
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScenarioReport {
    pub scenario: Scenario,
    pub checks: Vec<Check>,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(Check::passed)
    }

    pub fn defense_passed(&self) -> bool {
        self.checks.iter().filter(|c| !c.control).all(Check::passed)
    }

    pub fn control_passed(&self) -> bool {
        self.checks.iter().filter(|c| c.control).all(Check::passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "scenario {}", self.scenario.name());
        for c in &self.checks {
            let mark = if c.passed() { "PASS" } else { "FAIL" };
            let arm = if c.control { "control" } else { "attack" };
            if c.passed() {
                let _ = writeln!(out, "  {mark}  [{arm}] {}: {}", c.label, c.observed);
            } else {
                let _ = writeln!(out, "  {mark}  [{arm}] {}: expected {}, got {}", c.label, c.expected, c.observed);
            }
        }
        let verdict = if self.passed() { self.scenario.verdict() } else { "DEFENSE FAILED" };
        let _ = writeln!(out, "result {}: {verdict}", self.scenario.name());
        out
    }
}

/// Addresses the scenarios use. All but `stranger` must be whitelisted.
#[derive(Clone, Copy, Debug)]
pub struct Addresses {
    pub user: IpAddr,
    pub foreign: IpAddr,
    pub guesser: IpAddr,
    pub admin: IpAddr,
}

impl Addresses {
    pub fn harness() -> Self {
        Addresses { user: lan(1), foreign: lan(2), guesser: lan(3), admin: lan(4) }
    }
}

/// Everything a scenario needs to reach and talk to a gateway.
pub struct Target {
    pub transport: Box<dyn Transport>,
    pub clock: Clock,
    pub user: ClientIdentity,
    pub admin: Option<ClientIdentity>,
    pub addresses: Addresses,
    pub gateway_key: Option<PublicKey>,
    nonce_rng: ChaCha20Rng,
    used_counters: BTreeMap<String, i64>,
    in_process: bool,
}

impl Target {
    /// A fresh in-process harness gateway.
    pub fn in_process() -> Target {
        Target::from_harness(&Harness::new())
    }

    pub fn from_harness(h: &Harness) -> Target {
        Target {
            transport: Box::new(h.gateway.clone()),
            clock: h.gateway.clock().clone(),
            user: h.identity("pilot1").clone(),
            admin: Some(h.identity("chief").clone()),
            addresses: Addresses::harness(),
            gateway_key: Some(h.gateway_key().clone()),
            nonce_rng: ChaCha20Rng::seed_from_u64(42),
            used_counters: BTreeMap::new(),
            in_process: true,
        }
    }

    pub fn remote(
        transport: Box<dyn Transport>,
        clock: Clock,
        user: ClientIdentity,
        admin: Option<ClientIdentity>,
        addresses: Addresses,
        gateway_key: Option<PublicKey>,
    ) -> Target {
        let used_counters = core::iter::once(&user)
            .chain(admin.as_ref())
            .filter_map(|who| who.seed.as_ref())
            .filter(|seed| seed.last_accepted_counter() >= 0)
            .map(|seed| (seed.principal_id().to_string(), seed.last_accepted_counter()))
            .collect();
        Target {
            transport,
            clock,
            user,
            admin,
            addresses,
            gateway_key,
            nonce_rng: ChaCha20Rng::from_entropy(),
            used_counters,
            in_process: false,
        }
    }

    fn now(&self) -> Timestamp {
        self.clock.now()
    }

    fn nonce(&mut self) -> Nonce {
        Nonce::random(&mut self.nonce_rng)
    }

    fn send(&self, req: &Request) -> Result<Response, TransportError> {
        self.transport.send(req)
    }

    /// Waits (or, with a simulated clock, advances) until `who` has a token
    /// code that has not been used yet.
    fn fresh_token_step(&mut self, who: &ClientIdentity) {
        let Some(seed) = &who.seed else { return };
        let used = self.used_counters.get(&who.principal_id).copied();
        loop {
            let counter = seed.counter_at(self.now());
            if used.is_none_or(|u| counter > u) {
                return;
            }
            let step = seed.step_seconds() as i64;
            let wait = step - self.now().unix().rem_euclid(step);
            match self.clock.as_simulated() {
                Some(sim) => {
                    sim.advance(wait);
                }
                None => std::thread::sleep(std::time::Duration::from_secs(wait as u64)),
            }
        }
    }

    fn signin(&mut self, who: &ClientIdentity, ip: IpAddr, factors: Factors) -> Result<(Request, Response), TransportError> {
        if factors.token {
            self.fresh_token_step(who);
        }
        let nonce = self.nonce();
        let now = self.now();
        let req = who.signin_request(ip, factors, now, nonce);
        let resp = self.send(&req)?;
        if factors.token {
            self.note_token_use(who, now, &resp);
        }
        Ok((req, resp))
    }

    /// Remembers the step of a code the gateway may have consumed. Requests
    /// refused before sign-in ran (400 and 403) leave the code unused.
    fn note_token_use(&mut self, who: &ClientIdentity, at: Timestamp, resp: &Response) {
        if let (Some(seed), false) = (&who.seed, matches!(resp.status, 400 | 403)) {
            self.used_counters.insert(who.principal_id.clone(), seed.counter_at(at));
        }
    }

    fn get(&mut self, session: &str, resource: &str, ip: IpAddr) -> Result<(Request, Response), TransportError> {
        let nonce = self.nonce();
        let req = client::resource_request(ip, session, resource, self.now(), nonce);
        let resp = self.send(&req)?;
        Ok((req, resp))
    }

    fn admin_session(&mut self) -> Result<Option<String>, TransportError> {
        let Some(admin) = self.admin.clone() else { return Ok(None) };
        let ip = self.addresses.admin;
        let (_, resp) = self.signin(&admin, ip, Factors::CERT_TOKEN)?;
        Ok(client::session_of(&resp))
    }

    fn cooldown_report(&mut self) -> Result<Option<Vec<CooldownEntry>>, TransportError> {
        let Some(session) = self.admin_session()? else { return Ok(None) };
        let nonce = self.nonce();
        let req = client::admin_get(self.addresses.admin, &session, "/admin/cooldowns", self.now(), nonce);
        let resp = self.send(&req)?;
        Ok(serde_json::from_slice(&resp.body).ok())
    }
}

/// `200` or `401 Replayed`.
fn outcome(resp: &Response) -> String {
    match resp.error_reason() {
        Some(reason) => format!("{} {reason}", resp.status),
        None if resp.status == 403 && resp.body.is_empty() => "403 (empty)".to_string(),
        None => resp.status.to_string(),
    }
}

struct Checks(Vec<Check>);

impl Checks {
    fn attack(&mut self, label: &str, expected: impl Into<String>, observed: impl Into<String>) {
        self.0.push(Check { label: label.into(), expected: expected.into(), observed: observed.into(), control: false });
    }

    fn control(&mut self, label: &str, expected: impl Into<String>, observed: impl Into<String>) {
        self.0.push(Check { label: label.into(), expected: expected.into(), observed: observed.into(), control: true });
    }
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

pub fn run(scenario: Scenario, target: &mut Target) -> Result<ScenarioReport, SimulateError> {
    if scenario.needs_harness() && !target.in_process {
        return Err(SimulateError::NeedsHarness(scenario.name()));
    }
    let mut checks = Checks(Vec::new());
    match scenario {
        Scenario::Replay => replay(target, &mut checks)?,
        Scenario::Guessing => guessing(target, &mut checks)?,
        Scenario::RevokedCert => revoked_cert(target, &mut checks)?,
        Scenario::Hijack => hijack(target, &mut checks)?,
        Scenario::Tamper => tamper(target, &mut checks)?,
        Scenario::Lockout => lockout(target, &mut checks)?,
    }
    Ok(ScenarioReport { scenario, checks: checks.0 })
}

/// Runs each scenario against its own fresh in-process gateway.
pub fn run_in_process(scenarios: &[Scenario]) -> Vec<ScenarioReport> {
    scenarios
        .iter()
        .map(|s| run(*s, &mut Target::in_process()).expect("in-process transport never fails"))
        .collect()
}

fn replay(t: &mut Target, c: &mut Checks) -> Result<(), TransportError> {
    let user = t.user.clone();
    let ip = t.addresses.user;
    let (captured, resp) = t.signin(&user, ip, Factors::CERT_TOKEN)?;
    c.control("benign sign-in", "200", outcome(&resp));
    let resp = t.send(&captured)?;
    c.attack("captured sign-in resubmitted verbatim", "401 Replayed", outcome(&resp));

    // Same one-time code, rebuilt with a fresh nonce, timestamp and proof.
    let body: wire::SigninBody = serde_json::from_slice(&captured.body).unwrap_or_default();
    let nonce = t.nonce();
    let now = t.now();
    let mut rebuilt = user.signin_body(Factors::CERT_ONLY, now, &nonce);
    rebuilt.token_code = body.token_code;
    let req = client::signin_request(ip, &rebuilt, now, nonce);
    let resp = t.send(&req)?;
    c.attack("captured token code in a new request", "401 Replay", outcome(&resp));

    let (_, resp) = t.signin(&user, ip, Factors::CERT_TOKEN)?;
    c.control("sign-in with the next token code", "200", outcome(&resp));
    Ok(())
}

/// A code no skew window step of `who` accepts right now.
fn wrong_code(who: &ClientIdentity, now: Timestamp) -> String {
    let Some(seed) = &who.seed else { return "000000".into() };
    let counter = seed.counter_at(now);
    let valid: Vec<String> = (-SKEW_STEPS..=SKEW_STEPS).map(|d| seed.code_for_counter(counter + d)).collect();
    let modulus = 10u64.pow(seed.digits() as u32);
    (0..modulus)
        .map(|n| format!("{n:0width$}", width = seed.digits() as usize))
        .find(|code| !valid.contains(code))
        .expect("a wrong code exists")
}

fn guessing(t: &mut Target, c: &mut Checks) -> Result<(), TransportError> {
    let user = t.user.clone();
    let ip = t.addresses.guesser;
    for attempt in 1..=3 {
        let nonce = t.nonce();
        let now = t.now();
        let mut body = user.signin_body(Factors::CERT_ONLY, now, &nonce);
        body.token_code = Some(wrong_code(&user, now));
        let resp = t.send(&client::signin_request(ip, &body, now, nonce))?;
        c.attack(&format!("guess {attempt} admitted and refused"), "401 BadCode", outcome(&resp));
    }
    let (_, resp) = t.signin(&user, ip, Factors::CERT_TOKEN)?;
    c.attack("attempt 4 from the guessing address", "403 CoolingDown", outcome(&resp));
    if let Some(report) = t.cooldown_report()? {
        let listed = report.iter().any(|e| e.ip == ip);
        c.attack("guessing address on the cooldown report", "yes", yes_no(listed));
    }
    let user_ip = t.addresses.user;
    let (_, resp) = t.signin(&user, user_ip, Factors::CERT_TOKEN)?;
    c.control("same user from another address", "200", outcome(&resp));
    Ok(())
}

fn revoked_cert(t: &mut Target, c: &mut Checks) -> Result<(), TransportError> {
    let user = t.user.clone();
    let ip = t.addresses.user;
    let (_, resp) = t.signin(&user, ip, Factors::CERT_PASSWORD)?;
    c.control("sign-in before revocation", "200", outcome(&resp));

    let serial = user.certificate.as_ref().map(|cert| cert.serial).unwrap_or_default();
    let Some(session) = t.admin_session()? else {
        c.control("administrator session", "200", "none");
        return Ok(());
    };
    let nonce = t.nonce();
    let body = RevokeBody { serial, reason: "card reported lost".into() };
    let req = client::admin_post(t.addresses.admin, &session, "/admin/revoke", &body, t.now(), nonce);
    let resp = t.send(&req)?;
    c.control("administrator revokes the certificate", "200", outcome(&resp));

    let (_, resp) = t.signin(&user, ip, Factors::CERT_PASSWORD)?;
    c.attack("revoked certificate with password", "401 Revoked", outcome(&resp));
    let (_, resp) = t.signin(&user, ip, Factors::CERT_TOKEN)?;
    c.attack("revoked certificate with valid token", "401 Revoked", outcome(&resp));
    let (_, resp) = t.signin(&user, ip, Factors::TOKEN_PASSWORD)?;
    c.control("token and password still accepted", "200", outcome(&resp));
    Ok(())
}

fn hijack(t: &mut Target, c: &mut Checks) -> Result<(), TransportError> {
    let user = t.user.clone();
    let ip = t.addresses.user;
    let (_, resp) = t.signin(&user, ip, Factors::CERT_TOKEN)?;
    c.control("sign-in", "200", outcome(&resp));
    let session = client::session_of(&resp).unwrap_or_default();
    let (_, resp) = t.get(&session, "flight-simulator", ip)?;
    c.control("resource from the bound address", "200", outcome(&resp));
    let (_, resp) = t.get(&session, "flight-simulator", t.addresses.foreign)?;
    c.attack("stolen session from a foreign address", "403 HijackSuspected", outcome(&resp));
    let (_, resp) = t.get(&session, "flight-simulator", ip)?;
    c.attack("stolen session afterwards from the bound address", "401 NoSession", outcome(&resp));
    let (_, resp) = t.signin(&user, ip, Factors::CERT_TOKEN)?;
    let fresh = client::session_of(&resp).unwrap_or_default();
    let (_, resp) = t.get(&fresh, "back-office", ip)?;
    c.control("new session after re-authentication", "200", outcome(&resp));
    Ok(())
}

fn tamper(t: &mut Target, c: &mut Checks) -> Result<(), TransportError> {
    let user = t.user.clone();
    let ip = t.addresses.user;
    let (_, resp) = t.signin(&user, ip, Factors::CERT_TOKEN)?;
    let session = client::session_of(&resp).unwrap_or_default();
    let (req, resp) = t.get(&session, "flight-simulator", ip)?;
    c.control("untouched payload verifies", "Ok", integrity_name(check_payload(&resp)));
    if let Some(key) = t.gateway_key.clone() {
        c.control("receipt verifies for the request", "yes", yes_no(check_receipt(&key, &req, &resp)));
        let mut altered = req.clone();
        altered.path = "/resource/back-office".into();
        c.attack("receipt checked against an altered request", "no", yes_no(check_receipt(&key, &altered, &resp)));
    }
    let mut mitm = resp.clone();
    if let Some(b) = mitm.body.first_mut() {
        *b ^= 0x01;
    }
    c.attack("payload with one flipped bit", "TamperDetected", integrity_name(check_payload(&mitm)));

    // Request side: a body changed in transit under its original digest.
    let nonce = t.nonce();
    let now = t.now();
    let original = serde_json::to_vec(&user.signin_body(Factors::CERT_ONLY, now, &nonce)).unwrap_or_default();
    let mut forged = client::signin_request(ip, &wire::SigninBody { principal_id: "chief".into(), ..Default::default() }, now, nonce);
    forged = forged.with_header(wire::PAYLOAD_DIGEST_HEADER, hash(&original).to_hex());
    let resp = t.send(&forged)?;
    c.attack("request body altered under its digest", "400 TamperDetected", outcome(&resp));

    t.fresh_token_step(&user);
    let nonce = t.nonce();
    let now = t.now();
    let mut honest = user.signin_request(ip, Factors::CERT_TOKEN, now, nonce);
    honest = honest.clone().with_header(wire::PAYLOAD_DIGEST_HEADER, hash(&honest.body).to_hex());
    let resp = t.send(&honest)?;
    t.note_token_use(&user, now, &resp);
    c.control("request with a matching digest", "200", outcome(&resp));
    Ok(())
}

fn integrity_name(i: Integrity) -> &'static str {
    match i {
        Integrity::Ok => "Ok",
        Integrity::TamperDetected => "TamperDetected",
    }
}

fn lockout(t: &mut Target, c: &mut Checks) -> Result<(), TransportError> {
    let Some(sim) = t.clock.as_simulated().cloned() else {
        c.control("simulated clock", "present", "absent");
        return Ok(());
    };
    let user = t.user.clone();
    let ip = t.addresses.guesser;
    let (_, resp) = t.signin(&user, t.addresses.user, Factors::CERT_TOKEN)?;
    c.control("benign sign-in before the attack", "200", outcome(&resp));
    let mut started = t.now();
    for attempt in 1..=3 {
        let nonce = t.nonce();
        let now = t.now();
        let mut body = user.signin_body(Factors::CERT_ONLY, now, &nonce);
        body.token_code = Some(wrong_code(&user, now));
        let resp = t.send(&client::signin_request(ip, &body, now, nonce))?;
        c.attack(&format!("failure {attempt}"), "401 BadCode", outcome(&resp));
        started = now;
    }
    let until = t.cooldown_report()?.and_then(|r| r.into_iter().find(|e| e.ip == ip)).map(|e| e.until);
    let lasting = until.map(|u| u.seconds_since(started).to_string()).unwrap_or_else(|| "none".into());
    c.attack("cooldown length in seconds", "86400", lasting);

    let cooldown = t.clock.now().seconds_since(started);
    sim.advance(86_399 - cooldown);
    let (_, resp) = t.signin(&user, ip, Factors::CERT_TOKEN)?;
    c.attack("attempt at +23:59:59", "403 CoolingDown", outcome(&resp));
    let elapsed = t.clock.now().seconds_since(started);
    sim.advance(86_401 - elapsed);
    let (_, resp) = t.signin(&user, ip, Factors::CERT_TOKEN)?;
    c.control("attempt at +24:00:01 admitted", "200", outcome(&resp));
    Ok(())
}

/// Renders reports plus a summary line and returns whether all passed.
pub fn render_all(reports: &[ScenarioReport]) -> (String, bool) {
    let mut out = String::new();
    for r in reports {
        out.push_str(&r.render());
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    let _ = writeln!(out, "{} scenario(s), {} passed, {} failed", reports.len(), reports.len() - failed, failed);
    (out, failed == 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_scenario_passes_in_process() {
        for report in run_in_process(&Scenario::ALL) {
            assert!(report.passed(), "{}", report.render());
            assert!(report.checks.iter().any(|c| c.control), "{} lacks a control arm", report.scenario.name());
            assert!(report.checks.iter().any(|c| !c.control), "{} lacks an attack", report.scenario.name());
        }
    }

    #[test]
    fn parse_names() {
        for s in Scenario::ALL {
            assert_eq!(Scenario::parse(s.name()), Some(s));
        }
        assert_eq!(Scenario::parse("phishing"), None);
    }

    #[test]
    fn failed_check_flips_the_verdict() {
        let report = ScenarioReport {
            scenario: Scenario::Replay,
            checks: vec![Check { label: "x".into(), expected: "401 Replayed".into(), observed: "200".into(), control: false }],
        };
        assert!(!report.defense_passed());
        assert!(report.render().contains("result replay: DEFENSE FAILED"));
        assert!(report.render().contains("  FAIL  [attack] x: expected 401 Replayed, got 200"));
    }
}
