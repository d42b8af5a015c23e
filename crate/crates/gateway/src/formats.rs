//! Text formats for everything the gateway keeps on disk or hands to users.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::net::IpAddr;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use prometheus_core::crypto::{KeyPair, PrivateKey, Signature};
use prometheus_core::identity::{AclEntry, Principal};
use prometheus_core::pki::{Certificate, CertificateAuthority, RevocationEntry, RevocationList, Serial};
use prometheus_core::token::{TokenSeed, SEED_LEN};
use prometheus_core::Timestamp;
use serde::{Deserialize, Serialize};

pub const CERT_HEADER: &str = "PROMETHEUS CERT V1";
pub const CRL_HEADER: &str = "PROMETHEUS CRL V1";
pub const KEY_HEADER: &str = "PROMETHEUS KEY V1";
pub const SEED_HEADER: &str = "PROMETHEUS SEED V1";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("expected header {0:?}")]
    BadHeader(&'static str),
    #[error("malformed envelope")]
    Envelope,
    #[error("invalid base64")]
    Base64,
    #[error("invalid payload: {0}")]
    Payload(String),
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
}

fn envelope(header: &str, payload: &str, signature: &Signature) -> String {
    format!("{header}\n{}\n{}\n", B64.encode(payload), B64.encode(signature.as_bytes()))
}

fn open_envelope(header: &'static str, text: &str) -> Result<(String, Signature), FormatError> {
    let mut lines = text.lines();
    if lines.next().map(str::trim_end) != Some(header) {
        return Err(FormatError::BadHeader(header));
    }
    let payload = lines.next().ok_or(FormatError::Envelope)?.trim();
    let signature = lines.next().ok_or(FormatError::Envelope)?.trim();
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(FormatError::Envelope);
    }
    let payload = B64.decode(payload).map_err(|_| FormatError::Base64)?;
    let payload = String::from_utf8(payload).map_err(|_| FormatError::Envelope)?;
    let signature = B64.decode(signature).map_err(|_| FormatError::Base64)?;
    Ok((payload, Signature::from_bytes(signature)))
}

pub fn encode_certificate(cert: &Certificate) -> String {
    envelope(CERT_HEADER, &cert.canonical_payload(), &cert.signature)
}

pub fn decode_certificate(text: &str) -> Result<Certificate, FormatError> {
    let (payload, signature) = open_envelope(CERT_HEADER, text)?;
    Certificate::from_canonical(&payload, signature).map_err(|e| FormatError::Payload(e.to_string()))
}

pub fn encode_crl(crl: &RevocationList) -> String {
    envelope(CRL_HEADER, &crl.canonical_payload(), &crl.signature)
}

pub fn decode_crl(text: &str) -> Result<RevocationList, FormatError> {
    let (payload, signature) = open_envelope(CRL_HEADER, text)?;
    RevocationList::from_canonical(&payload, signature).map_err(|e| FormatError::Payload(e.to_string()))
}

pub fn encode_private_key(key: &PrivateKey) -> String {
    format!("{KEY_HEADER}\n{}\n", key.encode())
}

pub fn decode_private_key(text: &str) -> Result<KeyPair, FormatError> {
    let mut lines = text.lines();
    if lines.next().map(str::trim_end) != Some(KEY_HEADER) {
        return Err(FormatError::BadHeader(KEY_HEADER));
    }
    let body = lines.next().ok_or(FormatError::Envelope)?.trim();
    let key = PrivateKey::decode(body).map_err(|e| FormatError::Payload(e.to_string()))?;
    Ok(KeyPair::from_private(key))
}

/// `PROMETHEUS SEED V1;<principal>;<base32 seed>;<step>;<digits>`
pub fn seed_export_line(seed: &TokenSeed) -> String {
    format!(
        "{SEED_HEADER};{};{};{};{}",
        seed.principal_id(),
        data_encoding::BASE32_NOPAD.encode(seed.seed()),
        seed.step_seconds(),
        seed.digits()
    )
}

pub fn parse_seed_export(line: &str) -> Result<TokenSeed, FormatError> {
    let bad = |m: &str| FormatError::Payload(m.to_string());
    let parts: Vec<&str> = line.trim().split(';').collect();
    let [header, principal, seed, step, digits] = parts[..] else {
        return Err(FormatError::Envelope);
    };
    if header != SEED_HEADER {
        return Err(FormatError::BadHeader(SEED_HEADER));
    }
    let bytes = data_encoding::BASE32_NOPAD.decode(seed.as_bytes()).map_err(|_| bad("seed is not base32"))?;
    let seed: [u8; SEED_LEN] = bytes.try_into().map_err(|_| bad("seed must be 20 bytes"))?;
    let step = step.parse().map_err(|_| bad("step"))?;
    let digits = digits.parse().map_err(|_| bad("digits"))?;
    TokenSeed::new(principal, seed, step, digits).map_err(|e| bad(&e.to_string()))
}

/// Server-side token state, one JSON object per line.
#[derive(Serialize, Deserialize)]
struct SeedRecord {
    principal_id: String,
    seed: String,
    step_seconds: u32,
    digits: u8,
    last_accepted_counter: i64,
}

pub fn encode_seeds<'a>(seeds: impl IntoIterator<Item = &'a TokenSeed>) -> String {
    let mut out = String::new();
    for s in seeds {
        let record = SeedRecord {
            principal_id: s.principal_id().to_string(),
            seed: hex::encode(s.seed()),
            step_seconds: s.step_seconds(),
            digits: s.digits(),
            last_accepted_counter: s.last_accepted_counter(),
        };
        out.push_str(&serde_json::to_string(&record).expect("seed record serializes"));
        out.push('\n');
    }
    out
}

pub fn decode_seeds(text: &str) -> Result<Vec<TokenSeed>, FormatError> {
    json_lines(text, |line| {
        let r: SeedRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let mut seed = [0u8; SEED_LEN];
        hex::decode_to_slice(&r.seed, &mut seed).map_err(|e| e.to_string())?;
        TokenSeed::new(&r.principal_id, seed, r.step_seconds, r.digits)
            .map(|s| s.with_last_accepted(r.last_accepted_counter))
            .map_err(|e| e.to_string())
    })
}

fn json_lines<T>(text: &str, mut parse: impl FnMut(&str) -> Result<T, String>) -> Result<Vec<T>, FormatError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse(l).map_err(|message| FormatError::Line { line: i + 1, message }))
        .collect()
}

/// One address per line; `#` starts a comment.
pub fn parse_whitelist(text: &str) -> Result<Vec<IpAddr>, FormatError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let ip = line
            .parse()
            .map_err(|_| FormatError::Line { line: i + 1, message: format!("not an IP address: {line:?}") })?;
        out.push(ip);
    }
    Ok(out)
}

pub fn encode_whitelist<'a>(ips: impl IntoIterator<Item = &'a IpAddr>) -> String {
    ips.into_iter().map(|ip| format!("{ip}\n")).collect()
}

pub fn parse_acl(text: &str) -> Result<Vec<AclEntry>, FormatError> {
    serde_json::from_str(text).map_err(|e| FormatError::Payload(e.to_string()))
}

pub fn encode_acl(entries: &[AclEntry]) -> String {
    let mut out = serde_json::to_string_pretty(entries).expect("ACL serializes");
    out.push('\n');
    out
}

pub fn encode_principals<'a>(principals: impl IntoIterator<Item = &'a Principal>) -> String {
    let mut out = String::new();
    for p in principals {
        out.push_str(&serde_json::to_string(p).expect("principal serializes"));
        out.push('\n');
    }
    out
}

pub fn decode_principals(text: &str) -> Result<Vec<Principal>, FormatError> {
    json_lines(text, |line| serde_json::from_str(line).map_err(|e| e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CooldownEntry {
    pub ip: IpAddr,
    pub until: Timestamp,
}

pub fn encode_cooldowns(entries: &[CooldownEntry]) -> String {
    let mut out = serde_json::to_string_pretty(entries).expect("cooldowns serialize");
    out.push('\n');
    out
}

pub fn decode_cooldowns(text: &str) -> Result<Vec<CooldownEntry>, FormatError> {
    serde_json::from_str(text).map_err(|e| FormatError::Payload(e.to_string()))
}

/// Aligned two-column table: `IP` and `UNTIL`.
pub fn render_cooldown_report(entries: &[CooldownEntry]) -> String {
    let width = entries.iter().map(|e| e.ip.to_string().len()).max().unwrap_or(0).max(2);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  UNTIL", "IP");
    for e in entries {
        let _ = writeln!(out, "{:<width$}  {}", e.ip.to_string(), e.until);
    }
    out
}

#[derive(Serialize, Deserialize)]
struct CaFile {
    id: String,
    private_key: String,
    issued: Vec<String>,
    revoked: BTreeMap<Serial, RevocationEntryFile>,
}

#[derive(Serialize, Deserialize)]
struct RevocationEntryFile {
    revoked_at: Timestamp,
    reason: String,
}

/// CA state: key, issued certificates (as envelopes) and revocations. The
/// file holds the CA private key.
pub fn encode_ca(ca: &CertificateAuthority) -> String {
    let file = CaFile {
        id: ca.id().to_string(),
        private_key: ca.keypair().private_key.encode(),
        issued: ca.issued().map(encode_certificate).collect(),
        revoked: ca
            .revocations()
            .iter()
            .map(|(s, e)| (*s, RevocationEntryFile { revoked_at: e.revoked_at, reason: e.reason.clone() }))
            .collect(),
    };
    let mut out = serde_json::to_string_pretty(&file).expect("CA state serializes");
    out.push('\n');
    out
}

pub fn decode_ca(text: &str) -> Result<CertificateAuthority, FormatError> {
    let file: CaFile = serde_json::from_str(text).map_err(|e| FormatError::Payload(e.to_string()))?;
    let key = PrivateKey::decode(&file.private_key).map_err(|e| FormatError::Payload(e.to_string()))?;
    let keypair = KeyPair::from_private(key);
    let issued = file
        .issued
        .iter()
        .map(|c| decode_certificate(c))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(bad) = issued.iter().find(|c| !c.signature_verifies(&keypair.public_key)) {
        return Err(FormatError::Payload(format!("certificate {} is not signed by this CA", bad.serial)));
    }
    let revoked = file
        .revoked
        .into_iter()
        .map(|(s, e)| (s, RevocationEntry { revoked_at: e.revoked_at, reason: e.reason }))
        .collect();
    CertificateAuthority::restore(&file.id, keypair, issued, revoked).map_err(|e| FormatError::Payload(e.to_string()))
}
