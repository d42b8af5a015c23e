//! Single-root certificate authority with signed revocation lists.
//!
//! The revocation list is the only source of revocation truth: the OCSP-style
//! [`RevocationList::check_status`] answers from the latest signed list. A
//! list also carries `issued_through`, the highest serial the CA had issued
//! when the list was signed; serials are dense from 1, which lets a status
//! query tell "issued and not revoked" apart from "never issued here".
//!
//! Canonical signing payloads are UTF-8 `key=value` pairs sorted by key and
//! joined by `;`, with RFC-3339 UTC timestamps.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::crypto::{self, CryptoError, KeyPair, PublicKey, Signature};
use crate::time::Timestamp;

pub type Serial = u64;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum PkiError {
    #[error("validity window must satisfy not_before < not_after")]
    InvalidValidityWindow,
    #[error("certificate subject is empty")]
    EmptySubject,
    #[error("identifier contains a reserved character: {0:?}")]
    ReservedCharacter(String),
    #[error("serial {0} was not issued by this authority")]
    UnknownSerial(Serial),
    #[error("revocation list signature does not verify")]
    BadCrlSignature,
    #[error("malformed canonical payload: {0}")]
    MalformedPayload(&'static str),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Validity {
    pub not_before: Timestamp,
    pub not_after: Timestamp,
}

impl Validity {
    pub fn new(not_before: Timestamp, not_after: Timestamp) -> Self {
        Validity { not_before, not_after }
    }

    pub fn contains(&self, now: Timestamp) -> bool {
        self.not_before <= now && now <= self.not_after
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Certificate {
    pub serial: Serial,
    pub subject: String,
    pub subject_public_key: PublicKey,
    pub issuer: String,
    pub not_before: Timestamp,
    pub not_after: Timestamp,
    pub signature: Signature,
}

impl Certificate {
    /// Everything except the signature, in canonical form.
    pub fn canonical_payload(&self) -> String {
        format!(
            "issuer={};not_after={};not_before={};serial={};subject={};subject_public_key={}",
            self.issuer,
            self.not_after,
            self.not_before,
            self.serial,
            self.subject,
            self.subject_public_key.encode()
        )
    }

    /// Rebuilds a certificate from its canonical payload and signature.
    /// Only the structure is checked here; use [`validate_certificate`] for trust.
    pub fn from_canonical(payload: &str, signature: Signature) -> Result<Self, PkiError> {
        let fields = parse_canonical(
            payload,
            &["issuer", "not_after", "not_before", "serial", "subject", "subject_public_key"],
        )?;
        let cert = Certificate {
            issuer: fields[0].to_string(),
            not_after: parse_time(fields[1])?,
            not_before: parse_time(fields[2])?,
            serial: parse_serial(fields[3])?,
            subject: fields[4].to_string(),
            subject_public_key: PublicKey::decode(fields[5])?,
            signature,
        };
        if cert.canonical_payload() != payload {
            return Err(PkiError::MalformedPayload("payload is not in canonical form"));
        }
        Ok(cert)
    }

    pub fn validity(&self) -> Validity {
        Validity::new(self.not_before, self.not_after)
    }

    pub fn signature_verifies(&self, issuer_key: &PublicKey) -> bool {
        crypto::verify_signature(issuer_key, self.canonical_payload().as_bytes(), &self.signature)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RevocationEntry {
    pub revoked_at: Timestamp,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CertStatus {
    Good,
    Revoked { at: Timestamp, reason: String },
    Unknown,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RevocationList {
    pub issuer: String,
    pub issued_at: Timestamp,
    pub issued_through: Serial,
    pub revoked: BTreeMap<Serial, RevocationEntry>,
    pub signature: Signature,
}

impl RevocationList {
    /// `revoked` is a comma-separated list of `serial|revoked_at|hex(reason)`
    /// in ascending serial order.
    pub fn canonical_payload(&self) -> String {
        canonical_crl(&self.issuer, self.issued_at, self.issued_through, &self.revoked)
    }

    pub fn from_canonical(payload: &str, signature: Signature) -> Result<Self, PkiError> {
        let fields = parse_canonical(payload, &["issued_at", "issued_through", "issuer", "revoked"])?;
        let mut revoked = BTreeMap::new();
        if !fields[3].is_empty() {
            for item in fields[3].split(',') {
                let mut parts = item.split('|');
                let (Some(serial), Some(at), Some(reason), None) =
                    (parts.next(), parts.next(), parts.next(), parts.next())
                else {
                    return Err(PkiError::MalformedPayload("revocation entry"));
                };
                let reason = hex::decode(reason)
                    .ok()
                    .and_then(|bytes| String::from_utf8(bytes).ok())
                    .ok_or(PkiError::MalformedPayload("revocation reason"))?;
                let entry = RevocationEntry { revoked_at: parse_time(at)?, reason };
                if revoked.insert(parse_serial(serial)?, entry).is_some() {
                    return Err(PkiError::MalformedPayload("duplicate serial"));
                }
            }
        }
        let list = RevocationList {
            issued_at: parse_time(fields[0])?,
            issued_through: parse_serial(fields[1])?,
            issuer: fields[2].to_string(),
            revoked,
            signature,
        };
        if list.canonical_payload() != payload {
            return Err(PkiError::MalformedPayload("payload is not in canonical form"));
        }
        Ok(list)
    }

    pub fn signature_verifies(&self, issuer_key: &PublicKey) -> bool {
        crypto::verify_signature(issuer_key, self.canonical_payload().as_bytes(), &self.signature)
    }

    pub fn revoked_serials(&self) -> BTreeSet<Serial> {
        self.revoked.keys().copied().collect()
    }

    /// Status of `serial` according to this list, after checking the list's
    /// signature under `issuer_key`.
    pub fn check_status(&self, serial: Serial, issuer_key: &PublicKey) -> Result<CertStatus, PkiError> {
        if !self.signature_verifies(issuer_key) {
            return Err(PkiError::BadCrlSignature);
        }
        Ok(self.status_unchecked(serial))
    }

    fn status_unchecked(&self, serial: Serial) -> CertStatus {
        if let Some(entry) = self.revoked.get(&serial) {
            CertStatus::Revoked { at: entry.revoked_at, reason: entry.reason.clone() }
        } else if (1..=self.issued_through).contains(&serial) {
            CertStatus::Good
        } else {
            CertStatus::Unknown
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InvalidReason {
    BadSignature,
    NotYetValid,
    Expired,
    BadCrlSignature,
    WrongIssuer,
    Revoked,
    UnknownStatus,
    /// The presenter could not prove possession of the certificate's key.
    ProofOfPossession,
}

impl InvalidReason {
    pub fn name(&self) -> &'static str {
        match self {
            InvalidReason::BadSignature => "BadSignature",
            InvalidReason::NotYetValid => "NotYetValid",
            InvalidReason::Expired => "Expired",
            InvalidReason::BadCrlSignature => "BadCrlSignature",
            InvalidReason::WrongIssuer => "WrongIssuer",
            InvalidReason::Revoked => "Revoked",
            InvalidReason::UnknownStatus => "UnknownStatus",
            InvalidReason::ProofOfPossession => "ProofOfPossession",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ValidationResult {
    Valid,
    Invalid(InvalidReason),
}

impl ValidationResult {
    pub fn is_valid(&self) -> bool {
        matches!(self, ValidationResult::Valid)
    }
}

/// Checks, in order: issuer signature, validity window, revocation status.
/// The first failing check is reported.
pub fn validate_certificate(
    cert: &Certificate,
    trust_anchor: &PublicKey,
    crl: &RevocationList,
    now: Timestamp,
) -> ValidationResult {
    use InvalidReason::*;
    if !cert.signature_verifies(trust_anchor) {
        return ValidationResult::Invalid(BadSignature);
    }
    if now < cert.not_before {
        return ValidationResult::Invalid(NotYetValid);
    }
    if now > cert.not_after {
        return ValidationResult::Invalid(Expired);
    }
    if crl.issuer != cert.issuer {
        return ValidationResult::Invalid(WrongIssuer);
    }
    match crl.check_status(cert.serial, trust_anchor) {
        Err(_) => ValidationResult::Invalid(BadCrlSignature),
        Ok(CertStatus::Good) => ValidationResult::Valid,
        Ok(CertStatus::Revoked { .. }) => ValidationResult::Invalid(Revoked),
        Ok(CertStatus::Unknown) => ValidationResult::Invalid(UnknownStatus),
    }
}

/// The project-local root of trust.
///
/// Mutating operations take `&mut self`; callers sharing an authority across
/// threads serialize issuance and revocation behind one lock.
#[derive(Clone, Debug)]
pub struct CertificateAuthority {
    id: String,
    keypair: KeyPair,
    next_serial: Serial,
    issued: BTreeMap<Serial, Certificate>,
    revoked: BTreeMap<Serial, RevocationEntry>,
}

impl CertificateAuthority {
    pub fn new(id: &str, keypair: KeyPair) -> Result<Self, PkiError> {
        check_identifier(id)?;
        Ok(CertificateAuthority {
            id: id.to_string(),
            keypair,
            next_serial: 1,
            issued: BTreeMap::new(),
            revoked: BTreeMap::new(),
        })
    }

    /// Reassembles persisted authority state. Certificates must carry this
    /// authority's id and consecutive serials from 1.
    pub fn restore(
        id: &str,
        keypair: KeyPair,
        issued: Vec<Certificate>,
        revoked: BTreeMap<Serial, RevocationEntry>,
    ) -> Result<Self, PkiError> {
        let mut ca = CertificateAuthority::new(id, keypair)?;
        for cert in issued {
            if cert.serial != ca.next_serial || cert.issuer != ca.id {
                return Err(PkiError::MalformedPayload("issued certificates out of sequence"));
            }
            ca.next_serial += 1;
            ca.issued.insert(cert.serial, cert);
        }
        if let Some(serial) = revoked.keys().find(|s| !ca.issued.contains_key(s)) {
            return Err(PkiError::UnknownSerial(*serial));
        }
        ca.revoked = revoked;
        Ok(ca)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn keypair(&self) -> &KeyPair {
        &self.keypair
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.keypair.public_key
    }

    pub fn next_serial(&self) -> Serial {
        self.next_serial
    }

    pub fn issued(&self) -> impl Iterator<Item = &Certificate> {
        self.issued.values()
    }

    pub fn certificate(&self, serial: Serial) -> Option<&Certificate> {
        self.issued.get(&serial)
    }

    pub fn revocations(&self) -> &BTreeMap<Serial, RevocationEntry> {
        &self.revoked
    }

    pub fn issue_certificate(
        &mut self,
        subject: &str,
        subject_public_key: PublicKey,
        validity: Validity,
    ) -> Result<Certificate, PkiError> {
        if subject.is_empty() {
            return Err(PkiError::EmptySubject);
        }
        check_identifier(subject)?;
        if validity.not_before >= validity.not_after {
            return Err(PkiError::InvalidValidityWindow);
        }
        let mut cert = Certificate {
            serial: self.next_serial,
            subject: subject.to_string(),
            subject_public_key,
            issuer: self.id.clone(),
            not_before: validity.not_before,
            not_after: validity.not_after,
            signature: Signature::from_bytes(Vec::new()),
        };
        cert.signature = crypto::sign(&self.keypair.private_key, cert.canonical_payload().as_bytes())?;
        self.issued.insert(cert.serial, cert.clone());
        self.next_serial += 1;
        Ok(cert)
    }

    /// Revokes `serial` and returns a freshly signed list. Revoking an
    /// already revoked serial keeps its original time and reason.
    pub fn revoke(&mut self, serial: Serial, reason: &str, now: Timestamp) -> Result<RevocationList, PkiError> {
        if !self.issued.contains_key(&serial) {
            return Err(PkiError::UnknownSerial(serial));
        }
        self.revoked
            .entry(serial)
            .or_insert_with(|| RevocationEntry { revoked_at: now, reason: reason.to_string() });
        self.current_crl(now)
    }

    pub fn current_crl(&self, now: Timestamp) -> Result<RevocationList, PkiError> {
        let issued_through = self.next_serial - 1;
        let payload = canonical_crl(&self.id, now, issued_through, &self.revoked);
        let signature = crypto::sign(&self.keypair.private_key, payload.as_bytes())?;
        Ok(RevocationList {
            issuer: self.id.clone(),
            issued_at: now,
            issued_through,
            revoked: self.revoked.clone(),
            signature,
        })
    }
}

fn canonical_crl(
    issuer: &str,
    issued_at: Timestamp,
    issued_through: Serial,
    revoked: &BTreeMap<Serial, RevocationEntry>,
) -> String {
    let entries: Vec<String> = revoked
        .iter()
        .map(|(serial, e)| format!("{serial}|{}|{}", e.revoked_at, hex::encode(e.reason.as_bytes())))
        .collect();
    format!(
        "issued_at={issued_at};issued_through={issued_through};issuer={issuer};revoked={}",
        entries.join(",")
    )
}

fn check_identifier(value: &str) -> Result<(), PkiError> {
    if value.chars().any(|c| c == ';' || c == '=' || c.is_control()) {
        return Err(PkiError::ReservedCharacter(value.to_string()));
    }
    Ok(())
}

fn parse_canonical<'a>(payload: &'a str, keys: &[&str]) -> Result<Vec<&'a str>, PkiError> {
    let pairs: Vec<&str> = payload.split(';').collect();
    if pairs.len() != keys.len() {
        return Err(PkiError::MalformedPayload("unexpected field count"));
    }
    pairs
        .iter()
        .zip(keys)
        .map(|(pair, key)| match pair.split_once('=') {
            Some((k, v)) if k == *key => Ok(v),
            _ => Err(PkiError::MalformedPayload("unexpected field")),
        })
        .collect()
}

fn parse_time(text: &str) -> Result<Timestamp, PkiError> {
    Timestamp::parse_rfc3339(text).map_err(|_| PkiError::MalformedPayload("timestamp"))
}

fn parse_serial(text: &str) -> Result<Serial, PkiError> {
    text.parse().map_err(|_| PkiError::MalformedPayload("serial"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::toy_keypair;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    const T0: Timestamp = Timestamp::from_unix(1_790_000_000);

    fn rsa(seed: u64) -> KeyPair {
        crypto::generate_keypair(&mut ChaCha20Rng::seed_from_u64(seed), 1024).unwrap()
    }

    fn year() -> Validity {
        Validity::new(T0, T0.plus_seconds(365 * 86_400))
    }

    fn ca_with_two() -> (CertificateAuthority, Certificate, Certificate) {
        let mut ca = CertificateAuthority::new("prometheus-root", rsa(10)).unwrap();
        let a = ca.issue_certificate("alice", rsa(11).public_key, year()).unwrap();
        let b = ca.issue_certificate("bob", rsa(12).public_key, year()).unwrap();
        (ca, a, b)
    }

    #[test]
    fn serials_start_at_one_and_increase() {
        let (ca, a, b) = ca_with_two();
        assert_eq!((a.serial, b.serial), (1, 2));
        assert!(a.signature_verifies(ca.public_key()));
        assert!(b.signature_verifies(ca.public_key()));
        let crl = ca.current_crl(T0).unwrap();
        assert_eq!(crl.check_status(1, ca.public_key()).unwrap(), CertStatus::Good);
        assert_eq!(crl.check_status(0, ca.public_key()).unwrap(), CertStatus::Unknown);
        assert_eq!(crl.check_status(3, ca.public_key()).unwrap(), CertStatus::Unknown);
    }

    #[test]
    fn degenerate_window_and_empty_subject() {
        let mut ca = CertificateAuthority::new("root", toy_keypair(3233, 17, 2753)).unwrap();
        let pk = toy_keypair(3233, 17, 2753).public_key;
        assert_eq!(
            ca.issue_certificate("alice", pk.clone(), Validity::new(T0, T0)),
            Err(PkiError::InvalidValidityWindow)
        );
        assert_eq!(ca.issue_certificate("", pk.clone(), year()), Err(PkiError::EmptySubject));
        assert!(matches!(
            ca.issue_certificate("a;b", pk, year()),
            Err(PkiError::ReservedCharacter(_))
        ));
        assert_eq!(ca.next_serial(), 1);
    }

    #[test]
    fn revocation_is_idempotent_and_visible() {
        let (mut ca, _, _) = ca_with_two();
        let first = ca.revoke(1, "key compromise", T0).unwrap();
        assert!(matches!(
            first.check_status(1, ca.public_key()).unwrap(),
            CertStatus::Revoked { at, .. } if at == T0
        ));
        let later = T0.plus_seconds(60);
        let second = ca.revoke(1, "again", later).unwrap();
        assert_eq!(second.revoked, first.revoked);
        assert_eq!(second.issued_at, later);
        assert_eq!(ca.revoke(99, "x", T0), Err(PkiError::UnknownSerial(99)));
    }

    #[test]
    fn validation_order_and_window() {
        let (mut ca, a, _) = ca_with_two();
        let crl = ca.current_crl(T0).unwrap();
        let anchor = ca.public_key().clone();
        assert_eq!(validate_certificate(&a, &anchor, &crl, T0), ValidationResult::Valid);
        let past_end = a.not_after.plus_seconds(1);
        assert_eq!(
            validate_certificate(&a, &anchor, &crl, past_end),
            ValidationResult::Invalid(InvalidReason::Expired)
        );
        assert_eq!(
            validate_certificate(&a, &anchor, &crl, T0.minus_seconds(1)),
            ValidationResult::Invalid(InvalidReason::NotYetValid)
        );
        let crl = ca.revoke(a.serial, "lost card", T0).unwrap();
        assert_eq!(
            validate_certificate(&a, &anchor, &crl, T0),
            ValidationResult::Invalid(InvalidReason::Revoked)
        );
        // A broken signature wins over both expiry and revocation.
        let mut forged = a.clone();
        forged.subject = "mallory".into();
        assert_eq!(
            validate_certificate(&forged, &anchor, &crl, past_end),
            ValidationResult::Invalid(InvalidReason::BadSignature)
        );
    }

    #[test]
    fn foreign_ca_signature_is_rejected() {
        let (ca, a, _) = ca_with_two();
        let mut rogue = CertificateAuthority::new("prometheus-root", rsa(20)).unwrap();
        let fake = rogue.issue_certificate("alice", a.subject_public_key.clone(), year()).unwrap();
        let crl = ca.current_crl(T0).unwrap();
        assert_eq!(
            validate_certificate(&fake, ca.public_key(), &crl, T0),
            ValidationResult::Invalid(InvalidReason::BadSignature)
        );
    }

    #[test]
    fn canonical_forms_round_trip() {
        let (mut ca, a, _) = ca_with_two();
        assert_eq!(Certificate::from_canonical(&a.canonical_payload(), a.signature.clone()).unwrap(), a);
        let crl = ca.revoke(2, "reason; with = specials", T0).unwrap();
        let back = RevocationList::from_canonical(&crl.canonical_payload(), crl.signature.clone()).unwrap();
        assert_eq!(back, crl);
        assert!(back.signature_verifies(ca.public_key()));

        // Any change to the revoked set breaks the signature.
        let mut edited = crl.clone();
        let entry = edited.revoked.remove(&2).unwrap();
        edited.revoked.insert(1, entry);
        assert_eq!(edited.check_status(1, ca.public_key()), Err(PkiError::BadCrlSignature));
    }

    #[test]
    fn payload_field_order_is_fixed() {
        assert!(matches!(
            Certificate::from_canonical("serial=1", Signature::from_bytes(Vec::new())),
            Err(PkiError::MalformedPayload(_))
        ));
    }
}
