//! Append-only, hash-chained audit log.
//!
//! Each record stores the digest of its predecessor (`prev_hash`, all zero
//! for the first record) and its own digest over every other field. The
//! serialized form is one compact JSON object per line with fields in a fixed
//! order; the in-memory canonical form and the on-disk line are the same
//! bytes, so a log read back from disk verifies exactly as it did in memory.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::crypto::{hash, Digest};
use crate::time::Timestamp;

/// Action names used across the gateway.
pub mod actions {
    pub const SIGNIN: &str = "signin";
    pub const ACCESS_GRANTED: &str = "access-granted";
    pub const ACCESS_DENIED: &str = "access-denied";
    pub const SESSION_DENIED: &str = "session-denied";
    pub const HIJACK_SUSPECTED: &str = "session-hijack-suspected";
    pub const PRIVILEGE_CHANGE: &str = "privilege-change";
    pub const ONBOARD: &str = "onboard";
    pub const CERTIFICATE_ISSUED: &str = "certificate-issued";
    pub const CERTIFICATE_REVOKED: &str = "certificate-revoked";
    pub const SEED_PROVISIONED: &str = "seed-provisioned";
    pub const SEED_RESET: &str = "seed-reset";
    pub const COOLDOWN_STARTED: &str = "cooldown-started";
    pub const ADMIT_REJECTED: &str = "admit-rejected";
    pub const INPUT_REJECTED: &str = "input-rejected";
    pub const FRESHNESS_REJECTED: &str = "freshness-rejected";
    pub const INTEGRITY_REJECTED: &str = "integrity-rejected";
    pub const INVESTIGATION_OPENED: &str = "investigation-opened";
    pub const ADMIN_REQUEST: &str = "admin-request";
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Success,
    Failure(String),
}

impl Outcome {
    pub fn failure(reason: impl Into<String>) -> Self {
        Outcome::Failure(reason.into())
    }

    pub fn is_failure(&self) -> bool {
        matches!(self, Outcome::Failure(_))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditRecord {
    pub seq: u64,
    pub timestamp: Timestamp,
    pub actor: String,
    pub action: String,
    pub detail: String,
    pub outcome: Outcome,
    pub prev_hash: Digest,
    pub record_hash: Digest,
}

/// Borrowed view of every field except `record_hash`, in serialization order.
#[derive(Serialize)]
struct RecordBody<'a> {
    seq: u64,
    timestamp: &'a Timestamp,
    actor: &'a str,
    action: &'a str,
    detail: &'a str,
    outcome: &'a Outcome,
    prev_hash: &'a Digest,
}

impl AuditRecord {
    pub fn compute_hash(&self) -> Digest {
        let body = RecordBody {
            seq: self.seq,
            timestamp: &self.timestamp,
            actor: &self.actor,
            action: &self.action,
            detail: &self.detail,
            outcome: &self.outcome,
            prev_hash: &self.prev_hash,
        };
        hash(&serde_json::to_vec(&body).expect("audit body serializes"))
    }

    /// The canonical JSON line, without the trailing newline.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("audit record serializes")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChainStatus {
    Ok,
    CorruptAt { seq: u64 },
}

/// Length and final digest of a log, kept apart from the log itself so that
/// removing records from the tail is detectable.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChainHead {
    pub len: u64,
    pub last_hash: Digest,
}

impl ChainHead {
    pub const EMPTY: ChainHead = ChainHead { len: 0, last_hash: Digest::ZERO };

    /// `<len> <hex digest>`
    pub fn encode(&self) -> String {
        format!("{} {}", self.len, self.last_hash)
    }

    pub fn decode(text: &str) -> Option<Self> {
        let (len, hash) = text.trim_end().split_once(' ')?;
        Some(ChainHead { len: len.parse().ok()?, last_hash: Digest::from_hex(hash)? })
    }

    fn check(&self, verifier: &ChainVerifier) -> ChainStatus {
        if verifier.next_seq == self.len && verifier.prev_hash == self.last_hash {
            ChainStatus::Ok
        } else {
            ChainStatus::CorruptAt { seq: verifier.next_seq.min(self.len) }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("audit chain corrupt at record {seq}")]
pub struct CorruptLog {
    pub seq: u64,
}

/// Incremental chain checker; feed records or lines in order.
#[derive(Clone, Debug)]
pub struct ChainVerifier {
    next_seq: u64,
    prev_hash: Digest,
}

impl Default for ChainVerifier {
    fn default() -> Self {
        ChainVerifier { next_seq: 0, prev_hash: Digest::ZERO }
    }
}

impl ChainVerifier {
    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn feed(&mut self, record: &AuditRecord) -> bool {
        let ok = record.seq == self.next_seq
            && record.prev_hash == self.prev_hash
            && record.compute_hash() == record.record_hash;
        if ok {
            self.next_seq += 1;
            self.prev_hash = record.record_hash;
        }
        ok
    }

    /// Parses one serialized line and checks it. A line that parses but is
    /// not byte-identical to its canonical re-serialization is rejected.
    pub fn feed_line(&mut self, line: &str) -> Option<AuditRecord> {
        let record: AuditRecord = serde_json::from_str(line).ok()?;
        if record.to_line() != line {
            return None;
        }
        self.feed(&record).then_some(record)
    }

    /// Feeds serialized lines; on failure returns the seq of the bad line.
    /// A verifier cloned mid-log can resume from that point.
    pub fn feed_lines(&mut self, bytes: &[u8]) -> Result<(), u64> {
        let start = self.next_seq;
        for_each_line(bytes, |line| self.feed_line(line).is_some()).map_err(|index| start + index)
    }
}

#[derive(Clone, Debug, Default)]
pub struct AuditLog {
    records: Vec<AuditRecord>,
}

impl AuditLog {
    pub fn new() -> Self {
        AuditLog::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn last_hash(&self) -> Digest {
        self.records.last().map_or(Digest::ZERO, |r| r.record_hash)
    }

    pub fn append(&mut self, actor: &str, action: &str, outcome: Outcome, now: Timestamp) -> &AuditRecord {
        self.append_with(actor, action, "", outcome, now)
    }

    pub fn append_with(
        &mut self,
        actor: &str,
        action: &str,
        detail: &str,
        outcome: Outcome,
        now: Timestamp,
    ) -> &AuditRecord {
        let mut record = AuditRecord {
            seq: self.records.len() as u64,
            timestamp: now,
            actor: actor.to_string(),
            action: action.to_string(),
            detail: detail.to_string(),
            outcome,
            prev_hash: self.last_hash(),
            record_hash: Digest::ZERO,
        };
        record.record_hash = record.compute_hash();
        self.records.push(record);
        self.records.last().expect("just pushed")
    }

    pub fn head(&self) -> ChainHead {
        ChainHead { len: self.records.len() as u64, last_hash: self.last_hash() }
    }

    pub fn verify_chain(&self) -> ChainStatus {
        self.verify_prefix().0
    }

    /// As [`verify_chain`](Self::verify_chain), and additionally requires the
    /// log to end exactly at `head`.
    pub fn verify_chain_anchored(&self, head: &ChainHead) -> ChainStatus {
        match self.verify_prefix() {
            (ChainStatus::Ok, verifier) => head.check(&verifier),
            (corrupt, _) => corrupt,
        }
    }

    fn verify_prefix(&self) -> (ChainStatus, ChainVerifier) {
        let mut verifier = ChainVerifier::default();
        for record in &self.records {
            if !verifier.feed(record) {
                return (ChainStatus::CorruptAt { seq: verifier.next_seq() }, verifier);
            }
        }
        (ChainStatus::Ok, verifier)
    }

    /// JSON lines, each terminated by `\n`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&record.to_line());
            out.push('\n');
        }
        out
    }

    /// Loads a serialized log, refusing anything that does not verify.
    pub fn from_jsonl(text: &str) -> Result<AuditLog, CorruptLog> {
        let mut verifier = ChainVerifier::default();
        let mut records = Vec::new();
        for_each_line(text.as_bytes(), |line| match verifier.feed_line(line) {
            Some(record) => {
                records.push(record);
                true
            }
            None => false,
        })
        .map_err(|seq| CorruptLog { seq })?;
        Ok(AuditLog { records })
    }

    /// Escalation check with the default threshold of three.
    pub fn detect_escalation(&self, principal_id: &str, now: Timestamp) -> Option<Investigation> {
        self.detect_escalation_with(principal_id, now, ESCALATION_THRESHOLD)
    }

    /// Counts `access-denied` failures for `principal_id` per resource over
    /// the whole log. Returns the resource with the most denials once that
    /// count reaches `threshold`; ties go to the lexicographically first name.
    pub fn detect_escalation_with(
        &self,
        principal_id: &str,
        now: Timestamp,
        threshold: u32,
    ) -> Option<Investigation> {
        let mut counts: BTreeMap<&str, u32> = BTreeMap::new();
        for record in &self.records {
            if record.actor == principal_id && record.action == actions::ACCESS_DENIED && record.outcome.is_failure() {
                if let Some(resource) = detail_value(&record.detail, "resource") {
                    *counts.entry(resource).or_default() += 1;
                }
            }
        }
        let (resource, count) = counts
            .into_iter()
            .fold(None::<(&str, u32)>, |best, (r, c)| match best {
                Some((_, bc)) if bc >= c => best,
                _ => Some((r, c)),
            })?;
        (count >= threshold).then(|| Investigation::new(principal_id, resource, count, now))
    }
}

/// Verifies the serialized form of a log, line by line. Bytes that are not
/// UTF-8 make their line corrupt.
pub fn verify_serialized(bytes: impl AsRef<[u8]>) -> ChainStatus {
    verify_serialized_prefix(bytes.as_ref()).0
}

pub fn verify_serialized_anchored(bytes: impl AsRef<[u8]>, head: &ChainHead) -> ChainStatus {
    match verify_serialized_prefix(bytes.as_ref()) {
        (ChainStatus::Ok, verifier) => head.check(&verifier),
        (corrupt, _) => corrupt,
    }
}

fn verify_serialized_prefix(bytes: &[u8]) -> (ChainStatus, ChainVerifier) {
    let mut verifier = ChainVerifier::default();
    let status = match verifier.feed_lines(bytes) {
        Ok(()) => ChainStatus::Ok,
        Err(seq) => ChainStatus::CorruptAt { seq },
    };
    (status, verifier)
}

/// Calls `check` on each `\n`-terminated line; returns the index of the first
/// failing line. Trailing bytes without a terminator count as a failing line.
fn for_each_line(bytes: &[u8], mut check: impl FnMut(&str) -> bool) -> Result<(), u64> {
    let mut rest = bytes;
    let mut index = 0u64;
    while !rest.is_empty() {
        let Some(end) = rest.iter().position(|&b| b == b'\n') else {
            return Err(index);
        };
        match core::str::from_utf8(&rest[..end]) {
            Ok(line) if check(line) => {}
            _ => return Err(index),
        }
        rest = &rest[end + 1..];
        index += 1;
    }
    Ok(())
}

/// `key=value` lookup in a `;`-separated detail string.
pub fn detail_value<'a>(detail: &'a str, key: &str) -> Option<&'a str> {
    detail
        .split(';')
        .filter_map(|kv| kv.split_once('='))
        .find_map(|(k, v)| (k == key).then_some(v))
}

pub const ESCALATION_THRESHOLD: u32 = 3;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Investigation {
    pub principal_id: String,
    pub resource: String,
    pub attempt_count: u32,
    pub opened_at: Timestamp,
    pub notice_text: String,
}

impl Investigation {
    fn new(principal_id: &str, resource: &str, attempt_count: u32, opened_at: Timestamp) -> Self {
        Investigation {
            principal_id: principal_id.to_string(),
            resource: resource.to_string(),
            attempt_count,
            opened_at,
            notice_text: format!(
                "NOTICE OF INVESTIGATION: principal {principal_id} was denied access to protected \
                 resource {resource} {attempt_count} times; security team review opened at {opened_at}."
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const T0: Timestamp = Timestamp::from_unix(1_790_000_000);

    fn log_of(n: usize) -> AuditLog {
        let mut log = AuditLog::new();
        for i in 0..n {
            log.append_with(
                "alice",
                actions::SIGNIN,
                &format!("ip=10.0.0.{}", i % 7),
                if i % 3 == 0 { Outcome::failure("BadCode") } else { Outcome::Success },
                T0.plus_seconds(i as i64),
            );
        }
        log
    }

    fn deny(log: &mut AuditLog, who: &str, resource: &str) {
        log.append_with(
            who,
            actions::ACCESS_DENIED,
            &format!("resource={resource}"),
            Outcome::failure("RoleMissing"),
            T0,
        );
    }

    #[test]
    fn genesis_and_links() {
        let log = log_of(2);
        let [a, b] = log.records() else { panic!() };
        assert_eq!(a.seq, 0);
        assert_eq!(a.prev_hash, Digest::ZERO);
        assert_eq!(b.prev_hash, a.record_hash);
        assert_eq!(a.compute_hash(), a.record_hash);
    }

    #[test]
    fn untouched_log_verifies() {
        let log = log_of(100);
        assert_eq!(log.verify_chain(), ChainStatus::Ok);
        assert_eq!(verify_serialized(log.to_jsonl()), ChainStatus::Ok);
        assert_eq!(verify_serialized(""), ChainStatus::Ok);
    }

    #[test]
    fn mutated_action_is_located() {
        let mut log = log_of(100);
        log.records[42].action.replace_range(0..1, "S");
        assert_eq!(log.verify_chain(), ChainStatus::CorruptAt { seq: 42 });
    }

    #[test]
    fn every_single_deletion_is_detected() {
        let log = log_of(20);
        let head = log.head();
        for victim in 0..20 {
            let mut records = log.records().to_vec();
            records.remove(victim);
            for (i, r) in records.iter_mut().enumerate() {
                r.seq = i as u64;
            }
            let tampered = AuditLog { records };
            assert_eq!(
                tampered.verify_chain_anchored(&head),
                ChainStatus::CorruptAt { seq: victim as u64 },
                "deleting record {victim}"
            );
            // Without the anchor only a tail deletion goes unnoticed.
            assert_eq!(tampered.verify_chain() == ChainStatus::Ok, victim == 19);
        }
        assert_eq!(log.verify_chain_anchored(&head), ChainStatus::Ok);
        assert_eq!(verify_serialized_anchored(log.to_jsonl(), &head), ChainStatus::Ok);
        assert_eq!(ChainHead::decode(&head.encode()), Some(head));
    }

    #[test]
    fn resealed_seq_and_hash_still_breaks_link() {
        let log = log_of(20);
        let mut records = log.records().to_vec();
        records.remove(10);
        for (i, r) in records.iter_mut().enumerate().skip(10) {
            r.seq = i as u64;
            r.record_hash = r.compute_hash();
        }
        assert_eq!(AuditLog { records }.verify_chain(), ChainStatus::CorruptAt { seq: 10 });
    }

    #[test]
    fn jsonl_roundtrip_and_truncation() {
        let log = log_of(5);
        let text = log.to_jsonl();
        let back = AuditLog::from_jsonl(&text).unwrap();
        assert_eq!(back.records(), log.records());
        assert_eq!(verify_serialized(&text[..text.len() - 1]), ChainStatus::CorruptAt { seq: 4 });
        let first_line_end = text.find('\n').unwrap();
        assert_eq!(
            verify_serialized(&text[first_line_end + 1..]),
            ChainStatus::CorruptAt { seq: 0 }
        );
    }

    #[test]
    fn line_field_order_is_fixed() {
        let log = log_of(1);
        let line = log.records()[0].to_line();
        let keys = ["\"seq\"", "\"timestamp\"", "\"actor\"", "\"action\"", "\"detail\"", "\"outcome\"", "\"prev_hash\"", "\"record_hash\""];
        let positions: Vec<usize> = keys.iter().map(|k| line.find(k).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]), "{line}");
        assert!(line.starts_with("{\"seq\":0,\"timestamp\":\"2026-09-21T"));
    }

    #[test]
    fn reordered_keys_are_not_canonical() {
        let log = log_of(1);
        let line = log.records()[0].to_line();
        let value: serde_json::Value = serde_json::from_str(&line).unwrap();
        let map = value.as_object().unwrap();
        let mut reordered = String::from("{");
        for (i, key) in ["actor", "seq", "timestamp", "action", "detail", "outcome", "prev_hash", "record_hash"].iter().enumerate() {
            if i > 0 {
                reordered.push(',');
            }
            reordered.push_str(&format!("\"{key}\":{}", map[*key]));
        }
        reordered.push_str("}\n");
        assert_eq!(verify_serialized(&reordered), ChainStatus::CorruptAt { seq: 0 });
    }

    #[test]
    fn escalation_thresholds() {
        let mut log = AuditLog::new();
        deny(&mut log, "p1", "admin-console");
        deny(&mut log, "p1", "admin-console");
        assert_eq!(log.detect_escalation("p1", T0), None);
        deny(&mut log, "p1", "admin-console");
        let inv = log.detect_escalation("p1", T0).unwrap();
        assert_eq!((inv.resource.as_str(), inv.attempt_count), ("admin-console", 3));
        assert!(inv.notice_text.contains("p1") && inv.notice_text.contains("admin-console"));
        assert_eq!(log.detect_escalation("p2", T0), None);
    }

    #[test]
    fn escalation_counts_per_resource() {
        // Counting oracle: every assignment of 3..=5 denials over three
        // resources fires iff some single resource reaches three.
        let resources = ["a", "b", "c"];
        for n in 3..=5u32 {
            for code in 0..3u32.pow(n) {
                let mut log = AuditLog::new();
                let mut tally = [0u32; 3];
                let mut c = code;
                for _ in 0..n {
                    let r = (c % 3) as usize;
                    c /= 3;
                    tally[r] += 1;
                    deny(&mut log, "p1", resources[r]);
                }
                let expected_max = *tally.iter().max().unwrap();
                match log.detect_escalation("p1", T0) {
                    Some(inv) => {
                        assert!(expected_max >= 3);
                        assert_eq!(inv.attempt_count, expected_max);
                    }
                    None => assert!(expected_max < 3),
                }
            }
        }
    }

    #[test]
    fn escalation_is_monotone() {
        let mut log = AuditLog::new();
        let mut fired = false;
        for i in 0..10 {
            deny(&mut log, "p1", if i % 2 == 0 { "x" } else { "y" });
            let now = log.detect_escalation("p1", T0).is_some();
            assert!(!(fired && !now));
            fired |= now;
        }
        assert!(fired);
    }

    #[test]
    fn detail_lookup() {
        assert_eq!(detail_value("resource=x;reason=y", "reason"), Some("y"));
        assert_eq!(detail_value("resource=x", "reason"), None);
    }
}
