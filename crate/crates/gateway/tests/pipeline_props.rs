//! Properties of the request pipeline under compound faults.

use proptest::prelude::*;

use prometheus_core::crypto::hash;
use prometheus_gateway::client::{self, Factors};
use prometheus_gateway::harness::{lan, Harness, STRANGER};
use prometheus_gateway::wire::{self, ErrorBody};

#[derive(Clone, Copy, Debug)]
struct Faults {
    stranger: bool,
    bad_input: bool,
    stale: bool,
    bad_digest: bool,
    dead_session: bool,
    foreign: bool,
    resource: usize,
}

fn faults() -> impl Strategy<Value = Faults> {
    (any::<[bool; 6]>(), 0usize..4).prop_map(|(f, resource)| Faults {
        stranger: f[0],
        bad_input: f[1],
        stale: f[2],
        bad_digest: f[3],
        dead_session: f[4],
        foreign: f[5],
        resource,
    })
}

const RESOURCES: [&str; 4] = ["flight-simulator", "back-office", "admin-console", "simulator-logs"];

/// Reason the earliest failing gate reports, or `None` for a 200.
fn earliest_gate(f: Faults) -> Option<(u16, &'static str)> {
    if f.stranger {
        return Some((403, ""));
    }
    if f.bad_input {
        return Some((400, "Markup"));
    }
    if f.stale {
        return Some((401, "Stale"));
    }
    if f.bad_digest {
        return Some((400, "TamperDetected"));
    }
    if f.dead_session {
        return Some((401, "NoSession"));
    }
    if f.foreign {
        return Some((403, "HijackSuspected"));
    }
    match RESOURCES[f.resource] {
        "admin-console" => Some((403, "RoleMissing")),
        "simulator-logs" => Some((404, "NoSuchResource")),
        _ => None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn earliest_gate_reports_and_nothing_leaks(batch in proptest::collection::vec(faults(), 1..6)) {
        let h = Harness::new();
        let home = lan(1);
        let sid = h.session("pilot1", home, Factors::CERT_TOKEN);
        for (i, f) in batch.into_iter().enumerate() {
            let peer = if f.stranger { STRANGER } else if f.foreign { lan(2 + i as u8) } else { home };
            let resource = if f.bad_input { "<b>" } else { RESOURCES[f.resource] };
            let session = if f.dead_session { "ab".repeat(32) } else { sid.clone() };
            let ts = if f.stale { h.now().minus_seconds(500) } else { h.now() };
            let mut req = client::resource_request(peer, &session, resource, ts, h.nonce());
            if f.bad_digest {
                req = req.with_header(wire::PAYLOAD_DIGEST_HEADER, hash(b"forged").to_hex());
            }
            let resp = h.send(&req);
            let expected = earliest_gate(f);
            let foreign_kills = !f.stranger && !f.bad_input && !f.stale && !f.bad_digest && !f.dead_session && f.foreign;
            match expected {
                None => {
                    prop_assert_eq!(resp.status, 200);
                    prop_assert!(resp.header(wire::RECEIPT_HEADER).is_some());
                }
                Some((status, reason)) => {
                    prop_assert_eq!(resp.status, status, "{:?}: {:?}", f, resp.error_reason());
                    prop_assert!(!String::from_utf8_lossy(&resp.body).contains("protected application content"));
                    prop_assert!(resp.header(wire::RECEIPT_HEADER).is_none());
                    if reason.is_empty() {
                        prop_assert!(resp.body.is_empty());
                    } else {
                        let body: Result<ErrorBody, _> = serde_json::from_slice(&resp.body);
                        prop_assert!(body.is_ok(), "error body has only error and notice");
                        let body = body.unwrap();
                        prop_assert_eq!(body.error.as_str(), reason);
                        prop_assert_eq!(body.notice.as_str(), wire::ADMIN_NOTICE);
                    }
                }
            }
            if foreign_kills {
                // The hijack check invalidated the session; stop this batch.
                break;
            }
            h.advance(1);
        }
        prop_assert_eq!(h.gateway.active_connections(home), 0);
    }
}
