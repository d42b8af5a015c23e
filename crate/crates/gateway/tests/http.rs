//! End-to-end over loopback HTTP.

use prometheus_core::session::{Integrity, Nonce};
use prometheus_gateway::client::{self, check_payload, check_receipt, session_of, Factors, HttpTransport, Transport};
use prometheus_gateway::harness::{loopback, Harness};
use prometheus_gateway::http;
use prometheus_gateway::wire::{self, Method, Request};

fn served() -> (Harness, http::ServerHandle, HttpTransport) {
    let mut b = Harness::builder();
    b.whitelist = (1..=5).map(loopback).collect();
    let h = b.build();
    let server = http::spawn(h.gateway.clone(), "127.0.0.1:0".parse().unwrap()).expect("bind loopback");
    let transport = HttpTransport::new(&server.base_url());
    (h, server, transport)
}

#[test]
fn signin_and_resource_over_http() {
    let (h, server, t) = served();
    let ip = loopback(2);
    let req = h.identity("pilot1").signin_request(ip, Factors::CERT_TOKEN, h.now(), h.nonce());
    let resp = t.send(&req).unwrap();
    assert_eq!(resp.status, 200);
    let sid = session_of(&resp).unwrap();

    let req = client::resource_request(ip, &sid, "back-office", h.now(), h.nonce());
    let resp = t.send(&req).unwrap();
    assert_eq!(resp.status, 200);
    assert_eq!(check_payload(&resp), Integrity::Ok);
    assert!(check_receipt(h.gateway_key(), &req, &resp));

    let replay = t.send(&req).unwrap();
    assert_eq!((replay.status, replay.error_reason().as_deref()), (401, Some("Replayed")));

    let foreign = client::resource_request(loopback(3), &sid, "back-office", h.now(), h.nonce());
    assert_eq!(t.send(&foreign).unwrap().error_reason().as_deref(), Some("HijackSuspected"));
    assert_eq!(h.gateway.active_connections(ip), 0);
    server.stop().unwrap();
}

#[test]
fn non_whitelisted_peer_is_dropped_with_empty_403() {
    let (h, server, t) = served();
    let req = h.identity("pilot1").signin_request(loopback(9), Factors::CERT_TOKEN, h.now(), h.nonce());
    let resp = t.send(&req).unwrap();
    assert_eq!(resp.status, 403);
    assert!(resp.body.is_empty());
    assert!(h.gateway.cooldowns().iter().any(|c| c.ip == loopback(9)));
    server.stop().unwrap();
}

#[test]
fn oversized_body_is_refused() {
    let (h, server, t) = served();
    let body = vec![b'a'; http::MAX_BODY_BYTES + 1];
    let req = client::stamp(Request::new(Method::Post, "/signin", loopback(2)).with_body(body), h.now(), h.nonce());
    let resp = t.send(&req).unwrap();
    assert_eq!((resp.status, resp.error_reason().as_deref()), (400, Some("TooLong")));
    let resp = t.send(&client::stamp(Request::new(Method::Get, "/", loopback(2)), h.now(), h.nonce())).unwrap();
    assert_eq!(resp.status, 404);
    assert_eq!(resp.header("content-type"), Some("application/json"));
    assert!(resp.header(wire::RECEIPT_HEADER).is_none());
    server.stop().unwrap();
}

#[test]
fn unreachable_target_is_reported() {
    let t = HttpTransport::new("http://127.0.0.1:9");
    let req = client::stamp(Request::new(Method::Get, "/", loopback(1)), prometheus_gateway::harness::T0, Nonce::from_hex(&"00".repeat(16)).unwrap());
    assert!(t.send(&req).is_err());
}
