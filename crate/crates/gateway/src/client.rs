//! Client side: request construction, credential handling and transports.

use std::collections::BTreeMap;
use std::net::IpAddr;
use std::sync::Mutex;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use prometheus_core::crypto::{sign, KeyPair, PublicKey};
use prometheus_core::pki::Certificate;
use prometheus_core::session::{signin_challenge, verify_payload_integrity, verify_receipt, Integrity, Nonce, SignedReceipt};
use prometheus_core::token::{current_token, TokenSeed};
use prometheus_core::Timestamp;
use prometheus_core::crypto::Digest;

use crate::formats;
use crate::wire::{self, Method, Request, Response, SigninBody};
use crate::Gateway;

/// Which factors a sign-in presents.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Factors {
    pub certificate: bool,
    pub token: bool,
    pub password: bool,
}

impl Factors {
    pub const CERT_TOKEN: Factors = Factors { certificate: true, token: true, password: false };
    pub const CERT_PASSWORD: Factors = Factors { certificate: true, token: false, password: true };
    pub const TOKEN_PASSWORD: Factors = Factors { certificate: false, token: true, password: true };
    pub const CERT_ONLY: Factors = Factors { certificate: true, token: false, password: false };
}

/// Everything a user holds: certificate and key (the smart card), token
/// seed and an optional password.
#[derive(Clone, Debug)]
pub struct ClientIdentity {
    pub principal_id: String,
    pub certificate: Option<Certificate>,
    pub key: Option<KeyPair>,
    pub seed: Option<TokenSeed>,
    pub password: Option<String>,
}

impl ClientIdentity {
    pub fn new(principal_id: &str) -> Self {
        ClientIdentity { principal_id: principal_id.to_string(), certificate: None, key: None, seed: None, password: None }
    }

    pub fn token_code(&self, now: Timestamp) -> Option<String> {
        self.seed.as_ref().map(|s| current_token(s, now))
    }

    /// Sign-in body bound to `ts` and `nonce`. Factors the identity lacks are
    /// left out.
    pub fn signin_body(&self, factors: Factors, ts: Timestamp, nonce: &Nonce) -> SigninBody {
        let mut body = SigninBody { principal_id: self.principal_id.clone(), ..SigninBody::default() };
        if factors.certificate {
            if let (Some(cert), Some(key)) = (&self.certificate, &self.key) {
                let challenge = signin_challenge(&self.principal_id, ts, nonce);
                let proof = sign(&key.private_key, challenge.as_bytes()).expect("client key signs");
                body.certificate = Some(formats::encode_certificate(cert));
                body.certificate_proof = Some(B64.encode(proof.as_bytes()));
            }
        }
        if factors.token {
            body.token_code = self.token_code(ts);
        }
        if factors.password {
            body.password = self.password.clone();
        }
        body
    }

    pub fn signin_request(&self, peer: IpAddr, factors: Factors, now: Timestamp, nonce: Nonce) -> Request {
        let body = self.signin_body(factors, now, &nonce);
        signin_request(peer, &body, now, nonce)
    }
}

pub fn stamp(req: Request, now: Timestamp, nonce: Nonce) -> Request {
    req.with_header(wire::TIMESTAMP_HEADER, now.to_string()).with_header(wire::NONCE_HEADER, nonce.to_hex())
}

pub fn signin_request(peer: IpAddr, body: &SigninBody, now: Timestamp, nonce: Nonce) -> Request {
    let req = Request::new(Method::Post, "/signin", peer).with_body(serde_json::to_vec(body).expect("body serializes"));
    stamp(req, now, nonce)
}

pub fn resource_request(peer: IpAddr, session_id: &str, resource: &str, now: Timestamp, nonce: Nonce) -> Request {
    let req = Request::new(Method::Get, &format!("/resource/{resource}"), peer).with_header(wire::SESSION_HEADER, session_id);
    stamp(req, now, nonce)
}

pub fn admin_get(peer: IpAddr, session_id: &str, path: &str, now: Timestamp, nonce: Nonce) -> Request {
    stamp(Request::new(Method::Get, path, peer).with_header(wire::SESSION_HEADER, session_id), now, nonce)
}

pub fn admin_post(peer: IpAddr, session_id: &str, path: &str, body: &impl serde::Serialize, now: Timestamp, nonce: Nonce) -> Request {
    let req = Request::new(Method::Post, path, peer)
        .with_header(wire::SESSION_HEADER, session_id)
        .with_body(serde_json::to_vec(body).expect("body serializes"));
    stamp(req, now, nonce)
}

/// Session id from a successful sign-in reply.
pub fn session_of(response: &Response) -> Option<String> {
    if response.status != 200 {
        return None;
    }
    serde_json::from_slice::<wire::SigninReply>(&response.body).ok().map(|r| r.session_id)
}

/// Checks the payload against the digest header the gateway attached.
pub fn check_payload(response: &Response) -> Integrity {
    let claimed = response.header(wire::PAYLOAD_DIGEST_HEADER).and_then(Digest::from_hex);
    match claimed {
        Some(claimed) => verify_payload_integrity(&response.body, &claimed),
        None => Integrity::TamperDetected,
    }
}

/// Checks that the receipt header is signed by `gateway_key` and commits to
/// exactly `request`.
pub fn check_receipt(gateway_key: &PublicKey, request: &Request, response: &Response) -> bool {
    let Some(receipt) = response
        .header(wire::RECEIPT_HEADER)
        .and_then(|h| B64.decode(h).ok())
        .and_then(|b| SignedReceipt::from_bytes(&b).ok())
    else {
        return false;
    };
    receipt.request_digest == request.signed_digest() && verify_receipt(gateway_key, &receipt)
}

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("{0}")]
    TargetUnreachable(String),
}

pub trait Transport {
    fn send(&self, req: &Request) -> Result<Response, TransportError>;
}

impl Transport for Gateway {
    fn send(&self, req: &Request) -> Result<Response, TransportError> {
        Ok(self.handle(req))
    }
}

impl<T: Transport + ?Sized> Transport for std::sync::Arc<T> {
    fn send(&self, req: &Request) -> Result<Response, TransportError> {
        (**self).send(req)
    }
}

/// HTTP transport. Each request leaves from its `peer` address, so loopback
/// addresses such as `127.0.0.7` stand in for distinct clients.
pub struct HttpTransport {
    base_url: String,
    clients: Mutex<BTreeMap<IpAddr, reqwest::blocking::Client>>,
}

impl HttpTransport {
    pub fn new(base_url: &str) -> Self {
        HttpTransport { base_url: base_url.trim_end_matches('/').to_string(), clients: Mutex::new(BTreeMap::new()) }
    }

    fn client(&self, peer: IpAddr) -> Result<reqwest::blocking::Client, TransportError> {
        let mut clients = self.clients.lock().unwrap_or_else(std::sync::PoisonError::into_inner);
        if let Some(c) = clients.get(&peer) {
            return Ok(c.clone());
        }
        let client = reqwest::blocking::Client::builder()
            .local_address(peer)
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| TransportError::TargetUnreachable(e.to_string()))?;
        clients.insert(peer, client.clone());
        Ok(client)
    }
}

impl Transport for HttpTransport {
    fn send(&self, req: &Request) -> Result<Response, TransportError> {
        let client = self.client(req.peer)?;
        let url = format!("{}{}", self.base_url, req.path);
        let mut builder = match req.method {
            Method::Post => client.post(&url),
            _ => client.get(&url),
        };
        for (name, value) in &req.headers {
            builder = builder.header(name.as_str(), value.as_str());
        }
        if !req.body.is_empty() {
            builder = builder.header("content-type", "application/json").body(req.body.clone());
        }
        let response = builder.send().map_err(|e| TransportError::TargetUnreachable(e.to_string()))?;
        let status = response.status().as_u16();
        let headers = response
            .headers()
            .iter()
            .map(|(k, v)| (k.as_str().to_string(), String::from_utf8_lossy(v.as_bytes()).into_owned()))
            .collect();
        let body = response.bytes().map_err(|e| TransportError::TargetUnreachable(e.to_string()))?.to_vec();
        Ok(Response { status, headers, body })
    }
}
