//! Transport-neutral request and response types plus JSON bodies.

use std::collections::BTreeMap;
use std::net::IpAddr;

use prometheus_core::crypto::hash;
use prometheus_core::crypto::Digest;
use serde::{Deserialize, Serialize};

pub const SESSION_HEADER: &str = "x-prometheus-session";
pub const TIMESTAMP_HEADER: &str = "x-request-timestamp";
pub const NONCE_HEADER: &str = "x-request-nonce";
pub const RECEIPT_HEADER: &str = "x-prometheus-receipt";
pub const PAYLOAD_DIGEST_HEADER: &str = "x-payload-digest";

pub const ADMIN_NOTICE: &str = "Contact the system administrator.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Get,
    Post,
    Other,
}

impl Method {
    pub fn parse(text: &str) -> Self {
        match text {
            "GET" => Method::Get,
            "POST" => Method::Post,
            _ => Method::Other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Get => "GET",
            Method::Post => "POST",
            Method::Other => "OTHER",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Request {
    pub method: Method,
    pub path: String,
    /// Lower-case header names.
    pub headers: BTreeMap<String, String>,
    pub body: Vec<u8>,
    pub peer: IpAddr,
}

impl Request {
    pub fn new(method: Method, path: &str, peer: IpAddr) -> Self {
        Request { method, path: path.to_string(), headers: BTreeMap::new(), body: Vec::new(), peer }
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.get(name).map(String::as_str)
    }

    pub fn with_header(mut self, name: &str, value: impl Into<String>) -> Self {
        self.headers.insert(name.to_ascii_lowercase(), value.into());
        self
    }

    pub fn with_body(mut self, body: impl Into<Vec<u8>>) -> Self {
        self.body = body.into();
        self
    }

    /// Bytes a receipt commits to: method, path, timestamp, nonce and body.
    pub fn signed_content(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.body.len() + 128);
        for part in [self.method.as_str(), &self.path, self.header(TIMESTAMP_HEADER).unwrap_or(""), self.header(NONCE_HEADER).unwrap_or("")] {
            out.extend_from_slice(part.as_bytes());
            out.push(b'\n');
        }
        out.extend_from_slice(&self.body);
        out
    }

    pub fn signed_digest(&self) -> Digest {
        hash(&self.signed_content())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Response {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl Response {
    pub fn empty(status: u16) -> Self {
        Response { status, headers: Vec::new(), body: Vec::new() }
    }

    pub fn json(status: u16, value: &impl Serialize) -> Self {
        Response {
            status,
            headers: vec![("content-type".into(), "application/json".into())],
            body: serde_json::to_vec(value).expect("response serializes"),
        }
    }

    /// Failure body: the reason name and the administrator notice, nothing else.
    pub fn error(status: u16, reason: &str) -> Self {
        Response::json(status, &ErrorBody { error: reason.to_string(), notice: ADMIN_NOTICE.to_string() })
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }

    pub fn error_reason(&self) -> Option<String> {
        serde_json::from_slice::<ErrorBody>(&self.body).ok().map(|b| b.error)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorBody {
    pub error: String,
    pub notice: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigninBody {
    pub principal_id: String,
    /// `PROMETHEUS CERT V1` envelope.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<String>,
    /// Base64 signature over the sign-in challenge with the certificate key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate_proof: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_code: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub password: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SigninReply {
    pub session_id: String,
    pub expires_at: String,
    pub factors: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnboardBody {
    pub id: String,
    pub roles: Vec<String>,
    #[serde(default)]
    pub display_name: Option<String>,
    #[serde(default)]
    pub hardware_credential: bool,
    #[serde(default)]
    pub password: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RevokeBody {
    pub serial: u64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrantRoleBody {
    pub id: String,
    pub role: String,
    pub ticket: String,
}
