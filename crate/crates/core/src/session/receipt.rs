use alloc::vec::Vec;

use super::{Session, SessionId, SESSION_ID_LEN};
use crate::crypto::{hash, sign, verify_signature, CryptoError, Digest, PrivateKey, PublicKey, Signature, DIGEST_LEN};
use crate::time::Timestamp;

const SIGNED_LEN: usize = DIGEST_LEN + SESSION_ID_LEN + 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ReceiptError {
    #[error("session is not live")]
    InvalidSession,
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error("malformed receipt")]
    Malformed,
}

/// Non-repudiation record: the gateway's signature over the request digest,
/// the session that made the request, and the time it was handled.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SignedReceipt {
    pub request_digest: Digest,
    pub session_id: SessionId,
    pub timestamp: Timestamp,
    pub signature: Signature,
}

impl SignedReceipt {
    /// `digest || session id || unix seconds (i64, big-endian)`.
    pub fn signed_bytes(&self) -> [u8; SIGNED_LEN] {
        signed_bytes(&self.request_digest, &self.session_id, self.timestamp)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(SIGNED_LEN + self.signature.as_bytes().len());
        out.extend_from_slice(&self.signed_bytes());
        out.extend_from_slice(self.signature.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ReceiptError> {
        if bytes.len() <= SIGNED_LEN {
            return Err(ReceiptError::Malformed);
        }
        let (head, sig) = bytes.split_at(SIGNED_LEN);
        let request_digest = Digest::from_slice(&head[..DIGEST_LEN]).ok_or(ReceiptError::Malformed)?;
        let mut sid = [0u8; SESSION_ID_LEN];
        sid.copy_from_slice(&head[DIGEST_LEN..DIGEST_LEN + SESSION_ID_LEN]);
        let mut ts = [0u8; 8];
        ts.copy_from_slice(&head[DIGEST_LEN + SESSION_ID_LEN..]);
        Ok(SignedReceipt {
            request_digest,
            session_id: SessionId::from_bytes(sid),
            timestamp: Timestamp::from_unix(i64::from_be_bytes(ts)),
            signature: Signature::from_bytes(sig.to_vec()),
        })
    }
}

fn signed_bytes(digest: &Digest, session_id: &SessionId, ts: Timestamp) -> [u8; SIGNED_LEN] {
    let mut out = [0u8; SIGNED_LEN];
    out[..DIGEST_LEN].copy_from_slice(digest.as_bytes());
    out[DIGEST_LEN..DIGEST_LEN + SESSION_ID_LEN].copy_from_slice(session_id.as_bytes());
    out[DIGEST_LEN + SESSION_ID_LEN..].copy_from_slice(&ts.unix().to_be_bytes());
    out
}

pub fn issue_receipt(
    signing_key: &PrivateKey,
    session: &Session,
    request_bytes: &[u8],
    now: Timestamp,
) -> Result<SignedReceipt, ReceiptError> {
    if !session.is_live(now) {
        return Err(ReceiptError::InvalidSession);
    }
    let request_digest = hash(request_bytes);
    let signature = sign(signing_key, &signed_bytes(&request_digest, &session.session_id, now))?;
    Ok(SignedReceipt { request_digest, session_id: session.session_id, timestamp: now, signature })
}

pub fn verify_receipt(gateway_key: &PublicKey, receipt: &SignedReceipt) -> bool {
    verify_signature(gateway_key, &receipt.signed_bytes(), &receipt.signature)
}
