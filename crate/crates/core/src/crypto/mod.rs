//! Hashing, salted credential digests, keyed MACs and signatures.
//!
//! All digest and tag equality in this crate goes through [`ct_eq`], so
//! comparisons take time independent of where two values first differ.

mod signature;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use hmac::{Hmac, Mac};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use subtle::ConstantTimeEq;

pub use signature::{
    generate_keypair, sign, verify_signature, KeyPair, PrivateKey, PublicKey, Signature,
    DEFAULT_MODULUS_BITS,
};
#[cfg(any(test, feature = "toy-signatures"))]
pub use signature::{toy_keypair, ToyPrivateKey, ToyPublicKey};

pub const DIGEST_LEN: usize = 32;
pub const MIN_SALT_LEN: usize = 16;
pub const MIN_MAC_KEY_LEN: usize = 16;
/// Floor on asymmetric modulus size.
pub const MIN_ASYMMETRIC_BITS: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum CryptoError {
    #[error("salt is {len} bytes, at least {MIN_SALT_LEN} required")]
    SaltTooShort { len: usize },
    #[error("MAC key is {len} bytes, at least {MIN_MAC_KEY_LEN} required")]
    KeyTooShort { len: usize },
    #[error("policy violation: {bits}-bit modulus is below the {min}-bit minimum")]
    PolicyViolation { bits: usize, min: usize },
    #[error("invalid key")]
    InvalidKey,
    #[error("key generation failed")]
    KeyGeneration,
    #[error("malformed encoding")]
    Encoding,
}

/// Constant-time byte-slice equality. Slices of different length compare
/// unequal; only the length leaks.
pub fn ct_eq(a: &[u8], b: &[u8]) -> bool {
    a.ct_eq(b).into()
}

/// A SHA-256 output.
///
/// `==` on digests is constant-time.
#[derive(Clone, Copy)]
pub struct Digest([u8; DIGEST_LEN]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; DIGEST_LEN]);

    pub const fn from_bytes(bytes: [u8; DIGEST_LEN]) -> Self {
        Digest(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        <[u8; DIGEST_LEN]>::try_from(bytes).ok().map(Digest)
    }

    pub const fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Accepts exactly 64 lowercase hex characters.
    pub fn from_hex(text: &str) -> Option<Self> {
        if !is_lower_hex(text) {
            return None;
        }
        let mut out = [0u8; DIGEST_LEN];
        hex::decode_to_slice(text, &mut out).ok()?;
        Some(Digest(out))
    }
}

impl PartialEq for Digest {
    fn eq(&self, other: &Self) -> bool {
        ct_eq(&self.0, &other.0)
    }
}

impl Eq for Digest {}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        Digest::from_hex(&text).ok_or_else(|| serde::de::Error::custom("expected 64 lowercase hex chars"))
    }
}

pub(crate) fn is_lower_hex(text: &str) -> bool {
    text.len().is_multiple_of(2) && text.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

pub fn hash(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// Salt plus `hash(salt || secret)`. The secret itself is never stored.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaltedCredential {
    #[serde(with = "hex_bytes")]
    salt: Vec<u8>,
    digest: Digest,
}

impl SaltedCredential {
    pub fn salt(&self) -> &[u8] {
        &self.salt
    }

    pub fn digest(&self) -> &Digest {
        &self.digest
    }
}

pub fn derive_salted(secret: &[u8], salt: &[u8]) -> Result<SaltedCredential, CryptoError> {
    if salt.len() < MIN_SALT_LEN {
        return Err(CryptoError::SaltTooShort { len: salt.len() });
    }
    Ok(SaltedCredential {
        salt: salt.to_vec(),
        digest: salted_digest(salt, secret),
    })
}

/// Draws a fresh 16-byte salt from `rng`.
pub fn provision_salted(
    rng: &mut impl rand_core::CryptoRngCore,
    secret: &[u8],
) -> SaltedCredential {
    let mut salt = [0u8; MIN_SALT_LEN];
    rng.fill_bytes(&mut salt);
    SaltedCredential {
        salt: salt.to_vec(),
        digest: salted_digest(&salt, secret),
    }
}

pub fn verify_salted(cred: &SaltedCredential, secret: &[u8]) -> bool {
    salted_digest(&cred.salt, secret) == cred.digest
}

fn salted_digest(salt: &[u8], secret: &[u8]) -> Digest {
    let mut hasher = Sha256::new();
    hasher.update(salt);
    hasher.update(secret);
    Digest(hasher.finalize().into())
}

/// HMAC-SHA-256.
pub fn mac(key: &[u8], message: &[u8]) -> Result<[u8; DIGEST_LEN], CryptoError> {
    if key.len() < MIN_MAC_KEY_LEN {
        return Err(CryptoError::KeyTooShort { len: key.len() });
    }
    let mut m = <Hmac<Sha256> as Mac>::new_from_slice(key).map_err(|_| CryptoError::InvalidKey)?;
    m.update(message);
    Ok(m.finalize().into_bytes().into())
}

pub(crate) mod hex_bytes {
    use alloc::string::String;
    use alloc::vec::Vec;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(deserializer)?;
        if !super::is_lower_hex(&text) {
            return Err(serde::de::Error::custom("expected lowercase hex"));
        }
        hex::decode(text).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Frozen from an independent SHA-256 implementation (Python hashlib).
    const SHA256_EMPTY: &str = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855";
    const SHA256_ABC: &str = "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad";
    // RFC 4231 test case 1 (key = 0x0b * 20, "Hi There"), checked against Python hmac.
    const HMAC_RFC4231_1: &str = "b0344c61d8db38535ca8afceaf0bf12b881dc200c9833da726e9376c2e32cff7";

    #[test]
    fn hash_vectors() {
        assert_eq!(hash(b"").to_hex(), SHA256_EMPTY);
        assert_eq!(hash(b"abc").to_hex(), SHA256_ABC);
        assert_eq!(hash(b"abc"), hash(b"abc"));
        assert_ne!(hash(b"abc"), hash(b"abd"));
    }

    #[test]
    fn mac_vectors() {
        let tag = mac(&[0x0b; 20], b"Hi There").unwrap();
        assert_eq!(hex::encode(tag), HMAC_RFC4231_1);
        assert_eq!(mac(&[0x0b; 20], b"m").unwrap(), mac(&[0x0b; 20], b"m").unwrap());
        assert_ne!(mac(&[0x0b; 20], b"m").unwrap(), mac(&[0x0c; 20], b"m").unwrap());
    }

    #[test]
    fn mac_rejects_short_keys() {
        assert_eq!(mac(&[1u8; 15], b"m"), Err(CryptoError::KeyTooShort { len: 15 }));
        assert!(mac(&[1u8; 16], b"m").is_ok());
    }

    #[test]
    fn salted_roundtrip() {
        let salt = [7u8; 16];
        let cred = derive_salted(b"hunter22", &salt).unwrap();
        assert!(verify_salted(&cred, b"hunter22"));
        assert!(!verify_salted(&cred, b"hunter23"));
        assert!(!verify_salted(&cred, b""));
        assert_eq!(cred.digest().as_bytes(), hash(b"\x07\x07\x07\x07\x07\x07\x07\x07\x07\x07\x07\x07\x07\x07\x07\x07hunter22").as_bytes());
    }

    #[test]
    fn salt_changes_digest() {
        let a = derive_salted(b"s", &[1u8; 16]).unwrap();
        let b = derive_salted(b"s", &[2u8; 16]).unwrap();
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn short_salt_rejected() {
        assert_eq!(
            derive_salted(b"s", &[0u8; 15]),
            Err(CryptoError::SaltTooShort { len: 15 })
        );
    }

    #[test]
    fn digest_hex_is_strict() {
        let d = hash(b"x");
        assert_eq!(Digest::from_hex(&d.to_hex()), Some(d));
        assert_eq!(Digest::from_hex(&d.to_hex().to_uppercase()), None);
        assert_eq!(Digest::from_hex("00"), None);
    }
}
