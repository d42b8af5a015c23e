//! Asymmetric signatures.
//!
//! Production keys are RSA with PKCS#1 v1.5 / SHA-256. Under the
//! `toy-signatures` feature a second scheme is available: textbook RSA on a
//! 64-bit modulus, applied to the first eight digest bytes reduced mod `n`.
//! Toy keys are trivially forgeable and exist so tests can check signatures
//! against hand-computed modular exponentiation.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand_core::CryptoRngCore;
use rsa::pkcs1::{DecodeRsaPrivateKey, DecodeRsaPublicKey, EncodeRsaPrivateKey, EncodeRsaPublicKey};
use rsa::pkcs1v15;
use rsa::signature::{SignatureEncoding, Signer, Verifier};
use rsa::traits::PublicKeyParts;
use rsa::{RsaPrivateKey, RsaPublicKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::Sha256;

use super::{CryptoError, MIN_ASYMMETRIC_BITS};

pub const DEFAULT_MODULUS_BITS: usize = 2048;

#[derive(Clone, PartialEq, Eq)]
pub struct Signature(Vec<u8>);

impl Signature {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Signature(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({} bytes)", self.0.len())
    }
}

impl Serialize for Signature {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        super::hex_bytes::serialize(&self.0, serializer)
    }
}

impl<'de> Deserialize<'de> for Signature {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        super::hex_bytes::deserialize(deserializer).map(Signature)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PublicKey {
    Rsa(RsaPublicKey),
    #[cfg(any(test, feature = "toy-signatures"))]
    Toy(ToyPublicKey),
}

#[derive(Clone)]
#[allow(clippy::large_enum_variant)]
pub enum PrivateKey {
    Rsa(RsaPrivateKey),
    #[cfg(any(test, feature = "toy-signatures"))]
    Toy(ToyPrivateKey),
}

impl fmt::Debug for PrivateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PrivateKey(..)")
    }
}

#[derive(Clone, Debug)]
pub struct KeyPair {
    pub public_key: PublicKey,
    pub private_key: PrivateKey,
    pub modulus_bits: usize,
}

impl KeyPair {
    pub fn from_private(private_key: PrivateKey) -> Self {
        let public_key = private_key.public_key();
        let modulus_bits = public_key.modulus_bits();
        KeyPair { public_key, private_key, modulus_bits }
    }
}

/// Generates an RSA keypair. `bits` below 1024 is a policy violation.
pub fn generate_keypair(rng: &mut impl CryptoRngCore, bits: usize) -> Result<KeyPair, CryptoError> {
    if bits < MIN_ASYMMETRIC_BITS {
        return Err(CryptoError::PolicyViolation { bits, min: MIN_ASYMMETRIC_BITS });
    }
    let key = RsaPrivateKey::new(rng, bits).map_err(|_| CryptoError::KeyGeneration)?;
    Ok(KeyPair::from_private(PrivateKey::Rsa(key)))
}

pub fn sign(private_key: &PrivateKey, message: &[u8]) -> Result<Signature, CryptoError> {
    match private_key {
        PrivateKey::Rsa(key) => {
            let signer = pkcs1v15::SigningKey::<Sha256>::new(key.clone());
            let sig = signer.try_sign(message).map_err(|_| CryptoError::InvalidKey)?;
            Ok(Signature(sig.to_vec()))
        }
        #[cfg(any(test, feature = "toy-signatures"))]
        PrivateKey::Toy(key) => {
            let m = key.representative(message);
            Ok(Signature(key.raw_sign(m).to_be_bytes().to_vec()))
        }
    }
}

pub fn verify_signature(public_key: &PublicKey, message: &[u8], signature: &Signature) -> bool {
    match public_key {
        PublicKey::Rsa(key) => {
            let Ok(sig) = pkcs1v15::Signature::try_from(signature.as_bytes()) else {
                return false;
            };
            pkcs1v15::VerifyingKey::<Sha256>::new(key.clone())
                .verify(message, &sig)
                .is_ok()
        }
        #[cfg(any(test, feature = "toy-signatures"))]
        PublicKey::Toy(key) => {
            let Ok(bytes) = <[u8; 8]>::try_from(signature.as_bytes()) else {
                return false;
            };
            key.raw_verify(key.representative(message), u64::from_be_bytes(bytes))
        }
    }
}

impl PublicKey {
    pub fn modulus_bits(&self) -> usize {
        match self {
            PublicKey::Rsa(key) => key.n().bits(),
            #[cfg(any(test, feature = "toy-signatures"))]
            PublicKey::Toy(key) => (64 - key.n.leading_zeros()) as usize,
        }
    }

    /// `rsa:<hex PKCS#1 DER>`, or `toy:<n>:<e>` for toy keys.
    pub fn encode(&self) -> String {
        match self {
            PublicKey::Rsa(key) => {
                let der = key.to_pkcs1_der().expect("RSA public key always encodes");
                format!("rsa:{}", hex::encode(der.as_bytes()))
            }
            #[cfg(any(test, feature = "toy-signatures"))]
            PublicKey::Toy(key) => format!("toy:{}:{}", key.n, key.e),
        }
    }

    pub fn decode(text: &str) -> Result<Self, CryptoError> {
        if let Some(body) = text.strip_prefix("rsa:") {
            let der = decode_hex(body)?;
            return RsaPublicKey::from_pkcs1_der(&der)
                .map(PublicKey::Rsa)
                .map_err(|_| CryptoError::InvalidKey);
        }
        #[cfg(any(test, feature = "toy-signatures"))]
        if let Some(body) = text.strip_prefix("toy:") {
            let (n, e) = body.split_once(':').ok_or(CryptoError::Encoding)?;
            let n = n.parse().map_err(|_| CryptoError::Encoding)?;
            let e = e.parse().map_err(|_| CryptoError::Encoding)?;
            return Ok(PublicKey::Toy(ToyPublicKey { n, e }));
        }
        Err(CryptoError::Encoding)
    }
}

impl PrivateKey {
    pub fn public_key(&self) -> PublicKey {
        match self {
            PrivateKey::Rsa(key) => PublicKey::Rsa(key.to_public_key()),
            #[cfg(any(test, feature = "toy-signatures"))]
            PrivateKey::Toy(key) => PublicKey::Toy(ToyPublicKey { n: key.n, e: key.e }),
        }
    }

    /// `rsa:<hex PKCS#1 DER>`, or `toy:<n>:<e>:<d>`. The output is secret.
    pub fn encode(&self) -> String {
        match self {
            PrivateKey::Rsa(key) => {
                let der = key.to_pkcs1_der().expect("RSA private key always encodes");
                format!("rsa:{}", hex::encode(der.as_bytes()))
            }
            #[cfg(any(test, feature = "toy-signatures"))]
            PrivateKey::Toy(key) => format!("toy:{}:{}:{}", key.n, key.e, key.d),
        }
    }

    pub fn decode(text: &str) -> Result<Self, CryptoError> {
        if let Some(body) = text.strip_prefix("rsa:") {
            let der = decode_hex(body)?;
            return RsaPrivateKey::from_pkcs1_der(&der)
                .map(PrivateKey::Rsa)
                .map_err(|_| CryptoError::InvalidKey);
        }
        #[cfg(any(test, feature = "toy-signatures"))]
        if let Some(body) = text.strip_prefix("toy:") {
            let mut parts = body.split(':').map(str::parse::<u64>);
            let (Some(Ok(n)), Some(Ok(e)), Some(Ok(d)), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(CryptoError::Encoding);
            };
            return Ok(PrivateKey::Toy(ToyPrivateKey { n, e, d }));
        }
        Err(CryptoError::Encoding)
    }
}

fn decode_hex(text: &str) -> Result<Vec<u8>, CryptoError> {
    if !super::is_lower_hex(text) {
        return Err(CryptoError::Encoding);
    }
    hex::decode(text).map_err(|_| CryptoError::Encoding)
}

#[cfg(any(test, feature = "toy-signatures"))]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ToyPublicKey {
    pub n: u64,
    pub e: u64,
}

#[cfg(any(test, feature = "toy-signatures"))]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ToyPrivateKey {
    pub n: u64,
    pub e: u64,
    pub d: u64,
}

#[cfg(any(test, feature = "toy-signatures"))]
fn mod_pow(base: u64, mut exp: u64, modulus: u64) -> u64 {
    let m = modulus as u128;
    let mut acc: u128 = 1 % m;
    let mut b = base as u128 % m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = acc * b % m;
        }
        b = b * b % m;
        exp >>= 1;
    }
    acc as u64
}

#[cfg(any(test, feature = "toy-signatures"))]
fn toy_representative(n: u64, message: &[u8]) -> u64 {
    let digest = super::hash(message);
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest.as_bytes()[..8]);
    u64::from_be_bytes(head) % n
}

#[cfg(any(test, feature = "toy-signatures"))]
impl ToyPrivateKey {
    pub fn raw_sign(&self, m: u64) -> u64 {
        mod_pow(m, self.d, self.n)
    }

    fn representative(&self, message: &[u8]) -> u64 {
        toy_representative(self.n, message)
    }
}

#[cfg(any(test, feature = "toy-signatures"))]
impl ToyPublicKey {
    pub fn raw_verify(&self, m: u64, s: u64) -> bool {
        s < self.n && mod_pow(s, self.e, self.n) == m
    }

    fn representative(&self, message: &[u8]) -> u64 {
        toy_representative(self.n, message)
    }
}

/// Builds a toy keypair; bypasses the modulus floor.
#[cfg(any(test, feature = "toy-signatures"))]
pub fn toy_keypair(n: u64, e: u64, d: u64) -> KeyPair {
    KeyPair::from_private(PrivateKey::Toy(ToyPrivateKey { n, e, d }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rsa_1024(seed: u64) -> KeyPair {
        generate_keypair(&mut ChaCha20Rng::seed_from_u64(seed), 1024).unwrap()
    }

    #[test]
    fn rejects_weak_modulus() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        assert_eq!(
            generate_keypair(&mut rng, 512).unwrap_err(),
            CryptoError::PolicyViolation { bits: 512, min: 1024 }
        );
    }

    #[test]
    fn rsa_roundtrip_and_tamper() {
        let kp = rsa_1024(2);
        assert!(kp.modulus_bits >= 1024);
        let sig = sign(&kp.private_key, b"message").unwrap();
        assert!(verify_signature(&kp.public_key, b"message", &sig));
        assert!(!verify_signature(&kp.public_key, b"message\0", &sig));
        let other = rsa_1024(3);
        assert!(!verify_signature(&other.public_key, b"message", &sig));
    }

    #[test]
    fn key_encoding_roundtrips() {
        let kp = rsa_1024(4);
        let pk = PublicKey::decode(&kp.public_key.encode()).unwrap();
        assert_eq!(pk, kp.public_key);
        let sk = PrivateKey::decode(&kp.private_key.encode()).unwrap();
        assert_eq!(sk.public_key(), kp.public_key);
        assert!(PublicKey::decode("rsa:zz").is_err());
        assert!(PublicKey::decode("dsa:00").is_err());
    }

    #[test]
    fn toy_modexp_matches_hand_computation() {
        // 65^2753 mod 3233 = 588 and 588^17 mod 3233 = 65, computed by an
        // independent square-and-multiply in Python.
        let kp = toy_keypair(3233, 17, 2753);
        let PrivateKey::Toy(sk) = kp.private_key else { unreachable!() };
        let PublicKey::Toy(pk) = kp.public_key else { unreachable!() };
        assert_eq!(sk.raw_sign(65), 588);
        assert!(pk.raw_verify(65, 588));
        assert!(!pk.raw_verify(66, 588));
    }

    #[test]
    fn toy_scheme_signs_messages() {
        let kp = toy_keypair(3233, 17, 2753);
        let sig = sign(&kp.private_key, b"abc").unwrap();
        assert!(verify_signature(&kp.public_key, b"abc", &sig));
        assert_eq!(kp.modulus_bits, 12);
        let encoded = kp.public_key.encode();
        assert_eq!(encoded, "toy:3233:17");
        assert_eq!(PublicKey::decode(&encoded).unwrap(), kp.public_key);
    }
}
