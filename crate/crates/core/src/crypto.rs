//! Symmetric primitives used by the key hierarchy and the protocols.
//!
//! Two authenticated-encryption instantiations sit behind [`Suite`]:
//!
//! * [`Suite::Production`]: ChaCha20-Poly1305 with an HMAC-SHA256 key
//!   commitment prepended to the body, so that opening under the wrong key
//!   fails even for crafted ciphertexts.
//! * [`Suite::Deterministic`]: a transparent SHA-256 keystream with an
//!   HMAC-SHA256 tag over nonce, context and body. The tag commits to the key.
//!
//! Both take randomness only from the handle they are given.

use std::collections::BTreeSet;
use std::fmt;

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::ChaCha20Poly1305;
use hkdf::Hkdf;
use hmac::{Hmac, Mac};
use rand::RngCore;
use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;
use thiserror::Error;

pub const KEY_LEN: usize = 32;
pub const NONCE_LEN: usize = 16;
pub const DIGEST_LEN: usize = 32;

type HmacSha256 = Hmac<Sha256>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    /// Wrong key, wrong context, or tampered ciphertext; the three are
    /// deliberately not distinguished.
    #[error("authentication failure")]
    AuthenticationFailure,
    #[error("session key secret is empty")]
    EmptySecret,
    #[error("expected {expected} bytes, got {got}")]
    BadLength { expected: usize, got: usize },
    #[error("nonce {0} was already used")]
    NonceReuse(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KeyOrigin {
    KasNode,
    SharedTtp,
    Session,
    External,
}

/// A 32-byte secret. Equality is constant time and `Debug` never prints the
/// key material.
#[derive(Clone)]
pub struct SymmetricKey {
    bytes: [u8; KEY_LEN],
    origin: KeyOrigin,
}

impl SymmetricKey {
    pub fn from_bytes(bytes: [u8; KEY_LEN], origin: KeyOrigin) -> Self {
        SymmetricKey { bytes, origin }
    }

    pub fn from_slice(bytes: &[u8], origin: KeyOrigin) -> Result<Self, CryptoError> {
        let bytes: [u8; KEY_LEN] = bytes
            .try_into()
            .map_err(|_| CryptoError::BadLength { expected: KEY_LEN, got: bytes.len() })?;
        Ok(SymmetricKey { bytes, origin })
    }

    pub fn generate(rng: &mut dyn RngCore, origin: KeyOrigin) -> Self {
        let mut bytes = [0u8; KEY_LEN];
        rng.fill_bytes(&mut bytes);
        SymmetricKey { bytes, origin }
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.bytes
    }

    pub fn origin(&self) -> KeyOrigin {
        self.origin
    }

    /// Short non-secret fingerprint for logs.
    pub fn fingerprint(&self) -> String {
        hex::encode(&Sha256::digest(self.bytes)[..4])
    }
}

impl PartialEq for SymmetricKey {
    fn eq(&self, other: &Self) -> bool {
        self.bytes.ct_eq(&other.bytes).into()
    }
}

impl Eq for SymmetricKey {}

impl fmt::Debug for SymmetricKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SymmetricKey({:?}, #{})", self.origin, self.fingerprint())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Nonce(pub [u8; NONCE_LEN]);

impl Nonce {
    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; NONCE_LEN] = bytes
            .try_into()
            .map_err(|_| CryptoError::BadLength { expected: NONCE_LEN, got: bytes.len() })?;
        Ok(Nonce(arr))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for Nonce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Nonce({})", hex::encode(self.0))
    }
}

impl fmt::Display for Nonce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

/// Logical time in ticks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Timestamp(pub u64);

/// Nonces an actor has produced or accepted. Reuse is an error.
#[derive(Clone, Debug, Default)]
pub struct NonceLedger {
    used: BTreeSet<Nonce>,
}

impl NonceLedger {
    pub fn record(&mut self, nonce: Nonce) -> Result<(), CryptoError> {
        if self.used.insert(nonce) {
            Ok(())
        } else {
            Err(CryptoError::NonceReuse(nonce.to_string()))
        }
    }

    pub fn contains(&self, nonce: &Nonce) -> bool {
        self.used.contains(nonce)
    }

    pub fn len(&self) -> usize {
        self.used.len()
    }

    pub fn is_empty(&self) -> bool {
        self.used.is_empty()
    }
}

/// Draws a nonce the ledger has never seen and records it.
pub fn fresh_nonce(rng: &mut dyn RngCore, ledger: &mut NonceLedger) -> Nonce {
    loop {
        let mut bytes = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut bytes);
        let nonce = Nonce(bytes);
        if ledger.record(nonce).is_ok() {
            return nonce;
        }
    }
}

/// Authenticated ciphertext together with the context it is bound to.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Ciphertext {
    pub body: Vec<u8>,
    pub binding: Vec<u8>,
}

impl fmt::Debug for Ciphertext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Ciphertext({} bytes, ctx={:?})",
            self.body.len(),
            String::from_utf8_lossy(&self.binding)
        )
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Suite {
    #[default]
    Production,
    Deterministic,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Production => "production",
            Suite::Deterministic => "deterministic",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "production" => Some(Suite::Production),
            "deterministic" | "test" => Some(Suite::Deterministic),
            _ => None,
        }
    }

    pub fn ae_encrypt(self, key: &SymmetricKey, plaintext: &[u8], context: &[u8], rng: &mut dyn RngCore) -> Ciphertext {
        let body = match self {
            Suite::Production => production_seal(key, plaintext, context, rng),
            Suite::Deterministic => stream_seal(key, plaintext, context, rng),
        };
        Ciphertext { body, binding: context.to_vec() }
    }

    pub fn ae_decrypt(self, key: &SymmetricKey, ct: &Ciphertext, context: &[u8]) -> Result<Vec<u8>, CryptoError> {
        if !bool::from(ct.binding.ct_eq(context)) {
            return Err(CryptoError::AuthenticationFailure);
        }
        match self {
            Suite::Production => production_open(key, &ct.body, context),
            Suite::Deterministic => stream_open(key, &ct.body, context),
        }
    }
}

const AEAD_NONCE_LEN: usize = 12;
const STREAM_IV_LEN: usize = 16;

fn hmac(key: &[u8], parts: &[&[u8]]) -> [u8; DIGEST_LEN] {
    let mut mac = <HmacSha256 as Mac>::new_from_slice(key).expect("hmac accepts any key length");
    for part in parts {
        mac.update(part);
    }
    mac.finalize().into_bytes().into()
}

fn commitment(key: &SymmetricKey, nonce: &[u8]) -> [u8; DIGEST_LEN] {
    hmac(key.as_bytes(), &[b"kas-auth/commit", nonce])
}

// body = nonce(12) || commitment(32) || chacha20poly1305(plaintext, aad = context)
fn production_seal(key: &SymmetricKey, plaintext: &[u8], context: &[u8], rng: &mut dyn RngCore) -> Vec<u8> {
    let mut nonce = [0u8; AEAD_NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let cipher = ChaCha20Poly1305::new(key.as_bytes().into());
    let sealed = cipher
        .encrypt((&nonce).into(), Payload { msg: plaintext, aad: context })
        .expect("chacha20poly1305 encryption is infallible for in-memory buffers");
    let mut body = Vec::with_capacity(AEAD_NONCE_LEN + DIGEST_LEN + sealed.len());
    body.extend_from_slice(&nonce);
    body.extend_from_slice(&commitment(key, &nonce));
    body.extend_from_slice(&sealed);
    body
}

fn production_open(key: &SymmetricKey, body: &[u8], context: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if body.len() < AEAD_NONCE_LEN + DIGEST_LEN + 16 {
        return Err(CryptoError::AuthenticationFailure);
    }
    let (nonce, rest) = body.split_at(AEAD_NONCE_LEN);
    let (commit, sealed) = rest.split_at(DIGEST_LEN);
    if !bool::from(commitment(key, nonce).ct_eq(commit)) {
        return Err(CryptoError::AuthenticationFailure);
    }
    let cipher = ChaCha20Poly1305::new(key.as_bytes().into());
    cipher
        .decrypt(nonce.into(), Payload { msg: sealed, aad: context })
        .map_err(|_| CryptoError::AuthenticationFailure)
}

fn keystream_xor(key: &SymmetricKey, iv: &[u8], data: &mut [u8]) {
    for (counter, chunk) in data.chunks_mut(DIGEST_LEN).enumerate() {
        let block = Sha256::new()
            .chain_update(b"kas-auth/stream")
            .chain_update(key.as_bytes())
            .chain_update(iv)
            .chain_update((counter as u64).to_be_bytes())
            .finalize();
        for (b, k) in chunk.iter_mut().zip(block.iter()) {
            *b ^= k;
        }
    }
}

fn stream_tag(key: &SymmetricKey, iv: &[u8], context: &[u8], ct: &[u8]) -> [u8; DIGEST_LEN] {
    let ctx_len = (context.len() as u64).to_be_bytes();
    hmac(key.as_bytes(), &[b"kas-auth/tag", &ctx_len, context, iv, ct])
}

// body = iv(16) || keystream-xored plaintext || tag(32)
fn stream_seal(key: &SymmetricKey, plaintext: &[u8], context: &[u8], rng: &mut dyn RngCore) -> Vec<u8> {
    let mut iv = [0u8; STREAM_IV_LEN];
    rng.fill_bytes(&mut iv);
    let mut ct = plaintext.to_vec();
    keystream_xor(key, &iv, &mut ct);
    let tag = stream_tag(key, &iv, context, &ct);
    let mut body = Vec::with_capacity(STREAM_IV_LEN + ct.len() + DIGEST_LEN);
    body.extend_from_slice(&iv);
    body.extend_from_slice(&ct);
    body.extend_from_slice(&tag);
    body
}

fn stream_open(key: &SymmetricKey, body: &[u8], context: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if body.len() < STREAM_IV_LEN + DIGEST_LEN {
        return Err(CryptoError::AuthenticationFailure);
    }
    let (iv, rest) = body.split_at(STREAM_IV_LEN);
    let (ct, tag) = rest.split_at(rest.len() - DIGEST_LEN);
    if !bool::from(stream_tag(key, iv, context, ct).ct_eq(tag)) {
        return Err(CryptoError::AuthenticationFailure);
    }
    let mut pt = ct.to_vec();
    keystream_xor(key, iv, &mut pt);
    Ok(pt)
}

/// `H(key, data)`: HMAC-SHA256.
pub fn keyed_digest(key: &SymmetricKey, data: &[u8]) -> [u8; DIGEST_LEN] {
    hmac(key.as_bytes(), &[data])
}

/// HKDF-SHA256 expansion of `secret` bound to `transcript_context`.
pub fn derive_session_key(secret: &[u8], transcript_context: &[u8]) -> Result<SymmetricKey, CryptoError> {
    if secret.is_empty() {
        return Err(CryptoError::EmptySecret);
    }
    let hk = Hkdf::<Sha256>::new(Some(b"kas-auth/session"), secret);
    let mut okm = [0u8; KEY_LEN];
    hk.expand(transcript_context, &mut okm)
        .expect("32 bytes is a valid HKDF-SHA256 output length");
    Ok(SymmetricKey::from_bytes(okm, KeyOrigin::Session))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    const SUITES: [Suite; 2] = [Suite::Production, Suite::Deterministic];

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    #[test]
    fn round_trip_and_randomization() {
        let mut r = rng(1);
        let key = SymmetricKey::generate(&mut r, KeyOrigin::External);
        for suite in SUITES {
            let a = suite.ae_encrypt(&key, b"hello", b"prot6/msg3", &mut r);
            let b = suite.ae_encrypt(&key, b"hello", b"prot6/msg3", &mut r);
            assert_ne!(a.body, b.body);
            assert_eq!(suite.ae_decrypt(&key, &a, b"prot6/msg3").unwrap(), b"hello");
            assert_eq!(
                suite.ae_decrypt(&key, &a, b"prot8/msg3"),
                Err(CryptoError::AuthenticationFailure)
            );
        }
    }

    #[test]
    fn tampering_and_wrong_key_fail() {
        let mut r = rng(2);
        let key = SymmetricKey::generate(&mut r, KeyOrigin::External);
        let other = SymmetricKey::generate(&mut r, KeyOrigin::External);
        for suite in SUITES {
            let ct = suite.ae_encrypt(&key, b"payload", b"ctx", &mut r);
            for i in 0..ct.body.len() {
                let mut bad = ct.clone();
                bad.body[i] ^= 1;
                assert!(suite.ae_decrypt(&key, &bad, b"ctx").is_err(), "bit flip at {i}");
            }
            let mut rebound = ct.clone();
            rebound.binding = b"other".to_vec();
            assert!(suite.ae_decrypt(&key, &rebound, b"other").is_err());
            assert!(suite.ae_decrypt(&other, &ct, b"ctx").is_err());
            let mut short = ct.clone();
            short.body.truncate(10);
            assert!(suite.ae_decrypt(&key, &short, b"ctx").is_err());
        }
    }

    #[test]
    fn suites_are_not_interchangeable() {
        let mut r = rng(3);
        let key = SymmetricKey::generate(&mut r, KeyOrigin::External);
        let ct = Suite::Production.ae_encrypt(&key, b"x", b"c", &mut r);
        assert!(Suite::Deterministic.ae_decrypt(&key, &ct, b"c").is_err());
    }

    #[test]
    fn digest_and_session_keys() {
        let mut r = rng(4);
        let key = SymmetricKey::generate(&mut r, KeyOrigin::SharedTtp);
        assert_eq!(keyed_digest(&key, b"n1"), keyed_digest(&key, b"n1"));
        assert_ne!(keyed_digest(&key, b"n1"), keyed_digest(&key, b"n2"));

        let k1 = derive_session_key(b"secret", b"ctx-a").unwrap();
        assert_eq!(k1, derive_session_key(b"secret", b"ctx-a").unwrap());
        assert_ne!(k1, derive_session_key(b"secret", b"ctx-b").unwrap());
        assert_eq!(k1.origin(), KeyOrigin::Session);
        assert_eq!(derive_session_key(b"", b"ctx"), Err(CryptoError::EmptySecret));
    }

    #[test]
    fn nonces_are_fresh_and_reproducible() {
        let mut ledger = NonceLedger::default();
        let mut r = rng(5);
        let a = fresh_nonce(&mut r, &mut ledger);
        let b = fresh_nonce(&mut r, &mut ledger);
        assert_ne!(a, b);
        assert_eq!(ledger.len(), 2);
        assert!(matches!(ledger.record(a), Err(CryptoError::NonceReuse(_))));

        let mut again = NonceLedger::default();
        let mut r2 = rng(5);
        assert_eq!(fresh_nonce(&mut r2, &mut again), a);
    }

    #[test]
    fn key_equality_and_debug() {
        let k = SymmetricKey::from_bytes([7; KEY_LEN], KeyOrigin::KasNode);
        assert_eq!(k, SymmetricKey::from_bytes([7; KEY_LEN], KeyOrigin::Session));
        assert!(!format!("{k:?}").contains("0707"));
        assert!(SymmetricKey::from_slice(&[0; 5], KeyOrigin::External).is_err());
    }
}
