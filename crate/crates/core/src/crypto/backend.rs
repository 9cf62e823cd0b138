//! Crypto backend contract and the size-faithful mock used by default.
//!
//! The contract follows the shape of the NIST KEM/signature C API. Real
//! scheme adapters only need to implement [`CryptoBackend`].

use rand::{Rng, RngCore};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::profile::{AlgorithmProfile, Kind, Sizes};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("{op} is not available for a {kind} profile")]
    WrongKind { op: &'static str, kind: Kind },
    #[error("{what} is {got} bytes, profile expects {want}")]
    SizeMismatch { what: &'static str, got: usize, want: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyPair {
    pub public: Vec<u8>,
    pub secret: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encapsulation {
    pub ciphertext: Vec<u8>,
    pub shared_secret: Vec<u8>,
}

pub trait CryptoBackend {
    fn keygen(&mut self) -> KeyPair;
    fn encapsulate(&mut self, public: &[u8]) -> Result<Encapsulation, BackendError>;
    fn decapsulate(&self, secret: &[u8], ciphertext: &[u8]) -> Result<Vec<u8>, BackendError>;
    fn sign(&mut self, secret: &[u8], msg: &[u8]) -> Result<Vec<u8>, BackendError>;
    fn verify(&self, public: &[u8], msg: &[u8], sig: &[u8]) -> Result<bool, BackendError>;
    /// Random bytes in the manner of the NIST `randombytes` helper.
    fn random_bytes(&mut self, n: usize) -> Vec<u8>;
}

/// Deliberate faults for exercising failure paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// `keygen` pairs a public key with the secret key of another pair.
    MismatchedKeyPair,
    /// `sign` flips one bit of every signature it produces.
    CorruptSignature,
}

const NONCE: usize = 16;
const TAG: usize = 32;

/// Counter-mode SHA-256 expansion of `label || parts` to `len` bytes.
fn expand(label: &[u8], parts: &[&[u8]], len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(len + 32);
    let mut counter = 0u32;
    while out.len() < len {
        let mut h = Sha256::new();
        h.update(label);
        h.update(counter.to_le_bytes());
        for p in parts {
            h.update((p.len() as u64).to_le_bytes());
            h.update(p);
        }
        out.extend_from_slice(&h.finalize());
        counter += 1;
    }
    out.truncate(len);
    out
}

fn nonce(bytes: &[u8]) -> &[u8] {
    &bytes[..bytes.len().min(NONCE)]
}

/// Object of `len` bytes: a nonce prefix followed by a keyed expansion of it.
fn keyed_object(label: &[u8], n: &[u8], len: usize) -> Vec<u8> {
    let mut v = n[..n.len().min(len)].to_vec();
    v.extend(expand(label, &[n], len - v.len()));
    v
}

/// Produces pseudorandom outputs of exactly the profile's sizes while keeping
/// KEM correctness and signature soundness:
///
/// - public and secret keys share a 16-byte key-pair nonce prefix;
/// - the shared secret is a hash of (key-pair nonce, whole ciphertext), so
///   decapsulation with another key pair or a modified ciphertext yields a
///   different secret;
/// - a signature is a tag over (key-pair nonce, message digest) followed by
///   an expansion of the tag, and verification checks every byte of the
///   public key, message and signature.
pub struct MockBackend<R> {
    sizes: Sizes,
    kind: Kind,
    rng: R,
    fault: Fault,
}

impl<R: RngCore> MockBackend<R> {
    pub fn new(profile: &AlgorithmProfile, rng: R) -> Self {
        MockBackend {
            sizes: profile.sizes,
            kind: profile.kind,
            rng,
            fault: Fault::None,
        }
    }

    pub fn with_fault(mut self, fault: Fault) -> Self {
        self.fault = fault;
        self
    }

    fn pair_from_nonce(&self, n: &[u8]) -> KeyPair {
        KeyPair {
            public: keyed_object(b"pk", n, self.sizes.public_key()),
            secret: keyed_object(b"sk", n, self.sizes.secret_key()),
        }
    }

    fn check(&self, what: &'static str, got: usize, want: usize) -> Result<(), BackendError> {
        if got != want {
            return Err(BackendError::SizeMismatch { what, got, want });
        }
        Ok(())
    }

    fn kem_sizes(&self, op: &'static str) -> Result<(usize, usize), BackendError> {
        match self.sizes {
            Sizes::Kem {
                ciphertext,
                shared_secret,
                ..
            } => Ok((ciphertext, shared_secret)),
            Sizes::Dsa { .. } => Err(BackendError::WrongKind { op, kind: self.kind }),
        }
    }

    fn signature_len(&self, op: &'static str) -> Result<usize, BackendError> {
        match self.sizes {
            Sizes::Dsa { signature, .. } => Ok(signature),
            Sizes::Kem { .. } => Err(BackendError::WrongKind { op, kind: self.kind }),
        }
    }

    fn signature_for(&self, key_nonce: &[u8], msg: &[u8], len: usize) -> Vec<u8> {
        let digest = Sha256::digest(msg);
        let tag = expand(b"sig", &[key_nonce, &digest], TAG);
        let mut sig = tag[..TAG.min(len)].to_vec();
        sig.extend(expand(b"sigpad", &[&tag], len - sig.len()));
        sig
    }
}

impl<R: RngCore> CryptoBackend for MockBackend<R> {
    fn keygen(&mut self) -> KeyPair {
        let mut n = [0u8; NONCE];
        self.rng.fill_bytes(&mut n);
        let mut pair = self.pair_from_nonce(&n);
        if self.fault == Fault::MismatchedKeyPair {
            let mut other = n;
            other[0] ^= 0xFF;
            pair.secret = self.pair_from_nonce(&other).secret;
        }
        pair
    }

    fn encapsulate(&mut self, public: &[u8]) -> Result<Encapsulation, BackendError> {
        let (ct_len, ss_len) = self.kem_sizes("encapsulate")?;
        self.check("public key", public.len(), self.sizes.public_key())?;
        let mut m = [0u8; NONCE];
        self.rng.fill_bytes(&mut m);
        let ciphertext = keyed_object(b"ct", &m, ct_len);
        let shared_secret = expand(b"ss", &[nonce(public), &ciphertext], ss_len);
        Ok(Encapsulation {
            ciphertext,
            shared_secret,
        })
    }

    fn decapsulate(&self, secret: &[u8], ciphertext: &[u8]) -> Result<Vec<u8>, BackendError> {
        let (ct_len, ss_len) = self.kem_sizes("decapsulate")?;
        self.check("secret key", secret.len(), self.sizes.secret_key())?;
        self.check("ciphertext", ciphertext.len(), ct_len)?;
        Ok(expand(b"ss", &[nonce(secret), ciphertext], ss_len))
    }

    fn sign(&mut self, secret: &[u8], msg: &[u8]) -> Result<Vec<u8>, BackendError> {
        let len = self.signature_len("sign")?;
        self.check("secret key", secret.len(), self.sizes.secret_key())?;
        let mut sig = self.signature_for(nonce(secret), msg, len);
        if self.fault == Fault::CorruptSignature {
            if let Some(b) = sig.last_mut() {
                *b ^= 0x01;
            }
        }
        Ok(sig)
    }

    fn verify(&self, public: &[u8], msg: &[u8], sig: &[u8]) -> Result<bool, BackendError> {
        let len = self.signature_len("verify")?;
        if public.len() != self.sizes.public_key() || sig.len() != len {
            return Ok(false);
        }
        let n = nonce(public);
        if public != keyed_object(b"pk", n, public.len()).as_slice() {
            return Ok(false);
        }
        Ok(sig == self.signature_for(n, msg, len).as_slice())
    }

    fn random_bytes(&mut self, n: usize) -> Vec<u8> {
        let mut v = vec![0u8; n];
        self.rng.fill(&mut v[..]);
        v
    }
}
