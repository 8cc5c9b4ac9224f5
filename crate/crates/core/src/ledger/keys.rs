use std::fmt;

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::hash::hash_digest;

/// Ed25519 verification key bytes.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey(pub [u8; 32]);

impl PublicKey {
    pub fn to_verifying_key(&self) -> Option<VerifyingKey> {
        VerifyingKey::from_bytes(&self.0).ok()
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", &hex::encode(self.0)[..16])
    }
}

impl Serialize for PublicKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(self.0))
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let mut out = [0u8; 32];
        hex::decode_to_slice(&s, &mut out).map_err(serde::de::Error::custom)?;
        Ok(PublicKey(out))
    }
}

/// Signature bytes. Normally 64 bytes of Ed25519, but any byte string
/// round-trips so that tampered exports can still be loaded and audited.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct SignatureBytes(pub Vec<u8>);

impl SignatureBytes {
    pub fn to_signature(&self) -> Option<ed25519_dalek::Signature> {
        let bytes: [u8; 64] = self.0.as_slice().try_into().ok()?;
        Some(ed25519_dalek::Signature::from_bytes(&bytes))
    }
}

impl fmt::Debug for SignatureBytes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let h = hex::encode(&self.0);
        write!(f, "Sig({})", &h[..h.len().min(16)])
    }
}

impl Serialize for SignatureBytes {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(&self.0))
    }
}

impl<'de> Deserialize<'de> for SignatureBytes {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(&s)
            .map(SignatureBytes)
            .map_err(serde::de::Error::custom)
    }
}

/// An actor's signing keypair.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
    public: PublicKey,
}

impl KeyPair {
    pub fn from_secret(secret: [u8; 32]) -> Self {
        let signing = SigningKey::from_bytes(&secret);
        let public = PublicKey(signing.verifying_key().to_bytes());
        KeyPair { signing, public }
    }

    /// Deterministic keypair for a simulated actor: the secret is the hash of
    /// the run seed and the actor label.
    pub fn derive(seed: u64, label: &str) -> Self {
        let mut material = b"panelchain/actor-key/v1".to_vec();
        material.extend_from_slice(&seed.to_be_bytes());
        material.extend_from_slice(label.as_bytes());
        Self::from_secret(hash_digest(&material).0)
    }

    pub fn generate<R: rand::RngCore + rand::CryptoRng>(rng: &mut R) -> Self {
        let mut secret = [0u8; 32];
        rng.fill_bytes(&mut secret);
        Self::from_secret(secret)
    }

    pub fn public_key(&self) -> PublicKey {
        self.public
    }

    pub fn sign(&self, message: &[u8]) -> SignatureBytes {
        SignatureBytes(self.signing.sign(message).to_bytes().to_vec())
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

/// Verify `signature` over `message` under `key`. Malformed keys or
/// signatures simply fail verification.
pub fn verify(key: &PublicKey, message: &[u8], signature: &SignatureBytes) -> bool {
    match (key.to_verifying_key(), signature.to_signature()) {
        (Some(vk), Some(sig)) => vk.verify(message, &sig).is_ok(),
        _ => false,
    }
}

pub(crate) fn verify_with(vk: &VerifyingKey, message: &[u8], signature: &SignatureBytes) -> bool {
    signature
        .to_signature()
        .map(|sig| vk.verify(message, &sig).is_ok())
        .unwrap_or(false)
}

/// Batch-verify many (key, message, signature) triples. Returns `true` only
/// if every signature is valid; callers fall back to individual checks to
/// locate failures.
pub(crate) fn verify_batch(items: &[(VerifyingKey, &[u8], &SignatureBytes)]) -> bool {
    if items.is_empty() {
        return true;
    }
    let mut sigs = Vec::with_capacity(items.len());
    for (_, _, s) in items {
        match s.to_signature() {
            Some(sig) => sigs.push(sig),
            None => return false,
        }
    }
    let msgs: Vec<&[u8]> = items.iter().map(|(_, m, _)| *m).collect();
    let keys: Vec<VerifyingKey> = items.iter().map(|(k, _, _)| *k).collect();
    ed25519_dalek::verify_batch(&msgs, &sigs, &keys).is_ok()
}
