use hkdf::Hkdf;
use rand::{CryptoRng, RngCore};
use sha2::Sha256;
use thiserror::Error;
use x25519_dalek::{PublicKey as XPublic, StaticSecret};

use super::aead::{SymKey, KEY_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("peer public key is not a valid group element")]
pub struct InvalidGroupElement;

/// Public half of an X25519 key pair.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct DhPublic([u8; 32]);

impl DhPublic {
    pub const fn from_bytes(bytes: [u8; 32]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

/// Ephemeral Diffie-Hellman key pair. The secret half has no serializer.
pub struct KeyPair {
    secret: StaticSecret,
    public: DhPublic,
}

impl KeyPair {
    pub fn public(&self) -> DhPublic {
        self.public
    }
}

impl std::fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyPair").field("public", &self.public).finish_non_exhaustive()
    }
}

pub fn dh_keygen<R: RngCore + CryptoRng>(rng: &mut R) -> KeyPair {
    let secret = StaticSecret::random_from_rng(rng);
    let public = DhPublic(XPublic::from(&secret).to_bytes());
    KeyPair { secret, public }
}

/// Shared secret compressed to a 16-byte key. Low-order peer points (which
/// force an all-zero shared secret) are rejected.
pub fn dh_derive(own: &KeyPair, peer: &DhPublic) -> Result<SymKey, InvalidGroupElement> {
    let shared = own.secret.diffie_hellman(&XPublic::from(peer.0));
    if !shared.was_contributory() {
        return Err(InvalidGroupElement);
    }
    let hk = Hkdf::<Sha256>::new(None, shared.as_bytes());
    let mut okm = [0u8; KEY_LEN];
    hk.expand(b"dh", &mut okm).expect("valid HKDF length");
    Ok(SymKey::from_bytes(okm))
}
