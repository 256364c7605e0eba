use ed25519_dalek::Signer;
use rand::{CryptoRng, RngCore};
use serde::{Serialize, Serializer};

/// Ed25519 signing key. Used for the vendor key, the device root and alias
/// identities, and the providers' registered keys.
#[derive(Clone)]
pub struct SigningKey(ed25519_dalek::SigningKey);

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct VerifyingKey([u8; 32]);

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Signature([u8; 64]);

/// Firmware images and device certificates are signed by the vendor.
pub type VendorSignature = Signature;

impl SigningKey {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        Self(ed25519_dalek::SigningKey::generate(rng))
    }

    pub fn from_seed(seed: [u8; 32]) -> Self {
        Self(ed25519_dalek::SigningKey::from_bytes(&seed))
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        VerifyingKey(self.0.verifying_key().to_bytes())
    }
}

impl std::fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_tuple("SigningKey").field(&self.verifying_key()).finish()
    }
}

impl VerifyingKey {
    pub const fn from_bytes(bytes: [u8; 32]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl Serialize for VerifyingKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(self.0))
    }
}

impl Signature {
    pub const fn from_bytes(bytes: [u8; 64]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 64] {
        &self.0
    }
}

pub fn sign(key: &SigningKey, message: &[u8]) -> Signature {
    Signature(key.0.sign(message).to_bytes())
}

pub fn verify(key: &VerifyingKey, message: &[u8], sig: &Signature) -> bool {
    let Ok(vk) = ed25519_dalek::VerifyingKey::from_bytes(&key.0) else {
        return false;
    };
    vk.verify_strict(message, &ed25519_dalek::Signature::from_bytes(&sig.0)).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn sign_verify() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let k = SigningKey::generate(&mut rng);
        let other = SigningKey::generate(&mut rng);
        let sig = sign(&k, b"firmware v1");
        assert!(verify(&k.verifying_key(), b"firmware v1", &sig));
        assert!(!verify(&k.verifying_key(), b"firmware v2", &sig));
        assert!(!verify(&other.verifying_key(), b"firmware v1", &sig));
    }

    #[test]
    fn any_bit_flip_breaks_signature() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let k = SigningKey::generate(&mut rng);
        let msg = b"measurement payload".to_vec();
        let sig = sign(&k, &msg);
        for bit in 0..msg.len() * 8 {
            let mut m = msg.clone();
            m[bit / 8] ^= 1 << (bit % 8);
            assert!(!verify(&k.verifying_key(), &m, &sig));
        }
        for bit in 0..512 {
            let mut s = *sig.as_bytes();
            s[bit / 8] ^= 1 << (bit % 8);
            assert!(!verify(&k.verifying_key(), &msg, &Signature::from_bytes(s)));
        }
    }
}
