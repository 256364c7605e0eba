use std::collections::BTreeMap;
use std::fmt;

use aes_gcm::aead::{AeadInPlace, KeyInit};
use aes_gcm::{Aes128Gcm, Key};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const KEY_LEN: usize = 16;
pub const TAG_LEN: usize = 16;
pub const NONCE_LEN: usize = 12;
/// Bytes a sealed blob gains over its plaintext: the stored nonce plus the tag.
pub const SEAL_OVERHEAD: usize = NONCE_LEN + TAG_LEN;

/// AES-128 key. Debug output never prints the key material.
#[derive(Clone, PartialEq, Eq)]
pub struct SymKey([u8; KEY_LEN]);

impl SymKey {
    pub const fn from_bytes(bytes: [u8; KEY_LEN]) -> Self {
        Self(bytes)
    }

    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut bytes = [0u8; KEY_LEN];
        rng.fill_bytes(&mut bytes);
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }
}

impl fmt::Debug for SymKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SymKey(..)")
    }
}

#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct AuthTag([u8; TAG_LEN]);

impl AuthTag {
    pub const fn from_bytes(bytes: [u8; TAG_LEN]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; TAG_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        let mut out = [0u8; TAG_LEN];
        hex::decode_to_slice(s, &mut out)?;
        Ok(Self(out))
    }

    /// Tag comparison that does not exit early.
    pub fn verify(&self, other: &AuthTag) -> bool {
        super::ct_eq(&self.0, &other.0)
    }
}

impl fmt::Debug for AuthTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AuthTag({})", self.to_hex())
    }
}

impl From<AuthTag> for String {
    fn from(t: AuthTag) -> String {
        t.to_hex()
    }
}

impl TryFrom<String> for AuthTag {
    type Error = hex::FromHexError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        AuthTag::from_hex(&s)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct Nonce([u8; NONCE_LEN]);

impl Nonce {
    pub const ZERO: Nonce = Nonce([0u8; NONCE_LEN]);

    pub const fn from_bytes(bytes: [u8; NONCE_LEN]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; NONCE_LEN] {
        &self.0
    }
}

/// What a sealed blob holds. The kind byte is bound into both the nonce and
/// the associated data so a blob cannot be replayed into a different slot.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[repr(u8)]
pub enum BlobKind {
    Weights = 1,
    Binary = 2,
    Policy = 3,
    Input = 4,
    Output = 5,
}

/// Associated data for a blob: kind byte followed by the big-endian slot index.
pub fn blob_aad(kind: BlobKind, index: u32) -> [u8; 5] {
    let mut aad = [0u8; 5];
    aad[0] = kind as u8;
    aad[1..].copy_from_slice(&index.to_be_bytes());
    aad
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("authentication failed")]
pub struct AuthFailure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("sealed blob of {0} bytes is shorter than nonce and tag")]
pub struct MalformedBlob(pub usize);

fn cipher(key: &SymKey) -> Aes128Gcm {
    Aes128Gcm::new(Key::<Aes128Gcm>::from_slice(key.as_bytes()))
}

/// AES-GCM-128 encryption. The ciphertext has the plaintext's length.
pub fn aead_seal(key: &SymKey, nonce: &Nonce, aad: &[u8], plaintext: &[u8]) -> (Vec<u8>, AuthTag) {
    let mut buf = plaintext.to_vec();
    let tag = cipher(key)
        .encrypt_in_place_detached(nonce.as_bytes().into(), aad, &mut buf)
        .expect("AES-GCM input within length limits");
    let mut out = [0u8; TAG_LEN];
    out.copy_from_slice(&tag);
    (buf, AuthTag(out))
}

/// AES-GCM-128 decryption. Every failure cause collapses into [`AuthFailure`].
pub fn aead_open(
    key: &SymKey,
    nonce: &Nonce,
    aad: &[u8],
    ciphertext: &[u8],
    tag: &AuthTag,
) -> Result<Vec<u8>, AuthFailure> {
    let mut buf = ciphertext.to_vec();
    cipher(key)
        .decrypt_in_place_detached(nonce.as_bytes().into(), aad, &mut buf, tag.as_bytes().into())
        .map_err(|_| AuthFailure)?;
    Ok(buf)
}

/// GMAC: AES-GCM with an empty plaintext, the message as associated data and
/// an all-zero nonce. Callers must pass a key reserved for MACs
/// (see [`mac_subkey`](super::mac_subkey)), never a sealing key.
pub fn mac(key: &SymKey, message: &[u8]) -> AuthTag {
    aead_seal(key, &Nonce::ZERO, message, &[]).1
}

/// Per-kind nonce sequence. Nonce layout: kind byte, three zero bytes,
/// big-endian 64-bit counter.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NonceCounter {
    next: BTreeMap<BlobKind, u64>,
}

impl NonceCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next(&mut self, kind: BlobKind) -> Nonce {
        let counter = self.next.entry(kind).or_insert(0);
        let mut bytes = [0u8; NONCE_LEN];
        bytes[0] = kind as u8;
        bytes[4..].copy_from_slice(&counter.to_be_bytes());
        *counter += 1;
        Nonce(bytes)
    }
}

/// A ciphertext serialized as `nonce ‖ ciphertext ‖ tag`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SealedBlob {
    pub nonce: Nonce,
    pub ciphertext: Vec<u8>,
    pub tag: AuthTag,
}

impl SealedBlob {
    pub fn seal(key: &SymKey, nonce: Nonce, kind: BlobKind, index: u32, plaintext: &[u8]) -> Self {
        let (ciphertext, tag) = aead_seal(key, &nonce, &blob_aad(kind, index), plaintext);
        Self { nonce, ciphertext, tag }
    }

    pub fn open(&self, key: &SymKey, kind: BlobKind, index: u32) -> Result<Vec<u8>, AuthFailure> {
        aead_open(key, &self.nonce, &blob_aad(kind, index), &self.ciphertext, &self.tag)
    }

    pub fn len(&self) -> usize {
        self.ciphertext.len() + SEAL_OVERHEAD
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len());
        out.extend_from_slice(self.nonce.as_bytes());
        out.extend_from_slice(&self.ciphertext);
        out.extend_from_slice(self.tag.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MalformedBlob> {
        if bytes.len() < SEAL_OVERHEAD {
            return Err(MalformedBlob(bytes.len()));
        }
        let mut nonce = [0u8; NONCE_LEN];
        nonce.copy_from_slice(&bytes[..NONCE_LEN]);
        let split = bytes.len() - TAG_LEN;
        let mut tag = [0u8; TAG_LEN];
        tag.copy_from_slice(&bytes[split..]);
        Ok(Self {
            nonce: Nonce(nonce),
            ciphertext: bytes[NONCE_LEN..split].to_vec(),
            tag: AuthTag(tag),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn empty_plaintext_yields_bare_tag() {
        let key = SymKey::from_bytes([7; 16]);
        let (ct, tag) = aead_seal(&key, &Nonce::ZERO, &[], &[]);
        assert!(ct.is_empty());
        assert_eq!(tag.as_bytes().len(), TAG_LEN);
        assert_eq!(aead_open(&key, &Nonce::ZERO, &[], &ct, &tag).unwrap(), Vec::<u8>::new());
    }

    #[test]
    fn wrong_key_and_wrong_aad_fail() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let key = SymKey::generate(&mut rng);
        let other = SymKey::generate(&mut rng);
        let nonce = Nonce::from_bytes([3; 12]);
        let (ct, tag) = aead_seal(&key, &nonce, b"aad", b"secret weights");
        assert_eq!(aead_open(&other, &nonce, b"aad", &ct, &tag), Err(AuthFailure));
        assert_eq!(aead_open(&key, &nonce, b"aaD", &ct, &tag), Err(AuthFailure));
    }

    #[test]
    fn nonce_counter_is_per_kind() {
        let mut c = NonceCounter::new();
        let a = c.next(BlobKind::Binary);
        let b = c.next(BlobKind::Binary);
        let w = c.next(BlobKind::Weights);
        assert_ne!(a, b);
        assert_eq!(&a.as_bytes()[4..], &0u64.to_be_bytes());
        assert_eq!(&b.as_bytes()[4..], &1u64.to_be_bytes());
        assert_eq!(w.as_bytes()[0], BlobKind::Weights as u8);
        assert_eq!(&w.as_bytes()[4..], &0u64.to_be_bytes());
    }

    #[test]
    fn blob_slot_binding() {
        let key = SymKey::from_bytes([9; 16]);
        let blob = SealedBlob::seal(&key, Nonce::from_bytes([1; 12]), BlobKind::Binary, 1, b"bin");
        assert!(blob.open(&key, BlobKind::Binary, 1).is_ok());
        assert_eq!(blob.open(&key, BlobKind::Binary, 2), Err(AuthFailure));
        assert_eq!(blob.open(&key, BlobKind::Weights, 1), Err(AuthFailure));
        let parsed = SealedBlob::from_bytes(&blob.to_bytes()).unwrap();
        assert_eq!(parsed, blob);
        assert_eq!(blob.to_bytes().len(), 3 + SEAL_OVERHEAD);
        assert_eq!(SealedBlob::from_bytes(&[0; 27]), Err(MalformedBlob(27)));
    }

    #[test]
    fn debug_redacts_keys() {
        let key = SymKey::from_bytes([0xab; 16]);
        assert!(!format!("{key:?}").contains("ab"));
    }
}
