//! Cryptographic primitives shared by the device, the providers and the model
//! toolchain.
//!
//! Everything here is a pure function over its inputs. Randomness is always
//! supplied by the caller, so seeded runs replay byte-for-byte.

mod aead;
mod kdf;
mod kex;
mod sign;

pub use aead::{
    aead_open, aead_seal, blob_aad, mac, AuthFailure, AuthTag, BlobKind, MalformedBlob, Nonce,
    NonceCounter, SealedBlob, SymKey, KEY_LEN, NONCE_LEN, SEAL_OVERHEAD, TAG_LEN,
};
pub use kdf::{derive_key, mac_subkey, FirmwareMeasurement};
pub(crate) use kdf::derive_seed;
pub use kex::{dh_derive, dh_keygen, DhPublic, InvalidGroupElement, KeyPair};
pub use sign::{sign, verify, Signature, SigningKey, VerifyingKey, VendorSignature};

/// Compares two byte strings without short-circuiting on the first mismatch.
pub(crate) fn ct_eq(a: &[u8], b: &[u8]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}
