use std::fmt;

use hkdf::Hkdf;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::aead::{SymKey, KEY_LEN};

/// SHA-256 digest of a firmware image, taken during measured boot.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct FirmwareMeasurement([u8; 32]);

impl FirmwareMeasurement {
    /// Used as the KDF salt when a derivation is not bound to any firmware.
    pub const UNBOUND: FirmwareMeasurement = FirmwareMeasurement([0u8; 32]);

    pub fn of_image(image: &[u8]) -> Self {
        Self(Sha256::digest(image).into())
    }

    pub const fn from_bytes(bytes: [u8; 32]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for FirmwareMeasurement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FirmwareMeasurement({})", &self.to_hex()[..16])
    }
}

impl From<FirmwareMeasurement> for String {
    fn from(m: FirmwareMeasurement) -> String {
        m.to_hex()
    }
}

impl TryFrom<String> for FirmwareMeasurement {
    type Error = hex::FromHexError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(&s, &mut out)?;
        Ok(Self(out))
    }
}

/// HKDF-SHA256 with the measurement as salt and the context label as info.
///
/// # Panics
///
/// Panics if `context` is empty; every derivation site names its purpose.
pub fn derive_key(root: &SymKey, measurement: &FirmwareMeasurement, context: &str) -> SymKey {
    assert!(!context.is_empty(), "key derivation context must be non-empty");
    let hk = Hkdf::<Sha256>::new(Some(measurement.as_bytes()), root.as_bytes());
    let mut okm = [0u8; KEY_LEN];
    hk.expand(context.as_bytes(), &mut okm)
        .expect("16 bytes is a valid HKDF output length");
    SymKey::from_bytes(okm)
}

/// The MAC key that accompanies a session key.
pub fn mac_subkey(session: &SymKey) -> SymKey {
    derive_key(session, &FirmwareMeasurement::UNBOUND, "mac")
}

/// 32-byte expansion used for signing-key seeds inside the device.
pub(crate) fn derive_seed(root: &SymKey, measurement: &FirmwareMeasurement, context: &str) -> [u8; 32] {
    let hk = Hkdf::<Sha256>::new(Some(measurement.as_bytes()), root.as_bytes());
    let mut okm = [0u8; 32];
    hk.expand(context.as_bytes(), &mut okm)
        .expect("32 bytes is a valid HKDF output length");
    okm
}
