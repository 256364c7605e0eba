//! Manufacturing, measured boot and the key store.
//!
//! The vendor burns a root key into each device and certifies the identity
//! key derived from it. At boot the device measures the firmware, checks
//! the vendor's signature and derives an alias key bound to the
//! measurement; the root identity certifies the alias. Session keys from
//! the key exchange live only here.

use std::collections::BTreeMap;

use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::{
    derive_seed, sign, verify, FirmwareMeasurement, NonceCounter, Signature, SigningKey, SymKey, VendorSignature,
    VerifyingKey,
};
use crate::layout::PAGE_SIZE;
use crate::parties::messages::Role;

pub fn firmware_message(image: &[u8]) -> Vec<u8> {
    [b"firmware".as_slice(), image].concat()
}

pub fn device_cert_message(root: &VerifyingKey) -> Vec<u8> {
    [b"device-cert".as_slice(), root.as_bytes()].concat()
}

pub fn alias_cert_message(alias: &VerifyingKey, m: &FirmwareMeasurement) -> Vec<u8> {
    [b"alias".as_slice(), alias.as_bytes(), m.as_bytes()].concat()
}

pub fn provider_cert_message(role: Role, key: &VerifyingKey) -> Vec<u8> {
    [b"provider-cert".as_slice(), &[role as u8], key.as_bytes()].concat()
}

/// A deterministic stand-in for a firmware image of the given version.
pub fn reference_firmware(version: &str) -> Vec<u8> {
    let mut image = b"ascendsim-npu-firmware\0".to_vec();
    image.extend_from_slice(version.as_bytes());
    image
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceConfig {
    pub hbm_size: u64,
    /// Makes the SMMU refuse the lock-phase unmap.
    pub inject_unmap_failure: bool,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self { hbm_size: 16 << 20, inject_unmap_failure: false }
    }
}

impl DeviceConfig {
    pub fn pages(&self) -> u64 {
        self.hbm_size / PAGE_SIZE
    }
}

/// Public identity chain produced by a successful boot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeviceIdentity {
    pub measurement: FirmwareMeasurement,
    pub alias_key: VerifyingKey,
    pub alias_cert: Signature,
    pub root_key: VerifyingKey,
    pub device_cert: Signature,
}

/// Hardware manufacturer and PKI root.
pub struct Vendor {
    key: SigningKey,
}

impl Vendor {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        Self { key: SigningKey::generate(rng) }
    }

    pub fn public(&self) -> VerifyingKey {
        self.key.verifying_key()
    }

    pub fn sign_firmware(&self, image: &[u8]) -> VendorSignature {
        sign(&self.key, &firmware_message(image))
    }

    pub fn certify_provider(&self, role: Role, key: &VerifyingKey) -> Signature {
        sign(&self.key, &provider_cert_message(role, key))
    }

    /// Burns a fresh root key and certifies the identity derived from it.
    pub fn manufacture<R: RngCore + CryptoRng>(&self, rng: &mut R, config: DeviceConfig) -> super::NpuDevice {
        let root = SymKey::generate(rng);
        let identity = SigningKey::from_seed(derive_seed(&root, &FirmwareMeasurement::UNBOUND, "identity"));
        let device_cert = sign(&self.key, &device_cert_message(&identity.verifying_key()));
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        let hsm = Hsm {
            root,
            identity,
            device_cert,
            vendor: self.public(),
            alias: None,
            sessions: BTreeMap::new(),
            output_nonces: NonceCounter::new(),
            rng: ChaCha20Rng::from_seed(seed),
        };
        super::NpuDevice::from_parts(hsm, config)
    }
}

pub(crate) struct Alias {
    pub key: SigningKey,
    pub cert: Signature,
    pub measurement: FirmwareMeasurement,
}

pub(crate) struct Hsm {
    root: SymKey,
    identity: SigningKey,
    device_cert: Signature,
    pub vendor: VerifyingKey,
    pub alias: Option<Alias>,
    pub sessions: BTreeMap<Role, SymKey>,
    pub output_nonces: NonceCounter,
    pub rng: ChaCha20Rng,
}

impl Hsm {
    /// Verifies the vendor signature and derives the measurement-bound alias.
    pub fn boot(&mut self, image: &[u8], signature: &VendorSignature) -> Option<DeviceIdentity> {
        if !verify(&self.vendor, &firmware_message(image), signature) {
            return None;
        }
        let measurement = FirmwareMeasurement::of_image(image);
        let key = SigningKey::from_seed(derive_seed(&self.root, &measurement, "alias"));
        let cert = sign(&self.identity, &alias_cert_message(&key.verifying_key(), &measurement));
        self.alias = Some(Alias { key, cert, measurement });
        self.identity()
    }

    pub fn identity(&self) -> Option<DeviceIdentity> {
        self.alias.as_ref().map(|a| DeviceIdentity {
            measurement: a.measurement,
            alias_key: a.key.verifying_key(),
            alias_cert: a.cert,
            root_key: self.identity.verifying_key(),
            device_cert: self.device_cert,
        })
    }

    pub fn session(&self, role: Role) -> Option<&SymKey> {
        self.sessions.get(&role)
    }

    /// Raw key bytes held by the HSM, for confinement audits.
    pub fn key_material(&self) -> Vec<Vec<u8>> {
        let mut out = vec![self.root.as_bytes().to_vec()];
        out.extend(self.sessions.values().map(|k| k.as_bytes().to_vec()));
        out
    }
}
