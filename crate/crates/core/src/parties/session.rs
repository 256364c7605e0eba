//! Provider side of the authenticated key exchange.

use rand::{CryptoRng, RngCore};
use serde::Serialize;
use thiserror::Error;

use super::messages::{KexInit, KexReply, Message, Role};
use crate::crypto::{
    derive_key, dh_derive, dh_keygen, sign, verify, FirmwareMeasurement, KeyPair, Signature, SigningKey, SymKey,
    VerifyingKey,
};
use crate::device::{alias_cert_message, device_cert_message};

/// A provider's long-term key and the PKI certificate over it.
pub struct ProviderIdentity {
    pub key: SigningKey,
    pub cert: Signature,
}

/// What a provider trusts: the vendor root and the firmware it accepts.
#[derive(Clone, Debug, Serialize)]
pub struct TrustAnchor {
    pub vendor: VerifyingKey,
    pub allowed: Vec<FirmwareMeasurement>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error("malformed key-exchange reply")]
    Malformed,
    #[error("device identity signature does not verify")]
    BadSignature,
    #[error("device runs firmware {0:?}, which is not on the allow-list")]
    MeasurementMismatch(FirmwareMeasurement),
    #[error("device sent a low-order point")]
    InvalidGroupElement,
    #[error("no key exchange in progress")]
    NotStarted,
    #[error("no session established")]
    NoSession,
}

/// An established session.
pub struct ProviderSession {
    pub role: Role,
    pub key: SymKey,
    pub measurement: FirmwareMeasurement,
}

pub(crate) struct Handshake {
    role: Role,
    pair: KeyPair,
}

impl Handshake {
    pub fn start<R: RngCore + CryptoRng>(role: Role, id: &ProviderIdentity, rng: &mut R) -> (Self, Vec<u8>) {
        let pair = dh_keygen(rng);
        let init = KexInit {
            role,
            ephemeral: pair.public(),
            provider_key: id.key.verifying_key(),
            provider_cert: id.cert,
            init_sig: sign(&id.key, &KexInit::signed_message(role, &pair.public())),
        };
        (Self { role, pair }, Message::KexInit(init).encode())
    }

    pub fn finish(self, anchor: &TrustAnchor, reply: &[u8]) -> Result<ProviderSession, SessionError> {
        let Ok(Message::KexReply(r)) = Message::decode(reply) else {
            return Err(SessionError::Malformed);
        };
        let chain_ok = verify(&anchor.vendor, &device_cert_message(&r.root_key), &r.device_cert)
            && verify(&r.root_key, &alias_cert_message(&r.alias_key, &r.measurement), &r.alias_cert);
        let transcript = KexReply::transcript(self.role, &self.pair.public(), &r.ephemeral, &r.measurement);
        if !chain_ok || !verify(&r.alias_key, &transcript, &r.transcript_sig) {
            return Err(SessionError::BadSignature);
        }
        if !anchor.allowed.contains(&r.measurement) {
            return Err(SessionError::MeasurementMismatch(r.measurement));
        }
        let shared = dh_derive(&self.pair, &r.ephemeral).map_err(|_| SessionError::InvalidGroupElement)?;
        Ok(ProviderSession {
            role: self.role,
            key: derive_key(&shared, &r.measurement, self.role.key_context()),
            measurement: r.measurement,
        })
    }
}
