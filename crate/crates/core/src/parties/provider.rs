//! The two provider endpoints.

use rand::{CryptoRng, RngCore};
use serde::Serialize;
use thiserror::Error;

use super::commit::{chain_binding, pc_commitment};
use super::messages::Role;
use super::ppi::{grant_tag, input_tag};
use super::session::{Handshake, ProviderIdentity, ProviderSession, SessionError, TrustAnchor};
use crate::crypto::{AuthFailure, AuthTag, BlobKind, FirmwareMeasurement, NonceCounter, SealedBlob};
use crate::toolchain::{mask_names, seal, BinaryChain, ModelFile, ModelPolicy, NameMap, SealedModel};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PpiError {
    #[error("inference budget exhausted")]
    BudgetExhausted,
    #[error("no session established")]
    NoSession,
}

/// State shared by both endpoints.
struct Endpoint {
    role: Role,
    identity: ProviderIdentity,
    anchor: TrustAnchor,
    pending: Option<Handshake>,
    session: Option<ProviderSession>,
}

impl Endpoint {
    fn begin<R: RngCore + CryptoRng>(&mut self, rng: &mut R) -> Vec<u8> {
        let (hs, msg) = Handshake::start(self.role, &self.identity, rng);
        self.pending = Some(hs);
        msg
    }

    fn finish(&mut self, reply: &[u8]) -> Result<FirmwareMeasurement, SessionError> {
        let hs = self.pending.take().ok_or(SessionError::NotStarted)?;
        let session = hs.finish(&self.anchor, reply)?;
        let m = session.measurement;
        self.session = Some(session);
        Ok(m)
    }

    fn session(&self) -> Result<&ProviderSession, SessionError> {
        self.session.as_ref().ok_or(SessionError::NoSession)
    }
}

/// Serializable view of a provider, including its own session key.
#[derive(Clone, Debug, Serialize)]
pub struct ProviderSnapshot {
    pub role: Role,
    pub anchor: TrustAnchor,
    pub measurement: Option<FirmwareMeasurement>,
    pub session_key: Option<String>,
    pub budget_remaining: Option<u32>,
    pub transcript: Vec<String>,
}

pub struct ModelProvider {
    ep: Endpoint,
    model: ModelFile,
    names: Option<NameMap>,
    nonces: NonceCounter,
    budget_remaining: Option<u32>,
    /// Every message this provider received, hex-encoded.
    transcript: Vec<String>,
}

impl ModelProvider {
    pub fn new(model: ModelFile, budget: Option<u32>, identity: ProviderIdentity, anchor: TrustAnchor) -> Self {
        let mut model = model;
        model.set_policy(ModelPolicy { ppi_budget: budget });
        Self {
            ep: Endpoint { role: Role::Model, identity, anchor, pending: None, session: None },
            model,
            names: None,
            nonces: NonceCounter::new(),
            budget_remaining: budget,
            transcript: Vec::new(),
        }
    }

    pub fn begin_session<R: RngCore + CryptoRng>(&mut self, rng: &mut R) -> Vec<u8> {
        self.ep.begin(rng)
    }

    pub fn finish_session(&mut self, reply: &[u8]) -> Result<FirmwareMeasurement, SessionError> {
        self.transcript.push(hex::encode(reply));
        self.ep.finish(reply)
    }

    pub fn has_session(&self) -> bool {
        self.ep.session.is_some()
    }

    /// Masks layer names and seals the model under the session key.
    pub fn seal_model<R: RngCore>(&mut self, rng: &mut R) -> Result<(SealedModel, BinaryChain), SessionError> {
        let key = self.ep.session()?.key.clone();
        let (masked, names) = mask_names(&self.model, rng);
        self.names = Some(names);
        Ok(seal(&masked, &key, &mut self.nonces))
    }

    pub fn name_map(&self) -> Option<&NameMap> {
        self.names.as_ref()
    }

    /// Authorizes one inference for the input behind `tag1`.
    pub fn ppi_register(&mut self, tag1: &AuthTag) -> Result<AuthTag, PpiError> {
        self.transcript.push(hex::encode(tag1.as_bytes()));
        let key = &self.ep.session().map_err(|_| PpiError::NoSession)?.key;
        if let Some(left) = &mut self.budget_remaining {
            if *left == 0 {
                return Err(PpiError::BudgetExhausted);
            }
            *left -= 1;
        }
        Ok(grant_tag(key, tag1))
    }

    pub fn budget_remaining(&self) -> Option<u32> {
        self.budget_remaining
    }

    /// Raw bytes of everything this provider has been sent.
    pub fn observed_bytes(&self) -> Vec<u8> {
        self.transcript.iter().flat_map(|h| hex::decode(h).unwrap_or_default()).collect()
    }

    pub fn snapshot(&self) -> ProviderSnapshot {
        snapshot(&self.ep, self.budget_remaining, &self.transcript)
    }
}

pub struct DataProvider {
    ep: Endpoint,
    nonces: NonceCounter,
    transcript: Vec<String>,
}

impl DataProvider {
    pub fn new(identity: ProviderIdentity, anchor: TrustAnchor) -> Self {
        Self {
            ep: Endpoint { role: Role::Data, identity, anchor, pending: None, session: None },
            nonces: NonceCounter::new(),
            transcript: Vec::new(),
        }
    }

    pub fn begin_session<R: RngCore + CryptoRng>(&mut self, rng: &mut R) -> Vec<u8> {
        self.ep.begin(rng)
    }

    pub fn finish_session(&mut self, reply: &[u8]) -> Result<FirmwareMeasurement, SessionError> {
        self.transcript.push(hex::encode(reply));
        self.ep.finish(reply)
    }

    pub fn has_session(&self) -> bool {
        self.ep.session.is_some()
    }

    /// `(P₁, P₂)` over the host's PC list and the model provider's chain.
    pub fn sign_pc_commitments(&mut self, pcs: &[u64], chain: &BinaryChain) -> Result<(AuthTag, AuthTag), SessionError> {
        let key = &self.ep.session()?.key;
        Ok((pc_commitment(key, pcs), chain_binding(key, chain)))
    }

    pub fn seal_input(&mut self, round: u32, plaintext: &[u8]) -> Result<Vec<u8>, SessionError> {
        let key = &self.ep.session()?.key;
        let nonce = self.nonces.next(BlobKind::Input);
        Ok(SealedBlob::seal(key, nonce, BlobKind::Input, round, plaintext).to_bytes())
    }

    pub fn input_tag(&self, plaintext: &[u8]) -> Result<AuthTag, SessionError> {
        Ok(input_tag(&self.ep.session()?.key, plaintext))
    }

    pub fn open_output(&mut self, round: u32, blob: &[u8]) -> Result<Vec<u8>, AuthFailure> {
        self.transcript.push(hex::encode(blob));
        let key = &self.ep.session().map_err(|_| AuthFailure)?.key;
        SealedBlob::from_bytes(blob).map_err(|_| AuthFailure)?.open(key, BlobKind::Output, round)
    }

    pub fn snapshot(&self) -> ProviderSnapshot {
        snapshot(&self.ep, None, &self.transcript)
    }
}

fn snapshot(ep: &Endpoint, budget_remaining: Option<u32>, transcript: &[String]) -> ProviderSnapshot {
    ProviderSnapshot {
        role: ep.role,
        anchor: ep.anchor.clone(),
        measurement: ep.session.as_ref().map(|s| s.measurement),
        session_key: ep.session.as_ref().map(|s| hex::encode(s.key.as_bytes())),
        budget_remaining,
        transcript: transcript.to_vec(),
    }
}
