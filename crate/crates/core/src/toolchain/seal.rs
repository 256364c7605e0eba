use std::collections::BTreeMap;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::format::{ModelFile, ModelImage, SealedModel, NAME_LEN};
use crate::crypto::{mac, mac_subkey, AuthFailure, AuthTag, BlobKind, NonceCounter, SealedBlob, SymKey};

/// Commitment over the ordered plaintext operator binaries, under the model
/// key: every binary is prefixed with its 8-byte big-endian length.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryChain(pub AuthTag);

pub fn chain_message<'a>(binaries: impl IntoIterator<Item = &'a [u8]>) -> Vec<u8> {
    let mut msg = Vec::new();
    for b in binaries {
        msg.extend_from_slice(&(b.len() as u64).to_be_bytes());
        msg.extend_from_slice(b);
    }
    msg
}

pub fn chain_commitment<'a>(model_key: &SymKey, binaries: impl IntoIterator<Item = &'a [u8]>) -> BinaryChain {
    BinaryChain(mac(&mac_subkey(model_key), &chain_message(binaries)))
}

/// Provider-side record of which random name replaced which layer name.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NameMap(pub BTreeMap<[u8; NAME_LEN], String>);

/// Replaces every layer name with 32 random bytes.
pub fn mask_names<R: RngCore>(model: &ModelFile, rng: &mut R) -> (ModelFile, NameMap) {
    let mut out = model.clone();
    let mut map = NameMap::default();
    for layer in &mut out.0.layers {
        let original = layer.display_name();
        rng.fill_bytes(&mut layer.name);
        map.0.insert(layer.name, original);
    }
    (out, map)
}

/// Seals weights, policy and each binary independently under `model_key` and
/// computes the binary chain over the plaintext binaries.
pub fn seal(model: &ModelFile, model_key: &SymKey, nonces: &mut NonceCounter) -> (SealedModel, BinaryChain) {
    let image: &ModelImage = model;
    let weights = SealedBlob::seal(model_key, nonces.next(BlobKind::Weights), BlobKind::Weights, 0, &image.weights);
    let policy = SealedBlob::seal(model_key, nonces.next(BlobKind::Policy), BlobKind::Policy, 0, &image.policy);
    let binaries = image
        .binaries
        .iter()
        .enumerate()
        .map(|(i, b)| SealedBlob::seal(model_key, nonces.next(BlobKind::Binary), BlobKind::Binary, i as u32, b).to_bytes())
        .collect();
    let chain = chain_commitment(model_key, image.binaries.iter().map(Vec::as_slice));
    let sealed = ModelImage {
        sealed: true,
        weights: weights.to_bytes(),
        policy: policy.to_bytes(),
        binaries,
        ..image.clone()
    };
    (SealedModel(sealed), chain)
}

/// Inverse of [`seal`]; the device has its own decryption path.
pub fn unseal_for_test(sealed: &SealedModel, model_key: &SymKey) -> Result<ModelFile, AuthFailure> {
    let open = |bytes: &[u8], kind: BlobKind, index: u32| {
        SealedBlob::from_bytes(bytes).map_err(|_| AuthFailure)?.open(model_key, kind, index)
    };
    let weights = open(&sealed.weights, BlobKind::Weights, 0)?;
    let policy = open(&sealed.policy, BlobKind::Policy, 0)?;
    let binaries = sealed
        .binaries
        .iter()
        .enumerate()
        .map(|(i, b)| open(b, BlobKind::Binary, i as u32))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ModelFile(ModelImage { sealed: false, weights, policy, binaries, ..(**sealed).clone() }))
}
