//! Byte-exact model file layout. All integers are little-endian.
//!
//! ```text
//! offset  size  field
//!  0      4     magic "ACC1"
//!  4      2     version (1)
//!  6      2     flags (bit 0: blobs are sealed)
//!  8      4     layer count L
//! 12      4     binary count B
//! 16      4     tensor count T
//! 20      4     reserved (0)
//! 24      8     weights blob length
//! 32      8     policy blob length
//! 40      52·L  layer table {masked_name[32], binary_index u32, binary_offset u64, binary_len u64}
//!         8·B   sizes list (stored length of each binary)
//!         20·T  tensor table {id u32, region u8, 0, rows u16, cols u16, 0u16, offset u64}
//!         16·L  argument table {argc u32, tensor ids 3×u32}, destination first
//!         ...   weights blob, policy blob, binaries blob
//! ```
//!
//! In a sealed file every blob is `nonce ‖ ciphertext ‖ tag`, so each stored
//! length is the plaintext length plus 28.

use std::ops::Deref;

use thiserror::Error;

use super::graph::{Shape, TensorId};
use crate::crypto::SEAL_OVERHEAD;
use crate::layout::RegionKind;

pub const MODEL_MAGIC: &[u8; 4] = b"ACC1";
pub const MODEL_VERSION: u16 = 1;
pub const NAME_LEN: usize = 32;
pub const HEADER_LEN: usize = 40;
pub const LAYER_ENTRY_LEN: usize = 52;
pub const TENSOR_ENTRY_LEN: usize = 20;
pub const ARG_ENTRY_LEN: usize = 16;
pub const POLICY_LEN: usize = 8;
const FLAG_SEALED: u16 = 1;
const NO_BUDGET: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("unsupported model version {0}")]
    BadVersion(u16),
    #[error("model file truncated")]
    Truncated,
    #[error("{0} trailing bytes after the binaries blob")]
    TrailingBytes(usize),
    #[error("expected a {expected} model file")]
    WrongFlavor { expected: &'static str },
    #[error("layer {layer}: table entry disagrees with the sizes list")]
    SizeMismatch { layer: usize },
    #[error("layer {layer} references missing binary {index}")]
    BadBinaryIndex { layer: usize, index: u32 },
    #[error("unknown region code {0}")]
    BadRegion(u8),
    #[error("layer {layer}: argument count {argc} exceeds 3")]
    TooManyArgs { layer: usize, argc: u32 },
    #[error("sealed blob of {0} bytes is shorter than nonce and tag")]
    BlobTooShort(usize),
    #[error("policy blob must be {POLICY_LEN} bytes, found {0}")]
    BadPolicy(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerEntry {
    pub name: [u8; NAME_LEN],
    pub binary_index: u32,
}

impl LayerEntry {
    /// Readable name for unmasked files: bytes up to the first NUL.
    pub fn display_name(&self) -> String {
        let end = self.name.iter().position(|&b| b == 0).unwrap_or(NAME_LEN);
        String::from_utf8_lossy(&self.name[..end]).into_owned()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorPlacement {
    pub id: TensorId,
    pub region: RegionKind,
    pub shape: Shape,
    pub offset: u64,
}

impl TensorPlacement {
    pub fn end(&self) -> u64 {
        self.offset + self.shape.bytes()
    }
}

/// Inference budget carried in the (sealed) policy blob.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ModelPolicy {
    pub ppi_budget: Option<u32>,
}

impl ModelPolicy {
    pub fn to_bytes(&self) -> [u8; POLICY_LEN] {
        let mut out = [0u8; POLICY_LEN];
        out[..4].copy_from_slice(&self.ppi_budget.unwrap_or(NO_BUDGET).to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        if bytes.len() != POLICY_LEN {
            return Err(FormatError::BadPolicy(bytes.len()));
        }
        let raw = u32::from_le_bytes(bytes[..4].try_into().unwrap());
        Ok(Self { ppi_budget: (raw != NO_BUDGET).then_some(raw) })
    }
}

/// Shared representation of plaintext and sealed model files.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelImage {
    pub sealed: bool,
    pub layers: Vec<LayerEntry>,
    pub tensors: Vec<TensorPlacement>,
    /// Per layer: destination tensor, then sources.
    pub layer_args: Vec<Vec<TensorId>>,
    pub weights: Vec<u8>,
    pub policy: Vec<u8>,
    pub binaries: Vec<Vec<u8>>,
}

impl ModelImage {
    /// Offset of each binary within the binaries blob.
    pub fn binary_offsets(&self) -> Vec<u64> {
        let mut at = 0u64;
        self.binaries
            .iter()
            .map(|b| {
                let o = at;
                at += b.len() as u64;
                o
            })
            .collect()
    }

    pub fn sizes(&self) -> Vec<u64> {
        self.binaries.iter().map(|b| b.len() as u64).collect()
    }

    pub fn tensor(&self, id: TensorId) -> Option<&TensorPlacement> {
        self.tensors.iter().find(|t| t.id == id)
    }

    /// Bytes of plaintext tensor data placed in `region`.
    pub fn tensor_extent(&self, region: RegionKind) -> u64 {
        self.tensors.iter().filter(|t| t.region == region).map(|t| t.end()).max().unwrap_or(0)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(if self.sealed { FLAG_SEALED } else { 0 }).to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.binaries.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        out.extend_from_slice(&(self.weights.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.policy.len() as u64).to_le_bytes());
        let offsets = self.binary_offsets();
        for layer in &self.layers {
            let i = layer.binary_index as usize;
            out.extend_from_slice(&layer.name);
            out.extend_from_slice(&layer.binary_index.to_le_bytes());
            out.extend_from_slice(&offsets.get(i).copied().unwrap_or(0).to_le_bytes());
            out.extend_from_slice(&self.binaries.get(i).map_or(0, |b| b.len() as u64).to_le_bytes());
        }
        for size in self.sizes() {
            out.extend_from_slice(&size.to_le_bytes());
        }
        for t in &self.tensors {
            out.extend_from_slice(&t.id.to_le_bytes());
            out.push(t.region as u8);
            out.push(0);
            out.extend_from_slice(&t.shape.0.to_le_bytes());
            out.extend_from_slice(&t.shape.1.to_le_bytes());
            out.extend_from_slice(&0u16.to_le_bytes());
            out.extend_from_slice(&t.offset.to_le_bytes());
        }
        for args in &self.layer_args {
            out.extend_from_slice(&(args.len() as u32).to_le_bytes());
            for slot in 0..3 {
                out.extend_from_slice(&args.get(slot).copied().unwrap_or(0).to_le_bytes());
            }
        }
        out.extend_from_slice(&self.weights);
        out.extend_from_slice(&self.policy);
        for b in &self.binaries {
            out.extend_from_slice(b);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(4)? != MODEL_MAGIC {
            return Err(FormatError::BadMagic);
        }
        let version = r.u16()?;
        if version != MODEL_VERSION {
            return Err(FormatError::BadVersion(version));
        }
        let sealed = r.u16()? & FLAG_SEALED != 0;
        let layer_count = r.u32()? as usize;
        let binary_count = r.u32()? as usize;
        let tensor_count = r.u32()? as usize;
        let _reserved = r.u32()?;
        let weights_len = r.u64()? as usize;
        let policy_len = r.u64()? as usize;

        let mut raw_layers = Vec::with_capacity(layer_count.min(4096));
        for _ in 0..layer_count {
            let name: [u8; NAME_LEN] = r.take(NAME_LEN)?.try_into().unwrap();
            let binary_index = r.u32()?;
            let offset = r.u64()?;
            let len = r.u64()?;
            raw_layers.push((LayerEntry { name, binary_index }, offset, len));
        }
        let mut sizes = Vec::with_capacity(binary_count.min(4096));
        for _ in 0..binary_count {
            sizes.push(r.u64()?);
        }
        let mut tensors = Vec::with_capacity(tensor_count.min(4096));
        for _ in 0..tensor_count {
            let id = r.u32()?;
            let code = r.u8()?;
            let region = RegionKind::from_u8(code).ok_or(FormatError::BadRegion(code))?;
            r.u8()?;
            let shape = Shape(r.u16()?, r.u16()?);
            r.u16()?;
            let offset = r.u64()?;
            tensors.push(TensorPlacement { id, region, shape, offset });
        }
        let mut layer_args = Vec::with_capacity(layer_count.min(4096));
        for layer in 0..layer_count {
            let argc = r.u32()?;
            if argc > 3 {
                return Err(FormatError::TooManyArgs { layer, argc });
            }
            let ids = [r.u32()?, r.u32()?, r.u32()?];
            layer_args.push(ids[..argc as usize].to_vec());
        }
        let weights = r.take(weights_len)?.to_vec();
        let policy = r.take(policy_len)?.to_vec();
        let mut binaries = Vec::with_capacity(sizes.len());
        for &size in &sizes {
            binaries.push(r.take(usize::try_from(size).map_err(|_| FormatError::Truncated)?)?.to_vec());
        }
        if r.at != bytes.len() {
            return Err(FormatError::TrailingBytes(bytes.len() - r.at));
        }

        let mut offsets = Vec::with_capacity(sizes.len());
        let mut at = 0u64;
        for &s in &sizes {
            offsets.push(at);
            at += s;
        }
        let mut layers = Vec::with_capacity(raw_layers.len());
        for (i, (entry, offset, len)) in raw_layers.into_iter().enumerate() {
            let idx = entry.binary_index as usize;
            if idx >= sizes.len() {
                return Err(FormatError::BadBinaryIndex { layer: i, index: entry.binary_index });
            }
            if sizes[idx] != len || offsets[idx] != offset {
                return Err(FormatError::SizeMismatch { layer: i });
            }
            layers.push(entry);
        }
        if sealed {
            for blob in std::iter::once(&weights).chain(std::iter::once(&policy)).chain(&binaries) {
                if blob.len() < SEAL_OVERHEAD {
                    return Err(FormatError::BlobTooShort(blob.len()));
                }
            }
        }
        Ok(Self { sealed, layers, tensors, layer_args, weights, policy, binaries })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.at.checked_add(n).ok_or(FormatError::Truncated)?;
        let out = self.bytes.get(self.at..end).ok_or(FormatError::Truncated)?;
        self.at = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// A plaintext (compiled, possibly name-masked) model file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelFile(pub(crate) ModelImage);

/// A model file whose weights, policy and binaries are sealed under the
/// model provider's key. The layer, tensor and argument tables stay plaintext.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SealedModel(pub(crate) ModelImage);

impl ModelFile {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let image = ModelImage::from_bytes(bytes)?;
        if image.sealed {
            return Err(FormatError::WrongFlavor { expected: "plaintext" });
        }
        Ok(Self(image))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.0.to_bytes()
    }

    pub fn policy(&self) -> ModelPolicy {
        ModelPolicy::from_bytes(&self.0.policy).unwrap_or_default()
    }

    pub fn set_policy(&mut self, policy: ModelPolicy) {
        self.0.policy = policy.to_bytes().to_vec();
    }
}

impl SealedModel {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let image = ModelImage::from_bytes(bytes)?;
        if !image.sealed {
            return Err(FormatError::WrongFlavor { expected: "sealed" });
        }
        Ok(Self(image))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.0.to_bytes()
    }

    /// Mutable access for tamper experiments.
    pub fn image_mut(&mut self) -> &mut ModelImage {
        &mut self.0
    }
}

impl Deref for ModelFile {
    type Target = ModelImage;
    fn deref(&self) -> &ModelImage {
        &self.0
    }
}

impl Deref for SealedModel {
    type Target = ModelImage;
    fn deref(&self) -> &ModelImage {
        &self.0
    }
}
