//! Wire records exchanged between the providers, the host and the device.
//!
//! Frame: `msg_type u8 ‖ body_len u32 LE ‖ body`. Bodies are fixed-width
//! little-endian fields; variable-length payloads carry their own u32
//! length prefix.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{AuthTag, DhPublic, FirmwareMeasurement, Signature, VerifyingKey, TAG_LEN};
use crate::toolchain::BinaryChain;

/// Which provider a session key belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
#[repr(u8)]
pub enum Role {
    Model = 1,
    Data = 2,
}

impl Role {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(Role::Model),
            2 => Some(Role::Data),
            _ => None,
        }
    }

    /// HKDF label of the session key.
    pub fn key_context(self) -> &'static str {
        match self {
            Role::Model => "model",
            Role::Data => "data",
        }
    }
}

/// Provider → device. `provider_cert` is the PKI signature over the
/// provider's identity key; `init_sig` signs role and ephemeral key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KexInit {
    pub role: Role,
    pub ephemeral: DhPublic,
    pub provider_key: VerifyingKey,
    pub provider_cert: Signature,
    pub init_sig: Signature,
}

impl KexInit {
    pub fn signed_message(role: Role, ephemeral: &DhPublic) -> Vec<u8> {
        let mut m = b"kex-init".to_vec();
        m.push(role as u8);
        m.extend_from_slice(ephemeral.as_bytes());
        m
    }
}

/// Device → provider: ephemeral key plus the full identity chain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KexReply {
    pub ephemeral: DhPublic,
    pub measurement: FirmwareMeasurement,
    pub alias_key: VerifyingKey,
    /// Root identity over alias key and measurement.
    pub alias_cert: Signature,
    pub root_key: VerifyingKey,
    /// Vendor over the root identity key.
    pub device_cert: Signature,
    /// Alias key over the whole exchange.
    pub transcript_sig: Signature,
}

impl KexReply {
    pub fn transcript(role: Role, provider_eph: &DhPublic, device_eph: &DhPublic, m: &FirmwareMeasurement) -> Vec<u8> {
        let mut t = b"kex-reply".to_vec();
        t.push(role as u8);
        t.extend_from_slice(provider_eph.as_bytes());
        t.extend_from_slice(device_eph.as_bytes());
        t.extend_from_slice(m.as_bytes());
        t
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    KexInit(KexInit),
    KexReply(KexReply),
    SealedModel(Vec<u8>),
    Chain(BinaryChain),
    PcList(Vec<u64>),
    PcCommitments { p1: AuthTag, p2: AuthTag },
    SealedInput { round: u32, blob: Vec<u8> },
    PpiRequest { round: u32, tag1: AuthTag },
    PpiGrant { round: u32, t1: AuthTag },
    SealedOutput { round: u32, blob: Vec<u8> },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MessageError {
    #[error("message truncated")]
    Truncated,
    #[error("unknown message type {0:#04x}")]
    UnknownType(u8),
    #[error("declared body length {declared} but {actual} bytes follow")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("unknown role {0}")]
    BadRole(u8),
    #[error("trailing bytes in message body")]
    Trailing,
    #[error("expected a different message type")]
    Unexpected,
}

const HEADER: usize = 5;

impl Message {
    pub fn type_byte(&self) -> u8 {
        match self {
            Message::KexInit(_) => 0x01,
            Message::KexReply(_) => 0x02,
            Message::SealedModel(_) => 0x03,
            Message::Chain(_) => 0x04,
            Message::PcList(_) => 0x05,
            Message::PcCommitments { .. } => 0x06,
            Message::SealedInput { .. } => 0x07,
            Message::PpiRequest { .. } => 0x08,
            Message::PpiGrant { .. } => 0x09,
            Message::SealedOutput { .. } => 0x0a,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut body = Vec::new();
        match self {
            Message::KexInit(k) => {
                body.push(k.role as u8);
                body.extend_from_slice(k.ephemeral.as_bytes());
                body.extend_from_slice(k.provider_key.as_bytes());
                body.extend_from_slice(k.provider_cert.as_bytes());
                body.extend_from_slice(k.init_sig.as_bytes());
            }
            Message::KexReply(r) => {
                body.extend_from_slice(r.ephemeral.as_bytes());
                body.extend_from_slice(r.measurement.as_bytes());
                body.extend_from_slice(r.alias_key.as_bytes());
                body.extend_from_slice(r.alias_cert.as_bytes());
                body.extend_from_slice(r.root_key.as_bytes());
                body.extend_from_slice(r.device_cert.as_bytes());
                body.extend_from_slice(r.transcript_sig.as_bytes());
            }
            Message::SealedModel(bytes) => put_var(&mut body, bytes),
            Message::Chain(c) => body.extend_from_slice(c.0.as_bytes()),
            Message::PcList(pcs) => {
                body.extend_from_slice(&(pcs.len() as u32).to_le_bytes());
                for pc in pcs {
                    body.extend_from_slice(&pc.to_le_bytes());
                }
            }
            Message::PcCommitments { p1, p2 } => {
                body.extend_from_slice(p1.as_bytes());
                body.extend_from_slice(p2.as_bytes());
            }
            Message::SealedInput { round, blob } | Message::SealedOutput { round, blob } => {
                body.extend_from_slice(&round.to_le_bytes());
                put_var(&mut body, blob);
            }
            Message::PpiRequest { round, tag1: tag } | Message::PpiGrant { round, t1: tag } => {
                body.extend_from_slice(&round.to_le_bytes());
                body.extend_from_slice(tag.as_bytes());
            }
        }
        let mut out = Vec::with_capacity(HEADER + body.len());
        out.push(self.type_byte());
        out.extend_from_slice(&(body.len() as u32).to_le_bytes());
        out.extend_from_slice(&body);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, MessageError> {
        if bytes.len() < HEADER {
            return Err(MessageError::Truncated);
        }
        let declared = u32::from_le_bytes(bytes[1..5].try_into().unwrap()) as usize;
        let body = &bytes[HEADER..];
        if body.len() != declared {
            return Err(MessageError::LengthMismatch { declared, actual: body.len() });
        }
        let mut r = Reader { buf: body, pos: 0 };
        let msg = match bytes[0] {
            0x01 => {
                let raw = r.u8()?;
                Message::KexInit(KexInit {
                    role: Role::from_u8(raw).ok_or(MessageError::BadRole(raw))?,
                    ephemeral: DhPublic::from_bytes(r.array()?),
                    provider_key: VerifyingKey::from_bytes(r.array()?),
                    provider_cert: Signature::from_bytes(r.array()?),
                    init_sig: Signature::from_bytes(r.array()?),
                })
            }
            0x02 => Message::KexReply(KexReply {
                ephemeral: DhPublic::from_bytes(r.array()?),
                measurement: FirmwareMeasurement::from_bytes(r.array()?),
                alias_key: VerifyingKey::from_bytes(r.array()?),
                alias_cert: Signature::from_bytes(r.array()?),
                root_key: VerifyingKey::from_bytes(r.array()?),
                device_cert: Signature::from_bytes(r.array()?),
                transcript_sig: Signature::from_bytes(r.array()?),
            }),
            0x03 => Message::SealedModel(r.var()?),
            0x04 => Message::Chain(BinaryChain(r.tag()?)),
            0x05 => {
                let n = r.u32()? as usize;
                let mut pcs = Vec::with_capacity(n.min(body.len() / 8));
                for _ in 0..n {
                    pcs.push(r.u64()?);
                }
                Message::PcList(pcs)
            }
            0x06 => Message::PcCommitments { p1: r.tag()?, p2: r.tag()? },
            0x07 => Message::SealedInput { round: r.u32()?, blob: r.var()? },
            0x08 => Message::PpiRequest { round: r.u32()?, tag1: r.tag()? },
            0x09 => Message::PpiGrant { round: r.u32()?, t1: r.tag()? },
            0x0a => Message::SealedOutput { round: r.u32()?, blob: r.var()? },
            other => return Err(MessageError::UnknownType(other)),
        };
        if r.pos != body.len() {
            return Err(MessageError::Trailing);
        }
        Ok(msg)
    }
}

fn put_var(body: &mut Vec<u8>, bytes: &[u8]) {
    body.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    body.extend_from_slice(bytes);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], MessageError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(MessageError::Truncated)?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], MessageError> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn u8(&mut self) -> Result<u8, MessageError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, MessageError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, MessageError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn tag(&mut self) -> Result<AuthTag, MessageError> {
        Ok(AuthTag::from_bytes(self.array::<TAG_LEN>()?))
    }

    fn var(&mut self) -> Result<Vec<u8>, MessageError> {
        let n = self.u32()? as usize;
        Ok(self.take(n)?.to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pc_commitments_layout() {
        let msg = Message::PcCommitments { p1: AuthTag::from_bytes([0xaa; 16]), p2: AuthTag::from_bytes([0xbb; 16]) };
        let mut expected = vec![0x06, 32, 0, 0, 0];
        expected.extend([0xaa; 16]);
        expected.extend([0xbb; 16]);
        assert_eq!(msg.encode(), expected);
        assert_eq!(Message::decode(&expected).unwrap(), msg);
    }

    #[test]
    fn pc_list_layout() {
        let msg = Message::PcList(vec![0x10, 0x20]);
        let expected = [
            0x05, 20, 0, 0, 0, 2, 0, 0, 0, 0x10, 0, 0, 0, 0, 0, 0, 0, 0x20, 0, 0, 0, 0, 0, 0, 0,
        ];
        assert_eq!(msg.encode(), expected);
        assert_eq!(Message::decode(&expected).unwrap(), msg);
    }

    #[test]
    fn sealed_input_layout() {
        let msg = Message::SealedInput { round: 3, blob: vec![9, 8, 7] };
        assert_eq!(msg.encode(), [0x07, 11, 0, 0, 0, 3, 0, 0, 0, 3, 0, 0, 0, 9, 8, 7]);
    }

    #[test]
    fn kex_init_is_225_byte_body() {
        let msg = Message::KexInit(KexInit {
            role: Role::Data,
            ephemeral: DhPublic::from_bytes([1; 32]),
            provider_key: VerifyingKey::from_bytes([2; 32]),
            provider_cert: Signature::from_bytes([3; 64]),
            init_sig: Signature::from_bytes([4; 64]),
        });
        let bytes = msg.encode();
        assert_eq!(bytes.len(), 5 + 1 + 32 + 32 + 64 + 64);
        assert_eq!(bytes[5], 2);
        assert_eq!(Message::decode(&bytes).unwrap(), msg);
    }

    #[test]
    fn rejects_malformed() {
        assert_eq!(Message::decode(&[0x06, 1, 0]), Err(MessageError::Truncated));
        assert_eq!(Message::decode(&[0x06, 1, 0, 0, 0, 0]), Err(MessageError::Truncated));
        assert_eq!(Message::decode(&[0x7f, 0, 0, 0, 0]), Err(MessageError::UnknownType(0x7f)));
        assert_eq!(
            Message::decode(&[0x06, 2, 0, 0, 0, 0]),
            Err(MessageError::LengthMismatch { declared: 2, actual: 1 })
        );
        let mut ok = Message::PpiGrant { round: 1, t1: AuthTag::from_bytes([0; 16]) }.encode();
        ok.push(0);
        ok[1] += 1;
        assert_eq!(Message::decode(&ok), Err(MessageError::Trailing));
        let mut bad_role = Message::KexInit(KexInit {
            role: Role::Model,
            ephemeral: DhPublic::from_bytes([0; 32]),
            provider_key: VerifyingKey::from_bytes([0; 32]),
            provider_cert: Signature::from_bytes([0; 64]),
            init_sig: Signature::from_bytes([0; 64]),
        })
        .encode();
        bad_role[5] = 9;
        assert_eq!(Message::decode(&bad_role), Err(MessageError::BadRole(9)));
    }
}
