//! Commitments the data provider issues over the host's task layout.

use crate::crypto::{mac, mac_subkey, AuthTag, SymKey};
use crate::toolchain::BinaryChain;

/// `P₁`: MAC under the data session over the ordered `PC_START` list, each
/// address as 8 big-endian bytes.
pub fn pc_commitment(data_key: &SymKey, pcs: &[u64]) -> AuthTag {
    let msg: Vec<u8> = pcs.iter().flat_map(|pc| pc.to_be_bytes()).collect();
    mac(&mac_subkey(data_key), &msg)
}

/// `P₂`: MAC under the data session over the model provider's binary chain.
pub fn chain_binding(data_key: &SymKey, chain: &BinaryChain) -> AuthTag {
    mac(&mac_subkey(data_key), chain.0.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_matters() {
        let k = SymKey::from_bytes([3; 16]);
        assert_ne!(pc_commitment(&k, &[0x10, 0x20]), pc_commitment(&k, &[0x20, 0x10]));
        assert_ne!(pc_commitment(&k, &[0x10]), pc_commitment(&k, &[0x10, 0x0]));
    }
}
