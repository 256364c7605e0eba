//! Pay-per-inference tokens.
//!
//! `Tag₁` binds one plaintext input to the data session; `T₁` is the model
//! provider's authorization of that tag. The device recomputes both from
//! the decrypted input and its two session keys.

use crate::crypto::{ct_eq, mac, mac_subkey, AuthTag, SymKey};

pub fn input_tag(data_key: &SymKey, input: &[u8]) -> AuthTag {
    mac(&mac_subkey(data_key), input)
}

pub fn grant_tag(model_key: &SymKey, tag1: &AuthTag) -> AuthTag {
    mac(&mac_subkey(model_key), tag1.as_bytes())
}

/// Device-side check, pure in its inputs.
pub fn verify_ppi(data_key: &SymKey, model_key: &SymKey, input: &[u8], tag1: &AuthTag, t1: &AuthTag) -> bool {
    let expect1 = input_tag(data_key, input);
    let expect_t1 = grant_tag(model_key, &expect1);
    // Both comparisons always run.
    let a = ct_eq(expect1.as_bytes(), tag1.as_bytes());
    let b = ct_eq(expect_t1.as_bytes(), t1.as_bytes());
    a & b
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn honest_tokens_verify() {
        let kd = SymKey::from_bytes([1; 16]);
        let km = SymKey::from_bytes([2; 16]);
        let t = input_tag(&kd, b"input");
        assert!(verify_ppi(&kd, &km, b"input", &t, &grant_tag(&km, &t)));
        assert!(!verify_ppi(&kd, &km, b"other", &t, &grant_tag(&km, &t)));
        assert!(!verify_ppi(&kd, &km, b"input", &t, &grant_tag(&kd, &t)));
    }
}
