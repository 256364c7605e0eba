mod common;

use ascendsim::crypto::{aead_open, aead_seal, mac, AuthTag, Nonce, SymKey};
use ascendsim::toolchain::{OperatorGraph, Shape};
use common::{gcm_oracle, interpret};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn aead_matches_block_cipher_oracle(
        key in any::<[u8; 16]>(),
        iv in any::<[u8; 12]>(),
        aad in proptest::collection::vec(any::<u8>(), 0..80),
        pt in proptest::collection::vec(any::<u8>(), 0..300),
    ) {
        let (ct, tag) = aead_seal(&SymKey::from_bytes(key), &Nonce::from_bytes(iv), &aad, &pt);
        let (oct, otag) = gcm_oracle(&key, &iv, &aad, &pt);
        prop_assert_eq!(&ct, &oct);
        prop_assert_eq!(tag, AuthTag::from_bytes(otag));
        let opened = aead_open(&SymKey::from_bytes(key), &Nonce::from_bytes(iv), &aad, &ct, &tag).unwrap();
        prop_assert_eq!(opened, pt);
    }

    #[test]
    fn mac_is_gmac_with_zero_iv(key in any::<[u8; 16]>(), msg in proptest::collection::vec(any::<u8>(), 0..200)) {
        let (_, tag) = gcm_oracle(&key, &[0; 12], &msg, &[]);
        prop_assert_eq!(mac(&SymKey::from_bytes(key), &msg), AuthTag::from_bytes(tag));
    }

    #[test]
    fn any_ciphertext_flip_fails_open(
        key in any::<[u8; 16]>(),
        pt in proptest::collection::vec(any::<u8>(), 1..64),
        at in any::<prop::sample::Index>(),
        mask in 1u8..,
    ) {
        let (k, n) = (SymKey::from_bytes(key), Nonce::from_bytes([9; 12]));
        let (mut ct, tag) = aead_seal(&k, &n, b"aad", &pt);
        ct[at.index(pt.len())] ^= mask;
        prop_assert!(aead_open(&k, &n, b"aad", &ct, &tag).is_err());
    }
}

#[test]
fn interpreter_oracle_self_check() {
    assert_eq!(interpret(&OperatorGraph::matmul_2x2(), &[1, 2, 3, 4, 5, 6, 7, 8]), vec![19, 22, 43, 50]);
    assert_eq!(interpret(&OperatorGraph::identity(Shape(1, 3)), &[-1, 0, 7]), vec![-1, 0, 7]);
}
