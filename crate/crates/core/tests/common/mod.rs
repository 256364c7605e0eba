//! Test oracles. Nothing here calls into the simulator's own kernels,
//! evaluator or AEAD wrapper; each is written from the definitions.

#![allow(dead_code)]

use std::collections::BTreeMap;

use ascendsim::toolchain::{LayerSpec, OpKind, OperatorGraph, Shape, TensorDecl, WeightTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

// ---- plaintext interpreter ----------------------------------------------

fn sat(v: i64) -> i16 {
    if v > i16::MAX as i64 {
        i16::MAX
    } else if v < i16::MIN as i64 {
        i16::MIN
    } else {
        v as i16
    }
}

/// Runs `graph` on flattened `inputs` and returns every `COPY_OUT` result
/// concatenated in layer order.
pub fn interpret(graph: &OperatorGraph, inputs: &[i16]) -> Vec<i16> {
    let mut env: BTreeMap<u32, (Shape, Vec<i16>)> = BTreeMap::new();
    let mut at = 0;
    for t in &graph.inputs {
        let n = t.shape.0 as usize * t.shape.1 as usize;
        env.insert(t.id, (t.shape, inputs[at..at + n].to_vec()));
        at += n;
    }
    for w in &graph.weights {
        env.insert(w.id, (w.shape, w.data.clone()));
    }
    let mut out = Vec::new();
    for l in &graph.layers {
        let (sa, a) = env[&l.inputs[0]].clone();
        let (rows, cols) = (l.shape.0 as usize, l.shape.1 as usize);
        let v: Vec<i16> = match l.op {
            OpKind::MatMul => {
                let (_, b) = &env[&l.inputs[1]];
                let k = sa.1 as usize;
                let mut r = Vec::with_capacity(rows * cols);
                for i in 0..rows {
                    for j in 0..cols {
                        let mut acc = 0i64;
                        for t in 0..k {
                            acc += a[i * k + t] as i64 * b[t * cols + j] as i64;
                        }
                        r.push(sat(acc));
                    }
                }
                r
            }
            OpKind::Add => {
                let (_, b) = &env[&l.inputs[1]];
                a.iter().zip(b).map(|(&x, &y)| sat(x as i64 + y as i64)).collect()
            }
            OpKind::Relu => a.iter().map(|&x| if x < 0 { 0 } else { x }).collect(),
            OpKind::Softmax => {
                // Base-2 weights 32768 >> min(max - x, 15), rows scaled to 32767.
                let mut r = Vec::with_capacity(rows * cols);
                for row in a.chunks(cols) {
                    let max = *row.iter().max().unwrap() as i32;
                    let w: Vec<u64> = row.iter().map(|&x| 32768u64 >> (max - x as i32).min(15)).collect();
                    let total: u64 = w.iter().sum();
                    r.extend(w.iter().map(|&x| ((x * 32767) / total) as i16));
                }
                r
            }
            OpKind::CopyIn | OpKind::CopyOut => a,
        };
        if l.op == OpKind::CopyOut {
            out.extend_from_slice(&v);
        }
        env.insert(l.output, (l.shape, v));
    }
    out
}

// ---- random models --------------------------------------------------------

pub struct RandomCase {
    pub graph: OperatorGraph,
    pub inputs: Vec<Vec<i16>>,
}

fn dim(rng: &mut ChaCha20Rng) -> u16 {
    rng.gen_range(1..=5)
}

fn values(rng: &mut ChaCha20Rng, n: usize) -> Vec<i16> {
    // Mostly small values, sometimes large enough to saturate.
    let wide = rng.gen_bool(0.2);
    (0..n).map(|_| if wide { rng.gen() } else { rng.gen_range(-40..=40) }).collect()
}

/// A valid random graph with `rounds` random inputs.
pub fn random_case(seed: u64, rounds: usize) -> RandomCase {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut g = OperatorGraph::default();
    let mut next_id = 0u32;
    let mut fresh = || {
        next_id += 1;
        next_id - 1
    };
    let mut live: Vec<(u32, Shape)> = Vec::new();
    for _ in 0..rng.gen_range(1..=2) {
        let s = Shape(dim(&mut rng), dim(&mut rng));
        let id = fresh();
        g.inputs.push(TensorDecl { id, shape: s });
    }
    let mut layers = Vec::new();
    let first = g.inputs[0].clone();
    let t = fresh();
    layers.push(LayerSpec { name: "copy_in".into(), op: OpKind::CopyIn, inputs: vec![first.id], output: t, shape: first.shape });
    live.push((t, first.shape));
    for t in g.inputs.iter().skip(1) {
        live.push((t.id, t.shape));
    }
    let mut weights: Vec<WeightTensor> = Vec::new();
    let mut last = (t, first.shape);
    for i in 0..rng.gen_range(1..=6) {
        let (a, sa) = if rng.gen_bool(0.7) { last } else { live[rng.gen_range(0..live.len())] };
        let op = [OpKind::MatMul, OpKind::Add, OpKind::Relu, OpKind::Softmax, OpKind::CopyOut][rng.gen_range(0..5)];
        let (inputs, shape) = match op {
            OpKind::MatMul => {
                let candidates: Vec<_> = live.iter().filter(|(_, s)| s.0 == sa.1).copied().collect();
                let b = if !candidates.is_empty() && rng.gen_bool(0.4) {
                    candidates[rng.gen_range(0..candidates.len())]
                } else {
                    let s = Shape(sa.1, dim(&mut rng));
                    let id = fresh();
                    weights.push(WeightTensor { id, shape: s, data: values(&mut rng, s.0 as usize * s.1 as usize) });
                    live.push((id, s));
                    (id, s)
                };
                (vec![a, b.0], Shape(sa.0, b.1 .1))
            }
            OpKind::Add => {
                let candidates: Vec<_> = live.iter().filter(|(id, s)| *s == sa && *id != a).copied().collect();
                let b = if !candidates.is_empty() && rng.gen_bool(0.5) {
                    candidates[rng.gen_range(0..candidates.len())].0
                } else {
                    let id = fresh();
                    weights.push(WeightTensor { id, shape: sa, data: values(&mut rng, sa.0 as usize * sa.1 as usize) });
                    live.push((id, sa));
                    id
                };
                (vec![a, b], sa)
            }
            _ => (vec![a], sa),
        };
        let out = fresh();
        layers.push(LayerSpec { name: format!("layer_{i}"), op, inputs, output: out, shape });
        live.push((out, shape));
        last = (out, shape);
    }
    let out = fresh();
    layers.push(LayerSpec { name: "copy_out".into(), op: OpKind::CopyOut, inputs: vec![last.0], output: out, shape: last.1 });
    g.weights = weights;
    g.layers = layers;
    let n: usize = g.inputs.iter().map(|t| t.shape.0 as usize * t.shape.1 as usize).sum();
    let inputs = (0..rounds).map(|_| values(&mut rng, n)).collect();
    RandomCase { graph: g, inputs }
}

// ---- AES-GCM from the block cipher ---------------------------------------

use aes::cipher::{BlockEncrypt, KeyInit};

fn gf_mul(x: u128, y: u128) -> u128 {
    // Bit-reflected GF(2^128) multiply, R = 0xe1 || 0^120.
    let r: u128 = 0xe1 << 120;
    let mut z = 0u128;
    let mut v = y;
    for i in 0..128 {
        if (x >> (127 - i)) & 1 == 1 {
            z ^= v;
        }
        v = if v & 1 == 1 { (v >> 1) ^ r } else { v >> 1 };
    }
    z
}

fn ghash(h: u128, aad: &[u8], ct: &[u8]) -> u128 {
    let mut y = 0u128;
    for part in [aad, ct] {
        for block in part.chunks(16) {
            let mut b = [0u8; 16];
            b[..block.len()].copy_from_slice(block);
            y = gf_mul(y ^ u128::from_be_bytes(b), h);
        }
    }
    let lens = ((aad.len() as u128 * 8) << 64) | (ct.len() as u128 * 8);
    gf_mul(y ^ lens, h)
}

/// AES-128-GCM with a 96-bit IV, built from raw AES and GHASH.
pub fn gcm_oracle(key: &[u8; 16], iv: &[u8; 12], aad: &[u8], pt: &[u8]) -> (Vec<u8>, [u8; 16]) {
    let aes = aes::Aes128::new(key.into());
    let enc = |block: [u8; 16]| {
        let mut b = block.into();
        aes.encrypt_block(&mut b);
        <[u8; 16]>::from(b)
    };
    let h = u128::from_be_bytes(enc([0; 16]));
    let counter = |n: u32| {
        let mut b = [0u8; 16];
        b[..12].copy_from_slice(iv);
        b[12..].copy_from_slice(&n.to_be_bytes());
        b
    };
    let mut ct = Vec::with_capacity(pt.len());
    for (i, chunk) in pt.chunks(16).enumerate() {
        let ks = enc(counter(i as u32 + 2));
        ct.extend(chunk.iter().zip(ks).map(|(p, k)| p ^ k));
    }
    let s = ghash(h, aad, &ct);
    let tag = (s ^ u128::from_be_bytes(enc(counter(1)))).to_be_bytes();
    (ct, tag)
}

// ---- lifecycle edges -----------------------------------------------------

use ascendsim::layout::LifecycleState::{self, *};

/// Encrypted → unlocked-encrypted → plaintext → released, the output's
/// cipher branch, plus abort/clean, zeroed reuse and the per-round output
/// relock.
pub const LIFECYCLE_EDGES: [(LifecycleState, LifecycleState); 10] = [
    (MappedEncrypted, UnmappedEncrypted),
    (UnmappedEncrypted, UnmappedPlain),
    (UnmappedPlain, MappedCipherOut),
    (UnmappedPlain, MappedZeroed),
    (MappedEncrypted, MappedZeroed),
    (UnmappedEncrypted, MappedZeroed),
    (MappedCipherOut, MappedZeroed),
    (MappedZeroed, MappedEncrypted),
    (MappedZeroed, UnmappedEncrypted),
    (MappedCipherOut, UnmappedEncrypted),
];

pub fn edge_allowed(a: LifecycleState, b: LifecycleState) -> bool {
    a == b || LIFECYCLE_EDGES.contains(&(a, b))
}

pub fn hex16(s: &str) -> [u8; 16] {
    hex::decode(s).unwrap().try_into().unwrap()
}

pub fn hex12(s: &str) -> [u8; 12] {
    hex::decode(s).unwrap().try_into().unwrap()
}
