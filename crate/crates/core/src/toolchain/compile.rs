use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::format::{LayerEntry, ModelFile, ModelImage, ModelPolicy, TensorPlacement, NAME_LEN};
use super::graph::{OpKind, OperatorGraph, Shape, TensorId};
use crate::isa::{Instruction, Opcode, OperatorBinary};
use crate::layout::RegionKind;

/// Largest tensor dimension the 8-bit shape fields can express.
pub const MAX_DIM: u16 = 255;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompileError {
    #[error("layer {layer}: operand shapes are incompatible")]
    ShapeMismatch { layer: usize },
    #[error("layer {layer} consumes tensor {tensor} before it is produced")]
    CyclicGraph { layer: usize, tensor: TensorId },
    #[error("layer {layer} references unknown tensor {tensor}")]
    UnknownTensor { layer: usize, tensor: TensorId },
    #[error("tensor {0} is defined more than once")]
    DuplicateTensor(TensorId),
    #[error("layer {layer}: expected {expected} inputs, found {found}")]
    WrongArity { layer: usize, expected: usize, found: usize },
    #[error("tensor {0}: dimensions must be within 1..=255")]
    BadDimension(TensorId),
    #[error("layer {layer}: name longer than {NAME_LEN} bytes")]
    NameTooLong { layer: usize },
    #[error("weight {0}: data length does not match its shape")]
    WeightLength(TensorId),
    #[error("layer {layer}: COPY_IN must read a graph input")]
    CopyInSource { layer: usize },
    #[error("input {tensor}: expected {expected} values")]
    InputLength { tensor: TensorId, expected: usize },
}

/// Checks graph invariants and returns every tensor's shape.
pub fn validate(graph: &OperatorGraph) -> Result<BTreeMap<TensorId, Shape>, CompileError> {
    let mut shapes = BTreeMap::new();
    let check_dims = |id: TensorId, s: Shape| {
        if s.0 == 0 || s.1 == 0 || s.0 > MAX_DIM || s.1 > MAX_DIM {
            Err(CompileError::BadDimension(id))
        } else {
            Ok(())
        }
    };
    for t in &graph.inputs {
        check_dims(t.id, t.shape)?;
        if shapes.insert(t.id, t.shape).is_some() {
            return Err(CompileError::DuplicateTensor(t.id));
        }
    }
    for w in &graph.weights {
        check_dims(w.id, w.shape)?;
        if w.data.len() != w.shape.elems() {
            return Err(CompileError::WeightLength(w.id));
        }
        if shapes.insert(w.id, w.shape).is_some() {
            return Err(CompileError::DuplicateTensor(w.id));
        }
    }
    let inputs: BTreeSet<TensorId> = graph.inputs.iter().map(|t| t.id).collect();
    let produced_later: BTreeSet<TensorId> = graph.layers.iter().map(|l| l.output).collect();

    for (i, layer) in graph.layers.iter().enumerate() {
        if layer.name.len() > NAME_LEN {
            return Err(CompileError::NameTooLong { layer: i });
        }
        if layer.inputs.len() != layer.op.arity() {
            return Err(CompileError::WrongArity { layer: i, expected: layer.op.arity(), found: layer.inputs.len() });
        }
        let mut operand = Vec::with_capacity(2);
        for &t in &layer.inputs {
            match shapes.get(&t) {
                Some(&s) => operand.push(s),
                None if produced_later.contains(&t) => {
                    return Err(CompileError::CyclicGraph { layer: i, tensor: t })
                }
                None => return Err(CompileError::UnknownTensor { layer: i, tensor: t }),
            }
        }
        check_dims(layer.output, layer.shape)?;
        let ok = match layer.op {
            OpKind::MatMul => {
                let (a, b) = (operand[0], operand[1]);
                a.1 == b.0 && layer.shape == Shape(a.0, b.1)
            }
            OpKind::Add => operand[0] == operand[1] && operand[0] == layer.shape,
            _ => operand[0] == layer.shape,
        };
        if !ok {
            return Err(CompileError::ShapeMismatch { layer: i });
        }
        if layer.op == OpKind::CopyIn && !inputs.contains(&layer.inputs[0]) {
            return Err(CompileError::CopyInSource { layer: i });
        }
        if shapes.insert(layer.output, layer.shape).is_some() {
            return Err(CompileError::DuplicateTensor(layer.output));
        }
    }
    Ok(shapes)
}

fn instruction_for(op: OpKind, operands: &[Shape], out: Shape) -> Instruction {
    let opcode = match op {
        OpKind::MatMul => Opcode::MatMul,
        OpKind::Relu => Opcode::Relu,
        OpKind::Add => Opcode::Add,
        OpKind::Softmax => Opcode::Softmax,
        OpKind::CopyIn | OpKind::CopyOut => Opcode::Copy,
    };
    let k = if op == OpKind::MatMul { operands[0].1 as u8 } else { 0 };
    let b = if op.arity() == 2 { 2 } else { 0 };
    Instruction { opcode, dst: 0, a: 1, b, m: out.0 as u8, k, n: out.1 as u8 }
}

/// Compiles a graph into a plaintext model file: one operator binary per
/// layer, tensors placed sequentially within their regions.
pub fn compile(graph: &OperatorGraph) -> Result<ModelFile, CompileError> {
    let shapes = validate(graph)?;
    let mut cursor: BTreeMap<RegionKind, u64> = BTreeMap::new();
    let mut tensors = Vec::new();
    let mut place = |id: TensorId, region: RegionKind, shape: Shape| {
        let at = cursor.entry(region).or_insert(0);
        tensors.push(TensorPlacement { id, region, shape, offset: *at });
        *at += shape.bytes();
    };
    for t in &graph.inputs {
        place(t.id, RegionKind::Input, t.shape);
    }
    for w in &graph.weights {
        place(w.id, RegionKind::ModelParams, w.shape);
    }
    for layer in &graph.layers {
        let region = if layer.op == OpKind::CopyOut { RegionKind::Output } else { RegionKind::Workspace };
        place(layer.output, region, layer.shape);
    }

    let weights: Vec<u8> = graph.weights.iter().flat_map(|w| crate::isa::encode_tensor(&w.data)).collect();
    let mut layers = Vec::with_capacity(graph.layers.len());
    let mut layer_args = Vec::with_capacity(graph.layers.len());
    let mut binaries = Vec::with_capacity(graph.layers.len());
    for (i, layer) in graph.layers.iter().enumerate() {
        let mut name = [0u8; NAME_LEN];
        name[..layer.name.len()].copy_from_slice(layer.name.as_bytes());
        layers.push(LayerEntry { name, binary_index: i as u32 });
        let mut args = vec![layer.output];
        args.extend_from_slice(&layer.inputs);
        let operand_shapes: Vec<Shape> = layer.inputs.iter().map(|t| shapes[t]).collect();
        let binary = OperatorBinary {
            arg_count: args.len() as u16,
            instructions: vec![instruction_for(layer.op, &operand_shapes, layer.shape), Instruction::HALT],
        };
        layer_args.push(args);
        binaries.push(binary.to_bytes());
    }
    Ok(ModelFile(ModelImage {
        sealed: false,
        layers,
        tensors,
        layer_args,
        weights,
        policy: ModelPolicy::default().to_bytes().to_vec(),
        binaries,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toolchain::graph::{LayerSpec, TensorDecl};

    #[test]
    fn matmul_example_has_three_binaries() {
        let model = compile(&OperatorGraph::matmul_2x2()).unwrap();
        assert_eq!(model.layers.len(), 3);
        assert_eq!(model.binaries.len(), 3);
        let names: Vec<_> = model.layers.iter().map(|l| l.display_name()).collect();
        assert_eq!(names, ["te_copy_in_1", "te_matmul_1", "te_copy_out_1"]);
        let mm = OperatorBinary::parse(&model.binaries[1]).unwrap();
        assert_eq!(mm.instructions[0].opcode, Opcode::MatMul);
        assert_eq!((mm.instructions[0].m, mm.instructions[0].k, mm.instructions[0].n), (2, 2, 2));
        assert_eq!(model.tensor_extent(RegionKind::Input), 16);
        assert_eq!(model.tensor_extent(RegionKind::Output), 8);
    }

    #[test]
    fn deterministic() {
        let g = OperatorGraph::matmul_2x2();
        assert_eq!(compile(&g).unwrap(), compile(&g).unwrap());
    }

    #[test]
    fn identity_has_two_layers() {
        let model = compile(&OperatorGraph::identity(Shape(1, 4))).unwrap();
        assert_eq!(model.layers.len(), 2);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut g = OperatorGraph::matmul_2x2();
        g.inputs = vec![TensorDecl { id: 0, shape: Shape(2, 3) }, TensorDecl { id: 1, shape: Shape(2, 3) }];
        g.layers[0].shape = Shape(2, 3);
        g.layers[1].shape = Shape(2, 3);
        assert_eq!(compile(&g), Err(CompileError::ShapeMismatch { layer: 1 }));
    }

    #[test]
    fn use_before_definition_is_cyclic() {
        let s = Shape(1, 1);
        let g = OperatorGraph {
            inputs: vec![TensorDecl { id: 0, shape: s }],
            weights: vec![],
            layers: vec![
                LayerSpec { name: "a".into(), op: OpKind::Relu, inputs: vec![2], output: 1, shape: s },
                LayerSpec { name: "b".into(), op: OpKind::Relu, inputs: vec![1], output: 2, shape: s },
            ],
        };
        assert_eq!(compile(&g), Err(CompileError::CyclicGraph { layer: 0, tensor: 2 }));
    }

    #[test]
    fn unknown_and_duplicate_tensors() {
        let s = Shape(1, 1);
        let mut g = OperatorGraph {
            inputs: vec![TensorDecl { id: 0, shape: s }],
            weights: vec![],
            layers: vec![LayerSpec { name: "a".into(), op: OpKind::Relu, inputs: vec![9], output: 1, shape: s }],
        };
        assert_eq!(compile(&g), Err(CompileError::UnknownTensor { layer: 0, tensor: 9 }));
        g.layers[0].inputs = vec![0];
        g.layers[0].output = 0;
        assert_eq!(compile(&g), Err(CompileError::DuplicateTensor(0)));
    }

    #[test]
    fn empty_graph_compiles() {
        let model = compile(&OperatorGraph::default()).unwrap();
        assert!(model.layers.is_empty() && model.binaries.is_empty());
    }
}
