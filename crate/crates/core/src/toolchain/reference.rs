//! Graph-level evaluator used to check device results. It walks the
//! operator graph directly and never touches bytecode, HBM or keys.

use std::collections::BTreeMap;

use super::compile::{validate, CompileError};
use super::graph::{OpKind, OperatorGraph, TensorId};
use crate::isa::kernels;

/// Evaluates `graph` on `inputs` (one vector per declared input, in order)
/// and returns the concatenated `COPY_OUT` results.
pub fn evaluate(graph: &OperatorGraph, inputs: &[Vec<i16>]) -> Result<Vec<i16>, CompileError> {
    let shapes = validate(graph)?;
    let mut values: BTreeMap<TensorId, Vec<i16>> = BTreeMap::new();
    for (i, decl) in graph.inputs.iter().enumerate() {
        match inputs.get(i) {
            Some(data) if data.len() == decl.shape.elems() => values.insert(decl.id, data.clone()),
            _ => return Err(CompileError::InputLength { tensor: decl.id, expected: decl.shape.elems() }),
        };
    }
    for w in &graph.weights {
        values.insert(w.id, w.data.clone());
    }
    let mut output = Vec::new();
    for layer in &graph.layers {
        let a = &values[&layer.inputs[0]];
        let s = layer.shape;
        let result = match layer.op {
            OpKind::MatMul => {
                let k = shapes[&layer.inputs[0]].cols();
                kernels::matmul(a, &values[&layer.inputs[1]], s.rows(), k, s.cols())
            }
            OpKind::Add => kernels::add(a, &values[&layer.inputs[1]]),
            OpKind::Relu => kernels::relu(a),
            OpKind::Softmax => kernels::softmax(a, s.rows(), s.cols()),
            OpKind::CopyIn | OpKind::CopyOut => a.clone(),
        };
        if layer.op == OpKind::CopyOut {
            output.extend_from_slice(&result);
        }
        values.insert(layer.output, result);
    }
    Ok(output)
}
