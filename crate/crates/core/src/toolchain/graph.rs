use serde::{Deserialize, Serialize};

pub type TensorId = u32;

/// `(rows, cols)`; serialized as a two-element array.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape(pub u16, pub u16);

impl Shape {
    pub fn rows(self) -> usize {
        self.0 as usize
    }

    pub fn cols(self) -> usize {
        self.1 as usize
    }

    pub fn elems(self) -> usize {
        self.rows() * self.cols()
    }

    pub fn bytes(self) -> u64 {
        self.elems() as u64 * 2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OpKind {
    MatMul,
    Relu,
    Add,
    Softmax,
    CopyIn,
    CopyOut,
}

impl OpKind {
    pub fn arity(self) -> usize {
        match self {
            OpKind::MatMul | OpKind::Add => 2,
            _ => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub op: OpKind,
    pub inputs: Vec<TensorId>,
    pub output: TensorId,
    /// Output shape.
    pub shape: Shape,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorDecl {
    pub id: TensorId,
    pub shape: Shape,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightTensor {
    pub id: TensorId,
    pub shape: Shape,
    pub data: Vec<i16>,
}

/// A model before compilation: data-provider inputs, model parameters and
/// layers in execution order. The model's output is the concatenation of
/// every `COPY_OUT` result, in layer order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorGraph {
    #[serde(default)]
    pub inputs: Vec<TensorDecl>,
    #[serde(default)]
    pub weights: Vec<WeightTensor>,
    pub layers: Vec<LayerSpec>,
}

impl OperatorGraph {
    /// The three-layer example model (H2D copy, matmul, D2H copy) over two
    /// 2×2 inputs. The copy-in stages the left operand in the workspace; the
    /// matmul reads the right operand straight from the input region.
    pub fn matmul_2x2() -> Self {
        let s = Shape(2, 2);
        OperatorGraph {
            inputs: vec![TensorDecl { id: 0, shape: s }, TensorDecl { id: 1, shape: s }],
            weights: vec![],
            layers: vec![
                LayerSpec { name: "te_copy_in_1".into(), op: OpKind::CopyIn, inputs: vec![0], output: 2, shape: s },
                LayerSpec { name: "te_matmul_1".into(), op: OpKind::MatMul, inputs: vec![2, 1], output: 3, shape: s },
                LayerSpec { name: "te_copy_out_1".into(), op: OpKind::CopyOut, inputs: vec![3], output: 4, shape: s },
            ],
        }
    }

    /// `COPY_IN` then `COPY_OUT`: inference returns its input.
    pub fn identity(shape: Shape) -> Self {
        OperatorGraph {
            inputs: vec![TensorDecl { id: 0, shape }],
            weights: vec![],
            layers: vec![
                LayerSpec { name: "te_copy_in_1".into(), op: OpKind::CopyIn, inputs: vec![0], output: 1, shape },
                LayerSpec { name: "te_copy_out_1".into(), op: OpKind::CopyOut, inputs: vec![1], output: 2, shape },
            ],
        }
    }

    pub fn input_len_bytes(&self) -> u64 {
        self.inputs.iter().map(|t| t.shape.bytes()).sum()
    }

    pub fn output_len_bytes(&self) -> u64 {
        self.layers.iter().filter(|l| l.op == OpKind::CopyOut).map(|l| l.shape.bytes()).sum()
    }
}
