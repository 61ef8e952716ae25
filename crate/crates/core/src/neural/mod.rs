//! A small reverse-mode engine over rank-3 `[batch, channels, length]`
//! tensors. Differentiation is per layer: every layer caches what it needs
//! during a training forward pass and its `backward` turns the upstream
//! gradient into the input gradient while accumulating parameter gradients.

mod adam;
mod checkpoint;
mod dsu;
pub mod gradcheck;
mod layers;
mod loss;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::Adam;
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, NamedTensor, CHECKPOINT_MAGIC};
pub use dsu::Dsu;
pub use layers::{BatchNorm, Conv1d, Dense, Dropout, MaxPool, Relu, Softmax};
pub use loss::{masked_cross_entropy, softmax_rows};

#[derive(Debug, Error, PartialEq)]
pub enum NeuralError {
    #[error("{layer}: expected input shape {expected}, got {actual:?}")]
    ShapeMismatch {
        layer: &'static str,
        expected: String,
        actual: Vec<usize>,
    },
    #[error("{0}: backward called without a recorded training forward pass")]
    NoTape(&'static str),
    #[error("batch of {0} is too small for batch statistics (need at least 2)")]
    BatchTooSmall(usize),
    #[error("mask selects no positions")]
    EmptyMask,
    #[error("label {label} at position {position} is outside 0..{classes}")]
    LabelOutOfRange {
        position: usize,
        label: usize,
        classes: usize,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, NeuralError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: [usize; 3],
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 3]) -> Tensor {
        Tensor {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 3], data: Vec<f64>) -> Result<Tensor> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(NeuralError::ShapeMismatch {
                layer: "tensor",
                expected: format!("{} values", shape.iter().product::<usize>()),
                actual: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn length(&self) -> usize {
        self.shape[2]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, b: usize, c: usize, l: usize) -> f64 {
        self.data[(b * self.shape[1] + c) * self.shape[2] + l]
    }

    /// Row `[b, c, ..]`.
    pub fn row(&self, b: usize, c: usize) -> &[f64] {
        let l = self.shape[2];
        let start = (b * self.shape[1] + c) * l;
        &self.data[start..start + l]
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn reshape(mut self, shape: [usize; 3]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(NeuralError::ShapeMismatch {
                layer: "reshape",
                expected: format!("{} values", self.data.len()),
                actual: shape.to_vec(),
            });
        }
        self.shape = shape;
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Per-pass context: the mode and the generator that drives dropout and DSU.
pub struct Ctx<'a> {
    pub mode: Mode,
    pub rng: &'a mut dyn RngCore,
}

impl<'a> Ctx<'a> {
    pub fn new(mode: Mode, rng: &'a mut dyn RngCore) -> Self {
        Ctx { mode, rng }
    }

    pub fn training(&self) -> bool {
        self.mode == Mode::Train
    }
}

/// A named parameter buffer. Non-trainable buffers (batch-norm running
/// statistics) are checkpointed but skipped by the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub trainable: bool,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<f64>) -> Param {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        Param {
            name: name.into(),
            shape,
            value,
            grad: Vec::new(),
            trainable: true,
        }
    }

    pub fn buffer(name: impl Into<String>, shape: Vec<usize>, value: Vec<f64>) -> Param {
        Param {
            trainable: false,
            ..Param::new(name, shape, value)
        }
    }

    /// Gradient buffer, allocated on first use.
    pub fn grad_mut(&mut self) -> &mut [f64] {
        if self.grad.len() != self.value.len() {
            self.grad = vec![0.0; self.value.len()];
        }
        &mut self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

pub trait Layer {
    fn name(&self) -> &'static str;

    fn forward(&mut self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor>;

    /// Input gradient from the output gradient of the last training forward
    /// pass. Parameter gradients accumulate.
    fn backward(&mut self, grad: &Tensor) -> Result<Tensor>;

    fn visit_params(&mut self, _f: &mut dyn FnMut(&mut Param)) {}

    /// Drops cached activations.
    fn clear_tape(&mut self);
}

/// Row-major `c = beta*c + op(a) * op(b)` with `op(a)` of shape `m x k` and
/// `op(b)` of shape `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the kernel touches for
    // these dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn shape_err(layer: &'static str, expected: impl Into<String>, x: &Tensor) -> NeuralError {
    NeuralError::ShapeMismatch {
        layer,
        expected: expected.into(),
        actual: x.shape.to_vec(),
    }
}
