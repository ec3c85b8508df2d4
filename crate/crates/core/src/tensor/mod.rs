//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! Every operation runs eagerly and records its inputs, so a tensor is the
//! root of an acyclic expression graph. Calling [`Tensor::backward`] on a
//! scalar walks that graph once in reverse topological order and returns a
//! [`GradMap`] with one gradient buffer per reachable tensor.
//!
//! Tensors are immutable and cheap to clone (`Arc` inside). Only rank-1 and
//! rank-2 shapes are supported; that is all the models here need. Any
//! operation that would produce a non-finite value fails with
//! [`TensorError::NonFinite`] instead of silently poisoning training.

mod autograd;
pub mod checkpoint;
pub mod gradcheck;
mod params;

pub use autograd::GradMap;
pub use checkpoint::{CheckpointError, ModelCheckpoint, NormBlock};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use params::{AdamConfig, ParamStore};

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use thiserror::Error;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {details}")]
    ShapeMismatch { op: &'static str, details: String },
    #[error("invalid argument to {op}: {details}")]
    InvalidArgument { op: &'static str, details: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
}

/// Recorded operation that produced a tensor, holding the input tensors and
/// any constants the backward pass needs.
#[derive(Clone)]
pub(crate) enum Op {
    Leaf,
    Matmul {
        lhs: Tensor,
        rhs: Tensor,
    },
    /// `broadcast_row` means `rhs` is a rank-1 row added to every row of `lhs`.
    Add {
        lhs: Tensor,
        rhs: Tensor,
        broadcast_row: bool,
    },
    /// `broadcast_col` means `rhs` is an `(n, 1)` column scaling each row of `lhs`.
    Mul {
        lhs: Tensor,
        rhs: Tensor,
        broadcast_col: bool,
    },
    Scale {
        input: Tensor,
        factor: f64,
    },
    ConcatLastDim {
        inputs: Vec<Tensor>,
    },
    SliceLastDim {
        input: Tensor,
        start: usize,
        len: usize,
    },
    GatherRows {
        input: Tensor,
        indices: Vec<usize>,
    },
    SegmentSum {
        input: Tensor,
        segments: Vec<usize>,
    },
    SegmentSoftmax {
        input: Tensor,
        segments: Vec<usize>,
    },
    SoftmaxLastDim {
        input: Tensor,
    },
    LogSoftmaxLastDim {
        input: Tensor,
    },
    LeakyRelu {
        input: Tensor,
        alpha: f64,
    },
    Elu {
        input: Tensor,
    },
    Relu {
        input: Tensor,
    },
    Sigmoid {
        input: Tensor,
    },
    /// Inverted dropout; `mask` entries are `0.0` or `1 / (1 - p)`.
    Dropout {
        input: Tensor,
        mask: Vec<f64>,
    },
    Sum {
        input: Tensor,
    },
    Mean {
        input: Tensor,
    },
    NllMean {
        logp: Tensor,
        labels: Vec<usize>,
    },
    BceWithLogitsMean {
        logits: Tensor,
        targets: Vec<f64>,
    },
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    values: Vec<f64>,
    op: Op,
}

/// Immutable dense tensor. Clones share the underlying buffer.
#[derive(Clone)]
pub struct Tensor {
    node: Arc<Node>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.node.id)
            .field("shape", &self.node.shape)
            .finish()
    }
}

fn check_finite(values: &[f64], op: &'static str) -> Result<(), TensorError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

impl Tensor {
    pub(crate) fn from_op(
        values: Vec<f64>,
        shape: Vec<usize>,
        op: Op,
        name: &'static str,
    ) -> Result<Tensor, TensorError> {
        debug_assert_eq!(values.len(), shape.iter().product::<usize>());
        check_finite(&values, name)?;
        Ok(Tensor {
            node: Arc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                values,
                op,
            }),
        })
    }

    /// Creates a leaf tensor with no recorded inputs.
    pub fn leaf(values: Vec<f64>, shape: Vec<usize>) -> Result<Tensor, TensorError> {
        if shape.is_empty() || shape.len() > 2 {
            return Err(TensorError::InvalidArgument {
                op: "leaf",
                details: format!("rank must be 1 or 2, got shape {shape:?}"),
            });
        }
        if values.len() != shape.iter().product::<usize>() {
            return Err(TensorError::ShapeMismatch {
                op: "leaf",
                details: format!("{} values for shape {shape:?}", values.len()),
            });
        }
        Tensor::from_op(values, shape, Op::Leaf, "leaf")
    }

    pub fn scalar(value: f64) -> Result<Tensor, TensorError> {
        Tensor::leaf(vec![value], vec![1])
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Tensor, TensorError> {
        let n = shape.iter().product();
        Tensor::leaf(vec![0.0; n], shape)
    }

    pub fn id(&self) -> u64 {
        self.node.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.node.values
    }

    pub(crate) fn op(&self) -> &Op {
        &self.node.op
    }

    pub fn is_scalar(&self) -> bool {
        self.node.values.len() == 1
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on tensor of shape {:?}", self.shape());
        self.node.values[0]
    }

    fn cols(&self) -> Result<usize, TensorError> {
        if self.node.shape.len() == 2 {
            Ok(self.node.shape[1])
        } else {
            Err(TensorError::ShapeMismatch {
                op: "cols",
                details: format!("expected rank 2, got shape {:?}", self.shape()),
            })
        }
    }

    fn require_rank2(&self, op: &'static str) -> Result<(usize, usize), TensorError> {
        if self.node.shape.len() == 2 {
            Ok((self.node.shape[0], self.node.shape[1]))
        } else {
            Err(TensorError::ShapeMismatch {
                op,
                details: format!("expected rank 2, got shape {:?}", self.shape()),
            })
        }
    }

    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor, TensorError> {
        let (n, k) = self.require_rank2("matmul")?;
        let (k2, m) = rhs.require_rank2("matmul")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                details: format!("({n}, {k}) x ({k2}, {m})"),
            });
        }
        let values = matmul_raw(self.values(), n, k, rhs.values(), m);
        Tensor::from_op(
            values,
            vec![n, m],
            Op::Matmul {
                lhs: self.clone(),
                rhs: rhs.clone(),
            },
            "matmul",
        )
    }

    /// Elementwise addition. A rank-1 `rhs` of length `d` broadcasts across
    /// the rows of a rank-2 `(n, d)` `self`.
    pub fn add(&self, rhs: &Tensor) -> Result<Tensor, TensorError> {
        if self.shape() == rhs.shape() {
            let values = self
                .values()
                .iter()
                .zip(rhs.values())
                .map(|(a, b)| a + b)
                .collect();
            return Tensor::from_op(
                values,
                self.shape().to_vec(),
                Op::Add {
                    lhs: self.clone(),
                    rhs: rhs.clone(),
                    broadcast_row: false,
                },
                "add",
            );
        }
        let (n, d) = self.require_rank2("add")?;
        if rhs.shape() != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                details: format!("{:?} + {:?}", self.shape(), rhs.shape()),
            });
        }
        let mut values = Vec::with_capacity(n * d);
        for i in 0..n {
            for j in 0..d {
                values.push(self.values()[i * d + j] + rhs.values()[j]);
            }
        }
        Tensor::from_op(
            values,
            vec![n, d],
            Op::Add {
                lhs: self.clone(),
                rhs: rhs.clone(),
                broadcast_row: true,
            },
            "add",
        )
    }

    /// Elementwise product. A rank-2 `(n, 1)` `rhs` broadcasts across the
    /// columns of a rank-2 `(n, d)` `self`.
    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor, TensorError> {
        if self.shape() == rhs.shape() {
            let values = self
                .values()
                .iter()
                .zip(rhs.values())
                .map(|(a, b)| a * b)
                .collect();
            return Tensor::from_op(
                values,
                self.shape().to_vec(),
                Op::Mul {
                    lhs: self.clone(),
                    rhs: rhs.clone(),
                    broadcast_col: false,
                },
                "mul",
            );
        }
        let (n, d) = self.require_rank2("mul")?;
        if rhs.shape() != [n, 1] {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                details: format!("{:?} * {:?}", self.shape(), rhs.shape()),
            });
        }
        let mut values = Vec::with_capacity(n * d);
        for i in 0..n {
            let s = rhs.values()[i];
            for j in 0..d {
                values.push(self.values()[i * d + j] * s);
            }
        }
        Tensor::from_op(
            values,
            vec![n, d],
            Op::Mul {
                lhs: self.clone(),
                rhs: rhs.clone(),
                broadcast_col: true,
            },
            "mul",
        )
    }

    pub fn scale(&self, factor: f64) -> Result<Tensor, TensorError> {
        let values = self.values().iter().map(|v| v * factor).collect();
        Tensor::from_op(
            values,
            self.shape().to_vec(),
            Op::Scale {
                input: self.clone(),
                factor,
            },
            "scale",
        )
    }

    /// Concatenates rank-2 tensors with equal row counts along the last axis.
    pub fn concat_last_dim(inputs: &[Tensor]) -> Result<Tensor, TensorError> {
        if inputs.is_empty() {
            return Err(TensorError::InvalidArgument {
                op: "concat_last_dim",
                details: "no inputs".into(),
            });
        }
        let (n, _) = inputs[0].require_rank2("concat_last_dim")?;
        let mut total = 0;
        for t in inputs {
            let (rows, cols) = t.require_rank2("concat_last_dim")?;
            if rows != n {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_last_dim",
                    details: format!("row counts {n} vs {rows}"),
                });
            }
            total += cols;
        }
        let mut values = Vec::with_capacity(n * total);
        for i in 0..n {
            for t in inputs {
                let d = t.cols()?;
                values.extend_from_slice(&t.values()[i * d..(i + 1) * d]);
            }
        }
        Tensor::from_op(
            values,
            vec![n, total],
            Op::ConcatLastDim {
                inputs: inputs.to_vec(),
            },
            "concat_last_dim",
        )
    }

    pub fn slice_last_dim(&self, start: usize, len: usize) -> Result<Tensor, TensorError> {
        let (n, d) = self.require_rank2("slice_last_dim")?;
        if start + len > d {
            return Err(TensorError::InvalidArgument {
                op: "slice_last_dim",
                details: format!("slice {start}..{} of {d} columns", start + len),
            });
        }
        let mut values = Vec::with_capacity(n * len);
        for i in 0..n {
            values.extend_from_slice(&self.values()[i * d + start..i * d + start + len]);
        }
        Tensor::from_op(
            values,
            vec![n, len],
            Op::SliceLastDim {
                input: self.clone(),
                start,
                len,
            },
            "slice_last_dim",
        )
    }

    /// Selects rows of a rank-2 tensor; indices may repeat.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor, TensorError> {
        let (n, d) = self.require_rank2("gather_rows")?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(TensorError::InvalidArgument {
                op: "gather_rows",
                details: format!("row index {bad} out of {n}"),
            });
        }
        let mut values = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            values.extend_from_slice(&self.values()[i * d..(i + 1) * d]);
        }
        Tensor::from_op(
            values,
            vec![indices.len(), d],
            Op::GatherRows {
                input: self.clone(),
                indices: indices.to_vec(),
            },
            "gather_rows",
        )
    }

    /// Sums rows into `num_segments` output rows according to `segments`.
    /// Segments with no rows produce zeros.
    pub fn segment_sum(
        &self,
        segments: &[usize],
        num_segments: usize,
    ) -> Result<Tensor, TensorError> {
        let (n, d) = self.require_rank2("segment_sum")?;
        validate_segments(segments, n, num_segments, "segment_sum")?;
        let mut values = vec![0.0; num_segments * d];
        for (i, &s) in segments.iter().enumerate() {
            for j in 0..d {
                values[s * d + j] += self.values()[i * d + j];
            }
        }
        Tensor::from_op(
            values,
            vec![num_segments, d],
            Op::SegmentSum {
                input: self.clone(),
                segments: segments.to_vec(),
            },
            "segment_sum",
        )
    }

    /// Softmax over the rows sharing a segment id, independently per column.
    /// A row alone in its segment maps to exactly 1.
    pub fn segment_softmax(&self, segments: &[usize]) -> Result<Tensor, TensorError> {
        let (n, d) = self.require_rank2("segment_softmax")?;
        let num_segments = segments.iter().copied().max().map_or(0, |m| m + 1);
        validate_segments(segments, n, num_segments, "segment_softmax")?;
        let mut maxes = vec![f64::NEG_INFINITY; num_segments * d];
        for (i, &s) in segments.iter().enumerate() {
            for j in 0..d {
                let v = self.values()[i * d + j];
                if v > maxes[s * d + j] {
                    maxes[s * d + j] = v;
                }
            }
        }
        let mut sums = vec![0.0; num_segments * d];
        let mut values = vec![0.0; n * d];
        for (i, &s) in segments.iter().enumerate() {
            for j in 0..d {
                let e = (self.values()[i * d + j] - maxes[s * d + j]).exp();
                values[i * d + j] = e;
                sums[s * d + j] += e;
            }
        }
        for (i, &s) in segments.iter().enumerate() {
            for j in 0..d {
                values[i * d + j] /= sums[s * d + j];
            }
        }
        Tensor::from_op(
            values,
            vec![n, d],
            Op::SegmentSoftmax {
                input: self.clone(),
                segments: segments.to_vec(),
            },
            "segment_softmax",
        )
    }

    pub fn softmax_last_dim(&self) -> Result<Tensor, TensorError> {
        let (n, d) = self.require_rank2("softmax_last_dim")?;
        if d == 0 {
            return Err(TensorError::InvalidArgument {
                op: "softmax_last_dim",
                details: "zero columns".into(),
            });
        }
        let mut values = Vec::with_capacity(n * d);
        for i in 0..n {
            let row = &self.values()[i * d..(i + 1) * d];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            values.extend(exps.iter().map(|e| e / sum));
        }
        Tensor::from_op(
            values,
            vec![n, d],
            Op::SoftmaxLastDim {
                input: self.clone(),
            },
            "softmax_last_dim",
        )
    }

    pub fn log_softmax_last_dim(&self) -> Result<Tensor, TensorError> {
        let (n, d) = self.require_rank2("log_softmax_last_dim")?;
        if d == 0 {
            return Err(TensorError::InvalidArgument {
                op: "log_softmax_last_dim",
                details: "zero columns".into(),
            });
        }
        let mut values = Vec::with_capacity(n * d);
        for i in 0..n {
            let row = &self.values()[i * d..(i + 1) * d];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let log_sum = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            values.extend(row.iter().map(|v| v - log_sum));
        }
        Tensor::from_op(
            values,
            vec![n, d],
            Op::LogSoftmaxLastDim {
                input: self.clone(),
            },
            "log_softmax_last_dim",
        )
    }

    pub fn leaky_relu(&self, alpha: f64) -> Result<Tensor, TensorError> {
        let values = self
            .values()
            .iter()
            .map(|&v| if v > 0.0 { v } else { alpha * v })
            .collect();
        Tensor::from_op(
            values,
            self.shape().to_vec(),
            Op::LeakyRelu {
                input: self.clone(),
                alpha,
            },
            "leaky_relu",
        )
    }

    pub fn elu(&self) -> Result<Tensor, TensorError> {
        let values = self
            .values()
            .iter()
            .map(|&v| if v > 0.0 { v } else { v.exp() - 1.0 })
            .collect();
        Tensor::from_op(
            values,
            self.shape().to_vec(),
            Op::Elu {
                input: self.clone(),
            },
            "elu",
        )
    }

    pub fn relu(&self) -> Result<Tensor, TensorError> {
        let values = self.values().iter().map(|&v| v.max(0.0)).collect();
        Tensor::from_op(
            values,
            self.shape().to_vec(),
            Op::Relu {
                input: self.clone(),
            },
            "relu",
        )
    }

    pub fn sigmoid(&self) -> Result<Tensor, TensorError> {
        let values = self.values().iter().map(|&v| sigmoid_raw(v)).collect();
        Tensor::from_op(
            values,
            self.shape().to_vec(),
            Op::Sigmoid {
                input: self.clone(),
            },
            "sigmoid",
        )
    }

    /// Inverted dropout: keeps each element with probability `1 - p` and
    /// rescales survivors by `1 / (1 - p)`, so the expectation is unchanged.
    pub fn dropout<R: rand::Rng + ?Sized>(
        &self,
        p: f64,
        rng: &mut R,
    ) -> Result<Tensor, TensorError> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidArgument {
                op: "dropout",
                details: format!("p = {p} outside [0, 1)"),
            });
        }
        let keep = 1.0 - p;
        let mask: Vec<f64> = self
            .values()
            .iter()
            .map(|_| {
                if p == 0.0 || rng.random::<f64>() >= p {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let values = self
            .values()
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        Tensor::from_op(
            values,
            self.shape().to_vec(),
            Op::Dropout {
                input: self.clone(),
                mask,
            },
            "dropout",
        )
    }

    pub fn sum(&self) -> Result<Tensor, TensorError> {
        let total: f64 = self.values().iter().sum();
        Tensor::from_op(
            vec![total],
            vec![1],
            Op::Sum {
                input: self.clone(),
            },
            "sum",
        )
    }

    pub fn mean(&self) -> Result<Tensor, TensorError> {
        if self.values().is_empty() {
            return Err(TensorError::InvalidArgument {
                op: "mean",
                details: "empty tensor".into(),
            });
        }
        let total: f64 = self.values().iter().sum();
        let n = self.values().len() as f64;
        Tensor::from_op(
            vec![total / n],
            vec![1],
            Op::Mean {
                input: self.clone(),
            },
            "mean",
        )
    }

    /// Mean negative log likelihood over rows of log-probabilities.
    pub fn nll_mean(&self, labels: &[usize]) -> Result<Tensor, TensorError> {
        let (n, c) = self.require_rank2("nll_mean")?;
        if labels.len() != n || n == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "nll_mean",
                details: format!("{} labels for {n} rows", labels.len()),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(TensorError::InvalidArgument {
                op: "nll_mean",
                details: format!("label {bad} out of {c} classes"),
            });
        }
        let mut total = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            total -= self.values()[i * c + label];
        }
        Tensor::from_op(
            vec![total / n as f64],
            vec![1],
            Op::NllMean {
                logp: self.clone(),
                labels: labels.to_vec(),
            },
            "nll_mean",
        )
    }

    /// Numerically stable mean binary cross entropy on raw logits.
    pub fn bce_with_logits_mean(&self, targets: &[f64]) -> Result<Tensor, TensorError> {
        let n = self.values().len();
        if targets.len() != n || n == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "bce_with_logits_mean",
                details: format!("{} targets for {n} logits", targets.len()),
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| !(0.0..=1.0).contains(&t)) {
            return Err(TensorError::InvalidArgument {
                op: "bce_with_logits_mean",
                details: format!("target {bad} outside [0, 1]"),
            });
        }
        let mut total = 0.0;
        for (&x, &t) in self.values().iter().zip(targets) {
            total += x.max(0.0) - x * t + (-x.abs()).exp().ln_1p();
        }
        Tensor::from_op(
            vec![total / n as f64],
            vec![1],
            Op::BceWithLogitsMean {
                logits: self.clone(),
                targets: targets.to_vec(),
            },
            "bce_with_logits_mean",
        )
    }
}

fn validate_segments(
    segments: &[usize],
    rows: usize,
    num_segments: usize,
    op: &'static str,
) -> Result<(), TensorError> {
    if segments.len() != rows {
        return Err(TensorError::ShapeMismatch {
            op,
            details: format!("{} segment ids for {rows} rows", segments.len()),
        });
    }
    if let Some(&bad) = segments.iter().find(|&&s| s >= num_segments) {
        return Err(TensorError::InvalidArgument {
            op,
            details: format!("segment {bad} out of {num_segments}"),
        });
    }
    Ok(())
}

pub(crate) fn matmul_raw(a: &[f64], n: usize, k: usize, b: &[f64], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            let orow = &mut out[i * m..(i + 1) * m];
            for j in 0..m {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

pub(crate) fn sigmoid_raw(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
