//! Reverse-mode differentiation over recorded tensor expressions.

use std::collections::{BTreeMap, BTreeSet};

use super::{matmul_raw, sigmoid_raw, Op, Tensor, TensorError};

/// Gradients keyed by tensor id, one buffer per tensor reached from the
/// backward root. Tensors not touched by the loss are simply absent.
pub struct GradMap {
    grads: BTreeMap<u64, Vec<f64>>,
}

impl GradMap {
    pub fn get(&self, tensor: &Tensor) -> Option<&[f64]> {
        self.grads.get(&tensor.id()).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    fn buffer(&mut self, tensor: &Tensor) -> &mut Vec<f64> {
        self.grads
            .entry(tensor.id())
            .or_insert_with(|| vec![0.0; tensor.values().len()])
    }
}

impl Tensor {
    /// Differentiates this scalar with respect to every tensor in its
    /// expression graph.
    pub fn backward(&self) -> Result<GradMap, TensorError> {
        if !self.is_scalar() {
            return Err(TensorError::NonScalarRoot {
                shape: self.shape().to_vec(),
            });
        }
        let order = topo_order(self);
        let mut grads = GradMap {
            grads: BTreeMap::new(),
        };
        grads.buffer(self)[0] = 1.0;
        for tensor in order.into_iter().rev() {
            let Some(dy) = grads.grads.get(&tensor.id()).cloned() else {
                continue;
            };
            accumulate(&tensor, &dy, &mut grads);
        }
        Ok(grads)
    }
}

/// Post-order over the expression DAG, visiting each tensor once.
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut seen = BTreeSet::new();
    // Stack entries are (tensor, children_pushed).
    let mut stack = vec![(root.clone(), false)];
    while let Some((tensor, expanded)) = stack.pop() {
        if expanded {
            order.push(tensor);
            continue;
        }
        if !seen.insert(tensor.id()) {
            continue;
        }
        let inputs: Vec<Tensor> = op_inputs(tensor.op()).into_iter().cloned().collect();
        stack.push((tensor, true));
        for input in inputs {
            stack.push((input, false));
        }
    }
    order
}

fn op_inputs(op: &Op) -> Vec<&Tensor> {
    match op {
        Op::Leaf => vec![],
        Op::Matmul { lhs, rhs } | Op::Add { lhs, rhs, .. } | Op::Mul { lhs, rhs, .. } => {
            vec![lhs, rhs]
        }
        Op::ConcatLastDim { inputs } => inputs.iter().collect(),
        Op::Scale { input, .. }
        | Op::SliceLastDim { input, .. }
        | Op::GatherRows { input, .. }
        | Op::SegmentSum { input, .. }
        | Op::SegmentSoftmax { input, .. }
        | Op::SoftmaxLastDim { input }
        | Op::LogSoftmaxLastDim { input }
        | Op::LeakyRelu { input, .. }
        | Op::Elu { input }
        | Op::Relu { input }
        | Op::Sigmoid { input }
        | Op::Dropout { input, .. }
        | Op::Sum { input }
        | Op::Mean { input } => vec![input],
        Op::NllMean { logp, .. } => vec![logp],
        Op::BceWithLogitsMean { logits, .. } => vec![logits],
    }
}

/// Adds this tensor's contribution `dy` to the gradients of its inputs.
fn accumulate(tensor: &Tensor, dy: &[f64], grads: &mut GradMap) {
    match tensor.op() {
        Op::Leaf => {}
        Op::Matmul { lhs, rhs } => {
            let n = lhs.shape()[0];
            let k = lhs.shape()[1];
            let m = rhs.shape()[1];
            // dL = dY . R^T computed as dY (n x m) times R^T (m x k).
            let rhs_t = transpose(rhs.values(), k, m);
            let dl = matmul_raw(dy, n, m, &rhs_t, k);
            add_into(grads.buffer(lhs), &dl);
            let lhs_t = transpose(lhs.values(), n, k);
            let dr = matmul_raw(&lhs_t, k, n, dy, m);
            add_into(grads.buffer(rhs), &dr);
        }
        Op::Add {
            lhs,
            rhs,
            broadcast_row,
        } => {
            add_into(grads.buffer(lhs), dy);
            if *broadcast_row {
                let d = rhs.values().len();
                let buf = grads.buffer(rhs);
                for (i, &g) in dy.iter().enumerate() {
                    buf[i % d] += g;
                }
            } else {
                add_into(grads.buffer(rhs), dy);
            }
        }
        Op::Mul {
            lhs,
            rhs,
            broadcast_col,
        } => {
            if *broadcast_col {
                let d = lhs.shape()[1];
                {
                    let buf = grads.buffer(lhs);
                    for (i, &g) in dy.iter().enumerate() {
                        buf[i] += g * rhs.values()[i / d];
                    }
                }
                let buf = grads.buffer(rhs);
                for (i, &g) in dy.iter().enumerate() {
                    buf[i / d] += g * lhs.values()[i];
                }
            } else {
                {
                    let buf = grads.buffer(lhs);
                    for (i, &g) in dy.iter().enumerate() {
                        buf[i] += g * rhs.values()[i];
                    }
                }
                let buf = grads.buffer(rhs);
                for (i, &g) in dy.iter().enumerate() {
                    buf[i] += g * lhs.values()[i];
                }
            }
        }
        Op::Scale { input, factor } => {
            let buf = grads.buffer(input);
            for (i, &g) in dy.iter().enumerate() {
                buf[i] += g * factor;
            }
        }
        Op::ConcatLastDim { inputs } => {
            let n = tensor.shape()[0];
            let total = tensor.shape()[1];
            let mut offset = 0;
            for input in inputs {
                let d = input.shape()[1];
                let buf = grads.buffer(input);
                for i in 0..n {
                    for j in 0..d {
                        buf[i * d + j] += dy[i * total + offset + j];
                    }
                }
                offset += d;
            }
        }
        Op::SliceLastDim { input, start, len } => {
            let n = tensor.shape()[0];
            let d = input.shape()[1];
            let buf = grads.buffer(input);
            for i in 0..n {
                for j in 0..*len {
                    buf[i * d + start + j] += dy[i * len + j];
                }
            }
        }
        Op::GatherRows { input, indices } => {
            let d = input.shape()[1];
            let buf = grads.buffer(input);
            for (row, &src) in indices.iter().enumerate() {
                for j in 0..d {
                    buf[src * d + j] += dy[row * d + j];
                }
            }
        }
        Op::SegmentSum {
            input, segments, ..
        } => {
            let d = input.shape()[1];
            let buf = grads.buffer(input);
            for (row, &seg) in segments.iter().enumerate() {
                for j in 0..d {
                    buf[row * d + j] += dy[seg * d + j];
                }
            }
        }
        Op::SegmentSoftmax { input, segments } => {
            let d = input.shape()[1];
            let y = tensor.values();
            let num_segments = segments.iter().copied().max().map_or(0, |m| m + 1);
            // dot[s][j] = sum over rows in segment s of y * dy, per column.
            let mut dot = vec![0.0; num_segments * d];
            for (row, &seg) in segments.iter().enumerate() {
                for j in 0..d {
                    dot[seg * d + j] += y[row * d + j] * dy[row * d + j];
                }
            }
            let buf = grads.buffer(input);
            for (row, &seg) in segments.iter().enumerate() {
                for j in 0..d {
                    let idx = row * d + j;
                    buf[idx] += y[idx] * (dy[idx] - dot[seg * d + j]);
                }
            }
        }
        Op::SoftmaxLastDim { input } => {
            let n = tensor.shape()[0];
            let d = tensor.shape()[1];
            let y = tensor.values();
            let buf = grads.buffer(input);
            for i in 0..n {
                let row = i * d;
                let dot: f64 = (0..d).map(|j| y[row + j] * dy[row + j]).sum();
                for j in 0..d {
                    buf[row + j] += y[row + j] * (dy[row + j] - dot);
                }
            }
        }
        Op::LogSoftmaxLastDim { input } => {
            let n = tensor.shape()[0];
            let d = tensor.shape()[1];
            let logp = tensor.values();
            let buf = grads.buffer(input);
            for i in 0..n {
                let row = i * d;
                let sum: f64 = (0..d).map(|j| dy[row + j]).sum();
                for j in 0..d {
                    buf[row + j] += dy[row + j] - logp[row + j].exp() * sum;
                }
            }
        }
        Op::LeakyRelu { input, alpha } => {
            let buf = grads.buffer(input);
            for (i, &g) in dy.iter().enumerate() {
                let slope = if input.values()[i] > 0.0 { 1.0 } else { *alpha };
                buf[i] += g * slope;
            }
        }
        Op::Elu { input } => {
            let y = tensor.values();
            let buf = grads.buffer(input);
            for (i, &g) in dy.iter().enumerate() {
                let slope = if input.values()[i] > 0.0 {
                    1.0
                } else {
                    y[i] + 1.0
                };
                buf[i] += g * slope;
            }
        }
        Op::Relu { input } => {
            let buf = grads.buffer(input);
            for (i, &g) in dy.iter().enumerate() {
                if input.values()[i] > 0.0 {
                    buf[i] += g;
                }
            }
        }
        Op::Sigmoid { input } => {
            let y = tensor.values();
            let buf = grads.buffer(input);
            for (i, &g) in dy.iter().enumerate() {
                buf[i] += g * y[i] * (1.0 - y[i]);
            }
        }
        Op::Dropout { input, mask } => {
            let buf = grads.buffer(input);
            for (i, &g) in dy.iter().enumerate() {
                buf[i] += g * mask[i];
            }
        }
        Op::Sum { input } => {
            let g = dy[0];
            let buf = grads.buffer(input);
            for v in buf.iter_mut() {
                *v += g;
            }
        }
        Op::Mean { input } => {
            let g = dy[0] / input.values().len() as f64;
            let buf = grads.buffer(input);
            for v in buf.iter_mut() {
                *v += g;
            }
        }
        Op::NllMean { logp, labels } => {
            let c = logp.shape()[1];
            let g = dy[0] / labels.len() as f64;
            let buf = grads.buffer(logp);
            for (i, &label) in labels.iter().enumerate() {
                buf[i * c + label] -= g;
            }
        }
        Op::BceWithLogitsMean { logits, targets } => {
            let g = dy[0] / targets.len() as f64;
            let buf = grads.buffer(logits);
            for (i, &t) in targets.iter().enumerate() {
                buf[i] += g * (sigmoid_raw(logits.values()[i]) - t);
            }
        }
    }
}

fn transpose(values: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = values[i * cols + j];
        }
    }
    out
}

fn add_into(buf: &mut [f64], delta: &[f64]) {
    for (b, d) in buf.iter_mut().zip(delta) {
        *b += d;
    }
}
