//! Differentiable computation substrate: tensors, a reverse-mode tape, the
//! layer types every network is assembled from, RMSProp, and a
//! finite-difference gradient verifier.

mod gradcheck;
mod layers;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use layers::{AttentionOutput, DenseLayer, GruCell, MultiHeadAttention};
pub use optim::RmsPropState;
pub use params::{Gradients, ParamId, ParamStore, Parameter};
pub use tape::{log_softmax_row, softmax_row, Graph, Var};
pub use tensor::{Scalar, Tensor};

use alloc::vec::Vec;

use crate::error::Result;

/// Axis for [`softmax`] on a matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

/// Numerically stabilised softmax. `Axis::Cols` normalises each row across its
/// columns; `Axis::Rows` normalises each column.
pub fn softmax<S: Scalar>(x: &Tensor<S>, axis: Axis) -> Tensor<S> {
    let (r, c) = (x.rows(), x.cols());
    let mut out = x.clone();
    match axis {
        Axis::Cols => {
            for i in 0..r {
                let row = softmax_row(x.row(i));
                out.data_mut()[i * c..(i + 1) * c].copy_from_slice(&row);
            }
        }
        Axis::Rows => {
            for j in 0..c {
                let col: Vec<S> = (0..r).map(|i| x.at(i, j)).collect();
                for (i, v) in softmax_row(&col).into_iter().enumerate() {
                    out.data_mut()[i * c + j] = v;
                }
            }
        }
    }
    out
}

/// Evaluates a dense layer on a plain tensor.
pub fn dense_forward<S: Scalar>(
    store: &ParamStore<S>,
    layer: &DenseLayer,
    x: &Tensor<S>,
) -> Result<Tensor<S>> {
    let mut g = Graph::new(store);
    let xv = g.constant(x.clone());
    let y = layer.forward(&mut g, xv)?;
    Ok(g.value(y).clone())
}

/// One GRU update on plain tensors.
pub fn gru_step<S: Scalar>(
    store: &ParamStore<S>,
    cell: &GruCell,
    x: &Tensor<S>,
    h_prev: &Tensor<S>,
) -> Result<Tensor<S>> {
    let mut g = Graph::new(store);
    let xv = g.constant(x.clone());
    let hv = g.constant(h_prev.clone());
    let h = cell.step(&mut g, xv, hv)?;
    Ok(g.value(h).clone())
}

/// Attention on plain tensors; returns the output and per-head weights.
pub fn attention_forward<S: Scalar>(
    store: &ParamStore<S>,
    att: &MultiHeadAttention,
    query: &Tensor<S>,
    keys: &[Tensor<S>],
    values: &[Tensor<S>],
) -> Result<(Tensor<S>, Vec<Tensor<S>>)> {
    let mut g = Graph::new(store);
    let q = g.constant(query.clone());
    let ks: Vec<Var> = keys.iter().map(|k| g.constant(k.clone())).collect();
    let vs: Vec<Var> = values.iter().map(|v| g.constant(v.clone())).collect();
    let out = att.forward(&mut g, q, &ks, &vs)?;
    let weights = out.weights.iter().map(|&w| g.value(w).clone()).collect();
    Ok((g.value(out.output).clone(), weights))
}
