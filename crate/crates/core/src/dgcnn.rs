//! DGCNN graph classifier: graph convolutions, SortPooling, a 1-D
//! convolutional head and a dense output with sigmoid.

use crate::error::{config, Result};
use crate::init::glorot;
use crate::seal::EnclosingSubgraph;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::sync::Arc;
use tgn_seal_autograd::{ParamId, ParamStore, Scalar, SparseMatrix, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DgcnnConfig {
    pub in_dim: usize,
    pub channels: Vec<usize>,
    pub sortpool_k: usize,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub conv2_kernel: usize,
    pub pool_width: usize,
    pub dense_units: usize,
    pub dropout: f64,
}

impl DgcnnConfig {
    pub fn total_channels(&self) -> usize {
        self.channels.iter().sum()
    }

    /// Length of the second convolution's output.
    fn conv2_len(&self) -> Option<usize> {
        let pooled = self.sortpool_k / self.pool_width;
        pooled.checked_sub(self.conv2_kernel).map(|l| l + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.channels.is_empty() || self.channels.contains(&0) {
            return Err(config("DGCNN input width and channels must be positive"));
        }
        if self.conv1_filters == 0 || self.conv2_filters == 0 || self.dense_units == 0 {
            return Err(config("DGCNN filter and unit counts must be positive"));
        }
        if self.pool_width == 0 || self.conv2_kernel == 0 {
            return Err(config("pool width and conv2 kernel must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.conv2_len().is_none() {
            return Err(config(format!(
                "sortpool_k={} too small: needs at least {} rows for pool width {} and conv2 kernel {}",
                self.sortpool_k,
                self.pool_width * self.conv2_kernel,
                self.pool_width,
                self.conv2_kernel
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub y_hat: f64,
    pub logit: f64,
}

#[derive(Clone, Debug)]
pub struct Dgcnn {
    pub cfg: DgcnnConfig,
    gc: Vec<ParamId>,
    conv1_w: ParamId,
    conv1_b: ParamId,
    conv2_w: ParamId,
    conv2_b: ParamId,
    dense_w: ParamId,
    dense_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

/// Row order for SortPooling: descending by the last channel, ties broken by
/// the channels to its left, then by original position.
pub fn sort_order<T: Scalar>(h: &Tensor<T>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..h.rows()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (h.row(a), h.row(b));
        for c in (0..ra.len()).rev() {
            match rb[c].partial_cmp(&ra[c]) {
                Some(Ordering::Equal) | None => continue,
                Some(o) => return o,
            }
        }
        Ordering::Equal
    });
    order
}

/// Top `k` rows of `h` in sort order, zero-padded to exactly `k` rows.
pub fn sort_pooling<T: Scalar>(tape: &mut Tape<T>, h: Var, k: usize) -> Result<Var> {
    let order = sort_order(tape.value(h));
    let rows = (0..k).map(|i| order.get(i).copied()).collect();
    Ok(tape.gather_rows(h, rows)?)
}

impl Dgcnn {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        cfg: DgcnnConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut gc = Vec::with_capacity(cfg.channels.len());
        let mut prev = cfg.in_dim;
        for (l, &c) in cfg.channels.iter().enumerate() {
            gc.push(store.add(format!("dgcnn.gc{l}.w"), glorot(rng, vec![prev, c], prev, c))?);
            prev = c;
        }
        let c_total = cfg.total_channels();
        let (f1, f2, k2) = (cfg.conv1_filters, cfg.conv2_filters, cfg.conv2_kernel);
        let flat = f2 * cfg.conv2_len().expect("validated");
        let conv1_w = store.add("dgcnn.conv1.w", glorot(rng, vec![f1, 1, c_total], c_total, f1))?;
        let conv1_b = store.add("dgcnn.conv1.b", Tensor::zeros(vec![f1]))?;
        let conv2_w = store.add("dgcnn.conv2.w", glorot(rng, vec![f2, f1, k2], f1 * k2, f2))?;
        let conv2_b = store.add("dgcnn.conv2.b", Tensor::zeros(vec![f2]))?;
        let d = cfg.dense_units;
        let dense_w = store.add("dgcnn.dense.w", glorot(rng, vec![flat, d], flat, d))?;
        let dense_b = store.add("dgcnn.dense.b", Tensor::zeros(vec![d]))?;
        let out_w = store.add("dgcnn.out.w", glorot(rng, vec![d, 1], d, 1))?;
        let out_b = store.add("dgcnn.out.b", Tensor::zeros(vec![1]))?;
        Ok(Self {
            cfg,
            gc,
            conv1_w,
            conv1_b,
            conv2_w,
            conv2_b,
            dense_w,
            dense_b,
            out_w,
            out_b,
        })
    }

    /// `D̃⁻¹ Ã` of the subgraph.
    pub fn propagation<T: Scalar>(sub: &EnclosingSubgraph) -> Result<Arc<SparseMatrix<T>>> {
        Ok(Arc::new(SparseMatrix::mean_aggregation(&sub.adj)?))
    }

    fn p<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, id: ParamId, grad: bool) -> Var {
        if grad {
            tape.param(store, id)
        } else {
            tape.param_const(store, id)
        }
    }

    /// Stacked layers `tanh(D̃⁻¹ Ã H W_l)`, concatenated along channels.
    pub fn graph_conv_stack<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        prop: &Arc<SparseMatrix<T>>,
        x: Var,
        grad: bool,
    ) -> Result<Var> {
        let mut h = x;
        let mut outs = Vec::with_capacity(self.gc.len());
        for &w in &self.gc {
            let w = Self::p(tape, store, w, grad);
            let agg = tape.spmm(Arc::clone(prop), h)?;
            let lin = tape.matmul(agg, w)?;
            h = tape.tanh(lin);
            outs.push(h);
        }
        Ok(tape.concat(&outs, 1)?)
    }

    /// Logit for a subgraph with node features `x`. A `dropout_rng` turns on
    /// training-mode dropout.
    #[allow(clippy::too_many_arguments)]
    pub fn logit_on_tape<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        prop: &Arc<SparseMatrix<T>>,
        x: Var,
        dropout_rng: Option<&mut dyn RngCore>,
        grad: bool,
    ) -> Result<Var> {
        let cfg = &self.cfg;
        let c_total = cfg.total_channels();
        let h = self.graph_conv_stack(tape, store, prop, x, grad)?;
        let pooled = sort_pooling(tape, h, cfg.sortpool_k)?;
        let flat = tape.reshape(pooled, vec![1, cfg.sortpool_k * c_total])?;

        let (w1, b1) = (
            Self::p(tape, store, self.conv1_w, grad),
            Self::p(tape, store, self.conv1_b, grad),
        );
        let c1 = tape.conv1d(flat, w1, b1, c_total)?;
        let c1 = tape.relu(c1);
        let c1 = tape.maxpool1d(c1, cfg.pool_width)?;
        let (w2, b2) = (
            Self::p(tape, store, self.conv2_w, grad),
            Self::p(tape, store, self.conv2_b, grad),
        );
        let c2 = tape.conv1d(c1, w2, b2, 1)?;
        let c2 = tape.relu(c2);
        let len = tape.value(c2).len();
        let c2 = tape.reshape(c2, vec![1, len])?;

        let (dw, db) = (
            Self::p(tape, store, self.dense_w, grad),
            Self::p(tape, store, self.dense_b, grad),
        );
        let d = tape.matmul(c2, dw)?;
        let d = tape.add_bias(d, db)?;
        let mut d = tape.relu(d);
        if let Some(rng) = dropout_rng {
            if cfg.dropout > 0.0 {
                let keep = 1.0 - cfg.dropout;
                let mask = (0..cfg.dense_units)
                    .map(|_| if rng.gen::<f64>() < keep { T::lit(1.0 / keep) } else { T::zero() })
                    .collect();
                let mask = tape.constant(Tensor::new(vec![1, cfg.dense_units], mask)?);
                d = tape.mul(d, mask)?;
            }
        }
        let (ow, ob) = (
            Self::p(tape, store, self.out_w, grad),
            Self::p(tape, store, self.out_b, grad),
        );
        let o = tape.matmul(d, ow)?;
        Ok(tape.add_bias(o, ob)?)
    }

    /// Evaluation-mode prediction for precomputed features `x [n_sub × in_dim]`.
    pub fn predict_link<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        sub: &EnclosingSubgraph,
        x: &Tensor<T>,
    ) -> Result<Prediction> {
        let mut tape = Tape::new();
        let prop = Self::propagation(sub)?;
        let xv = tape.constant(x.clone());
        let logit = self.logit_on_tape(&mut tape, store, &prop, xv, None, false)?;
        let y = tape.sigmoid(logit);
        Ok(Prediction {
            y_hat: tape.value(y).data()[0].as_f64(),
            logit: tape.value(logit).data()[0].as_f64(),
        })
    }
}
