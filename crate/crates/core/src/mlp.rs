//! Baseline link decoder: `sigmoid(MLP(z_u ‖ z_v))`.

use crate::dgcnn::Prediction;
use crate::error::{Error, Result};
use crate::init::glorot;
use rand::Rng;
use tgn_seal_autograd::{ParamId, ParamStore, Scalar, Tape, Tensor, Var};

/// Two relu hidden layers of width `d` and a scalar output.
#[derive(Clone, Debug)]
pub struct MlpDecoder {
    pub d: usize,
    layers: Vec<(ParamId, ParamId)>,
}

impl MlpDecoder {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        d: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let dims = [(2 * d, d), (d, d), (d, 1)];
        let mut layers = Vec::with_capacity(dims.len());
        for (i, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let w = store.add(format!("mlp.l{i}.w"), glorot(rng, vec![fan_in, fan_out], fan_in, fan_out))?;
            let b = store.add(format!("mlp.l{i}.b"), Tensor::zeros(vec![fan_out]))?;
            layers.push((w, b));
        }
        Ok(Self { d, layers })
    }

    /// Logit for `z_u [1 × d]` and `z_v [1 × d]`.
    pub fn logit_on_tape<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        z_u: Var,
        z_v: Var,
        grad: bool,
    ) -> Result<Var> {
        let mut h = tape.concat(&[z_u, z_v], 1)?;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let (w, b) = if grad {
                (tape.param(store, w), tape.param(store, b))
            } else {
                (tape.param_const(store, w), tape.param_const(store, b))
            };
            let lin = tape.matmul(h, w)?;
            h = tape.add_bias(lin, b)?;
            if i < last {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}

pub fn baseline_mlp_decode<T: Scalar>(
    z_u: &[T],
    z_v: &[T],
    mlp: &MlpDecoder,
    store: &ParamStore<T>,
) -> Result<Prediction> {
    if z_u.len() != mlp.d || z_v.len() != mlp.d {
        return Err(Error::Contract(format!(
            "embedding widths {} and {} do not match decoder width {}",
            z_u.len(),
            z_v.len(),
            mlp.d
        )));
    }
    let mut tape = Tape::new();
    let u = tape.constant(Tensor::new(vec![1, mlp.d], z_u.to_vec())?);
    let v = tape.constant(Tensor::new(vec![1, mlp.d], z_v.to_vec())?);
    let logit = mlp.logit_on_tape(&mut tape, store, u, v, false)?;
    let y = tape.sigmoid(logit);
    Ok(Prediction {
        y_hat: tape.value(y).data()[0].as_f64(),
        logit: tape.value(logit).data()[0].as_f64(),
    })
}
