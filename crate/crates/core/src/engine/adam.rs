use super::real::Real;
use super::tensor::Tensor;
use crate::{Error, Result};

/// Adam optimizer state: first/second moment accumulators per parameter plus
/// the shared step counter and hyperparameters.
#[derive(Debug, Clone)]
pub struct AdamState<R> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Tensor<R>>,
    v: Vec<Tensor<R>>,
}

impl<R: Real> AdamState<R> {
    /// Defaults: lr 0.001, beta1 0.9, beta2 0.999, eps 1e-8.
    pub fn new(params: &[Tensor<R>]) -> Self {
        Self::with_hyperparameters(params, 0.001, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparameters(
        params: &[Tensor<R>],
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) -> Self {
        AdamState {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.dims().to_vec())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.dims().to_vec())).collect(),
        }
    }
}

/// One Adam update with bias correction, applied in place to every parameter.
pub fn adam_step<R: Real>(
    params: &mut [Tensor<R>],
    grads: &[Tensor<R>],
    state: &mut AdamState<R>,
) -> Result<()> {
    if params.len() != state.m.len() || params.len() != grads.len() {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            lhs: vec![params.len(), grads.len()],
            rhs: vec![state.m.len()],
        });
    }
    for ((p, g), (m, v)) in params
        .iter()
        .zip(grads)
        .zip(state.m.iter().zip(&state.v))
    {
        if p.dims() != g.dims() || p.dims() != m.dims() || p.dims() != v.dims() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: p.dims().to_vec(),
                rhs: g.dims().to_vec(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - state.beta1.powi(t);
    let bias2 = 1.0 - state.beta2.powi(t);
    let (b1, b2) = (R::from_f64(state.beta1), R::from_f64(state.beta2));
    let one_minus_b1 = R::from_f64(1.0 - state.beta1);
    let one_minus_b2 = R::from_f64(1.0 - state.beta2);
    let lr = R::from_f64(state.lr);
    let eps = R::from_f64(state.eps);
    let inv_bias1 = R::from_f64(1.0 / bias1);
    let inv_bias2 = R::from_f64(1.0 / bias2);

    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
        {
            *mv = b1 * *mv + one_minus_b1 * gv;
            *vv = b2 * *vv + one_minus_b2 * gv * gv;
            let m_hat = *mv * inv_bias1;
            let v_hat = *vv * inv_bias2;
            *pv -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
