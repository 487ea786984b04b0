//! Elman recurrent cell:
//! `h_t = σ(W_h [h_{t-1}, x_t] + b_h)`, `o_t = tanh(W_o h_t + b_o)`.

use super::{sigmoid, uniform_fill, Params, Rng64, Tensor3};
use crate::error::{Result, RomError};
use crate::linalg::{axpy, dot, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct ElmanCellParams {
    /// `hidden × (hidden + input)`
    pub w_h: Matrix,
    pub b_h: Vec<f64>,
    /// `outputs × hidden`
    pub w_o: Matrix,
    pub b_o: Vec<f64>,
}

impl ElmanCellParams {
    pub fn zeros(input: usize, hidden: usize, outputs: usize) -> Self {
        Self {
            w_h: Matrix::zeros(hidden, hidden + input),
            b_h: vec![0.0; hidden],
            w_o: Matrix::zeros(outputs, hidden),
            b_o: vec![0.0; outputs],
        }
    }

    pub fn init(input: usize, hidden: usize, outputs: usize, rng: &mut Rng64) -> Self {
        let mut p = Self::zeros(input, hidden, outputs);
        uniform_fill(rng, hidden + input, p.w_h.as_mut_slice());
        uniform_fill(rng, hidden + input, &mut p.b_h);
        uniform_fill(rng, hidden, p.w_o.as_mut_slice());
        uniform_fill(rng, hidden, &mut p.b_o);
        p
    }

    pub fn hidden(&self) -> usize {
        self.w_h.rows()
    }

    pub fn input(&self) -> usize {
        self.w_h.cols() - self.w_h.rows()
    }

    pub fn outputs(&self) -> usize {
        self.w_o.rows()
    }
}

impl Params for ElmanCellParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![
            self.w_h.as_slice(),
            &self.b_h,
            self.w_o.as_slice(),
            &self.b_o,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w_h.as_mut_slice(),
            &mut self.b_h,
            self.w_o.as_mut_slice(),
            &mut self.b_o,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct ElmanCache {
    batch: usize,
    steps: usize,
    /// `[h_{t-1}, x_t]` per step
    z: Vec<f64>,
    h: Vec<f64>,
    o: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ElmanOutput {
    /// `o_t` for every step, `batch × steps × outputs`.
    pub outputs: Tensor3,
    pub hidden: Tensor3,
    pub cache: ElmanCache,
}

pub fn elman_forward(params: &ElmanCellParams, x: &Tensor3, h0: &Matrix) -> Result<ElmanOutput> {
    let (hid, inp, out) = (params.hidden(), params.input(), params.outputs());
    if x.features() != inp {
        return Err(RomError::shape(format!(
            "elman cell expects {inp} input features, got {}",
            x.features()
        )));
    }
    let (batch, steps) = (x.batch(), x.steps());
    if h0.shape() != (batch, hid) {
        return Err(RomError::shape("elman h0 shape"));
    }
    let zlen = hid + inp;
    let mut cache = ElmanCache {
        batch,
        steps,
        z: vec![0.0; batch * steps * zlen],
        h: vec![0.0; batch * steps * hid],
        o: vec![0.0; batch * steps * out],
    };
    let mut outputs = Tensor3::zeros(batch, steps, out);
    let mut hidden = Tensor3::zeros(batch, steps, hid);
    for b in 0..batch {
        let mut h = h0.row(b).to_vec();
        for t in 0..steps {
            let bt = b * steps + t;
            let z = &mut cache.z[bt * zlen..(bt + 1) * zlen];
            z[..hid].copy_from_slice(&h);
            z[hid..].copy_from_slice(x.at(b, t));
            for j in 0..hid {
                h[j] = sigmoid(dot(params.w_h.row(j), z) + params.b_h[j]);
            }
            cache.h[bt * hid..(bt + 1) * hid].copy_from_slice(&h);
            hidden.at_mut(b, t).copy_from_slice(&h);
            let o = outputs.at_mut(b, t);
            for k in 0..out {
                o[k] = (dot(params.w_o.row(k), &h) + params.b_o[k]).tanh();
            }
            cache.o[bt * out..(bt + 1) * out].copy_from_slice(o);
        }
    }
    Ok(ElmanOutput {
        outputs,
        hidden,
        cache,
    })
}

/// Returns `(param_grads, grad_x, grad_h0)` for upstream gradients on `o_t`.
pub fn elman_backward(
    params: &ElmanCellParams,
    cache: &ElmanCache,
    grad_outputs: &Tensor3,
) -> Result<(ElmanCellParams, Tensor3, Matrix)> {
    let (hid, inp, out) = (params.hidden(), params.input(), params.outputs());
    let (batch, steps) = (cache.batch, cache.steps);
    if (
        grad_outputs.batch(),
        grad_outputs.steps(),
        grad_outputs.features(),
    ) != (batch, steps, out)
    {
        return Err(RomError::shape("elman backward: output gradient shape"));
    }
    let zlen = hid + inp;
    let mut grads = params.zeros_like();
    let mut grad_x = Tensor3::zeros(batch, steps, inp);
    let mut grad_h0 = Matrix::zeros(batch, hid);
    let mut dz = vec![0.0; zlen];
    for b in 0..batch {
        let mut dh_next = vec![0.0; hid];
        for t in (0..steps).rev() {
            let bt = b * steps + t;
            let h = &cache.h[bt * hid..(bt + 1) * hid];
            let o = &cache.o[bt * out..(bt + 1) * out];
            let mut dh = dh_next.clone();
            for (k, &go) in grad_outputs.at(b, t).iter().enumerate() {
                let da = go * (1.0 - o[k] * o[k]);
                if da == 0.0 {
                    continue;
                }
                axpy(da, h, grads.w_o.row_mut(k));
                grads.b_o[k] += da;
                axpy(da, params.w_o.row(k), &mut dh);
            }
            let z = &cache.z[bt * zlen..(bt + 1) * zlen];
            dz.fill(0.0);
            for j in 0..hid {
                let da = dh[j] * h[j] * (1.0 - h[j]);
                if da == 0.0 {
                    continue;
                }
                axpy(da, z, grads.w_h.row_mut(j));
                grads.b_h[j] += da;
                axpy(da, params.w_h.row(j), &mut dz);
            }
            dh_next.copy_from_slice(&dz[..hid]);
            grad_x.at_mut(b, t).copy_from_slice(&dz[hid..]);
        }
        grad_h0.row_mut(b).copy_from_slice(&dh_next);
    }
    Ok((grads, grad_x, grad_h0))
}
