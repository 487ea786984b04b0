//! Fully connected layer `y = W x + b`.

use super::{uniform_fill, Params, Rng64};
use crate::error::{Result, RomError};
use crate::linalg::{axpy, dot, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    /// `outputs × inputs`
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl DenseParams {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            w: Matrix::zeros(outputs, inputs),
            b: vec![0.0; outputs],
        }
    }

    pub fn init(inputs: usize, outputs: usize, rng: &mut Rng64) -> Self {
        let mut p = Self::zeros(inputs, outputs);
        uniform_fill(rng, inputs, p.w.as_mut_slice());
        uniform_fill(rng, inputs, &mut p.b);
        p
    }

    pub fn inputs(&self) -> usize {
        self.w.cols()
    }

    pub fn outputs(&self) -> usize {
        self.w.rows()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.inputs() {
            return Err(RomError::shape(format!(
                "dense layer expects {} inputs, got {}",
                self.inputs(),
                x.len()
            )));
        }
        Ok(())
    }
}

impl Params for DenseParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.w.as_slice(), &self.b]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.w.as_mut_slice(), &mut self.b]
    }
}

pub fn dense_forward(params: &DenseParams, x: &[f64]) -> Result<Vec<f64>> {
    params.check(x)?;
    Ok((0..params.outputs())
        .map(|o| dot(params.w.row(o), x) + params.b[o])
        .collect())
}

/// Accumulates parameter gradients into `grads` and returns `dL/dx`.
pub fn dense_backward(
    params: &DenseParams,
    x: &[f64],
    grad_out: &[f64],
    grads: &mut DenseParams,
) -> Result<Vec<f64>> {
    params.check(x)?;
    if grad_out.len() != params.outputs() {
        return Err(RomError::shape("dense backward: output gradient length"));
    }
    let mut grad_x = vec![0.0; params.inputs()];
    for (o, &g) in grad_out.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        axpy(g, x, grads.w.row_mut(o));
        grads.b[o] += g;
        axpy(g, params.w.row(o), &mut grad_x);
    }
    Ok(grad_x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::grad_check;
    use crate::nn::loss::{mse_grad, mse_loss};
    use crate::nn::rng_from_seed;
    use rand::Rng;

    #[test]
    fn zero_layer_outputs_bias() {
        let mut p = DenseParams::zeros(3, 2);
        p.b = vec![0.5, -1.0];
        assert_eq!(
            dense_forward(&p, &[1.0, 2.0, 3.0]).unwrap(),
            vec![0.5, -1.0]
        );
        assert!(dense_forward(&p, &[1.0]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = rng_from_seed(21);
        let p = DenseParams::init(5, 4, &mut rng);
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let target: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |q: &DenseParams| mse_loss(&dense_forward(q, &x).unwrap(), &target).unwrap();
        let mut grads = p.zeros_like();
        let y = dense_forward(&p, &x).unwrap();
        let gx = dense_backward(&p, &x, &mse_grad(&y, &target).unwrap(), &mut grads).unwrap();
        let err = grad_check(&p, &grads, 1e-5, loss);
        assert!(err < 1e-8, "dense param rel err {err}");

        // input gradient
        let h = 1e-5;
        for i in 0..5 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (mse_loss(&dense_forward(&p, &xp).unwrap(), &target).unwrap()
                - mse_loss(&dense_forward(&p, &xm).unwrap(), &target).unwrap())
                / (2.0 * h);
            assert!((fd - gx[i]).abs() < 1e-9);
        }
    }
}
