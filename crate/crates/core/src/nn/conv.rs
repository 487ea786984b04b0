//! 1-D cross-correlation along the step axis.

use super::{uniform_fill, Params, Rng64, Tensor3};
use crate::error::{Result, RomError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `(width - 1) / 2` on both ends.
    Same,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1dParams {
    /// `[out][in][width]`, flattened.
    pub kernels: Vec<f64>,
    pub bias: Vec<f64>,
    pub out_channels: usize,
    pub in_channels: usize,
    pub width: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl Conv1dParams {
    pub fn zeros(
        in_channels: usize,
        out_channels: usize,
        width: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        if width == 0 || stride == 0 || in_channels == 0 || out_channels == 0 {
            return Err(RomError::input("conv1d sizes must be positive"));
        }
        if padding == Padding::Same && width % 2 == 0 {
            return Err(RomError::input(format!(
                "same padding needs an odd kernel width, got {width}"
            )));
        }
        Ok(Self {
            kernels: vec![0.0; out_channels * in_channels * width],
            bias: vec![0.0; out_channels],
            out_channels,
            in_channels,
            width,
            stride,
            padding,
        })
    }

    pub fn init(
        in_channels: usize,
        out_channels: usize,
        width: usize,
        stride: usize,
        padding: Padding,
        rng: &mut Rng64,
    ) -> Result<Self> {
        let mut p = Self::zeros(in_channels, out_channels, width, stride, padding)?;
        let fan_in = in_channels * width;
        uniform_fill(rng, fan_in, &mut p.kernels);
        uniform_fill(rng, fan_in, &mut p.bias);
        Ok(p)
    }

    #[inline]
    pub fn kernel(&self, o: usize, c: usize) -> &[f64] {
        let start = (o * self.in_channels + c) * self.width;
        &self.kernels[start..start + self.width]
    }

    fn pad(&self) -> usize {
        match self.padding {
            Padding::Same => (self.width - 1) / 2,
            Padding::None => 0,
        }
    }

    pub fn output_steps(&self, steps: usize) -> usize {
        let padded = steps + 2 * self.pad();
        if padded < self.width {
            0
        } else {
            (padded - self.width) / self.stride + 1
        }
    }

    fn check(&self, x: &Tensor3) -> Result<usize> {
        if x.features() != self.in_channels {
            return Err(RomError::shape(format!(
                "conv1d expects {} channels, got {}",
                self.in_channels,
                x.features()
            )));
        }
        let out = self.output_steps(x.steps());
        if out == 0 {
            return Err(RomError::shape(format!(
                "sequence of {} steps is shorter than the kernel",
                x.steps()
            )));
        }
        Ok(out)
    }
}

impl Params for Conv1dParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.kernels, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.kernels, &mut self.bias]
    }
}

pub fn conv1d_forward(params: &Conv1dParams, x: &Tensor3) -> Result<Tensor3> {
    let out_steps = params.check(x)?;
    let pad = params.pad() as isize;
    let steps = x.steps() as isize;
    let mut y = Tensor3::zeros(x.batch(), out_steps, params.out_channels);
    for b in 0..x.batch() {
        for t in 0..out_steps {
            let origin = (t * params.stride) as isize - pad;
            let out = y.at_mut(b, t);
            out.copy_from_slice(&params.bias);
            for k in 0..params.width {
                let src = origin + k as isize;
                if src < 0 || src >= steps {
                    continue;
                }
                let xin = x.at(b, src as usize);
                for (o, acc) in out.iter_mut().enumerate() {
                    for (c, &xv) in xin.iter().enumerate() {
                        *acc += params.kernel(o, c)[k] * xv;
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Accumulates into `grads` and returns the input gradient.
pub fn conv1d_backward(
    params: &Conv1dParams,
    x: &Tensor3,
    grad_out: &Tensor3,
    grads: &mut Conv1dParams,
) -> Result<Tensor3> {
    let out_steps = params.check(x)?;
    if grad_out.steps() != out_steps
        || grad_out.features() != params.out_channels
        || grad_out.batch() != x.batch()
    {
        return Err(RomError::shape("conv1d backward: output gradient shape"));
    }
    let pad = params.pad() as isize;
    let steps = x.steps() as isize;
    let width = params.width;
    let cin = params.in_channels;
    let mut grad_x = Tensor3::zeros(x.batch(), x.steps(), cin);
    for b in 0..x.batch() {
        for t in 0..out_steps {
            let g = grad_out.at(b, t);
            for (o, &go) in g.iter().enumerate() {
                grads.bias[o] += go;
            }
            let origin = (t * params.stride) as isize - pad;
            for k in 0..width {
                let src = origin + k as isize;
                if src < 0 || src >= steps {
                    continue;
                }
                let src = src as usize;
                for (o, &go) in g.iter().enumerate() {
                    if go == 0.0 {
                        continue;
                    }
                    let base = o * cin * width;
                    for c in 0..cin {
                        grads.kernels[base + c * width + k] += go * x.at(b, src)[c];
                        grad_x.at_mut(b, src)[c] += go * params.kernels[base + c * width + k];
                    }
                }
            }
        }
    }
    Ok(grad_x)
}
