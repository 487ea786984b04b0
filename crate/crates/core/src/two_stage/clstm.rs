//! Convolution → LSTM → dense head, the building block of both stages.

use crate::error::{Result, RomError};
use crate::linalg::Matrix;
use crate::nn::conv::{conv1d_backward, conv1d_forward};
use crate::nn::dense::{dense_backward, dense_forward};
use crate::nn::lstm::{lstm_backward, lstm_forward, LstmCache};
use crate::nn::{
    CellMode, Conv1dParams, DenseParams, LstmCellParams, Padding, Params, Rng64, Tensor3,
};

/// Parameter-free baseline added to the head output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Skip {
    None,
    /// First `z` features of the last input step, repeated `m` times.
    LastRow,
    /// Mean over steps of the first `m·z` input features.
    MeanRows,
    /// Like `MeanRows`, weighting step `t` by `1/(|d_t|² + ε)` where `d_t` is
    /// the tail of the row after the first `m·z` features.
    InverseDistance,
}

impl Skip {
    pub fn code(self) -> u64 {
        match self {
            Skip::None => 0,
            Skip::LastRow => 1,
            Skip::MeanRows => 2,
            Skip::InverseDistance => 3,
        }
    }

    pub fn from_code(code: u64) -> Result<Self> {
        match code {
            0 => Ok(Skip::None),
            1 => Ok(Skip::LastRow),
            2 => Ok(Skip::MeanRows),
            3 => Ok(Skip::InverseDistance),
            other => Err(RomError::Archive(format!("unknown skip code {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CLstmShape {
    pub input_features: usize,
    pub conv_channels: usize,
    pub kernel_width: usize,
    pub conv_stride: usize,
    pub hidden: usize,
    pub m: usize,
    pub z: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CLstmModel {
    pub conv: Conv1dParams,
    pub lstm: LstmCellParams,
    pub head: DenseParams,
    pub input_features: usize,
    /// `(m, z)`
    pub output_shape: (usize, usize),
    pub mode: CellMode,
    pub skip: Skip,
    /// Fixed per-output factor applied to the head before the baseline is added.
    pub out_scale: Vec<f64>,
}

impl CLstmModel {
    pub fn init(shape: CLstmShape, skip: Skip, rng: &mut Rng64) -> Result<Self> {
        let conv = Conv1dParams::init(
            shape.input_features,
            shape.conv_channels,
            shape.kernel_width,
            shape.conv_stride,
            Padding::Same,
            rng,
        )?;
        let lstm = LstmCellParams::init(shape.conv_channels, shape.hidden, rng);
        let head = DenseParams::init(shape.hidden, shape.m * shape.z, rng);
        Self::assemble(conv, lstm, head, (shape.m, shape.z), skip)
    }

    pub fn zeros(shape: CLstmShape, skip: Skip) -> Result<Self> {
        let conv = Conv1dParams::zeros(
            shape.input_features,
            shape.conv_channels,
            shape.kernel_width,
            shape.conv_stride,
            Padding::Same,
        )?;
        let lstm = LstmCellParams::zeros(shape.conv_channels, shape.hidden);
        let head = DenseParams::zeros(shape.hidden, shape.m * shape.z);
        Self::assemble(conv, lstm, head, (shape.m, shape.z), skip)
    }

    /// Parameter-free part of the output for every sample of a batch.
    pub fn baselines(&self, x: &Tensor3) -> Matrix {
        let mut out = Matrix::zeros(x.batch(), self.output_len());
        for b in 0..x.batch() {
            baseline(self, x, b, out.row_mut(b));
        }
        out
    }

    /// Checks that the three layers chain and builds the model.
    pub fn assemble(
        conv: Conv1dParams,
        lstm: LstmCellParams,
        head: DenseParams,
        output_shape: (usize, usize),
        skip: Skip,
    ) -> Result<Self> {
        let (m, z) = output_shape;
        if lstm.input() != conv.out_channels
            || head.inputs() != lstm.hidden()
            || head.outputs() != m * z
        {
            return Err(RomError::shape(format!(
                "layers do not chain: conv {}→{}, lstm {}→{}, head {}→{} (want {})",
                conv.in_channels,
                conv.out_channels,
                lstm.input(),
                lstm.hidden(),
                head.inputs(),
                head.outputs(),
                m * z
            )));
        }
        let needed = match skip {
            Skip::None => 0,
            Skip::LastRow => z,
            Skip::MeanRows | Skip::InverseDistance => m * z,
        };
        if conv.in_channels < needed {
            return Err(RomError::shape("skip baseline needs more input features"));
        }
        Ok(Self {
            input_features: conv.in_channels,
            conv,
            lstm,
            head,
            output_shape,
            mode: CellMode::Standard,
            skip,
            out_scale: vec![1.0; m * z],
        })
    }

    pub fn output_len(&self) -> usize {
        self.output_shape.0 * self.output_shape.1
    }

    pub fn shape(&self) -> CLstmShape {
        CLstmShape {
            input_features: self.input_features,
            conv_channels: self.conv.out_channels,
            kernel_width: self.conv.width,
            conv_stride: self.conv.stride,
            hidden: self.lstm.hidden(),
            m: self.output_shape.0,
            z: self.output_shape.1,
        }
    }
}

impl Params for CLstmModel {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.conv.tensors();
        t.extend(self.lstm.tensors());
        t.extend(self.head.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.conv.tensors_mut();
        t.extend(self.lstm.tensors_mut());
        t.extend(self.head.tensors_mut());
        t
    }
}

#[derive(Debug, Clone)]
pub struct CLstmCache {
    x: Tensor3,
    conv_pre: Tensor3,
    conv_act: Tensor3,
    lstm: LstmCache,
    h_last: Matrix,
}

fn baseline(model: &CLstmModel, x: &Tensor3, b: usize, out: &mut [f64]) {
    let (m, z) = model.output_shape;
    match model.skip {
        Skip::None => {}
        Skip::LastRow => {
            let last = x.at(b, x.steps() - 1);
            for r in 0..m {
                for j in 0..z {
                    out[r * z + j] += last[j];
                }
            }
        }
        Skip::MeanRows => {
            let inv = 1.0 / x.steps() as f64;
            for t in 0..x.steps() {
                for (o, v) in out.iter_mut().zip(x.at(b, t)) {
                    *o += inv * v;
                }
            }
        }
        Skip::InverseDistance => {
            let n = m * z;
            let weights: Vec<f64> = (0..x.steps())
                .map(|t| 1.0 / (x.at(b, t)[n..].iter().map(|d| d * d).sum::<f64>() + IDW_EPS))
                .collect();
            let total: f64 = weights.iter().sum();
            for (t, wt) in weights.iter().enumerate() {
                let wt = wt / total;
                for (o, v) in out.iter_mut().zip(x.at(b, t)) {
                    *o += wt * v;
                }
            }
        }
    }
}

const IDW_EPS: f64 = 1e-12;

/// Forward pass over a batch; returns `batch × (m·z)` outputs.
pub fn clstm_forward(model: &CLstmModel, x: &Tensor3) -> Result<(Matrix, CLstmCache)> {
    if x.features() != model.input_features {
        return Err(RomError::shape(format!(
            "model expects {} input features, got {}",
            model.input_features,
            x.features()
        )));
    }
    let conv_pre = conv1d_forward(&model.conv, x)?;
    let mut conv_act = conv_pre.clone();
    if model.mode == CellMode::Standard {
        conv_act
            .as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = v.max(0.0));
    }
    let batch = x.batch();
    let hidden = model.lstm.hidden();
    let zero = Matrix::zeros(batch, hidden);
    let lstm = lstm_forward(&model.lstm, &conv_act, &zero, &zero, model.mode)?;
    let mut out = Matrix::zeros(batch, model.output_len());
    for b in 0..batch {
        let y = dense_forward(&model.head, lstm.h_last.row(b))?;
        let row = out.row_mut(b);
        for ((o, v), s) in row.iter_mut().zip(&y).zip(&model.out_scale) {
            *o = v * s;
        }
        baseline(model, x, b, row);
    }
    Ok((
        out,
        CLstmCache {
            x: x.clone(),
            conv_pre,
            conv_act,
            lstm: lstm.cache,
            h_last: lstm.h_last,
        },
    ))
}

/// Parameter gradients for upstream gradient `grad_out` (`batch × (m·z)`).
pub fn clstm_backward(
    model: &CLstmModel,
    cache: &CLstmCache,
    grad_out: &Matrix,
) -> Result<CLstmModel> {
    let batch = cache.x.batch();
    if grad_out.shape() != (batch, model.output_len()) {
        return Err(RomError::shape("c-lstm backward: output gradient shape"));
    }
    let mut grads = model.zeros_like();
    let steps = cache.conv_act.steps();
    let hidden = model.lstm.hidden();
    let mut grad_h = Tensor3::zeros(batch, steps, hidden);
    for b in 0..batch {
        let scaled: Vec<f64> = grad_out
            .row(b)
            .iter()
            .zip(&model.out_scale)
            .map(|(g, s)| g * s)
            .collect();
        let gh = dense_backward(&model.head, cache.h_last.row(b), &scaled, &mut grads.head)?;
        grad_h.at_mut(b, steps - 1).copy_from_slice(&gh);
    }
    let lg = lstm_backward(&model.lstm, &cache.lstm, &grad_h)?;
    grads.lstm = lg.params;
    let mut grad_conv = lg.x;
    if model.mode == CellMode::Standard {
        for (g, pre) in grad_conv
            .as_mut_slice()
            .iter_mut()
            .zip(cache.conv_pre.as_slice())
        {
            if *pre <= 0.0 {
                *g = 0.0;
            }
        }
    }
    conv1d_backward(&model.conv, &cache.x, &grad_conv, &mut grads.conv)?;
    Ok(grads)
}
