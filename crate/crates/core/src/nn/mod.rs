//! Minimal neural-network kernel: dense, 1-D convolution, LSTM and Elman
//! layers with hand-written backward passes, MSE loss, Adam, and a
//! central-difference gradient checker.
//!
//! Layers are plain parameter structs plus free `forward`/`backward`
//! functions. Forward passes return their cache by value; nothing is kept
//! inside the parameter containers, so a model can be shared across threads
//! while it is evaluated.

pub mod adam;
pub mod conv;
pub mod dense;
pub mod elman;
pub mod gradcheck;
pub mod loss;
pub mod lstm;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Result, RomError};

pub use adam::{AdamConfig, AdamState};
pub use conv::{Conv1dParams, Padding};
pub use dense::DenseParams;
pub use elman::ElmanCellParams;
pub use lstm::LstmCellParams;

/// Seeded generator used for every random draw in the crate.
pub type Rng64 = Xoshiro256PlusPlus;

pub fn rng_from_seed(seed: u64) -> Rng64 {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// Uniform fill in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub(crate) fn uniform_fill(rng: &mut Rng64, fan_in: usize, out: &mut [f64]) {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    for x in out {
        *x = rng.random_range(-bound..=bound);
    }
}

/// Activation regime of the recurrent and convolutional nonlinearities.
///
/// `Linear` swaps every squashing function for the identity. It exists so
/// degenerate configurations can be checked without training and must not
/// be used for real models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CellMode {
    #[default]
    Standard,
    Linear,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Batch × steps × features, contiguous with features fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    batch: usize,
    steps: usize,
    features: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(batch: usize, steps: usize, features: usize) -> Self {
        Self {
            batch,
            steps,
            features,
            data: vec![0.0; batch * steps * features],
        }
    }

    pub fn from_vec(batch: usize, steps: usize, features: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != batch * steps * features {
            return Err(RomError::shape(format!(
                "tensor {batch}x{steps}x{features} needs {} values, got {}",
                batch * steps * features,
                data.len()
            )));
        }
        Ok(Self {
            batch,
            steps,
            features,
            data,
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Feature vector at `(b, t)`.
    #[inline]
    pub fn at(&self, b: usize, t: usize) -> &[f64] {
        let start = (b * self.steps + t) * self.features;
        &self.data[start..start + self.features]
    }

    #[inline]
    pub fn at_mut(&mut self, b: usize, t: usize) -> &mut [f64] {
        let start = (b * self.steps + t) * self.features;
        &mut self.data[start..start + self.features]
    }

    /// All steps of one batch element as a flat slice.
    pub fn sample(&self, b: usize) -> &[f64] {
        let len = self.steps * self.features;
        &self.data[b * len..(b + 1) * len]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A container of trainable tensors. Gradients use the same type.
pub trait Params: Clone {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn add_assign(&mut self, other: &Self) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// Copies every value into one flat vector, tensor by tensor.
    fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }
}
