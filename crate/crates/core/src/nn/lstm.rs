//! Single-layer LSTM cell with backpropagation through time.
//!
//! Per step, with `z = [h_{t-1}, x_t]`:
//!
//! ```text
//! q_t = tanh(W_q z + b_q)      candidate
//! i_t = σ(W_i z + b_i)         input gate
//! f_t = σ(W_f z + b_f)         forget gate
//! o_t = σ(W_o z + b_o)         output gate
//! c_t = f_t ⊙ c_{t-1} + i_t ⊙ q_t
//! h_t = o_t ⊙ tanh(c_t)
//! ```

use super::{sigmoid, uniform_fill, CellMode, Params, Rng64, Tensor3};
use crate::error::{Result, RomError};
use crate::linalg::{axpy, dot, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmCellParams {
    /// Each gate matrix is `hidden × (hidden + input)`; the first `hidden`
    /// columns act on `h_{t-1}`.
    pub w_q: Matrix,
    pub w_i: Matrix,
    pub w_f: Matrix,
    pub w_o: Matrix,
    pub b_q: Vec<f64>,
    pub b_i: Vec<f64>,
    pub b_f: Vec<f64>,
    pub b_o: Vec<f64>,
}

impl LstmCellParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let w = Matrix::zeros(hidden, hidden + input);
        Self {
            w_q: w.clone(),
            w_i: w.clone(),
            w_f: w.clone(),
            w_o: w,
            b_q: vec![0.0; hidden],
            b_i: vec![0.0; hidden],
            b_f: vec![0.0; hidden],
            b_o: vec![0.0; hidden],
        }
    }

    pub fn init(input: usize, hidden: usize, rng: &mut Rng64) -> Self {
        let mut p = Self::zeros(input, hidden);
        let fan_in = hidden + input;
        for t in p.tensors_mut() {
            uniform_fill(rng, fan_in, t);
        }
        p
    }

    pub fn hidden(&self) -> usize {
        self.w_q.rows()
    }

    pub fn input(&self) -> usize {
        self.w_q.cols() - self.w_q.rows()
    }

    fn gates(&self) -> [(&Matrix, &[f64]); 4] {
        [
            (&self.w_q, &self.b_q),
            (&self.w_i, &self.b_i),
            (&self.w_f, &self.b_f),
            (&self.w_o, &self.b_o),
        ]
    }
}

impl Params for LstmCellParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![
            self.w_q.as_slice(),
            self.w_i.as_slice(),
            self.w_f.as_slice(),
            self.w_o.as_slice(),
            &self.b_q,
            &self.b_i,
            &self.b_f,
            &self.b_o,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w_q.as_mut_slice(),
            self.w_i.as_mut_slice(),
            self.w_f.as_mut_slice(),
            self.w_o.as_mut_slice(),
            &mut self.b_q,
            &mut self.b_i,
            &mut self.b_f,
            &mut self.b_o,
        ]
    }
}

/// Every intermediate of a forward pass, laid out `[batch][step][...]`.
#[derive(Debug, Clone)]
pub struct LstmCache {
    mode: CellMode,
    batch: usize,
    steps: usize,
    hidden: usize,
    input: usize,
    z: Vec<f64>,
    q: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    c0: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LstmOutput {
    /// Hidden state at every step, `batch × steps × hidden`.
    pub outputs: Tensor3,
    /// `batch × hidden`
    pub h_last: Matrix,
    pub c_last: Matrix,
    pub cache: LstmCache,
}

#[derive(Debug, Clone)]
pub struct LstmGrads {
    pub params: LstmCellParams,
    pub x: Tensor3,
    pub h0: Matrix,
    pub c0: Matrix,
}

fn check_state(name: &str, s: &Matrix, batch: usize, hidden: usize) -> Result<()> {
    if s.shape() != (batch, hidden) {
        return Err(RomError::shape(format!(
            "{name} must be {batch}x{hidden}, got {:?}",
            s.shape()
        )));
    }
    Ok(())
}

pub fn lstm_forward(
    params: &LstmCellParams,
    x: &Tensor3,
    h0: &Matrix,
    c0: &Matrix,
    mode: CellMode,
) -> Result<LstmOutput> {
    let hidden = params.hidden();
    let input = params.input();
    if x.features() != input {
        return Err(RomError::shape(format!(
            "lstm expects {input} input features, got {}",
            x.features()
        )));
    }
    let (batch, steps) = (x.batch(), x.steps());
    check_state("h0", h0, batch, hidden)?;
    check_state("c0", c0, batch, hidden)?;
    let zlen = hidden + input;
    let n = batch * steps * hidden;
    let mut cache = LstmCache {
        mode,
        batch,
        steps,
        hidden,
        input,
        z: vec![0.0; batch * steps * zlen],
        q: vec![0.0; n],
        i: vec![0.0; n],
        f: vec![0.0; n],
        o: vec![0.0; n],
        c: vec![0.0; n],
        tanh_c: vec![0.0; n],
        c0: c0.as_slice().to_vec(),
    };
    let mut outputs = Tensor3::zeros(batch, steps, hidden);
    let mut h_last = h0.clone();
    let mut c_last = c0.clone();
    let (squash, gate): (fn(f64) -> f64, fn(f64) -> f64) = match mode {
        CellMode::Standard => (f64::tanh, sigmoid),
        CellMode::Linear => (|v| v, |v| v),
    };

    let [(wq, bq), (wi, bi), (wf, bf), (wo, bo)] = params.gates();
    for b in 0..batch {
        let mut h = h0.row(b).to_vec();
        let mut c = c0.row(b).to_vec();
        for t in 0..steps {
            let bt = b * steps + t;
            let z = &mut cache.z[bt * zlen..(bt + 1) * zlen];
            z[..hidden].copy_from_slice(&h);
            z[hidden..].copy_from_slice(x.at(b, t));
            let z = &cache.z[bt * zlen..(bt + 1) * zlen];
            let off = bt * hidden;
            for j in 0..hidden {
                let q = squash(dot(wq.row(j), z) + bq[j]);
                let ig = gate(dot(wi.row(j), z) + bi[j]);
                let fg = gate(dot(wf.row(j), z) + bf[j]);
                let og = gate(dot(wo.row(j), z) + bo[j]);
                let cj = fg * c[j] + ig * q;
                let tc = squash(cj);
                if mode == CellMode::Standard {
                    debug_assert!((0.0..=1.0).contains(&ig) && (0.0..=1.0).contains(&fg));
                    debug_assert!((0.0..=1.0).contains(&og) && q.abs() <= 1.0 && tc.abs() <= 1.0);
                }
                cache.q[off + j] = q;
                cache.i[off + j] = ig;
                cache.f[off + j] = fg;
                cache.o[off + j] = og;
                cache.c[off + j] = cj;
                cache.tanh_c[off + j] = tc;
                c[j] = cj;
                h[j] = og * tc;
            }
            outputs.at_mut(b, t).copy_from_slice(&h);
        }
        h_last.row_mut(b).copy_from_slice(&h);
        c_last.row_mut(b).copy_from_slice(&c);
    }
    Ok(LstmOutput {
        outputs,
        h_last,
        c_last,
        cache,
    })
}

/// Reverse pass for a loss that depends on the hidden states through
/// `grad_outputs` (`batch × steps × hidden`).
pub fn lstm_backward(
    params: &LstmCellParams,
    cache: &LstmCache,
    grad_outputs: &Tensor3,
) -> Result<LstmGrads> {
    let (batch, steps, hidden, input) = (cache.batch, cache.steps, cache.hidden, cache.input);
    if params.hidden() != hidden || params.input() != input {
        return Err(RomError::shape(
            "lstm backward: cache does not match parameters",
        ));
    }
    if (
        grad_outputs.batch(),
        grad_outputs.steps(),
        grad_outputs.features(),
    ) != (batch, steps, hidden)
    {
        return Err(RomError::shape("lstm backward: output gradient shape"));
    }
    let zlen = hidden + input;
    let linear = cache.mode == CellMode::Linear;
    let mut grads = LstmGrads {
        params: params.zeros_like(),
        x: Tensor3::zeros(batch, steps, input),
        h0: Matrix::zeros(batch, hidden),
        c0: Matrix::zeros(batch, hidden),
    };
    let mut da = [
        vec![0.0; hidden],
        vec![0.0; hidden],
        vec![0.0; hidden],
        vec![0.0; hidden],
    ];
    let mut dz = vec![0.0; zlen];

    for b in 0..batch {
        let mut dh_next = vec![0.0; hidden];
        let mut dc_next = vec![0.0; hidden];
        for t in (0..steps).rev() {
            let bt = b * steps + t;
            let off = bt * hidden;
            let gout = grad_outputs.at(b, t);
            for j in 0..hidden {
                let dh = gout[j] + dh_next[j];
                let (q, ig, fg, og, tc) = (
                    cache.q[off + j],
                    cache.i[off + j],
                    cache.f[off + j],
                    cache.o[off + j],
                    cache.tanh_c[off + j],
                );
                let c_prev = if t == 0 {
                    cache.c0[b * hidden + j]
                } else {
                    cache.c[off - hidden + j]
                };
                let d_o = dh * tc;
                let dtc = dh * og;
                let dc = dc_next[j] + if linear { dtc } else { dtc * (1.0 - tc * tc) };
                let d_f = dc * c_prev;
                let d_i = dc * q;
                let d_q = dc * ig;
                dc_next[j] = dc * fg;
                if linear {
                    da[0][j] = d_q;
                    da[1][j] = d_i;
                    da[2][j] = d_f;
                    da[3][j] = d_o;
                } else {
                    da[0][j] = d_q * (1.0 - q * q);
                    da[1][j] = d_i * ig * (1.0 - ig);
                    da[2][j] = d_f * fg * (1.0 - fg);
                    da[3][j] = d_o * og * (1.0 - og);
                }
            }
            let z = &cache.z[bt * zlen..(bt + 1) * zlen];
            dz.fill(0.0);
            let gp = &mut grads.params;
            let targets = [
                (&mut gp.w_q, &mut gp.b_q, &params.w_q),
                (&mut gp.w_i, &mut gp.b_i, &params.w_i),
                (&mut gp.w_f, &mut gp.b_f, &params.w_f),
                (&mut gp.w_o, &mut gp.b_o, &params.w_o),
            ];
            for (g, (dw, db, w)) in targets.into_iter().enumerate() {
                for j in 0..hidden {
                    let a = da[g][j];
                    if a == 0.0 {
                        continue;
                    }
                    axpy(a, z, dw.row_mut(j));
                    db[j] += a;
                    axpy(a, w.row(j), &mut dz);
                }
            }
            dh_next.copy_from_slice(&dz[..hidden]);
            grads.x.at_mut(b, t).copy_from_slice(&dz[hidden..]);
        }
        grads.h0.row_mut(b).copy_from_slice(&dh_next);
        grads.c0.row_mut(b).copy_from_slice(&dc_next);
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{grad_check, max_relative_error};
    use crate::nn::rng_from_seed;
    use rand::Rng;

    fn random_tensor(rng: &mut Rng64, b: usize, t: usize, f: usize) -> Tensor3 {
        let data = (0..b * t * f)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Tensor3::from_vec(b, t, f, data).unwrap()
    }

    fn random_matrix(rng: &mut Rng64, r: usize, c: usize) -> Matrix {
        let data = (0..r * c).map(|_| rng.random_range(-0.5..0.5)).collect();
        Matrix::from_vec(r, c, data).unwrap()
    }

    #[test]
    fn zero_parameters_give_zero_hidden_state() {
        let p = LstmCellParams::zeros(3, 4);
        let mut rng = rng_from_seed(1);
        let x = random_tensor(&mut rng, 2, 6, 3);
        let out = lstm_forward(
            &p,
            &x,
            &Matrix::zeros(2, 4),
            &Matrix::zeros(2, 4),
            CellMode::Standard,
        )
        .unwrap();
        assert!(out.outputs.as_slice().iter().all(|&h| h == 0.0));
    }

    #[test]
    fn saturated_gates_pin_hidden_state() {
        let mut p = LstmCellParams::zeros(1, 1);
        p.b_q = vec![50.0];
        p.b_i = vec![50.0];
        p.b_f = vec![-50.0];
        p.b_o = vec![50.0];
        let x = Tensor3::from_vec(1, 5, 1, vec![0.3, -1.0, 2.0, 0.0, 5.0]).unwrap();
        let out = lstm_forward(
            &p,
            &x,
            &Matrix::zeros(1, 1),
            &Matrix::zeros(1, 1),
            CellMode::Standard,
        )
        .unwrap();
        for &h in out.outputs.as_slice() {
            assert!((h - 1.0f64.tanh()).abs() < 1e-12, "{h}");
        }
    }

    /// The six cell equations written out with explicit scalar loops.
    fn scalar_oracle(p: &LstmCellParams, xs: &[Vec<f64>], h0: &[f64], c0: &[f64]) -> Vec<f64> {
        let hdim = h0.len();
        let mut h = h0.to_vec();
        let mut c = c0.to_vec();
        for x in xs {
            let mut z = h.clone();
            z.extend_from_slice(x);
            let mut h_new = vec![0.0; hdim];
            for j in 0..hdim {
                let mut aq = p.b_q[j];
                let mut ai = p.b_i[j];
                let mut af = p.b_f[j];
                let mut ao = p.b_o[j];
                for k in 0..z.len() {
                    aq += p.w_q[(j, k)] * z[k];
                    ai += p.w_i[(j, k)] * z[k];
                    af += p.w_f[(j, k)] * z[k];
                    ao += p.w_o[(j, k)] * z[k];
                }
                let q = aq.tanh();
                let i = 1.0 / (1.0 + (-ai).exp());
                let f = 1.0 / (1.0 + (-af).exp());
                let o = 1.0 / (1.0 + (-ao).exp());
                c[j] = f * c[j] + i * q;
                h_new[j] = o * c[j].tanh();
            }
            h = h_new;
        }
        h
    }

    #[test]
    fn matches_scalar_oracle() {
        let mut rng = rng_from_seed(2);
        let p = LstmCellParams::init(3, 4, &mut rng);
        let x = random_tensor(&mut rng, 1, 2, 3);
        let h0 = random_matrix(&mut rng, 1, 4);
        let c0 = random_matrix(&mut rng, 1, 4);
        let out = lstm_forward(&p, &x, &h0, &c0, CellMode::Standard).unwrap();
        let xs: Vec<Vec<f64>> = (0..2).map(|t| x.at(0, t).to_vec()).collect();
        let expect = scalar_oracle(&p, &xs, h0.row(0), c0.row(0));
        for (a, b) in out.h_last.row(0).iter().zip(&expect) {
            assert!((a - b).abs() <= 1e-14);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = rng_from_seed(3);
        let p = LstmCellParams::init(2, 5, &mut rng);
        let x = random_tensor(&mut rng, 2, 9, 2);
        let z = Matrix::zeros(2, 5);
        let a = lstm_forward(&p, &x, &z, &z, CellMode::Standard).unwrap();
        let b = lstm_forward(&p, &x, &z, &z, CellMode::Standard).unwrap();
        assert_eq!(a.outputs, b.outputs);
        assert!(lstm_forward(
            &p,
            &random_tensor(&mut rng, 2, 3, 3),
            &z,
            &z,
            CellMode::Standard
        )
        .is_err());
        assert!(lstm_forward(&p, &x, &Matrix::zeros(1, 5), &z, CellMode::Standard).is_err());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut rng = rng_from_seed(4);
        let p = LstmCellParams::init(2, 3, &mut rng);
        let x = random_tensor(&mut rng, 1, 4, 2);
        let z = Matrix::zeros(1, 3);
        let out = lstm_forward(&p, &x, &z, &z, CellMode::Standard).unwrap();
        let g = lstm_backward(&p, &out.cache, &Tensor3::zeros(1, 4, 3)).unwrap();
        assert!(g.params.flatten().iter().all(|&v| v == 0.0));
        assert!(g.x.as_slice().iter().all(|&v| v == 0.0));
    }

    /// Checks parameter, input and initial-state gradients of the scalar loss
    /// `Σ r ⊙ outputs` against central differences; returns the worst error.
    fn check(
        batch: usize,
        steps: usize,
        input: usize,
        hidden: usize,
        seed: u64,
        mode: CellMode,
    ) -> f64 {
        let mut rng = rng_from_seed(seed);
        let p = LstmCellParams::init(input, hidden, &mut rng);
        let x = random_tensor(&mut rng, batch, steps, input);
        let h0 = random_matrix(&mut rng, batch, hidden);
        let c0 = random_matrix(&mut rng, batch, hidden);
        let r = random_tensor(&mut rng, batch, steps, hidden);
        let loss = |q: &LstmCellParams, x: &Tensor3, h0: &Matrix, c0: &Matrix| {
            let out = lstm_forward(q, x, h0, c0, mode).unwrap();
            out.outputs
                .as_slice()
                .iter()
                .zip(r.as_slice())
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        let out = lstm_forward(&p, &x, &h0, &c0, mode).unwrap();
        let g = lstm_backward(&p, &out.cache, &r).unwrap();
        let mut worst = grad_check(&p, &g.params, 1e-5, |q| loss(q, &x, &h0, &c0));

        let h = 1e-5;
        let fd = |f: &dyn Fn(f64) -> f64| (f(h) - f(-h)) / (2.0 * h);
        let mut num_x = Vec::new();
        for i in 0..x.as_slice().len() {
            num_x.push(fd(&|d| {
                let mut xx = x.clone();
                xx.as_mut_slice()[i] += d;
                loss(&p, &xx, &h0, &c0)
            }));
        }
        worst = worst.max(max_relative_error(g.x.as_slice(), &num_x));
        let mut num_h = Vec::new();
        let mut num_c = Vec::new();
        for i in 0..batch * hidden {
            num_h.push(fd(&|d| {
                let mut hh = h0.clone();
                hh.as_mut_slice()[i] += d;
                loss(&p, &x, &hh, &c0)
            }));
            num_c.push(fd(&|d| {
                let mut cc = c0.clone();
                cc.as_mut_slice()[i] += d;
                loss(&p, &x, &h0, &cc)
            }));
        }
        worst = worst.max(max_relative_error(g.h0.as_slice(), &num_h));
        worst.max(max_relative_error(g.c0.as_slice(), &num_c))
    }

    #[test]
    fn single_step_gradients() {
        let err = check(1, 1, 2, 2, 5, CellMode::Standard);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn long_sequence_gradients() {
        let err = check(1, 20, 3, 8, 6, CellMode::Standard);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn linear_mode_gradients() {
        let err = check(2, 5, 2, 3, 7, CellMode::Linear);
        assert!(err < 1e-5, "{err}");
    }
}
