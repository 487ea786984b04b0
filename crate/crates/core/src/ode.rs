//! Ground-truth trajectories: classical RK4, the two parametric ODE systems
//! used for the low-dimensional experiments, and a synthetic
//! high-dimensional snapshot generator with a transient phase followed by
//! periodic motion.

use std::f64::consts::PI;

use rand::Rng;

use crate::clustering::ParameterPoint;
use crate::error::{Result, RomError};
use crate::linalg::Matrix;
use crate::nn::rng_from_seed;

/// Right-hand side `f(x, θ)` written into the output slice.
pub type RhsFn = fn(state: &[f64], theta: &[f64], out: &mut [f64]);

#[derive(Debug, Clone, Copy)]
pub struct OdeSystem {
    pub name: &'static str,
    pub dim: usize,
    pub rhs: RhsFn,
}

impl OdeSystem {
    /// `dr/dt = v`, `dv/dt = r - a r³`.
    pub fn duffing() -> Self {
        Self {
            name: "duffing",
            dim: 2,
            rhs: duffing_rhs,
        }
    }

    /// `dr/dt = r (1 - r) - r v`, `dv/dt = -v + a r v`.
    pub fn predator_prey() -> Self {
        Self {
            name: "predator_prey",
            dim: 2,
            rhs: predator_prey_rhs,
        }
    }

    pub fn eval(&self, state: &[f64], theta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        (self.rhs)(state, theta, &mut out);
        out
    }
}

pub fn duffing_rhs(state: &[f64], theta: &[f64], out: &mut [f64]) {
    let (r, v, a) = (state[0], state[1], theta[0]);
    out[0] = v;
    out[1] = r - a * r * r * r;
}

pub fn predator_prey_rhs(state: &[f64], theta: &[f64], out: &mut [f64]) {
    let (r, v, a) = (state[0], state[1], theta[0]);
    out[0] = r * (1.0 - r) - r * v;
    out[1] = -v + a * r * v;
}

/// Time-ordered states of one parameter value; `states` is `dim × T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub theta: ParameterPoint,
    pub dt: f64,
    pub states: Matrix,
}

impl Trajectory {
    pub fn new(theta: ParameterPoint, dt: f64, states: Matrix) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(RomError::input(format!(
                "time step must be positive, got {dt}"
            )));
        }
        if states.cols() == 0 || states.rows() == 0 {
            return Err(RomError::input("trajectory needs at least one state"));
        }
        if !states.is_finite() {
            return Err(RomError::input("trajectory contains non-finite states"));
        }
        Ok(Self { theta, dt, states })
    }

    pub fn len(&self) -> usize {
        self.states.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.states.cols() == 0
    }

    pub fn dim(&self) -> usize {
        self.states.rows()
    }

    pub fn state(&self, t: usize) -> Vec<f64> {
        self.states.column(t)
    }

    /// States `start..end` as rows (time-major), `(end - start) × dim`.
    pub fn rows(&self, start: usize, end: usize) -> Matrix {
        self.states.columns(start, end).transpose()
    }
}

pub fn rk4_integrate(
    system: &OdeSystem,
    theta: &ParameterPoint,
    x0: &[f64],
    dt: f64,
    steps: usize,
) -> Result<Trajectory> {
    if !(dt > 0.0) || steps == 0 {
        return Err(RomError::input("rk4 needs dt > 0 and at least one step"));
    }
    if x0.len() != system.dim {
        return Err(RomError::shape(format!(
            "{} has dimension {}, initial state has {}",
            system.name,
            system.dim,
            x0.len()
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(RomError::input("initial state must be finite"));
    }
    let n = system.dim;
    let th = theta.coords();
    let mut states = Matrix::zeros(n, steps + 1);
    states.set_column(0, x0);
    let mut x = x0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    for step in 1..=steps {
        (system.rhs)(&x, th, &mut k1);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * dt * k1[i];
        }
        (system.rhs)(&tmp, th, &mut k2);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * dt * k2[i];
        }
        (system.rhs)(&tmp, th, &mut k3);
        for i in 0..n {
            tmp[i] = x[i] + dt * k3[i];
        }
        (system.rhs)(&tmp, th, &mut k4);
        for i in 0..n {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(RomError::divergence(format!("rk4 {}", system.name), step));
        }
        states.set_column(step, &x);
    }
    Trajectory::new(theta.clone(), dt, states)
}

/// Settings of the synthetic high-dimensional snapshot generator.
///
/// Each of the `blocks` field components lives on its own grid of
/// `points_per_block` nodes. A component is
///
/// ```text
/// u(x, t) = A [ ramp(t) Σ_j ρ^j sin(h_j ω(θ) t + ψ_j) φ_j(x)
///             + e^{-t/τ} Σ_l ρ^l cos(ν_l t) χ_l(x) ] + noise
/// ```
///
/// with sine spatial modes `φ_j`, `χ_l` drawn from disjoint index sets, so
/// the periodic part spans exactly `periodic_modes` directions. Harmonic
/// numbers `h_j = ceil(j / 2)` come in sine/cosine pairs. The frequency
/// law is linear: `ω(θ) = ω_lo + (ω_hi - ω_lo) (θ - θ_lo) / (θ_hi - θ_lo)`.
/// `τ = swing_in_steps · dt / 5` and `ramp(t) = 1 - e^{-t/τ}`; with
/// `swing_in_steps == 0` both the transient and the ramp vanish.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateConfig {
    pub points_per_block: usize,
    pub blocks: usize,
    pub periodic_modes: usize,
    pub transient_modes: usize,
    pub amplitude: f64,
    /// Geometric amplitude decay across modes.
    pub mode_decay: f64,
    pub theta_range: (f64, f64),
    /// Angular frequency range (radians per unit time) mapped from `theta_range`.
    pub omega_range: (f64, f64),
    pub swing_in_steps: usize,
    /// Uniform noise half-width, relative to `amplitude`.
    pub noise: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            points_per_block: 64,
            blocks: 2,
            periodic_modes: 3,
            transient_modes: 2,
            amplitude: 1.0,
            mode_decay: 0.8,
            theta_range: (1.0, 1.5),
            omega_range: (2.0 * PI / 4.0, 2.0 * PI / 3.0),
            swing_in_steps: 0,
            noise: 0.0,
        }
    }
}

impl SurrogateConfig {
    pub fn full_dim(&self) -> usize {
        self.points_per_block * self.blocks
    }

    pub fn omega(&self, theta: f64) -> f64 {
        let (tlo, thi) = self.theta_range;
        let (wlo, whi) = self.omega_range;
        if thi == tlo {
            return wlo;
        }
        wlo + (whi - wlo) * (theta - tlo) / (thi - tlo)
    }

    fn validate(&self) -> Result<()> {
        if self.points_per_block == 0 || self.blocks == 0 {
            return Err(RomError::input("surrogate grid must be nonempty"));
        }
        if self.periodic_modes + self.transient_modes > self.points_per_block {
            return Err(RomError::input(format!(
                "{} modes do not fit on a {}-point grid",
                self.periodic_modes + self.transient_modes,
                self.points_per_block
            )));
        }
        Ok(())
    }
}

fn sine_mode(index: usize, n: usize) -> Vec<f64> {
    let norm = (2.0 / n as f64).sqrt();
    (0..n)
        .map(|i| norm * (index as f64 * PI * (i as f64 + 0.5) / n as f64).sin())
        .collect()
}

pub fn synth_cavity_like(
    cfg: &SurrogateConfig,
    theta: f64,
    dt: f64,
    steps: usize,
) -> Result<Trajectory> {
    cfg.validate()?;
    if steps == 0 && cfg.swing_in_steps == 0 {
        return Err(RomError::input("surrogate needs steps > 0"));
    }
    if !(dt > 0.0) || !theta.is_finite() {
        return Err(RomError::input("surrogate needs dt > 0 and finite θ"));
    }
    let n = cfg.points_per_block;
    let r = cfg.periodic_modes;
    let periodic: Vec<Vec<f64>> = (1..=r).map(|j| sine_mode(j, n)).collect();
    let transient: Vec<Vec<f64>> = (r + 1..=r + cfg.transient_modes)
        .map(|j| sine_mode(j, n))
        .collect();
    let omega = cfg.omega(theta);
    let tau = cfg.swing_in_steps as f64 * dt / 5.0;
    let mut rng = rng_from_seed(theta.to_bits() ^ 0x5EED_CA71);
    let mut states = Matrix::zeros(n * cfg.blocks, steps + 1);
    let mut column = vec![0.0; n * cfg.blocks];
    for step in 0..=steps {
        let t = step as f64 * dt;
        let (ramp, decay) = if cfg.swing_in_steps == 0 {
            (1.0, 0.0)
        } else {
            (1.0 - (-t / tau).exp(), (-t / tau).exp())
        };
        column.fill(0.0);
        for block in 0..cfg.blocks {
            let out = &mut column[block * n..(block + 1) * n];
            let phase0 = block as f64 * PI / 3.0;
            for (j, phi) in periodic.iter().enumerate() {
                let harmonic = (j / 2 + 1) as f64;
                let psi = if j % 2 == 0 {
                    phase0
                } else {
                    phase0 + PI / 2.0
                };
                let c = cfg.amplitude
                    * ramp
                    * cfg.mode_decay.powi(j as i32)
                    * (harmonic * omega * t + psi).sin();
                for (o, p) in out.iter_mut().zip(phi) {
                    *o += c * p;
                }
            }
            for (l, chi) in transient.iter().enumerate() {
                let nu = omega * (0.37 + 0.23 * l as f64);
                let c =
                    cfg.amplitude * decay * cfg.mode_decay.powi(l as i32) * (nu * t + phase0).cos();
                for (o, p) in out.iter_mut().zip(chi) {
                    *o += c * p;
                }
            }
        }
        if cfg.noise > 0.0 {
            let half = cfg.noise * cfg.amplitude;
            for v in column.iter_mut() {
                *v += rng.random_range(-half..=half);
            }
        }
        states.set_column(step, &column);
    }
    Trajectory::new(ParameterPoint::scalar(theta), dt, states)
}
