//! Acceptance suite. Runs every criterion and prints one PASS/FAIL line each.
//! Criterion numbers given as arguments (`cargo test --test acceptance -- 4 7`)
//! restrict the run. With `ACCEPTANCE_STRICT=1` any failure exits non-zero.

use std::time::{Duration, Instant};

use rand::Rng;

use clstm_rom::clustering::ParameterPoint;
use clstm_rom::linalg::{basis_change, matmul, pod_project, pod_truncate, svd, Matrix};
use clstm_rom::nn::conv::{conv1d_backward, conv1d_forward};
use clstm_rom::nn::dense::{dense_backward, dense_forward};
use clstm_rom::nn::elman::{elman_backward, elman_forward};
use clstm_rom::nn::gradcheck::grad_check;
use clstm_rom::nn::loss::{mse_grad, mse_loss};
use clstm_rom::nn::lstm::{lstm_backward, lstm_forward};
use clstm_rom::nn::{
    rng_from_seed, CellMode, Conv1dParams, DenseParams, ElmanCellParams, LstmCellParams, Padding,
    Rng64, Tensor3,
};
use clstm_rom::ode::{rk4_integrate, synth_cavity_like, OdeSystem, SurrogateConfig, Trajectory};
use clstm_rom::pod_pipeline::{
    block_pod, build_pipeline, pipeline_rollout, projection_error, reduce, relative_errors,
    stack_snapshots, BasisId, PipelineConfig, PodSettings,
};
use clstm_rom::two_stage::{
    clstm_backward, clstm_forward, evaluate, fit_two_stage, rollout, CLstmModel, CLstmShape, Skip,
    TrainConfig,
};

use clstm_rom_cli::archive::Archive;
use clstm_rom_cli::commands::{fit, from_archive, load_data, score, to_archive, Context};
use clstm_rom_cli::{config, tables};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn uniform(rng: &mut Rng64, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn tensor(rng: &mut Rng64, b: usize, s: usize, f: usize) -> Tensor3 {
    Tensor3::from_vec(b, s, f, uniform(rng, b * s * f)).unwrap()
}

fn weighted_sum(a: &[f64], r: &[f64]) -> f64 {
    a.iter().zip(r).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------- 1

fn gradients() -> Outcome {
    const H: f64 = 1e-5;
    let mut worst = [0.0f64; 5];
    for seed in 0..20u64 {
        let mut rng = rng_from_seed(1000 + seed);
        let mut size = |lo: usize, hi: usize| rng.random_range(lo..=hi);
        let (batch, steps, inp, hid, out) =
            (size(1, 3), size(2, 9), size(1, 5), size(1, 6), size(1, 4));
        let width = 2 * size(0, 2) + 1;
        let stride = size(1, 2);
        let channels = size(1, 4);
        let (m, z) = (size(1, 3), size(1, 3));
        let mut rng = rng_from_seed(2000 + seed);

        let p = DenseParams::init(inp, out, &mut rng);
        let x = uniform(&mut rng, inp);
        let t = uniform(&mut rng, out);
        let y = dense_forward(&p, &x).unwrap();
        let mut g = p.zeros_like_params();
        dense_backward(&p, &x, &mse_grad(&y, &t).unwrap(), &mut g).unwrap();
        let e = grad_check(&p, &g, H, |q| {
            mse_loss(&dense_forward(q, &x).unwrap(), &t).unwrap()
        });
        worst[0] = worst[0].max(e);

        let padding = if seed % 2 == 0 {
            Padding::Same
        } else {
            Padding::None
        };
        let steps_c = steps.max(width);
        let p = Conv1dParams::init(inp, channels, width, stride, padding, &mut rng).unwrap();
        let x = tensor(&mut rng, batch, steps_c, inp);
        let y = conv1d_forward(&p, &x).unwrap();
        let r = uniform(&mut rng, y.as_slice().len());
        let gy = Tensor3::from_vec(y.batch(), y.steps(), y.features(), r.clone()).unwrap();
        let mut g = p.zeros_like_params();
        conv1d_backward(&p, &x, &gy, &mut g).unwrap();
        let e = grad_check(&p, &g, H, |q| {
            weighted_sum(conv1d_forward(q, &x).unwrap().as_slice(), &r)
        });
        worst[1] = worst[1].max(e);

        let p = ElmanCellParams::init(inp, hid, out, &mut rng);
        let x = tensor(&mut rng, batch, steps, inp);
        let h0 = Matrix::from_vec(batch, hid, uniform(&mut rng, batch * hid)).unwrap();
        let r = tensor(&mut rng, batch, steps, out);
        let o = elman_forward(&p, &x, &h0).unwrap();
        let (g, _, _) = elman_backward(&p, &o.cache, &r).unwrap();
        let e = grad_check(&p, &g, H, |q| {
            weighted_sum(
                elman_forward(q, &x, &h0).unwrap().outputs.as_slice(),
                r.as_slice(),
            )
        });
        worst[2] = worst[2].max(e);

        let p = LstmCellParams::init(inp, hid, &mut rng);
        let x = tensor(&mut rng, batch, steps, inp);
        let h0 = Matrix::from_vec(batch, hid, uniform(&mut rng, batch * hid)).unwrap();
        let c0 = Matrix::from_vec(batch, hid, uniform(&mut rng, batch * hid)).unwrap();
        let r = tensor(&mut rng, batch, steps, hid);
        let o = lstm_forward(&p, &x, &h0, &c0, CellMode::Standard).unwrap();
        let g = lstm_backward(&p, &o.cache, &r).unwrap();
        let e = grad_check(&p, &g.params, H, |q| {
            weighted_sum(
                lstm_forward(q, &x, &h0, &c0, CellMode::Standard)
                    .unwrap()
                    .outputs
                    .as_slice(),
                r.as_slice(),
            )
        });
        worst[3] = worst[3].max(e);

        let skip = [
            Skip::None,
            Skip::LastRow,
            Skip::MeanRows,
            Skip::InverseDistance,
        ][seed as usize % 4];
        let features = m * z + inp;
        let shape = CLstmShape {
            input_features: features,
            conv_channels: channels,
            kernel_width: width,
            conv_stride: stride,
            hidden: hid,
            m,
            z,
        };
        let mut model = CLstmModel::init(shape, skip, &mut rng).unwrap();
        model.out_scale = (0..m * z).map(|_| rng.random_range(0.2..2.0)).collect();
        let x = tensor(&mut rng, batch, steps_c, features);
        let t = uniform(&mut rng, batch * m * z);
        let (y, cache) = clstm_forward(&model, &x).unwrap();
        let gy = Matrix::from_vec(batch, m * z, mse_grad(y.as_slice(), &t).unwrap()).unwrap();
        let g = clstm_backward(&model, &cache, &gy).unwrap();
        let e = grad_check(&model, &g, H, |q| {
            mse_loss(clstm_forward(q, &x).unwrap().0.as_slice(), &t).unwrap()
        });
        worst[4] = worst[4].max(e);
    }
    let max = worst.iter().copied().fold(0.0, f64::max);
    outcome(
        max < 1e-4,
        format!(
            "max rel err dense {:.1e} conv1d {:.1e} elman {:.1e} lstm {:.1e} c-lstm {:.1e} (< 1e-4)",
            worst[0], worst[1], worst[2], worst[3], worst[4]
        ),
    )
}

trait ZerosLike {
    fn zeros_like_params(&self) -> Self;
}

impl<P: clstm_rom::nn::Params> ZerosLike for P {
    fn zeros_like_params(&self) -> Self {
        self.zeros_like()
    }
}

// ---------------------------------------------------------------- 2

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
fn jacobi_eigenvalues(mut a: Matrix) -> Vec<f64> {
    let n = a.rows();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        let diag: f64 = (0..n).map(|i| a[(i, i)] * a[(i, i)]).sum();
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)] == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

fn svd_oracle() -> Outcome {
    let (mut sig_err, mut rec_err, mut energy_err) = (0.0f64, 0.0f64, 0.0f64);
    let mut rank_ok = true;
    for seed in 0..20u64 {
        let mut rng = rng_from_seed(300 + seed);
        let (mut r, mut c) = (rng.random_range(2..=50), rng.random_range(2..=200));
        if seed % 3 == 0 {
            std::mem::swap(&mut r, &mut c);
            r = r.min(50);
        }
        let a = Matrix::from_vec(r, c, uniform(&mut rng, r * c)).unwrap();
        let dec = svd(&a).unwrap();
        let at = a.transpose();
        let gram = if r <= c {
            matmul(&a, &at).unwrap()
        } else {
            matmul(&at, &a).unwrap()
        };
        let oracle: Vec<f64> = jacobi_eigenvalues(gram)
            .iter()
            .map(|l| l.max(0.0).sqrt())
            .collect();
        let scale = oracle[0].max(1.0);
        for (s, o) in dec.sigma.iter().zip(&oracle) {
            sig_err = sig_err.max((s - o).abs() / scale);
        }
        rec_err =
            rec_err.max(dec.reconstruct().sub(&a).unwrap().frobenius_norm() / a.frobenius_norm());

        let target = rng.random_range(0.5..0.999);
        let basis = pod_truncate(&dec, target).unwrap();
        let n = basis.n_pod();
        let total: f64 = dec.sigma.iter().sum();
        let kept: f64 = dec.sigma[..n].iter().sum();
        let dropped: f64 = dec.sigma[n..].iter().sum();
        energy_err = energy_err.max((basis.energy_ratio - kept / total).abs());
        energy_err = energy_err.max(((kept + dropped) - total).abs() / total);
        let prev: f64 = dec.sigma[..n - 1].iter().sum::<f64>() / total;
        rank_ok &= basis.energy_ratio >= target && (n == 1 || prev < target);
    }
    outcome(
        sig_err <= 1e-8 && rec_err <= 1e-10 && energy_err <= 1e-12 && rank_ok,
        format!(
            "σ err {sig_err:.1e} (≤ 1e-8 of σ₁), reconstruction {rec_err:.1e} (≤ 1e-10), energy {energy_err:.1e} (≤ 1e-12), minimal rank {rank_ok}"
        ),
    )
}

// ---------------------------------------------------------------- 3

fn exp_rhs(state: &[f64], _theta: &[f64], out: &mut [f64]) {
    out[0] = state[0];
}

fn ode_truth() -> Outcome {
    let sys = OdeSystem {
        name: "exp",
        dim: 1,
        rhs: exp_rhs,
    };
    let p = ParameterPoint(vec![]);
    let e1 = rk4_integrate(&sys, &p, &[1.0], 0.1, 10).unwrap();
    let e2 = rk4_integrate(&sys, &p, &[1.0], 0.05, 20).unwrap();
    let err = |t: &Trajectory| (t.states[(0, t.len() - 1)] - 1f64.exp()).abs();
    let factor = err(&e1) / err(&e2);

    let mut drift = 0.0f64;
    let mut per_step = 0.0f64;
    for a in [0.5, 1.0, 4.0] {
        let th = ParameterPoint::scalar(a);
        let cases = [
            (OdeSystem::duffing(), vec![0.0, 0.0]),
            (OdeSystem::duffing(), vec![1.0 / a.sqrt(), 0.0]),
            (OdeSystem::duffing(), vec![-1.0 / a.sqrt(), 0.0]),
            (OdeSystem::predator_prey(), vec![0.0, 0.0]),
            (OdeSystem::predator_prey(), vec![1.0, 0.0]),
            (OdeSystem::predator_prey(), vec![1.0 / a, 1.0 - 1.0 / a]),
        ];
        for (sys, x0) in cases {
            let t = rk4_integrate(&sys, &th, &x0, 0.01, 10_000).unwrap();
            for j in 0..t.len() {
                let x = t.state(j);
                drift = drift.max(
                    x.iter()
                        .zip(&x0)
                        .map(|(u, v)| (u - v).abs())
                        .fold(0.0, f64::max),
                );
            }
            let one = rk4_integrate(&sys, &th, &x0, 0.01, 1).unwrap().state(1);
            per_step = per_step.max(
                one.iter()
                    .zip(&x0)
                    .map(|(u, v)| (u - v).abs())
                    .fold(0.0, f64::max),
            );
        }
    }
    outcome(
        (12.0..=20.0).contains(&factor) && drift <= 1e-8 && per_step <= 1e-12,
        format!("order factor {factor:.2} (12..20), equilibrium drift over 1e4 steps {drift:.1e} (≤ 1e-8), per step {per_step:.1e}"),
    )
}

// ---------------------------------------------------------------- shared ODE setups

fn ode_trajs(sys: OdeSystem, x0: &[f64], thetas: &[f64], steps: usize) -> Vec<Trajectory> {
    thetas
        .iter()
        .map(|&a| rk4_integrate(&sys, &ParameterPoint::scalar(a), x0, 0.01, steps).unwrap())
        .collect()
}

fn duffing_cfg(epochs: usize, window_step: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        lr: 3e-3,
        lr_final: Some(1e-4),
        conv_channels: 8,
        hidden: 16,
        window_step,
        ..TrainConfig::default()
    }
}

// ---------------------------------------------------------------- 4

fn duffing_reference() -> Outcome {
    let train_theta: Vec<f64> = (1..=10).map(|a| a as f64).collect();
    let train = ode_trajs(OdeSystem::duffing(), &[1.5, 0.0], &train_theta, 10_000);
    let test = ode_trajs(
        OdeSystem::duffing(),
        &[1.5, 0.0],
        &[1.12, 5.22, 8.43],
        10_000,
    );
    let fit = fit_two_stage(&train, 10, 200, 1, &duffing_cfg(100, 20), 7).unwrap();
    let report = evaluate(&fit.model, &test, 1000).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for s in &report.per_theta {
        pass &= s.mae < 0.15 && s.max_abs_normalized < 2.0;
        parts.push(format!(
            "a={} mae {:.4} max|x| {:.3}",
            s.theta.coords()[0],
            s.mae,
            s.max_abs_normalized
        ));
    }
    outcome(pass, format!("{} (mae < 0.15, max < 2)", parts.join(", ")))
}

// ---------------------------------------------------------------- 5, 6

struct System {
    name: &'static str,
    sys: OdeSystem,
    x0: [f64; 2],
    train: Vec<f64>,
    test: Vec<f64>,
}

fn systems() -> Vec<System> {
    let mut rng = rng_from_seed(55);
    let mut draw =
        |lo: f64, hi: f64| -> Vec<f64> { (0..8).map(|_| rng.random_range(lo..hi)).collect() };
    vec![
        System {
            name: "duffing",
            sys: OdeSystem::duffing(),
            x0: [1.5, 0.0],
            train: (1..=10).map(|a| a as f64).collect(),
            test: draw(1.0, 10.0),
        },
        System {
            name: "predator_prey",
            sys: OdeSystem::predator_prey(),
            x0: [0.5, 0.5],
            train: (0..10).map(|i| 1.5 + 0.5 * i as f64).collect(),
            test: draw(1.5, 6.0),
        },
    ]
}

const TREND_K: usize = 5;
const TREND_STEPS: usize = 3000;

fn trend_cfg() -> TrainConfig {
    duffing_cfg(100, 10)
}

/// Mean MAE over the test set and total rollout wall time for one (w, m).
fn trend_point(s: &System, w: usize, m: usize) -> (f64, Duration) {
    let train = ode_trajs(s.sys, &s.x0, &s.train, TREND_STEPS);
    let test = ode_trajs(s.sys, &s.x0, &s.test, w + 1000);
    let fit = fit_two_stage(&train, TREND_K, w, m, &trend_cfg(), 5).unwrap();
    let r = evaluate(&fit.model, &test, 1000).unwrap();
    (r.mean_mae(), r.total_wall_time())
}

fn w_trend() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for s in systems() {
        let maes: Vec<f64> = [25, 50, 100, 200]
            .iter()
            .map(|&w| trend_point(&s, w, 1).0)
            .collect();
        let ok = maes[3] <= maes[0] && maes[3] <= 1.1 * maes[2];
        pass &= ok;
        parts.push(format!(
            "{} mae w=25 {:.4} w=50 {:.4} w=100 {:.4} w=200 {:.4}",
            s.name, maes[0], maes[1], maes[2], maes[3]
        ));
    }
    outcome(pass, parts.join("; "))
}

fn m_trend() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for s in systems() {
        let pts: Vec<(f64, Duration)> = [1, 5, 10, 25]
            .iter()
            .map(|&m| trend_point(&s, 100, m))
            .collect();
        let t = |i: usize| pts[i].1.as_secs_f64();
        let ok = t(2) < t(1) && t(1) < t(0) && pts[0].0 <= pts[3].0;
        pass &= ok;
        parts.push(format!(
            "{} time m=1 {:.2}s m=5 {:.2}s m=10 {:.2}s, mae m=1 {:.4} m=25 {:.4}",
            s.name,
            t(0),
            t(1),
            t(2),
            pts[0].0,
            pts[3].0
        ));
    }
    outcome(pass, parts.join("; "))
}

// ---------------------------------------------------------------- 7, 8, 9

fn cap_surrogate() -> SurrogateConfig {
    SurrogateConfig {
        points_per_block: 32,
        blocks: 2,
        periodic_modes: 6,
        transient_modes: 0,
        amplitude: 1.0,
        mode_decay: 0.8,
        theta_range: (1.0, 2.0),
        omega_range: (0.6, 0.7),
        swing_in_steps: 0,
        noise: 0.02,
    }
}

fn surrogate_trajs(
    cfg: &SurrogateConfig,
    thetas: &[f64],
    dt: f64,
    steps: usize,
) -> Vec<Trajectory> {
    thetas
        .iter()
        .map(|&t| synth_cavity_like(cfg, t, dt, steps).unwrap())
        .collect()
}

fn surrogate_train_cfg(epochs: usize, hidden: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        lr: 3e-3,
        lr_final: Some(1e-4),
        conv_channels: 8,
        hidden,
        window_step: 2,
        ..TrainConfig::default()
    }
}

fn cap_u_curve() -> Outcome {
    let sur = cap_surrogate();
    let train_theta: Vec<f64> = (0..6).map(|i| 1.0 + 0.2 * i as f64).collect();
    let test_theta = [1.1, 1.5, 1.9];
    let (dt, steps, w, horizon) = (0.5, 300, 24, 200);
    let train = surrogate_trajs(&sur, &train_theta, dt, steps);
    let test = surrogate_trajs(&sur, &test_theta, dt, w + horizon);
    let test_snaps = stack_snapshots(&test, 0).unwrap();
    let mut nn = Vec::new();
    let mut proj = Vec::new();
    for cap in [4, 8, 16, 32] {
        let cfg = PipelineConfig {
            n_i: 0,
            pod: PodSettings {
                energy_target: 0.99999,
                coeff_cap: Some(cap),
                blocks: 2,
            },
            k: 3,
            w,
            m: 1,
            train_1: surrogate_train_cfg(100, 24),
            train_2: surrogate_train_cfg(100, 24),
        };
        let p = build_pipeline(&train, &cfg, 9).unwrap().pipeline;
        proj.push(projection_error(&p.basis_2, &test_snaps).unwrap());
        let mut errs = Vec::new();
        for t in &test {
            let r = pipeline_rollout(&p, &t.states.columns(0, w), &t.theta, horizon).unwrap();
            errs.extend(relative_errors(&r.full, &t.states.columns(w, w + horizon)).unwrap());
        }
        nn.push(errs.iter().sum::<f64>() / errs.len() as f64);
    }
    let (imin, _) =
        nn.iter().enumerate().fold(
            (0, f64::INFINITY),
            |b, (i, &v)| if v < b.1 { (i, v) } else { b },
        );
    let interior = imin != 0 && imin != nn.len() - 1;
    let monotone = proj.windows(2).all(|p| p[1] <= p[0]);
    outcome(
        interior && monotone,
        format!(
            "rollout rel err {:?}, projection err {:?} for caps [4, 8, 16, 32]",
            nn.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>(),
            proj.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>()
        ),
    )
}

fn swing_surrogate() -> SurrogateConfig {
    SurrogateConfig {
        points_per_block: 32,
        blocks: 2,
        periodic_modes: 4,
        transient_modes: 2,
        amplitude: 1.0,
        mode_decay: 0.8,
        theta_range: (1.0, 2.0),
        omega_range: (0.5, 0.8),
        swing_in_steps: 60,
        noise: 0.0,
    }
}

fn pipeline_non_degradation() -> Outcome {
    let sur = swing_surrogate();
    let train_theta: Vec<f64> = (0..8).map(|i| 1.0 + i as f64 / 7.0).collect();
    let test_theta = [1.07, 1.33, 1.52, 1.71, 1.93];
    let (dt, steps, w, n_i, horizon) = (0.5, 400, 24, 60, 300);
    let train = surrogate_trajs(&sur, &train_theta, dt, steps);
    let test = surrogate_trajs(&sur, &test_theta, dt, n_i + horizon);
    let cfg = PipelineConfig {
        n_i,
        pod: PodSettings {
            energy_target: 0.999,
            coeff_cap: None,
            blocks: 2,
        },
        k: 4,
        w,
        m: 1,
        train_1: surrogate_train_cfg(150, 24),
        train_2: surrogate_train_cfg(150, 24),
    };
    let p = build_pipeline(&train, &cfg, 21).unwrap().pipeline;
    let periodic_steps = horizon - w;
    let (mut pipe, mut exact) = (Vec::new(), Vec::new());
    for t in &test {
        // Pipeline from the first window. Column j of the forecast is step w + j;
        // both runs are scored on steps n_i + w .. n_i + horizon.
        let r = pipeline_rollout(&p, &t.states.columns(0, w), &t.theta, n_i + horizon - w).unwrap();
        let pred = r.full.columns(n_i, n_i + horizon - w);
        let truth = t.states.columns(n_i + w, n_i + horizon);
        pipe.extend(relative_errors(&pred, &truth).unwrap());
        // Periodic model alone from the exact window at the start of the periodic phase.
        let win = pod_project(&p.basis_2, &t.states.columns(n_i, n_i + w)).unwrap();
        let r2 = rollout(&p.model_2, &win.transpose(), &t.theta, periodic_steps).unwrap();
        exact.extend(relative_errors(&p.basis_2.lift(&r2.predicted).unwrap(), &truth).unwrap());
    }
    let mp = pipe.iter().sum::<f64>() / pipe.len() as f64;
    let me = exact.iter().sum::<f64>() / exact.len() as f64;
    outcome(
        mp <= 2.0 * me,
        format!("periodic-phase rel err: pipeline {mp:.4}, periodic-only with exact window {me:.4}, ratio {:.2} (≤ 2)", mp / me),
    )
}

fn basis_change_exactness() -> Outcome {
    let sur = swing_surrogate();
    let thetas = [1.0, 1.4, 1.8];
    let trajs = surrogate_trajs(&sur, &thetas, 0.5, 300);
    let b1 = block_pod(&stack_snapshots(&trajs, 0).unwrap(), 2, 0.999999, None).unwrap();
    let b2 = block_pod(&stack_snapshots(&trajs, 60).unwrap(), 2, 0.999999, None).unwrap();
    let m = basis_change(&b1, &b2).unwrap();
    let mut rng = rng_from_seed(99);
    let d = b1.full_dim;
    let x = Matrix::from_vec(d, 100, uniform(&mut rng, d * 100)).unwrap();
    let via_1 = matmul(&m, &pod_project(&b1, &x).unwrap()).unwrap();
    let direct = pod_project(&b2, &x).unwrap();
    let err = via_1.max_abs_diff(&direct);

    let tiny = TrainConfig {
        epochs: 3,
        conv_channels: 4,
        hidden: 5,
        window_step: 5,
        ..TrainConfig::default()
    };
    let cfg = PipelineConfig {
        n_i: 0,
        pod: PodSettings {
            energy_target: 0.9999,
            coeff_cap: None,
            blocks: 2,
        },
        k: 2,
        w: 10,
        m: 3,
        train_1: tiny.clone(),
        train_2: tiny,
    };
    let p = build_pipeline(&trajs, &cfg, 4).unwrap().pipeline;
    let mut bit_exact = true;
    for t in &trajs {
        let window = t.states.columns(0, 10);
        let r = pipeline_rollout(&p, &window, &t.theta, 50).unwrap();
        let single = rollout(
            &p.model_2,
            &pod_project(&p.basis_2, &window).unwrap().transpose(),
            &t.theta,
            50,
        )
        .unwrap();
        let lifted = p.basis_2.lift(&single.predicted).unwrap();
        bit_exact &= r
            .full
            .as_slice()
            .iter()
            .zip(lifted.as_slice())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        let reduced = reduce(t, &p.basis_2, BasisId::Periodic).unwrap();
        bit_exact &= reduced.coeffs.columns(0, 10) == pod_project(&p.basis_2, &window).unwrap();
    }
    outcome(
        err <= 1e-12 && bit_exact,
        format!(
            "max |M·U1ᵀx − U2ᵀx| {err:.1e} over 100 states (≤ 1e-12; {} → {} modes), N_I=0 pipeline bit-exact {bit_exact}",
            b1.n_pod(),
            b2.n_pod()
        ),
    )
}

// ---------------------------------------------------------------- 10

const DET_CONFIG: &str = r#"seed = 3

[system]
kind = "predator_prey"
dt = 0.05
steps = 300

[theta]
range = [1.5, 4.0]
count = 5
test = [2.2, 3.3]

[model]
k = 2
w = 16
m = 2
conv_channels = 4
hidden = 6

[training]
epochs = 5
batch_size = 8
lr = 3e-3
window_step = 4

[evaluation]
horizon = 100
"#;

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config::parse(DET_CONFIG).unwrap();
    let mut archives = Vec::new();
    let mut metric_files = Vec::new();
    let mut resave_identical = true;
    for run in 0..2 {
        let ctx = Context::new(
            cfg.clone(),
            None,
            Some(dir.path().join(format!("run{run}"))),
        );
        let (train, test) = load_data(&ctx.config).unwrap();
        let outcome = fit(&ctx.config, &train, ctx.seed, None).unwrap();
        let ar = to_archive(&ctx, &outcome.model);
        ar.save(&ctx.model_path()).unwrap();
        let bytes = std::fs::read(ctx.model_path()).unwrap();
        let loaded = Archive::load(&ctx.model_path()).unwrap();
        let again = dir.path().join(format!("resaved{run}.romf"));
        loaded.save(&again).unwrap();
        resave_identical &= std::fs::read(&again).unwrap() == bytes;
        let model = from_archive(&loaded).unwrap();
        resave_identical &= to_archive(&ctx, &model).to_bytes() == bytes;
        let ev = score(&ctx.config, &model, &test).unwrap();
        let metrics = ctx.out.join("metrics.csv");
        tables::write_metrics(&metrics, &ev.steps).unwrap();
        archives.push(bytes);
        metric_files.push(std::fs::read(metrics).unwrap());
    }
    let same_archive = archives[0] == archives[1];
    let same_metrics = metric_files[0] == metric_files[1];
    outcome(
        same_archive && resave_identical && same_metrics,
        format!(
            "archives identical {same_archive} ({} bytes), load/save byte-identical {resave_identical}, metrics.csv identical {same_metrics}",
            archives[0].len()
        ),
    )
}

// ----------------------------------------------------------------

type Criterion = (u32, &'static str, Option<Duration>, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        (
            1,
            "gradient integrity",
            Some(Duration::from_secs(60)),
            gradients,
        ),
        (
            2,
            "svd/pod oracle",
            Some(Duration::from_secs(30)),
            svd_oracle,
        ),
        (
            3,
            "ode ground truth",
            Some(Duration::from_secs(10)),
            ode_truth,
        ),
        (
            4,
            "duffing reference setup",
            Some(Duration::from_secs(30 * 60)),
            duffing_reference,
        ),
        (5, "w-trend", None, w_trend),
        (6, "m-trend", None, m_trend),
        (7, "coefficient-cap u-curve", None, cap_u_curve),
        (
            8,
            "pipeline non-degradation",
            None,
            pipeline_non_degradation,
        ),
        (9, "basis-change exactness", None, basis_change_exactness),
        (10, "determinism and persistence", None, determinism),
    ];
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let elapsed = start.elapsed();
        let in_budget = budget.is_none_or(|b| elapsed <= b);
        let pass = o.pass && in_budget;
        if !pass {
            failed += 1;
        }
        let budget_note = budget
            .map(|b| format!(", budget {} s", b.as_secs()))
            .unwrap_or_default();
        println!(
            "criterion {id:>2} {name}: {} | {} [{:.1} s{budget_note}]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        // Failures are reported above; set ACCEPTANCE_STRICT=1 to make them fatal.
        if std::env::var_os("ACCEPTANCE_STRICT").is_some_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}
