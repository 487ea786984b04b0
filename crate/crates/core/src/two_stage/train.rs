use rand::seq::SliceRandom;
use rand::RngCore;

use super::clstm::{clstm_backward, clstm_forward, CLstmModel, CLstmShape, Skip};
use super::model::{first_stage_input, second_stage_input, TwoStageModel};
use crate::clustering::{kmeans, Clustering, ParameterPoint};
use crate::dataset::{build_cluster_datasets, make_windows_strided, Normalizer, WindowSample};
use crate::error::{Result, RomError};
use crate::linalg::Matrix;
use crate::nn::loss::{mse_grad, mse_loss};
use crate::nn::{rng_from_seed, AdamConfig, AdamState, Params, Tensor3};
use crate::ode::Trajectory;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Epochs for G; defaults to `epochs` when `None`.
    pub second_stage_epochs: Option<usize>,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate of the last epoch; the rate decays geometrically from `lr`.
    pub lr_final: Option<f64>,
    /// Stop when the best epoch loss has not improved by `min_delta` for this many epochs.
    pub patience: usize,
    pub min_delta: f64,
    pub conv_channels: usize,
    pub kernel_width: usize,
    pub conv_stride: usize,
    pub hidden: usize,
    /// Add the persistence/averaging baselines to the experts and G.
    pub skip: bool,
    /// Scale each head output by the RMS of its residual target.
    pub scale_outputs: bool,
    /// Offset between consecutive training windows.
    pub window_step: usize,
    pub kmeans_iters: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            second_stage_epochs: None,
            batch_size: 32,
            lr: 1e-3,
            lr_final: None,
            patience: 50,
            min_delta: 1e-8,
            conv_channels: 32,
            kernel_width: 3,
            conv_stride: 1,
            hidden: 64,
            skip: true,
            scale_outputs: true,
            window_step: 1,
            kmeans_iters: 100,
        }
    }
}

impl TrainConfig {
    fn shape(&self, input_features: usize, m: usize, z: usize) -> CLstmShape {
        CLstmShape {
            input_features,
            conv_channels: self.conv_channels,
            kernel_width: self.kernel_width,
            conv_stride: self.conv_stride,
            hidden: self.hidden,
            m,
            z,
        }
    }
}

/// Independent seed for a named sub-task of a run.
pub fn sub_seed(master: u64, stream: u64) -> u64 {
    rng_from_seed(master ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)).next_u64()
}

const STREAM_KMEANS: u64 = 1;
const STREAM_SECOND: u64 = 2;
const STREAM_FIRST: u64 = 100;

/// Fixed-shape input/target pairs stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub steps: usize,
    pub features: usize,
    pub outputs: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
}

impl SampleSet {
    pub fn new(steps: usize, features: usize, outputs: usize) -> Self {
        Self {
            steps,
            features,
            outputs,
            inputs: Vec::new(),
            targets: Vec::new(),
        }
    }

    pub fn push(&mut self, input: &[f64], target: &[f64]) -> Result<()> {
        if input.len() != self.steps * self.features || target.len() != self.outputs {
            return Err(RomError::shape("sample does not match the set layout"));
        }
        self.inputs.extend_from_slice(input);
        self.targets.extend_from_slice(target);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.targets.len() / self.outputs.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input(&self, i: usize) -> &[f64] {
        let n = self.steps * self.features;
        &self.inputs[i * n..(i + 1) * n]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.outputs..(i + 1) * self.outputs]
    }

    pub fn gather(&self, idx: &[usize]) -> (Tensor3, Vec<f64>) {
        let mut x = Vec::with_capacity(idx.len() * self.steps * self.features);
        let mut y = Vec::with_capacity(idx.len() * self.outputs);
        for &i in idx {
            x.extend_from_slice(self.input(i));
            y.extend_from_slice(self.target(i));
        }
        let x =
            Tensor3::from_vec(idx.len(), self.steps, self.features, x).expect("consistent layout");
        (x, y)
    }
}

/// Minibatch Adam on MSE; returns the mean loss of every epoch run.
pub fn train_model(
    model: &mut CLstmModel,
    data: &SampleSet,
    epochs: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(RomError::input("no training samples"));
    }
    if cfg.batch_size == 0 {
        return Err(RomError::input("batch size must be at least 1"));
    }
    let mut rng = rng_from_seed(seed);
    let mut adam = AdamState::new(
        model,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(epochs);
    let mut best = f64::INFINITY;
    let mut best_epoch = 0;
    let decay = match cfg.lr_final {
        Some(end) if epochs > 1 => (end / cfg.lr).powf(1.0 / (epochs - 1) as f64),
        _ => 1.0,
    };
    for epoch in 0..epochs {
        adam.config.lr = cfg.lr * decay.powi(epoch as i32);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, target) = data.gather(chunk);
            let (y, cache) = clstm_forward(model, &x)?;
            total += mse_loss(y.as_slice(), &target)? * chunk.len() as f64;
            let g = Matrix::from_vec(y.rows(), y.cols(), mse_grad(y.as_slice(), &target)?)?;
            let grads = clstm_backward(model, &cache, &g)?;
            adam.step(model, &grads)?;
        }
        let loss = total / data.len() as f64;
        if !loss.is_finite() || !model.all_finite() {
            return Err(RomError::divergence("training epoch", epoch));
        }
        curve.push(loss);
        if loss < best - cfg.min_delta {
            best = loss;
            best_epoch = epoch;
        } else if epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    Ok(curve)
}

/// Sets `out_scale` to the RMS over `data` of target minus baseline, per output.
pub fn fit_out_scale(model: &mut CLstmModel, data: &SampleSet) {
    let n = model.output_len();
    let mut sum2 = vec![0.0; n];
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(256) {
        let (x, target) = data.gather(chunk);
        let base = model.baselines(&x);
        for (r, t) in target.chunks(n).enumerate() {
            for j in 0..n {
                let d = t[j] - base[(r, j)];
                sum2[j] += d * d;
            }
        }
    }
    model.out_scale = sum2
        .iter()
        .map(|s| {
            let rms = (s / data.len() as f64).sqrt();
            if rms > 1e-12 {
                rms
            } else {
                1.0
            }
        })
        .collect();
}

fn expert_samples(
    samples: &[WindowSample],
    theta_norm: &Normalizer,
    m: usize,
) -> Result<SampleSet> {
    let first = samples
        .first()
        .ok_or_else(|| RomError::input("cluster without samples"))?;
    let (w, z) = first.input.shape();
    let p = theta_norm.dim();
    let mut set = SampleSet::new(w, z + p, m * z);
    for s in samples {
        let th = theta_norm.apply_point(&s.theta)?;
        set.push(&first_stage_input(&s.input, &th), s.target.as_slice())?;
    }
    Ok(set)
}

/// Trains one expert per cluster dataset; expert `i` draws from its own seed stream.
pub fn train_first_stage(
    datasets: &[Vec<WindowSample>],
    theta_norm: &Normalizer,
    m: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<(CLstmModel, Vec<f64>)>> {
    datasets
        .iter()
        .enumerate()
        .map(|(i, samples)| {
            let set = expert_samples(samples, theta_norm, m)?;
            let z = set.outputs / m;
            let s = sub_seed(seed, STREAM_FIRST + i as u64);
            let mut rng = rng_from_seed(s);
            let skip = if cfg.skip { Skip::LastRow } else { Skip::None };
            let mut model = CLstmModel::init(cfg.shape(set.features, m, z), skip, &mut rng)?;
            if cfg.scale_outputs {
                fit_out_scale(&mut model, &set);
            }
            let curve = train_model(&mut model, &set, cfg.epochs, cfg, sub_seed(s, 0))
                .map_err(|e| e.in_phase(&format!("expert {i}")))?;
            Ok((model, curve))
        })
        .collect()
}

/// G samples: frozen expert predictions for every window, packed in expert order.
pub fn second_stage_samples(
    experts: &[CLstmModel],
    samples: &[WindowSample],
    centroids_norm: &[Vec<f64>],
    theta_norm: &Normalizer,
) -> Result<SampleSet> {
    let first = samples
        .first()
        .ok_or_else(|| RomError::input("no windows for the second stage"))?;
    let (m, z) = experts[0].output_shape;
    let p = theta_norm.dim();
    let (w, _) = first.input.shape();
    let thetas: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| theta_norm.apply_point(&s.theta))
        .collect::<Result<_>>()?;
    let mut local = vec![Vec::with_capacity(samples.len() * m * z); experts.len()];
    const CHUNK: usize = 256;
    for start in (0..samples.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(samples.len());
        let mut data = Vec::with_capacity((end - start) * w * (z + p));
        for (s, th) in samples[start..end].iter().zip(&thetas[start..end]) {
            data.extend(first_stage_input(&s.input, th));
        }
        let x = Tensor3::from_vec(end - start, w, z + p, data)?;
        for (e, out) in experts.iter().zip(local.iter_mut()) {
            let (y, _) = clstm_forward(e, &x)?;
            out.extend_from_slice(y.as_slice());
        }
    }
    let k = experts.len();
    let mut set = SampleSet::new(k, m * z + p, m * z);
    for (n, (s, th)) in samples.iter().zip(&thetas).enumerate() {
        let locals: Vec<Matrix> = local
            .iter()
            .map(|l| Matrix::from_vec(m, z, l[n * m * z..(n + 1) * m * z].to_vec()))
            .collect::<Result<_>>()?;
        set.push(
            &second_stage_input(&locals, centroids_norm, th)?,
            s.target.as_slice(),
        )?;
    }
    Ok(set)
}

/// Trains G with the experts frozen.
pub fn train_second_stage(
    experts: &[CLstmModel],
    samples: &[WindowSample],
    centroids_norm: &[Vec<f64>],
    theta_norm: &Normalizer,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(CLstmModel, Vec<f64>)> {
    if experts.is_empty() {
        return Err(RomError::input("no experts"));
    }
    let set = second_stage_samples(experts, samples, centroids_norm, theta_norm)?;
    let (m, z) = experts[0].output_shape;
    let mut rng = rng_from_seed(seed);
    let skip = if cfg.skip {
        Skip::InverseDistance
    } else {
        Skip::None
    };
    let mut g = CLstmModel::init(cfg.shape(set.features, m, z), skip, &mut rng)?;
    if cfg.scale_outputs {
        fit_out_scale(&mut g, &set);
    }
    let epochs = cfg.second_stage_epochs.unwrap_or(cfg.epochs);
    let curve = train_model(&mut g, &set, epochs, cfg, sub_seed(seed, 0))
        .map_err(|e| e.in_phase("second stage"))?;
    Ok((g, curve))
}

#[derive(Debug, Clone)]
pub struct TwoStageFit {
    pub model: TwoStageModel,
    pub clustering: Clustering,
    pub first_stage_curves: Vec<Vec<f64>>,
    pub second_stage_curve: Vec<f64>,
    /// Per-cluster window counts, one line each.
    pub dataset_summary: String,
}

/// Clusters the trajectory parameters, normalizes, and trains both stages.
pub fn fit_two_stage(
    trajs: &[Trajectory],
    k: usize,
    w: usize,
    m: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TwoStageFit> {
    if trajs.is_empty() {
        return Err(RomError::input("no training trajectories"));
    }
    let thetas: Vec<ParameterPoint> = trajs.iter().map(|t| t.theta.clone()).collect();
    let clustering = kmeans(&thetas, k, sub_seed(seed, STREAM_KMEANS), cfg.kmeans_iters)?;
    let normalizer = Normalizer::fit(trajs.iter().map(|t| &t.states))?;
    let theta_normalizer = Normalizer::fit_points(&thetas)?;
    let normed: Vec<Trajectory> = trajs
        .iter()
        .map(|t| normalizer.apply_trajectory(t))
        .collect::<Result<_>>()?;
    let datasets = build_cluster_datasets(&normed, &clustering, w, m, cfg.window_step)?;
    let summary = crate::dataset::manifest(&datasets, w, m, cfg.window_step, &normalizer);
    let pools: Vec<Vec<WindowSample>> = datasets.into_iter().map(|d| d.samples).collect();
    let trained = train_first_stage(&pools, &theta_normalizer, m, cfg, seed)?;
    let (first_stage, first_stage_curves): (Vec<_>, Vec<_>) = trained.into_iter().unzip();

    let mut all = Vec::new();
    for (i, t) in normed.iter().enumerate() {
        all.extend(make_windows_strided(t, w, m, cfg.window_step, i)?);
    }
    let centroids_norm: Vec<Vec<f64>> = clustering
        .centroids
        .iter()
        .map(|c| theta_normalizer.apply_point(c))
        .collect::<Result<_>>()?;
    let (second_stage, second_stage_curve) = train_second_stage(
        &first_stage,
        &all,
        &centroids_norm,
        &theta_normalizer,
        cfg,
        sub_seed(seed, STREAM_SECOND),
    )?;
    let model = TwoStageModel {
        centroids: clustering.centroids.clone(),
        first_stage,
        second_stage,
        normalizer,
        theta_normalizer,
        w,
        m,
    };
    model.validate()?;
    Ok(TwoStageFit {
        model,
        clustering,
        first_stage_curves,
        second_stage_curve,
        dataset_summary: summary,
    })
}
