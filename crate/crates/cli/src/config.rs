//! Experiment configuration read from TOML.
//!
//! Unknown keys are rejected. Every error carries the 1-based line of the
//! offending key (or of its section header when the key is missing).

use std::path::{Path, PathBuf};

use serde::Deserialize;

use clstm_rom::ode::SurrogateConfig;
use clstm_rom::pod_pipeline::PodSettings;
use clstm_rom::two_stage::TrainConfig;
use clstm_rom::RomError;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub system: SystemConfig,
    pub theta: ThetaConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    pub pod: Option<PodConfig>,
    pub surrogate: Option<SurrogateSection>,
    pub sweep: Option<SweepConfig>,
    /// The TOML this config was parsed from.
    #[serde(skip)]
    pub text: String,
}

fn default_seed() -> u64 {
    0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    Duffing,
    PredatorPrey,
    Surrogate,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub kind: SystemKind,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    pub initial_state: Option<Vec<f64>>,
    /// Keep every `stride`-th integrated state.
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub train_files: Vec<CsvSource>,
    #[serde(default)]
    pub test_files: Vec<CsvSource>,
}

fn default_dt() -> f64 {
    0.01
}

fn default_steps() -> usize {
    10_000
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaConfig {
    pub train: Option<Vec<f64>>,
    /// `[lo, hi]`, sampled at `count` evenly spaced points.
    pub range: Option<[f64; 2]>,
    pub count: Option<usize>,
    #[serde(default)]
    pub test: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub k: usize,
    pub w: usize,
    pub m: usize,
    pub conv_channels: usize,
    pub kernel_width: usize,
    pub conv_stride: usize,
    pub hidden: usize,
    pub skip: bool,
    pub scale_outputs: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            k: 10,
            w: 200,
            m: 1,
            conv_channels: t.conv_channels,
            kernel_width: t.kernel_width,
            conv_stride: t.conv_stride,
            hidden: t.hidden,
            skip: t.skip,
            scale_outputs: t.scale_outputs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub second_stage_epochs: Option<usize>,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_final: Option<f64>,
    pub patience: usize,
    pub min_delta: f64,
    pub window_step: usize,
    pub kmeans_iters: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            second_stage_epochs: t.second_stage_epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            lr_final: t.lr_final,
            patience: t.patience,
            min_delta: t.min_delta,
            window_step: t.window_step,
            kmeans_iters: t.kmeans_iters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    /// Forecast length after the initial window; `None` runs to the end of the data.
    pub horizon: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PodConfig {
    #[serde(default = "default_energy")]
    pub energy_target: f64,
    pub coeff_cap: Option<usize>,
    #[serde(default = "one")]
    pub blocks: usize,
    /// Swing-in length in (strided) steps; 0 trains a single periodic model.
    #[serde(default)]
    pub n_i: usize,
}

fn default_energy() -> f64 {
    0.999
}

impl PodConfig {
    pub fn settings(&self) -> PodSettings {
        PodSettings {
            energy_target: self.energy_target,
            coeff_cap: self.coeff_cap,
            blocks: self.blocks,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateSection {
    pub points_per_block: Option<usize>,
    pub blocks: Option<usize>,
    pub periodic_modes: Option<usize>,
    pub transient_modes: Option<usize>,
    pub amplitude: Option<f64>,
    pub mode_decay: Option<f64>,
    pub theta_range: Option<[f64; 2]>,
    pub omega_range: Option<[f64; 2]>,
    pub swing_in_steps: Option<usize>,
    pub noise: Option<f64>,
}

impl SurrogateSection {
    pub fn to_config(&self) -> SurrogateConfig {
        let d = SurrogateConfig::default();
        SurrogateConfig {
            points_per_block: self.points_per_block.unwrap_or(d.points_per_block),
            blocks: self.blocks.unwrap_or(d.blocks),
            periodic_modes: self.periodic_modes.unwrap_or(d.periodic_modes),
            transient_modes: self.transient_modes.unwrap_or(d.transient_modes),
            amplitude: self.amplitude.unwrap_or(d.amplitude),
            mode_decay: self.mode_decay.unwrap_or(d.mode_decay),
            theta_range: self
                .theta_range
                .map(|[a, b]| (a, b))
                .unwrap_or(d.theta_range),
            omega_range: self
                .omega_range
                .map(|[a, b]| (a, b))
                .unwrap_or(d.omega_range),
            swing_in_steps: self.swing_in_steps.unwrap_or(d.swing_in_steps),
            noise: self.noise.unwrap_or(d.noise),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub w: Vec<usize>,
    #[serde(default)]
    pub m: Vec<usize>,
    #[serde(default)]
    pub cap: Vec<usize>,
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of `key` inside `[section]` (top level when `section` is empty).
/// Falls back to the section header, then to line 1.
pub fn key_line(text: &str, section: &str, key: &str) -> usize {
    let mut current = String::new();
    let mut header_line = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.split(']').next()) {
            current = name.trim().to_string();
            if current == section {
                header_line = Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim().trim_matches('"') == key {
                    return i + 1;
                }
            }
        }
    }
    header_line.unwrap_or(1)
}

fn config_err(line: usize, message: impl Into<String>) -> RomError {
    RomError::Config {
        line,
        message: message.into(),
    }
}

pub fn parse(text: &str) -> Result<Config, RomError> {
    let mut config: Config = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| line_of_offset(text, s.start)).unwrap_or(1);
        config_err(line, e.message().to_string())
    })?;
    validate(&config, text)?;
    config.text = text.to_string();
    Ok(config)
}

pub fn load(path: &Path) -> Result<Config, RomError> {
    parse(&std::fs::read_to_string(path)?)
}

impl Config {
    /// Line of `key` in `[section]` of the source text.
    pub fn line_of(&self, section: &str, key: &str) -> usize {
        key_line(&self.text, section, key)
    }

    /// Training parameters, sorted. Explicit `train` wins over `range`.
    pub fn train_thetas(&self) -> Vec<f64> {
        if self.system.kind == SystemKind::Csv {
            return self.system.train_files.iter().map(|f| f.theta).collect();
        }
        if let Some(t) = &self.theta.train {
            return t.clone();
        }
        match (self.theta.range, self.theta.count) {
            (Some([lo, hi]), Some(n)) if n > 1 => (0..n)
                .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                .collect(),
            (Some([lo, _]), Some(1)) => vec![lo],
            _ => Vec::new(),
        }
    }

    pub fn test_thetas(&self) -> Vec<f64> {
        if self.system.kind == SystemKind::Csv {
            return self.system.test_files.iter().map(|f| f.theta).collect();
        }
        self.theta.test.clone()
    }

    /// States per trajectory after subsampling, for generated systems.
    pub fn states_per_trajectory(&self) -> Option<usize> {
        match self.system.kind {
            SystemKind::Csv => None,
            _ => Some(self.system.steps / self.system.stride + 1),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let (m, t) = (&self.model, &self.training);
        TrainConfig {
            epochs: t.epochs,
            second_stage_epochs: t.second_stage_epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            lr_final: t.lr_final,
            patience: t.patience,
            min_delta: t.min_delta,
            conv_channels: m.conv_channels,
            kernel_width: m.kernel_width,
            conv_stride: m.conv_stride,
            hidden: m.hidden,
            skip: m.skip,
            scale_outputs: m.scale_outputs,
            window_step: t.window_step,
            kmeans_iters: t.kmeans_iters,
        }
    }
}

fn validate(c: &Config, text: &str) -> Result<(), RomError> {
    let at = |section: &str, key: &str, msg: String| config_err(key_line(text, section, key), msg);
    let s = &c.system;
    if s.kind != SystemKind::Csv {
        if !(s.dt > 0.0 && s.dt.is_finite()) {
            return Err(at(
                "system",
                "dt",
                format!("dt must be positive, got {}", s.dt),
            ));
        }
        if s.steps == 0 {
            return Err(at("system", "steps", "steps must be at least 1".into()));
        }
    }
    if s.stride == 0 {
        return Err(at("system", "stride", "stride must be at least 1".into()));
    }
    let dim = match s.kind {
        SystemKind::Duffing | SystemKind::PredatorPrey => Some(2),
        _ => None,
    };
    if let (Some(x0), Some(d)) = (&s.initial_state, dim) {
        if x0.len() != d {
            return Err(at(
                "system",
                "initial_state",
                format!("initial_state needs {d} values, got {}", x0.len()),
            ));
        }
    }
    if s.kind == SystemKind::Csv {
        if s.train_files.is_empty() {
            return Err(at(
                "system",
                "train_files",
                "kind = \"csv\" needs train_files".into(),
            ));
        }
    } else if !s.train_files.is_empty() || !s.test_files.is_empty() {
        return Err(at(
            "system",
            "train_files",
            "train_files and test_files need kind = \"csv\"".into(),
        ));
    }
    if s.kind == SystemKind::Surrogate && c.surrogate.is_none() {
        return Err(at(
            "system",
            "kind",
            "kind = \"surrogate\" needs a [surrogate] section".into(),
        ));
    }

    let th = &c.theta;
    if s.kind != SystemKind::Csv {
        match (&th.train, th.range, th.count) {
            (Some(_), Some(_), _) => {
                return Err(at(
                    "theta",
                    "range",
                    "give either train or range, not both".into(),
                ));
            }
            (Some(t), _, _) if t.is_empty() => {
                return Err(at(
                    "theta",
                    "train",
                    "train must list at least one value".into(),
                ));
            }
            (None, Some(_), None) => return Err(at("theta", "range", "range needs count".into())),
            (None, Some([lo, hi]), Some(n)) if n == 0 || !(lo <= hi) => {
                return Err(at(
                    "theta",
                    "range",
                    format!("bad range [{lo}, {hi}] with count {n}"),
                ));
            }
            (None, None, _) => return Err(at("theta", "", "[theta] needs train or range".into())),
            _ => {}
        }
    }
    if c.train_thetas()
        .iter()
        .chain(&c.test_thetas())
        .any(|v| !v.is_finite())
    {
        return Err(at(
            "theta",
            "train",
            "parameter values must be finite".into(),
        ));
    }

    let m = &c.model;
    for (key, v) in [
        ("k", m.k),
        ("w", m.w),
        ("m", m.m),
        ("conv_channels", m.conv_channels),
        ("kernel_width", m.kernel_width),
        ("conv_stride", m.conv_stride),
        ("hidden", m.hidden),
    ] {
        if v == 0 {
            return Err(at("model", key, format!("{key} must be at least 1")));
        }
    }
    if m.kernel_width % 2 == 0 {
        return Err(at(
            "model",
            "kernel_width",
            format!("kernel_width must be odd, got {}", m.kernel_width),
        ));
    }
    let n_train = c.train_thetas().len();
    if m.k > n_train {
        return Err(at(
            "model",
            "k",
            format!("k = {} exceeds the {n_train} training parameters", m.k),
        ));
    }

    let t = &c.training;
    if t.batch_size == 0 {
        return Err(at(
            "training",
            "batch_size",
            "batch_size must be at least 1".into(),
        ));
    }
    if t.window_step == 0 {
        return Err(at(
            "training",
            "window_step",
            "window_step must be at least 1".into(),
        ));
    }
    if !(t.lr > 0.0 && t.lr.is_finite()) {
        return Err(at(
            "training",
            "lr",
            format!("lr must be positive, got {}", t.lr),
        ));
    }
    if let Some(lf) = t.lr_final {
        if !(lf > 0.0 && lf.is_finite()) {
            return Err(at(
                "training",
                "lr_final",
                format!("lr_final must be positive, got {lf}"),
            ));
        }
    }

    if let Some(p) = &c.pod {
        if !(p.energy_target > 0.0 && p.energy_target <= 1.0) {
            return Err(at(
                "pod",
                "energy_target",
                format!("energy_target must lie in (0, 1], got {}", p.energy_target),
            ));
        }
        if p.coeff_cap == Some(0) {
            return Err(at(
                "pod",
                "coeff_cap",
                "coeff_cap must be at least 1".into(),
            ));
        }
        if p.blocks == 0 {
            return Err(at("pod", "blocks", "blocks must be at least 1".into()));
        }
    }

    if let Some(avail) = c.states_per_trajectory() {
        let n_i = c.pod.as_ref().map_or(0, |p| p.n_i);
        if n_i >= avail {
            return Err(at(
                "pod",
                "n_i",
                format!("n_i = {n_i} leaves no periodic states out of {avail}"),
            ));
        }
        let periodic = avail - n_i;
        if m.w + m.m > periodic {
            return Err(at(
                "model",
                "w",
                format!(
                    "w + m = {} exceeds the {periodic} available steps per trajectory",
                    m.w + m.m
                ),
            ));
        }
        if let Some(h) = c.evaluation.horizon {
            if m.w + h > avail {
                return Err(at(
                    "evaluation",
                    "horizon",
                    format!(
                        "w + horizon = {} exceeds the {avail} available steps",
                        m.w + h
                    ),
                ));
            }
        }
        if let Some(sw) = &c.sweep {
            let wmax = sw.w.iter().copied().max().unwrap_or(m.w);
            let mmax = sw.m.iter().copied().max().unwrap_or(m.m);
            if wmax + mmax > periodic {
                return Err(at(
                    "sweep",
                    "w",
                    format!(
                        "largest w + m = {} exceeds the {periodic} available steps",
                        wmax + mmax
                    ),
                ));
            }
        }
    }
    if let Some(sw) = &c.sweep {
        for (key, list) in [("w", &sw.w), ("m", &sw.m), ("cap", &sw.cap)] {
            if list.contains(&0) {
                return Err(at(
                    "sweep",
                    key,
                    format!("sweep.{key} values must be at least 1"),
                ));
            }
        }
        if !sw.cap.is_empty() && c.pod.is_none() {
            return Err(at("sweep", "cap", "sweep.cap needs a [pod] section".into()));
        }
    }
    Ok(())
}
