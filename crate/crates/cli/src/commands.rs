use std::path::{Path, PathBuf};
use std::time::Instant;

use clstm_rom::clustering::ParameterPoint;
use clstm_rom::dataset::subsample;
use clstm_rom::linalg::Matrix;
use clstm_rom::ode::{rk4_integrate, synth_cavity_like, OdeSystem, Trajectory};
use clstm_rom::pod_pipeline::{
    build_pipeline, pipeline_rollout, projection_error, relative_errors, stack_snapshots,
    PipelineConfig, PipelineModel,
};
use clstm_rom::two_stage::{evaluate, fit_two_stage, rollout, slope, StepMetric, TwoStageModel};
use clstm_rom::{Result, RomError};

use crate::archive::{get_pipeline, get_two_stage, put_pipeline, put_two_stage, Archive};
use crate::config::{Config, SystemKind};
use crate::tables;

pub const MODEL_FILE: &str = "model.romf";

/// Everything a subcommand needs besides its own arguments.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: Config,
    pub seed: u64,
    pub out: PathBuf,
}

impl Context {
    pub fn new(config: Config, seed: Option<u64>, out: Option<PathBuf>) -> Self {
        let seed = seed.unwrap_or(config.seed);
        let out = out
            .or_else(|| config.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        Self { config, seed, out }
    }

    pub fn model_path(&self) -> PathBuf {
        self.out.join(MODEL_FILE)
    }
}

fn default_initial_state(kind: SystemKind) -> Vec<f64> {
    match kind {
        SystemKind::PredatorPrey => vec![0.5, 0.5],
        _ => vec![1.5, 0.0],
    }
}

fn simulate(cfg: &Config, theta: f64) -> Result<Trajectory> {
    let s = &cfg.system;
    let full = match s.kind {
        SystemKind::Duffing | SystemKind::PredatorPrey => {
            let sys = if s.kind == SystemKind::Duffing {
                OdeSystem::duffing()
            } else {
                OdeSystem::predator_prey()
            };
            let x0 = s
                .initial_state
                .clone()
                .unwrap_or_else(|| default_initial_state(s.kind));
            rk4_integrate(&sys, &ParameterPoint::scalar(theta), &x0, s.dt, s.steps)?
        }
        SystemKind::Surrogate => {
            let sur = cfg
                .surrogate
                .as_ref()
                .ok_or_else(|| RomError::Config {
                    line: cfg.line_of("system", "kind"),
                    message: "missing [surrogate] section".into(),
                })?
                .to_config();
            synth_cavity_like(&sur, theta, s.dt, s.steps)?
        }
        SystemKind::Csv => unreachable!("csv data is read, not simulated"),
    };
    if s.stride == 1 {
        Ok(full)
    } else {
        subsample(&full, s.stride)
    }
}

/// Training and test trajectories, in config order.
pub fn load_data(cfg: &Config) -> Result<(Vec<Trajectory>, Vec<Trajectory>)> {
    if cfg.system.kind == SystemKind::Csv {
        let read = |files: &[crate::config::CsvSource]| -> Result<Vec<Trajectory>> {
            files
                .iter()
                .map(|f| {
                    let t = tables::read_trajectory(&f.path, f.theta)?;
                    if cfg.system.stride > 1 {
                        subsample(&t, cfg.system.stride)
                    } else {
                        Ok(t)
                    }
                })
                .collect()
        };
        let train = read(&cfg.system.train_files)?;
        let test = read(&cfg.system.test_files)?;
        check_lengths(cfg, &train)?;
        return Ok((train, test));
    }
    let train = cfg
        .train_thetas()
        .iter()
        .map(|&a| simulate(cfg, a))
        .collect::<Result<Vec<_>>>()?;
    let test = cfg
        .test_thetas()
        .iter()
        .map(|&a| simulate(cfg, a))
        .collect::<Result<Vec<_>>>()?;
    Ok((train, test))
}

fn check_lengths(cfg: &Config, trajs: &[Trajectory]) -> Result<()> {
    let n_i = cfg.pod.as_ref().map_or(0, |p| p.n_i);
    let need = cfg.model.w + cfg.model.m + n_i;
    if let Some(t) = trajs.iter().find(|t| t.len() < need) {
        return Err(RomError::Config {
            line: cfg.line_of("model", "w"),
            message: format!(
                "w + m{} = {need} exceeds the {} steps of the trajectory at θ = {}",
                if n_i > 0 { " + n_i" } else { "" },
                t.len(),
                t.theta.coords()[0]
            ),
        });
    }
    Ok(())
}

pub fn generate(ctx: &Context) -> Result<Vec<PathBuf>> {
    let (train, test) = load_data(&ctx.config)?;
    let dir = ctx.out.join("trajectories");
    let mut written = Vec::new();
    let mut index = Vec::new();
    for (split, set) in [("train", &train), ("test", &test)] {
        for (i, t) in set.iter().enumerate() {
            let name = format!("{split}_{i:03}.csv");
            let path = dir.join(&name);
            tables::write_trajectory(&path, 0.0, t.dt, &t.states)?;
            index.push(vec![
                split.to_string(),
                name,
                t.theta.coords()[0].to_string(),
                t.len().to_string(),
            ]);
            written.push(path);
        }
    }
    let idx = dir.join("index.csv");
    tables::write_table(&idx, &["split", "file", "theta", "states"], &index)?;
    written.push(idx);
    Ok(written)
}

/// A trained forecaster of either kind.
#[derive(Debug, Clone)]
pub enum Trained {
    TwoStage(TwoStageModel),
    Pipeline(PipelineModel),
}

impl Trained {
    pub fn w(&self) -> usize {
        match self {
            Trained::TwoStage(m) => m.w,
            Trained::Pipeline(p) => p.w(),
        }
    }
}

pub fn pipeline_config(cfg: &Config, cap: Option<usize>) -> Option<PipelineConfig> {
    let pod = cfg.pod.as_ref()?;
    let mut settings = pod.settings();
    if cap.is_some() {
        settings.coeff_cap = cap;
    }
    let train = cfg.train_config();
    Some(PipelineConfig {
        n_i: pod.n_i,
        pod: settings,
        k: cfg.model.k,
        w: cfg.model.w,
        m: cfg.model.m,
        train_1: train.clone(),
        train_2: train,
    })
}

pub struct TrainOutcome {
    pub model: Trained,
    pub curves: Vec<(String, Vec<f64>)>,
    pub summary: String,
}

fn curves_of(prefix: &str, fit: &clstm_rom::two_stage::TwoStageFit) -> Vec<(String, Vec<f64>)> {
    let mut out: Vec<(String, Vec<f64>)> = fit
        .first_stage_curves
        .iter()
        .enumerate()
        .map(|(i, c)| (format!("{prefix}expert{i}"), c.clone()))
        .collect();
    out.push((
        format!("{prefix}second_stage"),
        fit.second_stage_curve.clone(),
    ));
    out
}

pub fn fit(
    cfg: &Config,
    train: &[Trajectory],
    seed: u64,
    cap: Option<usize>,
) -> Result<TrainOutcome> {
    if let Some(pc) = pipeline_config(cfg, cap) {
        let fit = build_pipeline(train, &pc, seed)?;
        let mut curves = Vec::new();
        let mut summary = format!(
            "basis_1 {} modes (energy {:.6}), basis_2 {} modes (energy {:.6})\n",
            fit.pipeline.basis_1.n_pod(),
            fit.pipeline.basis_1.energy_ratio,
            fit.pipeline.basis_2.n_pod(),
            fit.pipeline.basis_2.energy_ratio
        );
        if let Some(f1) = &fit.fit_1 {
            curves.extend(curves_of("model_1/", f1));
            summary.push_str(&f1.dataset_summary);
        }
        curves.extend(curves_of("model_2/", &fit.fit_2));
        summary.push_str(&fit.fit_2.dataset_summary);
        Ok(TrainOutcome {
            model: Trained::Pipeline(fit.pipeline),
            curves,
            summary,
        })
    } else {
        let f = fit_two_stage(
            train,
            cfg.model.k,
            cfg.model.w,
            cfg.model.m,
            &cfg.train_config(),
            seed,
        )?;
        Ok(TrainOutcome {
            curves: curves_of("", &f),
            summary: f.dataset_summary.clone(),
            model: Trained::TwoStage(f.model),
        })
    }
}

pub fn to_archive(ctx: &Context, model: &Trained) -> Archive {
    let mut ar = Archive::new(ctx.config.text.clone());
    ar.set_meta(
        "generator",
        concat!("clstm-rom ", env!("CARGO_PKG_VERSION")),
    );
    ar.set_meta("seed", ctx.seed);
    match model {
        Trained::TwoStage(m) => {
            ar.set_meta("kind", "two_stage");
            ar.set_meta("k", m.k());
            ar.set_meta("w", m.w);
            ar.set_meta("m", m.m);
            ar.set_meta("z", m.z());
            put_two_stage(&mut ar, "model", m);
        }
        Trained::Pipeline(p) => {
            ar.set_meta("kind", "pipeline");
            ar.set_meta("n_i", p.n_i);
            ar.set_meta("w", p.w());
            ar.set_meta("m", p.model_2.m);
            ar.set_meta("n_pod_1", p.basis_1.n_pod());
            ar.set_meta("n_pod_2", p.basis_2.n_pod());
            put_pipeline(&mut ar, p);
        }
    }
    ar
}

pub fn from_archive(ar: &Archive) -> Result<Trained> {
    match ar.meta("kind") {
        Some("two_stage") => Ok(Trained::TwoStage(get_two_stage(ar, "model")?)),
        Some("pipeline") => Ok(Trained::Pipeline(get_pipeline(ar)?)),
        Some(other) => Err(RomError::Archive(format!("unknown model kind '{other}'"))),
        None => Err(RomError::Archive("manifest has no 'kind' entry".into())),
    }
}

pub fn train(ctx: &Context) -> Result<String> {
    let (train, _) = load_data(&ctx.config)?;
    let start = Instant::now();
    let outcome = fit(&ctx.config, &train, ctx.seed, None)?;
    let elapsed = start.elapsed();
    to_archive(ctx, &outcome.model).save(&ctx.model_path())?;
    tables::write_loss_curves(&ctx.out.join("loss_curves.csv"), &outcome.curves)?;
    Ok(format!(
        "{}trained in {:.2} s, saved {}",
        outcome.summary,
        elapsed.as_secs_f64(),
        ctx.model_path().display()
    ))
}

pub fn load_model(path: &Path) -> Result<Trained> {
    from_archive(&Archive::load(path)?)
}

fn horizon_for(cfg: &Config, model: &Trained, truth: &Trajectory) -> Result<usize> {
    let w = model.w();
    let avail = truth.len().saturating_sub(w);
    let h = cfg.evaluation.horizon.unwrap_or(avail);
    if h == 0 || h > avail {
        return Err(RomError::Input(format!(
            "trajectory at θ = {} has {} states, too few for w = {w} and horizon {h}",
            truth.theta.coords()[0],
            truth.len()
        )));
    }
    Ok(h)
}

/// Forecast `horizon` states after the first `w` states of `truth`.
pub fn forecast(model: &Trained, truth: &Trajectory, horizon: usize) -> Result<Matrix> {
    let w = model.w();
    match model {
        Trained::TwoStage(m) => Ok(rollout(m, &truth.rows(0, w), &truth.theta, horizon)?.predicted),
        Trained::Pipeline(p) => {
            Ok(pipeline_rollout(p, &truth.states.columns(0, w), &truth.theta, horizon)?.full)
        }
    }
}

pub fn predict(ctx: &Context, model_path: Option<&Path>) -> Result<Vec<PathBuf>> {
    let model = load_model(model_path.unwrap_or(&ctx.model_path()))?;
    let (_, test) = load_data(&ctx.config)?;
    let mut written = Vec::new();
    for (i, truth) in test.iter().enumerate() {
        let h = horizon_for(&ctx.config, &model, truth)?;
        let pred = forecast(&model, truth, h)?;
        let path = ctx.out.join("predictions").join(format!("test_{i:03}.csv"));
        tables::write_trajectory(&path, model.w() as f64 * truth.dt, truth.dt, &pred)?;
        written.push(path);
    }
    Ok(written)
}

/// Per-step metrics for every test trajectory plus wall times.
pub struct Evaluation {
    pub steps: Vec<StepMetric>,
    /// `(θ, mean MAE, mean relative error, MAE slope)`
    pub per_theta: Vec<(f64, f64, f64, f64)>,
    pub seconds: Vec<f64>,
}

impl Evaluation {
    pub fn mean_mae(&self) -> f64 {
        self.per_theta.iter().map(|p| p.1).sum::<f64>() / self.per_theta.len().max(1) as f64
    }

    pub fn mean_rel_err(&self) -> f64 {
        self.per_theta.iter().map(|p| p.2).sum::<f64>() / self.per_theta.len().max(1) as f64
    }
}

/// Two-stage models are scored on normalized states; pipelines on
/// full-order states in physical units.
pub fn score(cfg: &Config, model: &Trained, test: &[Trajectory]) -> Result<Evaluation> {
    let mut out = Evaluation {
        steps: Vec::new(),
        per_theta: Vec::new(),
        seconds: Vec::new(),
    };
    for truth in test {
        let h = horizon_for(cfg, model, truth)?;
        let label = truth.theta.coords()[0];
        let start = Instant::now();
        let rows: Vec<StepMetric> = match model {
            Trained::TwoStage(m) => evaluate(m, std::slice::from_ref(truth), h)?.steps,
            Trained::Pipeline(p) => {
                let pred = forecast(model, truth, h)?;
                let t = truth.states.columns(p.w(), p.w() + h);
                let rel = relative_errors(&pred, &t)?;
                (0..h)
                    .map(|j| StepMetric {
                        theta: label,
                        step: j,
                        mae: (0..t.rows())
                            .map(|i| (pred[(i, j)] - t[(i, j)]).abs())
                            .sum::<f64>()
                            / t.rows() as f64,
                        rel_err: rel[j],
                    })
                    .collect()
            }
        };
        out.seconds.push(start.elapsed().as_secs_f64());
        let maes: Vec<f64> = rows.iter().map(|r| r.mae).collect();
        let n = rows.len() as f64;
        out.per_theta.push((
            label,
            maes.iter().sum::<f64>() / n,
            rows.iter().map(|r| r.rel_err).sum::<f64>() / n,
            slope(&maes),
        ));
        out.steps.extend(rows);
    }
    Ok(out)
}

pub fn evaluate_cmd(ctx: &Context, model_path: Option<&Path>) -> Result<String> {
    let model = load_model(model_path.unwrap_or(&ctx.model_path()))?;
    let (_, test) = load_data(&ctx.config)?;
    if test.is_empty() {
        return Err(RomError::Config {
            line: ctx.config.line_of("theta", "test"),
            message: "no test parameters configured".into(),
        });
    }
    let ev = score(&ctx.config, &model, &test)?;
    tables::write_metrics(&ctx.out.join("metrics.csv"), &ev.steps)?;
    let rows: Vec<Vec<String>> = ev
        .per_theta
        .iter()
        .map(|(t, mae, rel, sl)| {
            vec![
                t.to_string(),
                mae.to_string(),
                rel.to_string(),
                sl.to_string(),
            ]
        })
        .collect();
    tables::write_table(
        &ctx.out.join("summary.csv"),
        &["theta", "mae", "rel_err", "mae_slope"],
        &rows,
    )?;
    let timing: Vec<Vec<String>> = ev
        .per_theta
        .iter()
        .zip(&ev.seconds)
        .map(|(p, s)| vec![p.0.to_string(), format!("{s:.6}")])
        .collect();
    tables::write_table(&ctx.out.join("timing.csv"), &["theta", "seconds"], &timing)?;
    let mut report = String::new();
    for ((t, mae, rel, sl), s) in ev.per_theta.iter().zip(&ev.seconds) {
        report.push_str(&format!(
            "θ = {t}: mae {mae:.5} rel_err {rel:.5} slope {sl:.3e} ({s:.2} s)\n"
        ));
    }
    report.push_str(&format!(
        "mean mae {:.5}, mean rel_err {:.5}",
        ev.mean_mae(),
        ev.mean_rel_err()
    ));
    Ok(report)
}

/// Trains and scores every `(w, m, cap)` combination of the `[sweep]` lists.
pub fn sweep(ctx: &Context) -> Result<String> {
    let sw = ctx.config.sweep.clone().ok_or_else(|| RomError::Config {
        line: ctx.config.line_of("sweep", ""),
        message: "sweep needs a [sweep] section".into(),
    })?;
    let (train, test) = load_data(&ctx.config)?;
    if test.is_empty() {
        return Err(RomError::Config {
            line: ctx.config.line_of("theta", "test"),
            message: "sweep needs test parameters".into(),
        });
    }
    let ws = if sw.w.is_empty() {
        vec![ctx.config.model.w]
    } else {
        sw.w.clone()
    };
    let ms = if sw.m.is_empty() {
        vec![ctx.config.model.m]
    } else {
        sw.m.clone()
    };
    let caps: Vec<Option<usize>> = if sw.cap.is_empty() {
        vec![None]
    } else {
        sw.cap.iter().map(|&c| Some(c)).collect()
    };
    let mut rows = Vec::new();
    let mut timing = Vec::new();
    let mut report = String::new();
    for &w in &ws {
        for &m in &ms {
            for &cap in &caps {
                let mut cfg = ctx.config.clone();
                cfg.model.w = w;
                cfg.model.m = m;
                let t0 = Instant::now();
                let outcome = fit(&cfg, &train, ctx.seed, cap)?;
                let train_s = t0.elapsed().as_secs_f64();
                let ev = score(&cfg, &outcome.model, &test)?;
                let eval_s: f64 = ev.seconds.iter().sum();
                let proj = match &outcome.model {
                    Trained::Pipeline(p) => {
                        let snaps = stack_snapshots(&test, p.n_i)?;
                        projection_error(&p.basis_2, &snaps)?.to_string()
                    }
                    Trained::TwoStage(_) => String::new(),
                };
                let cap_s = cap.map(|c| c.to_string()).unwrap_or_default();
                rows.push(vec![
                    w.to_string(),
                    m.to_string(),
                    cap_s.clone(),
                    ev.mean_mae().to_string(),
                    ev.mean_rel_err().to_string(),
                    proj,
                ]);
                timing.push(vec![
                    w.to_string(),
                    m.to_string(),
                    cap_s.clone(),
                    format!("{train_s:.6}"),
                    format!("{eval_s:.6}"),
                ]);
                report.push_str(&format!(
                    "w {w} m {m} cap {cap_s:>3}: mae {:.5} rel_err {:.5} train {train_s:.1} s eval {eval_s:.2} s\n",
                    ev.mean_mae(),
                    ev.mean_rel_err()
                ));
            }
        }
    }
    tables::write_table(
        &ctx.out.join("sweep.csv"),
        &["w", "m", "cap", "mae", "rel_err", "projection_error"],
        &rows,
    )?;
    tables::write_table(
        &ctx.out.join("sweep_timing.csv"),
        &["w", "m", "cap", "train_seconds", "eval_seconds"],
        &timing,
    )?;
    Ok(report.trim_end().to_string())
}

/// Manifest of an archive (hashes are checked while loading), or the
/// resolved data layout of a config when no archive exists.
pub fn inspect(ctx: &Context, path: Option<&Path>) -> Result<String> {
    let path = path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ctx.model_path());
    if path.exists() {
        let ar = Archive::load(&path)?;
        let model = from_archive(&ar)?;
        let mut s = format!(
            "{}: all {} section hashes verified\n",
            path.display(),
            ar.sections.len()
        );
        s.push_str(&ar.manifest());
        if let Trained::TwoStage(m) = &model {
            s.push_str(&format!(
                "\ncentroids: {:?}",
                m.centroids
                    .iter()
                    .map(|c| c.coords()[0])
                    .collect::<Vec<_>>()
            ));
        }
        return Ok(s);
    }
    let cfg = &ctx.config;
    let mut s = format!("no archive at {}; config summary\n", path.display());
    s.push_str(&format!(
        "system {:?}, seed {}\n",
        cfg.system.kind, ctx.seed
    ));
    s.push_str(&format!(
        "train θ {:?}\ntest θ {:?}\n",
        cfg.train_thetas(),
        cfg.test_thetas()
    ));
    s.push_str(&format!(
        "k {} w {} m {}\n",
        cfg.model.k, cfg.model.w, cfg.model.m
    ));
    if let Some(n) = cfg.states_per_trajectory() {
        s.push_str(&format!("{n} states per trajectory"));
    }
    Ok(s)
}
