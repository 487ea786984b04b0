//! CSV outputs: trajectories, per-step metrics, loss curves and sweeps.
//!
//! Floats use Rust's shortest round-trip formatting, so the files are
//! locale independent and re-reading them reproduces the exact values.

use std::path::Path;

use clstm_rom::clustering::ParameterPoint;
use clstm_rom::linalg::Matrix;
use clstm_rom::ode::Trajectory;
use clstm_rom::two_stage::StepMetric;
use clstm_rom::{Result, RomError};

use crate::archive::write_atomic;

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>, path: &Path) -> Result<()> {
    let bytes = w.into_inner().map_err(|e| RomError::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

fn csv_err(e: csv::Error) -> RomError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => RomError::Io(io),
            _ => unreachable!(),
        }
    } else {
        RomError::Input(format!("csv: {e}"))
    }
}

/// `t, x0, x1, ..` with one row per state; `t = t0 + j·dt`.
pub fn write_trajectory(path: &Path, t0: f64, dt: f64, states: &Matrix) -> Result<()> {
    let mut w = writer();
    let mut header = vec!["t".to_string()];
    header.extend((0..states.rows()).map(|i| format!("x{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for j in 0..states.cols() {
        let mut rec = vec![(t0 + j as f64 * dt).to_string()];
        rec.extend(states.column(j).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    finish(w, path)
}

/// Reads a file written by [`write_trajectory`]; `dt` comes from the first two times.
pub fn read_trajectory(path: &Path, theta: f64) -> Result<Trajectory> {
    let mut r = csv::ReaderBuilder::new().from_path(path).map_err(csv_err)?;
    let mut times = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let vals = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| RomError::Input(format!("{}: row {}: {e}", path.display(), row + 2)))?;
        if vals.len() < 2 {
            return Err(RomError::Input(format!(
                "{}: row {} needs a time and a state",
                path.display(),
                row + 2
            )));
        }
        if let Some(first) = columns.first() {
            if first.len() != vals.len() - 1 {
                return Err(RomError::Input(format!(
                    "{}: row {} has a different width",
                    path.display(),
                    row + 2
                )));
            }
        }
        times.push(vals[0]);
        columns.push(vals[1..].to_vec());
    }
    if times.len() < 2 {
        return Err(RomError::Input(format!(
            "{}: needs at least two rows",
            path.display()
        )));
    }
    let dt = times[1] - times[0];
    Trajectory::new(
        ParameterPoint::scalar(theta),
        dt,
        Matrix::from_columns(&columns)?,
    )
}

pub fn write_metrics(path: &Path, steps: &[StepMetric]) -> Result<()> {
    let mut w = writer();
    w.write_record(["theta", "step", "mae", "rel_err"])
        .map_err(csv_err)?;
    for s in steps {
        w.write_record([
            s.theta.to_string(),
            s.step.to_string(),
            s.mae.to_string(),
            s.rel_err.to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish(w, path)
}

/// One row per epoch of every trained network, in training order.
pub fn write_loss_curves(path: &Path, curves: &[(String, Vec<f64>)]) -> Result<()> {
    let mut w = writer();
    w.write_record(["network", "epoch", "loss"])
        .map_err(csv_err)?;
    for (name, curve) in curves {
        for (e, l) in curve.iter().enumerate() {
            w.write_record([name.clone(), e.to_string(), l.to_string()])
                .map_err(csv_err)?;
        }
    }
    finish(w, path)
}

/// Generic table with a header and preformatted cells.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = writer();
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    finish(w, path)
}
