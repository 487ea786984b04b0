//! Mean squared error over every output value.

use crate::error::{Result, RomError};

pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(RomError::shape(format!(
            "mse over {} predictions and {} targets",
            pred.len(),
            target.len()
        )));
    }
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / pred.len() as f64)
}

/// `d mse / d pred`
pub fn mse_grad(pred: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(RomError::shape("mse gradient: length mismatch"));
    }
    let scale = 2.0 / pred.len() as f64;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| scale * (p - t))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rng_from_seed;
    use rand::Rng;

    #[test]
    fn exact_and_unit_cases() {
        assert_eq!(mse_loss(&[0.3, -2.0], &[0.3, -2.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[1.0, 1.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mse_loss(&[], &[]).is_err());
    }

    #[test]
    fn matches_scalar_loop() {
        let mut rng = rng_from_seed(3);
        let p: Vec<f64> = (0..17).map(|_| rng.random_range(-2.0..2.0)).collect();
        let t: Vec<f64> = (0..17).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut acc = 0.0;
        for i in 0..17 {
            let d = p[i] - t[i];
            acc += d * d;
        }
        acc /= 17.0;
        assert!((mse_loss(&p, &t).unwrap() - acc).abs() < 1e-15);

        let g = mse_grad(&p, &t).unwrap();
        let h = 1e-6;
        for i in 0..17 {
            let mut pp = p.clone();
            pp[i] += h;
            let mut pm = p.clone();
            pm[i] -= h;
            let fd = (mse_loss(&pp, &t).unwrap() - mse_loss(&pm, &t).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8);
        }
    }
}
