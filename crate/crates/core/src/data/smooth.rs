//! Gaussian-process smoothing of noisy tracks.
//!
//! Each coordinate is regressed on the step index with a Matérn kernel after
//! removing a least-squares linear trend. The kernel length scale is fitted by
//! maximizing the log marginal likelihood (summed over both coordinates); the
//! kernel amplitude is fixed at 1 and `noise_alpha` is added to the diagonal.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaternNu {
    Half,
    ThreeHalves,
    FiveHalves,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmootherConfig {
    pub nu: MaternNu,
    pub noise_alpha: f64,
    /// Search bounds for the fitted length scale, in steps.
    pub length_scale_bounds: (f64, f64),
}

impl Default for SmootherConfig {
    fn default() -> Self {
        Self {
            nu: MaternNu::ThreeHalves,
            noise_alpha: 0.1,
            length_scale_bounds: (1e-2, 1e3),
        }
    }
}

impl SmootherConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_alpha > 0.0) {
            return Err(Error::InvalidConfig("noise_alpha must be positive".into()));
        }
        let (lo, hi) = self.length_scale_bounds;
        if !(lo > 0.0 && hi > lo) {
            return Err(Error::InvalidConfig("invalid length-scale bounds".into()));
        }
        Ok(())
    }
}

pub fn matern(nu: MaternNu, r: f64, length_scale: f64) -> f64 {
    let d = r.abs() / length_scale;
    match nu {
        MaternNu::Half => (-d).exp(),
        MaternNu::ThreeHalves => {
            let s = 3f64.sqrt() * d;
            (1.0 + s) * (-s).exp()
        }
        MaternNu::FiveHalves => {
            let s = 5f64.sqrt() * d;
            (1.0 + s + s * s / 3.0) * (-s).exp()
        }
    }
}

fn kernel_matrix(n: usize, nu: MaternNu, length_scale: f64, alpha: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| {
        let k = matern(nu, i as f64 - j as f64, length_scale);
        if i == j {
            k + alpha
        } else {
            k
        }
    })
}

fn linear_trend(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mean_t = (n - 1.0) / 2.0;
    let mean_y = y.iter().sum::<f64>() / n;
    let (mut sty, mut stt) = (0.0, 0.0);
    for (i, &v) in y.iter().enumerate() {
        let dt = i as f64 - mean_t;
        sty += dt * (v - mean_y);
        stt += dt * dt;
    }
    let slope = if stt > 0.0 { sty / stt } else { 0.0 };
    (mean_y - slope * mean_t, slope)
}

/// Negative log marginal likelihood summed over the residual columns, or
/// `None` when the covariance is not positive definite.
fn neg_log_marginal(residuals: &[DVector<f64>], cfg: &SmootherConfig, ls: f64) -> Option<f64> {
    let n = residuals[0].len();
    let chol = kernel_matrix(n, cfg.nu, ls, cfg.noise_alpha).cholesky()?;
    let log_det: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    let mut total = 0.0;
    for r in residuals {
        let a = chol.solve(r);
        total +=
            0.5 * r.dot(&a) + 0.5 * log_det + 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    }
    Some(total)
}

fn fit_length_scale(residuals: &[DVector<f64>], cfg: &SmootherConfig) -> f64 {
    let (lo, hi) = (
        cfg.length_scale_bounds.0.ln(),
        cfg.length_scale_bounds.1.ln(),
    );
    let objective =
        |log_ls: f64| neg_log_marginal(residuals, cfg, log_ls.exp()).unwrap_or(f64::INFINITY);

    const GRID: usize = 40;
    let step = (hi - lo) / GRID as f64;
    let (mut best, mut best_val) = (lo, f64::INFINITY);
    for i in 0..=GRID {
        let x = lo + step * i as f64;
        let v = objective(x);
        if v < best_val {
            best = x;
            best_val = v;
        }
    }

    // Golden-section refinement inside the neighbouring grid cells.
    let (mut a, mut b) = ((best - step).max(lo), (best + step).min(hi));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (objective(c), objective(d));
    for _ in 0..40 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = objective(d);
        }
    }
    let refined = (a + b) / 2.0;
    if objective(refined) <= best_val {
        refined.exp()
    } else {
        best.exp()
    }
}

/// Posterior mean of the GP fit at every input step.
pub fn smooth_trajectory(raw: &[Point], config: &SmootherConfig) -> Result<Vec<Point>> {
    config.validate()?;
    let n = raw.len();
    if n < 2 {
        return Err(Error::TooFewPoints {
            required: 2,
            actual: n,
        });
    }

    let mut trends = [(0.0, 0.0); 2];
    let mut residuals = Vec::with_capacity(2);
    for (axis, trend) in trends.iter_mut().enumerate() {
        let y: Vec<f64> = raw.iter().map(|p| p[axis]).collect();
        *trend = linear_trend(&y);
        residuals.push(DVector::from_iterator(
            n,
            y.iter()
                .enumerate()
                .map(|(i, v)| v - (trend.0 + trend.1 * i as f64)),
        ));
    }

    let ls = fit_length_scale(&residuals, config);
    let cov = kernel_matrix(n, config.nu, ls, config.noise_alpha);
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::InvalidConfig("kernel matrix is not positive definite".into()))?;
    let cross = kernel_matrix(n, config.nu, ls, 0.0);

    let mut out = vec![[0.0; 2]; n];
    for axis in 0..2 {
        let mean = &cross * chol.solve(&residuals[axis]);
        let (a, b) = trends[axis];
        for (i, p) in out.iter_mut().enumerate() {
            p[axis] = a + b * i as f64 + mean[i];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn max_dev(a: &[Point], b: &[Point]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(p, q)| (p[0] - q[0]).hypot(p[1] - q[1]))
            .fold(0.0, f64::max)
    }

    #[test]
    fn straight_line_is_preserved() {
        let line: Vec<Point> = (0..30)
            .map(|i| [1.3 * i as f64 - 4.0, 0.4 * i as f64])
            .collect();
        let out = smooth_trajectory(&line, &SmootherConfig::default()).unwrap();
        assert!(max_dev(&line, &out) < 1e-3);
    }

    #[test]
    fn constant_is_preserved() {
        let pts = vec![[2.5, -1.0]; 12];
        let out = smooth_trajectory(&pts, &SmootherConfig::default()).unwrap();
        assert!(max_dev(&pts, &out) < 1e-9);
    }

    #[test]
    fn posterior_mean_matches_direct_formula() {
        // Independent route: explicit inverse instead of a Cholesky solve, at
        // the fitted length scale.
        let pts: Vec<Point> = (0..15)
            .map(|i| {
                let t = i as f64;
                [t, (t / 3.0).sin() * 2.0]
            })
            .collect();
        let cfg = SmootherConfig::default();
        let out = smooth_trajectory(&pts, &cfg).unwrap();

        let y: Vec<f64> = pts.iter().map(|p| p[1]).collect();
        let (a, b) = linear_trend(&y);
        let r = DVector::from_iterator(15, y.iter().enumerate().map(|(i, v)| v - a - b * i as f64));
        // Length scale is fitted jointly over both axes.
        let x: Vec<f64> = pts.iter().map(|p| p[0]).collect();
        let (ax, bx) = linear_trend(&x);
        let rx = DVector::from_iterator(
            15,
            x.iter().enumerate().map(|(i, v)| v - ax - bx * i as f64),
        );
        let ls = fit_length_scale(&[rx, r.clone()], &cfg);
        let k = kernel_matrix(15, cfg.nu, ls, 0.0);
        let inv = kernel_matrix(15, cfg.nu, ls, cfg.noise_alpha)
            .try_inverse()
            .unwrap();
        let mean = k * inv * r;
        for i in 0..15 {
            let direct = a + b * i as f64 + mean[i];
            assert!(
                (out[i][1] - direct).abs() < 1e-6,
                "{i}: {} vs {direct}",
                out[i][1]
            );
        }
    }

    #[test]
    fn noisy_line_gets_closer_to_truth() {
        let noise = Normal::new(0.0, 0.3).unwrap();
        let cfg = SmootherConfig::default();
        let (mut raw_mse, mut smooth_mse) = (0.0, 0.0);
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth: Vec<Point> = (0..30).map(|i| [0.8 * i as f64, 0.1 * i as f64]).collect();
            let raw: Vec<Point> = truth
                .iter()
                .map(|p| [p[0] + noise.sample(&mut rng), p[1] + noise.sample(&mut rng)])
                .collect();
            let out = smooth_trajectory(&raw, &cfg).unwrap();
            for i in 0..30 {
                raw_mse += (raw[i][0] - truth[i][0]).powi(2) + (raw[i][1] - truth[i][1]).powi(2);
                smooth_mse += (out[i][0] - truth[i][0]).powi(2) + (out[i][1] - truth[i][1]).powi(2);
            }
        }
        assert!(smooth_mse < raw_mse, "{smooth_mse} vs {raw_mse}");
    }

    #[test]
    fn output_length_and_errors() {
        assert!(smooth_trajectory(&[[0.0, 0.0]], &SmootherConfig::default()).is_err());
        let out = smooth_trajectory(&[[0.0, 0.0], [1.0, 1.0]], &SmootherConfig::default()).unwrap();
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn matern_at_zero_is_one() {
        for nu in [MaternNu::Half, MaternNu::ThreeHalves, MaternNu::FiveHalves] {
            assert!((matern(nu, 0.0, 2.0) - 1.0).abs() < 1e-15);
        }
    }
}
