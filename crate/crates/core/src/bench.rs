//! Timing comparison of the Dykstra projection against the dense QP reference.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::ParamLayout;
use crate::mtd::DEFAULT_EPSILON;
use crate::projection::{
    dykstra_project, qp_reference_project, MtdConstraintSet, DEFAULT_DYKSTRA_MAX_ITER, DEFAULT_DYKSTRA_TOL, QP_MAX_DIM,
};

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    /// Numbers of parent series; every alphabet has size `m`.
    pub dims: Vec<usize>,
    pub m: usize,
    pub reps: usize,
    /// Standard deviation of the normal entries of the projected point.
    pub sd: f64,
    pub seed: u64,
    /// QP is skipped when the problem has more variables than this.
    pub qp_max_dim: usize,
    /// Repetitions timed for the QP; `None` uses `reps`.
    pub qp_reps: Option<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            dims: vec![10, 20, 30, 40, 50, 60],
            m: 5,
            reps: 10,
            sd: 0.7,
            seed: 0,
            qp_max_dim: QP_MAX_DIM,
            qp_reps: None,
        }
    }
}

/// Timing summary of one method at one size.
///
/// `max_abs_diff` is the largest elementwise gap between the two methods over
/// the repetitions where both ran; it is empty for the QP row and when the QP
/// was skipped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub d: usize,
    pub m: usize,
    pub method: String,
    pub reps: usize,
    pub mean_ms: f64,
    pub sd_ms: f64,
    pub median_ms: f64,
    pub max_abs_diff: Option<f64>,
}

/// Draws the rep-`r` input at size `d`; the stream depends only on `(seed, d, r)`.
pub fn bench_input(seed: u64, d: usize, r: usize, layout: &ParamLayout, sd: f64) -> Result<Vec<f64>> {
    let normal = Normal::new(0.0, sd).map_err(|e| Error::InvalidConfig(format!("sd {sd}: {e}")))?;
    let stream = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((d as u64) << 32)
        .wrapping_add(r as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    Ok((0..layout.len()).map(|_| normal.sample(&mut rng)).collect())
}

/// Times both projections over `config.dims`. Rows come in `(d, method)` order,
/// Dykstra first; the QP row is missing when the size exceeds the cap.
pub fn bench_projection(config: &BenchConfig) -> Result<Vec<BenchRow>> {
    if config.reps == 0 || config.m < 2 || config.dims.is_empty() {
        return Err(Error::InvalidConfig("bench needs reps ≥ 1, m ≥ 2 and at least one size".into()));
    }
    let mut rows = Vec::new();
    for &d in &config.dims {
        let layout = ParamLayout::new(config.m, &vec![config.m; d]);
        let set = MtdConstraintSet::new(layout.clone(), DEFAULT_EPSILON)?;
        let run_qp = layout.len() <= config.qp_max_dim.min(QP_MAX_DIM);
        let qp_reps = config.qp_reps.unwrap_or(config.reps).min(config.reps);
        let mut dyk_ms = Vec::with_capacity(config.reps);
        let mut qp_ms = Vec::new();
        let mut max_diff: Option<f64> = None;
        for r in 0..config.reps {
            let z = bench_input(config.seed, d, r, &layout, config.sd)?;
            let start = Instant::now();
            let out = dykstra_project(&z, &set, DEFAULT_DYKSTRA_TOL, DEFAULT_DYKSTRA_MAX_ITER)?;
            dyk_ms.push(start.elapsed().as_secs_f64() * 1e3);
            if run_qp && r < qp_reps {
                let start = Instant::now();
                let exact = qp_reference_project(&z, &set)?;
                qp_ms.push(start.elapsed().as_secs_f64() * 1e3);
                let diff = out
                    .point
                    .iter()
                    .zip(&exact)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                max_diff = Some(max_diff.map_or(diff, |m| m.max(diff)));
            }
        }
        rows.push(summary_row(d, config.m, "dykstra", &dyk_ms, max_diff));
        if run_qp {
            rows.push(summary_row(d, config.m, "qp", &qp_ms, None));
        }
    }
    Ok(rows)
}

fn summary_row(d: usize, m: usize, method: &str, times: &[f64], max_abs_diff: Option<f64>) -> BenchRow {
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let sd = if times.len() > 1 {
        (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = crate::evaluation::quantile(&sorted, 0.5).unwrap_or(f64::NAN);
    BenchRow {
        d,
        m,
        method: method.into(),
        reps: times.len(),
        mean_ms: mean,
        sd_ms: sd,
        median_ms: median,
        max_abs_diff,
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_rep_rows_and_agreement() {
        let cfg = BenchConfig {
            dims: vec![3, 5],
            m: 3,
            reps: 1,
            ..BenchConfig::default()
        };
        let rows = bench_projection(&cfg).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.reps == 1 && r.sd_ms == 0.0));
        assert_eq!(rows[0].method, "dykstra");
        assert_eq!(rows[1].method, "qp");
        assert!(rows[0].max_abs_diff.unwrap() <= 1e-6);
    }

    #[test]
    fn qp_skipped_above_cap() {
        let cfg = BenchConfig {
            dims: vec![4],
            m: 3,
            reps: 2,
            qp_max_dim: 10,
            ..BenchConfig::default()
        };
        let rows = bench_projection(&cfg).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].max_abs_diff, None);
    }

    #[test]
    fn inputs_are_reproducible() {
        let layout = ParamLayout::new(3, &[3, 3]);
        let a = bench_input(7, 2, 1, &layout, 0.7).unwrap();
        assert_eq!(a, bench_input(7, 2, 1, &layout, 0.7).unwrap());
        assert_ne!(a, bench_input(7, 2, 2, &layout, 0.7).unwrap());
    }

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.5)).collect();
        assert!((log_log_slope(&x, &y) - 1.5).abs() < 1e-12);
    }
}
