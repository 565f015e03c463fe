//! Depth-map error metrics: abs-rel, squared-rel, RMS, log-RMS, and the
//! threshold-accuracy inlier ratio.

use serde::Serialize;
use thiserror::Error;

use crate::geometry::DepthMap;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("depth maps differ in shape")]
    ShapeMismatch,
    #[error("no pixels valid in both maps")]
    NoValidPixels,
    #[error("accuracy threshold must be > 1, got {0}")]
    InvalidThreshold(f64),
}

pub const DEFAULT_ACCURACY_THRESHOLD: f64 = 1.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rms: f64,
    pub log_rms: f64,
    pub accuracy: f64,
}

/// Squared-relative convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SqRelConvention {
    /// Mean of (|gt - pred| / gt)^2, the relative error squared.
    #[default]
    RelativeErrorSquared,
    /// Mean of (gt - pred)^2 / gt, the common benchmark variant.
    SquaredOverGt,
}

/// Metrics over cells valid in both maps. Natural logarithm for the
/// log-RMS; accuracy is the fraction of cells with
/// max(gt/pred, pred/gt) < threshold.
pub fn depth_metrics(
    gt: &DepthMap,
    pred: &DepthMap,
    accuracy_threshold: f64,
) -> Result<DepthMetrics, MetricsError> {
    depth_metrics_with(gt, pred, accuracy_threshold, SqRelConvention::default())
}

/// [`depth_metrics`] with a selectable squared-relative convention.
pub fn depth_metrics_with(
    gt: &DepthMap,
    pred: &DepthMap,
    accuracy_threshold: f64,
    sq_rel_convention: SqRelConvention,
) -> Result<DepthMetrics, MetricsError> {
    if gt.width() != pred.width() || gt.height() != pred.height() {
        return Err(MetricsError::ShapeMismatch);
    }
    if accuracy_threshold <= 1.0 {
        return Err(MetricsError::InvalidThreshold(accuracy_threshold));
    }
    let mut n = 0usize;
    let (mut abs_sum, mut sq_sum, mut rms_sum, mut log_sum) = (0.0, 0.0, 0.0, 0.0);
    let mut inliers = 0usize;
    for (r, c, g) in gt.iter_valid() {
        let Some(p) = pred.get(r, c) else { continue };
        n += 1;
        let rel = (g - p).abs() / g;
        abs_sum += rel;
        sq_sum += match sq_rel_convention {
            SqRelConvention::RelativeErrorSquared => rel * rel,
            SqRelConvention::SquaredOverGt => (g - p).powi(2) / g,
        };
        rms_sum += (g - p).powi(2);
        log_sum += (g.ln() - p.ln()).powi(2);
        if (g / p).max(p / g) < accuracy_threshold {
            inliers += 1;
        }
    }
    if n == 0 {
        return Err(MetricsError::NoValidPixels);
    }
    let nf = n as f64;
    Ok(DepthMetrics {
        abs_rel: abs_sum / nf,
        sq_rel: sq_sum / nf,
        rms: (rms_sum / nf).sqrt(),
        log_rms: (log_sum / nf).sqrt(),
        accuracy: inliers as f64 / nf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Straight-line re-implementation of each printed formula, used as a
    /// duplicate-implementation oracle.
    fn brute_force(gt: &[f64], pred: &[f64], threshold: f64) -> DepthMetrics {
        let pairs: Vec<(f64, f64)> = gt
            .iter()
            .zip(pred)
            .filter(|&(&g, &p)| g > 0.0 && p > 0.0)
            .map(|(&g, &p)| (g, p))
            .collect();
        let n = pairs.len() as f64;
        let abs_rel = pairs.iter().map(|(g, p)| ((g - p) / g).abs()).sum::<f64>() / n;
        let sq_rel = pairs
            .iter()
            .map(|(g, p)| ((g - p) / g).abs().powi(2))
            .sum::<f64>()
            / n;
        let rms = (pairs.iter().map(|(g, p)| (g - p).powi(2)).sum::<f64>() / n).sqrt();
        let log_rms =
            (pairs.iter().map(|(g, p)| (g.ln() - p.ln()).powi(2)).sum::<f64>() / n).sqrt();
        let accuracy = pairs
            .iter()
            .filter(|(g, p)| (g / p).max(p / g) < threshold)
            .count() as f64
            / n;
        DepthMetrics {
            abs_rel,
            sq_rel,
            rms,
            log_rms,
            accuracy,
        }
    }

    #[test]
    fn identical_maps_are_perfect() {
        let dm = DepthMap::new(4, 4, (1..=16).map(|v| v as f64).collect()).unwrap();
        let m = depth_metrics(&dm, &dm, 1.25).unwrap();
        assert_eq!(
            m,
            DepthMetrics {
                abs_rel: 0.0,
                sq_rel: 0.0,
                rms: 0.0,
                log_rms: 0.0,
                accuracy: 1.0
            }
        );
    }

    #[test]
    fn single_pixel_hand_case() {
        let gt = DepthMap::new(1, 1, vec![2.0]).unwrap();
        let pred = DepthMap::new(1, 1, vec![1.0]).unwrap();
        let m = depth_metrics(&gt, &pred, 1.25).unwrap();
        assert_eq!(m.abs_rel, 0.5);
        assert_eq!(m.sq_rel, 0.25);
        assert_eq!(m.rms, 1.0);
        assert_relative_eq!(m.log_rms, 2f64.ln(), epsilon = 1e-15);
        assert_eq!(m.accuracy, 0.0);
    }

    #[test]
    fn random_maps_match_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let gt_vals: Vec<f64> = (0..16).map(|_| rng.gen_range(0.5..10.0)).collect();
            let pred_vals: Vec<f64> = (0..16).map(|_| rng.gen_range(0.5..10.0)).collect();
            let gt = DepthMap::new(4, 4, gt_vals.clone()).unwrap();
            let pred = DepthMap::new(4, 4, pred_vals.clone()).unwrap();
            let m = depth_metrics(&gt, &pred, 1.25).unwrap();
            let o = brute_force(&gt_vals, &pred_vals, 1.25);
            assert!((m.abs_rel - o.abs_rel).abs() < 1e-12);
            assert!((m.sq_rel - o.sq_rel).abs() < 1e-12);
            assert!((m.rms - o.rms).abs() < 1e-12);
            assert!((m.log_rms - o.log_rms).abs() < 1e-12);
            assert_eq!(m.accuracy, o.accuracy);
        }
    }

    #[test]
    fn log_rms_of_constant_scale_is_ln_c() {
        let vals: Vec<f64> = (1..=16).map(|v| v as f64 / 2.0).collect();
        let gt = DepthMap::new(4, 4, vals.clone()).unwrap();
        let c = 1.7;
        let pred = DepthMap::new(4, 4, vals.iter().map(|v| v * c).collect()).unwrap();
        let m = depth_metrics(&gt, &pred, 2.0).unwrap();
        assert_relative_eq!(m.log_rms, c.ln(), epsilon = 1e-12);
    }

    #[test]
    fn invalid_cells_do_not_contribute() {
        let mut gt = DepthMap::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut pred = DepthMap::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        gt.invalidate(0, 0);
        pred.set(0, 0, 999.0); // masked in gt, must not matter
        pred.invalidate(1, 1);
        let m = depth_metrics(&gt, &pred, 1.25).unwrap();
        assert_eq!(m.abs_rel, 0.0);
        assert_eq!(m.accuracy, 1.0);
    }

    #[test]
    fn conventional_sq_rel_variant() {
        let gt = DepthMap::new(1, 1, vec![2.0]).unwrap();
        let pred = DepthMap::new(1, 1, vec![1.0]).unwrap();
        let m = depth_metrics_with(&gt, &pred, 1.25, SqRelConvention::SquaredOverGt).unwrap();
        assert_eq!(m.sq_rel, 0.5);
    }

    #[test]
    fn shape_mismatch_and_empty_rejected() {
        let a = DepthMap::new(2, 2, vec![1.0; 4]).unwrap();
        let b = DepthMap::new(2, 3, vec![1.0; 6]).unwrap();
        assert_eq!(depth_metrics(&a, &b, 1.25), Err(MetricsError::ShapeMismatch));
        let empty_a = DepthMap::new(2, 2, vec![-1.0; 4]).unwrap();
        assert_eq!(
            depth_metrics(&empty_a, &a, 1.25),
            Err(MetricsError::NoValidPixels)
        );
        assert_eq!(
            depth_metrics(&a, &a, 1.0),
            Err(MetricsError::InvalidThreshold(1.0))
        );
    }
}
