//! Target depth and 3D position extraction from a depth map restricted to
//! a detection box: 50-bin histogram peak, half-maximum range expansion,
//! and the 2-sigma foreground split.

use thiserror::Error;

use crate::detect::BBox;
use crate::geometry::{back_project, CameraIntrinsics, DepthMap, GeometryError, Pixel, Point3};

pub const BIN_COUNT: usize = 50;
pub const MIN_BOX_PIXELS: usize = 50;

#[derive(Debug, Error, PartialEq)]
pub enum DepthTargetError {
    #[error("box does not intersect the image")]
    EmptyIntersection,
    #[error("too few valid pixels in box ({got} < {MIN_BOX_PIXELS})")]
    TooFewPixels { got: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// 50-bin depth histogram over the in-box valid depth range.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthHistogram {
    /// 51 ascending bin edges, meters.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl DepthHistogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Where an estimate came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimateSource {
    Network,
    Pnp,
    Fused,
}

impl std::fmt::Display for EstimateSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EstimateSource::Network => write!(f, "network"),
            EstimateSource::Pnp => write!(f, "pnp"),
            EstimateSource::Fused => write!(f, "fused"),
        }
    }
}

/// Timestamped 3D target position tagged by producing source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetEstimate {
    pub position: Point3,
    pub depth: f64,
    pub timestamp: f64,
    pub source: EstimateSource,
}

/// How the final depth is averaged after peak expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DepthAveraging {
    /// Mean over the expanded histogram bin range.
    #[default]
    PeakRange,
    /// Mean over the 2-sigma foreground set derived from the peak range.
    SigmaForeground,
}

fn in_box_depths(dm: &DepthMap, bbox: &BBox) -> Result<Vec<(usize, usize, f64)>, DepthTargetError> {
    let mut intersects = false;
    let mut depths = Vec::new();
    for r in 0..dm.height() {
        for c in 0..dm.width() {
            let px = DepthMap::pixel_center(r, c);
            if bbox.contains(px.u, px.v) {
                intersects = true;
                if let Some(d) = dm.get(r, c) {
                    depths.push((r, c, d));
                }
            }
        }
    }
    if !intersects {
        return Err(DepthTargetError::EmptyIntersection);
    }
    Ok(depths)
}

/// The histogram-peak depth of the in-box region.
///
/// Depths are binned into 50 equal-width bins over their [min, max]
/// range; the peak bin (ties break toward the nearer depth) is expanded
/// outward while the adjacent bin keeps at least half the peak count, and
/// the returned depth is the mean of in-box depths inside that range.
pub fn histogram_peak_depth(
    dm: &DepthMap,
    bbox: &BBox,
) -> Result<(f64, DepthHistogram, (f64, f64)), DepthTargetError> {
    histogram_peak_depth_with(dm, bbox, DepthAveraging::PeakRange)
}

/// [`histogram_peak_depth`] with a selectable averaging rule.
pub fn histogram_peak_depth_with(
    dm: &DepthMap,
    bbox: &BBox,
    averaging: DepthAveraging,
) -> Result<(f64, DepthHistogram, (f64, f64)), DepthTargetError> {
    let cells = in_box_depths(dm, bbox)?;
    if cells.len() < MIN_BOX_PIXELS {
        return Err(DepthTargetError::TooFewPixels { got: cells.len() });
    }
    let depths: Vec<f64> = cells.iter().map(|&(_, _, d)| d).collect();
    let lo = depths.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = depths.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = ((hi - lo) / BIN_COUNT as f64).max(0.0);

    let edges: Vec<f64> = (0..=BIN_COUNT).map(|i| lo + i as f64 * width).collect();
    let mut counts = vec![0usize; BIN_COUNT];
    for &d in &depths {
        let idx = if width == 0.0 {
            0
        } else {
            (((d - lo) / width) as usize).min(BIN_COUNT - 1)
        };
        counts[idx] += 1;
    }

    // argmax with ties broken toward the smaller-depth bin
    let peak = counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap();
    let peak_count = counts[peak];

    let mut left = peak;
    while left > 0 && 2 * counts[left - 1] >= peak_count {
        left -= 1;
    }
    let mut right = peak;
    while right + 1 < BIN_COUNT && 2 * counts[right + 1] >= peak_count {
        right += 1;
    }
    let range = (edges[left], edges[right + 1]);

    let in_range: Vec<f64> = if width == 0.0 {
        depths.clone()
    } else {
        depths
            .iter()
            .cloned()
            .filter(|&d| d >= range.0 && d <= range.1)
            .collect()
    };
    let mut depth = in_range.iter().sum::<f64>() / in_range.len() as f64;
    if averaging == DepthAveraging::SigmaForeground {
        let mask = sigma_split(dm, bbox, depth, range);
        let fg: Vec<f64> = cells
            .iter()
            .filter(|&&(r, c, _)| mask[r * dm.width() + c])
            .map(|&(_, _, d)| d)
            .collect();
        if !fg.is_empty() {
            depth = fg.iter().sum::<f64>() / fg.len() as f64;
        }
    }
    Ok((depth, DepthHistogram { edges, counts }, range))
}

/// 2-sigma foreground mask over the in-box region.
///
/// Sigma is the standard deviation of depths inside the peak range; an
/// in-box valid pixel is foreground when its depth is within two sigma of
/// the peak depth. Returned mask is image-shaped, row-major.
pub fn sigma_split(
    dm: &DepthMap,
    bbox: &BBox,
    peak_depth: f64,
    peak_range: (f64, f64),
) -> Vec<bool> {
    let mut mask = vec![false; dm.width() * dm.height()];
    let Ok(cells) = in_box_depths(dm, bbox) else {
        return mask;
    };
    let in_range: Vec<f64> = cells
        .iter()
        .map(|&(_, _, d)| d)
        .filter(|&d| d >= peak_range.0 && d <= peak_range.1)
        .collect();
    let sigma = if in_range.is_empty() {
        0.0
    } else {
        let mean = in_range.iter().sum::<f64>() / in_range.len() as f64;
        (in_range.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / in_range.len() as f64).sqrt()
    }
    .max(1e-6);
    for &(r, c, d) in &cells {
        if (d - peak_depth).abs() <= 2.0 * sigma {
            mask[r * dm.width() + c] = true;
        }
    }
    mask
}

/// Back-project the box center at the estimated depth; tagged as a
/// network-sourced estimate.
pub fn target_position(
    intr: &CameraIntrinsics,
    bbox: &BBox,
    depth: f64,
    timestamp: f64,
) -> Result<TargetEstimate, DepthTargetError> {
    let (u, v) = bbox.center();
    let position = back_project(intr, Pixel::new(u, v), depth)?;
    Ok(TargetEstimate {
        position,
        depth,
        timestamp,
        source: EstimateSource::Network,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0).unwrap()
    }

    fn constant_map(w: usize, h: usize, d: f64) -> DepthMap {
        DepthMap::new(w, h, vec![d; w * h]).unwrap()
    }

    /// 70% of box pixels near 2 m, 30% near 5 m, deterministic layout.
    fn bimodal_map(seed: u64) -> (DepthMap, BBox) {
        let (w, h) = (40, 40);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![8.0; w * h];
        for r in 10..30 {
            for c in 10..30 {
                let near = (r * w + c) % 10 < 7;
                let base = if near { 2.0 } else { 5.0 };
                values[r * w + c] = base + rng.gen_range(-0.05..0.05);
            }
        }
        let dm = DepthMap::new(w, h, values).unwrap();
        let bbox = BBox::new(10.0, 10.0, 30.0, 30.0).unwrap();
        (dm, bbox)
    }

    #[test]
    fn constant_box_peaks_at_its_depth() {
        let dm = constant_map(20, 20, 4.0);
        let bbox = BBox::new(2.0, 2.0, 18.0, 18.0).unwrap();
        let (depth, hist, _) = histogram_peak_depth(&dm, &bbox).unwrap();
        assert_eq!(depth, 4.0);
        assert_eq!(hist.total(), 16 * 16);
    }

    #[test]
    fn bimodal_box_selects_the_near_mode() {
        let (dm, bbox) = bimodal_map(0);
        let (depth, hist, _) = histogram_peak_depth(&dm, &bbox).unwrap();
        assert!((depth - 2.0).abs() < 0.05, "depth = {depth}");
        assert_eq!(hist.total(), 400);
    }

    #[test]
    fn box_outside_image_is_empty_intersection() {
        let dm = constant_map(20, 20, 4.0);
        let bbox = BBox::new(100.0, 100.0, 120.0, 120.0).unwrap();
        assert_eq!(
            histogram_peak_depth(&dm, &bbox).unwrap_err(),
            DepthTargetError::EmptyIntersection
        );
    }

    #[test]
    fn tiny_box_has_too_few_pixels() {
        let dm = constant_map(20, 20, 4.0);
        let bbox = BBox::new(0.0, 0.0, 3.0, 3.0).unwrap();
        assert!(matches!(
            histogram_peak_depth(&dm, &bbox),
            Err(DepthTargetError::TooFewPixels { .. })
        ));
    }

    #[test]
    fn histogram_conserves_valid_pixels_and_depth_in_range() {
        let (mut dm, bbox) = bimodal_map(1);
        dm.invalidate(12, 12);
        dm.invalidate(15, 20);
        let (depth, hist, _) = histogram_peak_depth(&dm, &bbox).unwrap();
        assert_eq!(hist.total(), 398);
        let depths: Vec<f64> = (0..dm.height())
            .flat_map(|r| (0..dm.width()).filter_map(move |c| ((10..30).contains(&r) && (10..30).contains(&c)).then(|| (r, c))))
            .filter_map(|(r, c)| dm.get(r, c))
            .collect();
        let lo = depths.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = depths.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(depth >= lo && depth <= hi);
    }

    #[test]
    fn outlier_barely_moves_the_peak_depth() {
        let (dm, bbox) = bimodal_map(2);
        let (base, hist, _) = histogram_peak_depth(&dm, &bbox).unwrap();
        let mut noisy = dm.clone();
        // ~1% of the 400 box pixels become far outliers
        noisy.set(11, 11, 50.0);
        noisy.set(22, 17, 50.0);
        noisy.set(28, 28, 50.0);
        noisy.set(13, 26, 50.0);
        let (pert, _, _) = histogram_peak_depth(&noisy, &bbox).unwrap();
        let bin_width = hist.edges[1] - hist.edges[0];
        assert!(
            (pert - base).abs() < bin_width,
            "peak moved {} with bin width {}",
            (pert - base).abs(),
            bin_width
        );
    }

    #[test]
    fn constant_box_is_entirely_foreground() {
        let dm = constant_map(20, 20, 4.0);
        let bbox = BBox::new(2.0, 2.0, 18.0, 18.0).unwrap();
        let (depth, _, range) = histogram_peak_depth(&dm, &bbox).unwrap();
        let mask = sigma_split(&dm, &bbox, depth, range);
        let count = mask.iter().filter(|&&m| m).count();
        assert_eq!(count, 16 * 16);
    }

    #[test]
    fn bimodal_foreground_fraction_matches_construction() {
        let (dm, bbox) = bimodal_map(3);
        let (depth, _, range) = histogram_peak_depth(&dm, &bbox).unwrap();
        let mask = sigma_split(&dm, &bbox, depth, range);
        let fg = mask.iter().filter(|&&m| m).count() as f64;
        let frac = fg / 400.0;
        assert!((frac - 0.70).abs() < 0.05, "foreground fraction {frac}");
    }

    #[test]
    fn far_outlier_is_background() {
        let (mut dm, bbox) = bimodal_map(4);
        dm.set(15, 15, 50.0);
        let (depth, _, range) = histogram_peak_depth(&dm, &bbox).unwrap();
        let mask = sigma_split(&dm, &bbox, depth, range);
        assert!(!mask[15 * dm.width() + 15]);
    }

    #[test]
    fn target_position_at_principal_point() {
        let bbox = BBox::new(40.0, 40.0, 60.0, 60.0).unwrap();
        let est = target_position(&intr(), &bbox, 3.0, 0.0).unwrap();
        assert_eq!(est.position, Point3::new(0.0, 0.0, 3.0));
        assert_eq!(est.depth, est.position.z);
        assert_eq!(est.source, EstimateSource::Network);
    }

    #[test]
    fn target_position_hand_case() {
        let bbox = BBox::new(90.0, 40.0, 110.0, 60.0).unwrap();
        let est = target_position(&intr(), &bbox, 2.0, 1.5).unwrap();
        assert_relative_eq!(est.position.x, 1.0);
        assert_relative_eq!(est.position.y, 0.0);
        assert_relative_eq!(est.position.z, 2.0);
        assert_eq!(est.timestamp, 1.5);
    }

    #[test]
    fn zero_depth_rejected() {
        let bbox = BBox::new(40.0, 40.0, 60.0, 60.0).unwrap();
        assert!(target_position(&intr(), &bbox, 0.0, 0.0).is_err());
    }
}
