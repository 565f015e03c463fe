//! Shi-Tomasi corner detection and pyramidal Lucas-Kanade tracking, plus
//! foreground/background classification of tracked points by detection box.

use thiserror::Error;

use crate::detect::BBox;
use crate::geometry::Pixel;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("image {width}x{height} too small for window {window}")]
    ImageTooSmall {
        width: usize,
        height: usize,
        window: usize,
    },
    #[error("images differ in shape")]
    ShapeMismatch,
    #[error("invalid image dimensions {width}x{height} for {len} intensities")]
    DimensionMismatch {
        width: usize,
        height: usize,
        len: usize,
    },
    #[error("intensity {0} outside [0, 1]")]
    IntensityOutOfRange(f64),
    #[error("window size must be odd, got {0}")]
    EvenWindow(usize),
}

/// Row-major grayscale image with intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, FeatureError> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(FeatureError::DimensionMismatch {
                width,
                height,
                len: data.len(),
            });
        }
        if let Some(&bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(FeatureError::IntensityOutOfRange(bad));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Build from a function of (x, y) pixel coordinates, clamped to [0, 1].
    pub fn from_fn(width: usize, height: usize, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                data.push(f(c as f64, r as f64).clamp(0.0, 1.0));
            }
        }
        Self::new(width, height, data).expect("clamped values are in range")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    /// Bilinear sample with border clamping.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let i00 = self.at(y0, x0);
        let i10 = self.at(y0, x1);
        let i01 = self.at(y1, x0);
        let i11 = self.at(y1, x1);
        i00 * (1.0 - fx) * (1.0 - fy) + i10 * fx * (1.0 - fy) + i01 * (1.0 - fx) * fy + i11 * fx * fy
    }

    /// Half-resolution image by 2x2 averaging.
    fn downsample(&self) -> GrayImage {
        let w = (self.width / 2).max(1);
        let h = (self.height / 2).max(1);
        let mut data = Vec::with_capacity(w * h);
        for r in 0..h {
            for c in 0..w {
                let r0 = 2 * r;
                let c0 = 2 * c;
                let r1 = (r0 + 1).min(self.height - 1);
                let c1 = (c0 + 1).min(self.width - 1);
                data.push((self.at(r0, c0) + self.at(r0, c1) + self.at(r1, c0) + self.at(r1, c1)) / 4.0);
            }
        }
        GrayImage {
            width: w,
            height: h,
            data,
        }
    }
}

/// A detected corner: position plus min-eigenvalue response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corner {
    pub position: Pixel,
    pub quality: f64,
}

/// A tracked point pair between consecutive frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowMatch {
    pub prev: Pixel,
    pub next: Pixel,
    pub converged: bool,
}

/// Central-difference gradients; zero on the one-pixel border.
fn gradients(img: &GrayImage) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (img.width, img.height);
    let mut ix = vec![0.0; w * h];
    let mut iy = vec![0.0; w * h];
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            ix[r * w + c] = (img.at(r, c + 1) - img.at(r, c - 1)) / 2.0;
            iy[r * w + c] = (img.at(r + 1, c) - img.at(r - 1, c)) / 2.0;
        }
    }
    (ix, iy)
}

fn min_eigenvalue(sxx: f64, sxy: f64, syy: f64) -> f64 {
    let tr = sxx + syy;
    let disc = ((sxx - syy).powi(2) + 4.0 * sxy * sxy).sqrt();
    (tr - disc) / 2.0
}

/// Shi-Tomasi corners: min eigenvalue of the windowed structure tensor,
/// thresholded relative to the global maximum response, non-maximum
/// suppressed with `min_distance` spacing, strongest first.
pub fn shi_tomasi(
    img: &GrayImage,
    max_corners: usize,
    quality_level: f64,
    min_distance: f64,
    window: usize,
) -> Result<Vec<Corner>, FeatureError> {
    if window % 2 == 0 {
        return Err(FeatureError::EvenWindow(window));
    }
    let half = window / 2;
    // one extra pixel so gradient support stays inside the image
    let margin = half + 1;
    if img.width <= 2 * margin || img.height <= 2 * margin {
        return Err(FeatureError::ImageTooSmall {
            width: img.width,
            height: img.height,
            window,
        });
    }
    let (ix, iy) = gradients(img);
    let w = img.width;
    let mut responses = Vec::new();
    let mut max_response = 0.0f64;
    for r in margin..img.height - margin {
        for c in margin..w - margin {
            let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
            for dr in r - half..=r + half {
                for dc in c - half..=c + half {
                    let gx = ix[dr * w + dc];
                    let gy = iy[dr * w + dc];
                    sxx += gx * gx;
                    sxy += gx * gy;
                    syy += gy * gy;
                }
            }
            let resp = min_eigenvalue(sxx, sxy, syy);
            if resp > 0.0 {
                responses.push((r, c, resp));
                max_response = max_response.max(resp);
            }
        }
    }
    if max_response <= 1e-12 {
        return Ok(Vec::new());
    }
    let threshold = quality_level * max_response;
    let mut candidates: Vec<_> = responses
        .into_iter()
        .filter(|&(_, _, resp)| resp >= threshold)
        .collect();
    candidates.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap());

    let mut corners: Vec<Corner> = Vec::new();
    for (r, c, resp) in candidates {
        if corners.len() >= max_corners {
            break;
        }
        let (x, y) = (c as f64, r as f64);
        let spaced = corners.iter().all(|k| {
            let dx = k.position.u - x;
            let dy = k.position.v - y;
            (dx * dx + dy * dy).sqrt() >= min_distance
        });
        if spaced {
            corners.push(Corner {
                position: Pixel::new(x, y),
                quality: resp,
            });
        }
    }
    Ok(corners)
}

const LK_SINGULAR_EIG: f64 = 1e-9;

/// Iterative LK flow for one point at one pyramid level. Returns the refined
/// flow and whether the iteration converged.
fn lk_level(
    prev: &GrayImage,
    next: &GrayImage,
    point: Pixel,
    guess: (f64, f64),
    half: usize,
    max_iters: usize,
    eps: f64,
) -> ((f64, f64), bool) {
    // spatial gradient tensor from the previous frame, fixed across iterations
    let (mut gxx, mut gxy, mut gyy) = (0.0, 0.0, 0.0);
    let n = 2 * half + 1;
    let mut grads = Vec::with_capacity(n * n);
    for dy in -(half as i64)..=half as i64 {
        for dx in -(half as i64)..=half as i64 {
            let x = point.u + dx as f64;
            let y = point.v + dy as f64;
            let gx = (prev.sample(x + 1.0, y) - prev.sample(x - 1.0, y)) / 2.0;
            let gy = (prev.sample(x, y + 1.0) - prev.sample(x, y - 1.0)) / 2.0;
            grads.push((x, y, gx, gy));
            gxx += gx * gx;
            gxy += gx * gy;
            gyy += gy * gy;
        }
    }
    if min_eigenvalue(gxx, gxy, gyy) < LK_SINGULAR_EIG {
        return (guess, false);
    }
    let det = gxx * gyy - gxy * gxy;
    let mut flow = guess;
    for _ in 0..max_iters {
        let (mut bx, mut by) = (0.0, 0.0);
        for &(x, y, gx, gy) in &grads {
            let di = prev.sample(x, y) - next.sample(x + flow.0, y + flow.1);
            bx += di * gx;
            by += di * gy;
        }
        let vx = (gyy * bx - gxy * by) / det;
        let vy = (gxx * by - gxy * bx) / det;
        flow.0 += vx;
        flow.1 += vy;
        if (vx * vx + vy * vy).sqrt() < eps {
            return (flow, true);
        }
    }
    (flow, false)
}

/// Pyramidal Lucas-Kanade tracking of `corners` from `prev` into `next`.
///
/// Coarse-to-fine over `levels` pyramid levels with bilinear subpixel
/// sampling. A match is not converged when the normal matrix is singular
/// or the iteration budget runs out at the finest level.
pub fn lk_track(
    prev: &GrayImage,
    next: &GrayImage,
    corners: &[Corner],
    window: usize,
    max_iters: usize,
    eps: f64,
    levels: usize,
) -> Result<Vec<FlowMatch>, FeatureError> {
    if prev.width != next.width || prev.height != next.height {
        return Err(FeatureError::ShapeMismatch);
    }
    if window % 2 == 0 {
        return Err(FeatureError::EvenWindow(window));
    }
    let levels = levels.max(1);
    let half = window / 2;

    let mut prev_pyr = vec![prev.clone()];
    let mut next_pyr = vec![next.clone()];
    for _ in 1..levels {
        let p = prev_pyr.last().unwrap();
        if p.width / 2 <= window || p.height / 2 <= window {
            break;
        }
        prev_pyr.push(p.downsample());
        next_pyr.push(next_pyr.last().unwrap().downsample());
    }

    let matches = corners
        .iter()
        .map(|corner| {
            let mut flow = (0.0, 0.0);
            let mut converged = false;
            for level in (0..prev_pyr.len()).rev() {
                let scale = (1 << level) as f64;
                let p = Pixel::new(corner.position.u / scale, corner.position.v / scale);
                let (f, ok) =
                    lk_level(&prev_pyr[level], &next_pyr[level], p, flow, half, max_iters, eps);
                converged = ok;
                flow = if level > 0 { (f.0 * 2.0, f.1 * 2.0) } else { f };
            }
            FlowMatch {
                prev: corner.position,
                next: Pixel::new(corner.position.u + flow.0, corner.position.v + flow.1),
                converged,
            }
        })
        .collect();
    Ok(matches)
}

/// Partition matches by whether their previous position lies inside the
/// detection box (closed boundary).
pub fn split_foreground(matches: &[FlowMatch], bbox: &BBox) -> (Vec<FlowMatch>, Vec<FlowMatch>) {
    matches
        .iter()
        .partition(|m| bbox.contains(m.prev.u, m.prev.v))
}
