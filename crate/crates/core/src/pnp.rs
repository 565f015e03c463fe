//! DLT perspective-n-point pose estimation and the foreground/background
//! relative-motion position interpolation.
//!
//! The solver works in normalized camera coordinates (intrinsics divided
//! out) so the recovered 12-vector encodes (R t) directly, and applies
//! Hartley-style normalization to the 3D points for conditioning.

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{project, CameraIntrinsics, Pixel, Point3, Pose};

pub const MIN_POINTS: usize = 6;

#[derive(Debug, Error, PartialEq)]
pub enum PnpError {
    #[error("insufficient points ({got} < {MIN_POINTS})")]
    InsufficientPoints { got: usize },
    #[error("degenerate configuration: stacked system has rank below 11")]
    DegenerateConfiguration,
    #[error("cheirality failure: no sign puts a majority of points in front")]
    CheiralityFailure,
    #[error("correspondence has non-positive world depth {0}")]
    NonPositiveWorldDepth(f64),
    #[error("{set} solve failed: {source}")]
    SetFailed {
        set: PointSet,
        #[source]
        source: Box<PnpError>,
    },
}

/// Which correspondence set a propagated failure came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointSet {
    Foreground,
    Background,
}

impl std::fmt::Display for PointSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PointSet::Foreground => write!(f, "foreground"),
            PointSet::Background => write!(f, "background"),
        }
    }
}

/// A 3D point in previous-frame camera coordinates paired with its
/// observed pixel in the current frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub world: Point3,
    pub image: Pixel,
}

impl Correspondence {
    pub fn new(world: Point3, image: Pixel) -> Result<Self, PnpError> {
        if world.z <= 0.0 {
            return Err(PnpError::NonPositiveWorldDepth(world.z));
        }
        Ok(Self { world, image })
    }
}

/// JSON-lines record for correspondence files.
#[derive(Debug, Serialize, Deserialize)]
pub struct CorrespondenceRecord {
    #[serde(rename = "X")]
    pub x: f64,
    #[serde(rename = "Y")]
    pub y: f64,
    #[serde(rename = "Z")]
    pub z: f64,
    pub u: f64,
    pub v: f64,
    pub set: String,
}

#[derive(Debug, Clone)]
pub struct PnpSolution {
    pub pose: Pose,
    pub reprojection_rms: f64,
    pub points_used: usize,
}

/// Solve camera pose from at least six 3D-2D correspondences by the
/// direct linear transform.
pub fn solve_pnp(
    corrs: &[Correspondence],
    intr: &CameraIntrinsics,
) -> Result<PnpSolution, PnpError> {
    let n = corrs.len();
    if n < MIN_POINTS {
        return Err(PnpError::InsufficientPoints { got: n });
    }

    // normalized image coordinates
    let norm_px: Vec<(f64, f64)> = corrs
        .iter()
        .map(|c| {
            (
                (c.image.u - intr.cx) / intr.fx,
                (c.image.v - intr.cy) / intr.fy,
            )
        })
        .collect();

    // Hartley normalization of the 3D points: centroid shift, isotropic
    // scale so the mean distance from the origin is sqrt(3)
    let centroid = corrs
        .iter()
        .fold(Vector3::zeros(), |acc, c| acc + c.world.to_vector())
        / n as f64;
    let mean_dist = corrs
        .iter()
        .map(|c| (c.world.to_vector() - centroid).norm())
        .sum::<f64>()
        / n as f64;
    let scale = if mean_dist > 1e-12 {
        3f64.sqrt() / mean_dist
    } else {
        1.0
    };

    // two constraint rows per point: T1'P - x T3'P = 0, T2'P - y T3'P = 0
    let mut a = DMatrix::zeros(2 * n, 12);
    for (i, c) in corrs.iter().enumerate() {
        let p = (c.world.to_vector() - centroid) * scale;
        let (x, y) = norm_px[i];
        let ph = Vector4::new(p.x, p.y, p.z, 1.0);
        for k in 0..4 {
            a[(2 * i, k)] = ph[k];
            a[(2 * i, 8 + k)] = -x * ph[k];
            a[(2 * i + 1, 4 + k)] = ph[k];
            a[(2 * i + 1, 8 + k)] = -y * ph[k];
        }
    }

    let svd = a.svd(false, true);
    let sv = &svd.singular_values;
    if sv[10] < 1e-9 * sv[0] {
        return Err(PnpError::DegenerateConfiguration);
    }
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let null = v_t.row(11);
    let mut p_mat = Matrix3x4::zeros();
    for r in 0..3 {
        for c in 0..4 {
            p_mat[(r, c)] = null[4 * r + c];
        }
    }

    // undo the 3D normalization: P <- P * [[s I, -s c], [0, 1]]
    let m_norm = p_mat.fixed_view::<3, 3>(0, 0).into_owned();
    let t_norm = p_mat.column(3).into_owned();
    let m = m_norm * scale;
    let t = t_norm - m * centroid;
    let mut p34 = Matrix3x4::zeros();
    p34.fixed_view_mut::<3, 3>(0, 0).copy_from(&m);
    p34.set_column(3, &t);

    // fix sign so the 3x3 block has positive determinant, then remove the
    // global scale (det of a rotation is 1)
    let mut m = p34.fixed_view::<3, 3>(0, 0).into_owned();
    let det = m.determinant();
    if det.abs() < 1e-15 {
        return Err(PnpError::DegenerateConfiguration);
    }
    let mut t = p34.column(3).into_owned();
    if det < 0.0 {
        m = -m;
        t = -t;
    }
    let sigma = m.determinant().cbrt();
    m /= sigma;
    t /= sigma;

    // project the 3x3 block onto the nearest rotation
    let svd_m = m.svd(true, true);
    let u = svd_m.u.expect("3x3 SVD");
    let vt = svd_m.v_t.expect("3x3 SVD");
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u2 = u;
        u2.set_column(2, &(-u.column(2)));
        r = u2 * vt;
    }

    // cheirality: the det-positive normalization already fixed the sign,
    // so a majority of points behind the camera is unrecoverable
    let in_front = corrs
        .iter()
        .filter(|c| (r * c.world.to_vector() + t).z > 0.0)
        .count();
    if 2 * in_front <= n {
        return Err(PnpError::CheiralityFailure);
    }

    let pose = Pose::new(r, t).expect("projected rotation is orthonormal");
    let rms = reprojection_rms(corrs, intr, &pose);
    Ok(PnpSolution {
        pose,
        reprojection_rms: rms,
        points_used: n,
    })
}

fn reprojection_rms(corrs: &[Correspondence], intr: &CameraIntrinsics, pose: &Pose) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for c in corrs {
        if let Ok(px) = project(intr, pose.transform(c.world)) {
            sum += (px.u - c.image.u).powi(2) + (px.v - c.image.v).powi(2);
            count += 1;
        }
    }
    if count == 0 {
        f64::INFINITY
    } else {
        (sum / count as f64).sqrt()
    }
}

/// Result of the two-set interpolation step: the updated target position
/// plus the two solved motions for diagnostics.
#[derive(Debug, Clone)]
pub struct InterpolationResult {
    pub position: Point3,
    pub target_motion: PnpSolution,
    pub ego_motion: PnpSolution,
}

/// Carry the previous target position forward one PnP frame.
///
/// The background set yields camera ego-motion; the foreground set yields
/// the combined target-plus-camera motion in camera coordinates, so the
/// new camera-frame target position is the foreground motion applied to
/// the previous target position.
pub fn pnp_interpolate_position(
    prev_target: Point3,
    fg: &[Correspondence],
    bg: &[Correspondence],
    intr: &CameraIntrinsics,
) -> Result<InterpolationResult, PnpError> {
    let ego = solve_pnp(bg, intr).map_err(|e| PnpError::SetFailed {
        set: PointSet::Background,
        source: Box::new(e),
    })?;
    let target = solve_pnp(fg, intr).map_err(|e| PnpError::SetFailed {
        set: PointSet::Foreground,
        source: Box::new(e),
    })?;
    let position = target.pose.transform(prev_target);
    Ok(InterpolationResult {
        position,
        target_motion: target,
        ego_motion: ego,
    })
}

pub mod test_support {
    //! Forward-projection instance generators shared by unit and
    //! acceptance tests.

    use super::*;
    use nalgebra::{Rotation3, Unit};
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    pub fn random_rotation(rng: &mut ChaCha8Rng, max_angle: f64) -> Matrix3<f64> {
        let axis = Unit::new_normalize(Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ));
        let angle = rng.gen_range(-max_angle..max_angle);
        *Rotation3::from_axis_angle(&axis, angle).matrix()
    }

    pub fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3> {
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(4.0..10.0),
                )
            })
            .collect()
    }

    /// Build exact correspondences for a known pose by forward projection.
    pub fn project_instance(
        points: &[Point3],
        pose: &Pose,
        intr: &CameraIntrinsics,
    ) -> Vec<Correspondence> {
        points
            .iter()
            .map(|&p| {
                let px = project(intr, pose.transform(p)).expect("point in front");
                Correspondence::new(p, px).unwrap()
            })
            .collect()
    }

    pub fn rotation_angular_error(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
        let rel = a * b.transpose();
        ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }
}
