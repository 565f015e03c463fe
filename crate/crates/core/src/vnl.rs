//! Virtual-normal sampling and the VNL score between depth maps.
//!
//! Triplets of widely separated, non-collinear points are drawn from a
//! reconstructed cloud; the unit normal of the plane through each triplet
//! is compared between the predicted and ground-truth reconstructions.

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{back_project, CameraIntrinsics, DepthMap, Point3};

#[derive(Debug, Error, PartialEq)]
pub enum VnlError {
    #[error("triplet sampling exhausted after {attempts} attempts ({filled}/{wanted} triplets)")]
    SamplingExhausted {
        attempts: usize,
        filled: usize,
        wanted: usize,
    },
    #[error("triplet is degenerate (cross product norm {0:.3e})")]
    DegenerateTriplet(f64),
    #[error("normal lists differ in length ({pred} vs {gt})")]
    LengthMismatch { pred: usize, gt: usize },
    #[error("depth maps differ in shape")]
    ShapeMismatch,
    #[error("cloud too small: {0} points, need at least 3")]
    CloudTooSmall(usize),
    #[error("invalid constraints: need 0 < beta_min < alpha_max < pi and theta_min > 0")]
    InvalidConstraints,
}

/// Angle and separation constraints on sampled triplets.
#[derive(Debug, Clone, Copy)]
pub struct TripletConstraints {
    /// Lower bound on the two checked triangle angles, radians.
    pub beta_min: f64,
    /// Upper bound on the two checked triangle angles, radians.
    pub alpha_max: f64,
    /// Minimum pairwise distance between triplet members, meters.
    pub theta_min: f64,
    pub max_attempts_per_triplet: usize,
}

impl TripletConstraints {
    pub fn validate(&self) -> Result<(), VnlError> {
        let ok = self.beta_min > 0.0
            && self.beta_min < self.alpha_max
            && self.alpha_max < std::f64::consts::PI
            && self.theta_min > 0.0
            && self.max_attempts_per_triplet > 0;
        if ok {
            Ok(())
        } else {
            Err(VnlError::InvalidConstraints)
        }
    }
}

impl Default for TripletConstraints {
    /// 30..120 degree angles, 0.6 m separation, 200 attempts per triplet.
    fn default() -> Self {
        Self {
            beta_min: 30f64.to_radians(),
            alpha_max: 120f64.to_radians(),
            theta_min: 0.6,
            max_attempts_per_triplet: 200,
        }
    }
}

/// A sampled point triplet with the cloud indices it came from.
#[derive(Debug, Clone, Copy)]
pub struct PointTriplet {
    pub a: Point3,
    pub b: Point3,
    pub c: Point3,
    /// Indices into the source cloud for re-evaluating the same pixels
    /// in another depth map.
    pub indices: [usize; 3],
}

/// Unit plane normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VirtualNormal(pub Vector3<f64>);

fn angle_between(u: Vector3<f64>, v: Vector3<f64>) -> f64 {
    let denom = u.norm() * v.norm();
    if denom < 1e-300 {
        return 0.0;
    }
    (u.dot(&v) / denom).clamp(-1.0, 1.0).acos()
}

fn triplet_satisfies(a: Point3, b: Point3, c: Point3, cons: &TripletConstraints) -> bool {
    let (va, vb, vc) = (a.to_vector(), b.to_vector(), c.to_vector());
    let dab = (vb - va).norm();
    let dac = (vc - va).norm();
    let dbc = (vc - vb).norm();
    if dab <= cons.theta_min || dac <= cons.theta_min || dbc <= cons.theta_min {
        return false;
    }
    // the two angle conditions from the sampling rule: at A and at B
    let ang_a = angle_between(vb - va, vc - va);
    let ang_b = angle_between(vc - vb, va - vb);
    ang_a >= cons.beta_min && ang_a <= cons.alpha_max && ang_b >= cons.beta_min && ang_b <= cons.alpha_max
}

/// Rejection-sample `n_groups` constraint-satisfying triplets.
///
/// Deterministic for a given seed. Fails with `SamplingExhausted` once
/// `max_attempts_per_triplet * n_groups` draws have been rejected without
/// filling the quota.
pub fn sample_triplets(
    cloud: &[Point3],
    cons: &TripletConstraints,
    n_groups: usize,
    seed: u64,
) -> Result<Vec<PointTriplet>, VnlError> {
    cons.validate()?;
    if cloud.len() < 3 {
        return Err(VnlError::CloudTooSmall(cloud.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let budget = cons.max_attempts_per_triplet * n_groups;
    let mut attempts = 0usize;
    let mut out = Vec::with_capacity(n_groups);
    while out.len() < n_groups {
        if attempts >= budget {
            return Err(VnlError::SamplingExhausted {
                attempts,
                filled: out.len(),
                wanted: n_groups,
            });
        }
        attempts += 1;
        let i = rng.gen_range(0..cloud.len());
        let j = rng.gen_range(0..cloud.len());
        let k = rng.gen_range(0..cloud.len());
        if i == j || j == k || i == k {
            continue;
        }
        let (a, b, c) = (cloud[i], cloud[j], cloud[k]);
        if triplet_satisfies(a, b, c, cons) {
            out.push(PointTriplet {
                a,
                b,
                c,
                indices: [i, j, k],
            });
        }
    }
    Ok(out)
}

/// Unit normal of the plane through the triplet, AC x AB operand order,
/// canonicalized so z >= 0 (ties: y >= 0, then x >= 0).
pub fn triplet_normal(t: &PointTriplet) -> Result<VirtualNormal, VnlError> {
    let a = t.a.to_vector();
    let ac = t.c.to_vector() - a;
    let ab = t.b.to_vector() - a;
    let cross = ac.cross(&ab);
    let norm = cross.norm();
    if norm <= 1e-12 {
        return Err(VnlError::DegenerateTriplet(norm));
    }
    let mut n = cross / norm;
    let flip = n.z < 0.0 || (n.z == 0.0 && (n.y < 0.0 || (n.y == 0.0 && n.x < 0.0)));
    if flip {
        n = -n;
    }
    Ok(VirtualNormal(n))
}

/// Mean Euclidean distance between index-aligned normal lists; in [0, 2].
pub fn vnl_loss(pred: &[VirtualNormal], gt: &[VirtualNormal]) -> Result<f64, VnlError> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(VnlError::LengthMismatch {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    let sum: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| (p.0 - g.0).norm())
        .sum();
    Ok(sum / pred.len() as f64)
}

/// VNL score between two depth maps of the same shape.
///
/// Triplets are sampled from the ground-truth cloud; the same pixel
/// indices are evaluated in both clouds. A triplet degenerate in the
/// predicted cloud contributes the maximal distance 2.
pub fn vnl_between_depth_maps(
    intr: &CameraIntrinsics,
    pred_dm: &DepthMap,
    gt_dm: &DepthMap,
    cons: &TripletConstraints,
    n_groups: usize,
    seed: u64,
) -> Result<f64, VnlError> {
    if pred_dm.width() != gt_dm.width() || pred_dm.height() != gt_dm.height() {
        return Err(VnlError::ShapeMismatch);
    }
    // clouds restricted to cells valid in both maps, index-aligned
    let mut gt_cloud = Vec::new();
    let mut pred_cloud = Vec::new();
    for (r, c, gt_d) in gt_dm.iter_valid() {
        if let Some(pred_d) = pred_dm.get(r, c) {
            let px = DepthMap::pixel_center(r, c);
            gt_cloud.push(back_project(intr, px, gt_d).expect("valid depth"));
            pred_cloud.push(back_project(intr, px, pred_d).expect("valid depth"));
        }
    }
    let triplets = sample_triplets(&gt_cloud, cons, n_groups, seed)?;
    let mut sum = 0.0;
    for t in &triplets {
        let gt_n = triplet_normal(t)?;
        let [i, j, k] = t.indices;
        let pred_t = PointTriplet {
            a: pred_cloud[i],
            b: pred_cloud[j],
            c: pred_cloud[k],
            indices: t.indices,
        };
        match triplet_normal(&pred_t) {
            Ok(pred_n) => sum += (pred_n.0 - gt_n.0).norm(),
            Err(VnlError::DegenerateTriplet(_)) => sum += 2.0,
            Err(e) => return Err(e),
        }
    }
    Ok(sum / triplets.len() as f64)
}
