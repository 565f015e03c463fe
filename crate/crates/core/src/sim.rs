//! Synthetic scene generator and pipeline orchestrator.
//!
//! Stands in for the neural detector and depth network: renders analytic
//! depth maps (planar background plus a fronto-parallel target rectangle),
//! emits detection boxes and feature correspondences at two rates, and
//! runs the full fusion pipeline open-loop or closed-loop with a kinematic
//! bicycle follower.

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use thiserror::Error;

use crate::control::{control_command, ControllerConfig, PidMemory};
use crate::depth_target::{histogram_peak_depth, target_position, EstimateSource, TargetEstimate};
use crate::detect::BBox;
use crate::fusion::{DepthFusionTracker, FusionConfig};
use crate::geometry::{project, CameraIntrinsics, DepthMap, Pixel, Point3};
use crate::io::{parse_key_values, IoError, LogRow};
use crate::pnp::{pnp_interpolate_position, Correspondence};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid scenario config: {0}")]
    InvalidConfig(String),
}

/// One piece of the leader's trajectory, in its own local time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LeaderSegment {
    /// start + velocity * tau
    Line {
        duration: f64,
        start: Vector3<f64>,
        velocity: Vector3<f64>,
    },
    /// circle in the x-z plane around `center`
    Arc {
        duration: f64,
        center: Vector3<f64>,
        radius: f64,
        angular_rate: f64,
        phase: f64,
    },
    /// per-axis cubic in tau
    Cubic {
        duration: f64,
        coeffs: [[f64; 4]; 3],
    },
}

impl LeaderSegment {
    fn duration(&self) -> f64 {
        match self {
            LeaderSegment::Line { duration, .. }
            | LeaderSegment::Arc { duration, .. }
            | LeaderSegment::Cubic { duration, .. } => *duration,
        }
    }

    fn position_at(&self, tau: f64) -> Vector3<f64> {
        match self {
            LeaderSegment::Line {
                start, velocity, ..
            } => start + velocity * tau,
            LeaderSegment::Arc {
                center,
                radius,
                angular_rate,
                phase,
                ..
            } => {
                let theta = phase + angular_rate * tau;
                center + Vector3::new(radius * theta.cos(), 0.0, radius * theta.sin())
            }
            LeaderSegment::Cubic { coeffs, .. } => Vector3::from_fn(|axis, _| {
                let c = &coeffs[axis];
                c[0] + c[1] * tau + c[2] * tau * tau + c[3] * tau * tau * tau
            }),
        }
    }
}

/// Leader position at absolute time t: segments play in order, the last
/// one extrapolates past its end.
pub fn leader_position(segments: &[LeaderSegment], t: f64) -> Vector3<f64> {
    let mut t_local = t;
    for (i, seg) in segments.iter().enumerate() {
        if t_local <= seg.duration() || i == segments.len() - 1 {
            return seg.position_at(t_local);
        }
        t_local -= seg.duration();
    }
    Vector3::zeros()
}

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub duration: f64,
    pub frame_rate: f64,
    /// Slow-source period in seconds; <= 0 disables the network source.
    pub network_depth_period: f64,
    /// Fast-source period in seconds.
    pub pnp_period: f64,
    pub leader: Vec<LeaderSegment>,
    pub background_depth: f64,
    /// Target rectangle extents, meters.
    pub target_size: (f64, f64),
    pub depth_noise_sigma: f64,
    pub pixel_noise_sigma: f64,
    pub detection_jitter: f64,
    pub intrinsics: CameraIntrinsics,
    pub image_width: usize,
    pub image_height: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            duration: 10.0,
            frame_rate: 30.0,
            network_depth_period: 0.3,
            pnp_period: 1.0 / 30.0,
            leader: vec![LeaderSegment::Line {
                duration: f64::INFINITY,
                start: Vector3::new(0.0, 0.0, 3.0),
                velocity: Vector3::zeros(),
            }],
            background_depth: 8.0,
            target_size: (0.4, 0.3),
            depth_noise_sigma: 0.0,
            pixel_noise_sigma: 0.0,
            detection_jitter: 0.0,
            intrinsics: CameraIntrinsics::new(150.0, 150.0, 80.0, 60.0).unwrap(),
            image_width: 160,
            image_height: 120,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.duration <= 0.0 || self.frame_rate <= 0.0 {
            return Err(SimError::InvalidConfig(
                "duration and frame_rate must be positive".into(),
            ));
        }
        let frame_dt = 1.0 / self.frame_rate;
        if self.pnp_period < frame_dt - 1e-9 {
            return Err(SimError::InvalidConfig(format!(
                "pnp_period {} below frame interval {frame_dt}",
                self.pnp_period
            )));
        }
        if self.network_depth_period > 0.0 && self.network_depth_period < frame_dt - 1e-9 {
            return Err(SimError::InvalidConfig(format!(
                "network_depth_period {} below frame interval {frame_dt}",
                self.network_depth_period
            )));
        }
        if self.depth_noise_sigma < 0.0
            || self.pixel_noise_sigma < 0.0
            || self.detection_jitter < 0.0
        {
            return Err(SimError::InvalidConfig("noise sigmas must be >= 0".into()));
        }
        if self.background_depth <= 0.0 || self.target_size.0 <= 0.0 || self.target_size.1 <= 0.0 {
            return Err(SimError::InvalidConfig(
                "background_depth and target size must be positive".into(),
            ));
        }
        if self.leader.is_empty() {
            return Err(SimError::InvalidConfig("no leader trajectory".into()));
        }
        if self.image_width < 16 || self.image_height < 16 {
            return Err(SimError::InvalidConfig("image too small".into()));
        }
        Ok(())
    }

    fn frame_dt(&self) -> f64 {
        1.0 / self.frame_rate
    }

    pub fn frame_count(&self) -> usize {
        (self.duration * self.frame_rate).floor() as usize + 1
    }

    fn network_every(&self) -> Option<usize> {
        if self.network_depth_period <= 0.0 {
            None
        } else {
            Some(((self.network_depth_period * self.frame_rate).round() as usize).max(1))
        }
    }

    fn pnp_every(&self) -> usize {
        ((self.pnp_period * self.frame_rate).round() as usize).max(1)
    }
}

/// Everything the simulator hands the pipeline for one frame.
#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub timestamp: f64,
    /// Ground-truth target position in the current camera frame.
    pub truth: Point3,
    pub detection: BBox,
    /// Present on network ticks.
    pub depth_map: Option<DepthMap>,
    /// Present on PnP ticks: (foreground, background).
    pub correspondences: Option<(Vec<Correspondence>, Vec<Correspondence>)>,
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Camera pose on the ground plane: position plus heading. Camera x is
/// right, z is forward; heading 0 faces world +z.
#[derive(Debug, Clone, Copy)]
struct CameraState {
    position: Vector3<f64>,
    yaw: f64,
}

impl CameraState {
    fn origin() -> Self {
        Self {
            position: Vector3::zeros(),
            yaw: 0.0,
        }
    }

    fn world_to_camera(&self, p: Vector3<f64>) -> Vector3<f64> {
        let d = p - self.position;
        let (s, c) = self.yaw.sin_cos();
        Vector3::new(d.x * c - d.z * s, d.y, d.x * s + d.z * c)
    }
}

/// Fixed 3D landmarks: a non-coplanar cluster riding on the target and a
/// non-coplanar scatter on the background.
struct Landmarks {
    /// offsets from the target center, world axes
    fg_offsets: Vec<Vector3<f64>>,
    /// absolute world positions
    bg_points: Vec<Vector3<f64>>,
}

impl Landmarks {
    fn generate(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Self {
        let (w, h) = cfg.target_size;
        let mut fg_offsets = Vec::new();
        // 5x5 grid over the target face with deterministic depth relief
        // so the cluster is not coplanar (DLT needs a non-degenerate set)
        for i in 0..5 {
            for j in 0..5 {
                let relief = 0.25 * ((i * 5 + j) as f64 * 0.7).sin();
                fg_offsets.push(Vector3::new(
                    (i as f64 - 2.0) * 0.225 * w,
                    (j as f64 - 2.0) * 0.225 * h,
                    relief,
                ));
            }
        }
        // static background scatter along the whole travel corridor so
        // enough points stay in front of the camera for the full run
        let dt = cfg.frame_dt();
        let (mut z_lo, mut z_hi) = (0.0f64, 0.0f64);
        let (mut x_lo, mut x_hi) = (0.0f64, 0.0f64);
        for k in 0..cfg.frame_count() {
            let p = leader_position(&cfg.leader, k as f64 * dt);
            z_lo = z_lo.min(p.z);
            z_hi = z_hi.max(p.z);
            x_lo = x_lo.min(p.x);
            x_hi = x_hi.max(p.x);
        }
        let mut bg_points = Vec::new();
        for _ in 0..400 {
            bg_points.push(Vector3::new(
                rng.gen_range(x_lo - 1.5..x_hi + 1.5),
                rng.gen_range(-0.4..0.4),
                rng.gen_range(z_lo - 2.0..z_hi + cfg.background_depth + 2.0),
            ));
        }
        Self {
            fg_offsets,
            bg_points,
        }
    }
}

/// Render the analytic depth map: background plane at `background_depth`
/// plus the fronto-parallel target rectangle, both in camera-frame
/// depths, with optional Gaussian noise.
fn render_depth_map(
    cfg: &ScenarioConfig,
    target_cam: Vector3<f64>,
    rng: &mut ChaCha8Rng,
) -> DepthMap {
    let intr = &cfg.intrinsics;
    let (tw, th) = cfg.target_size;
    let mut values = Vec::with_capacity(cfg.image_width * cfg.image_height);
    for r in 0..cfg.image_height {
        for c in 0..cfg.image_width {
            let px = DepthMap::pixel_center(r, c);
            // ray test against the target rectangle at its depth
            let on_target = if target_cam.z > 0.0 {
                let x = target_cam.z * (px.u - intr.cx) / intr.fx;
                let y = target_cam.z * (px.v - intr.cy) / intr.fy;
                (x - target_cam.x).abs() <= tw / 2.0 && (y - target_cam.y).abs() <= th / 2.0
            } else {
                false
            };
            let mut d = if on_target {
                target_cam.z
            } else {
                cfg.background_depth
            };
            if cfg.depth_noise_sigma > 0.0 {
                d += cfg.depth_noise_sigma * gauss(rng);
            }
            values.push(d.max(1e-3));
        }
    }
    DepthMap::new(cfg.image_width, cfg.image_height, values).expect("dimensions match")
}

/// Projected target rectangle plus uniform corner jitter.
fn render_detection(
    cfg: &ScenarioConfig,
    target_cam: Vector3<f64>,
    rng: &mut ChaCha8Rng,
) -> Option<BBox> {
    if target_cam.z <= 0.0 {
        return None;
    }
    let intr = &cfg.intrinsics;
    let (tw, th) = cfg.target_size;
    let u1 = intr.fx * (target_cam.x - tw / 2.0) / target_cam.z + intr.cx;
    let u2 = intr.fx * (target_cam.x + tw / 2.0) / target_cam.z + intr.cx;
    let v1 = intr.fy * (target_cam.y - th / 2.0) / target_cam.z + intr.cy;
    let v2 = intr.fy * (target_cam.y + th / 2.0) / target_cam.z + intr.cy;
    let j = cfg.detection_jitter;
    let mut jit = |v: f64| {
        if j > 0.0 {
            v + rng.gen_range(-j..j)
        } else {
            v
        }
    };
    let (u1, v1, u2, v2) = (jit(u1), jit(v1), jit(u2), jit(v2));
    BBox::new(u1.min(u2 - 1e-6), v1.min(v2 - 1e-6), u2.max(u1 + 1e-6), v2.max(v1 + 1e-6)).ok()
}

fn correspondences_between(
    cfg: &ScenarioConfig,
    landmarks: &Landmarks,
    leader_prev: Vector3<f64>,
    leader_now: Vector3<f64>,
    cam_prev: &CameraState,
    cam_now: &CameraState,
    rng: &mut ChaCha8Rng,
) -> (Vec<Correspondence>, Vec<Correspondence>) {
    let intr = &cfg.intrinsics;
    let noise = |rng: &mut ChaCha8Rng| {
        if cfg.pixel_noise_sigma > 0.0 {
            cfg.pixel_noise_sigma * gauss(rng)
        } else {
            0.0
        }
    };
    let build = |world_prev: Vector3<f64>, world_now: Vector3<f64>, rng: &mut ChaCha8Rng| {
        let prev_cam = cam_prev.world_to_camera(world_prev);
        let now_cam = cam_now.world_to_camera(world_now);
        if prev_cam.z <= 0.0 || now_cam.z <= 0.0 {
            return None;
        }
        let px = project(intr, Point3::from_vector(now_cam)).ok()?;
        // only in-frame landmarks are trackable
        if px.u < 0.0
            || px.u > cfg.image_width as f64
            || px.v < 0.0
            || px.v > cfg.image_height as f64
        {
            return None;
        }
        let px = Pixel::new(px.u + noise(rng), px.v + noise(rng));
        Correspondence::new(Point3::from_vector(prev_cam), px).ok()
    };
    let fg = landmarks
        .fg_offsets
        .iter()
        .filter_map(|off| build(leader_prev + off, leader_now + off, rng))
        .collect();
    let bg = landmarks
        .bg_points
        .iter()
        .filter_map(|&p| build(p, p, rng))
        .collect();
    (fg, bg)
}

/// Generate the open-loop scenario: static camera at the origin, frames
/// at the configured rate, payloads on the source schedules. Frames with
/// no payload are omitted.
pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<Vec<FrameRecord>, SimError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let landmarks = Landmarks::generate(cfg, &mut rng);
    let cam = CameraState::origin();
    let net_every = cfg.network_every();
    let pnp_every = cfg.pnp_every();
    let dt = cfg.frame_dt();

    let mut frames = Vec::new();
    for k in 0..cfg.frame_count() {
        let t = k as f64 * dt;
        let leader = leader_position(&cfg.leader, t);
        let target_cam = cam.world_to_camera(leader);
        let Some(detection) = render_detection(cfg, target_cam, &mut rng) else {
            continue;
        };
        let is_net = net_every.is_some_and(|n| k % n == 0);
        let is_pnp = k % pnp_every == 0 && k >= pnp_every;
        if !is_net && !is_pnp {
            continue;
        }
        let depth_map = is_net.then(|| render_depth_map(cfg, target_cam, &mut rng));
        let correspondences = if is_pnp {
            let t_prev = (k - pnp_every) as f64 * dt;
            let leader_prev = leader_position(&cfg.leader, t_prev);
            Some(correspondences_between(
                cfg,
                &landmarks,
                leader_prev,
                leader,
                &cam,
                &cam,
                &mut rng,
            ))
        } else {
            None
        };
        frames.push(FrameRecord {
            timestamp: t,
            truth: Point3::from_vector(target_cam),
            detection,
            depth_map,
            correspondences,
        });
    }
    Ok(frames)
}

/// A finished pipeline run: one row per source event plus one fused row
/// per processed frame.
#[derive(Debug, Clone, Default)]
pub struct RunLog {
    pub rows: Vec<LogRow>,
}

impl RunLog {
    /// RMS depth (z) error of estimates from one source.
    pub fn depth_rms(&self, src: &str) -> f64 {
        let errs: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.src == src)
            .filter_map(|r| r.est.map(|e| e[2] - r.gt[2]))
            .collect();
        if errs.is_empty() {
            return f64::NAN;
        }
        (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt()
    }

    /// Depth series of one source, in time order.
    pub fn depth_series(&self, src: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.src == src)
            .filter_map(|r| r.est.map(|e| e[2]))
            .collect()
    }

    /// Interleaved raw (network + pnp) depth series, in time order.
    pub fn raw_interleaved_depths(&self) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.src == "network" || r.src == "pnp")
            .filter_map(|r| r.est.map(|e| e[2]))
            .collect()
    }

    /// RMS 3D position error of one source.
    pub fn position_rms(&self, src: &str) -> f64 {
        let errs: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.src == src)
            .filter_map(|r| {
                r.est.map(|e| {
                    ((e[0] - r.gt[0]).powi(2) + (e[1] - r.gt[1]).powi(2) + (e[2] - r.gt[2]).powi(2))
                        .sqrt()
                })
            })
            .collect();
        if errs.is_empty() {
            return f64::NAN;
        }
        (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt()
    }
}

/// Standard deviation of consecutive differences of a series.
pub fn frame_diff_std(series: &[f64]) -> f64 {
    if series.len() < 3 {
        return f64::NAN;
    }
    let diffs: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / diffs.len() as f64).sqrt()
}

struct PipelineState {
    tracker: DepthFusionTracker,
    /// raw PnP dead-reckoning chain, re-anchored by network registration
    pnp_chain: Point3,
    last_pnp_time: Option<f64>,
}

impl PipelineState {
    fn new(fusion_cfg: FusionConfig, pnp_period: f64, initial_target: Point3) -> Self {
        Self {
            tracker: DepthFusionTracker::new(fusion_cfg, pnp_period)
                .expect("validated fusion config"),
            pnp_chain: initial_target,
            last_pnp_time: None,
        }
    }

    /// Process one frame's payloads into log rows; the fused row is
    /// appended last. Failures mark the row and the run continues.
    fn step(
        &mut self,
        frame: &FrameRecord,
        intr: &CameraIntrinsics,
        steering: f64,
        speed: f64,
        log: &mut RunLog,
    ) {
        let t = frame.timestamp;
        let gt = [frame.truth.x, frame.truth.y, frame.truth.z];
        let row = |src: &str, est: Option<[f64; 3]>, failed: bool| LogRow {
            t,
            src: src.to_string(),
            gt,
            est,
            failed,
            steering,
            speed,
        };

        // fast source first so a same-frame network measurement can
        // register against the fresh buffer entry
        if let Some((fg, bg)) = &frame.correspondences {
            match pnp_interpolate_position(self.pnp_chain, fg, bg, intr) {
                Ok(res) => {
                    self.pnp_chain = res.position;
                    self.last_pnp_time = Some(t);
                    let est = TargetEstimate {
                        position: res.position,
                        depth: res.position.z,
                        timestamp: t,
                        source: EstimateSource::Pnp,
                    };
                    let ok = self.tracker.observe(&est).is_ok();
                    let p = res.position;
                    log.rows.push(row("pnp", Some([p.x, p.y, p.z]), !ok));
                }
                Err(_) => log.rows.push(row("pnp", None, true)),
            }
        }

        if let Some(dm) = &frame.depth_map {
            let net_est = histogram_peak_depth(dm, &frame.detection)
                .map_err(|e| e.to_string())
                .and_then(|(depth, _, _)| {
                    target_position(intr, &frame.detection, depth, t).map_err(|e| e.to_string())
                });
            match net_est {
                Ok(est) => {
                    let ok = self.tracker.observe(&est).is_ok();
                    if ok {
                        if let Ok(reg) = self.tracker.register_network(&est) {
                            // propagate the registered error into the
                            // dead-reckoning chain
                            self.pnp_chain = Point3::from_vector(
                                self.pnp_chain.to_vector() + reg.error,
                            );
                        }
                    }
                    let p = est.position;
                    log.rows.push(row("network", Some([p.x, p.y, p.z]), !ok));
                }
                Err(_) => log.rows.push(row("network", None, true)),
            }
        }

        match self.tracker.fused_estimate(t) {
            Ok(est) => {
                let p = est.position;
                log.rows.push(row("fused", Some([p.x, p.y, p.z]), false));
            }
            Err(_) => log.rows.push(row("fused", None, true)),
        }
    }
}

/// Run the fusion pipeline over pre-generated frames with a static
/// camera.
pub fn run_open_loop(
    cfg: &ScenarioConfig,
    frames: &[FrameRecord],
    fusion_cfg: &FusionConfig,
) -> RunLog {
    let mut log = RunLog::default();
    let Some(first) = frames.first() else {
        return log;
    };
    let mut state = PipelineState::new(fusion_cfg.clone(), cfg.pnp_period, first.truth);
    for frame in frames {
        state.step(frame, &cfg.intrinsics, 0.0, 0.0, &mut log);
    }
    log
}

/// Closed-loop run: the camera rides a kinematic bicycle follower driven
/// by pure pursuit and PID speed from the fused estimate. Measurements
/// are regenerated each step from the live relative geometry.
pub fn run_closed_loop(
    cfg: &ScenarioConfig,
    fusion_cfg: &FusionConfig,
    ctrl_cfg: &ControllerConfig,
) -> Result<RunLog, SimError> {
    cfg.validate()?;
    ctrl_cfg
        .validate()
        .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let landmarks = Landmarks::generate(cfg, &mut rng);
    let dt = cfg.frame_dt();
    let net_every = cfg.network_every();
    let pnp_every = cfg.pnp_every();

    let mut cam = CameraState::origin();
    let mut cam_at_last_pnp = cam;
    let mut pid = PidMemory::default();
    let mut log = RunLog::default();
    let initial_truth =
        Point3::from_vector(cam.world_to_camera(leader_position(&cfg.leader, 0.0)));
    let mut state = PipelineState::new(fusion_cfg.clone(), cfg.pnp_period, initial_truth);
    let mut command_speed = 0.0;
    let mut command_steer = 0.0;

    for k in 0..cfg.frame_count() {
        let t = k as f64 * dt;
        let leader = leader_position(&cfg.leader, t);
        let target_cam = cam.world_to_camera(leader);

        let frame = if let Some(detection) = render_detection(cfg, target_cam, &mut rng) {
            let is_net = net_every.is_some_and(|n| k % n == 0);
            let is_pnp = k % pnp_every == 0 && k >= pnp_every;
            let depth_map = is_net.then(|| render_depth_map(cfg, target_cam, &mut rng));
            let correspondences = if is_pnp {
                let t_prev = (k - pnp_every) as f64 * dt;
                let leader_prev = leader_position(&cfg.leader, t_prev);
                Some(correspondences_between(
                    cfg,
                    &landmarks,
                    leader_prev,
                    leader,
                    &cam_at_last_pnp,
                    &cam,
                    &mut rng,
                ))
            } else {
                None
            };
            if is_pnp {
                cam_at_last_pnp = cam;
            }
            Some(FrameRecord {
                timestamp: t,
                truth: Point3::from_vector(target_cam),
                detection,
                depth_map,
                correspondences,
            })
        } else {
            None
        };

        if let Some(frame) = &frame {
            state.step(frame, &cfg.intrinsics, command_steer, command_speed, &mut log);
        }

        // control from the fused estimate; coast on failure
        if let Ok(est) = state.tracker.fused_estimate(t) {
            if let Ok(cmd) =
                control_command(est.position.x, est.depth, dt, &mut pid, ctrl_cfg)
            {
                command_steer = cmd.steering;
                command_speed = cmd.speed;
            }
        }

        // kinematic bicycle, explicit Euler; positive steering turns
        // toward +x (rightward)
        let (s, c) = cam.yaw.sin_cos();
        cam.position.x += command_speed * s * dt;
        cam.position.z += command_speed * c * dt;
        cam.yaw += command_speed / ctrl_cfg.wheelbase * command_steer.tan() * dt;
    }
    Ok(log)
}

// ---------------------------------------------------------------------------
// config file

/// Parse a scenario config file (key-value lines; `leader_line`,
/// `leader_arc`, `leader_cubic` lines append trajectory segments).
pub fn load_scenario_config(path: &Path) -> Result<ScenarioConfig, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_scenario_config(&text, path)
}

pub fn parse_scenario_config(text: &str, path: &Path) -> Result<ScenarioConfig, IoError> {
    let entries = parse_key_values(text, path)?;
    let mut cfg = ScenarioConfig::default();
    let mut leader = Vec::new();
    let bad = |msg: String| IoError::Parse {
        path: path.display().to_string(),
        message: msg,
    };
    let mut fx = cfg.intrinsics.fx;
    let mut fy = cfg.intrinsics.fy;
    let mut cx = cfg.intrinsics.cx;
    let mut cy = cfg.intrinsics.cy;
    for (key, vals) in entries {
        let scalar = || -> Result<f64, IoError> {
            vals.first()
                .copied()
                .ok_or_else(|| bad(format!("key {key} needs a value")))
        };
        match key.as_str() {
            "duration" => cfg.duration = scalar()?,
            "frame_rate" => cfg.frame_rate = scalar()?,
            "network_period" | "network_depth_period" => cfg.network_depth_period = scalar()?,
            "pnp_period" => cfg.pnp_period = scalar()?,
            "background_depth" => cfg.background_depth = scalar()?,
            "target_width" => cfg.target_size.0 = scalar()?,
            "target_height" => cfg.target_size.1 = scalar()?,
            "depth_noise_sigma" => cfg.depth_noise_sigma = scalar()?,
            "pixel_noise_sigma" => cfg.pixel_noise_sigma = scalar()?,
            "detection_jitter" => cfg.detection_jitter = scalar()?,
            "fx" => fx = scalar()?,
            "fy" => fy = scalar()?,
            "cx" => cx = scalar()?,
            "cy" => cy = scalar()?,
            "image_width" => cfg.image_width = scalar()? as usize,
            "image_height" => cfg.image_height = scalar()? as usize,
            "seed" => cfg.seed = scalar()? as u64,
            "leader_line" => {
                let [d, x0, y0, z0, vx, vy, vz] = vals[..] else {
                    return Err(bad("leader_line needs 7 values: dur x0 y0 z0 vx vy vz".into()));
                };
                leader.push(LeaderSegment::Line {
                    duration: d,
                    start: Vector3::new(x0, y0, z0),
                    velocity: Vector3::new(vx, vy, vz),
                });
            }
            "leader_arc" => {
                let [d, cx0, cy0, cz0, radius, omega, phase] = vals[..] else {
                    return Err(bad(
                        "leader_arc needs 7 values: dur cx cy cz radius omega phase".into(),
                    ));
                };
                leader.push(LeaderSegment::Arc {
                    duration: d,
                    center: Vector3::new(cx0, cy0, cz0),
                    radius,
                    angular_rate: omega,
                    phase,
                });
            }
            "leader_cubic" => {
                if vals.len() != 13 {
                    return Err(bad("leader_cubic needs 13 values: dur + 4 coeffs per axis".into()));
                }
                let mut coeffs = [[0.0; 4]; 3];
                for axis in 0..3 {
                    for k in 0..4 {
                        coeffs[axis][k] = vals[1 + axis * 4 + k];
                    }
                }
                leader.push(LeaderSegment::Cubic {
                    duration: vals[0],
                    coeffs,
                });
            }
            other => return Err(bad(format!("unknown key {other:?}"))),
        }
    }
    cfg.intrinsics = CameraIntrinsics::new(fx, fy, cx, cy)
        .map_err(|e| bad(e.to_string()))?;
    if !leader.is_empty() {
        cfg.leader = leader;
    }
    cfg.validate().map_err(|e| bad(e.to_string()))?;
    Ok(cfg)
}

/// The benchmark scenario used by the acceptance checks: 30 Hz frames,
/// network every 0.3 s, PnP every frame, moderate noise.
pub fn standard_scenario(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        duration: 30.0,
        frame_rate: 30.0,
        network_depth_period: 0.3,
        pnp_period: 1.0 / 30.0,
        leader: vec![LeaderSegment::Line {
            duration: f64::INFINITY,
            start: Vector3::new(0.0, 0.0, 3.0),
            velocity: Vector3::new(0.01, 0.0, 0.05),
        }],
        background_depth: 8.0,
        target_size: (0.6, 0.45),
        depth_noise_sigma: 0.05,
        pixel_noise_sigma: 0.5,
        detection_jitter: 0.5,
        intrinsics: CameraIntrinsics::new(300.0, 300.0, 80.0, 60.0).unwrap(),
        image_width: 160,
        image_height: 120,
        seed,
    }
}
