//! Asynchronous fusion of slow network-depth estimates and fast PnP
//! estimates: constant-velocity Kalman filtering, a bounded trajectory
//! buffer with cubic fitting, and retroactive error registration.

use nalgebra::{Matrix3, Matrix6, SMatrix, Vector3, Vector6};
use std::collections::VecDeque;
use thiserror::Error;

use crate::depth_target::{EstimateSource, TargetEstimate};
use crate::geometry::Point3;

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("time reversal: measurement at {measurement} precedes state at {state}")]
    TimeReversal { state: f64, measurement: f64 },
    #[error("numerical breakdown: innovation covariance not invertible")]
    NumericalBreakdown,
    #[error("insufficient samples for cubic fit ({got} < 4)")]
    InsufficientSamples { got: usize },
    #[error("timestamps too close for a stable fit (spread {0:.3e} s)")]
    IllConditioned(f64),
    #[error("no buffered entry within {tolerance} s of t={t}")]
    NoMatchingFrame { t: f64, tolerance: f64 },
    #[error("trajectory buffer is empty")]
    EmptyBuffer,
    #[error("tracker has not received a measurement yet")]
    Uninitialized,
    #[error("buffer timestamps must be strictly increasing")]
    NonMonotonicTimestamp,
    #[error("invalid fusion config: {0}")]
    InvalidConfig(&'static str),
}

/// Fused 3D position and velocity with a 6x6 covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// State order [position, velocity]; kept symmetric by construction.
    pub covariance: Matrix6<f64>,
    pub last_time: f64,
}

/// Noise and initialization parameters for the filter.
#[derive(Debug, Clone)]
pub struct FusionConfig {
    /// White-acceleration process noise intensity, (m/s^2)^2.
    pub process_noise_scale: f64,
    pub meas_noise_network: Matrix3<f64>,
    pub meas_noise_pnp: Matrix3<f64>,
    pub buffer_capacity: usize,
    pub init_position_var: f64,
    pub init_velocity_var: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            process_noise_scale: 0.005,
            meas_noise_network: Matrix3::identity() * 1e-3,
            meas_noise_pnp: Matrix3::identity() * 25.0,
            buffer_capacity: 32,
            init_position_var: 1.0,
            init_velocity_var: 0.25,
        }
    }
}

impl FusionConfig {
    /// Low-latency variant for closed-loop control: large process noise
    /// and full trust in the fast source, trading smoothness for phase
    /// lag.
    pub fn responsive() -> Self {
        Self {
            process_noise_scale: 5.0,
            meas_noise_pnp: Matrix3::identity() * 1e-3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        if self.process_noise_scale < 0.0 {
            return Err(FusionError::InvalidConfig("process_noise_scale < 0"));
        }
        if self.init_position_var <= 0.0 || self.init_velocity_var <= 0.0 {
            return Err(FusionError::InvalidConfig("init variances must be > 0"));
        }
        if self.buffer_capacity == 0 {
            return Err(FusionError::InvalidConfig("buffer_capacity = 0"));
        }
        for m in [&self.meas_noise_network, &self.meas_noise_pnp] {
            if (m - m.transpose()).norm() > 1e-9 || m.symmetric_eigenvalues().min() < -1e-12 {
                return Err(FusionError::InvalidConfig("measurement noise not symmetric PSD"));
            }
        }
        Ok(())
    }
}

impl TrackState {
    /// Initialize from the first measurement: zero velocity, position
    /// covariance from the measurement's own noise model scaled by the
    /// configured factor, velocity variance from the config.
    pub fn from_measurement(m: &TargetEstimate, cfg: &FusionConfig) -> Self {
        let r = match m.source {
            EstimateSource::Network => &cfg.meas_noise_network,
            _ => &cfg.meas_noise_pnp,
        };
        let mut p = Matrix6::zeros();
        for i in 0..3 {
            for j in 0..3 {
                p[(i, j)] = cfg.init_position_var * r[(i, j)];
            }
            p[(i + 3, i + 3)] = cfg.init_velocity_var;
        }
        Self {
            position: m.position.to_vector(),
            velocity: Vector3::zeros(),
            covariance: p,
            last_time: m.timestamp,
        }
    }
}

fn transition(dt: f64) -> Matrix6<f64> {
    let mut f = Matrix6::identity();
    for i in 0..3 {
        f[(i, i + 3)] = dt;
    }
    f
}

/// Discrete white-acceleration process noise, per-axis blocks
/// q [[dt^4/4, dt^3/2], [dt^3/2, dt^2]].
fn process_noise(dt: f64, q: f64) -> Matrix6<f64> {
    let mut m = Matrix6::zeros();
    let dt2 = dt * dt;
    for i in 0..3 {
        m[(i, i)] = q * dt2 * dt2 / 4.0;
        m[(i, i + 3)] = q * dt2 * dt / 2.0;
        m[(i + 3, i)] = q * dt2 * dt / 2.0;
        m[(i + 3, i + 3)] = q * dt2;
    }
    m
}

fn symmetrize(p: &mut Matrix6<f64>) {
    *p = (*p + p.transpose()) / 2.0;
}

/// Constant-velocity prediction to time `t`.
pub fn predict(s: &TrackState, t: f64, cfg: &FusionConfig) -> Result<TrackState, FusionError> {
    if t < s.last_time {
        return Err(FusionError::TimeReversal {
            state: s.last_time,
            measurement: t,
        });
    }
    let dt = t - s.last_time;
    let f = transition(dt);
    let mut cov = f * s.covariance * f.transpose() + process_noise(dt, cfg.process_noise_scale);
    symmetrize(&mut cov);
    Ok(TrackState {
        position: s.position + s.velocity * dt,
        velocity: s.velocity,
        covariance: cov,
        last_time: t,
    })
}

/// Position-only measurement update with source-appropriate noise.
/// Predicts to the measurement time first; Joseph form keeps the
/// covariance PSD.
pub fn update(
    s: &TrackState,
    m: &TargetEstimate,
    cfg: &FusionConfig,
) -> Result<TrackState, FusionError> {
    let mut s = predict(s, m.timestamp, cfg)?;
    let r = match m.source {
        EstimateSource::Network => cfg.meas_noise_network,
        _ => cfg.meas_noise_pnp,
    };
    let p_pp = s.covariance.fixed_view::<3, 3>(0, 0).into_owned();
    let innovation_cov = p_pp + r;
    let Some(s_inv) = innovation_cov.try_inverse() else {
        return Err(FusionError::NumericalBreakdown);
    };
    // K = P H^T S^-1 with H = [I 0]
    let p_h_t: SMatrix<f64, 6, 3> = s.covariance.fixed_view::<6, 3>(0, 0).into_owned();
    let gain = p_h_t * s_inv;
    let innovation = m.position.to_vector() - s.position;
    let dx: Vector6<f64> = gain * innovation;
    s.position += dx.fixed_rows::<3>(0);
    s.velocity += dx.fixed_rows::<3>(3);

    let mut i_kh = Matrix6::<f64>::identity();
    for row in 0..6 {
        for col in 0..3 {
            i_kh[(row, col)] -= gain[(row, col)];
        }
    }
    let mut cov = i_kh * s.covariance * i_kh.transpose() + gain * r * gain.transpose();
    symmetrize(&mut cov);
    s.covariance = cov;
    Ok(s)
}

/// Bounded history of (timestamp, position) pairs with strictly
/// increasing timestamps.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryBuffer {
    entries: VecDeque<(f64, Vector3<f64>)>,
    capacity: usize,
}

impl TrajectoryBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            entries: VecDeque::with_capacity(capacity),
            capacity: capacity.max(1),
        }
    }

    pub fn push(&mut self, t: f64, position: Vector3<f64>) -> Result<(), FusionError> {
        if let Some(&(last, _)) = self.entries.back() {
            if t <= last {
                return Err(FusionError::NonMonotonicTimestamp);
            }
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((t, position));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(f64, Vector3<f64>)> {
        self.entries.iter()
    }

    pub fn last_timestamp(&self) -> Option<f64> {
        self.entries.back().map(|&(t, _)| t)
    }
}

/// Per-axis cubic fit of buffered positions, centered at the last
/// buffer timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFit {
    /// coeffs[axis] = [c0, c1, c2, c3] for c0 + c1 T + c2 T^2 + c3 T^3,
    /// T = t - reference_time.
    pub coeffs: [[f64; 4]; 3],
    pub reference_time: f64,
    pub residual_rms: f64,
}

impl TrajectoryFit {
    pub fn position_at(&self, t: f64) -> Vector3<f64> {
        let tau = t - self.reference_time;
        Vector3::from_fn(|axis, _| {
            let c = &self.coeffs[axis];
            c[0] + c[1] * tau + c[2] * tau * tau + c[3] * tau * tau * tau
        })
    }

    pub fn velocity_at(&self, t: f64) -> Vector3<f64> {
        let tau = t - self.reference_time;
        Vector3::from_fn(|axis, _| {
            let c = &self.coeffs[axis];
            c[1] + 2.0 * c[2] * tau + 3.0 * c[3] * tau * tau
        })
    }
}

/// Least-squares cubic per axis over the buffer contents.
pub fn fit_trajectory(buf: &TrajectoryBuffer) -> Result<TrajectoryFit, FusionError> {
    let n = buf.len();
    if n < 4 {
        return Err(FusionError::InsufficientSamples { got: n });
    }
    let t_ref = buf.last_timestamp().expect("non-empty");
    let t_first = buf.iter().next().expect("non-empty").0;
    let spread = t_ref - t_first;
    if spread < 1e-9 {
        return Err(FusionError::IllConditioned(spread));
    }
    let mut a = nalgebra::DMatrix::zeros(n, 4);
    let mut b = nalgebra::DMatrix::zeros(n, 3);
    for (i, &(t, p)) in buf.iter().enumerate() {
        let tau = t - t_ref;
        a[(i, 0)] = 1.0;
        a[(i, 1)] = tau;
        a[(i, 2)] = tau * tau;
        a[(i, 3)] = tau * tau * tau;
        for axis in 0..3 {
            b[(i, axis)] = p[axis];
        }
    }
    let svd = a.clone().svd(true, true);
    let sol = svd
        .solve(&b, 1e-12)
        .map_err(|_| FusionError::IllConditioned(spread))?;
    let mut coeffs = [[0.0; 4]; 3];
    for axis in 0..3 {
        for k in 0..4 {
            coeffs[axis][k] = sol[(k, axis)];
        }
    }
    let residual = &a * &sol - &b;
    let residual_rms = (residual.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    Ok(TrajectoryFit {
        coeffs,
        reference_time: t_ref,
        residual_rms,
    })
}

/// Outcome of registering a slow network measurement against the buffer.
#[derive(Debug, Clone)]
pub struct Registration {
    /// network position minus the matched buffered position
    pub error: Vector3<f64>,
    /// index of the matched entry
    pub matched_index: usize,
    /// refit after correction, when the buffer holds enough samples
    pub refit: Option<TrajectoryFit>,
}

/// Correct buffered PnP positions against a network measurement.
///
/// The buffered entry nearest the measurement timestamp (within
/// `tolerance`, half the PnP period by convention) anchors the error
/// vector, which is then added to every entry at or after the match.
pub fn register_network_measurement(
    buf: &mut TrajectoryBuffer,
    net: &TargetEstimate,
    tolerance: f64,
) -> Result<Registration, FusionError> {
    if buf.is_empty() {
        return Err(FusionError::EmptyBuffer);
    }
    let (matched_index, &(_, matched_pos)) = buf
        .entries
        .iter()
        .enumerate()
        .min_by(|a, b| {
            let da = (a.1 .0 - net.timestamp).abs();
            let db = (b.1 .0 - net.timestamp).abs();
            da.partial_cmp(&db).unwrap()
        })
        .expect("non-empty");
    let dt = (buf.entries[matched_index].0 - net.timestamp).abs();
    if dt > tolerance {
        return Err(FusionError::NoMatchingFrame {
            t: net.timestamp,
            tolerance,
        });
    }
    let error = net.position.to_vector() - matched_pos;
    for i in matched_index..buf.entries.len() {
        buf.entries[i].1 += error;
    }
    let refit = fit_trajectory(buf).ok();
    Ok(Registration {
        error,
        matched_index,
        refit,
    })
}

/// Single-owner tracker that fuses the two measurement streams and
/// serves predicted estimates.
#[derive(Debug, Clone)]
pub struct DepthFusionTracker {
    cfg: FusionConfig,
    state: Option<TrackState>,
    buffer: TrajectoryBuffer,
    /// nominal spacing of PnP measurements, used for match tolerance
    pnp_period: f64,
}

impl DepthFusionTracker {
    pub fn new(cfg: FusionConfig, pnp_period: f64) -> Result<Self, FusionError> {
        cfg.validate()?;
        let buffer = TrajectoryBuffer::new(cfg.buffer_capacity);
        Ok(Self {
            cfg,
            state: None,
            buffer,
            pnp_period,
        })
    }

    pub fn state(&self) -> Option<&TrackState> {
        self.state.as_ref()
    }

    pub fn buffer(&self) -> &TrajectoryBuffer {
        &self.buffer
    }

    /// Apply one measurement: initializes on the first, filters after.
    /// PnP measurements are also recorded into the trajectory buffer.
    pub fn observe(&mut self, m: &TargetEstimate) -> Result<&TrackState, FusionError> {
        let next = match &self.state {
            None => TrackState::from_measurement(m, &self.cfg),
            Some(s) => update(s, m, &self.cfg)?,
        };
        self.state = Some(next);
        if m.source == EstimateSource::Pnp {
            self.buffer.push(m.timestamp, m.position.to_vector())?;
        }
        Ok(self.state.as_ref().expect("just set"))
    }

    /// Retroactively correct the PnP history against a network estimate.
    pub fn register_network(&mut self, net: &TargetEstimate) -> Result<Registration, FusionError> {
        register_network_measurement(&mut self.buffer, net, 0.5 * self.pnp_period)
    }

    /// Predict to `query_time` without mutating the stored state.
    pub fn fused_estimate(&self, query_time: f64) -> Result<TargetEstimate, FusionError> {
        let s = self.state.as_ref().ok_or(FusionError::Uninitialized)?;
        let predicted = predict(s, query_time, &self.cfg)?;
        Ok(TargetEstimate {
            position: Point3::from_vector(predicted.position),
            depth: predicted.position.z,
            timestamp: query_time,
            source: EstimateSource::Fused,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn est(source: EstimateSource, t: f64, x: f64, y: f64, z: f64) -> TargetEstimate {
        TargetEstimate {
            position: Point3::new(x, y, z),
            depth: z,
            timestamp: t,
            source,
        }
    }

    fn cfg() -> FusionConfig {
        FusionConfig::default()
    }

    fn initial_state(t: f64) -> TrackState {
        TrackState::from_measurement(&est(EstimateSource::Network, t, 0.0, 0.0, 5.0), &cfg())
    }

    #[test]
    fn zero_dt_prediction_is_identity() {
        let s = initial_state(1.0);
        let p = predict(&s, 1.0, &cfg()).unwrap();
        assert_eq!(p.position, s.position);
        assert_eq!(p.covariance, s.covariance);
    }

    #[test]
    fn prediction_moves_with_velocity() {
        let mut s = initial_state(0.0);
        s.velocity = Vector3::new(1.0, 0.0, 0.0);
        let p = predict(&s, 2.0, &cfg()).unwrap();
        assert_eq!(p.position, Vector3::new(2.0, 0.0, 5.0));
        assert_eq!(p.last_time, 2.0);
    }

    #[test]
    fn prediction_covariance_matches_hand_multiplication() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = Matrix6::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let psd = a * a.transpose();
        let mut s = initial_state(0.0);
        s.covariance = psd;
        let dt = 0.7;
        let p = predict(&s, dt, &cfg()).unwrap();
        let f = transition(dt);
        let expected = f * psd * f.transpose() + process_noise(dt, cfg().process_noise_scale);
        assert!((p.covariance - expected).norm() < 1e-9);
    }

    #[test]
    fn time_reversal_is_rejected() {
        let s = initial_state(5.0);
        assert!(matches!(
            predict(&s, 4.0, &cfg()),
            Err(FusionError::TimeReversal { .. })
        ));
        assert!(matches!(
            update(&s, &est(EstimateSource::Pnp, 4.0, 0.0, 0.0, 5.0), &cfg()),
            Err(FusionError::TimeReversal { .. })
        ));
    }

    #[test]
    fn vanishing_noise_pins_posterior_to_measurement() {
        let mut c = cfg();
        c.meas_noise_pnp = Matrix3::identity() * 1e-15;
        let s = initial_state(0.0);
        let m = est(EstimateSource::Pnp, 0.1, 1.0, -2.0, 7.0);
        let u = update(&s, &m, &c).unwrap();
        assert!((u.position - Vector3::new(1.0, -2.0, 7.0)).norm() < 1e-6);
    }

    /// Textbook standard-form filter used as an independent oracle.
    fn oracle_run(measurements: &[TargetEstimate], c: &FusionConfig) -> (Vector3<f64>, Vector3<f64>) {
        use nalgebra::DMatrix;
        let mut x = DMatrix::zeros(6, 1);
        for i in 0..3 {
            x[(i, 0)] = measurements[0].position.to_vector()[i];
        }
        let r0 = match measurements[0].source {
            EstimateSource::Network => &c.meas_noise_network,
            _ => &c.meas_noise_pnp,
        };
        let mut p = DMatrix::zeros(6, 6);
        for i in 0..3 {
            for j in 0..3 {
                p[(i, j)] = c.init_position_var * r0[(i, j)];
            }
            p[(i + 3, i + 3)] = c.init_velocity_var;
        }
        let mut h = DMatrix::zeros(3, 6);
        for i in 0..3 {
            h[(i, i)] = 1.0;
        }
        let mut t_last = measurements[0].timestamp;
        for m in &measurements[1..] {
            let dt = m.timestamp - t_last;
            t_last = m.timestamp;
            let mut f = DMatrix::identity(6, 6);
            for i in 0..3 {
                f[(i, i + 3)] = dt;
            }
            let mut q = DMatrix::zeros(6, 6);
            let qs = c.process_noise_scale;
            for i in 0..3 {
                q[(i, i)] = qs * dt.powi(4) / 4.0;
                q[(i, i + 3)] = qs * dt.powi(3) / 2.0;
                q[(i + 3, i)] = qs * dt.powi(3) / 2.0;
                q[(i + 3, i + 3)] = qs * dt * dt;
            }
            x = &f * x;
            p = &f * &p * f.transpose() + q;
            let r = match m.source {
                EstimateSource::Network => &c.meas_noise_network,
                _ => &c.meas_noise_pnp,
            };
            let mut r_dyn = DMatrix::zeros(3, 3);
            for i in 0..3 {
                for j in 0..3 {
                    r_dyn[(i, j)] = r[(i, j)];
                }
            }
            let s_mat = &h * &p * h.transpose() + &r_dyn;
            let k = &p * h.transpose() * s_mat.try_inverse().unwrap();
            let z = DMatrix::from_column_slice(3, 1, m.position.to_vector().as_slice());
            let innov = z - &h * &x;
            x = &x + &k * innov;
            p = (DMatrix::identity(6, 6) - &k * &h) * &p;
        }
        (
            Vector3::new(x[(0, 0)], x[(1, 0)], x[(2, 0)]),
            Vector3::new(x[(3, 0)], x[(4, 0)], x[(5, 0)]),
        )
    }

    fn run_filter(measurements: &[TargetEstimate], c: &FusionConfig) -> TrackState {
        let mut s = TrackState::from_measurement(&measurements[0], c);
        for m in &measurements[1..] {
            s = update(&s, m, c).unwrap();
        }
        s
    }

    #[test]
    fn stationary_target_velocity_decays() {
        let c = cfg();
        let ms: Vec<_> = (0..=20)
            .map(|i| est(EstimateSource::Pnp, i as f64 * 0.1, 0.5, -0.2, 4.0))
            .collect();
        let s = run_filter(&ms, &c);
        assert!(s.velocity.norm() < 1e-3, "velocity {:?}", s.velocity);
        let (op, ov) = oracle_run(&ms, &c);
        assert!((s.position - op).norm() < 1e-9);
        assert!((s.velocity - ov).norm() < 1e-9);
    }

    #[test]
    fn constant_velocity_target_is_learned() {
        // equal trust in both sources so convergence speed is
        // independent of the default weighting
        let c = FusionConfig {
            meas_noise_pnp: Matrix3::identity() * 1e-3,
            ..cfg()
        };
        let ms: Vec<_> = (0..=30)
            .map(|i| {
                let t = i as f64 * 0.1;
                est(EstimateSource::Pnp, t, 0.3 * t, 0.0, 5.0)
            })
            .collect();
        let s = run_filter(&ms, &c);
        assert!((s.velocity.x - 0.3).abs() < 1e-3, "vx = {}", s.velocity.x);
        let (op, ov) = oracle_run(&ms, &c);
        assert!((s.position - op).norm() < 1e-9);
        assert!((s.velocity - ov).norm() < 1e-9);
    }

    #[test]
    fn covariance_stays_symmetric_psd_under_random_interleaving() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut s = initial_state(0.0);
        let mut t = 0.0;
        for _ in 0..1000 {
            t += rng.gen_range(0.0..0.2);
            if rng.gen_bool(0.5) {
                s = predict(&s, t, &c).unwrap();
            } else {
                let src = if rng.gen_bool(0.2) {
                    EstimateSource::Network
                } else {
                    EstimateSource::Pnp
                };
                let m = est(
                    src,
                    t,
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(1.0..10.0),
                );
                s = update(&s, &m, &c).unwrap();
            }
            let asym = (s.covariance - s.covariance.transpose()).norm();
            assert!(asym < 1e-9, "asymmetry {asym}");
            let min_eig = s.covariance.symmetric_eigenvalues().min();
            assert!(min_eig >= -1e-9, "min eigenvalue {min_eig}");
        }
    }

    #[test]
    fn exact_cubic_is_reproduced() {
        let mut buf = TrajectoryBuffer::new(32);
        // p(t) = t^3 - 2t on each axis, timestamps ending at 0 so the
        // centered coefficients equal the raw ones
        for t in [-3.0, -2.0, -1.5, -1.0, -0.5, 0.0] {
            let v = t * t * t - 2.0 * t;
            buf.push(t, Vector3::new(v, v, v)).unwrap();
        }
        let fit = fit_trajectory(&buf).unwrap();
        for axis in 0..3 {
            let c = fit.coeffs[axis];
            assert_relative_eq!(c[0], 0.0, epsilon = 1e-9);
            assert_relative_eq!(c[1], -2.0, epsilon = 1e-9);
            assert_relative_eq!(c[2], 0.0, epsilon = 1e-9);
            assert_relative_eq!(c[3], 1.0, epsilon = 1e-9);
        }
        assert!(fit.residual_rms < 1e-9);
        for &(t, p) in buf.iter() {
            assert!((fit.position_at(t) - p).norm() < 1e-9);
        }
    }

    #[test]
    fn four_samples_interpolate_exactly() {
        let mut buf = TrajectoryBuffer::new(8);
        for (t, v) in [(0.0, 1.0), (0.5, -0.3), (1.0, 2.0), (1.7, 0.4)] {
            buf.push(t, Vector3::new(v, 2.0 * v, -v)).unwrap();
        }
        let fit = fit_trajectory(&buf).unwrap();
        assert!(fit.residual_rms < 1e-9, "rms {}", fit.residual_rms);
    }

    #[test]
    fn short_buffer_cannot_be_fitted() {
        let mut buf = TrajectoryBuffer::new(8);
        buf.push(0.0, Vector3::zeros()).unwrap();
        buf.push(1.0, Vector3::zeros()).unwrap();
        assert_eq!(
            fit_trajectory(&buf).unwrap_err(),
            FusionError::InsufficientSamples { got: 2 }
        );
    }

    #[test]
    fn noisy_linear_trajectory_velocity_is_in_band() {
        let sigma = 0.01;
        let true_v = 0.4;
        let mut errors = Vec::new();
        for seed in 0..30u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut buf = TrajectoryBuffer::new(32);
            for i in 0..32 {
                let t = i as f64 * 0.05;
                let noise = sigma * gauss(&mut rng);
                buf.push(t, Vector3::new(true_v * t + noise, 0.0, 0.0)).unwrap();
            }
            let fit = fit_trajectory(&buf).unwrap();
            errors.push(fit.velocity_at(buf.last_timestamp().unwrap()).x - true_v);
        }
        // cubic end-point velocity variance on 32 equispaced samples;
        // the 3-sigma band just needs to hold on average
        let mean_abs = errors.iter().map(|e| e.abs()).sum::<f64>() / errors.len() as f64;
        assert!(mean_abs < 0.15, "mean |velocity error| {mean_abs}");
    }

    #[test]
    fn buffer_bounds_and_monotonicity() {
        let mut buf = TrajectoryBuffer::new(4);
        for i in 0..10 {
            buf.push(i as f64, Vector3::zeros()).unwrap();
        }
        assert_eq!(buf.len(), 4);
        assert_eq!(buf.iter().next().unwrap().0, 6.0);
        assert_eq!(
            buf.push(3.0, Vector3::zeros()).unwrap_err(),
            FusionError::NonMonotonicTimestamp
        );
    }

    #[test]
    fn agreeing_measurement_registers_zero_error() {
        let mut buf = TrajectoryBuffer::new(8);
        for i in 0..6 {
            buf.push(i as f64 * 0.1, Vector3::new(i as f64, 0.0, 3.0)).unwrap();
        }
        let net = est(EstimateSource::Network, 0.3, 3.0, 0.0, 3.0);
        let before: Vec<_> = buf.iter().cloned().collect();
        let reg = register_network_measurement(&mut buf, &net, 0.05).unwrap();
        assert!(reg.error.norm() < 1e-12);
        let after: Vec<_> = buf.iter().cloned().collect();
        assert_eq!(before, after);
    }

    #[test]
    fn constant_offset_is_corrected_from_match_onward() {
        let offset = Vector3::new(0.1, 0.0, 0.0);
        let truth = |t: f64| Vector3::new(0.5 * t, 0.0, 4.0);
        let mut buf = TrajectoryBuffer::new(16);
        for i in 0..10 {
            let t = i as f64 * 0.1;
            buf.push(t, truth(t) + offset).unwrap();
        }
        let net = TargetEstimate {
            position: Point3::from_vector(truth(0.0)),
            depth: 4.0,
            timestamp: 0.0,
            source: EstimateSource::Network,
        };
        let reg = register_network_measurement(&mut buf, &net, 0.05).unwrap();
        assert!((reg.error + offset).norm() < 1e-9);
        assert_eq!(reg.matched_index, 0);
        for &(t, p) in buf.iter() {
            assert!((p - truth(t)).norm() < 1e-9, "entry at {t} not corrected");
        }
        // idempotence: a second identical registration changes nothing
        let before: Vec<_> = buf.iter().cloned().collect();
        let reg2 = register_network_measurement(&mut buf, &net, 0.05).unwrap();
        assert!(reg2.error.norm() < 1e-12);
        let after: Vec<_> = buf.iter().cloned().collect();
        assert_eq!(before, after);
    }

    #[test]
    fn stale_measurement_finds_no_frame() {
        let mut buf = TrajectoryBuffer::new(8);
        for i in 0..6 {
            buf.push(10.0 + i as f64 * 0.1, Vector3::zeros()).unwrap();
        }
        let net = est(EstimateSource::Network, 1.0, 0.0, 0.0, 1.0);
        assert!(matches!(
            register_network_measurement(&mut buf, &net, 0.05),
            Err(FusionError::NoMatchingFrame { .. })
        ));
        let mut empty = TrajectoryBuffer::new(8);
        assert_eq!(
            register_network_measurement(&mut empty, &net, 0.05).unwrap_err(),
            FusionError::EmptyBuffer
        );
    }

    #[test]
    fn fused_estimate_predicts_without_mutation() {
        let mut tracker = DepthFusionTracker::new(cfg(), 0.033).unwrap();
        assert_eq!(
            tracker.fused_estimate(0.0).unwrap_err(),
            FusionError::Uninitialized
        );
        tracker
            .observe(&est(EstimateSource::Network, 0.0, 0.0, 0.0, 5.0))
            .unwrap();
        for i in 1..=10 {
            let t = i as f64 * 0.1;
            tracker
                .observe(&est(EstimateSource::Pnp, t, 0.2 * t, 0.0, 5.0))
                .unwrap();
        }
        let t_last = tracker.state().unwrap().last_time;
        let at_now = tracker.fused_estimate(t_last).unwrap();
        assert!((at_now.position.to_vector() - tracker.state().unwrap().position).norm() < 1e-12);
        assert_eq!(at_now.source, EstimateSource::Fused);
        // velocity extrapolation
        let v = tracker.state().unwrap().velocity;
        let ahead = tracker.fused_estimate(t_last + 0.5).unwrap();
        let expected = tracker.state().unwrap().position + v * 0.5;
        assert!((ahead.position.to_vector() - expected).norm() < 1e-12);
        // covariance trace grows with horizon
        let c = cfg();
        let s = tracker.state().unwrap();
        let traces: Vec<f64> = [0.0, 0.5, 2.0]
            .iter()
            .map(|&h| predict(s, t_last + h, &c).unwrap().covariance.trace())
            .collect();
        assert!(traces[0] <= traces[1] && traces[1] <= traces[2]);
        // state unchanged by queries
        assert_eq!(tracker.state().unwrap().last_time, t_last);
    }

    fn gauss(rng: &mut ChaCha8Rng) -> f64 {
        let u1: f64 = rng.gen_range(1e-12..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}
