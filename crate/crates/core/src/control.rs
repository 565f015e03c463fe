//! Pure-pursuit steering and PID speed control for an Ackermann-steered
//! follower.
//!
//! Steering follows delta = atan(2 x L / (d^2 - d_exp^2)): positive
//! lateral offset (target right of the camera axis) gives positive
//! steering. As the depth approaches the standoff distance the formula
//! blows up toward 90 degrees, so the output saturates at `delta_max`.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ControlError {
    #[error("non-positive target depth {0}")]
    NonPositiveDepth(f64),
    #[error("non-positive dt {0}")]
    NonPositiveDt(f64),
    #[error("invalid controller config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone)]
pub struct ControllerConfig {
    /// Wheelbase, meters.
    pub wheelbase: f64,
    /// Desired following distance, meters.
    pub expected_distance: f64,
    /// Steering saturation, radians.
    pub delta_max: f64,
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Depth-error band around the standoff distance with zero speed.
    pub stop_radius: f64,
    pub speed_max: f64,
    /// Anti-windup clamp on the accumulated integral term.
    pub integral_clamp: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            wheelbase: 0.2,
            expected_distance: 1.0,
            delta_max: 30f64.to_radians(),
            kp: 1.0,
            ki: 0.3,
            kd: 0.5,
            stop_radius: 0.05,
            speed_max: 2.0,
            integral_clamp: 3.0,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ControlError> {
        if self.wheelbase <= 0.0 {
            return Err(ControlError::InvalidConfig("wheelbase must be > 0"));
        }
        if self.expected_distance <= 0.0 {
            return Err(ControlError::InvalidConfig("expected_distance must be > 0"));
        }
        if !(self.delta_max > 0.0 && self.delta_max < std::f64::consts::FRAC_PI_2) {
            return Err(ControlError::InvalidConfig("delta_max must lie in (0, pi/2)"));
        }
        if self.kp < 0.0 || self.ki < 0.0 || self.kd < 0.0 {
            return Err(ControlError::InvalidConfig("PID gains must be >= 0"));
        }
        if self.stop_radius <= 0.0 || self.speed_max <= 0.0 || self.integral_clamp <= 0.0 {
            return Err(ControlError::InvalidConfig(
                "stop_radius, speed_max, integral_clamp must be > 0",
            ));
        }
        Ok(())
    }
}

/// One control output: clamped steering and non-negative speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlCommand {
    pub steering: f64,
    pub speed: f64,
}

/// Pure-pursuit steering toward a target at lateral offset `x` and
/// depth `d`.
pub fn pure_pursuit_steer(x: f64, d: f64, cfg: &ControllerConfig) -> Result<f64, ControlError> {
    if d <= 0.0 {
        return Err(ControlError::NonPositiveDepth(d));
    }
    let denom = d * d - cfg.expected_distance * cfg.expected_distance;
    let delta = if denom.abs() < 1e-9 {
        // effective lookahead vanishes: saturate in the offset direction
        if x == 0.0 {
            0.0
        } else {
            x.signum() * cfg.delta_max
        }
    } else {
        (2.0 * x * cfg.wheelbase / denom).atan()
    };
    Ok(delta.clamp(-cfg.delta_max, cfg.delta_max))
}

/// PID state: integral accumulator plus previous error for the
/// derivative term.
#[derive(Debug, Clone, Default)]
pub struct PidMemory {
    integral: f64,
    prev_error: Option<f64>,
}

impl PidMemory {
    pub fn reset(&mut self) {
        self.integral = 0.0;
        self.prev_error = None;
    }
}

/// PID speed from the depth error (current depth minus the expected
/// distance). Zero whenever the target sits within `stop_radius` of the
/// standoff point; otherwise clamped to [0, speed_max].
pub fn pid_speed(
    depth_error: f64,
    dt: f64,
    mem: &mut PidMemory,
    cfg: &ControllerConfig,
) -> Result<f64, ControlError> {
    if dt <= 0.0 {
        return Err(ControlError::NonPositiveDt(dt));
    }
    if depth_error.abs() <= cfg.stop_radius {
        mem.prev_error = Some(depth_error);
        return Ok(0.0);
    }
    mem.integral = (mem.integral + depth_error * dt).clamp(-cfg.integral_clamp, cfg.integral_clamp);
    let derivative = match mem.prev_error {
        Some(prev) => (depth_error - prev) / dt,
        None => 0.0,
    };
    mem.prev_error = Some(depth_error);
    let raw = cfg.kp * depth_error + cfg.ki * mem.integral + cfg.kd * derivative;
    Ok(raw.clamp(0.0, cfg.speed_max))
}

/// Full control step from the target's camera-frame lateral offset and
/// depth.
pub fn control_command(
    lateral: f64,
    depth: f64,
    dt: f64,
    mem: &mut PidMemory,
    cfg: &ControllerConfig,
) -> Result<ControlCommand, ControlError> {
    let steering = pure_pursuit_steer(lateral, depth, cfg)?;
    let speed = pid_speed(depth - cfg.expected_distance, dt, mem, cfg)?;
    Ok(ControlCommand { steering, speed })
}
