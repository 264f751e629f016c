//! Unicycle kinematics with a constant input disturbance and the
//! virtual-point change of coordinates.
//!
//! ```text
//! ẋ = cos θ (v + d₁),  ẏ = sin θ (v + d₁),  θ̇ = ω + d₂
//! x̄ = x + ℓ cos θ,     ȳ = y + ℓ sin θ
//! ```
//! so that `d/dt [x̄, ȳ] = R(θ)(u + d)` with `R(θ) = [[cos θ, −ℓ sin θ], [sin θ, ℓ cos θ]]`.

use std::f64::consts::TAU;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::curve::Point;
use crate::error::{Error, Result};

/// Pose of one agent. `theta` is kept unwrapped.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl AgentState {
    pub const fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }

    /// Heading reduced to `[0, 2π)`, for reporting only.
    pub fn wrapped_theta(&self) -> f64 {
        wrap_angle(self.theta)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }
}

/// Reduces an angle to `[0, 2π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let w = theta.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs.
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Constant input disturbance `d = [d₁, d₂]` (m/s, rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Disturbance {
    pub d1: f64,
    pub d2: f64,
}

impl Disturbance {
    pub const fn new(d1: f64, d2: f64) -> Self {
        Self { d1, d2 }
    }

    pub fn as_vector(&self) -> Vector2<f64> {
        Vector2::new(self.d1, self.d2)
    }
}

/// Nonzero offset `ℓ` of the virtual control point, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffsetParameter(f64);

impl OffsetParameter {
    pub fn new(ell: f64) -> Result<Self> {
        if ell == 0.0 || !ell.is_finite() {
            return Err(Error::invalid(format!(
                "virtual point offset must be finite and nonzero, got {ell}"
            )));
        }
        Ok(Self(ell))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

/// Unicycle input `u = [v, ω]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlInput {
    pub v: f64,
    pub omega: f64,
}

impl ControlInput {
    pub const fn new(v: f64, omega: f64) -> Self {
        Self { v, omega }
    }

    pub fn as_vector(&self) -> Vector2<f64> {
        Vector2::new(self.v, self.omega)
    }

    /// Clamps the linear velocity to `[−limit, limit]`.
    pub fn saturate(self, limit: Option<f64>) -> Self {
        match limit {
            Some(l) => Self {
                v: self.v.clamp(-l, l),
                omega: self.omega,
            },
            None => self,
        }
    }
}

/// Fixed-step integration scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    #[default]
    Euler,
    Rk4,
}

pub fn virtual_point(state: &AgentState, ell: OffsetParameter) -> Point {
    let (s, c) = state.theta.sin_cos();
    Point::new(state.x + ell.0 * c, state.y + ell.0 * s)
}

/// `R(θ)`; its determinant is `ℓ`.
pub fn input_matrix(theta: f64, ell: OffsetParameter) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    let l = ell.0;
    Matrix2::new(c, -l * s, s, l * c)
}

/// `u = R(θ)⁻¹ ū`.
pub fn inverse_input_map(theta: f64, ell: OffsetParameter, u_bar: Vector2<f64>) -> ControlInput {
    let (s, c) = theta.sin_cos();
    let l = ell.0;
    ControlInput {
        v: c * u_bar.x + s * u_bar.y,
        omega: (-s * u_bar.x + c * u_bar.y) / l,
    }
}

/// Pose derivative for the combined input `w = u + d`.
fn unicycle_rate(theta: f64, w: Vector2<f64>) -> [f64; 3] {
    let (s, c) = theta.sin_cos();
    [c * w.x, s * w.x, w.y]
}

/// Advances one agent by `dt` with `u` and `d` held constant over the step.
pub fn step_state(
    state: &AgentState,
    u: ControlInput,
    d: Disturbance,
    dt: f64,
    integrator: Integrator,
) -> Result<AgentState> {
    if dt.is_nan() || dt <= 0.0 {
        return Err(Error::invalid(format!(
            "time step must be positive, got {dt}"
        )));
    }
    let w = u.as_vector() + d.as_vector();
    let rate = |theta: f64| unicycle_rate(theta, w);
    let out = match integrator {
        Integrator::Euler => {
            let k = rate(state.theta);
            AgentState::new(
                state.x + dt * k[0],
                state.y + dt * k[1],
                state.theta + dt * k[2],
            )
        }
        Integrator::Rk4 => {
            // θ evolves independently of position, so each stage only needs
            // the stage heading.
            let k1 = rate(state.theta);
            let k2 = rate(state.theta + 0.5 * dt * k1[2]);
            let k3 = rate(state.theta + 0.5 * dt * k2[2]);
            let k4 = rate(state.theta + dt * k3[2]);
            let comb = |i: usize| (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) * dt / 6.0;
            AgentState::new(state.x + comb(0), state.y + comb(1), state.theta + comb(2))
        }
    };
    Ok(out)
}
