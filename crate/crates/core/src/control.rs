//! Leader-follower formation law, disturbance observer and Lyapunov monitor.
//!
//! All stacked vectors are agent-major: entries `2i, 2i+1` belong to agent `i`.
//!
//! Per agent, with `k1, k2 > 0`:
//! ```text
//! leader:   ū₁ = −k1 (x̄₁ − G₁ξ)                 − k2 R₁ δ̂₁
//! follower: ū_i = −k1 Σ_j a_ij (G_i − G_j) ξ_e   − k2 R_i δ̂_i
//! observer: δ̂̇_i = k2 R_iᵀ (x̄_i − G_iξ)
//! ```
//! where `ξ_e = Ḡ⁺x̄ − ξ`.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::curve::{CurveCoefficients, Point, StackedBasis};
use crate::dynamics::{input_matrix, OffsetParameter};
use crate::error::{Error, Result};
use crate::topology::{DirectedTopology, LEADER};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gains {
    pub k1: f64,
    pub k2: f64,
}

impl Gains {
    pub fn new(k1: f64, k2: f64) -> Result<Self> {
        if !(k1 > 0.0 && k1.is_finite()) || !(k2 > 0.0 && k2.is_finite()) {
            return Err(Error::invalid(format!(
                "gains must be positive, got k1 = {k1}, k2 = {k2}"
            )));
        }
        Ok(Self { k1, k2 })
    }
}

/// Which expression the simulator uses for the follower formation term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerForm {
    /// `−k1 Σ a_ij (G_i − G_j) ξ_e` with `ξ_e` from the pseudoinverse.
    #[default]
    CoefficientError,
    /// `−k1 Σ a_ij (x_e,i − x_e,j)`; equal to the above when `n ≤ H`.
    NeighborDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Leader,
    Follower,
}

impl Role {
    pub fn of(agent: usize) -> Self {
        if agent == LEADER {
            Role::Leader
        } else {
            Role::Follower
        }
    }
}

/// Position errors `x̄_e = x̄ − Ḡξ` and coefficient errors `ξ_e = Ḡ⁺x̄ − ξ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FormationErrors {
    pub x_e: DVector<f64>,
    pub xi_e: DVector<f64>,
}

impl FormationErrors {
    pub fn agent(&self, i: usize) -> Point {
        Point::new(self.x_e[2 * i], self.x_e[2 * i + 1])
    }
}

pub fn compute_errors(
    x_bar: &DVector<f64>,
    g_bar: &StackedBasis,
    g_pinv: &DMatrix<f64>,
    xi: &CurveCoefficients,
) -> Result<FormationErrors> {
    let g = g_bar.matrix();
    if x_bar.len() != g.nrows() || xi.len() != g.ncols() || g_pinv.shape() != (g.ncols(), g.nrows())
    {
        return Err(Error::invalid(format!(
            "dimension mismatch: x̄ {}, Ḡ {:?}, Ḡ⁺ {:?}, ξ {}",
            x_bar.len(),
            g.shape(),
            g_pinv.shape(),
            xi.len()
        )));
    }
    let x_e = x_bar - g * xi.as_vector();
    let xi_e = g_pinv * x_bar - xi.as_vector();
    Ok(FormationErrors { x_e, xi_e })
}

fn agent_slice(v: &DVector<f64>, i: usize) -> Vector2<f64> {
    Vector2::new(v[2 * i], v[2 * i + 1])
}

/// Linearized control `ū_i` of one agent in the coefficient-error form.
#[allow(clippy::too_many_arguments)]
pub fn agent_control(
    agent: usize,
    topology: &DirectedTopology,
    x_bar_i: Point,
    g_bar: &StackedBasis,
    xi: &CurveCoefficients,
    xi_e: &DVector<f64>,
    delta_hat_i: Vector2<f64>,
    r_i: &Matrix2<f64>,
    gains: &Gains,
) -> Result<Vector2<f64>> {
    let g = g_bar.matrix();
    let n = topology.agents();
    if agent >= n || g.nrows() != 2 * n || xi.len() != g.ncols() || xi_e.len() != g.ncols() {
        return Err(Error::invalid("agent_control: dimension mismatch"));
    }
    let compensation = r_i * delta_hat_i * gains.k2;
    let formation = match Role::of(agent) {
        Role::Leader => {
            let target = g.rows(2 * agent, 2) * xi.as_vector();
            -(x_bar_i - Vector2::new(target[0], target[1])) * gains.k1
        }
        Role::Follower => {
            let gi = g.rows(2 * agent, 2);
            let mut acc = Vector2::zeros();
            let mut any = false;
            for (j, a) in topology.neighbors(agent) {
                any = true;
                let diff = (gi - g.rows(2 * j, 2)) * xi_e;
                acc += Vector2::new(diff[0], diff[1]) * a;
            }
            if !any {
                return Err(Error::Configuration(format!(
                    "follower {} has no neighbors",
                    agent + 1
                )));
            }
            -acc * gains.k1
        }
    };
    Ok(formation - compensation)
}

/// Linearized control `ū_i` in the neighbor-difference form, using only the
/// position errors of the agent and its in-neighbors.
pub fn agent_control_local(
    agent: usize,
    topology: &DirectedTopology,
    x_e: &DVector<f64>,
    delta_hat_i: Vector2<f64>,
    r_i: &Matrix2<f64>,
    gains: &Gains,
) -> Result<Vector2<f64>> {
    let n = topology.agents();
    if agent >= n || x_e.len() != 2 * n {
        return Err(Error::invalid("agent_control_local: dimension mismatch"));
    }
    let own = agent_slice(x_e, agent);
    let formation = match Role::of(agent) {
        Role::Leader => -own * gains.k1,
        Role::Follower => {
            let mut acc = Vector2::zeros();
            let mut any = false;
            for (j, a) in topology.neighbors(agent) {
                any = true;
                acc += (own - agent_slice(x_e, j)) * a;
            }
            if !any {
                return Err(Error::Configuration(format!(
                    "follower {} has no neighbors",
                    agent + 1
                )));
            }
            -acc * gains.k1
        }
    };
    Ok(formation - r_i * delta_hat_i * gains.k2)
}

/// Block-diagonal `R = diag(R_i(θ_i))`.
pub fn block_input_matrix(thetas: &[f64], ell: OffsetParameter) -> DMatrix<f64> {
    let n = thetas.len();
    let mut r = DMatrix::zeros(2 * n, 2 * n);
    for (i, &th) in thetas.iter().enumerate() {
        r.fixed_view_mut::<2, 2>(2 * i, 2 * i)
            .copy_from(&input_matrix(th, ell));
    }
    r
}

/// Stacked control `ū = −k1 (L̄Ḡξ_e + Λ̄x̄_e) − k2 R δ̂`.
#[allow(clippy::too_many_arguments)]
pub fn stacked_control(
    x_e: &DVector<f64>,
    xi_e: &DVector<f64>,
    delta_hat: &DVector<f64>,
    l_bar: &DMatrix<f64>,
    lambda_bar: &DMatrix<f64>,
    r_block: &DMatrix<f64>,
    g_bar: &StackedBasis,
    gains: &Gains,
) -> Result<DVector<f64>> {
    let g = g_bar.matrix();
    let m = g.nrows();
    let ok = x_e.len() == m
        && delta_hat.len() == m
        && xi_e.len() == g.ncols()
        && l_bar.shape() == (m, m)
        && lambda_bar.shape() == (m, m)
        && r_block.shape() == (m, m);
    if !ok {
        return Err(Error::invalid("stacked_control: dimension mismatch"));
    }
    Ok(-(l_bar * (g * xi_e) + lambda_bar * x_e) * gains.k1 - r_block * delta_hat * gains.k2)
}

/// Closed-loop error dynamics `−k1 (L̄Ḡξ_e + Λ̄x̄_e) − k2 R δ̃`.
#[allow(clippy::too_many_arguments)]
pub fn error_dynamics(
    x_e: &DVector<f64>,
    xi_e: &DVector<f64>,
    delta_tilde: &DVector<f64>,
    l_bar: &DMatrix<f64>,
    lambda_bar: &DMatrix<f64>,
    r_block: &DMatrix<f64>,
    g_bar: &StackedBasis,
    gains: &Gains,
) -> Result<DVector<f64>> {
    stacked_control(
        x_e,
        xi_e,
        delta_tilde,
        l_bar,
        lambda_bar,
        r_block,
        g_bar,
        gains,
    )
}

/// `δ̂̇_i = k2 R_iᵀ (x̄_i − G_iξ)`.
pub fn observer_rate(r_i: &Matrix2<f64>, x_bar_i: Point, target_i: Point, k2: f64) -> Vector2<f64> {
    r_i.transpose() * (x_bar_i - target_i) * k2
}

/// One explicit Euler step of the disturbance observer.
pub fn observer_update(
    delta_hat_i: Vector2<f64>,
    r_i: &Matrix2<f64>,
    x_bar_i: Point,
    target_i: Point,
    k2: f64,
    dt: f64,
) -> Result<Vector2<f64>> {
    if dt.is_nan() || dt <= 0.0 {
        return Err(Error::invalid(format!(
            "time step must be positive, got {dt}"
        )));
    }
    Ok(delta_hat_i + observer_rate(r_i, x_bar_i, target_i, k2) * dt)
}

/// `δ̃ = δ̂ − d / k2` (stacked).
pub fn disturbance_error(delta_hat: &DVector<f64>, d: &DVector<f64>, k2: f64) -> DVector<f64> {
    delta_hat - d / k2
}

fn weighted_norm(v: &DVector<f64>, p_diag: &DVector<f64>) -> f64 {
    v.iter()
        .enumerate()
        .map(|(k, x)| p_diag[k / 2] * x * x)
        .sum()
}

/// `V = x̄_eᵀ(P⊗I₂)x̄_e + δ̃ᵀ(P⊗I₂)δ̃` for diagonal `P = diag(p_diag)`.
pub fn lyapunov_value(
    x_e: &DVector<f64>,
    delta_tilde: &DVector<f64>,
    p_diag: &DVector<f64>,
) -> f64 {
    weighted_norm(x_e, p_diag) + weighted_norm(delta_tilde, p_diag)
}

/// Analytic `V̇ = −k1 x̄_eᵀ(Q⊗I₂)x̄_e`.
pub fn lyapunov_rate(x_e: &DVector<f64>, q_matrix: &DMatrix<f64>, k1: f64) -> f64 {
    let n = q_matrix.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            let q = q_matrix[(i, j)];
            if q != 0.0 {
                acc += q * (x_e[2 * i] * x_e[2 * j] + x_e[2 * i + 1] * x_e[2 * j + 1]);
            }
        }
    }
    -k1 * acc
}
