//! Scenario validation, closed-loop integration with scheduled curve switches,
//! trajectory logging and parameter sweeps.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::control::{
    agent_control, agent_control_local, compute_errors, lyapunov_value, observer_rate,
    observer_update, ControllerForm, FormationErrors, Gains,
};
use crate::curve::{
    assign_parameters_with, pseudoinverse, stack_basis, validate_assumptions, ParameterSpacing,
    ParametricCurve, Point, StackedBasis,
};
use crate::dynamics::{
    input_matrix, inverse_input_map, step_state, virtual_point, AgentState, ControlInput,
    Disturbance, Integrator, OffsetParameter,
};
use crate::error::{Error, Result, ValidationIssue};
use crate::topology::{
    build_laplacian, has_rooted_spanning_tree, leader_selector, theorem1_matrices,
    DirectedTopology, LaplacianMatrix, TheoremOneMatrices, LEADER,
};

/// Fraction of the bounding-box diagonal used as the settling threshold.
pub const SETTLING_FRACTION: f64 = 0.01;
/// Default inflation of the curve bounding box for random starts.
pub const DEFAULT_BOX_INFLATION: f64 = 0.25;

const BOX_SAMPLES: usize = 512;

/// A curve that becomes the target at `start` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSegment {
    pub start: f64,
    pub curve: ParametricCurve,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialStates {
    Explicit(Vec<AgentState>),
    /// Positions uniform in the box, headings uniform in `[0, 2π)`.
    RandomBox {
        min: Point,
        max: Point,
    },
    /// Like `RandomBox` over the first curve's bounding box scaled by
    /// `1 + inflation` about its center.
    RandomAroundCurve {
        inflation: f64,
    },
    /// Virtual points exactly on their targets, heading zero.
    OnTarget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub topology: DirectedTopology,
    pub gains: Gains,
    pub ell: f64,
    pub disturbances: Vec<Disturbance>,
    pub curve_schedule: Vec<CurveSegment>,
    pub spacing: ParameterSpacing,
    pub dt: f64,
    pub duration: f64,
    pub initial: InitialStates,
    /// Initial `δ̂`; zero when absent.
    pub observer_init: Option<Vec<Vector2<f64>>>,
    pub integrator: Integrator,
    /// Symmetric clamp on the linear velocity `v`.
    pub saturation: Option<f64>,
    pub seed: u64,
    pub form: ControllerForm,
    /// Agent records are kept every `log_stride` steps (and at the last step).
    pub log_stride: usize,
}

impl Scenario {
    /// Single-curve scenario with unit gains, `ℓ = 0.01`, no disturbance,
    /// Euler at 1 ms for 100 s and random starts around the curve.
    pub fn new(topology: DirectedTopology, curve: ParametricCurve) -> Self {
        let n = topology.agents();
        Self {
            topology,
            gains: Gains { k1: 1.0, k2: 1.0 },
            ell: 0.01,
            disturbances: vec![Disturbance::default(); n],
            curve_schedule: vec![CurveSegment { start: 0.0, curve }],
            spacing: ParameterSpacing::Uniform,
            dt: 1e-3,
            duration: 100.0,
            initial: InitialStates::RandomAroundCurve {
                inflation: DEFAULT_BOX_INFLATION,
            },
            observer_init: None,
            integrator: Integrator::Euler,
            saturation: None,
            seed: 0,
            form: ControllerForm::CoefficientError,
            log_stride: 1,
        }
    }

    pub fn agents(&self) -> usize {
        self.topology.agents()
    }

    /// Index of the last step, `floor(duration / dt)`.
    pub fn final_step(&self) -> usize {
        (self.duration / self.dt + 1e-9).floor() as usize
    }
}

/// Per-curve matrices precomputed once per run.
#[derive(Debug, Clone)]
pub struct PreparedSegment {
    pub start: f64,
    pub curve: ParametricCurve,
    pub g_bar: StackedBasis,
    pub g_pinv: DMatrix<f64>,
    /// `G_i ξ` for every agent.
    pub targets: Vec<Point>,
    pub settling_threshold: f64,
}

impl PreparedSegment {
    fn prepare(segment: &CurveSegment, s_values: &[f64]) -> Result<Self> {
        let g_bar = stack_basis(&segment.curve.family, s_values)?;
        let g_pinv = pseudoinverse(&g_bar)?;
        let stacked = g_bar.matrix() * segment.curve.coefficients.as_vector();
        let targets = (0..s_values.len())
            .map(|i| Point::new(stacked[2 * i], stacked[2 * i + 1]))
            .collect();
        let (lo, hi) = segment.curve.bounding_box(BOX_SAMPLES);
        Ok(Self {
            start: segment.start,
            curve: segment.curve.clone(),
            g_bar,
            g_pinv,
            targets,
            settling_threshold: SETTLING_FRACTION * (hi - lo).norm(),
        })
    }
}

/// A scenario that passed every check, with its derived matrices.
#[derive(Debug, Clone)]
pub struct ValidatedScenario {
    scenario: Scenario,
    ell: OffsetParameter,
    s_values: Vec<f64>,
    segments: Vec<PreparedSegment>,
    laplacian: LaplacianMatrix,
    lyapunov: TheoremOneMatrices,
}

impl ValidatedScenario {
    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn ell(&self) -> OffsetParameter {
        self.ell
    }

    pub fn s_values(&self) -> &[f64] {
        &self.s_values
    }

    pub fn segments(&self) -> &[PreparedSegment] {
        &self.segments
    }

    pub fn laplacian(&self) -> &LaplacianMatrix {
        &self.laplacian
    }

    /// Theorem-1 matrices of `L + Λ`.
    pub fn lyapunov(&self) -> &TheoremOneMatrices {
        &self.lyapunov
    }

    fn segment_at(&self, t: f64) -> usize {
        let slack = 1e-6 * self.scenario.dt;
        self.segments
            .iter()
            .rposition(|s| s.start <= t + slack)
            .unwrap_or(0)
    }
}

fn positive(x: f64) -> bool {
    x > 0.0 && x.is_finite()
}

/// Checks everything a run depends on and reports all failures together.
pub fn validate_scenario(scenario: &Scenario) -> Result<ValidatedScenario> {
    let mut issues = Vec::new();
    let mut fail = |check: &'static str, msg: String| issues.push(ValidationIssue::new(check, msg));
    let n = scenario.agents();

    if n == 0 {
        fail("agents", "scenario has no agents".into());
    }
    if !positive(scenario.dt) {
        fail(
            "dt",
            format!("time step must be positive, got {}", scenario.dt),
        );
    }
    if !positive(scenario.duration) {
        fail(
            "duration",
            format!("duration must be positive, got {}", scenario.duration),
        );
    }
    if !positive(scenario.dt) || !positive(scenario.duration) {
    } else if scenario.dt > scenario.duration {
        fail(
            "dt",
            format!(
                "time step {} exceeds duration {}",
                scenario.dt, scenario.duration
            ),
        );
    }
    let ell = OffsetParameter::new(scenario.ell);
    if ell.is_err() {
        fail(
            "ell",
            format!("offset must be finite and nonzero, got {}", scenario.ell),
        );
    }
    if !positive(scenario.gains.k1) {
        fail(
            "gains",
            format!("k1 must be positive, got {}", scenario.gains.k1),
        );
    }
    if !positive(scenario.gains.k2) {
        fail(
            "gains",
            format!("k2 must be positive, got {}", scenario.gains.k2),
        );
    }
    if scenario.log_stride == 0 {
        fail("log_stride", "log stride must be at least 1".into());
    }
    if let Some(limit) = scenario.saturation {
        if !positive(limit) {
            fail(
                "saturation",
                format!("saturation limit must be positive, got {limit}"),
            );
        }
    }

    if scenario.disturbances.len() != n {
        fail(
            "disturbance",
            format!(
                "{} disturbances for {n} agents",
                scenario.disturbances.len()
            ),
        );
    }
    if scenario
        .disturbances
        .iter()
        .any(|d| !d.d1.is_finite() || !d.d2.is_finite())
    {
        fail("disturbance", "disturbances must be finite".into());
    }
    if let Some(init) = &scenario.observer_init {
        if init.len() != n {
            fail(
                "observer",
                format!("{} initial estimates for {n} agents", init.len()),
            );
        }
        if init.iter().any(|v| !v.iter().all(|x| x.is_finite())) {
            fail("observer", "initial estimates must be finite".into());
        }
    }
    match &scenario.initial {
        InitialStates::Explicit(states) => {
            if states.len() != n {
                fail(
                    "initial",
                    format!("{} initial states for {n} agents", states.len()),
                );
            }
            if let Some(k) = states.iter().position(|s| !s.is_finite()) {
                fail(
                    "initial",
                    format!("initial state of agent {} is not finite", k + 1),
                );
            }
        }
        InitialStates::RandomBox { min, max } => {
            if !(min.iter().chain(max.iter()).all(|v| v.is_finite())
                && min.x <= max.x
                && min.y <= max.y)
            {
                fail("initial", format!("invalid start box {min:?} .. {max:?}"));
            }
        }
        InitialStates::RandomAroundCurve { inflation } => {
            if !(*inflation >= 0.0 && inflation.is_finite()) {
                fail(
                    "initial",
                    format!("box inflation must be nonnegative, got {inflation}"),
                );
            }
        }
        InitialStates::OnTarget => {}
    }

    // Topology
    if n > 0 {
        let leader_in: Vec<usize> = scenario
            .topology
            .neighbors(LEADER)
            .map(|(j, _)| j + 1)
            .collect();
        if !leader_in.is_empty() {
            fail(
                "topology",
                format!("leader (agent 1) must not receive from other agents, has in-edges from {leader_in:?}"),
            );
        }
        if !has_rooted_spanning_tree(&scenario.topology, LEADER) {
            fail("topology", "no rooted spanning tree at agent 1".into());
        }
    }

    // Curve schedule
    let schedule = &scenario.curve_schedule;
    if schedule.is_empty() {
        fail("curve", "curve schedule is empty".into());
    } else if schedule[0].start != 0.0 {
        fail(
            "curve",
            format!(
                "first curve must start at 0, starts at {}",
                schedule[0].start
            ),
        );
    }
    for w in schedule.windows(2) {
        if w[1].start.is_nan() || w[1].start <= w[0].start {
            fail(
                "curve",
                format!(
                    "curve start times must increase strictly ({} then {})",
                    w[0].start, w[1].start
                ),
            );
        }
    }
    for seg in schedule.iter().skip(1) {
        if positive(scenario.duration) && seg.start >= scenario.duration {
            fail(
                "curve",
                format!(
                    "curve starting at {} lies beyond the duration {}",
                    seg.start, scenario.duration
                ),
            );
        }
    }

    let mut segments = Vec::new();
    let s_values = if n > 0 {
        assign_parameters_with(n, scenario.spacing).unwrap_or_default()
    } else {
        Vec::new()
    };
    if n > 0 {
        for (k, seg) in schedule.iter().enumerate() {
            let family = seg.curve.family;
            let h = family.basis_count();
            let g_bar = match stack_basis(&family, &s_values) {
                Ok(g) => g,
                Err(e) => {
                    fail("curve", format!("curve {}: {e}", k + 1));
                    continue;
                }
            };
            let report = validate_assumptions(&g_bar, n, h);
            if !report.agents_within_basis {
                fail(
                    "assumption-2",
                    format!("curve {} ({family}): n = {n} exceeds H = {h}", k + 1),
                );
            }
            if !report.full_rank {
                fail(
                    "assumption-1",
                    format!(
                        "curve {} ({family}): rank {} of stacked basis, expected {} (smallest singular value {:.3e})",
                        k + 1,
                        report.rank,
                        report.expected_rank,
                        report.smallest_singular_value
                    ),
                );
            }
            if report.passed() {
                match PreparedSegment::prepare(seg, &s_values) {
                    Ok(p) => segments.push(p),
                    Err(e) => fail("curve", format!("curve {}: {e}", k + 1)),
                }
            }
        }
    }

    let laplacian = build_laplacian(&scenario.topology);
    let lyapunov = if n > 0 {
        let lambda = leader_selector(n);
        match theorem1_matrices(&laplacian, &lambda.diagonal()) {
            Ok(t) => Some(t),
            Err(e) => {
                fail("topology", format!("Lyapunov matrices unavailable: {e}"));
                None
            }
        }
    } else {
        None
    };

    if !issues.is_empty() {
        return Err(Error::Validation(issues));
    }
    Ok(ValidatedScenario {
        scenario: scenario.clone(),
        ell: ell.expect("checked above"),
        s_values,
        segments,
        laplacian,
        lyapunov: lyapunov.expect("checked above"),
    })
}

/// Logged values of one agent at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentRecord {
    pub x: f64,
    pub y: f64,
    pub theta_wrapped: f64,
    pub xbar: f64,
    pub ybar: f64,
    pub v: f64,
    pub omega: f64,
    pub dhat1: f64,
    pub dhat2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub agents: Vec<AgentRecord>,
}

/// Scalars logged every step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRecord {
    pub t: f64,
    pub err_norm: f64,
    pub lyapunov: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub completed: bool,
    pub steps: usize,
    pub initial_error_norm: f64,
    pub terminal_error_norm: f64,
    /// Per curve segment: time after which `‖x̄_e‖` stays below the threshold.
    pub settling_times: Vec<Option<f64>>,
    pub settling_thresholds: Vec<f64>,
    pub terminal_theta: Vec<f64>,
    /// `max_i ‖k2 δ̂_i − d_i‖` at the last step.
    pub terminal_disturbance_error: f64,
    /// `max_i ‖x̄_i − G_i ξ‖` at the last step.
    pub terminal_max_agent_error: f64,
    /// Largest `V(t_{k+1}) − V(t_k)` over steps that do not cross a switch.
    pub lyapunov_max_increase: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub agents: usize,
    pub dt: f64,
    pub log_stride: usize,
    pub records: Vec<StepRecord>,
    pub metrics: Vec<MetricRecord>,
    /// Step indices at which a new curve became active.
    pub switch_steps: Vec<usize>,
    /// Curve segment active at each metric step.
    pub segment_of_step: Vec<usize>,
    pub final_states: Vec<AgentState>,
    pub final_delta_hat: Vec<Vector2<f64>>,
    pub summary: RunSummary,
}

impl TrajectoryLog {
    pub fn last_record(&self) -> Option<&StepRecord> {
        self.records.last()
    }

    /// Terminal virtual points.
    pub fn final_virtual_points(&self) -> Vec<Point> {
        self.last_record()
            .map(|r| {
                r.agents
                    .iter()
                    .map(|a| Point::new(a.xbar, a.ybar))
                    .collect()
            })
            .unwrap_or_default()
    }
}

/// Closed-loop evaluation at one state.
struct Evaluation {
    x_bar: Vec<Point>,
    errors: FormationErrors,
    controls: Vec<ControlInput>,
}

/// Pose rates `(ẋ, ẏ, θ̇)` and observer rates per agent.
type StateRate = (Vec<[f64; 3]>, Vec<Vector2<f64>>);

struct Runner<'a> {
    v: &'a ValidatedScenario,
    d_stack: DVector<f64>,
}

impl<'a> Runner<'a> {
    fn new(v: &'a ValidatedScenario) -> Self {
        let d = &v.scenario.disturbances;
        let d_stack = DVector::from_fn(2 * d.len(), |k, _| {
            if k % 2 == 0 {
                d[k / 2].d1
            } else {
                d[k / 2].d2
            }
        });
        Self { v, d_stack }
    }

    fn evaluate(
        &self,
        seg: &PreparedSegment,
        states: &[AgentState],
        delta_hat: &[Vector2<f64>],
    ) -> Result<Evaluation> {
        let sc = &self.v.scenario;
        let ell = self.v.ell;
        let x_bar: Vec<Point> = states.iter().map(|s| virtual_point(s, ell)).collect();
        let stacked =
            DVector::from_iterator(2 * x_bar.len(), x_bar.iter().flat_map(|p| [p.x, p.y]));
        let errors = compute_errors(&stacked, &seg.g_bar, &seg.g_pinv, &seg.curve.coefficients)?;
        let controls = (0..states.len())
            .map(|i| {
                let r = input_matrix(states[i].theta, ell);
                let u_bar = match sc.form {
                    ControllerForm::CoefficientError => agent_control(
                        i,
                        &sc.topology,
                        x_bar[i],
                        &seg.g_bar,
                        &seg.curve.coefficients,
                        &errors.xi_e,
                        delta_hat[i],
                        &r,
                        &sc.gains,
                    )?,
                    ControllerForm::NeighborDifference => agent_control_local(
                        i,
                        &sc.topology,
                        &errors.x_e,
                        delta_hat[i],
                        &r,
                        &sc.gains,
                    )?,
                };
                Ok(inverse_input_map(states[i].theta, ell, u_bar).saturate(sc.saturation))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Evaluation {
            x_bar,
            errors,
            controls,
        })
    }

    fn lyapunov(&self, x_e: &DVector<f64>, delta_hat: &[Vector2<f64>]) -> f64 {
        let k2 = self.v.scenario.gains.k2;
        let tilde = DVector::from_fn(2 * delta_hat.len(), |k, _| {
            delta_hat[k / 2][k % 2] - self.d_stack[k] / k2
        });
        lyapunov_value(x_e, &tilde, &self.v.lyapunov.p_diag)
    }

    fn euler_step(
        &self,
        seg: &PreparedSegment,
        eval: &Evaluation,
        states: &mut [AgentState],
        delta_hat: &mut [Vector2<f64>],
    ) -> Result<()> {
        let sc = &self.v.scenario;
        for i in 0..states.len() {
            let r = input_matrix(states[i].theta, self.v.ell);
            delta_hat[i] = observer_update(
                delta_hat[i],
                &r,
                eval.x_bar[i],
                seg.targets[i],
                sc.gains.k2,
                sc.dt,
            )?;
            states[i] = step_state(
                &states[i],
                eval.controls[i],
                sc.disturbances[i],
                sc.dt,
                Integrator::Euler,
            )?;
        }
        Ok(())
    }

    /// Time derivative of the coupled pose/observer state.
    fn rate(
        &self,
        seg: &PreparedSegment,
        states: &[AgentState],
        delta_hat: &[Vector2<f64>],
    ) -> Result<StateRate> {
        let sc = &self.v.scenario;
        let eval = self.evaluate(seg, states, delta_hat)?;
        let mut pose = Vec::with_capacity(states.len());
        let mut obs = Vec::with_capacity(states.len());
        for (i, s) in states.iter().enumerate() {
            let w = eval.controls[i].as_vector() + sc.disturbances[i].as_vector();
            let (sn, cs) = s.theta.sin_cos();
            pose.push([cs * w.x, sn * w.x, w.y]);
            let r = input_matrix(s.theta, self.v.ell);
            obs.push(observer_rate(
                &r,
                eval.x_bar[i],
                seg.targets[i],
                sc.gains.k2,
            ));
        }
        Ok((pose, obs))
    }

    fn rk4_step(
        &self,
        seg: &PreparedSegment,
        states: &mut [AgentState],
        delta_hat: &mut [Vector2<f64>],
    ) -> Result<()> {
        let dt = self.v.scenario.dt;
        let shifted = |k: &(Vec<[f64; 3]>, Vec<Vector2<f64>>), h: f64| {
            let s: Vec<AgentState> = states
                .iter()
                .zip(&k.0)
                .map(|(s, r)| AgentState::new(s.x + h * r[0], s.y + h * r[1], s.theta + h * r[2]))
                .collect();
            let d: Vec<Vector2<f64>> = delta_hat.iter().zip(&k.1).map(|(d, r)| d + r * h).collect();
            (s, d)
        };
        let k1 = self.rate(seg, states, delta_hat)?;
        let (s2, d2) = shifted(&k1, 0.5 * dt);
        let k2 = self.rate(seg, &s2, &d2)?;
        let (s3, d3) = shifted(&k2, 0.5 * dt);
        let k3 = self.rate(seg, &s3, &d3)?;
        let (s4, d4) = shifted(&k3, dt);
        let k4 = self.rate(seg, &s4, &d4)?;
        for i in 0..states.len() {
            let c = |m: usize| {
                (k1.0[i][m] + 2.0 * k2.0[i][m] + 2.0 * k3.0[i][m] + k4.0[i][m]) * dt / 6.0
            };
            states[i] = AgentState::new(
                states[i].x + c(0),
                states[i].y + c(1),
                states[i].theta + c(2),
            );
            delta_hat[i] += (k1.1[i] + k2.1[i] * 2.0 + k3.1[i] * 2.0 + k4.1[i]) * (dt / 6.0);
        }
        Ok(())
    }
}

fn initial_states(v: &ValidatedScenario) -> Vec<AgentState> {
    let sc = &v.scenario;
    let n = sc.agents();
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let mut draw = |lo: Point, hi: Point| -> Vec<AgentState> {
        (0..n)
            .map(|_| {
                let x = lo.x + (hi.x - lo.x) * rng.random::<f64>();
                let y = lo.y + (hi.y - lo.y) * rng.random::<f64>();
                let theta = TAU * rng.random::<f64>();
                AgentState::new(x, y, theta)
            })
            .collect()
    };
    match &sc.initial {
        InitialStates::Explicit(states) => states.clone(),
        InitialStates::RandomBox { min, max } => draw(*min, *max),
        InitialStates::RandomAroundCurve { inflation } => {
            let (lo, hi) = v.segments[0].curve.bounding_box(BOX_SAMPLES);
            let center = (lo + hi) * 0.5;
            let half = (hi - lo) * (0.5 * (1.0 + inflation));
            draw(center - half, center + half)
        }
        InitialStates::OnTarget => {
            let ell = v.ell.value();
            v.segments[0]
                .targets
                .iter()
                .map(|p| AgentState::new(p.x - ell, p.y, 0.0))
                .collect()
        }
    }
}

fn agent_records(
    states: &[AgentState],
    eval: &Evaluation,
    delta_hat: &[Vector2<f64>],
) -> Vec<AgentRecord> {
    states
        .iter()
        .enumerate()
        .map(|(i, s)| AgentRecord {
            x: s.x,
            y: s.y,
            theta_wrapped: s.wrapped_theta(),
            xbar: eval.x_bar[i].x,
            ybar: eval.x_bar[i].y,
            v: eval.controls[i].v,
            omega: eval.controls[i].omega,
            dhat1: delta_hat[i].x,
            dhat2: delta_hat[i].y,
        })
        .collect()
}

struct Recorder {
    records: Vec<StepRecord>,
    metrics: Vec<MetricRecord>,
    switch_steps: Vec<usize>,
    segment_of_step: Vec<usize>,
    last_eval_agent_errors: Vec<f64>,
}

fn summarize(
    v: &ValidatedScenario,
    rec: &Recorder,
    states: &[AgentState],
    delta_hat: &[Vector2<f64>],
    completed: bool,
) -> RunSummary {
    let sc = &v.scenario;
    let metrics = &rec.metrics;
    let mut settling_times = vec![None; v.segments.len()];
    for (seg_idx, slot) in settling_times.iter_mut().enumerate() {
        let thr = v.segments[seg_idx].settling_threshold;
        let steps: Vec<usize> = (0..metrics.len())
            .filter(|&k| rec.segment_of_step[k] == seg_idx)
            .collect();
        let Some(&last) = steps.last() else { continue };
        if metrics[last].err_norm >= thr {
            continue;
        }
        let mut first_below = last;
        for &k in steps.iter().rev() {
            if metrics[k].err_norm < thr {
                first_below = k;
            } else {
                break;
            }
        }
        *slot = Some(metrics[first_below].t);
    }
    let mut lyapunov_max_increase = f64::NEG_INFINITY;
    for k in 1..metrics.len() {
        if rec.segment_of_step[k] != rec.segment_of_step[k - 1] {
            continue;
        }
        lyapunov_max_increase =
            lyapunov_max_increase.max(metrics[k].lyapunov - metrics[k - 1].lyapunov);
    }
    let terminal_disturbance_error = delta_hat
        .iter()
        .zip(&sc.disturbances)
        .map(|(dh, d)| (dh * sc.gains.k2 - d.as_vector()).norm())
        .fold(0.0, f64::max);
    RunSummary {
        completed,
        steps: metrics.len(),
        initial_error_norm: metrics.first().map_or(f64::NAN, |m| m.err_norm),
        terminal_error_norm: metrics.last().map_or(f64::NAN, |m| m.err_norm),
        settling_times,
        settling_thresholds: v.segments.iter().map(|s| s.settling_threshold).collect(),
        terminal_theta: states.iter().map(|s| s.wrapped_theta()).collect(),
        terminal_disturbance_error,
        terminal_max_agent_error: rec
            .last_eval_agent_errors
            .iter()
            .copied()
            .fold(0.0, f64::max),
        lyapunov_max_increase: if lyapunov_max_increase.is_finite() {
            lyapunov_max_increase
        } else {
            0.0
        },
    }
}

/// Integrates the closed loop from `t = 0` to the scenario duration.
pub fn run_scenario(v: &ValidatedScenario) -> Result<TrajectoryLog> {
    let sc = &v.scenario;
    let n = sc.agents();
    let runner = Runner::new(v);
    let last_step = sc.final_step();
    let mut states = initial_states(v);
    let mut delta_hat = sc
        .observer_init
        .clone()
        .unwrap_or_else(|| vec![Vector2::zeros(); n]);

    let mut rec = Recorder {
        records: Vec::with_capacity(last_step / sc.log_stride + 2),
        metrics: Vec::with_capacity(last_step + 1),
        switch_steps: Vec::new(),
        segment_of_step: Vec::with_capacity(last_step + 1),
        last_eval_agent_errors: Vec::new(),
    };
    let mut active = 0;
    log::debug!(
        "running {n} agents for {} steps of {} s ({} curve segments)",
        last_step,
        sc.dt,
        v.segments.len()
    );

    for k in 0..=last_step {
        let t = k as f64 * sc.dt;
        let seg_idx = v.segment_at(t);
        if seg_idx != active {
            log::info!("switching to curve {} at t = {t}", seg_idx + 1);
            rec.switch_steps.push(k);
            active = seg_idx;
        }
        let seg = &v.segments[active];

        let finite = states.iter().all(AgentState::is_finite)
            && delta_hat.iter().all(|d| d.iter().all(|x| x.is_finite()));
        let eval = if finite {
            runner.evaluate(seg, &states, &delta_hat).ok()
        } else {
            None
        };
        let Some(eval) = eval.filter(|e| {
            e.controls
                .iter()
                .all(|u| u.v.is_finite() && u.omega.is_finite())
        }) else {
            let summary = summarize(v, &rec, &states, &delta_hat, false);
            let partial = TrajectoryLog {
                agents: n,
                dt: sc.dt,
                log_stride: sc.log_stride,
                records: rec.records,
                metrics: rec.metrics,
                switch_steps: rec.switch_steps,
                segment_of_step: rec.segment_of_step,
                final_states: states,
                final_delta_hat: delta_hat,
                summary,
            };
            return Err(Error::Diverged {
                step: k,
                time: t,
                partial: Box::new(partial),
            });
        };

        rec.metrics.push(MetricRecord {
            t,
            err_norm: eval.errors.x_e.norm(),
            lyapunov: runner.lyapunov(&eval.errors.x_e, &delta_hat),
        });
        rec.segment_of_step.push(active);
        if k % sc.log_stride == 0 || k == last_step {
            rec.records.push(StepRecord {
                step: k,
                t,
                agents: agent_records(&states, &eval, &delta_hat),
            });
        }
        if k == last_step {
            rec.last_eval_agent_errors = (0..n).map(|i| eval.errors.agent(i).norm()).collect();
            break;
        }
        match sc.integrator {
            Integrator::Euler => runner.euler_step(seg, &eval, &mut states, &mut delta_hat)?,
            Integrator::Rk4 => runner.rk4_step(seg, &mut states, &mut delta_hat)?,
        }
    }

    let summary = summarize(v, &rec, &states, &delta_hat, true);
    Ok(TrajectoryLog {
        agents: n,
        dt: sc.dt,
        log_stride: sc.log_stride,
        records: rec.records,
        metrics: rec.metrics,
        switch_steps: rec.switch_steps,
        segment_of_step: rec.segment_of_step,
        final_states: states,
        final_delta_hat: delta_hat,
        summary,
    })
}

/// Validates and runs in one call.
pub fn simulate(scenario: &Scenario) -> Result<TrajectoryLog> {
    run_scenario(&validate_scenario(scenario)?)
}

/// Terminal distance of each agent from its assigned curve point.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformityReport {
    pub distances: Vec<f64>,
    pub max_distance: f64,
    pub tolerance: f64,
    /// `None` when the run did not complete.
    pub passed: Option<bool>,
}

pub fn uniform_distribution_check(
    log: &TrajectoryLog,
    curve: &ParametricCurve,
    spacing: ParameterSpacing,
    tolerance: f64,
) -> Result<UniformityReport> {
    let points = log.final_virtual_points();
    let s_values = assign_parameters_with(log.agents, spacing)?;
    let distances = points
        .iter()
        .zip(&s_values)
        .map(|(p, &s)| Ok((p - curve.point(s)?).norm()))
        .collect::<Result<Vec<f64>>>()?;
    let max_distance = distances.iter().copied().fold(0.0, f64::max);
    let complete = log.summary.completed && points.len() == log.agents;
    Ok(UniformityReport {
        passed: complete.then_some(max_distance < tolerance),
        distances,
        max_distance,
        tolerance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    K1,
    K2,
    Dt,
    Duration,
    Ell,
    Seed,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::K1 => "k1",
            SweepAxis::K2 => "k2",
            SweepAxis::Dt => "dt",
            SweepAxis::Duration => "duration",
            SweepAxis::Ell => "ell",
            SweepAxis::Seed => "seed",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "k1" => SweepAxis::K1,
            "k2" => SweepAxis::K2,
            "dt" => SweepAxis::Dt,
            "duration" => SweepAxis::Duration,
            "ell" => SweepAxis::Ell,
            "seed" => SweepAxis::Seed,
            other => return Err(Error::invalid(format!("unknown sweep parameter {other:?}"))),
        })
    }

    fn apply(self, scenario: &mut Scenario, value: f64) {
        match self {
            SweepAxis::K1 => scenario.gains.k1 = value,
            SweepAxis::K2 => scenario.gains.k2 = value,
            SweepAxis::Dt => scenario.dt = value,
            SweepAxis::Duration => scenario.duration = value,
            SweepAxis::Ell => scenario.ell = value,
            SweepAxis::Seed => scenario.seed = value as u64,
        }
    }
}

/// Cartesian product of per-axis value lists; the last axis varies fastest.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterGrid {
    pub axes: Vec<(SweepAxis, Vec<f64>)>,
}

impl ParameterGrid {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, axis: SweepAxis, values: Vec<f64>) -> Self {
        self.axes.push((axis, values));
        self
    }

    pub fn points(&self) -> Vec<Vec<(SweepAxis, f64)>> {
        let mut out: Vec<Vec<(SweepAxis, f64)>> = vec![Vec::new()];
        for (axis, values) in &self.axes {
            out = out
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push((*axis, v));
                        q
                    })
                })
                .collect();
        }
        if self.axes.is_empty() {
            Vec::new()
        } else {
            out
        }
    }
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub point: Vec<(SweepAxis, f64)>,
    pub result: Result<RunSummary>,
}

/// Runs the template once per grid point, concurrently, in grid order.
///
/// Agent records are kept only at the first and last step.
pub fn sweep(template: &Scenario, grid: &ParameterGrid) -> Result<Vec<SweepOutcome>> {
    let points = grid.points();
    if points.is_empty() {
        return Err(Error::invalid("sweep grid is empty"));
    }
    Ok(points
        .into_par_iter()
        .map(|point| {
            let mut sc = template.clone();
            for &(axis, value) in &point {
                axis.apply(&mut sc, value);
            }
            sc.log_stride = usize::MAX;
            let result = simulate(&sc).map(|log| log.summary);
            SweepOutcome { point, result }
        })
        .collect())
}
