//! Property tests for graph, pseudoinverse, controller and closed-loop invariants.

use curveform::control::{
    block_input_matrix, error_dynamics, lyapunov_rate, lyapunov_value, Gains,
};
use curveform::curve::{
    pseudoinverse, stack_basis, BasisFamily, CurveCoefficients, ParametricCurve,
};
use curveform::dynamics::{virtual_point, AgentState, Disturbance, OffsetParameter};
use curveform::simulation::{run_scenario, validate_scenario, InitialStates, Scenario};
use curveform::topology::{
    build_laplacian, extend_matrix, has_rooted_spanning_tree, leader_selector, theorem1_matrices,
    DirectedTopology, Edge,
};
use nalgebra::{DMatrix, DVector, Vector2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rooted_digraph(seed: u64, n: usize, extra: f64) -> DirectedTopology {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 1..n {
        edges.push(Edge::new(
            i,
            rng.random_range(0..i),
            rng.random_range(0.2..3.0),
        ));
        for j in 0..n {
            if j != i && rng.random_bool(extra) {
                edges.push(Edge::new(i, j, rng.random_range(0.2..3.0)));
            }
        }
    }
    DirectedTopology::from_edges(n, &edges).unwrap()
}

fn random_fourier_curve(rng: &mut ChaCha8Rng, harmonics: usize) -> ParametricCurve {
    let family = BasisFamily::fourier(harmonics).unwrap();
    let mut xi = DVector::from_fn(family.columns(), |_, _| rng.random_range(-1.0..1.0));
    let k = xi.len();
    xi[k - 2] += rng.random_range(-5.0..5.0);
    xi[k - 1] += rng.random_range(-5.0..5.0);
    ParametricCurve::new(family, CurveCoefficients::new(&family, xi).unwrap()).unwrap()
}

/// A short run at `dt` from random states with random observer estimates
/// and disturbances.
fn closed_loop_scenario(seed: u64, n: usize, dt: f64, steps: usize) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topology = rooted_digraph(seed, n, 0.3);
    let curve = random_fourier_curve(&mut rng, 4);
    let mut sc = Scenario::new(topology, curve);
    sc.gains = Gains::new(rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)).unwrap();
    sc.ell = rng.random_range(0.2..1.0);
    sc.disturbances = (0..n)
        .map(|_| Disturbance::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    sc.observer_init = Some(
        (0..n)
            .map(|_| Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect(),
    );
    sc.seed = seed;
    sc.dt = dt;
    sc.duration = dt * steps as f64;
    sc
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn laplacian_annihilates_ones(seed in any::<u64>(), n in 1usize..12) {
        let l = build_laplacian(&rooted_digraph(seed, n, 0.4));
        let row_sums = l.matrix() * DVector::from_element(n, 1.0);
        prop_assert!(row_sums.amax() < 1e-12);
    }

    #[test]
    fn rooted_graphs_give_symmetric_definite_pair(seed in any::<u64>(), n in 1usize..12) {
        let t = rooted_digraph(seed, n, 0.4);
        prop_assert!(has_rooted_spanning_tree(&t, 0));
        let m = theorem1_matrices(&build_laplacian(&t), &leader_selector(n).diagonal()).unwrap();
        prop_assert!(m.min_eig_p > 1e-12 && m.min_eig_q > 1e-12);
        prop_assert!((&m.q_matrix - m.q_matrix.transpose()).amax() < 1e-12);
    }

    #[test]
    fn weight_extension_commutes_with_input_blocks(
        seed in any::<u64>(),
        n in 1usize..8,
        ell in 0.01f64..2.0,
    ) {
        let t = rooted_digraph(seed, n, 0.4);
        let m = theorem1_matrices(&build_laplacian(&t), &leader_selector(n).diagonal()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a);
        let thetas: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let r = block_input_matrix(&thetas, OffsetParameter::new(ell).unwrap());
        let p = extend_matrix(&m.p_matrix());
        prop_assert!((&p * &r - &r * &p).amax() < 1e-12);
    }

    #[test]
    fn pseudoinverse_penrose_conditions(harmonics in 1usize..9, frac in 0.1f64..1.0, seed in any::<u64>()) {
        let h = 2 * harmonics + 1;
        let n = ((h as f64 * frac).ceil() as usize).clamp(1, h);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5 * rng.random::<f64>()) / n as f64).collect();
        let g_bar = stack_basis(&BasisFamily::fourier(harmonics).unwrap(), &s).unwrap();
        let g = g_bar.matrix();
        let gp = pseudoinverse(&g_bar).unwrap();
        let ggp = g * &gp;
        let gpg = &gp * g;
        prop_assert!((&ggp - DMatrix::identity(2 * n, 2 * n)).amax() < 1e-10);
        prop_assert!((&ggp * g - g).amax() < 1e-10);
        prop_assert!((&gpg * &gp - &gp).amax() < 1e-10);
        prop_assert!((gpg.transpose() - &gpg).amax() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn logged_virtual_points_match_poses(seed in any::<u64>(), n in 1usize..7) {
        let mut sc = closed_loop_scenario(seed, n, 1e-3, 200);
        sc.log_stride = 7;
        let log = run_scenario(&validate_scenario(&sc).unwrap()).unwrap();
        let ell = OffsetParameter::new(sc.ell).unwrap();
        for rec in &log.records {
            for a in &rec.agents {
                let p = virtual_point(&AgentState::new(a.x, a.y, a.theta_wrapped), ell);
                prop_assert!((p.x - a.xbar).abs() < 1e-9 && (p.y - a.ybar).abs() < 1e-9);
            }
        }
    }

    /// Finite differences of the logged `V` and `x_e` over one step at
    /// `dt = 1e-5` match the analytic rate and closed-loop right side.
    #[test]
    fn closed_loop_rates_match_finite_differences(seed in any::<u64>(), n in 1usize..7) {
        let dt = 1e-5;
        let sc = closed_loop_scenario(seed, n, dt, 1);
        let v = validate_scenario(&sc).unwrap();
        let log = run_scenario(&v).unwrap();
        prop_assert_eq!(log.records.len(), 2);
        let seg = &v.segments()[0];
        let lyap = v.lyapunov();
        let k2 = sc.gains.k2;

        let x_e = |k: usize| {
            DVector::from_iterator(2 * n, log.records[k].agents.iter().zip(&seg.targets)
                .flat_map(|(a, t)| [a.xbar - t.x, a.ybar - t.y]))
        };
        let rec0 = &log.records[0].agents;
        let delta_tilde = DVector::from_iterator(2 * n, rec0.iter().zip(&sc.disturbances)
            .flat_map(|(a, d)| [a.dhat1 - d.d1 / k2, a.dhat2 - d.d2 / k2]));
        let (e0, e1) = (x_e(0), x_e(1));

        let v0 = lyapunov_value(&e0, &delta_tilde, &lyap.p_diag);
        prop_assert!((log.metrics[0].lyapunov - v0).abs() <= 1e-9 * v0.max(1.0));
        let fd_rate = (log.metrics[1].lyapunov - log.metrics[0].lyapunov) / dt;
        let rate = lyapunov_rate(&e0, &lyap.q_matrix, sc.gains.k1);
        prop_assert!((fd_rate - rate).abs() <= 0.05 * rate.abs(), "fd {} analytic {}", fd_rate, rate);

        let ell = OffsetParameter::new(sc.ell).unwrap();
        let thetas: Vec<f64> = rec0.iter().map(|a| a.theta_wrapped).collect();
        let x_bar = DVector::from_iterator(2 * n, rec0.iter().flat_map(|a| [a.xbar, a.ybar]));
        let xi_e = &seg.g_pinv * &x_bar - seg.curve.coefficients.as_vector();
        let rhs = error_dynamics(
            &e0, &xi_e, &delta_tilde,
            &extend_matrix(v.laplacian().matrix()),
            &extend_matrix(&leader_selector(n)),
            &block_input_matrix(&thetas, ell),
            &seg.g_bar, &sc.gains,
        ).unwrap();
        let fd = (&e1 - &e0) / dt;
        prop_assert!((&fd - &rhs).norm() <= 0.05 * rhs.norm(), "fd {} rhs {}", fd, rhs);
    }
}

#[test]
fn on_target_start_with_matched_estimate_stays_put() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 5;
    let mut sc = Scenario::new(rooted_digraph(3, n, 0.3), random_fourier_curve(&mut rng, 3));
    sc.initial = InitialStates::OnTarget;
    sc.disturbances = vec![Disturbance::new(0.3, -0.2); n];
    sc.observer_init = Some(vec![Vector2::new(0.3, -0.2); n]);
    sc.duration = 2.0;
    let log = run_scenario(&validate_scenario(&sc).unwrap()).unwrap();
    assert!(log.metrics.iter().all(|m| m.err_norm < 1e-12));
}
