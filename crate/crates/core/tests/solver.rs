use isoplate::dgspace::{grad_at_barycenter, interpolate_v, DofMap, Space};
use isoplate::forms::{BoundaryData, PenaltyParams};
use isoplate::mesh::{build_structured, Rect, Split, TriMesh};
use isoplate::solver::*;
use nalgebra::Vector3;

fn clamped_square(n: usize) -> TriMesh {
    build_structured(n, n, Rect::new(0.0, 4.0, 0.0, 4.0), Split::Crisscross)
        .unwrap()
        .classify_edges(|x| x.x.abs() < 1e-12 || x.y.abs() < 1e-12)
}

fn flat_start(m: &TriMesh) -> DGState {
    DGState::initial(m, interpolate_v(m, |x| Vector3::new(x.x, x.y, 0.0))).unwrap()
}

fn weak_force(m: &TriMesh) -> PlateProblem<'_> {
    PlateProblem::new(
        m,
        PenaltyParams::default(),
        |_| Vector3::new(0.0, 0.0, 2.5e-2),
        &BoundaryData::flat(),
    )
}

#[test]
fn unloaded_flat_plate_is_a_fixed_point() {
    let m = clamped_square(3);
    let mut p = PlateProblem::new(&m, PenaltyParams::default(), |_| Vector3::zeros(), &BoundaryData::flat());
    let start = flat_start(&m);
    // zero up to cancellation against the data constant
    assert!(p.energy(&start.y).abs() < 1e-13 * p.data_offset().abs());
    let (state, log) = proximal_loop(&mut p, start.clone(), &SolverConfig::default()).unwrap();
    assert_eq!(log.len(), 1);
    assert!(state.mu.coeffs.iter().all(|v| v.abs() <= 1e-10));
    let dy = state.y.coeffs.iter().zip(&start.y.coeffs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(dy < 1e-10, "{dy}");
}

#[test]
fn one_step_invariants() {
    let m = clamped_square(5);
    let mut p = weak_force(&m);
    let config = SolverConfig::default();
    let start = flat_start(&m);
    let (mut state, steps) = newton_step_problem(&mut p, &start, config.tau, &config).unwrap();
    assert!(steps >= 2);
    // μ is tangent at the barycenters up to the inner tolerance
    assert!(tangency_defect(&state) <= 10.0 * config.newton_tol, "{}", tangency_defect(&state));
    state.g = g_update(&state, config.tau).unwrap();
    assert!(state.frame_defect() <= 1e-12);
    // the updated frame is the new barycentric gradient
    for c in 0..m.n_cells() {
        let d = (state.g[c].matrix() - grad_at_barycenter(&state.y, &m, c)).norm();
        assert!(d <= 10.0 * config.newton_tol, "cell {c}: {d:e}");
    }
    assert!(p.energy(&state.y) < p.energy(&start.y));
}

#[test]
fn newton_converges_quadratically() {
    let m = clamped_square(5);
    let mut p = weak_force(&m);
    let config = SolverConfig::default();
    let start = flat_start(&m);
    let dofs = *p.dofs();
    let out = newton_solve(&mut p, &start.g, start.stacked(&dofs, false), config.tau, &config).unwrap();
    let r = &out.residuals;
    // ratios r_{j+1} / r_j² while both are well above the final (rounding)
    // level
    let floor = 10.0 * out.residual();
    let c: Vec<f64> = r
        .windows(2)
        .filter(|w| w[0] <= 1e-2 && w[1] > floor)
        .map(|w| w[1] / (w[0] * w[0]))
        .collect();
    println!("residuals {r:?}, r_(j+1)/r_j^2 = {c:?}");
    assert!(!c.is_empty());
    assert!(c.iter().all(|&c| c < 1e4), "{c:?}");
}

#[test]
fn warm_start_of_the_multiplier_does_not_change_the_step() {
    let m = clamped_square(4);
    let mut p = weak_force(&m);
    let config = SolverConfig::default();
    let dofs = DofMap::new(&m);
    // a state with a nonzero γ from a first step
    let (mut s1, _) = newton_step_problem(&mut p, &flat_start(&m), config.tau, &config).unwrap();
    s1.g = g_update(&s1, config.tau).unwrap();
    assert!(s1.gamma.coeffs.iter().any(|v| v.abs() > 1e-6));
    let cold = newton_solve(&mut p, &s1.g.clone(), s1.stacked(&dofs, false), config.tau, &config).unwrap();
    let warm = newton_solve(&mut p, &s1.g.clone(), s1.stacked(&dofs, true), config.tau, &config).unwrap();
    let og = dofs.offset(Space::Upsilon);
    let d = cold.x[..og]
        .iter()
        .zip(&warm.x[..og])
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(d < 1e-9, "{d:e}");
}

#[test]
fn energy_decreases_monotonically_on_the_weak_force() {
    let m = clamped_square(5);
    let mut p = weak_force(&m);
    let (state, log) = proximal_loop(&mut p, flat_start(&m), &SolverConfig::default()).unwrap();
    assert_eq!(log.energy_increases(), 0);
    assert!(log.len() <= 6);
    assert!(p.defect(&state.y) <= 1e-12);
    assert!(state.frame_defect() <= 1e-12);
}

#[test]
fn continuation_reaches_the_end_of_the_schedule() {
    // a short strip compressed by 10 % in five load steps
    let m = build_structured(8, 2, Rect::new(-2.0, 2.0, 0.0, 1.0), Split::Crisscross)
        .unwrap()
        .classify_edges(|x| (x.x.abs() - 2.0).abs() < 1e-12);
    let data_at = |t: f64| {
        BoundaryData::new(
            move |x| Vector3::new(x.x - x.x.signum() * 0.2 * t, x.y, 0.0),
            |_, n| Vector3::new(n.x, n.y, 0.0),
        )
    };
    let mut p = PlateProblem::new(&m, PenaltyParams::default(), |_| Vector3::new(0.0, 0.0, 1e-5), &data_at(0.0));
    let schedule = Schedule {
        dt: 0.2,
        snapshot_times: vec![0.4, 1.0],
    };
    let config = SolverConfig {
        tau: 0.1,
        tol: 1e-3,
        ..Default::default()
    };
    let mut seen = 0;
    let res = continuation_drive(&mut p, flat_start(&m), &config, &schedule, data_at, |_, _, _| seen += 1).unwrap();
    assert_eq!(seen, 5);
    assert_eq!(res.steps.len(), 5);
    let times: Vec<f64> = res.snapshots.iter().map(|(t, _)| *t).collect();
    assert_eq!(times.len(), 2);
    assert!((times[0] - 0.4).abs() < 1e-12 && (times[1] - 1.0).abs() < 1e-12);
    assert!(res.steps.iter().all(|s| s.defect <= 1e-12));
}
