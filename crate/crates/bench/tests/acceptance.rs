//! The acceptance criteria, run in order with one PASS/FAIL line each.
//!
//! Everything runs inside a single test so the heavy benchmarks do not
//! compete for cores, and so every criterion reports even if an earlier one
//! fails. Expect several minutes in release mode.

use std::time::{Duration, Instant};

use isoplate::dgspace::{interpolate_v, DofMap};
use isoplate::forms::{assemble_a_h, assemble_coupling, assemble_f_h, BoundaryData, PenaltyParams, StepOperator};
use isoplate::mesh::{build_structured, Rect, Split};
use isoplate::solver::{proximal_loop, DGState, IterationLog, PlateProblem, SolverConfig};
use isoplate::stiefel::{Mat32, StiefelPoint};
use isoplate::stiefel_checks;
use isoplate_bench::config::FIGURE_TIMES;
use isoplate_bench::runs::{self, snapshot_name, solve_static, SQUARE_FAMILY};
use nalgebra::Vector3;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

struct Outcome {
    passed: bool,
    detail: String,
}

fn check(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn within(value: f64, target: f64, rel: f64) -> bool {
    ((value - target) / target).abs() <= rel
}

fn strictly_decreasing(log: &IterationLog) -> bool {
    let mut prev = log.initial_energy;
    log.records.iter().all(|r| {
        let ok = r.energy < prev;
        prev = r.energy;
        ok
    })
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let results = stiefel_checks::run_all(1);
    let failed: Vec<_> = results.iter().filter(|c| !c.passed()).map(|c| c.name).collect();
    let worst: Vec<String> = results.iter().map(|c| format!("{:.1e}", c.worst)).collect();
    let elapsed = t.elapsed();
    check(
        failed.is_empty() && elapsed < Duration::from_secs(5),
        format!("worst values [{}], failed {failed:?}, {:.2} s", worst.join(", "), elapsed.as_secs_f64()),
    )
}

/// Weak-force runs on the 400/1,600/6,400-cell meshes, shared by 2, 3 and 5.
struct SquareRuns {
    weak: Vec<(runs::StaticRun, Duration)>,
    strong: Option<(runs::StaticRun, Duration)>,
}

fn run_square(cfg: &isoplate_bench::config::RunConfig) -> (runs::StaticRun, Duration) {
    let t = Instant::now();
    let mesh = cfg.build_mesh().unwrap();
    let run = solve_static(cfg, &mesh).unwrap();
    (run, t.elapsed())
}

fn criterion_2(runs: &SquareRuns) -> Outcome {
    let (run, time) = &runs.weak[0];
    let r = &run.report;
    check(
        r.cells == 400
            && within(r.energy, -9.80e-3, 0.02)
            && r.defect <= 1e-12
            && r.outer_iters <= 6
            && r.newton_total <= 25
            && *time < Duration::from_secs(60),
        format!(
            "E_h {:.4e} (target -9.80e-3 ± 2%), D_h {:.2e}, {} iterations, {} Newton steps, {:.1} s",
            r.energy,
            r.defect,
            r.outer_iters,
            r.newton_total,
            time.as_secs_f64()
        ),
    )
}

fn criterion_3(runs: &SquareRuns) -> Outcome {
    let targets = [-9.80e-3, -9.49e-3, -8.59e-3];
    let mut ok = true;
    let mut parts = Vec::new();
    let mut total = Duration::ZERO;
    for ((run, time), target) in runs.weak.iter().zip(targets) {
        let r = &run.report;
        ok &= (3..=6).contains(&r.outer_iters) && within(r.energy, target, 0.03);
        total += *time;
        parts.push(format!(
            "{} cells: {} its, E_h {:.4e} ({:+.2}%)",
            r.cells,
            r.outer_iters,
            r.energy,
            100.0 * (r.energy - target) / target.abs()
        ));
    }
    ok &= runs.weak.len() == 3 && total < Duration::from_secs(15 * 60);
    check(ok, format!("{}; {:.0} s", parts.join("; "), total.as_secs_f64()))
}

fn criterion_4(runs: &SquareRuns) -> Outcome {
    let Some((run, time)) = &runs.strong else {
        return check(false, "strong-force run failed".into());
    };
    let r = &run.report;
    check(
        within(r.energy, -5.41, 0.05)
            && (80..=160).contains(&r.outer_iters)
            && r.defect <= 1e-12
            && *time < Duration::from_secs(600),
        format!(
            "E_h {:.4} (target -5.41 ± 5%, {:+.2}%), {} iterations, D_h {:.2e}, {:.0} s",
            r.energy,
            100.0 * (r.energy + 5.41) / 5.41,
            r.outer_iters,
            r.defect,
            time.as_secs_f64()
        ),
    )
}

fn criterion_5(runs: &SquareRuns) -> Outcome {
    let logs: Vec<&IterationLog> = runs.weak.iter().chain(&runs.strong).map(|(r, _)| &r.log).collect();
    let bad = logs.iter().filter(|l| !strictly_decreasing(l)).count();
    let steps: usize = logs.iter().map(|l| l.len()).sum();
    check(
        bad == 0 && logs.len() == 4,
        format!("{} runs, {steps} outer steps, {bad} runs with a non-decreasing step", logs.len()),
    )
}

fn criterion_6() -> Outcome {
    let t = Instant::now();
    let mesh = build_structured(5, 5, Rect::new(0.0, 4.0, 0.0, 4.0), Split::Crisscross)
        .unwrap()
        .classify_edges(|x| x.x.abs() < 1e-12 || x.y.abs() < 1e-12);
    let mut p = PlateProblem::new(&mesh, PenaltyParams::default(), |_| Vector3::zeros(), &BoundaryData::flat());
    let start = DGState::initial(&mesh, interpolate_v(&mesh, |x| Vector3::new(x.x, x.y, 0.0))).unwrap();
    let (state, log) = proximal_loop(&mut p, start.clone(), &SolverConfig::default()).unwrap();
    let mu = state.mu.l2_norm_p0(&mesh);
    let dy = state
        .y
        .coeffs
        .iter()
        .zip(&start.y.coeffs)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let elapsed = t.elapsed();
    check(
        log.len() == 1 && mu <= 1e-10 && dy <= 1e-10 && elapsed < Duration::from_secs(5),
        format!("{} iteration, |mu|_L2 {mu:.1e}, max |dy| {dy:.1e}, {:.2} s", log.len(), elapsed.as_secs_f64()),
    )
}

fn criterion_7() -> Outcome {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = runs::buckling(false);
    cfg.output.dir = dir.path().to_owned();
    let summary = match runs::execute(&cfg, None) {
        Ok(s) => s,
        Err(e) => return check(false, format!("run failed: {e}")),
    };
    let log = std::fs::read_to_string(dir.path().join("iterations.log")).unwrap();
    let load_steps = log.lines().filter(|l| l.starts_with("# load step")).count();
    let snapshots = FIGURE_TIMES.iter().filter(|t| dir.path().join(snapshot_name(**t)).exists()).count();
    let elapsed = t.elapsed();
    let r = &summary.report;
    check(
        load_steps == 100
            && r.defect <= 1e-12
            && summary.max_deflection > 0.4
            && snapshots == FIGURE_TIMES.len()
            && elapsed < Duration::from_secs(30 * 60),
        format!(
            "{} cells, {load_steps} load steps, D_h {:.2e}, max |y3| {:.3}, {snapshots} snapshots, {:.0} s",
            r.cells,
            r.defect,
            summary.max_deflection,
            elapsed.as_secs_f64()
        ),
    )
}

/// Largest column-wise relative difference between the assembled Newton
/// matrix and central differences of the residual.
fn jacobian_error(nx: usize, ny: usize, split: Split, seed: u64) -> f64 {
    let mesh = build_structured(nx, ny, Rect::new(0.0, 1.0, 0.0, 1.0), split)
        .unwrap()
        .classify_edges(|x| x.x.abs() < 1e-12);
    let dofs = DofMap::new(&mesh);
    let params = PenaltyParams::default();
    let a = assemble_a_h(&mesh, &dofs, params);
    let b = assemble_coupling(&mesh, &dofs);
    let mut op = StepOperator::new(&mesh, &a, &b, 0.7);
    let mut rng = StdRng::seed_from_u64(seed);
    let frames = (0..mesh.n_cells())
        .map(|_| StiefelPoint::new(Mat32::from_fn(|_, _| rng.gen_range(-1.0..1.0)).qr().q()).unwrap())
        .collect();
    op.set_frame(frames);
    op.set_rhs(assemble_f_h(&mesh, &dofs, params, &BoundaryData::flat()));
    let x: Vec<f64> = (0..dofs.total()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let sys = op.system(&x);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for k in 0..dofs.total() {
        let (mut p, mut q) = (x.clone(), x.clone());
        p[k] += h;
        q[k] -= h;
        let (rp, rq) = (op.residual(&p), op.residual(&q));
        let (mut diff, mut norm) = (0.0f64, 0.0f64);
        for i in 0..dofs.total() {
            let fd = (rp[i] - rq[i]) / (2.0 * h);
            let j = sys.matrix.get(i, k);
            diff += (fd - j).powi(2);
            norm += j * j;
        }
        worst = worst.max(diff.sqrt() / norm.sqrt());
    }
    worst
}

fn criterion_8() -> Outcome {
    let t = Instant::now();
    let two = jacobian_error(1, 1, Split::TwoTriangle, 8);
    let eight = jacobian_error(2, 1, Split::Crisscross, 9);
    let elapsed = t.elapsed();
    check(
        two <= 1e-6 && eight <= 1e-6 && elapsed < Duration::from_secs(30),
        format!("2 cells {two:.1e}, 8 cells {eight:.1e}, {:.2} s", elapsed.as_secs_f64()),
    )
}

fn criterion_9() -> Outcome {
    let dofs: Vec<usize> = SQUARE_FAMILY
        .iter()
        .map(|&n| DofMap::new(&runs::weak_force(n).build_mesh().unwrap()).total())
        .collect();
    check(dofs == [10_800, 43_200, 172_800, 388_800], format!("dofs {dofs:?}"))
}

#[test]
fn acceptance_criteria() {
    let mut outcomes: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        println!("[{}] {n}. {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        outcomes.push((n, name, o));
    };

    report(1, "geometry kernel suite", criterion_1());

    let weak = [10, 20, 40].map(|n| run_square(&runs::weak_force(n))).to_vec();
    let strong = Some(run_square(&runs::strong_force(10)));
    let squares = SquareRuns { weak, strong };
    report(2, "weak force, 400 cells", criterion_2(&squares));
    report(3, "mesh-independent iteration counts", criterion_3(&squares));
    report(4, "strong force, 400 cells", criterion_4(&squares));
    report(5, "energy decrease", criterion_5(&squares));
    report(6, "fixed point", criterion_6());
    report(7, "buckling strip", criterion_7());
    report(8, "Newton Jacobian", criterion_8());
    report(9, "dof counts", criterion_9());

    let failed: Vec<_> = outcomes.iter().filter(|(_, _, o)| !o.passed).map(|(n, name, _)| format!("{n} ({name})")).collect();
    println!("{} of {} criteria passed", outcomes.len() - failed.len(), outcomes.len());
    assert!(failed.is_empty(), "failed criteria: {}", failed.join(", "));
}
