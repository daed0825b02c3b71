//! Newton solver for one proximal step, the exact frame update, the outer
//! proximal loop and quasi-static continuation in the boundary data.

use nalgebra::Vector3;
use thiserror::Error;

use crate::dgspace::{grad_at_barycenter, DofMap, FEFunction, Space};
use crate::forms::{
    assemble_a_h, assemble_coupling, assemble_f_h, assemble_load, data_offset, isometry_defect, quadratic_energy,
    BoundaryData, PenaltyParams, StepOperator,
};
use crate::mesh::{Point2, TriMesh};
use crate::sparse::{DirectSolver, LinearSolveError, SparseMatrix};
use crate::stiefel::{exp_map, sym_bracket, tangent_project, StiefelError, StiefelPoint};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("Newton did not converge: residual {residual:.3e} after {steps} steps ({reason})")]
    NewtonDiverged {
        residual: f64,
        steps: usize,
        reason: &'static str,
    },
    #[error("Newton Jacobian could not be factorized: {0}")]
    SingularJacobian(#[from] LinearSolveError),
    #[error("outer loop hit {iterations} iterations; last rate {last_rate:.3e}")]
    OuterMaxExceeded { iterations: usize, last_rate: f64 },
    #[error("frame on cell {cell} left the Stiefel manifold: {source}")]
    Stiefel {
        cell: usize,
        #[source]
        source: StiefelError,
    },
    #[error("load step t = {t} failed: {source}")]
    LoadStepFailed {
        t: f64,
        #[source]
        source: Box<SolverError>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Proximal pseudo-time step.
    pub tau: f64,
    /// Outer stop when `|ΔE| / τ < tol`.
    pub tol: f64,
    /// Additional stop on `‖μ‖_{L²} < mu_tol`; zero disables it.
    pub mu_tol: f64,
    /// Newton tolerance: bounds the per-area constraint residual, the
    /// equilibrium residual (or its rounding level, if larger) and the
    /// final increment of `(y, μ)`; see [`newton_solve`].
    pub newton_tol: f64,
    pub newton_max: usize,
    pub outer_max: usize,
    /// On an energy increase, halve τ and redo the step once.
    pub tau_backoff: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tau: 2.0,
            tol: 1e-4,
            mu_tol: 0.0,
            newton_tol: 1e-10,
            newton_max: 50,
            outer_max: 1000,
            tau_backoff: false,
        }
    }
}

/// Iterate of the proximal method.
#[derive(Debug, Clone)]
pub struct DGState {
    pub y: FEFunction,
    pub mu: FEFunction,
    pub gamma: FEFunction,
    /// Per-cell frame `G`; feasible by construction.
    pub g: Vec<StiefelPoint>,
    pub k: usize,
}

impl DGState {
    /// Starts from a deformation whose barycentric gradients lie on the
    /// manifold; fails if one does not.
    pub fn initial(mesh: &TriMesh, y: FEFunction) -> Result<Self, SolverError> {
        let dofs = DofMap::new(mesh);
        let g = (0..mesh.n_cells())
            .map(|c| StiefelPoint::new(grad_at_barycenter(&y, mesh, c)).map_err(|source| SolverError::Stiefel { cell: c, source }))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            y,
            mu: FEFunction::zeros(Space::M, &dofs),
            gamma: FEFunction::zeros(Space::Upsilon, &dofs),
            g,
            k: 0,
        })
    }

    /// Largest `|GᵀG − I|` over cells.
    pub fn frame_defect(&self) -> f64 {
        self.g
            .iter()
            .map(|g| crate::stiefel::orthonormality_defect(g.matrix()))
            .fold(0.0, f64::max)
    }

    /// `(y, 0, γ)` or `(y, 0, 0)` as one vector in the step layout.
    pub fn stacked(&self, dofs: &DofMap, warm_gamma: bool) -> Vec<f64> {
        let mut x = vec![0.0; dofs.total()];
        x[..dofs.len(Space::V)].copy_from_slice(&self.y.coeffs);
        if warm_gamma {
            x[dofs.offset(Space::Upsilon)..].copy_from_slice(&self.gamma.coeffs);
        }
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    pub energy: f64,
    /// `|E_h(y^k) − E_h(y^{k+1})| / τ`.
    pub rate: f64,
    pub defect: f64,
    pub mu_norm: f64,
    pub newton_steps: usize,
    pub tau: f64,
}

/// One record per accepted outer step.
#[derive(Debug, Clone, Default)]
pub struct IterationLog {
    /// Energy of the starting state.
    pub initial_energy: f64,
    pub records: Vec<IterationRecord>,
}

impl IterationLog {
    pub fn push(&mut self, r: IterationRecord) {
        self.records.push(r);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn newton_total(&self) -> usize {
        self.records.iter().map(|r| r.newton_steps).sum()
    }

    pub fn final_energy(&self) -> f64 {
        self.records.last().map_or(self.initial_energy, |r| r.energy)
    }

    /// Outer steps whose energy did not strictly decrease.
    pub fn energy_increases(&self) -> usize {
        let mut prev = self.initial_energy;
        let mut n = 0;
        for r in &self.records {
            if r.energy >= prev {
                n += 1;
            }
            prev = r.energy;
        }
        n
    }
}

/// Assembled operators for a fixed mesh, penalty, force and boundary data.
pub struct PlateProblem<'m> {
    mesh: &'m TriMesh,
    dofs: DofMap,
    params: PenaltyParams,
    a: SparseMatrix,
    load: Vec<f64>,
    /// `(f, ·) + F_h`.
    linear: Vec<f64>,
    offset: f64,
    op: StepOperator,
    lu: DirectSolver,
}

impl<'m> PlateProblem<'m> {
    pub fn new(
        mesh: &'m TriMesh,
        params: PenaltyParams,
        f: impl Fn(&Point2) -> Vector3<f64>,
        data: &BoundaryData,
    ) -> Self {
        let dofs = DofMap::new(mesh);
        let a = assemble_a_h(mesh, &dofs, params);
        let b = assemble_coupling(mesh, &dofs);
        let op = StepOperator::new(mesh, &a, &b, 1.0);
        let load = assemble_load(mesh, &dofs, f);
        let mut p = Self {
            mesh,
            dofs,
            params,
            a,
            linear: load.clone(),
            load,
            offset: 0.0,
            op,
            lu: DirectSolver::new(),
        };
        p.set_data(data);
        p
    }

    pub fn mesh(&self) -> &TriMesh {
        self.mesh
    }

    pub fn dofs(&self) -> &DofMap {
        &self.dofs
    }

    /// Replaces the Dirichlet data, keeping all matrices.
    pub fn set_data(&mut self, data: &BoundaryData) {
        let fh = assemble_f_h(self.mesh, &self.dofs, self.params, data);
        self.linear = self.load.iter().zip(&fh).map(|(a, b)| a + b).collect();
        self.offset = data_offset(self.mesh, self.params, data);
        self.op.set_rhs(self.linear.clone());
    }

    /// `½ a_h(y, y) − (f, y) − F_h(y)` as defined, including the constant
    /// `−½ Σ η h⁻ᵏ |data|²` carried by the boundary penalties.
    pub fn raw_energy(&self, y: &FEFunction) -> f64 {
        quadratic_energy(&self.a, &self.linear, &y.coeffs)
    }

    /// The energy with the data constant removed; zero for a flat state
    /// matching flat data. This is the value reported throughout.
    pub fn energy(&self, y: &FEFunction) -> f64 {
        self.raw_energy(y) + self.offset
    }

    pub fn data_offset(&self) -> f64 {
        self.offset
    }

    pub fn defect(&self, y: &FEFunction) -> f64 {
        isometry_defect(self.mesh, y)
    }
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub x: Vec<f64>,
    /// Number of linear solves.
    pub steps: usize,
    /// Euclidean residual norm before each solve and at the end.
    pub residuals: Vec<f64>,
}

impl NewtonOutcome {
    pub fn residual(&self) -> f64 {
        *self.residuals.last().unwrap()
    }
}

/// Newton's method on the step system from `x0`.
/// Once the residual test below holds, one more full step is taken (and
/// kept if the test still holds) before stopping.
///
/// The constraint rows, divided by the cell areas they carry, must reach
/// `newton_tol`, which bounds the pointwise mismatch between the frame and
/// the barycentric gradients. The equilibrium rows sum
/// penalty terms of size `η h⁻³`, so their residual cannot drop below a
/// few ulps of those terms; on fine meshes that exceeds `newton_tol`, and
/// the test for that block is relaxed to the rounding level.
pub fn newton_solve(
    problem: &mut PlateProblem<'_>,
    frame: &[StiefelPoint],
    mut x: Vec<f64>,
    tau: f64,
    config: &SolverConfig,
) -> Result<NewtonOutcome, SolverError> {
    problem.op.set_frame(frame.to_vec());
    problem.op.set_tau(tau);
    let om = problem.dofs.offset(Space::M);
    let converged = |problem: &PlateProblem<'_>, x: &[f64], rhs: &[f64]| {
        let tol_y = config.newton_tol.max(equilibrium_floor(problem, x));
        norm(&rhs[..om]) <= tol_y && constraint_residual(problem, rhs) <= config.newton_tol
    };
    // line-search merit: the equilibrium residual counts only above its
    // rounding level, so progress in the constraint rows stays visible
    let merit = |problem: &PlateProblem<'_>, x: &[f64], rhs: &[f64]| {
        let excess = (norm(&rhs[..om]) - equilibrium_floor(problem, x)).max(0.0);
        excess.hypot(norm(&rhs[om..]))
    };
    let mut steps = 0;
    let mut residuals = Vec::new();
    loop {
        let sys = problem.op.system(&x);
        let small_residual = converged(problem, &x, &sys.rhs);
        let r = norm(&sys.rhs);
        let m = merit(problem, &x, &sys.rhs);
        residuals.push(r);
        log::trace!("newton {steps}: residual {r:.3e}");
        if steps == config.newton_max {
            return Err(SolverError::NewtonDiverged {
                residual: r,
                steps,
                reason: "iteration limit",
            });
        }
        let delta = problem.lu.solve(&sys.matrix, &sys.rhs)?;
        steps += 1;
        if small_residual {
            // one full correction past the tolerance squares the remaining
            // constraint error; it is kept only if the test still holds,
            // since near a singular Jacobian it may amplify rounding noise
            let trial: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a + d).collect();
            let rt = problem.op.residual(&trial);
            if converged(problem, &trial, &rt) {
                x = trial;
                residuals.push(norm(&rt));
            }
            return Ok(NewtonOutcome { x, steps, residuals });
        }
        let mut alpha = 1.0;
        let accepted = loop {
            let trial: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a + alpha * d).collect();
            let mt = merit(problem, &trial, &problem.op.residual(&trial));
            if mt.is_finite() && mt <= (1.0 - 1e-4 * alpha) * m {
                break Some(trial);
            }
            alpha *= 0.5;
            if alpha < 1e-10 {
                break None;
            }
        };
        match accepted {
            Some(trial) => x = trial,
            None => {
                return Err(SolverError::NewtonDiverged {
                    residual: r,
                    steps,
                    reason: "line search failed",
                })
            }
        }
    }
}

/// Residual level of the equilibrium rows that rounding alone produces at
/// `x`: a few ulps of `‖ |A||y| + |Bᵀ||μ| + |ℓ| ‖`.
fn equilibrium_floor(problem: &PlateProblem<'_>, x: &[f64]) -> f64 {
    let om = problem.dofs.offset(Space::M);
    let mut terms = vec![0.0; om];
    for (r, c, v) in problem.op.linear().iter() {
        if r < om {
            terms[r] += (v * x[c]).abs();
        }
    }
    for (t, l) in terms.iter_mut().zip(&problem.linear) {
        *t += l.abs();
    }
    EQUILIBRIUM_ULPS * f64::EPSILON * norm(&terms)
}

const EQUILIBRIUM_ULPS: f64 = 4.0;

/// Largest constraint residual per unit area over the cells.
fn constraint_residual(problem: &PlateProblem<'_>, rhs: &[f64]) -> f64 {
    let (om, og) = (problem.dofs.offset(Space::M), problem.dofs.offset(Space::Upsilon));
    (0..problem.mesh.n_cells())
        .map(|c| {
            let v = norm(&rhs[om + 6 * c..om + 6 * c + 6]);
            let z = norm(&rhs[og + 3 * c..og + 3 * c + 3]);
            v.max(z) / problem.mesh.area(c)
        })
        .fold(0.0, f64::max)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Splits a step-layout vector into `(y, μ, γ)`.
pub fn unstack(dofs: &DofMap, x: &[f64]) -> (FEFunction, FEFunction, FEFunction) {
    let (om, og) = (dofs.offset(Space::M), dofs.offset(Space::Upsilon));
    (
        FEFunction::from_coeffs(Space::V, x[..om].to_vec()),
        FEFunction::from_coeffs(Space::M, x[om..og].to_vec()),
        FEFunction::from_coeffs(Space::Upsilon, x[og..].to_vec()),
    )
}

/// Solves one proximal step from `(y^k, 0, 0)`. The frame of the returned
/// state is still `G^k`; see [`g_update`].
pub fn newton_step_problem(
    problem: &mut PlateProblem<'_>,
    state: &DGState,
    tau: f64,
    config: &SolverConfig,
) -> Result<(DGState, usize), SolverError> {
    let dofs = *problem.dofs();
    let x0 = state.stacked(&dofs, false);
    let NewtonOutcome { x, steps, .. } = newton_solve(problem, &state.g, x0, tau, config)?;
    let (y, mu, gamma) = unstack(&dofs, &x);
    Ok((
        DGState {
            y,
            mu,
            gamma,
            g: state.g.clone(),
            k: state.k + 1,
        },
        steps,
    ))
}

/// `G'(x_T) = Exp_{G(x_T)}(τ Π_G μ(x_T))`, revalidated.
pub fn g_update(state: &DGState, tau: f64) -> Result<Vec<StiefelPoint>, SolverError> {
    state
        .g
        .iter()
        .enumerate()
        .map(|(c, g)| {
            let w = tangent_project(g, &state.mu.matrix_at(c));
            StiefelPoint::new(exp_map(g, &w, tau)).map_err(|source| SolverError::Stiefel { cell: c, source })
        })
        .collect()
}

/// Largest `|Gᵀμ + μᵀG|` over cells.
pub fn tangency_defect(state: &DGState) -> f64 {
    state
        .g
        .iter()
        .enumerate()
        .map(|(c, g)| sym_bracket(g.matrix(), &state.mu.matrix_at(c)).norm())
        .fold(0.0, f64::max)
}

/// Outer proximal iteration from `state` until the energy rate (or the μ
/// norm, if enabled) falls below tolerance. Returns the last computed
/// iterate with its updated frame.
pub fn proximal_loop(
    problem: &mut PlateProblem<'_>,
    mut state: DGState,
    config: &SolverConfig,
) -> Result<(DGState, IterationLog), SolverError> {
    let mut log = IterationLog {
        initial_energy: problem.energy(&state.y),
        records: Vec::new(),
    };
    let mut e_prev = log.initial_energy;
    let mut tau = config.tau;
    let mut last_rate = f64::INFINITY;
    for _ in 0..config.outer_max {
        let (mut next, mut steps) = newton_step_problem(problem, &state, tau, config)?;
        let mut e_next = problem.energy(&next.y);
        if e_next > e_prev {
            log::warn!(
                "energy increased at k = {}: {e_prev:.6e} -> {e_next:.6e} (tau {tau})",
                state.k + 1
            );
            if config.tau_backoff {
                tau *= 0.5;
                log::warn!("retrying with tau = {tau}");
                let (n2, s2) = newton_step_problem(problem, &state, tau, config)?;
                next = n2;
                steps += s2;
                e_next = problem.energy(&next.y);
            }
        }
        next.g = g_update(&next, tau)?;
        let rate = (e_prev - e_next).abs() / tau;
        let mu_norm = next.mu.l2_norm_p0(problem.mesh());
        let rec = IterationRecord {
            k: next.k,
            energy: e_next,
            rate,
            defect: problem.defect(&next.y),
            mu_norm,
            newton_steps: steps,
            tau,
        };
        log::info!(
            "k {:4}  E {:+.6e}  dE/tau {:.3e}  D {:.2e}  |mu| {:.3e}  newton {}",
            rec.k,
            rec.energy,
            rec.rate,
            rec.defect,
            rec.mu_norm,
            rec.newton_steps
        );
        log.push(rec);
        state = next;
        e_prev = e_next;
        last_rate = rate;
        if rate < config.tol || (config.mu_tol > 0.0 && mu_norm < config.mu_tol) {
            return Ok((state, log));
        }
    }
    Err(SolverError::OuterMaxExceeded {
        iterations: config.outer_max,
        last_rate,
    })
}

/// Load stepping parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub dt: f64,
    pub snapshot_times: Vec<f64>,
}

impl Schedule {
    pub fn n_steps(&self) -> usize {
        (1.0 / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadStepSummary {
    pub t: f64,
    pub outer_iters: usize,
    pub newton_steps: usize,
    pub energy: f64,
    pub defect: f64,
}

#[derive(Debug, Clone)]
pub struct ContinuationResult {
    pub snapshots: Vec<(f64, DGState)>,
    pub steps: Vec<LoadStepSummary>,
    pub final_state: DGState,
}

/// Ramps the boundary data through `t = dt, 2dt, …, 1`, running the proximal
/// loop warm-started from the previous load step each time.
pub fn continuation_drive(
    problem: &mut PlateProblem<'_>,
    initial: DGState,
    config: &SolverConfig,
    schedule: &Schedule,
    data_at: impl Fn(f64) -> BoundaryData,
    mut on_step: impl FnMut(&LoadStepSummary, &DGState, &IterationLog),
) -> Result<ContinuationResult, SolverError> {
    let mut snapshots = Vec::new();
    let mut steps = Vec::new();
    let is_snapshot = |t: f64| schedule.snapshot_times.iter().any(|s| (s - t).abs() < 0.5 * schedule.dt);
    if is_snapshot(0.0) {
        snapshots.push((0.0, initial.clone()));
    }
    let mut state = initial;
    for n in 1..=schedule.n_steps() {
        let t = n as f64 * schedule.dt;
        problem.set_data(&data_at(t));
        let (next, log) = proximal_loop(problem, state, config).map_err(|e| SolverError::LoadStepFailed {
            t,
            source: Box::new(e),
        })?;
        let summary = LoadStepSummary {
            t,
            outer_iters: log.len(),
            newton_steps: log.newton_total(),
            energy: log.final_energy(),
            defect: problem.defect(&next.y),
        };
        log::info!(
            "t {t:.4}  outer {}  newton {}  E {:+.6e}  D {:.2e}",
            summary.outer_iters,
            summary.newton_steps,
            summary.energy,
            summary.defect
        );
        on_step(&summary, &next, &log);
        steps.push(summary);
        if is_snapshot(t) {
            snapshots.push((t, next.clone()));
        }
        state = next;
    }
    Ok(ContinuationResult {
        snapshots,
        steps,
        final_state: state,
    })
}
