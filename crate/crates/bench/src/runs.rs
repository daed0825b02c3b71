//! Benchmark setups and the code that runs a configuration end to end.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use isoplate::dgspace::interpolate_v;
use isoplate::mesh::{MeshError, TriMesh};
use isoplate::solver::{
    continuation_drive, proximal_loop, DGState, IterationLog, LoadStepSummary, PlateProblem, SolverError,
};
use nalgebra::Vector3;
use thiserror::Error;

use crate::config::{
    ConfigError, ContinuationConfig, DataFamily, LoadConfig, MeshConfig, OutputConfig, PenaltyConfig, RunConfig,
    Side, SolverSection, SplitName,
};
use crate::families::boundary_data;
use crate::report::{export_csv, write_iteration_log, BenchmarkReport};
use crate::vtk::{export_vtk, max_deflection, VtkError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("mesh generation failed: {0}")]
    Mesh(#[from] MeshError),
    #[error("solver failed during {stage}: {source}")]
    Solver {
        stage: String,
        #[source]
        source: SolverError,
    },
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Vtk(#[from] VtkError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Grid sizes `n` of the `n × n` crisscross meshes of the square benchmarks
/// (400, 1,600, 6,400 and 14,400 cells).
pub const SQUARE_FAMILY: [usize; 4] = [10, 20, 40, 60];

fn square(n: usize, f3: f64, tau: f64) -> RunConfig {
    RunConfig {
        mesh: MeshConfig {
            x: [0.0, 4.0],
            y: [0.0, 4.0],
            nx: n,
            ny: n,
            split: SplitName::Crisscross,
            dirichlet: vec![Side::Left, Side::Bottom],
        },
        data: DataFamily::Flat,
        load: LoadConfig { f: [0.0, 0.0, f3] },
        penalty: PenaltyConfig::default(),
        solver: SolverSection {
            tau,
            tol: 1e-4,
            ..Default::default()
        },
        continuation: ContinuationConfig::default(),
        output: OutputConfig::default(),
    }
}

/// Clamped square under the upward load `2.5·10⁻² e₃`.
pub fn weak_force(n: usize) -> RunConfig {
    square(n, 2.5e-2, 2.0)
}

/// Clamped square under the upward load `e₃`.
pub fn strong_force(n: usize) -> RunConfig {
    square(n, 1.0, 5e-2)
}

/// Pseudo-time step of the buckling runs.
pub const BUCKLING_TAU: f64 = 0.1;

/// Strip `(−2, 2) × (0, 1)` clamped at both ends, which are pushed inward by
/// 1.4 each over the load ramp. The desk-scale mesh has 1,024 cells and 100
/// load steps; `paper_scale` uses 3,740 cells and 1,000 steps.
pub fn buckling(paper_scale: bool) -> RunConfig {
    let (nx, ny, split, dt) = if paper_scale {
        (85, 22, SplitName::TwoTriangle, 1e-3)
    } else {
        (32, 8, SplitName::Crisscross, 1e-2)
    };
    RunConfig {
        mesh: MeshConfig {
            x: [-2.0, 2.0],
            y: [0.0, 1.0],
            nx,
            ny,
            split,
            dirichlet: vec![Side::Left, Side::Right],
        },
        data: DataFamily::CompressedStrip { amount: 1.4 },
        load: LoadConfig { f: [0.0, 0.0, 1e-5] },
        penalty: PenaltyConfig::default(),
        solver: SolverSection {
            tau: BUCKLING_TAU,
            tol: 1e-3,
            ..Default::default()
        },
        continuation: ContinuationConfig {
            enabled: true,
            dt,
            ..Default::default()
        },
        output: OutputConfig::default(),
    }
}

fn flat_start(mesh: &TriMesh) -> Result<DGState, RunError> {
    DGState::initial(mesh, interpolate_v(mesh, |x| Vector3::new(x.x, x.y, 0.0))).map_err(|source| RunError::Solver {
        stage: "initial state".into(),
        source,
    })
}

fn problem<'m>(cfg: &RunConfig, mesh: &'m TriMesh, t: f64) -> PlateProblem<'m> {
    let f = Vector3::from(cfg.load.f);
    PlateProblem::new(mesh, cfg.penalty(), move |_| f, &boundary_data(cfg.data, t))
}

#[derive(Debug, Clone)]
pub struct StaticRun {
    pub report: BenchmarkReport,
    pub log: IterationLog,
    pub state: DGState,
}

/// Runs the proximal loop once, with the data at full load.
pub fn solve_static(cfg: &RunConfig, mesh: &TriMesh) -> Result<StaticRun, RunError> {
    let start = Instant::now();
    let mut p = problem(cfg, mesh, 1.0);
    let (state, log) = proximal_loop(&mut p, flat_start(mesh)?, &cfg.solver()).map_err(|source| RunError::Solver {
        stage: format!("proximal loop on {} cells", mesh.n_cells()),
        source,
    })?;
    let report = BenchmarkReport {
        cells: mesh.n_cells(),
        dofs: p.dofs().total(),
        energy: p.energy(&state.y),
        defect: p.defect(&state.y),
        outer_iters: log.len(),
        newton_total: log.newton_total(),
        wall_s: start.elapsed().as_secs_f64(),
    };
    Ok(StaticRun { report, log, state })
}

#[derive(Debug, Clone)]
pub struct ContinuationRun {
    pub report: BenchmarkReport,
    pub steps: Vec<LoadStepSummary>,
    pub snapshots: Vec<(f64, DGState)>,
    pub final_state: DGState,
    pub energy_increases: usize,
}

/// Ramps the data from `t = 0` to `t = 1`; `on_step` sees every load step.
pub fn solve_continuation(
    cfg: &RunConfig,
    mesh: &TriMesh,
    mut on_step: impl FnMut(&LoadStepSummary, &DGState, &IterationLog),
) -> Result<ContinuationRun, RunError> {
    let start = Instant::now();
    let mut p = problem(cfg, mesh, 0.0);
    let family = cfg.data;
    let mut increases = 0;
    let res = continuation_drive(
        &mut p,
        flat_start(mesh)?,
        &cfg.solver(),
        &cfg.schedule(),
        |t| boundary_data(family, t),
        |s, st, log| {
            increases += log.energy_increases();
            on_step(s, st, log);
        },
    )
    .map_err(|source| RunError::Solver {
        stage: "continuation".into(),
        source,
    })?;
    let last = res.steps.last().copied();
    let report = BenchmarkReport {
        cells: mesh.n_cells(),
        dofs: p.dofs().total(),
        energy: last.map_or(0.0, |s| s.energy),
        defect: p.defect(&res.final_state.y),
        outer_iters: res.steps.iter().map(|s| s.outer_iters).sum(),
        newton_total: res.steps.iter().map(|s| s.newton_steps).sum(),
        wall_s: start.elapsed().as_secs_f64(),
    };
    Ok(ContinuationRun {
        report,
        steps: res.steps,
        snapshots: res.snapshots,
        final_state: res.final_state,
        energy_increases: increases,
    })
}

/// What [`execute`] wrote and found.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub report: BenchmarkReport,
    pub energy_increases: usize,
    pub max_deflection: f64,
    pub vtk_files: Vec<PathBuf>,
    pub out_dir: PathBuf,
}

pub fn snapshot_name(t: f64) -> String {
    format!("snapshot_t{t:.3}.vtk")
}

/// Runs `cfg` and writes into its output directory: `config.toml` (the
/// source file verbatim if given, else the serialized config),
/// `report.csv`, `iterations.log` and the VTK files.
pub fn execute(cfg: &RunConfig, source: Option<&Path>) -> Result<RunSummary, RunError> {
    cfg.validate()?;
    let dir = cfg.output.dir.clone();
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let cfg_path = dir.join("config.toml");
    match source {
        Some(src) => fs::copy(src, &cfg_path).map(|_| ()),
        None => fs::write(&cfg_path, cfg.to_toml()),
    }
    .map_err(io_err(&cfg_path))?;

    let mesh = cfg.build_mesh()?;
    log::info!("{} cells, {} unknowns", mesh.n_cells(), BenchmarkReport::dofs_for(mesh.n_cells()));
    let log_path = dir.join("iterations.log");
    let mut log_file = BufWriter::new(File::create(&log_path).map_err(io_err(&log_path))?);
    let mut vtk_files = Vec::new();
    let (report, increases, y) = if cfg.continuation.enabled {
        let mut write_err = None;
        let run = solve_continuation(cfg, &mesh, |s, _, log| {
            let r = writeln!(log_file, "# load step t = {:.6}", s.t).and_then(|_| write_iteration_log(&mut log_file, log));
            if let Err(e) = r {
                write_err.get_or_insert(e);
            }
        })?;
        if let Some(e) = write_err {
            return Err(io_err(&log_path)(e));
        }
        if cfg.output.vtk {
            for (t, st) in &run.snapshots {
                let path = dir.join(snapshot_name(*t));
                export_vtk(&path, &mesh, &st.y, &format!("load t = {t}"))?;
                vtk_files.push(path);
            }
        }
        (run.report, run.energy_increases, run.final_state.y)
    } else {
        let run = solve_static(cfg, &mesh)?;
        write_iteration_log(&mut log_file, &run.log).map_err(io_err(&log_path))?;
        (run.report, run.log.energy_increases(), run.state.y)
    };
    log_file.flush().map_err(io_err(&log_path))?;
    if cfg.output.vtk {
        let path = dir.join("final.vtk");
        export_vtk(&path, &mesh, &y, "final state")?;
        vtk_files.push(path);
    }
    let csv_path = dir.join("report.csv");
    export_csv(&csv_path, &[report]).map_err(io_err(&csv_path))?;
    Ok(RunSummary {
        report,
        energy_increases: increases,
        max_deflection: max_deflection(&mesh, &y),
        vtk_files,
        out_dir: dir,
    })
}

/// Runs each configuration into `out/cells_<n>` and collects the rows in
/// `out/report.csv`.
pub fn sweep(configs: &[RunConfig], out: &Path) -> Result<Vec<RunSummary>, RunError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut summaries = Vec::new();
    for cfg in configs {
        let mut cfg = cfg.clone();
        cfg.output.dir = out.join(format!("cells_{}", cfg.cells()));
        let s = execute(&cfg, None)?;
        log::info!(
            "{} cells: E_h {:.4e}, D_h {:.2e}, {} iterations, {} Newton steps, {:.1} s",
            s.report.cells,
            s.report.energy,
            s.report.defect,
            s.report.outer_iters,
            s.report.newton_total,
            s.report.wall_s
        );
        summaries.push(s);
    }
    let rows: Vec<_> = summaries.iter().map(|s| s.report).collect();
    let csv_path = out.join("report.csv");
    export_csv(&csv_path, &rows).map_err(io_err(&csv_path))?;
    Ok(summaries)
}
