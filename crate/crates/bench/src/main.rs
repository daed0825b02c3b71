use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use isoplate::stiefel_checks;
use isoplate_bench::config::{RunConfig, SplitName};
use isoplate_bench::runs::{self, RunError, SQUARE_FAMILY};

#[derive(Parser)]
#[command(name = "isoplate", version, about = "Kirchhoff plates with an exact barycentric isometry constraint")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clamped square under the load 2.5e-2 e3, over the mesh family.
    WeakForce(SweepArgs),
    /// Clamped square under the load e3, over the mesh family.
    StrongForce(SweepArgs),
    /// Compressed strip, loaded quasi-statically.
    Buckling {
        #[command(flatten)]
        common: Common,
        /// 3,740 cells and 1,000 load steps instead of the desk-scale setup.
        #[arg(long)]
        paper_scale: bool,
    },
    /// Run a TOML configuration file.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Randomized property checks of the Stiefel kernels.
    StiefelCheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Skip family meshes with more cells than this.
    #[arg(long)]
    max_cells: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    TwoTriangle,
    Crisscross,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    eta0: Option<f64>,
    #[arg(long)]
    eta1: Option<f64>,
    /// Grid rectangles along x; for sweeps, replaces the family by one mesh.
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    ny: Option<usize>,
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Halve tau and retry once when an outer step raises the energy.
    #[arg(long)]
    tau_backoff: bool,
}

impl Common {
    fn apply(&self, cfg: &mut RunConfig) {
        let s = &mut cfg.solver;
        s.tau = self.tau.unwrap_or(s.tau);
        s.tol = self.tol.unwrap_or(s.tol);
        s.tau_backoff |= self.tau_backoff;
        cfg.penalty.eta0 = self.eta0.unwrap_or(cfg.penalty.eta0);
        cfg.penalty.eta1 = self.eta1.unwrap_or(cfg.penalty.eta1);
        cfg.mesh.nx = self.nx.unwrap_or(cfg.mesh.nx);
        cfg.mesh.ny = self.ny.unwrap_or(cfg.mesh.ny);
        if let Some(split) = self.split {
            cfg.mesh.split = match split {
                SplitArg::TwoTriangle => SplitName::TwoTriangle,
                SplitArg::Crisscross => SplitName::Crisscross,
            };
        }
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
    }
}

fn sweep(args: &SweepArgs, preset: fn(usize) -> RunConfig, name: &str) -> Result<(), RunError> {
    let mut configs: Vec<RunConfig> = if args.common.nx.is_some() || args.common.ny.is_some() {
        vec![preset(args.common.nx.or(args.common.ny).unwrap())]
    } else {
        SQUARE_FAMILY.iter().map(|&n| preset(n)).collect()
    };
    for c in &mut configs {
        args.common.apply(c);
    }
    configs.retain(|c| args.max_cells.is_none_or(|m| c.cells() <= m));
    let out = args.common.out.clone().unwrap_or_else(|| PathBuf::from(format!("out/{name}")));
    let summaries = runs::sweep(&configs, &out)?;
    println!("cells  dofs     E_h         D_h       iters  newton  wall_s");
    for s in &summaries {
        let r = &s.report;
        println!(
            "{:<6} {:<8} {:<11.4e} {:<9.2e} {:<6} {:<7} {:.1}",
            r.cells, r.dofs, r.energy, r.defect, r.outer_iters, r.newton_total, r.wall_s
        );
    }
    println!("wrote {}", out.join("report.csv").display());
    Ok(())
}

fn single(cfg: &RunConfig, source: Option<&std::path::Path>) -> Result<(), RunError> {
    let s = runs::execute(cfg, source)?;
    let r = &s.report;
    println!(
        "{} cells: E_h {:.4e}, D_h {:.2e}, {} outer iterations, {} Newton steps, max |y3| {:.4}, {:.1} s",
        r.cells, r.energy, r.defect, r.outer_iters, r.newton_total, s.max_deflection, r.wall_s
    );
    if s.energy_increases > 0 {
        println!("warning: the energy increased in {} outer steps", s.energy_increases);
    }
    println!("wrote {}", s.out_dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<bool, RunError> {
    match cli.command {
        Command::WeakForce(args) => sweep(&args, runs::weak_force, "weak-force")?,
        Command::StrongForce(args) => sweep(&args, runs::strong_force, "strong-force")?,
        Command::Buckling { common, paper_scale } => {
            let mut cfg = runs::buckling(paper_scale);
            cfg.output.dir = PathBuf::from("out/buckling");
            common.apply(&mut cfg);
            single(&cfg, None)?;
        }
        Command::Run { config, common } => {
            let mut cfg = RunConfig::from_file(&config)?;
            common.apply(&mut cfg);
            single(&cfg, Some(&config))?;
        }
        Command::StiefelCheck { seed } => {
            let mut ok = true;
            for c in stiefel_checks::run_all(seed) {
                let status = if c.passed() { "PASS" } else { "FAIL" };
                println!(
                    "{status}  {:<55} worst {:.3e} in [{:e}, {:e}] over {} samples",
                    c.name, c.worst, c.range.0, c.range.1, c.samples
                );
                ok &= c.passed();
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
