//! Benchmark tables (CSV) and per-iteration logs.

use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use isoplate::solver::IterationLog;
use serde::Deserialize;

pub const CSV_HEADER: [&str; 7] = ["cells", "dofs", "E_h", "D_h", "outer_iters", "newton_total", "wall_s"];

/// One row of a benchmark table.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct BenchmarkReport {
    pub cells: usize,
    pub dofs: usize,
    #[serde(rename = "E_h")]
    pub energy: f64,
    #[serde(rename = "D_h")]
    pub defect: f64,
    pub outer_iters: usize,
    pub newton_total: usize,
    pub wall_s: f64,
}

impl BenchmarkReport {
    /// Every cell carries 18 + 6 + 3 unknowns.
    pub fn dofs_for(cells: usize) -> usize {
        27 * cells
    }
}

pub fn write_csv<W: Write>(out: W, reports: &[BenchmarkReport]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in reports {
        w.write_record([
            r.cells.to_string(),
            r.dofs.to_string(),
            format!("{:.2e}", r.energy),
            format!("{:.2e}", r.defect),
            r.outer_iters.to_string(),
            r.newton_total.to_string(),
            format!("{:.2e}", r.wall_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_csv(path: &Path, reports: &[BenchmarkReport]) -> io::Result<()> {
    let file = File::create(path)?;
    write_csv(file, reports).map_err(io::Error::other)
}

pub fn parse_csv(text: &str) -> csv::Result<Vec<BenchmarkReport>> {
    csv::Reader::from_reader(text.as_bytes()).deserialize().collect()
}

pub fn write_iteration_log<W: Write>(mut out: W, log: &IterationLog) -> io::Result<()> {
    writeln!(out, "# k E_h dE/tau D_h mu_l2 newton tau")?;
    writeln!(out, "0 {:.10e} - - - 0 -", log.initial_energy)?;
    for r in &log.records {
        writeln!(
            out,
            "{} {:.10e} {:.3e} {:.3e} {:.3e} {} {}",
            r.k, r.energy, r.rate, r.defect, r.mu_norm, r.newton_steps, r.tau
        )?;
    }
    Ok(())
}
