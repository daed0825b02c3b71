//! Run configuration, read from a TOML file.
//!
//! ```toml
//! [mesh]
//! x = [0.0, 4.0]
//! y = [0.0, 4.0]
//! nx = 10
//! ny = 10
//! split = "crisscross"
//! dirichlet = ["left", "bottom"]
//!
//! [data]
//! family = "flat"            # or "compressed_strip" with `amount = 1.4`
//!
//! [load]
//! f = [0.0, 0.0, 2.5e-2]
//! ```
//!
//! The remaining sections (`penalty`, `solver`, `continuation`, `output`)
//! are optional and default to the values below.

use std::fs;
use std::path::{Path, PathBuf};

use isoplate::forms::PenaltyParams;
use isoplate::mesh::{build_structured, Point2, Rect, Split, TriMesh};
use isoplate::solver::{Schedule, SolverConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mesh: MeshConfig,
    pub data: DataFamily,
    #[serde(default)]
    pub load: LoadConfig,
    #[serde(default)]
    pub penalty: PenaltyConfig,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub continuation: ContinuationConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub nx: usize,
    pub ny: usize,
    #[serde(default)]
    pub split: SplitName,
    /// Sides of the rectangle carrying Dirichlet data.
    pub dirichlet: Vec<Side>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    TwoTriangle,
    #[default]
    Crisscross,
}

impl From<SplitName> for Split {
    fn from(s: SplitName) -> Self {
        match s {
            SplitName::TwoTriangle => Split::TwoTriangle,
            SplitName::Crisscross => Split::Crisscross,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

/// Named analytic boundary data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataFamily {
    /// `y_D = (x₁, x₂, 0)`, `G_D = (n₁, n₂, 0)`.
    Flat,
    /// `y_D = (x₁ − sign(x₁)·amount·t, x₂, 0)`, `G_D = (n₁, n₂, 0)`, with the
    /// load parameter `t` ramped from 0 to 1 under continuation.
    CompressedStrip { amount: f64 },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadConfig {
    pub f: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyConfig {
    pub eta0: f64,
    pub eta1: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        let p = PenaltyParams::default();
        Self {
            eta0: p.eta0,
            eta1: p.eta1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub tau: f64,
    pub tol: f64,
    pub mu_tol: f64,
    pub newton_tol: f64,
    pub newton_max: usize,
    pub outer_max: usize,
    pub tau_backoff: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        let c = SolverConfig::default();
        Self {
            tau: c.tau,
            tol: c.tol,
            mu_tol: c.mu_tol,
            newton_tol: c.newton_tol,
            newton_max: c.newton_max,
            outer_max: c.outer_max,
            tau_backoff: c.tau_backoff,
        }
    }
}

/// Times at which the buckling figures are drawn.
pub const FIGURE_TIMES: [f64; 6] = [0.05, 0.1, 0.25, 0.6, 0.75, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuationConfig {
    pub enabled: bool,
    pub dt: f64,
    pub snapshots: Vec<f64>,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            dt: 1e-2,
            snapshots: FIGURE_TIMES.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write VTK files of the final state and of continuation snapshots.
    pub vtk: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            vtk: true,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        text.parse()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        let m = &self.mesh;
        if !(m.x[0] < m.x[1] && m.y[0] < m.y[1]) {
            return bad(format!("empty domain {:?} x {:?}", m.x, m.y));
        }
        if m.nx == 0 || m.ny == 0 {
            return bad("mesh.nx and mesh.ny must be positive".into());
        }
        if m.dirichlet.is_empty() {
            return bad("mesh.dirichlet names no side; the energy would have no minimizer".into());
        }
        if !(self.penalty.eta0 > 0.0 && self.penalty.eta1 > 0.0) {
            return bad("penalty parameters must be positive".into());
        }
        let s = &self.solver;
        if !(s.tau > 0.0 && s.tol > 0.0 && s.newton_tol > 0.0 && s.mu_tol >= 0.0) {
            return bad("solver.tau, solver.tol and solver.newton_tol must be positive".into());
        }
        if s.newton_max == 0 || s.outer_max == 0 {
            return bad("iteration limits must be positive".into());
        }
        if let DataFamily::CompressedStrip { amount } = self.data {
            if !amount.is_finite() {
                return bad("compressed_strip amount must be finite".into());
            }
        }
        if self.load.f.iter().any(|v| !v.is_finite()) {
            return bad("load.f must be finite".into());
        }
        let c = &self.continuation;
        if c.enabled {
            let n = 1.0 / c.dt;
            if !(c.dt > 0.0 && c.dt <= 1.0) || (n - n.round()).abs() > 1e-9 * n {
                return bad(format!("continuation.dt = {} does not divide [0, 1]", c.dt));
            }
            if c.snapshots.iter().any(|t| !(0.0..=1.0).contains(t)) {
                return bad("continuation.snapshots must lie in [0, 1]".into());
            }
        }
        Ok(())
    }

    pub fn rect(&self) -> Rect {
        Rect::new(self.mesh.x[0], self.mesh.x[1], self.mesh.y[0], self.mesh.y[1])
    }

    pub fn build_mesh(&self) -> Result<TriMesh, isoplate::mesh::MeshError> {
        let r = self.rect();
        let tol = 1e-12 * (r.x1 - r.x0).max(r.y1 - r.y0);
        let sides = self.mesh.dirichlet.clone();
        let mesh = build_structured(self.mesh.nx, self.mesh.ny, r, self.mesh.split.into())?;
        Ok(mesh.classify_edges(move |p: &Point2| {
            sides.iter().any(|s| match s {
                Side::Left => (p.x - r.x0).abs() < tol,
                Side::Right => (p.x - r.x1).abs() < tol,
                Side::Bottom => (p.y - r.y0).abs() < tol,
                Side::Top => (p.y - r.y1).abs() < tol,
            })
        }))
    }

    pub fn cells(&self) -> usize {
        let per_rect = match self.mesh.split {
            SplitName::TwoTriangle => 2,
            SplitName::Crisscross => 4,
        };
        per_rect * self.mesh.nx * self.mesh.ny
    }

    pub fn penalty(&self) -> PenaltyParams {
        PenaltyParams {
            eta0: self.penalty.eta0,
            eta1: self.penalty.eta1,
        }
    }

    pub fn solver(&self) -> SolverConfig {
        let s = &self.solver;
        SolverConfig {
            tau: s.tau,
            tol: s.tol,
            mu_tol: s.mu_tol,
            newton_tol: s.newton_tol,
            newton_max: s.newton_max,
            outer_max: s.outer_max,
            tau_backoff: s.tau_backoff,
        }
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            dt: self.continuation.dt,
            snapshot_times: self.continuation.snapshots.clone(),
        }
    }
}

impl std::str::FromStr for RunConfig {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
