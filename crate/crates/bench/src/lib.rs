//! Benchmark setups, run configuration and exporters for the `isoplate`
//! command line tool.

pub mod config;
pub mod families;
pub mod report;
pub mod runs;
pub mod vtk;
