//! The executable surface behind the CLI: the per-frame pipeline driver
//! (extract, transmit, reconstruct, fuse, detect, evaluate), experiment
//! sweeps, gradient checks, and results persistence.

mod experiments;
mod gradcheck;
mod io;
mod pipeline;

pub use experiments::{
    ablation, sweep_bandwidth, sweep_robustness, AblationRow, AblationTable, BandwidthRow,
    BandwidthSweep, RobustnessAxis, RobustnessRow, RobustnessSweep,
};
pub use gradcheck::{run_gradcheck, ComponentReport, GradCheckReport};
pub use io::{frames_csv, summary_json, write_run_outputs, RunSummary};
pub use pipeline::{run, FrameRow, RunConfig, RunMode, RunResult};
