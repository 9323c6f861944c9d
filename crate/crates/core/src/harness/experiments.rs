//! Experiment sweeps over the pipeline: the bandwidth-accuracy trade-off,
//! the robustness axes (latency, pose noise, token drop), and the component
//! ablation grid. Every sweep reuses one base configuration and varies a
//! single knob, so rows are comparable and the whole table is reproducible
//! from (config, seed).

use crate::error::Result;
use crate::scalar::Real;

use super::pipeline::{run, RunConfig, RunMode, RunResult};

#[derive(Debug, Clone)]
pub struct BandwidthRow<T> {
    pub threshold: T,
    pub mean_cells_per_frame: f64,
    pub mean_comm_log2mb: Option<T>,
    /// Dense transmitted cells / actual transmitted cells.
    pub compression: Option<f64>,
    pub ap50: Option<T>,
    pub ap70: Option<T>,
}

#[derive(Debug, Clone)]
pub struct BandwidthSweep<T> {
    /// Dense-transmission reference, computed first as the oracle.
    pub dense_ap50: Option<T>,
    pub dense_ap70: Option<T>,
    pub dense_comm_log2mb: Option<T>,
    pub rows: Vec<BandwidthRow<T>>,
}

/// One pipeline run per threshold, shared seed, plus the dense baseline.
pub fn sweep_bandwidth<T: Real>(
    base: &RunConfig<T>,
    thresholds: &[T],
) -> Result<BandwidthSweep<T>> {
    let mut dense_cfg = base.clone();
    dense_cfg.mode = RunMode::DenseBaseline;
    let dense = run(&dense_cfg)?;

    let mut rows = Vec::with_capacity(thresholds.len());
    for &threshold in thresholds {
        let mut cfg = base.clone();
        cfg.mode = RunMode::Stt;
        cfg.stt.threshold = threshold;
        let r = run(&cfg)?;
        rows.push(BandwidthRow {
            threshold,
            mean_cells_per_frame: r.mean_cells_per_frame(),
            mean_comm_log2mb: mean_comm(&r),
            compression: r.compression_ratio(),
            ap50: r.mean_ap50.overall,
            ap70: r.mean_ap70.overall,
        });
    }
    Ok(BandwidthSweep {
        dense_ap50: dense.mean_ap50.overall,
        dense_ap70: dense.mean_ap70.overall,
        dense_comm_log2mb: mean_comm(&dense),
        rows,
    })
}

/// log2 of the mean per-frame transmitted megabytes.
fn mean_comm<T: Real>(r: &RunResult<T>) -> Option<T> {
    if r.rows.is_empty() || r.total_cells == 0 {
        return None;
    }
    let mean_cells = T::c(r.mean_cells_per_frame());
    let c = T::c(r.channels as f64);
    Some((mean_cells * c * T::c(16.0) / T::c((8u64 << 20) as f64)).log2())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RobustnessAxis {
    LatencyMs,
    PosStd,
    RotStd,
    DropProb,
}

impl RobustnessAxis {
    pub fn as_str(&self) -> &'static str {
        match self {
            RobustnessAxis::LatencyMs => "latency_ms",
            RobustnessAxis::PosStd => "pos_std",
            RobustnessAxis::RotStd => "rot_std",
            RobustnessAxis::DropProb => "drop_prob",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "latency" | "latency_ms" => Ok(RobustnessAxis::LatencyMs),
            "pos-std" | "pos_std" => Ok(RobustnessAxis::PosStd),
            "rot-std" | "rot_std" => Ok(RobustnessAxis::RotStd),
            "drop-prob" | "drop_prob" => Ok(RobustnessAxis::DropProb),
            other => Err(crate::error::Error::config(format!(
                "unknown robustness axis '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RobustnessRow<T> {
    pub value: f64,
    pub ap50: Option<T>,
    pub ap70: Option<T>,
    pub total_bytes: u64,
}

#[derive(Debug, Clone)]
pub struct RobustnessSweep<T> {
    pub axis: RobustnessAxis,
    pub rows: Vec<RobustnessRow<T>>,
}

/// One run per perturbation value, everything else fixed.
pub fn sweep_robustness<T: Real>(
    base: &RunConfig<T>,
    axis: RobustnessAxis,
    values: &[f64],
) -> Result<RobustnessSweep<T>> {
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut cfg = base.clone();
        match axis {
            RobustnessAxis::LatencyMs => cfg.noise.latency_ms = value.round() as u32,
            RobustnessAxis::PosStd => cfg.noise.pos_std_m = T::c(value),
            RobustnessAxis::RotStd => cfg.noise.rot_std_rad = T::c(value),
            RobustnessAxis::DropProb => cfg.noise.token_drop_prob = T::c(value),
        }
        let r = run(&cfg)?;
        rows.push(RobustnessRow {
            value,
            ap50: r.mean_ap50.overall,
            ap70: r.mean_ap70.overall,
            total_bytes: r.total_bytes,
        });
    }
    Ok(RobustnessSweep { axis, rows })
}

#[derive(Debug, Clone)]
pub struct AblationRow<T> {
    pub at: bool,
    pub temporal: bool,
    pub ap50: Option<T>,
    pub ap70: Option<T>,
    /// Largest fusion input count observed over the run.
    pub max_fusion_inputs: usize,
}

#[derive(Debug, Clone)]
pub struct AblationTable<T> {
    pub rows: Vec<AblationRow<T>>,
}

/// The four-row component grid: spatial attention always on, the align
/// transformation and the historical agent toggled. The relative ordering
/// of rows is reported, not asserted — untrained parameters need not
/// reproduce trained deltas.
pub fn ablation<T: Real>(base: &RunConfig<T>) -> Result<AblationTable<T>> {
    let mut rows = Vec::with_capacity(4);
    for (at, temporal) in [(false, false), (true, false), (false, true), (true, true)] {
        let mut cfg = base.clone();
        cfg.mode = RunMode::Stt;
        cfg.enable_at = at;
        cfg.use_history = temporal;
        let r = run(&cfg)?;
        rows.push(AblationRow {
            at,
            temporal,
            ap50: r.mean_ap50.overall,
            ap70: r.mean_ap70.overall,
            max_fusion_inputs: r.rows.iter().map(|row| row.fusion_inputs).max().unwrap_or(0),
        });
    }
    Ok(AblationTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_scenario, GenConfig, GridSpec};

    fn base() -> RunConfig<f64> {
        let cfg = GenConfig {
            grid: GridSpec { height: 32, width: 32, channels: 16, resolution: 0.5 },
            frames: 4,
            frame_period_s: 0.1,
            num_agents: 2,
            static_objects: 2,
            dynamic_objects: 1,
            sensing_range_m: 12.0,
            world_radius_m: 6.5,
        };
        RunConfig::new(generate_scenario(&cfg, 19).unwrap(), RunMode::Stt)
    }

    #[test]
    fn bandwidth_sweep_token_counts_are_monotone() {
        let sweep = sweep_bandwidth(&base(), &[0.0001, 0.01, 0.3, 1.0]).unwrap();
        let cells: Vec<f64> = sweep.rows.iter().map(|r| r.mean_cells_per_frame).collect();
        for pair in cells.windows(2) {
            assert!(pair[0] >= pair[1], "token counts must not grow: {cells:?}");
        }
        // endpoints: near-dense at 0.0001, empty transmission at 1.0 on a
        // mask bounded by E*(0.5 + D) with E <= 1
        assert!(sweep.rows[0].compression.unwrap() < 4.0);
    }

    #[test]
    fn sweep_endpoints_are_dense_equivalent_and_silent() {
        // threshold 0 selects every cell (the mask is strictly positive);
        // threshold 1 + rho exceeds the mask's upper bound, so nothing goes.
        let b = base();
        let rho = b.stt.rho;
        let sweep = sweep_bandwidth(&b, &[0.0, 1.0 + rho]).unwrap();
        let dense_cells = (b.scenario.agents.len() - 1) as f64
            * (b.scenario.grid.height * b.scenario.grid.width) as f64;
        assert_eq!(sweep.rows[0].mean_cells_per_frame, dense_cells);
        assert_eq!(sweep.rows[1].mean_cells_per_frame, 0.0);
        assert!(sweep.rows[1].mean_comm_log2mb.is_none());
    }

    #[test]
    fn ablation_grid_has_expected_input_counts() {
        let table = ablation(&base()).unwrap();
        assert_eq!(table.rows.len(), 4);
        for row in &table.rows {
            // 2 agents; +1 only when temporal is on (after warm-up)
            let expect = if row.temporal { 3 } else { 2 };
            assert_eq!(row.max_fusion_inputs, expect, "at={} temporal={}", row.at, row.temporal);
        }
    }

    #[test]
    fn robustness_zero_row_matches_clean_run() {
        let b = base();
        let clean = run(&b).unwrap();
        let sweep = sweep_robustness(&b, RobustnessAxis::PosStd, &[0.0, 0.1]).unwrap();
        assert_eq!(sweep.rows[0].ap50, clean.mean_ap50.overall);
        assert_eq!(sweep.rows[0].total_bytes, clean.total_bytes);
    }
}
