//! The recurrent fusion step: gather the ego grid, the reconstructed
//! collaborator grids (already in the ego frame), and — when available — the
//! previous fusion result projected to the current pose and tagged as one
//! extra delayed agent; inject metadata; run deformable attention with the
//! ego cells as queries; store the result back into the memory bank's fused
//! slot. Cost per frame is bounded by N+1 grids no matter how long the run.

use crate::error::{Error, Result};
use crate::grid::{warp_to_frame, FeatureGrid, LinearHead, Pose};
use crate::memory::MemoryBank;
use crate::scalar::Real;

use super::mada::{mada, MadaDiagnostics};
use super::{align_transform, AgentMeta, AlignParams, MadaParams};

/// Reference points for grid-shaped queries: each cell attends at its own
/// (h, w) coordinate.
pub fn own_cell_ref_points<T: Real>(grid: &FeatureGrid<T>) -> Vec<(T, T)> {
    let mut out = Vec::with_capacity(grid.cells());
    for h in 0..grid.height() {
        for w in 0..grid.width() {
            out.push((T::c(h as f64), T::c(w as f64)));
        }
    }
    out
}

/// Where an input's sensor sits (world frame) and how far it sees. Shared
/// during the metadata stage, so the ego may use it to judge whose
/// known-empty claims to trust.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sensor<T> {
    pub x: T,
    pub y: T,
    pub range_m: T,
}

/// One fusion input: a grid in the ego frame plus its metadata.
#[derive(Debug, Clone)]
pub struct FusionAgent<T> {
    pub grid: FeatureGrid<T>,
    pub meta: AgentMeta<T>,
    /// None for inputs without a live sensor (the historical agent).
    pub sensor: Option<Sensor<T>>,
}

/// Saliency-routed queries: the untrained attention cannot know which input
/// observed a cell, so the pipeline writes a per-input trust score into a
/// reserved query channel (`base_channel + input slot`). The score is the
/// rectified confidence-head response — positive evidence attracts
/// attention — and, inside an input's sensing footprint (shrunk by a
/// margin), rectified *negative* responses count too, so a confident
/// "empty" from a live sensor outvotes a stale "object" from history.
/// Paired with weight-generator rows that read those channels, attention
/// concentrates on the inputs that actually know something about a cell.
/// Uses only information the ego already holds.
#[derive(Debug, Clone, Copy)]
pub struct QueryRouting<'a, T> {
    pub head: &'a LinearHead<T>,
    pub base_channel: usize,
    /// Shrinks the confident-empty footprint; at least the circumradius of
    /// the largest object, so cells of a barely-out-of-range object are
    /// never treated as confidently empty.
    pub trust_margin_m: T,
    /// Multiplier on the historical agent's positive score: fresh
    /// observations win ties against remembered ones.
    pub history_discount: T,
}

impl<'a, T: Real> QueryRouting<'a, T> {
    pub fn new(head: &'a LinearHead<T>, base_channel: usize) -> Self {
        QueryRouting {
            head,
            base_channel,
            trust_margin_m: T::c(2.5),
            history_discount: T::c(0.5),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct UstfContext<T> {
    pub ego_pose: Pose<T>,
    pub frame: u32,
    pub frame_period_s: T,
    /// Temporal interval: the fused slot is refreshed only when at least
    /// this many frames have passed since it was last written, so it always
    /// holds the fusion result from about tau frames back.
    pub tau: u32,
}

#[derive(Debug, Clone, Copy)]
pub struct UstfOptions<T> {
    /// Inject the projected previous fusion result as an extra agent.
    pub use_history: bool,
    /// Apply the align transformation (identity when disabled).
    pub enable_at: bool,
    pub collect_diagnostics: bool,
    /// Channel fix-up applied to the projected history, given the yaw
    /// change `old_yaw - new_yaw`. Spatial warping alone cannot know which
    /// channels encode frame-dependent vectors; backbones that carry such
    /// channels supply their re-expression here.
    pub history_reframe: Option<fn(&mut FeatureGrid<T>, T)>,
}

impl<T> Default for UstfOptions<T> {
    fn default() -> Self {
        UstfOptions {
            use_history: true,
            enable_at: true,
            collect_diagnostics: false,
            history_reframe: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FusionOutput<T> {
    pub fused: FeatureGrid<T>,
    /// Number of grids that entered the attention (N current agents, plus
    /// one when the historical agent was injected).
    pub input_count: usize,
    pub history_used: bool,
    pub diagnostics: Option<MadaDiagnostics<T>>,
}

/// One fusion step. `ego` comes first; `others` are the reconstructed
/// collaborator grids, already warped into the ego frame.
pub fn ustf_step<T: Real>(
    ego: &FusionAgent<T>,
    others: &[FusionAgent<T>],
    bank: &mut MemoryBank<T>,
    ctx: &UstfContext<T>,
    params: &MadaParams<T>,
    routing: Option<QueryRouting<'_, T>>,
    opts: &UstfOptions<T>,
) -> Result<FusionOutput<T>> {
    // Assemble the fusion inputs: ego first, then collaborators, then the
    // projected history as a delayed extra agent.
    let mut grids: Vec<&FeatureGrid<T>> = Vec::with_capacity(others.len() + 2);
    let mut metas: Vec<AgentMeta<T>> = Vec::with_capacity(others.len() + 2);
    let mut sensors: Vec<Option<Sensor<T>>> = Vec::with_capacity(others.len() + 2);
    grids.push(&ego.grid);
    metas.push(ego.meta);
    sensors.push(ego.sensor);
    for a in others {
        grids.push(&a.grid);
        metas.push(a.meta);
        sensors.push(a.sensor);
    }

    let mut history_used = false;
    let projected_history;
    if opts.use_history {
        if let Some(slot) = bank.get_fused() {
            let gap = ctx.frame.saturating_sub(slot.frame);
            let mut projected = warp_to_frame(&slot.grid, &slot.pose, &ctx.ego_pose);
            if let Some(reframe) = opts.history_reframe {
                reframe(&mut projected, slot.pose.yaw - ctx.ego_pose.yaw);
            }
            projected_history = projected;
            grids.push(&projected_history);
            metas.push(AgentMeta::historical(T::c(gap as f64) * ctx.frame_period_s));
            sensors.push(None);
            history_used = true;
        }
    }
    let input_count = grids.len();

    let identity_at;
    let at: &AlignParams<T> = if opts.enable_at {
        params.align()
    } else {
        identity_at = AlignParams::identity(params.channels());
        &identity_at
    };
    let aligned = align_transform(&grids, &metas, at)?;
    let aligned_refs: Vec<&FeatureGrid<T>> = aligned.iter().collect();

    // Queries: the ego grid cells, optionally annotated with per-input
    // trust scores in reserved channels.
    let mut queries = ego.grid.clone();
    if let Some(r) = routing {
        if r.base_channel + input_count > queries.channels() {
            return Err(Error::config(format!(
                "routing channels {}..{} exceed {} query channels",
                r.base_channel,
                r.base_channel + input_count,
                queries.channels()
            )));
        }
        let history_index = input_count - usize::from(history_used);
        for (i, grid) in aligned.iter().enumerate() {
            let response = r.head.apply(grid)?;
            let is_history = history_used && i == history_index;
            // confident-empty footprint of this input, in the ego frame
            let footprint = sensors[i].map(|s| {
                let (lx, ly) = ctx.ego_pose.world_to_local(s.x, s.y);
                (lx, ly, (s.range_m - r.trust_margin_m).max(T::zero()))
            });
            for h in 0..queries.height() {
                for w in 0..queries.width() {
                    let logit = response.value(h, w);
                    let mut score = logit.max(T::zero());
                    if let Some((fx, fy, reach)) = footprint {
                        let (cx, cy) = queries.cell_center_local(h, w);
                        if (cx - fx).hypot(cy - fy) <= reach {
                            score += (-logit).max(T::zero());
                        }
                    }
                    if is_history {
                        score *= r.history_discount;
                    }
                    queries.set(h, w, r.base_channel + i, score);
                }
            }
        }
    }

    let refs = own_cell_ref_points(&queries);
    let out = mada(&queries, &refs, &aligned_refs, params, opts.collect_diagnostics)?;

    // Refresh the fused slot at the configured interval so it keeps the
    // fusion result from about tau frames back.
    let should_store = match bank.get_fused() {
        None => true,
        Some(slot) => ctx.frame > slot.frame && ctx.frame - slot.frame >= ctx.tau,
    };
    if should_store {
        bank.put_fused(out.fused.clone(), ctx.ego_pose, ctx.frame)?;
    }

    Ok(FusionOutput {
        fused: out.fused,
        input_count,
        history_used,
        diagnostics: out.diagnostics,
    })
}
