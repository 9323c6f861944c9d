//! The per-frame pipeline: rasterize each agent, run the sender-side
//! transmission protocol, inject faults, reconstruct at the ego, fuse, run
//! the detection heads, and evaluate against the union ground truth.
//!
//! Senders keep a mirror of their last reconstructed feature so their
//! saliency history matches what the receiver holds (both reconstruct from
//! the same token stream). Reconstruction happens in the sender's frame —
//! token cells land exactly — and the result is warped into the ego frame
//! for fusion using the pose the message carried, which is where pose noise
//! and staleness take their toll.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::detect::{
    classify, decode_boxes, evaluate_ap, regress, write_box_records, DetectionBox, EvalResult,
    RangeBuckets, RegressionHead,
};
use crate::error::{Error, Result};
use crate::fusion::{
    ustf_step, AgentMeta, AlignParams, FusionAgent, FusionOutput, MadaParams, QueryRouting,
    Sensor, UstfContext, UstfOptions,
};
use crate::grid::{warp_to_frame, FeatureGrid, LinearHead, Pose};
use crate::memory::{MemoryBank, MemorySlot};
use crate::scalar::Real;
use crate::stt::{
    comm_volume, dynamic_map, reconstruct, saliency_map, select_tokens, selection_mask,
    ReconNet, SttConfig,
};
use crate::wire::{decode_tokens, encode_tokens, SparseTokenSet};
use crate::world::{
    analytic_classify_head, analytic_regression_head, drop_tokens, inject_pose_noise,
    rasterize_features, reframe_box_channels, stale_frame, stream, Domain, GtBox, NoiseSpec,
    Scenario, SEMANTIC_CHANNELS,
};

/// What travels on the wire, mirroring the evaluation baselines: full grids,
/// the sparse token protocol, nothing, or per-agent detections.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    DenseBaseline,
    Stt,
    NoFusion,
    LateFusion,
}

impl RunMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunMode::DenseBaseline => "dense-baseline",
            RunMode::Stt => "stt",
            RunMode::NoFusion => "no-fusion",
            RunMode::LateFusion => "late-fusion",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dense-baseline" => Ok(RunMode::DenseBaseline),
            "stt" => Ok(RunMode::Stt),
            "no-fusion" => Ok(RunMode::NoFusion),
            "late-fusion" => Ok(RunMode::LateFusion),
            other => Err(Error::config(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig<T> {
    pub scenario: Scenario<T>,
    pub stt: SttConfig<T>,
    pub noise: NoiseSpec<T>,
    pub mode: RunMode,
    pub mada_heads: usize,
    pub mada_points: usize,
    /// Softmax sharpness of the saliency-routed attention weights.
    pub routing_gamma: f64,
    pub score_thr: T,
    pub nms_iou: T,
    /// Inject the projected previous fusion as an extra delayed agent.
    pub use_history: bool,
    /// Apply the (seeded) align transformation; identity when off.
    pub enable_at: bool,
    pub at_seed: u64,
    pub recon_seed: u64,
    /// Retain the fused grid of every frame (for equivalence tests).
    pub keep_fused: bool,
    /// Retain world-frame detections and ground truth per frame.
    pub keep_boxes: bool,
}

impl<T: Real> RunConfig<T> {
    pub fn new(scenario: Scenario<T>, mode: RunMode) -> Self {
        RunConfig {
            scenario,
            stt: SttConfig::default(),
            noise: NoiseSpec::default(),
            mode,
            mada_heads: 4,
            mada_points: 4,
            routing_gamma: 2.0,
            score_thr: T::c(0.6),
            nms_iou: T::c(0.3),
            use_history: true,
            enable_at: true,
            at_seed: 1,
            recon_seed: 1,
            keep_fused: false,
            keep_boxes: false,
        }
    }

    fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.noise.validate()?;
        let c = self.scenario.grid.channels;
        let max_inputs = self.scenario.agents.len() + 1;
        if matches!(self.mode, RunMode::DenseBaseline | RunMode::Stt) {
            if !c.is_multiple_of(self.mada_heads) {
                return Err(Error::config(format!(
                    "channels {c} not divisible by {} heads",
                    self.mada_heads
                )));
            }
            if SEMANTIC_CHANNELS + max_inputs > c {
                return Err(Error::config(format!(
                    "grid needs {} channels for routing over {max_inputs} inputs, has {c}",
                    SEMANTIC_CHANNELS + max_inputs
                )));
            }
        }
        Ok(())
    }
}

/// Per-frame record; the CSV rows come straight from these.
#[derive(Debug, Clone)]
pub struct FrameRow<T> {
    pub frame: u32,
    /// Bytes the senders put on the air this frame.
    pub sent_bytes: u64,
    /// Token entries transmitted this frame, over all senders.
    pub sent_cells: u64,
    /// log2-megabytes for this frame's transmitted cells, None when silent.
    pub comm_log2mb: Option<T>,
    pub tokens_per_agent: Vec<(u16, u64)>,
    pub fusion_inputs: usize,
    pub history_used: bool,
    /// Grids held by the memory bank after this frame.
    pub bank_grids: usize,
    pub eval: EvalResult<T>,
}

#[derive(Debug, Clone)]
pub struct RunResult<T> {
    pub mode: RunMode,
    pub channels: usize,
    pub rows: Vec<FrameRow<T>>,
    pub total_bytes: u64,
    pub total_cells: u64,
    /// Dense reference: sender count x grid cells, per frame.
    pub dense_cells_per_frame: u64,
    pub mean_ap50: MeanAp<T>,
    pub mean_ap70: MeanAp<T>,
    /// Wall time is reported for information only and is deliberately kept
    /// out of the persisted outputs, which must be byte-identical across
    /// runs.
    pub wall_ms: u128,
    /// Both uses of the classification head aliased the same instance.
    pub heads_shared: bool,
    /// Fused grids per frame, when requested.
    pub fused_frames: Vec<FeatureGrid<T>>,
    /// World-frame detections per frame, when requested.
    pub detections: Vec<Vec<DetectionBox<T>>>,
    /// Union ground truth per frame, when requested.
    pub ground_truth: Vec<Vec<DetectionBox<T>>>,
}

/// Mean over the frames where the bucket had ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanAp<T> {
    pub overall: Option<T>,
    pub short: Option<T>,
    pub middle: Option<T>,
    pub long: Option<T>,
}

impl<T: Real> RunResult<T> {
    pub fn mean_cells_per_frame(&self) -> f64 {
        if self.rows.is_empty() {
            0.0
        } else {
            self.total_cells as f64 / self.rows.len() as f64
        }
    }

    /// Dense transmitted cells divided by actual transmitted cells.
    pub fn compression_ratio(&self) -> Option<f64> {
        if self.total_cells == 0 {
            None
        } else {
            Some(self.dense_cells_per_frame as f64 * self.rows.len() as f64
                / self.total_cells as f64)
        }
    }
}

fn mean_of<T: Real>(vals: impl Iterator<Item = Option<T>>) -> Option<T> {
    let mut acc = T::zero();
    let mut n = 0usize;
    for v in vals.flatten() {
        acc += v;
        n += 1;
    }
    if n == 0 {
        None
    } else {
        Some(acc / T::c(n as f64))
    }
}

struct SenderState<T> {
    /// Sender-side copy of the last reconstructed feature, in its own frame
    /// with its true pose.
    mirror: Option<MemorySlot<T>>,
    /// Received-side bytes per frame (pose noise and drops applied).
    inbox: Vec<Vec<u8>>,
    /// Late-fusion queue: world-frame detections per frame plus their
    /// record-encoded byte cost.
    det_inbox: Vec<(Vec<DetectionBox<T>>, u64)>,
}

fn agent_speed<T: Real>(poses: &[Pose<T>], frame: usize, dt: T) -> T {
    if frame == 0 {
        return T::zero();
    }
    let a = &poses[frame - 1];
    let b = &poses[frame];
    ((b.x - a.x).hypot(b.y - a.y)) / dt
}

/// Execute the full per-frame loop for one configuration.
pub fn run<T: Real>(config: &RunConfig<T>) -> Result<RunResult<T>> {
    config.validate()?;
    let started = Instant::now();
    let scenario = &config.scenario;
    let spec = scenario.grid;
    let channels = spec.channels;
    let dt = scenario.frame_period_s;
    let buckets = RangeBuckets::default();

    // One classification head instance serves both the sender saliency maps
    // and the detection stage; the regression head reads the box channels.
    let cls_head: LinearHead<T> = analytic_classify_head(channels);
    let reg_head: RegressionHead<T> = analytic_regression_head(channels);
    let cls_for_saliency: &LinearHead<T> = &cls_head;
    let cls_for_detect: &LinearHead<T> = &cls_head;
    let heads_shared = std::ptr::eq(cls_for_saliency, cls_for_detect);

    let recon = ReconNet::seeded(channels, config.recon_seed);

    let max_inputs = scenario.agents.len() + 1;
    let fusion_params: Option<MadaParams<T>> =
        if matches!(config.mode, RunMode::DenseBaseline | RunMode::Stt) {
            let mut p = MadaParams::analytic_routed(
                channels,
                config.mada_heads,
                config.mada_points,
                max_inputs,
                SEMANTIC_CHANNELS,
                config.routing_gamma,
            )?;
            if config.enable_at {
                p.set_align(AlignParams::seeded(channels, config.at_seed));
            }
            Some(p)
        } else {
            None
        };

    let mut senders: BTreeMap<u16, SenderState<T>> = scenario.agents[1..]
        .iter()
        .map(|a| {
            (
                a.id,
                SenderState { mirror: None, inbox: Vec::new(), det_inbox: Vec::new() },
            )
        })
        .collect();
    let mut bank: MemoryBank<T> = MemoryBank::new();

    let mut rows: Vec<FrameRow<T>> = Vec::with_capacity(scenario.frames as usize);
    let mut fused_frames = Vec::new();
    let mut detections = Vec::new();
    let mut ground_truth = Vec::new();
    let mut total_bytes = 0u64;
    let mut total_cells = 0u64;

    for frame in 0..scenario.frames {
        let fidx = frame as usize;
        let ego_track = &scenario.agents[0];
        let ego_pose = ego_track.poses[fidx];

        // --- extraction (true world, per agent) ---
        let mut features: BTreeMap<u16, FeatureGrid<T>> = BTreeMap::new();
        let mut union_gt: BTreeMap<u32, GtBox<T>> = BTreeMap::new();
        for (i, a) in scenario.agents.iter().enumerate() {
            let (grid, gts) = rasterize_features(scenario, i, frame)?;
            for gt in gts {
                union_gt.entry(gt.object_id).or_insert(gt);
            }
            features.insert(a.id, grid);
        }
        let gts: Vec<DetectionBox<T>> = union_gt.values().map(|g| g.world).collect();

        // --- sender side ---
        let mut frame_bytes = 0u64;
        let mut frame_cells = 0u64;
        let mut tokens_per_agent: Vec<(u16, u64)> = Vec::new();
        if matches!(config.mode, RunMode::DenseBaseline | RunMode::Stt) {
            for a in &scenario.agents[1..] {
                let f_i = &features[&a.id];
                let true_pose = a.poses[fidx];
                let mut noise_rng =
                    stream(config.noise.seed, Domain::PoseNoise, a.id as u64, frame as u64);
                let tx_pose = inject_pose_noise(&true_pose, &config.noise, &mut noise_rng);

                let tokens = match config.mode {
                    RunMode::DenseBaseline => {
                        SparseTokenSet::dense_from_grid(f_i, a.id, frame, &tx_pose)
                    }
                    RunMode::Stt => {
                        let state = senders.get(&a.id).expect("sender state");
                        let e_now = saliency_map(f_i, cls_for_saliency)?;
                        let dynamic = match &state.mirror {
                            None => crate::grid::ScalarGrid::zeros(spec.height, spec.width),
                            Some(slot) => {
                                let warped =
                                    warp_to_frame(&slot.grid, &slot.pose, &true_pose);
                                let e_prev = saliency_map(&warped, cls_for_saliency)?;
                                dynamic_map(&e_now, &e_prev)?
                            }
                        };
                        let mask = selection_mask(&e_now, &dynamic, config.stt.rho)?;
                        select_tokens(f_i, &mask, config.stt.threshold, a.id, frame, &tx_pose)?
                    }
                    _ => unreachable!(),
                };

                let sent = encode_tokens(&tokens);
                frame_bytes += sent.len() as u64;
                frame_cells += tokens.len() as u64;
                tokens_per_agent.push((a.id, tokens.len() as u64));

                // transit loss, then what the receiver actually gets
                let mut drop_rng =
                    stream(config.noise.seed, Domain::TokenDrop, a.id as u64, frame as u64);
                let delivered = drop_tokens(&tokens, config.noise.token_drop_prob, &mut drop_rng);
                let state = senders.get_mut(&a.id).expect("sender state");
                state.inbox.push(encode_tokens(&delivered));

                // sender mirror: same reconstruction from the sent tokens,
                // refreshed at the temporal interval (the dense baseline
                // never consults it)
                let refresh = config.mode == RunMode::Stt
                    && match &state.mirror {
                        None => true,
                        Some(slot) => {
                            frame > slot.frame && frame - slot.frame >= config.stt.tau
                        }
                    };
                if refresh {
                    let (prev_grid, prev_pose) = match &state.mirror {
                        Some(slot) => (slot.grid.clone(), slot.pose),
                        None => (f_i.zeros_like(), true_pose),
                    };
                    let r = reconstruct(&tokens, &prev_grid, &prev_pose, &true_pose, &recon)?;
                    state.mirror = Some(MemorySlot { grid: r, pose: true_pose, frame });
                }
            }
        }

        // --- late-fusion senders transmit detections instead ---
        if config.mode == RunMode::LateFusion {
            for a in &scenario.agents[1..] {
                let f_i = &features[&a.id];
                let true_pose = a.poses[fidx];
                let mut noise_rng =
                    stream(config.noise.seed, Domain::PoseNoise, a.id as u64, frame as u64);
                let tx_pose = inject_pose_noise(&true_pose, &config.noise, &mut noise_rng);
                let conf = classify(f_i, cls_for_detect)?;
                let regs = regress(f_i, &reg_head)?;
                let local = decode_boxes(&conf, &regs, config.score_thr, config.nms_iou)?;
                let world: Vec<DetectionBox<T>> =
                    local.iter().map(|b| b.to_world(&tx_pose)).collect();
                let mut rec = Vec::new();
                write_box_records(&mut rec, frame, &world)?;
                frame_bytes += rec.len() as u64;
                tokens_per_agent.push((a.id, world.len() as u64));
                let state = senders.get_mut(&a.id).expect("sender state");
                state.det_inbox.push((world, rec.len() as u64));
            }
        }

        // --- ego side: consume (possibly stale) messages, reconstruct ---
        let mut fusion_others: Vec<FusionAgent<T>> = Vec::new();
        if matches!(config.mode, RunMode::DenseBaseline | RunMode::Stt) {
            for a in &scenario.agents[1..] {
                let s = stale_frame(frame, config.noise.latency_ms, dt);
                let state = senders.get_mut(&a.id).expect("sender state");
                let bytes = &state.inbox[s as usize];
                let tokens_rx = decode_tokens(bytes).map_err(Error::Wire)?;
                tokens_rx
                    .validate_bounds(spec.height, spec.width)
                    .map_err(Error::Wire)?;
                let msg_pose: Pose<T> = tokens_rx.pose();

                let (prev_grid, prev_pose) = match bank.get(a.id) {
                    Some(slot) => (slot.grid.clone(), slot.pose),
                    None => (
                        FeatureGrid::centered(
                            spec.height,
                            spec.width,
                            channels,
                            T::c(spec.resolution),
                        ),
                        msg_pose,
                    ),
                };
                let r_i = reconstruct(&tokens_rx, &prev_grid, &prev_pose, &msg_pose, &recon)?;

                let store = match bank.get(a.id) {
                    None => true,
                    Some(slot) => s > slot.frame && s - slot.frame >= config.stt.tau,
                };
                if store {
                    bank.put(a.id, r_i.clone(), msg_pose, s)?;
                }

                // into the ego frame for fusion, by the pose the message
                // carried; the box-vector channels rotate with the frame
                let mut aligned = warp_to_frame(&r_i, &msg_pose, &ego_pose);
                reframe_box_channels(&mut aligned, msg_pose.yaw - ego_pose.yaw);
                let meta = AgentMeta::current(
                    a.kind,
                    agent_speed(&a.poses, s as usize, dt),
                    T::c((frame - s) as f64) * dt,
                );
                // trust footprint from the transmitted (believed) pose
                let sensor = Sensor { x: msg_pose.x, y: msg_pose.y, range_m: a.sensing_range_m };
                fusion_others.push(FusionAgent { grid: aligned, meta, sensor: Some(sensor) });
            }
        }

        // --- fuse and detect ---
        let ego_feature = &features[&ego_track.id];
        let (detect_grid, fusion_inputs, history_used): (FeatureGrid<T>, usize, bool) =
            match config.mode {
                RunMode::NoFusion | RunMode::LateFusion => (ego_feature.clone(), 1, false),
                RunMode::DenseBaseline | RunMode::Stt => {
                    let params = fusion_params.as_ref().expect("fusion params");
                    let ctx = UstfContext {
                        ego_pose,
                        frame,
                        frame_period_s: dt,
                        tau: config.stt.tau,
                    };
                    let routing = QueryRouting::new(cls_for_detect, SEMANTIC_CHANNELS);
                    let opts = UstfOptions {
                        use_history: config.use_history,
                        enable_at: config.enable_at,
                        collect_diagnostics: false,
                        history_reframe: Some(reframe_box_channels::<T>),
                    };
                    let ego_agent = FusionAgent {
                        grid: ego_feature.clone(),
                        meta: AgentMeta::current(
                            ego_track.kind,
                            agent_speed(&ego_track.poses, fidx, dt),
                            T::zero(),
                        ),
                        sensor: Some(Sensor {
                            x: ego_pose.x,
                            y: ego_pose.y,
                            range_m: ego_track.sensing_range_m,
                        }),
                    };
                    let out: FusionOutput<T> = ustf_step(
                        &ego_agent,
                        &fusion_others,
                        &mut bank,
                        &ctx,
                        params,
                        Some(routing),
                        &opts,
                    )?;
                    (out.fused, out.input_count, out.history_used)
                }
            };

        let mut world_dets: Vec<DetectionBox<T>> = {
            let conf = classify(&detect_grid, cls_for_detect)?;
            let regs = regress(&detect_grid, &reg_head)?;
            let local = decode_boxes(&conf, &regs, config.score_thr, config.nms_iou)?;
            local.iter().map(|b| b.to_world(&ego_pose)).collect()
        };
        if config.mode == RunMode::LateFusion {
            for a in &scenario.agents[1..] {
                let s = stale_frame(frame, config.noise.latency_ms, dt);
                let state = senders.get(&a.id).expect("sender state");
                world_dets.extend(state.det_inbox[s as usize].0.iter().copied());
            }
            world_dets = crate::detect::nms(&world_dets, config.nms_iou);
        }

        let eval = evaluate_ap(&world_dets, &gts, ego_pose.xy(), &buckets);

        total_bytes += frame_bytes;
        total_cells += frame_cells;
        if config.keep_fused {
            fused_frames.push(detect_grid);
        }
        if config.keep_boxes {
            detections.push(world_dets.clone());
            ground_truth.push(gts.clone());
        }
        rows.push(FrameRow {
            frame,
            sent_bytes: frame_bytes,
            sent_cells: frame_cells,
            comm_log2mb: comm_volume(frame_cells, channels as u64),
            tokens_per_agent,
            fusion_inputs,
            history_used,
            bank_grids: bank.len(),
            eval,
        });
    }

    let mean_ap50 = MeanAp {
        overall: mean_of(rows.iter().map(|r| r.eval.ap50.overall)),
        short: mean_of(rows.iter().map(|r| r.eval.ap50.short)),
        middle: mean_of(rows.iter().map(|r| r.eval.ap50.middle)),
        long: mean_of(rows.iter().map(|r| r.eval.ap50.long)),
    };
    let mean_ap70 = MeanAp {
        overall: mean_of(rows.iter().map(|r| r.eval.ap70.overall)),
        short: mean_of(rows.iter().map(|r| r.eval.ap70.short)),
        middle: mean_of(rows.iter().map(|r| r.eval.ap70.middle)),
        long: mean_of(rows.iter().map(|r| r.eval.ap70.long)),
    };

    Ok(RunResult {
        mode: config.mode,
        channels,
        dense_cells_per_frame: (scenario.agents.len() as u64 - 1)
            * (spec.height * spec.width) as u64,
        rows,
        total_bytes,
        total_cells,
        mean_ap50,
        mean_ap70,
        wall_ms: started.elapsed().as_millis(),
        heads_shared,
        fused_frames,
        detections,
        ground_truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_scenario, occlusion_scenario, GenConfig};

    fn small_scenario() -> Scenario<f64> {
        let cfg = GenConfig {
            grid: crate::world::GridSpec { height: 32, width: 32, channels: 16, resolution: 0.5 },
            frames: 4,
            frame_period_s: 0.1,
            num_agents: 2,
            static_objects: 2,
            dynamic_objects: 1,
            sensing_range_m: 12.0,
            world_radius_m: 6.5,
        };
        generate_scenario(&cfg, 11).unwrap()
    }

    #[test]
    fn all_modes_run_to_completion() {
        for mode in [
            RunMode::DenseBaseline,
            RunMode::Stt,
            RunMode::NoFusion,
            RunMode::LateFusion,
        ] {
            let config = RunConfig::new(small_scenario(), mode);
            let result = run(&config).unwrap();
            assert_eq!(result.rows.len(), 4, "{mode:?}");
            assert!(result.heads_shared);
        }
    }

    #[test]
    fn no_fusion_sends_nothing() {
        let config = RunConfig::new(small_scenario(), RunMode::NoFusion);
        let result = run(&config).unwrap();
        assert_eq!(result.total_bytes, 0);
        assert_eq!(result.total_cells, 0);
        assert!(result.rows.iter().all(|r| r.fusion_inputs == 1));
    }

    #[test]
    fn stt_transmits_fewer_cells_than_dense() {
        let dense = run(&RunConfig::new(small_scenario(), RunMode::DenseBaseline)).unwrap();
        let stt = run(&RunConfig::new(small_scenario(), RunMode::Stt)).unwrap();
        assert!(stt.total_cells < dense.total_cells);
        assert!(stt.total_cells > 0);
        assert_eq!(dense.total_cells, dense.dense_cells_per_frame * 4);
    }

    #[test]
    fn comm_accounting_matches_encoded_lengths_and_formula() {
        let config = RunConfig::new(small_scenario(), RunMode::Stt);
        let result = run(&config).unwrap();
        let sum: u64 = result.rows.iter().map(|r| r.sent_bytes).sum();
        assert_eq!(result.total_bytes, sum);
        for row in &result.rows {
            let expect = comm_volume::<f64>(row.sent_cells, 16);
            assert_eq!(row.comm_log2mb, expect);
            // formula on actual entry counts per message
            let per_sender: u64 = row.tokens_per_agent.iter().map(|(_, n)| n).sum();
            assert_eq!(per_sender, row.sent_cells);
        }
    }

    #[test]
    fn tau_choices_run_and_are_logged() {
        for tau in [1u32, 2] {
            let mut config = RunConfig::new(small_scenario(), RunMode::Stt);
            config.stt.tau = tau;
            let result = run(&config).unwrap();
            assert_eq!(result.rows.len(), 4, "tau={tau}");
        }
    }

    #[test]
    fn occlusion_premise_holds() {
        let scenario: Scenario<f64> = occlusion_scenario(5);
        let hidden = scenario.objects[0].poses[0];

        let miss = run(&RunConfig::new(scenario.clone(), RunMode::NoFusion)).unwrap();
        let hit = run(&RunConfig::new(scenario.clone(), RunMode::Stt)).unwrap();

        let detects_hidden = |r: &RunResult<f64>| -> bool {
            // match on the last frame via eval counts is too coarse; rerun
            // detection bookkeeping through AP at 0.5 per frame instead:
            // the hidden object contributes one gt; if every frame of the
            // run matched it the overall AP rises measurably.
            r.mean_ap50.overall.unwrap_or(0.0) > 0.9
        };
        let _ = hidden;
        assert!(!detects_hidden(&miss), "no-fusion should miss the hidden object");
        assert!(detects_hidden(&hit), "stt fusion should find the hidden object");
    }
}
