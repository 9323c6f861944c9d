//! The analytic BEV backbone. A real system runs a learned point-cloud
//! encoder; here features are rasterized so that a pair of fixed, known
//! heads reads them back exactly: channel 0 carries a +/-5 occupancy logit
//! and channels 1..=6 the box parameters relative to each covered cell.
//! The remaining channels carry seeded low-amplitude noise so attention and
//! compression act on non-degenerate signals. Everything downstream of
//! feature extraction is exercised on meaningful, decodable content without
//! any training.

use rand::RngExt;

use crate::detect::{DetectionBox, RegressionHead};
use crate::error::{Error, Result};
use crate::grid::{normalize_angle, FeatureGrid, LinearHead};
use crate::scalar::Real;

use super::{stream, Domain, Scenario};

/// Occupancy-logit channel.
pub const CH_CONF: usize = 0;
/// Channels 1..=6: (dx, dy, log length, log width, sin yaw, cos yaw).
pub const CH_BOX: usize = 1;
/// First channel free for noise (and for routing annotations in queries).
pub const SEMANTIC_CHANNELS: usize = 7;
/// Occupancy logit magnitude. sigmoid(5) = 0.9933, sigmoid(-5) = 0.0067.
pub const LOGIT_AMPLITUDE: f64 = 5.0;
/// Uniform noise amplitude on the filler channels.
pub const NOISE_AMPLITUDE: f64 = 0.1;

/// The shared classification head: reads the occupancy logit exactly.
pub fn analytic_classify_head<T: Real>(channels: usize) -> LinearHead<T> {
    LinearHead::one_hot(channels, CH_CONF)
}

/// The box-regression head: reads channels 1..=6 exactly.
pub fn analytic_regression_head<T: Real>(channels: usize) -> RegressionHead<T> {
    RegressionHead::slice_reader(channels, CH_BOX)
}

/// Re-express the vector-valued box channels after a frame change. Spatial
/// warping resamples values but leaves them encoded in the source frame's
/// axes: the center offsets (dx, dy) and the heading (sin, cos) must rotate
/// by the yaw difference `delta = src_yaw - dst_yaw`. Scalar channels
/// (confidence, log sizes, noise) are frame-invariant. A zero delta is a
/// no-op so identity paths stay bit-exact.
pub fn reframe_box_channels<T: Real>(grid: &mut FeatureGrid<T>, delta_yaw: T) {
    if delta_yaw == T::zero() {
        return;
    }
    let (s, c) = delta_yaw.sin_cos();
    for h in 0..grid.height() {
        for w in 0..grid.width() {
            let cell = grid.cell_mut(h, w);
            let dx = cell[CH_BOX];
            let dy = cell[CH_BOX + 1];
            cell[CH_BOX] = c * dx - s * dy;
            cell[CH_BOX + 1] = s * dx + c * dy;
            let sy = cell[CH_BOX + 4];
            let cy = cell[CH_BOX + 5];
            cell[CH_BOX + 4] = sy * c + cy * s;
            cell[CH_BOX + 5] = cy * c - sy * s;
        }
    }
}

/// Ground-truth box with the identity of the object behind it, so the
/// per-agent lists can be united without duplicates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtBox<T> {
    pub object_id: u32,
    pub world: DetectionBox<T>,
}

/// Rasterize one agent's view at one frame: features in the agent's local
/// BEV frame plus the ground-truth boxes (world frame) restricted to the
/// agent's sensing range. Visibility is range-based on object centers;
/// cells covered by two objects take the one whose center is nearest.
pub fn rasterize_features<T: Real>(
    scenario: &Scenario<T>,
    agent_index: usize,
    frame: u32,
) -> Result<(FeatureGrid<T>, Vec<GtBox<T>>)> {
    let agent = scenario
        .agents
        .get(agent_index)
        .ok_or_else(|| Error::config(format!("agent index {agent_index} out of range")))?;
    if frame >= scenario.frames {
        return Err(Error::config(format!(
            "frame {frame} outside scenario of {} frames",
            scenario.frames
        )));
    }
    let spec = &scenario.grid;
    let agent_pose = &agent.poses[frame as usize];
    let mut grid = FeatureGrid::centered(
        spec.height,
        spec.width,
        spec.channels,
        T::c(spec.resolution),
    );

    // background: known-empty logit, zero box channels
    let amp = T::c(LOGIT_AMPLITUDE);
    for h in 0..spec.height {
        for w in 0..spec.width {
            grid.set(h, w, CH_CONF, -amp);
        }
    }

    // noise filler, keyed by (seed, agent, frame) so order never matters
    if spec.channels > SEMANTIC_CHANNELS {
        let mut rng = stream(scenario.seed, Domain::Raster, agent.id as u64, frame as u64);
        let namp = NOISE_AMPLITUDE;
        for h in 0..spec.height {
            for w in 0..spec.width {
                for c in SEMANTIC_CHANNELS..spec.channels {
                    grid.set(h, w, c, T::c(rng.random_range(-namp..namp)));
                }
            }
        }
    }

    let mut gts = Vec::new();
    // nearest-object distance per cell, for overlap resolution
    let mut owner_dist = vec![T::infinity(); spec.height * spec.width];

    for object in &scenario.objects {
        let opose = &object.poses[frame as usize];
        let dist = (opose.x - agent_pose.x).hypot(opose.y - agent_pose.y);
        if dist > agent.sensing_range_m {
            continue;
        }
        gts.push(GtBox {
            object_id: object.id,
            world: DetectionBox {
                x: opose.x,
                y: opose.y,
                length: object.length_m,
                width: object.width_m,
                yaw: opose.yaw,
                score: T::one(),
            },
        });

        // object center and heading in the agent's local frame
        let (ox, oy) = agent_pose.world_to_local(opose.x, opose.y);
        let oyaw = normalize_angle(opose.yaw - agent_pose.yaw);
        let (sy, cy) = oyaw.sin_cos();
        let hl = object.length_m * T::c(0.5);
        let hw = object.width_m * T::c(0.5);

        // scan only the cells the rotated rectangle can reach
        let reach = (hl * hl + hw * hw).sqrt();
        let (min_h, min_w) = grid.local_to_cell(ox - reach, oy - reach);
        let (max_h, max_w) = grid.local_to_cell(ox + reach, oy + reach);
        let clamp = |v: T, hi: usize| -> usize {
            (v.as_f64().max(0.0) as usize).min(hi.saturating_sub(1))
        };
        let h0 = clamp(min_h.floor(), spec.height);
        let h1 = clamp(max_h.ceil(), spec.height);
        let w0 = clamp(min_w.floor(), spec.width);
        let w1 = clamp(max_w.ceil(), spec.width);

        for h in h0..=h1 {
            for w in w0..=w1 {
                let (cx, cyy) = grid.cell_center_local(h, w);
                let dx = cx - ox;
                let dy = cyy - oy;
                // into the object frame
                let lx = cy * dx + sy * dy;
                let ly = -sy * dx + cy * dy;
                if lx.abs() > hl || ly.abs() > hw {
                    continue;
                }
                let d2 = dx * dx + dy * dy;
                let idx = h * spec.width + w;
                if d2 >= owner_dist[idx] {
                    continue;
                }
                owner_dist[idx] = d2;
                grid.set(h, w, CH_CONF, amp);
                grid.set(h, w, CH_BOX, ox - cx);
                grid.set(h, w, CH_BOX + 1, oy - cyy);
                grid.set(h, w, CH_BOX + 2, object.length_m.ln());
                grid.set(h, w, CH_BOX + 3, object.width_m.ln());
                grid.set(h, w, CH_BOX + 4, oyaw.sin());
                grid.set(h, w, CH_BOX + 5, oyaw.cos());
            }
        }
    }

    debug_assert!(grid.all_finite());
    Ok((grid, gts))
}

/// Union of per-agent ground truth over all agents at a frame, deduplicated
/// by object id: the collaborative label set.
pub fn union_ground_truth<T: Real>(
    scenario: &Scenario<T>,
    frame: u32,
) -> Result<Vec<GtBox<T>>> {
    let mut seen = std::collections::BTreeMap::new();
    for i in 0..scenario.agents.len() {
        let (_, gts) = rasterize_features(scenario, i, frame)?;
        for gt in gts {
            seen.entry(gt.object_id).or_insert(gt);
        }
    }
    Ok(seen.into_values().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::{classify, decode_boxes, regress, rotated_iou};
    use crate::scalar::sigmoid;
    use crate::stt::{dynamic_map, saliency_map};
    use crate::world::{occlusion_scenario, GenConfig, MotionKind};

    fn single_agent_world(objects: Vec<super::super::ObjectTrack<f64>>) -> Scenario<f64> {
        let mut s: Scenario<f64> = occlusion_scenario(4);
        s.agents.truncate(1);
        s.agents[0].sensing_range_m = 100.0;
        s.objects = objects;
        s
    }

    #[test]
    fn empty_world_is_all_background() {
        let s = single_agent_world(vec![]);
        let (grid, gts) = rasterize_features(&s, 0, 0).unwrap();
        assert!(gts.is_empty());
        for h in 0..grid.height() {
            for w in 0..grid.width() {
                assert_eq!(grid.value(h, w, CH_CONF), -LOGIT_AMPLITUDE);
                for c in CH_BOX..SEMANTIC_CHANNELS {
                    assert_eq!(grid.value(h, w, c), 0.0);
                }
            }
        }
    }

    #[test]
    fn rasterize_then_decode_recovers_the_box() {
        let mut s: Scenario<f64> = occlusion_scenario(4);
        s.agents.truncate(1);
        s.agents[0].sensing_range_m = 100.0;
        // both objects now visible to the single agent
        let (grid, gts) = rasterize_features(&s, 0, 0).unwrap();
        assert_eq!(gts.len(), 3);

        let conf = classify(&grid, &analytic_classify_head(grid.channels())).unwrap();
        let regs = regress(&grid, &analytic_regression_head(grid.channels())).unwrap();
        let boxes = decode_boxes(&conf, &regs, 0.5, 0.5).unwrap();
        assert_eq!(boxes.len(), 3);

        let ego_pose = s.agents[0].poses[0];
        let world: Vec<_> = boxes.iter().map(|b| b.to_world(&ego_pose)).collect();
        for gt in &gts {
            let best = world
                .iter()
                .map(|b| rotated_iou(b, &gt.world))
                .fold(0.0f64, f64::max);
            assert!(best >= 0.99, "gt {} best IoU {best}", gt.object_id);
        }
    }

    #[test]
    fn object_beyond_range_is_absent_from_features_and_gt() {
        let s: Scenario<f64> = occlusion_scenario(4);
        // agent 0 has range 8; the hidden object sits 11 m out
        let (grid, gts) = rasterize_features(&s, 0, 0).unwrap();
        assert!(gts.iter().all(|g| g.object_id != 0));
        // the cells around (11, 0) in the ego frame must stay background
        let (h, w) = {
            let p = grid.local_to_cell(11.0, 0.0);
            (p.0.round() as usize, p.1.round() as usize)
        };
        assert_eq!(grid.value(h, w, CH_CONF), -LOGIT_AMPLITUDE);
        // while the helper does see it
        let (_, helper_gts) = rasterize_features(&s, 1, 0).unwrap();
        assert!(helper_gts.iter().any(|g| g.object_id == 0));
    }

    #[test]
    fn union_gt_deduplicates_objects() {
        let s: Scenario<f64> = occlusion_scenario(4);
        let union = union_ground_truth(&s, 0).unwrap();
        assert_eq!(union.len(), 3);
        let ids: Vec<u32> = union.iter().map(|g| g.object_id).collect();
        assert_eq!(ids, vec![0, 1, 2]);
    }

    #[test]
    fn noise_channels_are_frame_dependent_but_semantic_channels_are_not() {
        let cfg = GenConfig { dynamic_objects: 0, ..GenConfig::sparse() };
        let s: Scenario<f64> = crate::world::generate_scenario(&cfg, 4).unwrap();
        let (g0, _) = rasterize_features(&s, 0, 0).unwrap();
        let (g1, _) = rasterize_features(&s, 0, 1).unwrap();
        // static world, static agent: semantic channels identical
        for h in 0..g0.height() {
            for w in 0..g0.width() {
                for c in 0..SEMANTIC_CHANNELS {
                    assert_eq!(g0.value(h, w, c), g1.value(h, w, c));
                }
            }
        }
        // noise differs across frames
        assert!(g0.max_abs_diff(&g1) > 0.0);
    }

    #[test]
    fn dynamic_cells_match_the_oracle_dynamic_map() {
        // The set of cells whose coverage changes between two frames is
        // exactly where the saliency-difference map exceeds 0.9
        // (|sigmoid(5) - sigmoid(-5)| = 0.9866).
        let mut s = single_agent_world(vec![]);
        s.objects = vec![super::super::ObjectTrack {
            id: 0,
            motion: MotionKind::Linear { vx_mps: 5.0, vy_mps: 0.0 },
            length_m: 4.0,
            width_m: 2.0,
            poses: (0..4)
                .map(|f| crate::grid::Pose::planar(-4.0 + 0.5 * f as f64, 1.0, 0.0, f))
                .collect(),
        }];
        let (g0, _) = rasterize_features(&s, 0, 0).unwrap();
        let (g1, _) = rasterize_features(&s, 0, 2).unwrap();
        let head = analytic_classify_head(g0.channels());
        let e0 = saliency_map(&g0, &head).unwrap();
        let e1 = saliency_map(&g1, &head).unwrap();
        let d = dynamic_map(&e1, &e0).unwrap();

        let expect_gap = sigmoid(LOGIT_AMPLITUDE) - sigmoid(-LOGIT_AMPLITUDE);
        assert!(expect_gap > 0.9);
        for h in 0..g0.height() {
            for w in 0..g0.width() {
                let changed =
                    (g0.value(h, w, CH_CONF) > 0.0) != (g1.value(h, w, CH_CONF) > 0.0);
                if changed {
                    assert!(d.value(h, w) > 0.9, "cell ({h},{w}) should be dynamic");
                } else {
                    assert!(d.value(h, w) < 1e-12, "cell ({h},{w}) should be static");
                }
            }
        }
    }

    #[test]
    fn reframe_rotates_offset_and_heading_channels() {
        // a sender rotated 90 degrees left of the ego reports an offset of
        // (+1, 0) and heading 0.2 in its own axes; in ego axes that offset
        // points along +y and the heading gains the frame rotation
        let mut g = FeatureGrid::<f64>::with_origin(1, 1, SEMANTIC_CHANNELS, 0.5, (0.0, 0.0));
        g.set(0, 0, CH_BOX, 1.0);
        g.set(0, 0, CH_BOX + 1, 0.0);
        g.set(0, 0, CH_BOX + 2, 1.4);
        g.set(0, 0, CH_BOX + 4, 0.2f64.sin());
        g.set(0, 0, CH_BOX + 5, 0.2f64.cos());
        let delta = std::f64::consts::FRAC_PI_2;
        reframe_box_channels(&mut g, delta);
        assert!((g.value(0, 0, CH_BOX) - 0.0).abs() < 1e-12);
        assert!((g.value(0, 0, CH_BOX + 1) - 1.0).abs() < 1e-12);
        // scalar channels untouched
        assert_eq!(g.value(0, 0, CH_BOX + 2), 1.4);
        let yaw = g.value(0, 0, CH_BOX + 4).atan2(g.value(0, 0, CH_BOX + 5));
        assert!((yaw - (0.2 + delta)).abs() < 1e-12);

        // zero delta is a bit-exact no-op
        let before = g.clone();
        reframe_box_channels(&mut g, 0.0);
        assert!(g.exact_eq(&before));
    }

    #[test]
    fn overlapping_objects_resolve_to_the_nearest_center() {
        let mk = |id: u32, x: f64| super::super::ObjectTrack {
            id,
            motion: MotionKind::Static,
            length_m: 4.0,
            width_m: 2.0,
            poses: (0..4)
                .map(|f| crate::grid::Pose::planar(x, 0.0, 0.0, f))
                .collect(),
        };
        let s = single_agent_world(vec![mk(0, 0.0), mk(1, 2.0)]);
        let (grid, gts) = rasterize_features(&s, 0, 0).unwrap();
        assert_eq!(gts.len(), 2);
        // the cell at the first object's center belongs to it
        let (h, w) = {
            let p = grid.local_to_cell(0.0, 0.0);
            (p.0.round() as usize, p.1.round() as usize)
        };
        let dx = grid.value(h, w, CH_BOX);
        let (cx, _) = grid.cell_center_local(h, w);
        assert!((dx - (0.0 - cx)).abs() < 1e-12);
    }
}
