//! Detection heads over fused BEV features: per-cell classification and box
//! regression, box decoding with rotated-IoU NMS, loss functions, and AP
//! evaluation. The classification head here is the same object the
//! transmission stage uses for its saliency map; the pipeline asserts that
//! sharing by identity.

pub mod ap;
pub mod iou;
pub mod losses;

use std::io::Write;

use crate::error::{Error, Result};
use crate::grid::{sigmoid_grid, FeatureGrid, LinearHead, Pose, ScalarGrid};
use crate::scalar::Real;

pub use ap::{average_precision, evaluate_ap, match_greedy, ApBuckets, EvalResult, RangeBuckets};
pub use iou::{box_corners, rotated_iou};
pub use losses::{focal_loss, smooth_l1};

/// Number of values produced by the box-regression head per cell:
/// (dx, dy, log length, log width, sin yaw, cos yaw).
pub const REGRESSION_WIDTH: usize = 6;

/// An axis-rotated box in some planar frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionBox<T> {
    pub x: T,
    pub y: T,
    pub length: T,
    pub width: T,
    pub yaw: T,
    pub score: T,
}

impl<T: Real> DetectionBox<T> {
    /// Re-express a box given in `pose`'s local frame in the world frame.
    pub fn to_world(&self, pose: &Pose<T>) -> DetectionBox<T> {
        let (wx, wy) = pose.local_to_world(self.x, self.y);
        DetectionBox {
            x: wx,
            y: wy,
            length: self.length,
            width: self.width,
            yaw: crate::grid::normalize_angle(self.yaw + pose.yaw),
            score: self.score,
        }
    }
}

/// Box-regression head: six per-cell linear readouts over the feature
/// channels.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionHead<T> {
    /// Row-major [REGRESSION_WIDTH x channels].
    pub weights: Vec<T>,
    pub bias: [T; REGRESSION_WIDTH],
}

impl<T: Real> RegressionHead<T> {
    pub fn new(weights: Vec<T>, bias: [T; REGRESSION_WIDTH]) -> Self {
        RegressionHead { weights, bias }
    }

    pub fn input_width(&self) -> usize {
        self.weights.len() / REGRESSION_WIDTH
    }

    /// Readout head whose row `r` copies channel `base + r`.
    pub fn slice_reader(channels: usize, base: usize) -> Self {
        let mut weights = vec![T::zero(); REGRESSION_WIDTH * channels];
        for r in 0..REGRESSION_WIDTH {
            weights[r * channels + base + r] = T::one();
        }
        RegressionHead {
            weights,
            bias: [T::zero(); REGRESSION_WIDTH],
        }
    }
}

/// Per-cell confidence: sigmoid of the shared classification head.
pub fn classify<T: Real>(
    features: &FeatureGrid<T>,
    head: &LinearHead<T>,
) -> Result<ScalarGrid<T>> {
    Ok(sigmoid_grid(&head.apply(features)?))
}

/// Per-cell box parameters, as a 6-channel grid with the input's geometry.
pub fn regress<T: Real>(
    features: &FeatureGrid<T>,
    head: &RegressionHead<T>,
) -> Result<FeatureGrid<T>> {
    let c = features.channels();
    if head.input_width() != c {
        return Err(Error::config(format!(
            "regression head width {} does not match grid channels {c}",
            head.input_width()
        )));
    }
    let mut out = FeatureGrid::with_origin(
        features.height(),
        features.width(),
        REGRESSION_WIDTH,
        features.resolution(),
        features.origin(),
    );
    for h in 0..features.height() {
        for w in 0..features.width() {
            let cell = features.cell(h, w);
            for r in 0..REGRESSION_WIDTH {
                let mut acc = head.bias[r];
                let row = &head.weights[r * c..(r + 1) * c];
                for (wv, v) in row.iter().zip(cell) {
                    acc += *wv * *v;
                }
                out.set(h, w, r, acc);
            }
        }
    }
    Ok(out)
}

/// Decode one cell's regression readout into a box in the grid's local
/// frame: (dx, dy) offsets from the cell center, exp on the log sizes,
/// atan2 on (sin, cos).
pub fn decode_cell<T: Real>(
    regs: &FeatureGrid<T>,
    h: usize,
    w: usize,
    score: T,
) -> DetectionBox<T> {
    let (cx, cy) = regs.cell_center_local(h, w);
    let r = regs.cell(h, w);
    DetectionBox {
        x: cx + r[0],
        y: cy + r[1],
        length: r[2].exp(),
        width: r[3].exp(),
        yaw: r[4].atan2(r[5]),
        score,
    }
}

/// Deterministic total order: score descending, then position and shape.
pub(crate) fn canonical_sort<T: Real>(boxes: &mut [DetectionBox<T>]) {
    boxes.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.y.partial_cmp(&b.y).unwrap())
            .then(a.x.partial_cmp(&b.x).unwrap())
            .then(a.length.partial_cmp(&b.length).unwrap())
            .then(a.width.partial_cmp(&b.width).unwrap())
            .then(a.yaw.partial_cmp(&b.yaw).unwrap())
    });
}

/// Greedy non-maximum suppression by descending score with rotated-box IoU.
/// Input order does not matter: boxes are canonically sorted first.
pub fn nms<T: Real>(boxes: &[DetectionBox<T>], iou_thr: T) -> Vec<DetectionBox<T>> {
    let mut sorted = boxes.to_vec();
    canonical_sort(&mut sorted);
    let mut keep: Vec<DetectionBox<T>> = Vec::new();
    'outer: for b in sorted {
        for k in &keep {
            if rotated_iou(&b, k) >= iou_thr {
                continue 'outer;
            }
        }
        keep.push(b);
    }
    keep
}

/// Cells above the score threshold decoded into boxes, then suppressed.
/// Boxes come back in the grid's local frame; use
/// [`DetectionBox::to_world`] to place them.
pub fn decode_boxes<T: Real>(
    conf: &ScalarGrid<T>,
    regs: &FeatureGrid<T>,
    score_thr: T,
    nms_iou: T,
) -> Result<Vec<DetectionBox<T>>> {
    if conf.height() != regs.height() || conf.width() != regs.width() {
        return Err(Error::shape(format!(
            "confidence {}x{} vs regression {}x{}",
            conf.height(),
            conf.width(),
            regs.height(),
            regs.width()
        )));
    }
    if regs.channels() != REGRESSION_WIDTH {
        return Err(Error::config(format!(
            "regression grid has {} channels, expected {REGRESSION_WIDTH}",
            regs.channels()
        )));
    }
    let mut cands = Vec::new();
    for h in 0..conf.height() {
        for w in 0..conf.width() {
            let s = conf.value(h, w);
            if s > score_thr {
                cands.push(decode_cell(regs, h, w, s));
            }
        }
    }
    Ok(nms(&cands, nms_iou))
}

/// Write boxes as line-delimited records: `frame,x,y,l,w,yaw,score`.
pub fn write_box_records<T: Real, W: Write>(
    out: &mut W,
    frame: u32,
    boxes: &[DetectionBox<T>],
) -> std::io::Result<()> {
    for b in boxes {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            frame,
            b.x.as_f64(),
            b.y.as_f64(),
            b.length.as_f64(),
            b.width.as_f64(),
            b.yaw.as_f64(),
            b.score.as_f64()
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reg_grid(h: usize, w: usize, f: impl Fn(usize, usize, usize) -> f64) -> FeatureGrid<f64> {
        FeatureGrid::from_fn(h, w, REGRESSION_WIDTH, 0.5, (0.0, 0.0), f)
    }

    #[test]
    fn zero_readout_decodes_to_unit_box_at_cell_center() {
        // exp(0) = 1 m sizes, yaw atan2(0, 0) = 0, centered on the cell.
        let regs = reg_grid(3, 3, |_, _, _| 0.0);
        let b = decode_cell(&regs, 1, 2, 0.9);
        let (cx, cy) = regs.cell_center_local(1, 2);
        assert_eq!((b.x, b.y), (cx, cy));
        assert_eq!((b.length, b.width), (1.0, 1.0));
        assert_eq!(b.yaw, 0.0);
    }

    #[test]
    fn sin_cos_zero_minus_one_decodes_to_pi() {
        let regs = reg_grid(1, 1, |_, _, c| match c {
            4 => 0.0,
            5 => -1.0,
            _ => 0.0,
        });
        let b = decode_cell(&regs, 0, 0, 1.0);
        assert!((b.yaw - std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn seeded_cell_decodes_like_hand_arithmetic() {
        let vals: [f64; 6] = [0.3, -0.2, 1.5f64.ln(), 0.8f64.ln(), 0.6, 0.8];
        let regs = reg_grid(2, 2, |h, w, c| if (h, w) == (1, 0) { vals[c] } else { 0.0 });
        let b = decode_cell(&regs, 1, 0, 0.5);
        let (cx, cy) = regs.cell_center_local(1, 0);
        assert!((b.x - (cx + 0.3)).abs() < 1e-15);
        assert!((b.y - (cy - 0.2)).abs() < 1e-15);
        assert!((b.length - 1.5).abs() < 1e-12);
        assert!((b.width - 0.8).abs() < 1e-12);
        assert!((b.yaw - 0.6f64.atan2(0.8)).abs() < 1e-15);
    }

    #[test]
    fn regress_readout_slices_channels() {
        let features = FeatureGrid::from_fn(2, 2, 8, 0.5, (0.0, 0.0), |h, w, c| {
            (h * 16 + w * 8 + c) as f64 * 0.1
        });
        let head = RegressionHead::slice_reader(8, 1);
        let regs = regress(&features, &head).unwrap();
        for h in 0..2 {
            for w in 0..2 {
                for r in 0..REGRESSION_WIDTH {
                    assert_eq!(regs.value(h, w, r), features.value(h, w, 1 + r));
                }
            }
        }
    }

    #[test]
    fn regress_rejects_wrong_width() {
        let features = FeatureGrid::<f64>::with_origin(2, 2, 4, 0.5, (0.0, 0.0));
        let head = RegressionHead::slice_reader(8, 1);
        assert!(matches!(regress(&features, &head), Err(Error::Config(_))));
    }

    #[test]
    fn no_cell_above_threshold_gives_empty_list() {
        let conf = ScalarGrid::from_fn(2, 2, |_, _| 0.1f64);
        let regs = reg_grid(2, 2, |_, _, _| 0.0);
        let boxes = decode_boxes(&conf, &regs, 0.5, 0.5).unwrap();
        assert!(boxes.is_empty());
    }

    #[test]
    fn nms_collapses_identical_boxes() {
        let b = DetectionBox { x: 0.0, y: 0.0, length: 4.0, width: 2.0, yaw: 0.3, score: 0.9 };
        let kept = nms(&[b, b], 0.5);
        assert_eq!(kept.len(), 1);
    }

    #[test]
    fn nms_three_boxes_partial_overlap() {
        // Overlapping pair IoU ~0.9, others ~0.1: two survivors at 0.5.
        let a = DetectionBox { x: 0.0, y: 0.0, length: 4.0, width: 2.0, yaw: 0.0, score: 0.9 };
        let b = DetectionBox { x: 0.1, y: 0.0, length: 4.0, width: 2.0, yaw: 0.0, score: 0.8 };
        let c = DetectionBox { x: 5.5, y: 0.0, length: 4.0, width: 2.0, yaw: 0.0, score: 0.7 };
        assert!(rotated_iou(&a, &b) > 0.85);
        assert!(rotated_iou(&a, &c) < 0.15);
        assert!(rotated_iou(&b, &c) < 0.15);
        let kept = nms(&[a, b, c], 0.5);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].score, 0.9);
        assert_eq!(kept[1].score, 0.7);
    }

    #[test]
    fn nms_is_input_order_independent() {
        let a = DetectionBox { x: 0.0, y: 0.0, length: 4.0, width: 2.0, yaw: 0.1, score: 0.9 };
        let b = DetectionBox { x: 0.5, y: 0.2, length: 4.0, width: 2.0, yaw: 0.1, score: 0.8 };
        let c = DetectionBox { x: 7.0, y: 0.0, length: 4.0, width: 2.0, yaw: 0.0, score: 0.95 };
        let k1 = nms(&[a, b, c], 0.3);
        let k2 = nms(&[c, b, a], 0.3);
        let k3 = nms(&[b, a, c], 0.3);
        assert_eq!(k1, k2);
        assert_eq!(k1, k3);
    }

    #[test]
    fn to_world_rotates_and_translates() {
        let b = DetectionBox { x: 1.0, y: 0.0, length: 4.0, width: 2.0, yaw: 0.0, score: 1.0 };
        let pose = Pose::planar(10.0, 5.0, std::f64::consts::FRAC_PI_2, 0);
        let wb = b.to_world(&pose);
        assert!((wb.x - 10.0).abs() < 1e-12);
        assert!((wb.y - 6.0).abs() < 1e-12);
        assert!((wb.yaw - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn record_export_format() {
        let b = DetectionBox { x: 1.5, y: -2.0, length: 4.0, width: 2.0, yaw: 0.25, score: 0.75 };
        let mut buf = Vec::new();
        write_box_records(&mut buf, 7, &[b]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "7,1.5,-2,4,2,0.25,0.75\n");
    }
}
