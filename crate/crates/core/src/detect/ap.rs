//! Average precision with greedy IoU matching and all-point interpolation
//! (area under the precision-recall curve), plus the range-bucketed
//! evaluation used by the experiment harness. AP is invariant under any
//! strictly monotone transform of the detection scores.

use crate::scalar::Real;

use super::iou::rotated_iou;
use super::{canonical_sort, DetectionBox};

/// Distance buckets measured from the ego position, in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeBuckets<T> {
    pub short_max: T,
    pub middle_max: T,
    pub long_max: T,
}

impl<T: Real> Default for RangeBuckets<T> {
    fn default() -> Self {
        RangeBuckets {
            short_max: T::c(30.0),
            middle_max: T::c(50.0),
            long_max: T::c(100.0),
        }
    }
}

/// AP at one IoU threshold, overall plus per range bucket. `None` marks a
/// bucket with no ground truth, where precision-recall is undefined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApBuckets<T> {
    pub overall: Option<T>,
    pub short: Option<T>,
    pub middle: Option<T>,
    pub long: Option<T>,
}

/// Evaluation summary at IoU 0.5 and 0.7.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult<T> {
    pub ap50: ApBuckets<T>,
    pub ap70: ApBuckets<T>,
    pub num_dets: usize,
    pub num_gts: usize,
}

/// Greedy matching by descending score: each detection takes the unmatched
/// ground truth with the highest IoU at or above the threshold. Returns the
/// matched gt index per detection, in the order of the canonically sorted
/// detections, plus that sorted list.
pub fn match_greedy<T: Real>(
    dets: &[DetectionBox<T>],
    gts: &[DetectionBox<T>],
    iou_thr: T,
) -> (Vec<DetectionBox<T>>, Vec<Option<usize>>) {
    let mut sorted = dets.to_vec();
    canonical_sort(&mut sorted);
    let mut taken = vec![false; gts.len()];
    let mut matches = Vec::with_capacity(sorted.len());
    for det in &sorted {
        let mut best: Option<(usize, T)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if taken[gi] {
                continue;
            }
            let iou = rotated_iou(det, gt);
            if iou >= iou_thr {
                match best {
                    Some((_, b)) if b >= iou => {}
                    _ => best = Some((gi, iou)),
                }
            }
        }
        match best {
            Some((gi, _)) => {
                taken[gi] = true;
                matches.push(Some(gi));
            }
            None => matches.push(None),
        }
    }
    (sorted, matches)
}

/// All-point-interpolated average precision at one IoU threshold.
/// `None` when there is no ground truth (PR undefined); zero detections
/// against existing ground truth score 0.
pub fn average_precision<T: Real>(
    dets: &[DetectionBox<T>],
    gts: &[DetectionBox<T>],
    iou_thr: T,
) -> Option<T> {
    if gts.is_empty() {
        return None;
    }
    if dets.is_empty() {
        return Some(T::zero());
    }
    let (_, matches) = match_greedy(dets, gts, iou_thr);
    let total_gt = T::c(gts.len() as f64);
    let mut tp = T::zero();
    let mut fp = T::zero();
    let mut precisions = Vec::with_capacity(matches.len());
    let mut recalls = Vec::with_capacity(matches.len());
    for m in &matches {
        if m.is_some() {
            tp += T::one();
        } else {
            fp += T::one();
        }
        precisions.push(tp / (tp + fp));
        recalls.push(tp / total_gt);
    }
    // Interpolate: precision at recall r is the max precision at recall >= r.
    let mut interp = precisions.clone();
    for i in (0..interp.len().saturating_sub(1)).rev() {
        interp[i] = interp[i].max(interp[i + 1]);
    }
    let mut ap = T::zero();
    let mut prev_recall = T::zero();
    for i in 0..recalls.len() {
        let dr = recalls[i] - prev_recall;
        if dr > T::zero() {
            ap += dr * interp[i];
            prev_recall = recalls[i];
        }
    }
    Some(ap)
}

fn in_bucket<T: Real>(b: &DetectionBox<T>, ego: (T, T), lo: T, hi: T) -> bool {
    let dx = b.x - ego.0;
    let dy = b.y - ego.1;
    let d = (dx * dx + dy * dy).sqrt();
    d >= lo && d < hi
}

fn bucket_ap<T: Real>(
    dets: &[DetectionBox<T>],
    gts: &[DetectionBox<T>],
    ego: (T, T),
    lo: T,
    hi: T,
    iou_thr: T,
) -> Option<T> {
    let bd: Vec<DetectionBox<T>> = dets
        .iter()
        .filter(|b| in_bucket(b, ego, lo, hi))
        .cloned()
        .collect();
    let bg: Vec<DetectionBox<T>> = gts
        .iter()
        .filter(|b| in_bucket(b, ego, lo, hi))
        .cloned()
        .collect();
    average_precision(&bd, &bg, iou_thr)
}

fn ap_at<T: Real>(
    dets: &[DetectionBox<T>],
    gts: &[DetectionBox<T>],
    ego: (T, T),
    buckets: &RangeBuckets<T>,
    iou_thr: T,
) -> ApBuckets<T> {
    ApBuckets {
        overall: average_precision(dets, gts, iou_thr),
        short: bucket_ap(dets, gts, ego, T::zero(), buckets.short_max, iou_thr),
        middle: bucket_ap(dets, gts, ego, buckets.short_max, buckets.middle_max, iou_thr),
        long: bucket_ap(dets, gts, ego, buckets.middle_max, buckets.long_max, iou_thr),
    }
}

/// Evaluate detections against ground truth in a common frame, at IoU 0.5
/// and 0.7, overall and per range bucket (distances measured to `ego`).
pub fn evaluate_ap<T: Real>(
    dets: &[DetectionBox<T>],
    gts: &[DetectionBox<T>],
    ego: (T, T),
    buckets: &RangeBuckets<T>,
) -> EvalResult<T> {
    EvalResult {
        ap50: ap_at(dets, gts, ego, buckets, T::c(0.5)),
        ap70: ap_at(dets, gts, ego, buckets, T::c(0.7)),
        num_dets: dets.len(),
        num_gts: gts.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x: f64, y: f64, score: f64) -> DetectionBox<f64> {
        DetectionBox { x, y, length: 4.0, width: 2.0, yaw: 0.0, score }
    }

    #[test]
    fn perfect_detections_score_one() {
        let gts = vec![bx(0.0, 0.0, 1.0), bx(10.0, 0.0, 1.0), bx(0.0, 12.0, 1.0)];
        let dets = gts.clone();
        for thr in [0.5, 0.7] {
            assert_eq!(average_precision(&dets, &gts, thr), Some(1.0));
        }
    }

    #[test]
    fn no_detections_score_zero() {
        let gts = vec![bx(0.0, 0.0, 1.0)];
        assert_eq!(average_precision::<f64>(&[], &gts, 0.5), Some(0.0));
        assert_eq!(average_precision::<f64>(&[], &[], 0.5), None);
    }

    #[test]
    fn hand_enumerated_pr_curve() {
        // 3 gts; 4 dets ranked TP, FP, TP, TP by score.
        // ranks:      1    2    3    4
        // precision:  1   1/2  2/3  3/4
        // recall:    1/3  1/3  2/3   1
        // All-point AP = 1/3*1 + 1/3*(3/4) + 1/3*(3/4) = 5/6.
        let gts = vec![bx(0.0, 0.0, 1.0), bx(20.0, 0.0, 1.0), bx(40.0, 0.0, 1.0)];
        let dets = vec![
            bx(0.0, 0.0, 0.9),   // TP
            bx(100.0, 0.0, 0.8), // FP (no gt nearby)
            bx(20.0, 0.0, 0.7),  // TP
            bx(40.0, 0.0, 0.6),  // TP
        ];
        let ap = average_precision(&dets, &gts, 0.5).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-12, "ap={ap}");
    }

    #[test]
    fn ap_invariant_under_monotone_score_transform() {
        let gts = vec![bx(0.0, 0.0, 1.0), bx(20.0, 0.0, 1.0)];
        let dets = vec![bx(0.0, 0.0, 0.9), bx(60.0, 0.0, 0.5), bx(20.0, 0.0, 0.3)];
        let base = average_precision(&dets, &gts, 0.5).unwrap();
        let squashed: Vec<_> = dets
            .iter()
            .map(|d| DetectionBox { score: d.score * 0.1 + 0.05, ..*d })
            .collect();
        let sq = average_precision(&squashed, &gts, 0.5).unwrap();
        assert_eq!(base, sq);
        let exp: Vec<_> = dets
            .iter()
            .map(|d| DetectionBox { score: d.score.exp(), ..*d })
            .collect();
        assert_eq!(base, average_precision(&exp, &gts, 0.5).unwrap());
    }

    #[test]
    fn each_gt_matched_at_most_once() {
        let gts = vec![bx(0.0, 0.0, 1.0)];
        let dets = vec![bx(0.0, 0.0, 0.9), bx(0.1, 0.0, 0.8)];
        let (_, matches) = match_greedy(&dets, &gts, 0.5);
        assert_eq!(matches[0], Some(0));
        assert_eq!(matches[1], None);
    }

    #[test]
    fn range_buckets_assign_by_distance_to_ego() {
        let ego = (0.0, 0.0);
        let gts = vec![bx(10.0, 0.0, 1.0), bx(40.0, 0.0, 1.0), bx(70.0, 0.0, 1.0)];
        // detect only the short- and long-range objects
        let dets = vec![bx(10.0, 0.0, 0.9), bx(70.0, 0.0, 0.8)];
        let r = evaluate_ap(&dets, &gts, ego, &RangeBuckets::default());
        assert_eq!(r.ap50.short, Some(1.0));
        assert_eq!(r.ap50.middle, Some(0.0));
        assert_eq!(r.ap50.long, Some(1.0));
        assert!((r.ap50.overall.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.num_dets, 2);
        assert_eq!(r.num_gts, 3);
    }
}
