//! Rotated-rectangle intersection over union via convex polygon clipping
//! (Sutherland-Hodgman) and the shoelace area formula, all in the scalar
//! domain. Exactness is cross-checked in tests against a Monte-Carlo
//! area-sampling oracle.

use crate::scalar::Real;

use super::DetectionBox;

/// Corner points of a box, counter-clockwise in its own frame order.
pub fn box_corners<T: Real>(b: &DetectionBox<T>) -> [(T, T); 4] {
    let (s, c) = b.yaw.sin_cos();
    let hl = b.length * T::c(0.5);
    let hw = b.width * T::c(0.5);
    let locals = [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)];
    let mut out = [(T::zero(), T::zero()); 4];
    for (i, (lx, ly)) in locals.into_iter().enumerate() {
        out[i] = (c * lx - s * ly + b.x, s * lx + c * ly + b.y);
    }
    out
}

fn polygon_area<T: Real>(pts: &[(T, T)]) -> T {
    if pts.len() < 3 {
        return T::zero();
    }
    let mut acc = T::zero();
    for i in 0..pts.len() {
        let (x1, y1) = pts[i];
        let (x2, y2) = pts[(i + 1) % pts.len()];
        acc += x1 * y2 - x2 * y1;
    }
    (acc * T::c(0.5)).abs()
}

/// Clip `subject` against one directed edge (a -> b) of a counter-clockwise
/// convex clip polygon, keeping the half-plane to the left of the edge.
fn clip_edge<T: Real>(subject: &[(T, T)], a: (T, T), b: (T, T)) -> Vec<(T, T)> {
    let inside = |p: (T, T)| -> bool {
        (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0) >= T::zero()
    };
    let intersect = |p: (T, T), q: (T, T)| -> (T, T) {
        let d1 = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
        let d2 = (b.0 - a.0) * (q.1 - a.1) - (b.1 - a.1) * (q.0 - a.0);
        let t = d1 / (d1 - d2);
        (p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1))
    };
    let mut out = Vec::with_capacity(subject.len() + 2);
    for i in 0..subject.len() {
        let cur = subject[i];
        let prev = subject[(i + subject.len() - 1) % subject.len()];
        let cur_in = inside(cur);
        let prev_in = inside(prev);
        if cur_in {
            if !prev_in {
                out.push(intersect(prev, cur));
            }
            out.push(cur);
        } else if prev_in {
            out.push(intersect(prev, cur));
        }
    }
    out
}

/// Area of the intersection of two convex polygons (counter-clockwise).
fn intersection_area<T: Real>(subject: &[(T, T)], clip: &[(T, T)]) -> T {
    let mut poly: Vec<(T, T)> = subject.to_vec();
    for i in 0..clip.len() {
        if poly.is_empty() {
            return T::zero();
        }
        poly = clip_edge(&poly, clip[i], clip[(i + 1) % clip.len()]);
    }
    polygon_area(&poly)
}

/// Intersection over union of two rotated boxes in a common frame.
pub fn rotated_iou<T: Real>(a: &DetectionBox<T>, b: &DetectionBox<T>) -> T {
    let ca = box_corners(a);
    let cb = box_corners(b);
    let inter = intersection_area(&ca, &cb);
    let area_a = a.length * a.width;
    let area_b = b.length * b.width;
    let union = area_a + area_b - inter;
    if union <= T::zero() {
        T::zero()
    } else {
        inter / union
    }
}
