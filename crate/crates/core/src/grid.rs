//! Dense BEV feature grids and the geometric/numeric primitives every other
//! module builds on: bilinear sampling with zero padding, SE(2) warping
//! between agent frames, and per-cell linear heads.
//!
//! Grid memory layout is row-major `(h, w, c)` so wire encodings and golden
//! fixtures are bit-exact across implementations. Mapping between cell and
//! metric coordinates: column `w` runs along local +x, row `h` along local +y,
//! and `origin` is the metric coordinate of cell (0, 0)'s center in the grid's
//! own frame. A grid is placed in the world by pairing it with a [`Pose`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{self, Real};

/// Agent pose in the shared world frame. Only the SE(2) components
/// (x, y, yaw) affect BEV warps; z, roll and pitch are carried for the
/// pose-noise experiments but ignored by the planar geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose<T> {
    pub x: T,
    pub y: T,
    pub z: T,
    pub roll: T,
    pub pitch: T,
    pub yaw: T,
    /// Frame index the pose was sampled at.
    pub frame: u32,
}

/// Wrap an angle into (-pi, pi]. Returns the input untouched when it is
/// already inside the interval so noise-free paths stay bit-identical.
pub fn normalize_angle<T: Real>(a: T) -> T {
    let pi = T::PI();
    if a > -pi && a <= pi {
        return a;
    }
    let two_pi = T::c(2.0) * pi;
    let mut r = (a + pi) % two_pi;
    if r <= T::zero() {
        r += two_pi;
    }
    r - pi
}

impl<T: Real> Pose<T> {
    /// New pose with angles normalized to (-pi, pi].
    pub fn new(x: T, y: T, z: T, roll: T, pitch: T, yaw: T, frame: u32) -> Self {
        Pose {
            x,
            y,
            z,
            roll: normalize_angle(roll),
            pitch: normalize_angle(pitch),
            yaw: normalize_angle(yaw),
            frame,
        }
    }

    /// Planar pose at the world origin.
    pub fn identity(frame: u32) -> Self {
        Pose::new(
            T::zero(),
            T::zero(),
            T::zero(),
            T::zero(),
            T::zero(),
            T::zero(),
            frame,
        )
    }

    /// Planar pose from position and heading.
    pub fn planar(x: T, y: T, yaw: T, frame: u32) -> Self {
        Pose::new(x, y, T::zero(), T::zero(), T::zero(), yaw, frame)
    }

    /// Map a point from this pose's local frame into the world frame (SE(2)).
    pub fn local_to_world(&self, x: T, y: T) -> (T, T) {
        let (s, c) = self.yaw.sin_cos();
        (c * x - s * y + self.x, s * x + c * y + self.y)
    }

    /// Map a world point into this pose's local frame (SE(2)).
    pub fn world_to_local(&self, wx: T, wy: T) -> (T, T) {
        let (s, c) = self.yaw.sin_cos();
        let dx = wx - self.x;
        let dy = wy - self.y;
        (c * dx + s * dy, -s * dx + c * dy)
    }

    /// True when the SE(2) components relevant to BEV warping are identical.
    pub fn se2_eq(&self, other: &Pose<T>) -> bool {
        self.x == other.x && self.y == other.y && self.yaw == other.yaw
    }

    pub fn xy(&self) -> (T, T) {
        (self.x, self.y)
    }
}

/// H x W x C feature map of one agent at one timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid<T> {
    height: usize,
    width: usize,
    channels: usize,
    resolution: T,
    origin: (T, T),
    data: Vec<T>,
}

impl<T: Real> FeatureGrid<T> {
    /// Zero-filled grid with an explicit origin.
    pub fn with_origin(
        height: usize,
        width: usize,
        channels: usize,
        resolution: T,
        origin: (T, T),
    ) -> Self {
        assert!(resolution > T::zero(), "resolution must be positive");
        FeatureGrid {
            height,
            width,
            channels,
            resolution,
            origin,
            data: vec![T::zero(); height * width * channels],
        }
    }

    /// Zero-filled grid centered on its own frame origin (the usual BEV
    /// convention: the agent sits in the middle of its grid).
    pub fn centered(height: usize, width: usize, channels: usize, resolution: T) -> Self {
        let half = T::c(0.5);
        let ox = -(T::c(width as f64) - T::one()) * half * resolution;
        let oy = -(T::c(height as f64) - T::one()) * half * resolution;
        Self::with_origin(height, width, channels, resolution, (ox, oy))
    }

    /// Build from a closure over (h, w, c).
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        resolution: T,
        origin: (T, T),
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut g = Self::with_origin(height, width, channels, resolution, origin);
        for h in 0..height {
            for w in 0..width {
                for c in 0..channels {
                    let idx = g.index(h, w, c);
                    g.data[idx] = f(h, w, c);
                }
            }
        }
        g
    }

    /// Zero grid with the same geometry as `self`.
    pub fn zeros_like(&self) -> Self {
        Self::with_origin(
            self.height,
            self.width,
            self.channels,
            self.resolution,
            self.origin,
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn resolution(&self) -> T {
        self.resolution
    }

    pub fn origin(&self) -> (T, T) {
        self.origin
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, h: usize, w: usize, c: usize) -> usize {
        (h * self.width + w) * self.channels + c
    }

    #[inline]
    pub fn value(&self, h: usize, w: usize, c: usize) -> T {
        self.data[self.index(h, w, c)]
    }

    #[inline]
    pub fn set(&mut self, h: usize, w: usize, c: usize, v: T) {
        let idx = self.index(h, w, c);
        self.data[idx] = v;
    }

    /// Channel vector stored at a cell.
    #[inline]
    pub fn cell(&self, h: usize, w: usize) -> &[T] {
        let base = (h * self.width + w) * self.channels;
        &self.data[base..base + self.channels]
    }

    #[inline]
    pub fn cell_mut(&mut self, h: usize, w: usize) -> &mut [T] {
        let base = (h * self.width + w) * self.channels;
        &mut self.data[base..base + self.channels]
    }

    /// Metric coordinate of a cell center in the grid's own frame.
    #[inline]
    pub fn cell_center_local(&self, h: usize, w: usize) -> (T, T) {
        (
            self.origin.0 + T::c(w as f64) * self.resolution,
            self.origin.1 + T::c(h as f64) * self.resolution,
        )
    }

    /// Continuous cell coordinate (h, w) of a metric point in the grid frame.
    #[inline]
    pub fn local_to_cell(&self, x: T, y: T) -> (T, T) {
        (
            (y - self.origin.1) / self.resolution,
            (x - self.origin.0) / self.resolution,
        )
    }

    pub fn same_geometry(&self, other: &Self) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.channels == other.channels
            && self.resolution == other.resolution
            && self.origin == other.origin
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Bit-exact equality (geometry and every value compared on raw bits).
    pub fn exact_eq(&self, other: &Self) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.channels == other.channels
            && self.resolution.as_f64().to_bits() == other.resolution.as_f64().to_bits()
            && self.origin.0.as_f64().to_bits() == other.origin.0.as_f64().to_bits()
            && self.origin.1.as_f64().to_bits() == other.origin.1.as_f64().to_bits()
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }

    /// Largest absolute difference over all cells and channels.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert!(self.same_geometry(other));
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()))
    }
}

/// H x W scalar map (saliency, dynamics, selection masks, confidences).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Real> ScalarGrid<T> {
    pub fn zeros(height: usize, width: usize) -> Self {
        ScalarGrid {
            height,
            width,
            data: vec![T::zero(); height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut g = Self::zeros(height, width);
        for h in 0..height {
            for w in 0..width {
                g.data[h * width + w] = f(h, w);
            }
        }
        g
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn value(&self, h: usize, w: usize) -> T {
        self.data[h * self.width + w]
    }

    #[inline]
    pub fn set(&mut self, h: usize, w: usize, v: T) {
        self.data[h * self.width + w] = v;
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        ScalarGrid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| f(*v)).collect(),
        }
    }

    pub fn max_value(&self) -> T {
        self.data.iter().fold(T::neg_infinity(), |m, v| m.max(*v))
    }
}

/// Per-cell linear map C -> 1: a dot product plus bias. This is the shape of
/// both the classification head and each row of the box-regression head.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead<T> {
    pub weights: Vec<T>,
    pub bias: T,
}

impl<T: Real> LinearHead<T> {
    pub fn new(weights: Vec<T>, bias: T) -> Self {
        LinearHead { weights, bias }
    }

    /// One-hot head reading a single channel.
    pub fn one_hot(channels: usize, channel: usize) -> Self {
        let mut w = vec![T::zero(); channels];
        w[channel] = T::one();
        LinearHead {
            weights: w,
            bias: T::zero(),
        }
    }

    pub fn input_width(&self) -> usize {
        self.weights.len()
    }

    #[inline]
    pub fn respond(&self, cell: &[T]) -> T {
        let mut acc = self.bias;
        for (w, v) in self.weights.iter().zip(cell) {
            acc += *w * *v;
        }
        acc
    }

    /// Per-cell dot product plus bias over the whole grid. No nonlinearity;
    /// callers apply the sigmoid themselves.
    pub fn apply(&self, grid: &FeatureGrid<T>) -> Result<ScalarGrid<T>> {
        if self.weights.len() != grid.channels() {
            return Err(Error::config(format!(
                "head width {} does not match grid channels {}",
                self.weights.len(),
                grid.channels()
            )));
        }
        let mut out = ScalarGrid::zeros(grid.height(), grid.width());
        for h in 0..grid.height() {
            for w in 0..grid.width() {
                out.set(h, w, self.respond(grid.cell(h, w)));
            }
        }
        Ok(out)
    }
}

/// Per-cell dot product plus bias; see [`LinearHead::apply`].
pub fn apply_head<T: Real>(grid: &FeatureGrid<T>, head: &LinearHead<T>) -> Result<ScalarGrid<T>> {
    head.apply(grid)
}

/// Elementwise logistic sigmoid of a scalar grid.
pub fn sigmoid_grid<T: Real>(grid: &ScalarGrid<T>) -> ScalarGrid<T> {
    grid.map(scalar::sigmoid)
}

/// Bilinear interpolation of the four cell vectors surrounding a continuous
/// (h, w) coordinate. Coordinates outside [0, H-1] x [0, W-1] contribute
/// zero (zero padding); a point on an integer cell returns the stored vector
/// exactly.
pub fn bilinear_sample<T: Real>(grid: &FeatureGrid<T>, point: (T, T)) -> Vec<T> {
    let mut out = vec![T::zero(); grid.channels()];
    bilinear_sample_into(grid, point, &mut out);
    out
}

/// As [`bilinear_sample`] but writing into a caller-provided buffer.
pub fn bilinear_sample_into<T: Real>(grid: &FeatureGrid<T>, point: (T, T), out: &mut [T]) {
    debug_assert_eq!(out.len(), grid.channels());
    for v in out.iter_mut() {
        *v = T::zero();
    }
    let (ph, pw) = point;
    let h0 = ph.floor();
    let w0 = pw.floor();
    let fh = ph - h0;
    let fw = pw - w0;
    let h0i = h0.as_f64() as i64;
    let w0i = w0.as_f64() as i64;
    let corners = [
        (h0i, w0i, (T::one() - fh) * (T::one() - fw)),
        (h0i, w0i + 1, (T::one() - fh) * fw),
        (h0i + 1, w0i, fh * (T::one() - fw)),
        (h0i + 1, w0i + 1, fh * fw),
    ];
    for (ch, cw, weight) in corners {
        if ch < 0 || cw < 0 || ch >= grid.height() as i64 || cw >= grid.width() as i64 {
            continue;
        }
        let cell = grid.cell(ch as usize, cw as usize);
        for (o, v) in out.iter_mut().zip(cell) {
            *o += weight * *v;
        }
    }
}

/// The four bilinear corners as (row, col, weight).
pub(crate) type BilinearCorners<T> = [(i64, i64, T); 4];
/// Per-corner weight gradients with respect to (h, w).
pub(crate) type CornerWeightGrads<T> = [(T, T); 4];

/// Gradient of one output channel of [`bilinear_sample`] with respect to the
/// sampling position, plus the corner scatter weights. Used by the attention
/// backward pass.
pub(crate) fn bilinear_corners<T: Real>(
    grid_h: usize,
    grid_w: usize,
    point: (T, T),
) -> (BilinearCorners<T>, CornerWeightGrads<T>) {
    let (ph, pw) = point;
    let h0 = ph.floor();
    let w0 = pw.floor();
    let fh = ph - h0;
    let fw = pw - w0;
    let h0i = h0.as_f64() as i64;
    let w0i = w0.as_f64() as i64;
    let one = T::one();
    let corners = [
        (h0i, w0i, (one - fh) * (one - fw)),
        (h0i, w0i + 1, (one - fh) * fw),
        (h0i + 1, w0i, fh * (one - fw)),
        (h0i + 1, w0i + 1, fh * fw),
    ];
    // d(weight)/d(ph), d(weight)/d(pw) per corner, zero when out of bounds.
    let mut dw = [
        (-(one - fw), -(one - fh)),
        (-fw, one - fh),
        (one - fw, -fh),
        (fw, fh),
    ];
    for (i, (ch, cw, _)) in corners.iter().enumerate() {
        if *ch < 0 || *cw < 0 || *ch >= grid_h as i64 || *cw >= grid_w as i64 {
            dw[i] = (T::zero(), T::zero());
        }
    }
    (corners, dw)
}

/// Re-express a grid attached at `src_pose` in the frame of `dst_pose`,
/// keeping the grid geometry. For each destination cell center the world
/// coordinate is computed from `dst_pose`, mapped into the source frame via
/// `src_pose`, and bilinear-sampled with zero padding. Identical poses take a
/// fast path so the identity warp is bit-exact.
pub fn warp_to_frame<T: Real>(
    grid: &FeatureGrid<T>,
    src_pose: &Pose<T>,
    dst_pose: &Pose<T>,
) -> FeatureGrid<T> {
    if src_pose.se2_eq(dst_pose) {
        return grid.clone();
    }
    let mut out = grid.zeros_like();
    let mut buf = vec![T::zero(); grid.channels()];
    for h in 0..grid.height() {
        for w in 0..grid.width() {
            let (lx, ly) = grid.cell_center_local(h, w);
            let (wx, wy) = dst_pose.local_to_world(lx, ly);
            let (sx, sy) = src_pose.world_to_local(wx, wy);
            let p = grid.local_to_cell(sx, sy);
            bilinear_sample_into(grid, p, &mut buf);
            out.cell_mut(h, w).copy_from_slice(&buf);
        }
    }
    out
}

/// As [`warp_to_frame`] but resampling onto an explicit destination geometry.
/// The destination resolution must match the source grid's.
pub fn warp_to_geometry<T: Real>(
    grid: &FeatureGrid<T>,
    src_pose: &Pose<T>,
    dst_pose: &Pose<T>,
    dst_like: &FeatureGrid<T>,
) -> Result<FeatureGrid<T>> {
    if dst_like.resolution() != grid.resolution() {
        return Err(Error::config(format!(
            "warp destination resolution {} does not match source {}",
            dst_like.resolution(),
            grid.resolution()
        )));
    }
    if dst_like.channels() != grid.channels() {
        return Err(Error::config(format!(
            "warp destination channels {} does not match source {}",
            dst_like.channels(),
            grid.channels()
        )));
    }
    if grid.same_geometry(dst_like) {
        return Ok(warp_to_frame(grid, src_pose, dst_pose));
    }
    let mut out = dst_like.zeros_like();
    let mut buf = vec![T::zero(); grid.channels()];
    for h in 0..out.height() {
        for w in 0..out.width() {
            let (lx, ly) = out.cell_center_local(h, w);
            let (wx, wy) = dst_pose.local_to_world(lx, ly);
            let (sx, sy) = src_pose.world_to_local(wx, wy);
            let p = grid.local_to_cell(sx, sy);
            bilinear_sample_into(grid, p, &mut buf);
            out.cell_mut(h, w).copy_from_slice(&buf);
        }
    }
    Ok(out)
}
