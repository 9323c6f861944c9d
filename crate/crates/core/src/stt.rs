//! Spatio-temporal transmission: saliency and dynamic maps, the blended
//! selection mask, token selection under a threshold or byte budget,
//! communication-volume accounting, and receiver-side reconstruction of the
//! full feature from tokens plus pose-warped history.
//!
//! The selection mask is continuous; a threshold binarizes its support, and
//! tokens carry the original feature values (not the mask-scaled product) so
//! the receiver can place exact features. Payloads are quantized to IEEE
//! half precision at selection time, which is the wire boundary.

use half::f16;

use crate::error::{Error, Result};
use crate::grid::{
    sigmoid_grid, warp_to_frame, FeatureGrid, LinearHead, Pose, ScalarGrid,
};
use crate::scalar::{gelu, Real};
use crate::wire::{self, SparseTokenSet, TokenEntry};

/// Protocol parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SttConfig<T> {
    /// Rescale rate blending saliency against dynamics. Zero collapses the
    /// mask to pure saliency.
    pub rho: T,
    /// Mask cutoff controlling how many cells are transmitted.
    pub threshold: T,
    /// Temporal interval, in frames, between the current frame and the
    /// history reference.
    pub tau: u32,
}

impl<T: Real> SttConfig<T> {
    pub fn new(rho: T, threshold: T, tau: u32) -> Result<Self> {
        if rho < T::zero() || !rho.is_finite() {
            return Err(Error::config(format!("rho must be >= 0, got {rho}")));
        }
        if threshold < T::zero() || !threshold.is_finite() {
            return Err(Error::config(format!(
                "threshold must be >= 0, got {threshold}"
            )));
        }
        if tau < 1 {
            return Err(Error::config("tau must be >= 1"));
        }
        Ok(SttConfig { rho, threshold, tau })
    }
}

impl<T: Real> Default for SttConfig<T> {
    /// rho = 1 weights static saliency and dynamics equally at D = 0.5;
    /// threshold 0.01 is the usual operating point.
    fn default() -> Self {
        SttConfig {
            rho: T::one(),
            threshold: T::c(0.01),
            tau: 1,
        }
    }
}

/// Saliency map: sigmoid of the shared classification head's response,
/// values in (0, 1).
pub fn saliency_map<T: Real>(
    features: &FeatureGrid<T>,
    head: &LinearHead<T>,
) -> Result<ScalarGrid<T>> {
    Ok(sigmoid_grid(&head.apply(features)?))
}

/// Dynamic map: elementwise |E_now - E_prev|, values in [0, 1].
pub fn dynamic_map<T: Real>(
    e_now: &ScalarGrid<T>,
    e_prev: &ScalarGrid<T>,
) -> Result<ScalarGrid<T>> {
    if !e_now.same_shape(e_prev) {
        return Err(Error::shape(format!(
            "dynamic map inputs {}x{} vs {}x{}",
            e_now.height(),
            e_now.width(),
            e_prev.height(),
            e_prev.width()
        )));
    }
    Ok(ScalarGrid::from_fn(e_now.height(), e_now.width(), |h, w| {
        (e_now.value(h, w) - e_prev.value(h, w)).abs()
    }))
}

/// Selection mask M = E * (1/(rho+1) + D * rho).
pub fn selection_mask<T: Real>(
    saliency: &ScalarGrid<T>,
    dynamic: &ScalarGrid<T>,
    rho: T,
) -> Result<ScalarGrid<T>> {
    if !saliency.same_shape(dynamic) {
        return Err(Error::shape(format!(
            "selection mask inputs {}x{} vs {}x{}",
            saliency.height(),
            saliency.width(),
            dynamic.height(),
            dynamic.width()
        )));
    }
    if rho < T::zero() {
        return Err(Error::config(format!("rho must be >= 0, got {rho}")));
    }
    let inv = T::one() / (rho + T::one());
    Ok(ScalarGrid::from_fn(
        saliency.height(),
        saliency.width(),
        |h, w| saliency.value(h, w) * (inv + dynamic.value(h, w) * rho),
    ))
}

fn quantize_cell<T: Real>(cell: &[T]) -> Vec<f16> {
    cell.iter().map(|v| f16::from_f64(v.as_f64())).collect()
}

/// Select the cells where the mask exceeds `threshold` and pack their
/// original feature vectors into a token set, sorted by (h, w).
pub fn select_tokens<T: Real>(
    features: &FeatureGrid<T>,
    mask: &ScalarGrid<T>,
    threshold: T,
    sender_id: u16,
    frame: u32,
    pose: &Pose<T>,
) -> Result<SparseTokenSet> {
    if mask.height() != features.height() || mask.width() != features.width() {
        return Err(Error::shape(format!(
            "mask {}x{} vs features {}x{}",
            mask.height(),
            mask.width(),
            features.height(),
            features.width()
        )));
    }
    let mut entries = Vec::new();
    for h in 0..features.height() {
        for w in 0..features.width() {
            if mask.value(h, w) > threshold {
                entries.push(TokenEntry {
                    h: h as u16,
                    w: w as u16,
                    values: quantize_cell(features.cell(h, w)),
                });
            }
        }
    }
    Ok(SparseTokenSet::new(
        sender_id,
        frame,
        pose,
        features.channels() as u16,
        entries,
    ))
}

/// Select the highest-mask cells whose serialized size fits `budget_bytes`,
/// ties on equal mask broken by (h, w) order. Returns the token set and the
/// smallest threshold that reproduces the same selection through
/// [`select_tokens`] (exact when mask values at the cut are distinct).
pub fn select_under_budget<T: Real>(
    features: &FeatureGrid<T>,
    mask: &ScalarGrid<T>,
    budget_bytes: usize,
    sender_id: u16,
    frame: u32,
    pose: &Pose<T>,
) -> Result<(SparseTokenSet, T)> {
    if mask.height() != features.height() || mask.width() != features.width() {
        return Err(Error::shape(format!(
            "mask {}x{} vs features {}x{}",
            mask.height(),
            mask.width(),
            features.height(),
            features.width()
        )));
    }
    let channels = features.channels();
    let overhead = wire::HEADER_LEN + wire::CRC_LEN;
    let per_entry = wire::entry_len(channels);
    let capacity = budget_bytes.saturating_sub(overhead) / per_entry;

    // Rank all cells by mask descending, ties by (h, w) ascending.
    let mut ranked: Vec<(usize, usize)> = (0..features.height())
        .flat_map(|h| (0..features.width()).map(move |w| (h, w)))
        .collect();
    ranked.sort_by(|a, b| {
        mask.value(b.0, b.1)
            .partial_cmp(&mask.value(a.0, a.1))
            .unwrap()
            .then(a.cmp(b))
    });

    let k = capacity.min(ranked.len());
    let mut entries: Vec<TokenEntry> = ranked[..k]
        .iter()
        .map(|&(h, w)| TokenEntry {
            h: h as u16,
            w: w as u16,
            values: quantize_cell(features.cell(h, w)),
        })
        .collect();
    entries.sort_by_key(|e| (e.h, e.w));

    let effective_threshold = if k == ranked.len() {
        T::zero()
    } else {
        let (h, w) = ranked[k];
        mask.value(h, w)
    };
    let set = SparseTokenSet::new(sender_id, frame, pose, channels as u16, entries);
    debug_assert!(set.encoded_len() <= budget_bytes.max(overhead));
    Ok((set, effective_threshold))
}

/// Communication volume in log2 megabytes:
/// `log2(num_cells * channels * 16 / (8 * 2^20))`. Returns `None` for an
/// empty transmission, which has no well-defined volume.
pub fn comm_volume<T: Real>(num_cells: u64, channels: u64) -> Option<T> {
    if num_cells == 0 || channels == 0 {
        return None;
    }
    let bits = T::c((num_cells * channels * 16) as f64);
    let denom = T::c((8u64 << 20) as f64);
    Some((bits / denom).log2())
}

/// Reconstruction network: two 3x3 neighborhood filter stacks with
/// per-channel normalization and GELU between them, applied as a residual
/// whose output scale starts at zero. With zero parameters (or the default
/// zero scale) the network contributes exactly nothing, so reconstruction
/// degenerates to the pure token/history blend.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconNet<T> {
    channels: usize,
    /// First 3x3 filter bank, layout [c_out][c_in][3*3].
    w1: Vec<T>,
    b1: Vec<T>,
    /// Second 3x3 filter bank.
    w2: Vec<T>,
    b2: Vec<T>,
    /// Per-channel residual scale, initialized to zero.
    scale: Vec<T>,
}

impl<T: Real> ReconNet<T> {
    /// All-zero parameters: exact passthrough.
    pub fn zeros(channels: usize) -> Self {
        let n = channels * channels * 9;
        ReconNet {
            channels,
            w1: vec![T::zero(); n],
            b1: vec![T::zero(); channels],
            w2: vec![T::zero(); n],
            b2: vec![T::zero(); channels],
            scale: vec![T::zero(); channels],
        }
    }

    /// Deterministic seeded filters. The residual scale still starts at
    /// zero, so a freshly seeded net is also an exact passthrough until the
    /// scale is raised.
    pub fn seeded(channels: usize, seed: u64) -> Self {
        use rand::{RngExt, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut net = Self::zeros(channels);
        for w in net.w1.iter_mut().chain(net.w2.iter_mut()) {
            *w = T::c(rng.random_range(-0.05..0.05));
        }
        net
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn set_scale(&mut self, s: T) {
        for v in self.scale.iter_mut() {
            *v = s;
        }
    }

    pub fn is_passthrough(&self) -> bool {
        self.scale.iter().all(|s| *s == T::zero())
    }

    fn conv3x3(&self, input: &FeatureGrid<T>, w: &[T], b: &[T]) -> FeatureGrid<T> {
        let c = self.channels;
        let mut out = input.zeros_like();
        for h in 0..input.height() {
            for ww in 0..input.width() {
                for co in 0..c {
                    let mut acc = b[co];
                    for dh in -1i64..=1 {
                        for dw in -1i64..=1 {
                            let hh = h as i64 + dh;
                            let wi = ww as i64 + dw;
                            if hh < 0
                                || wi < 0
                                || hh >= input.height() as i64
                                || wi >= input.width() as i64
                            {
                                continue;
                            }
                            let tap = ((dh + 1) * 3 + (dw + 1)) as usize;
                            let cell = input.cell(hh as usize, wi as usize);
                            for (ci, v) in cell.iter().enumerate() {
                                acc += w[(co * c + ci) * 9 + tap] * *v;
                            }
                        }
                    }
                    out.set(h, ww, co, acc);
                }
            }
        }
        out
    }

    fn normalize_per_channel(&self, grid: &mut FeatureGrid<T>) {
        let cells = T::c(grid.cells() as f64);
        let eps = T::c(1e-6);
        for c in 0..self.channels {
            let mut mean = T::zero();
            for h in 0..grid.height() {
                for w in 0..grid.width() {
                    mean += grid.value(h, w, c);
                }
            }
            mean /= cells;
            let mut var = T::zero();
            for h in 0..grid.height() {
                for w in 0..grid.width() {
                    let d = grid.value(h, w, c) - mean;
                    var += d * d;
                }
            }
            var /= cells;
            let inv = T::one() / (var + eps).sqrt();
            for h in 0..grid.height() {
                for w in 0..grid.width() {
                    let v = (grid.value(h, w, c) - mean) * inv;
                    grid.set(h, w, c, v);
                }
            }
        }
    }

    /// Residual refinement: `x + scale * conv(gelu(norm(conv(x))))`.
    pub fn refine(&self, blended: &FeatureGrid<T>) -> FeatureGrid<T> {
        if self.is_passthrough() {
            return blended.clone();
        }
        let mut mid = self.conv3x3(blended, &self.w1, &self.b1);
        self.normalize_per_channel(&mut mid);
        for v in mid.data_mut() {
            *v = gelu(*v);
        }
        let res = self.conv3x3(&mid, &self.w2, &self.b2);
        let mut out = blended.clone();
        for h in 0..out.height() {
            for w in 0..out.width() {
                for c in 0..self.channels {
                    let v = out.value(h, w, c) + self.scale[c] * res.value(h, w, c);
                    out.set(h, w, c, v);
                }
            }
        }
        out
    }
}

/// Receiver-side reconstruction: warp the previous reconstructed feature
/// into the current pose frame, overwrite the token cells with the exact
/// transmitted values, and apply the residual refinement network.
pub fn reconstruct<T: Real>(
    tokens: &SparseTokenSet,
    r_prev: &FeatureGrid<T>,
    prev_pose: &Pose<T>,
    now_pose: &Pose<T>,
    net: &ReconNet<T>,
) -> Result<FeatureGrid<T>> {
    if tokens.channels as usize != r_prev.channels() {
        return Err(Error::config(format!(
            "token channels {} do not match history channels {}",
            tokens.channels,
            r_prev.channels()
        )));
    }
    if net.channels() != r_prev.channels() {
        return Err(Error::config(format!(
            "reconstruction net channels {} do not match grid channels {}",
            net.channels(),
            r_prev.channels()
        )));
    }
    tokens.validate_bounds(r_prev.height(), r_prev.width())?;

    let mut blended = warp_to_frame(r_prev, prev_pose, now_pose);
    for e in &tokens.entries {
        let cell = blended.cell_mut(e.h as usize, e.w as usize);
        for (slot, v) in cell.iter_mut().zip(&e.values) {
            *slot = T::c(v.to_f64());
        }
    }
    Ok(net.refine(&blended))
}
