//! Unified spatio-temporal fusion: agent-metadata injection (align
//! transformation), multi-agent deformable attention over co-registered BEV
//! grids, analytic gradients for verification, and the recurrent fusion step
//! that treats the projected previous fusion result as one extra
//! time-delayed agent.

mod gradient;
mod mada;
mod ustf;

pub use gradient::{mada_gradient, MadaGradients};
pub use mada::{mada, mada_explicit, HeadDiag, MadaDiagnostics, MadaOutput, QueryDiag};
pub use ustf::{
    own_cell_ref_points, ustf_step, FusionAgent, FusionOutput, QueryRouting, Sensor, UstfContext,
    UstfOptions,
};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::FeatureGrid;
use crate::scalar::Real;

/// Discrete agent type shared during metadata exchange.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentKind {
    Vehicle,
    Infrastructure,
}

/// Per-agent metadata injected into the fusion inputs: the discrete type
/// plus continuous values (speed, link latency, and the delay tag that marks
/// the historical agent).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentMeta<T> {
    pub kind: AgentKind,
    pub speed_mps: T,
    pub latency_s: T,
    /// Zero for current agents, tau * frame period for the historical agent.
    pub delay_s: T,
}

impl<T: Real> AgentMeta<T> {
    pub fn current(kind: AgentKind, speed_mps: T, latency_s: T) -> Self {
        AgentMeta {
            kind,
            speed_mps,
            latency_s,
            delay_s: T::zero(),
        }
    }

    pub fn historical(delay_s: T) -> Self {
        AgentMeta {
            kind: AgentKind::Vehicle,
            speed_mps: T::zero(),
            latency_s: T::zero(),
            delay_s,
        }
    }

    fn continuous(&self) -> [T; 3] {
        [self.speed_mps, self.latency_s, self.delay_s]
    }
}

/// Align-transformation parameters: a per-channel multiplicative scale from
/// the discrete agent type and a per-channel additive bias that is linear in
/// the continuous metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignParams<T> {
    channels: usize,
    vehicle_scale: Vec<T>,
    infra_scale: Vec<T>,
    /// Row-major [channels x 3] map from (speed, latency, delay).
    bias_weights: Vec<T>,
    bias_base: Vec<T>,
}

impl<T: Real> AlignParams<T> {
    /// Unit scales and zero biases: the align transformation becomes the
    /// identity (used by the ablation with AT disabled).
    pub fn identity(channels: usize) -> Self {
        AlignParams {
            channels,
            vehicle_scale: vec![T::one(); channels],
            infra_scale: vec![T::one(); channels],
            bias_weights: vec![T::zero(); channels * 3],
            bias_base: vec![T::zero(); channels],
        }
    }

    /// Deterministic near-identity parameters: scales jittered around one,
    /// small continuous-bias weights. Strong enough that agent types are
    /// distinguishable, weak enough not to drown the features.
    pub fn seeded(channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa11c);
        let mut p = Self::identity(channels);
        for s in p.vehicle_scale.iter_mut().chain(p.infra_scale.iter_mut()) {
            *s = T::c(1.0 + rng.random_range(-0.05..0.05));
        }
        for w in p.bias_weights.iter_mut() {
            *w = T::c(rng.random_range(-0.01..0.01));
        }
        p
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn scale_for(&self, kind: AgentKind) -> &[T] {
        match kind {
            AgentKind::Vehicle => &self.vehicle_scale,
            AgentKind::Infrastructure => &self.infra_scale,
        }
    }

    pub fn bias_for(&self, meta: &AgentMeta<T>) -> Vec<T> {
        let u = meta.continuous();
        (0..self.channels)
            .map(|c| {
                self.bias_base[c]
                    + self.bias_weights[c * 3] * u[0]
                    + self.bias_weights[c * 3 + 1] * u[1]
                    + self.bias_weights[c * 3 + 2] * u[2]
            })
            .collect()
    }
}

/// Apply the align transformation to each agent grid: per-channel scale from
/// the discrete type, plus per-channel bias from the continuous metadata.
pub fn align_transform<T: Real>(
    features: &[&FeatureGrid<T>],
    metas: &[AgentMeta<T>],
    params: &AlignParams<T>,
) -> Result<Vec<FeatureGrid<T>>> {
    if features.len() != metas.len() {
        return Err(Error::config(format!(
            "align transform got {} grids but {} metadata entries",
            features.len(),
            metas.len()
        )));
    }
    let mut out = Vec::with_capacity(features.len());
    for (grid, meta) in features.iter().zip(metas) {
        if grid.channels() != params.channels {
            return Err(Error::config(format!(
                "align transform channels {} vs grid {}",
                params.channels,
                grid.channels()
            )));
        }
        let scale = params.scale_for(meta.kind);
        let bias = params.bias_for(meta);
        let mut g = (*grid).clone();
        for h in 0..g.height() {
            for w in 0..g.width() {
                let cell = g.cell_mut(h, w);
                for c in 0..cell.len() {
                    cell[c] = scale[c] * cell[c] + bias[c];
                }
            }
        }
        out.push(g);
    }
    Ok(out)
}

/// Parameters of multi-agent deformable attention. `agents` is the maximum
/// number of fusion inputs the weight generator is sized for (N current
/// agents plus the historical one); a call may pass fewer, in which case the
/// softmax runs over the present agents' blocks only.
#[derive(Debug, Clone, PartialEq)]
pub struct MadaParams<T> {
    pub(crate) channels: usize,
    pub(crate) heads: usize,
    pub(crate) points: usize,
    pub(crate) agents: usize,
    /// Per-head value projection, layout [m][d][c], d < C/M.
    pub(crate) value_proj: Vec<T>,
    /// Per-head output projection, layout [m][c][d].
    pub(crate) out_proj: Vec<T>,
    /// Offset generator: row (m*K + k)*2 + axis over the query feature.
    pub(crate) offset_w: Vec<T>,
    pub(crate) offset_b: Vec<T>,
    /// Weight-logit generator: row ((m*agents + i)*K + k) over the query.
    pub(crate) weight_w: Vec<T>,
    pub(crate) weight_b: Vec<T>,
    /// Per-cell feed-forward refinement (hidden width = channels).
    pub(crate) ffn_w1: Vec<T>,
    pub(crate) ffn_b1: Vec<T>,
    pub(crate) ffn_w2: Vec<T>,
    pub(crate) ffn_b2: Vec<T>,
    pub(crate) at: AlignParams<T>,
}

impl<T: Real> MadaParams<T> {
    fn shell(channels: usize, heads: usize, points: usize, agents: usize) -> Result<Self> {
        if heads == 0 || points == 0 || agents == 0 || channels == 0 {
            return Err(Error::config("mada dimensions must be positive"));
        }
        if !channels.is_multiple_of(heads) {
            return Err(Error::config(format!(
                "channels {channels} not divisible by heads {heads}"
            )));
        }
        let d = channels / heads;
        Ok(MadaParams {
            channels,
            heads,
            points,
            agents,
            value_proj: vec![T::zero(); heads * d * channels],
            out_proj: vec![T::zero(); heads * channels * d],
            offset_w: vec![T::zero(); heads * points * 2 * channels],
            offset_b: vec![T::zero(); heads * points * 2],
            weight_w: vec![T::zero(); heads * agents * points * channels],
            weight_b: vec![T::zero(); heads * agents * points],
            ffn_w1: vec![T::zero(); channels * channels],
            ffn_b1: vec![T::zero(); channels],
            ffn_w2: vec![T::zero(); channels * channels],
            ffn_b2: vec![T::zero(); channels],
            at: AlignParams::identity(channels),
        })
    }

    /// Degenerate attention: block-identity projections (the heads partition
    /// the channels and their composition is the identity), zero offsets,
    /// uniform weights, zero feed-forward. With a single agent the output
    /// equals the input sampled at the reference points.
    pub fn identity(channels: usize, heads: usize, points: usize, agents: usize) -> Result<Self> {
        let mut p = Self::shell(channels, heads, points, agents)?;
        p.set_block_identity_projections();
        Ok(p)
    }

    /// Deterministic random parameters for numeric tests: fractional
    /// offsets, non-uniform weights, dense projections, active feed-forward.
    pub fn seeded(
        channels: usize,
        heads: usize,
        points: usize,
        agents: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut p = Self::shell(channels, heads, points, agents)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3ada);
        let d = channels / heads;
        let proj_amp = 1.0 / (channels as f64).sqrt();
        for v in p.value_proj.iter_mut().chain(p.out_proj.iter_mut()) {
            *v = T::c(rng.random_range(-proj_amp..proj_amp));
        }
        for v in p.offset_w.iter_mut() {
            *v = T::c(rng.random_range(-0.05..0.05));
        }
        for v in p.offset_b.iter_mut() {
            // fractional base offsets keep samples away from cell corners
            let mag = rng.random_range(0.2..0.45);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            *v = T::c(sign * mag);
        }
        for v in p.weight_w.iter_mut() {
            *v = T::c(rng.random_range(-0.2..0.2));
        }
        for v in p.weight_b.iter_mut() {
            *v = T::c(rng.random_range(-0.5..0.5));
        }
        for v in p.ffn_w1.iter_mut().chain(p.ffn_w2.iter_mut()) {
            *v = T::c(rng.random_range(-proj_amp..proj_amp) * 0.5);
        }
        for v in p.ffn_b1.iter_mut().chain(p.ffn_b2.iter_mut()) {
            *v = T::c(rng.random_range(-0.05..0.05));
        }
        let _ = d;
        p.at = AlignParams::seeded(channels, seed);
        Ok(p)
    }

    /// The untrained operating point used for pipeline runs: block-identity
    /// projections, zero offsets, zero feed-forward, and a weight generator
    /// that reads per-input routing scores written into reserved query
    /// channels (channel `routing_base + i` for input slot `i`), scaled by
    /// `gamma`. With routing scores derived from a confidence head this
    /// concentrates attention on the inputs that actually observed a cell.
    pub fn analytic_routed(
        channels: usize,
        heads: usize,
        points: usize,
        agents: usize,
        routing_base: usize,
        gamma: f64,
    ) -> Result<Self> {
        if routing_base + agents > channels {
            return Err(Error::config(format!(
                "routing channels {routing_base}..{} exceed {channels} channels",
                routing_base + agents
            )));
        }
        let mut p = Self::shell(channels, heads, points, agents)?;
        p.set_block_identity_projections();
        for m in 0..heads {
            for i in 0..agents {
                for k in 0..points {
                    let row = (m * agents + i) * points + k;
                    p.weight_w[row * channels + routing_base + i] = T::c(gamma);
                }
            }
        }
        Ok(p)
    }

    fn set_block_identity_projections(&mut self) {
        let d = self.channels / self.heads;
        for m in 0..self.heads {
            for dd in 0..d {
                let c = m * d + dd;
                self.value_proj[(m * d + dd) * self.channels + c] = T::one();
                self.out_proj[(m * self.channels + c) * d + dd] = T::one();
            }
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn max_agents(&self) -> usize {
        self.agents
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    pub fn align(&self) -> &AlignParams<T> {
        &self.at
    }

    pub fn set_align(&mut self, at: AlignParams<T>) {
        assert_eq!(at.channels(), self.channels);
        self.at = at;
    }

    /// Per-head value projection, layout `[m][d][c]` with `d < C/M`.
    pub fn value_proj(&self) -> &[T] {
        &self.value_proj
    }

    /// Per-head output projection, layout `[m][c][d]`.
    pub fn out_proj(&self) -> &[T] {
        &self.out_proj
    }

    /// Feed-forward parameters: (w1, b1, w2, b2), hidden width = channels.
    pub fn ffn(&self) -> (&[T], &[T], &[T], &[T]) {
        (&self.ffn_w1, &self.ffn_b1, &self.ffn_w2, &self.ffn_b2)
    }

    /// Zero the offset generator so every sample lands on the reference
    /// point (used by convexity properties).
    pub fn zero_offset_generator(&mut self) {
        for v in self.offset_w.iter_mut().chain(self.offset_b.iter_mut()) {
            *v = T::zero();
        }
    }

    /// Sampling offsets generated from one query feature, layout
    /// [(m*K + k)*2 + axis], in cell units.
    pub fn offsets_for(&self, query: &[T]) -> Vec<T> {
        let rows = self.heads * self.points * 2;
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &self.offset_w[r * self.channels..(r + 1) * self.channels];
            let mut acc = self.offset_b[r];
            for (w, v) in row.iter().zip(query) {
                acc += *w * *v;
            }
            out.push(acc);
        }
        out
    }

    /// Attention logits for the first `present` agent blocks, layout
    /// [(m*present + i)*K + k].
    pub fn logits_for(&self, query: &[T], present: usize) -> Vec<T> {
        let mut out = Vec::with_capacity(self.heads * present * self.points);
        for m in 0..self.heads {
            for i in 0..present {
                for k in 0..self.points {
                    let r = (m * self.agents + i) * self.points + k;
                    let row = &self.weight_w[r * self.channels..(r + 1) * self.channels];
                    let mut acc = self.weight_b[r];
                    for (w, v) in row.iter().zip(query) {
                        acc += *w * *v;
                    }
                    out.push(acc);
                }
            }
        }
        out
    }

    /// Swap two agent blocks of the weight generator (used by the
    /// permutation-covariance property test).
    pub fn swap_weight_agent_blocks(&mut self, a: usize, b: usize) {
        assert!(a < self.agents && b < self.agents);
        if a == b {
            return;
        }
        for m in 0..self.heads {
            for k in 0..self.points {
                let ra = (m * self.agents + a) * self.points + k;
                let rb = (m * self.agents + b) * self.points + k;
                for c in 0..self.channels {
                    self.weight_w.swap(ra * self.channels + c, rb * self.channels + c);
                }
                self.weight_b.swap(ra, rb);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_of(v: f64) -> FeatureGrid<f64> {
        FeatureGrid::from_fn(3, 3, 4, 0.5, (0.0, 0.0), |h, w, c| {
            v + (h * 12 + w * 4 + c) as f64 * 0.01
        })
    }

    #[test]
    fn identity_align_is_a_no_op() {
        let g = grid_of(1.0);
        let metas = [AgentMeta::current(AgentKind::Vehicle, 3.0, 0.05)];
        let out = align_transform(&[&g], &metas, &AlignParams::identity(4)).unwrap();
        assert!(out[0].exact_eq(&g));
    }

    #[test]
    fn zero_features_expose_the_bias() {
        let g = FeatureGrid::<f64>::with_origin(2, 2, 4, 0.5, (0.0, 0.0));
        let meta = AgentMeta::current(AgentKind::Infrastructure, 2.0, 0.1);
        let at = AlignParams::seeded(4, 7);
        let out = align_transform(&[&g], &[meta], &at).unwrap();
        let bias = at.bias_for(&meta);
        for h in 0..2 {
            for w in 0..2 {
                assert_eq!(out[0].cell(h, w), &bias[..]);
            }
        }
    }

    #[test]
    fn agent_types_produce_different_outputs() {
        let g = grid_of(0.5);
        let at = AlignParams::seeded(4, 3);
        let metas = [
            AgentMeta::current(AgentKind::Vehicle, 1.0, 0.0),
            AgentMeta::current(AgentKind::Infrastructure, 1.0, 0.0),
        ];
        let out = align_transform(&[&g, &g], &metas, &at).unwrap();
        assert!(out[0].max_abs_diff(&out[1]) > 0.0);
    }

    #[test]
    fn meta_count_mismatch_is_config_error() {
        let g = grid_of(0.0);
        let metas = [
            AgentMeta::current(AgentKind::Vehicle, 0.0, 0.0),
            AgentMeta::current(AgentKind::Vehicle, 0.0, 0.0),
        ];
        assert!(align_transform(&[&g], &metas, &AlignParams::identity(4)).is_err());
    }

    #[test]
    fn params_validate_divisibility() {
        assert!(MadaParams::<f64>::identity(8, 4, 2, 3).is_ok());
        assert!(MadaParams::<f64>::identity(9, 4, 2, 3).is_err());
        assert!(MadaParams::<f64>::identity(8, 0, 2, 3).is_err());
    }

    #[test]
    fn identity_projections_compose_to_identity() {
        let p = MadaParams::<f64>::identity(8, 2, 1, 1).unwrap();
        let d = p.head_dim();
        // sum_m W_m W'_m must be the 8x8 identity
        let mut acc = vec![0.0f64; 8 * 8];
        for m in 0..2 {
            for c_out in 0..8 {
                for c_in in 0..8 {
                    let mut s = 0.0;
                    for dd in 0..d {
                        s += p.out_proj[(m * 8 + c_out) * d + dd]
                            * p.value_proj[(m * d + dd) * 8 + c_in];
                    }
                    acc[c_out * 8 + c_in] += s;
                }
            }
        }
        for c_out in 0..8 {
            for c_in in 0..8 {
                let want = if c_out == c_in { 1.0 } else { 0.0 };
                assert_eq!(acc[c_out * 8 + c_in], want);
            }
        }
    }

    #[test]
    fn routed_params_reject_missing_channels() {
        assert!(MadaParams::<f64>::analytic_routed(8, 2, 2, 3, 7, 2.0).is_err());
        assert!(MadaParams::<f64>::analytic_routed(10, 2, 2, 3, 7, 2.0).is_ok());
    }
}
