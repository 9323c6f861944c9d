//! Multi-agent deformable attention, forward path.
//!
//! For each query cell q with reference point p_q: per head m, per agent i,
//! per point k, the value-projected agent grid is bilinear-sampled at
//! p_q + offset(m, k); the samples are mixed with softmax weights normalized
//! over all (agent, point) pairs of the head, projected back per head, and
//! summed over heads; a per-cell feed-forward block with a residual
//! connection refines the aggregate. Offsets are shared across agents while
//! the attention weights carry one block per agent slot.
//!
//! The optimized path here projects whole agent grids once per head and then
//! samples the projected planes; the straight-loop oracle in the test suite
//! samples raw grids and projects each sample instead. Both orders agree
//! because projection and bilinear sampling are linear.

// Indexed loops mirror the per-(head, agent, point, channel) structure.
#![allow(clippy::needless_range_loop)]

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{bilinear_corners, FeatureGrid};
use crate::scalar::{gelu, Real};

use super::MadaParams;

/// Projected agent plane: head-dim channels over the query grid's cells.
pub(crate) struct ProjGrid<T> {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub data: Vec<T>,
}

impl<T: Real> ProjGrid<T> {
    #[inline]
    pub fn cell(&self, h: usize, w: usize) -> &[T] {
        let base = (h * self.width + w) * self.dim;
        &self.data[base..base + self.dim]
    }

    /// Bilinear sample with zero padding, matching the grid sampler.
    pub fn sample_into(&self, point: (T, T), out: &mut [T]) {
        for v in out.iter_mut() {
            *v = T::zero();
        }
        let (corners, _) = bilinear_corners(self.height, self.width, point);
        for (ch, cw, weight) in corners {
            if ch < 0 || cw < 0 || ch >= self.height as i64 || cw >= self.width as i64 {
                continue;
            }
            let cell = self.cell(ch as usize, cw as usize);
            for (o, v) in out.iter_mut().zip(cell) {
                *o += weight * *v;
            }
        }
    }
}

/// Per-head, per-query attention internals, recorded on request.
#[derive(Debug, Clone)]
pub struct HeadDiag<T> {
    /// Softmax weights over (agent, point), layout [i * K + k].
    pub weights: Vec<T>,
    /// Sampling positions in cell coordinates, same layout.
    pub positions: Vec<(T, T)>,
    /// Sampled value-projected vectors, same layout.
    pub samples: Vec<Vec<T>>,
    /// The head's pre-projection aggregate.
    pub aggregate: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct QueryDiag<T> {
    pub heads: Vec<HeadDiag<T>>,
}

#[derive(Debug, Clone)]
pub struct MadaDiagnostics<T> {
    pub agent_count: usize,
    pub per_query: Vec<QueryDiag<T>>,
}

#[derive(Debug, Clone)]
pub struct MadaOutput<T> {
    pub fused: FeatureGrid<T>,
    pub diagnostics: Option<MadaDiagnostics<T>>,
}

pub(crate) fn validate_inputs<T: Real>(
    queries: &FeatureGrid<T>,
    ref_points: &[(T, T)],
    agents: &[&FeatureGrid<T>],
    params: &MadaParams<T>,
) -> Result<()> {
    if queries.channels() != params.channels {
        return Err(Error::config(format!(
            "query channels {} vs params {}",
            queries.channels(),
            params.channels
        )));
    }
    if ref_points.len() != queries.cells() {
        return Err(Error::shape(format!(
            "{} reference points for {} query cells",
            ref_points.len(),
            queries.cells()
        )));
    }
    if agents.is_empty() {
        return Err(Error::config("mada needs at least one agent grid"));
    }
    if agents.len() > params.agents {
        return Err(Error::config(format!(
            "{} agent grids exceed the weight generator's {} blocks",
            agents.len(),
            params.agents
        )));
    }
    for (i, a) in agents.iter().enumerate() {
        if a.height() != queries.height()
            || a.width() != queries.width()
            || a.channels() != queries.channels()
        {
            return Err(Error::shape(format!(
                "agent {i} grid {}x{}x{} vs queries {}x{}x{}",
                a.height(),
                a.width(),
                a.channels(),
                queries.height(),
                queries.width(),
                queries.channels()
            )));
        }
    }
    Ok(())
}

/// Value-project every agent grid once per head.
pub(crate) fn project_agents<T: Real>(
    agents: &[&FeatureGrid<T>],
    params: &MadaParams<T>,
) -> Vec<ProjGrid<T>> {
    let c = params.channels;
    let d = params.head_dim();
    let mut out = Vec::with_capacity(params.heads * agents.len());
    for m in 0..params.heads {
        for grid in agents {
            let mut data = vec![T::zero(); grid.cells() * d];
            for h in 0..grid.height() {
                for w in 0..grid.width() {
                    let cell = grid.cell(h, w);
                    let base = (h * grid.width() + w) * d;
                    for dd in 0..d {
                        let row = &params.value_proj[(m * d + dd) * c..(m * d + dd + 1) * c];
                        let mut acc = T::zero();
                        for (rw, v) in row.iter().zip(cell) {
                            acc += *rw * *v;
                        }
                        data[base + dd] = acc;
                    }
                }
            }
            out.push(ProjGrid {
                height: grid.height(),
                width: grid.width(),
                dim: d,
                data,
            });
        }
    }
    out
}

pub(crate) fn softmax_in_place<T: Real>(logits: &mut [T]) {
    let mut max = T::neg_infinity();
    for l in logits.iter() {
        max = max.max(*l);
    }
    let mut sum = T::zero();
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        sum += *l;
    }
    for l in logits.iter_mut() {
        *l /= sum;
    }
}

/// The feed-forward refinement with its residual connection:
/// `y = x + W2 gelu(W1 x + b1) + b2`.
pub(crate) fn ffn_residual<T: Real>(params: &MadaParams<T>, x: &[T], out: &mut [T]) {
    let c = params.channels;
    let mut hidden = vec![T::zero(); c];
    for j in 0..c {
        let mut acc = params.ffn_b1[j];
        let row = &params.ffn_w1[j * c..(j + 1) * c];
        for (w, v) in row.iter().zip(x) {
            acc += *w * *v;
        }
        hidden[j] = gelu(acc);
    }
    for o in 0..c {
        let mut acc = params.ffn_b2[o];
        let row = &params.ffn_w2[o * c..(o + 1) * c];
        for (w, v) in row.iter().zip(&hidden) {
            acc += *w * *v;
        }
        out[o] = x[o] + acc;
    }
}

struct QueryResult<T> {
    out: Vec<T>,
    diag: Option<QueryDiag<T>>,
}

#[allow(clippy::too_many_arguments)]
fn attend_query<T: Real>(
    params: &MadaParams<T>,
    projected: &[ProjGrid<T>],
    n_agents: usize,
    ref_point: (T, T),
    offsets: &[T],
    logits: &[T],
    collect: bool,
) -> QueryResult<T> {
    let c = params.channels;
    let d = params.head_dim();
    let k_pts = params.points;
    let mut out_pre = vec![T::zero(); c];
    let mut sample = vec![T::zero(); d];
    let mut diag_heads = if collect { Some(Vec::with_capacity(params.heads)) } else { None };

    for m in 0..params.heads {
        let mut weights: Vec<T> =
            logits[m * n_agents * k_pts..(m + 1) * n_agents * k_pts].to_vec();
        softmax_in_place(&mut weights);

        let mut agg = vec![T::zero(); d];
        let mut diag = collect.then(|| HeadDiag {
            weights: weights.clone(),
            positions: Vec::with_capacity(n_agents * k_pts),
            samples: Vec::with_capacity(n_agents * k_pts),
            aggregate: Vec::new(),
        });
        for i in 0..n_agents {
            let plane = &projected[m * n_agents + i];
            for k in 0..k_pts {
                let off_base = (m * k_pts + k) * 2;
                let pos = (
                    ref_point.0 + offsets[off_base],
                    ref_point.1 + offsets[off_base + 1],
                );
                plane.sample_into(pos, &mut sample);
                let a = weights[i * k_pts + k];
                for (g, s) in agg.iter_mut().zip(&sample) {
                    *g += a * *s;
                }
                if let Some(dg) = diag.as_mut() {
                    dg.positions.push(pos);
                    dg.samples.push(sample.clone());
                }
            }
        }
        for co in 0..c {
            let row = &params.out_proj[(m * c + co) * d..(m * c + co + 1) * d];
            let mut acc = T::zero();
            for (w, v) in row.iter().zip(&agg) {
                acc += *w * *v;
            }
            out_pre[co] += acc;
        }
        if let Some(mut dg) = diag {
            dg.aggregate = agg;
            diag_heads.as_mut().unwrap().push(dg);
        }
    }

    let mut out = vec![T::zero(); c];
    ffn_residual(params, &out_pre, &mut out);
    QueryResult {
        out,
        diag: diag_heads.map(|heads| QueryDiag { heads }),
    }
}

/// Forward pass with offsets and attention logits generated from the query
/// features by the parameter maps.
pub fn mada<T: Real>(
    queries: &FeatureGrid<T>,
    ref_points: &[(T, T)],
    agents: &[&FeatureGrid<T>],
    params: &MadaParams<T>,
    collect_diagnostics: bool,
) -> Result<MadaOutput<T>> {
    validate_inputs(queries, ref_points, agents, params)?;
    let n = agents.len();
    let projected = project_agents(agents, params);
    run_queries(queries, ref_points, params, &projected, n, None, None, collect_diagnostics)
}

/// Forward pass with explicit per-query offsets (layout
/// `[q][(m*K + k)*2 + axis]`) and logits (layout `[q][(m*n + i)*K + k]`,
/// `i` over the present agents). Used by the gradient checks to perturb the
/// generated quantities directly.
pub fn mada_explicit<T: Real>(
    queries: &FeatureGrid<T>,
    ref_points: &[(T, T)],
    agents: &[&FeatureGrid<T>],
    params: &MadaParams<T>,
    offsets: &[T],
    logits: &[T],
    collect_diagnostics: bool,
) -> Result<MadaOutput<T>> {
    validate_inputs(queries, ref_points, agents, params)?;
    let n = agents.len();
    let cells = queries.cells();
    let off_stride = params.heads * params.points * 2;
    let log_stride = params.heads * n * params.points;
    if offsets.len() != cells * off_stride {
        return Err(Error::shape(format!(
            "offsets length {} vs expected {}",
            offsets.len(),
            cells * off_stride
        )));
    }
    if logits.len() != cells * log_stride {
        return Err(Error::shape(format!(
            "logits length {} vs expected {}",
            logits.len(),
            cells * log_stride
        )));
    }
    let projected = project_agents(agents, params);
    run_queries(
        queries,
        ref_points,
        params,
        &projected,
        n,
        Some(offsets),
        Some(logits),
        collect_diagnostics,
    )
}

#[allow(clippy::too_many_arguments)]
fn run_queries<T: Real>(
    queries: &FeatureGrid<T>,
    ref_points: &[(T, T)],
    params: &MadaParams<T>,
    projected: &[ProjGrid<T>],
    n_agents: usize,
    explicit_offsets: Option<&[T]>,
    explicit_logits: Option<&[T]>,
    collect: bool,
) -> Result<MadaOutput<T>> {
    let cells = queries.cells();
    let off_stride = params.heads * params.points * 2;
    let log_stride = params.heads * n_agents * params.points;

    let eval = |q: usize| -> QueryResult<T> {
        let h = q / queries.width();
        let w = q % queries.width();
        let (offsets, logits);
        let (off_slice, log_slice): (&[T], &[T]) = match (explicit_offsets, explicit_logits) {
            (Some(o), Some(l)) => (
                &o[q * off_stride..(q + 1) * off_stride],
                &l[q * log_stride..(q + 1) * log_stride],
            ),
            _ => {
                let z = queries.cell(h, w);
                offsets = params.offsets_for(z);
                logits = params.logits_for(z, n_agents);
                (&offsets, &logits)
            }
        };
        attend_query(params, projected, n_agents, ref_points[q], off_slice, log_slice, collect)
    };

    // Queries are independent; parallelize when the grid is large enough to
    // pay for it. Results are collected in query order either way.
    let results: Vec<QueryResult<T>> = if cells >= 1024 && !collect {
        (0..cells).into_par_iter().map(eval).collect()
    } else {
        (0..cells).map(eval).collect()
    };

    let mut fused = queries.zeros_like();
    let mut per_query = collect.then(|| Vec::with_capacity(cells));
    for (q, r) in results.into_iter().enumerate() {
        let h = q / queries.width();
        let w = q % queries.width();
        fused.cell_mut(h, w).copy_from_slice(&r.out);
        if let (Some(pq), Some(d)) = (per_query.as_mut(), r.diag) {
            pq.push(d);
        }
    }
    Ok(MadaOutput {
        fused,
        diagnostics: per_query.map(|per_query| MadaDiagnostics {
            agent_count: n_agents,
            per_query,
        }),
    })
}
