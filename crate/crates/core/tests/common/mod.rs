//! Shared test-only machinery: the straight-loop attention oracle and small
//! helpers. The oracle evaluates the attention definition term by term —
//! sample the raw agent grid, project the sampled vector, weight, sum,
//! project per head, sum heads, feed-forward residual — deliberately NOT
//! reusing the library's projected-plane evaluation order.

#![allow(dead_code)]
// Indexed loops mirror the per-(head, agent, point, channel) structure.
#![allow(clippy::needless_range_loop)]

use coopbev_core::fusion::MadaParams;
use coopbev_core::grid::{bilinear_sample, FeatureGrid};
use coopbev_core::scalar::gelu;

/// Naive softmax, written independently of the implementation's
/// max-shifted version.
fn naive_softmax(logits: &[f64]) -> Vec<f64> {
    let exps: Vec<f64> = logits.iter().map(|l| l.exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Term-by-term evaluation of multi-agent deformable attention at one query.
pub fn mada_oracle_query(
    params: &MadaParams<f64>,
    query: &[f64],
    ref_point: (f64, f64),
    agents: &[&FeatureGrid<f64>],
) -> Vec<f64> {
    let c = params.channels();
    let d = params.head_dim();
    let m_heads = params.heads();
    let k_pts = params.points();
    let n = agents.len();

    let offsets = params.offsets_for(query);
    let logits = params.logits_for(query, n);

    let mut out_pre = vec![0.0f64; c];
    for m in 0..m_heads {
        let weights = naive_softmax(&logits[m * n * k_pts..(m + 1) * n * k_pts]);
        let mut agg = vec![0.0f64; d];
        for i in 0..n {
            for k in 0..k_pts {
                let ob = (m * k_pts + k) * 2;
                let pos = (ref_point.0 + offsets[ob], ref_point.1 + offsets[ob + 1]);
                // sample the raw grid, THEN project the sampled vector
                let raw = bilinear_sample(agents[i], pos);
                let a = weights[i * k_pts + k];
                for dd in 0..d {
                    let mut proj = 0.0;
                    for ci in 0..c {
                        proj += params.value_proj()[(m * d + dd) * c + ci] * raw[ci];
                    }
                    agg[dd] += a * proj;
                }
            }
        }
        for co in 0..c {
            for dd in 0..d {
                out_pre[co] += params.out_proj()[(m * c + co) * d + dd] * agg[dd];
            }
        }
    }

    // feed-forward residual: y = x + w2 gelu(w1 x + b1) + b2
    let (w1, b1, w2, b2) = params.ffn();
    let mut hidden = vec![0.0f64; c];
    for j in 0..c {
        let mut acc = b1[j];
        for x in 0..c {
            acc += w1[j * c + x] * out_pre[x];
        }
        hidden[j] = gelu(acc);
    }
    let mut y = vec![0.0f64; c];
    for o in 0..c {
        let mut acc = b2[o];
        for j in 0..c {
            acc += w2[o * c + j] * hidden[j];
        }
        y[o] = out_pre[o] + acc;
    }
    y
}

/// Oracle over a full query grid with per-cell reference points.
pub fn mada_oracle(
    params: &MadaParams<f64>,
    queries: &FeatureGrid<f64>,
    ref_points: &[(f64, f64)],
    agents: &[&FeatureGrid<f64>],
) -> FeatureGrid<f64> {
    let mut out = queries.zeros_like();
    for h in 0..queries.height() {
        for w in 0..queries.width() {
            let q = h * queries.width() + w;
            let y = mada_oracle_query(params, queries.cell(h, w), ref_points[q], agents);
            out.cell_mut(h, w).copy_from_slice(&y);
        }
    }
    out
}

/// Deterministic random grid for test instances.
pub fn random_grid(
    rng: &mut rand_chacha::ChaCha8Rng,
    h: usize,
    w: usize,
    c: usize,
    amp: f64,
) -> FeatureGrid<f64> {
    use rand::RngExt;
    FeatureGrid::from_fn(h, w, c, 0.5, (0.0, 0.0), |_, _, _| rng.random_range(-amp..amp))
}
