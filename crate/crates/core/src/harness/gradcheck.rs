//! Gradient verification: central finite differences against the analytic
//! gradients of the attention kernel and the detection losses, on seeded
//! instances. The attention instance is constructed so every sampling
//! position stays well away from the bilinear kernel's breakpoints (integer
//! cell coordinates), where the true derivative is discontinuous.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::detect::{focal_loss, smooth_l1};
use crate::error::Result;
use crate::fusion::{mada, mada_explicit, mada_gradient, MadaParams};
use crate::grid::FeatureGrid;

const FD_STEP: f64 = 1e-5;
const MADA_TOL: f64 = 1e-4;
const LOSS_TOL: f64 = 1e-6;
/// Minimum distance any sampling position must keep from an integer
/// coordinate for the finite-difference comparison to be meaningful.
const BREAKPOINT_MARGIN: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct ComponentReport {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub components: Vec<ComponentReport>,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.components.iter().all(|c| c.pass)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.components {
            out.push_str(&format!(
                "{:<22} max rel err {:>12.3e}  tol {:>8.0e}  {}\n",
                c.name,
                c.max_rel_err,
                c.tolerance,
                if c.pass { "pass" } else { "FAIL" }
            ));
        }
        out
    }
}

/// Relative error with an absolute floor: tiny gradients drown in
/// finite-difference noise, so |a - n| below 1e-7 passes outright.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= 1e-7 {
        return 0.0;
    }
    diff / (analytic.abs() + numeric.abs())
}

struct MadaInstance {
    queries: FeatureGrid<f64>,
    agents: Vec<FeatureGrid<f64>>,
    refs: Vec<(f64, f64)>,
    params: MadaParams<f64>,
    upstream: FeatureGrid<f64>,
}

fn seeded_instance() -> MadaInstance {
    let (h, w, c) = (4usize, 4usize, 8usize);
    let mut rng = ChaCha8Rng::seed_from_u64(0x6ad);
    let mut mk = |amp: f64| {
        FeatureGrid::from_fn(h, w, c, 0.5, (0.0, 0.0), |_, _, _| rng.random_range(-amp..amp))
    };
    let queries = mk(1.0);
    let agents = vec![mk(1.0), mk(1.0), mk(1.0)];
    let upstream = mk(1.0);
    let params = MadaParams::seeded(c, 2, 2, 3, 1234).unwrap();
    let refs: Vec<(f64, f64)> = (0..h)
        .flat_map(|hh| (0..w).map(move |ww| (hh as f64, ww as f64)))
        .collect();
    MadaInstance { queries, agents, refs, params, upstream }
}

/// Verify the instance keeps all sampling positions off the bilinear
/// breakpoints; the seeded offset generator is built to guarantee this.
fn assert_off_breakpoints(inst: &MadaInstance) {
    for hq in 0..inst.queries.height() {
        for wq in 0..inst.queries.width() {
            let offsets = inst.params.offsets_for(inst.queries.cell(hq, wq));
            for pair in offsets.chunks(2) {
                for &o in pair {
                    let frac = (o - o.round()).abs();
                    assert!(
                        frac >= BREAKPOINT_MARGIN,
                        "offset {o} too close to a bilinear breakpoint"
                    );
                }
            }
        }
    }
}

fn loss_of(inst: &MadaInstance, agents: &[&FeatureGrid<f64>], queries: &FeatureGrid<f64>) -> f64 {
    let out = mada(queries, &inst.refs, agents, &inst.params, false).unwrap();
    out.fused
        .data()
        .iter()
        .zip(inst.upstream.data())
        .map(|(a, b)| a * b)
        .sum()
}

fn loss_explicit(inst: &MadaInstance, offsets: &[f64], logits: &[f64]) -> f64 {
    let agents: Vec<&FeatureGrid<f64>> = inst.agents.iter().collect();
    let out = mada_explicit(
        &inst.queries,
        &inst.refs,
        &agents,
        &inst.params,
        offsets,
        logits,
        false,
    )
    .unwrap();
    out.fused
        .data()
        .iter()
        .zip(inst.upstream.data())
        .map(|(a, b)| a * b)
        .sum()
}

/// Full gradient check of the attention kernel. `corrupt` perturbs one
/// analytic gradient entry and exists for the negative-control test.
pub(crate) fn mada_checks(corrupt: f64) -> Result<Vec<ComponentReport>> {
    let inst = seeded_instance();
    assert_off_breakpoints(&inst);
    let agents: Vec<&FeatureGrid<f64>> = inst.agents.iter().collect();
    let grads = mada_gradient(&inst.queries, &inst.refs, &agents, &inst.params, &inst.upstream)?;

    // agent features
    let mut agent_err = 0.0f64;
    for (ai, agent) in inst.agents.iter().enumerate() {
        for idx in 0..agent.data().len() {
            let mut plus = agent.clone();
            plus.data_mut()[idx] += FD_STEP;
            let mut minus = agent.clone();
            minus.data_mut()[idx] -= FD_STEP;
            let mut ags: Vec<&FeatureGrid<f64>> = inst.agents.iter().collect();
            ags[ai] = &plus;
            let lp = loss_of(&inst, &ags, &inst.queries);
            ags[ai] = &minus;
            let lm = loss_of(&inst, &ags, &inst.queries);
            let numeric = (lp - lm) / (2.0 * FD_STEP);
            let mut analytic = grads.d_agents[ai].data()[idx];
            if ai == 0 && idx == 0 {
                analytic += corrupt;
            }
            agent_err = agent_err.max(rel_err(analytic, numeric));
        }
    }

    // query features (through the offset and weight generators)
    let mut query_err = 0.0f64;
    for idx in 0..inst.queries.data().len() {
        let mut plus = inst.queries.clone();
        plus.data_mut()[idx] += FD_STEP;
        let mut minus = inst.queries.clone();
        minus.data_mut()[idx] -= FD_STEP;
        let lp = loss_of(&inst, &agents, &plus);
        let lm = loss_of(&inst, &agents, &minus);
        let numeric = (lp - lm) / (2.0 * FD_STEP);
        query_err = query_err.max(rel_err(grads.d_queries.data()[idx], numeric));
    }

    // explicit offsets and logits
    let mut base_offsets = Vec::new();
    let mut base_logits = Vec::new();
    for hq in 0..inst.queries.height() {
        for wq in 0..inst.queries.width() {
            base_offsets.extend(inst.params.offsets_for(inst.queries.cell(hq, wq)));
            base_logits.extend(inst.params.logits_for(inst.queries.cell(hq, wq), 3));
        }
    }
    let mut offset_err = 0.0f64;
    for idx in 0..base_offsets.len() {
        let mut plus = base_offsets.clone();
        plus[idx] += FD_STEP;
        let mut minus = base_offsets.clone();
        minus[idx] -= FD_STEP;
        let lp = loss_explicit(&inst, &plus, &base_logits);
        let lm = loss_explicit(&inst, &minus, &base_logits);
        let numeric = (lp - lm) / (2.0 * FD_STEP);
        offset_err = offset_err.max(rel_err(grads.d_offsets[idx], numeric));
    }
    let mut logit_err = 0.0f64;
    for idx in 0..base_logits.len() {
        let mut plus = base_logits.clone();
        plus[idx] += FD_STEP;
        let mut minus = base_logits.clone();
        minus[idx] -= FD_STEP;
        let lp = loss_explicit(&inst, &base_offsets, &plus);
        let lm = loss_explicit(&inst, &base_offsets, &minus);
        let numeric = (lp - lm) / (2.0 * FD_STEP);
        logit_err = logit_err.max(rel_err(grads.d_logits[idx], numeric));
    }

    let report = |name: &'static str, err: f64| ComponentReport {
        name,
        max_rel_err: err,
        tolerance: MADA_TOL,
        pass: err <= MADA_TOL,
    };
    Ok(vec![
        report("mada_agent_features", agent_err),
        report("mada_query_features", query_err),
        report("mada_offsets", offset_err),
        report("mada_logits", logit_err),
    ])
}

fn smooth_l1_check() -> ComponentReport {
    let mut rng = ChaCha8Rng::seed_from_u64(0x51);
    let pred: Vec<f64> = (0..32).map(|_| rng.random_range(-2.0..2.0)).collect();
    let target: Vec<f64> = (0..32).map(|_| rng.random_range(-2.0..2.0)).collect();
    let beta = 0.7;
    let (_, grad) = smooth_l1(&pred, &target, beta).unwrap();
    let mut err = 0.0f64;
    for i in 0..pred.len() {
        let mut plus = pred.clone();
        plus[i] += FD_STEP;
        let mut minus = pred.clone();
        minus[i] -= FD_STEP;
        let (lp, _) = smooth_l1(&plus, &target, beta).unwrap();
        let (lm, _) = smooth_l1(&minus, &target, beta).unwrap();
        err = err.max(rel_err(grad[i], (lp - lm) / (2.0 * FD_STEP)));
    }
    ComponentReport { name: "smooth_l1", max_rel_err: err, tolerance: LOSS_TOL, pass: err <= LOSS_TOL }
}

fn focal_check() -> ComponentReport {
    let mut rng = ChaCha8Rng::seed_from_u64(0x52);
    let probs: Vec<f64> = (0..32).map(|_| rng.random_range(0.05..0.95)).collect();
    let targets: Vec<bool> = (0..32).map(|_| rng.random::<bool>()).collect();
    let (alpha, gamma) = (0.25, 2.0);
    let (_, grad) = focal_loss(&probs, &targets, alpha, gamma).unwrap();
    let mut err = 0.0f64;
    for i in 0..probs.len() {
        let mut plus = probs.clone();
        plus[i] += FD_STEP;
        let mut minus = probs.clone();
        minus[i] -= FD_STEP;
        let (lp, _) = focal_loss(&plus, &targets, alpha, gamma).unwrap();
        let (lm, _) = focal_loss(&minus, &targets, alpha, gamma).unwrap();
        err = err.max(rel_err(grad[i], (lp - lm) / (2.0 * FD_STEP)));
    }
    ComponentReport { name: "focal_loss", max_rel_err: err, tolerance: LOSS_TOL, pass: err <= LOSS_TOL }
}

/// Run every finite-difference suite on its seeded instance.
pub fn run_gradcheck() -> Result<GradCheckReport> {
    let mut components = mada_checks(0.0)?;
    components.push(smooth_l1_check());
    components.push(focal_check());
    Ok(GradCheckReport { components })
}
