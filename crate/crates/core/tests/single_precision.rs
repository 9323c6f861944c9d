//! The numeric kernels are generic over the scalar type; this exercises the
//! f32 instantiation end to end on small inputs.

use coopbev_core::fusion::{mada, own_cell_ref_points, MadaParams};
use coopbev_core::grid::{bilinear_sample, warp_to_frame, FeatureGrid, LinearHead, Pose};
use coopbev_core::stt::{comm_volume, saliency_map, selection_mask, SttConfig};
use coopbev_core::{FeatureGrid32, Pose32, ScalarGrid32};

#[test]
fn f32_kernels_work_end_to_end() {
    let grid: FeatureGrid32 =
        FeatureGrid::from_fn(6, 6, 4, 0.5f32, (0.0, 0.0), |h, w, c| {
            (h * 24 + w * 4 + c) as f32 * 0.1 - 1.0
        });

    let v = bilinear_sample(&grid, (2.0f32, 3.0));
    assert_eq!(v, grid.cell(2, 3).to_vec());

    let pose: Pose32 = Pose::planar(1.0f32, -0.5, 0.3, 0);
    assert!(warp_to_frame(&grid, &pose, &pose).exact_eq(&grid));

    let head = LinearHead::one_hot(4, 0);
    let e = saliency_map(&grid, &head).unwrap();
    let d: ScalarGrid32 = coopbev_core::grid::ScalarGrid::zeros(6, 6);
    let m = selection_mask(&e, &d, 0.0f32).unwrap();
    assert_eq!(m, e);

    let cfg: SttConfig<f32> = SttConfig::default();
    assert_eq!(cfg.tau, 1);
    assert_eq!(comm_volume::<f32>(512, 64), Some(-4.0f32));

    let params = MadaParams::<f32>::identity(4, 2, 1, 1).unwrap();
    let refs = own_cell_ref_points(&grid);
    let fused = mada(&grid, &refs, &[&grid], &params, false).unwrap();
    assert!(fused.fused.max_abs_diff(&grid) < 1e-6);
}
