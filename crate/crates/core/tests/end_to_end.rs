//! Full pipeline on synthetic scenes, scored against the scene oracle.

use flowscene_core::metrics::{confusion, geometric_iou, miou};
use flowscene_core::pipeline::{readout, run, run_single_frame, AttentionSource, DepthBins, PipelineConfig, PipelineInputs};
use flowscene_core::synthsim::{corrupt_preimage, generate, SceneConfig, SyntheticScene};
use flowscene_core::{FeatureMap, OcclusionMask, SemanticVoxelGrid, VoxelGrid};

fn config(sc: &SceneConfig) -> PipelineConfig {
    PipelineConfig {
        attention: AttentionSource::Identity {
            heads: 8,
            window: 7,
            gain: 0.5,
        },
        depth: DepthBins {
            bins: sc.depth_bins,
            near: sc.depth_range.0,
            far: sc.depth_range.1,
        },
        grid: sc.grid,
        ..PipelineConfig::default()
    }
}

fn score(v: &VoxelGrid, scene: &SyntheticScene, gt: &SemanticVoxelGrid) -> (f64, f64) {
    let pred = readout(v, scene.prototypes()).unwrap();
    let cm = confusion(&pred, gt).unwrap();
    (miou(&cm).mean.unwrap(), geometric_iou(&cm).unwrap())
}

#[test]
fn recovers_scene_and_does_not_degrade_baseline() {
    let sc = SceneConfig::default();
    let scene = generate(&sc, 42).unwrap();
    let (gt, depth) = scene.oracle_voxels().unwrap();
    let history = scene.history(2).unwrap();
    let flows = scene.flow_pairs(2).unwrap();
    let inputs = PipelineInputs {
        current: scene.current_features(),
        history: &history,
        flows: &flows,
        depth: &depth,
        camera: &scene.camera,
        mask_override: None,
    };
    let cfg = config(&sc);
    let (b_miou, b_iou) = score(&run_single_frame(&inputs, &cfg).unwrap(), &scene, &gt);
    let (miou, iou) = score(&run(&inputs, &cfg).unwrap().v_fine, &scene, &gt);
    assert!(miou >= 0.90 && iou >= 0.95, "mIoU {miou} IoU {iou}");
    assert!(miou >= b_miou && iou >= b_iou, "baseline {b_miou}/{b_iou} vs {miou}/{iou}");
}

#[test]
fn occlusion_path_beats_mask_free_after_corruption() {
    let sc = SceneConfig::default();
    for seed in [1, 2] {
        let scene = generate(&sc, seed).unwrap();
        let (gt, depth) = scene.oracle_voxels().unwrap();
        let flows = scene.flow_pairs(2).unwrap();
        let mut history = scene.history(2).unwrap();
        let t = scene.current();
        let wrong: Vec<f32> = scene.class_vectors[2].iter().map(|v| 4.0 * v).collect();
        for (i, h) in history.iter_mut().enumerate() {
            let m = scene.oracle_occlusion(t, t - 1 - i).unwrap();
            assert!(corrupt_preimage(h, &flows[i].fwd, &m, &wrong).unwrap() > 0);
        }
        let cfg = config(&sc);
        let zeros = OcclusionMask::zeros(scene.height(), scene.width());
        let eval = |hist: &[FeatureMap], ov| {
            let inputs = PipelineInputs {
                current: scene.current_features(),
                history: hist,
                flows: &flows,
                depth: &depth,
                camera: &scene.camera,
                mask_override: ov,
            };
            score(&run(&inputs, &cfg).unwrap().v_fine, &scene, &gt).0
        };
        let masked = eval(&history, None);
        let free = eval(&history, Some(&zeros));
        assert!(masked > free, "seed {seed}: masked {masked} vs mask-free {free}");
    }
}
