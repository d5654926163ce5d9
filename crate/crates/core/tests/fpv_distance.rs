//! Fine texture fades from ground-camera patches as they move away.

use nalgebra::Vector3;
use terrascout::dataset::ExtractionConfig;
use terrascout::features::{extract_features, IDX_PYRAMID};
use terrascout::geometry::{
    bev_resample, camera_from_ground, extract_patch, AttitudeSample, Footprint, PatchSource, Pose2,
};
use terrascout::simkit::{
    default_calibration, generate_scene, render_fpv, Layout, SceneConfig, TerrainClassSpec, TextureParams,
};

fn finest_band(distance: f64, starts: &[[f64; 2]]) -> f64 {
    let texture = TextureParams {
        base_gray: 128.0,
        amplitude: 45.0,
        frequency: 6.0,
    };
    let scene = generate_scene(
        vec![TerrainClassSpec::new("gravel", texture, 1.0, 0.5, 50.0)],
        Layout::Bands,
        SceneConfig {
            size: [40.0, 40.0],
            cell_size: 0.25,
            seed: 17,
            occluder_texture: texture,
        },
    )
    .unwrap();
    let cal = default_calibration();
    let level = AttitudeSample::new(0.0, 0.0, 0.0).unwrap();
    let cam_from_ground = camera_from_ground(&cal.robot_from_camera().unwrap(), &level, cal.robot_height).unwrap();
    let cam_x = cam_from_ground.inverse().transform_point(&Vector3::zeros()).x;
    let ex = ExtractionConfig::default();
    let grid = ex.bev_grid().unwrap();

    let mut sum = 0.0;
    for (i, s) in starts.iter().enumerate() {
        let img = render_fpv(&scene, Pose2::new(s[0], s[1], 0.0), &level, &cal, 0.0, i as u64).unwrap();
        let (bev, mask) = bev_resample(&img, &cam_from_ground, &cal.camera, &grid);
        let fp = Footprint {
            center: [cam_x + distance, 0.0],
            yaw: 0.0,
            side: ex.patch_side,
        };
        let source = PatchSource::Bev {
            raster: &bev,
            mask: &mask,
            grid: &grid,
        };
        let patch = extract_patch(source, &fp, ex.patch_resolution).unwrap();
        sum += extract_features(&patch.raster).unwrap().values[IDX_PYRAMID];
    }
    sum / starts.len() as f64
}

#[test]
fn finest_laplacian_band_shrinks_with_distance() {
    let starts: Vec<[f64; 2]> = (0..6).map(|i| [4.0 + 3.0 * i as f64, 8.0 + 4.0 * i as f64]).collect();
    let energy: Vec<f64> = (2..=9).map(|d| finest_band(d as f64, &starts)).collect();
    for w in energy.windows(2) {
        assert!(w[1] < w[0], "{energy:?}");
    }
    assert!(energy[7] < 0.2 * energy[0], "{energy:?}");
}
