use proptest::prelude::*;
use sceneflow_uda::geom::{KnnIndex, PointCloud, Vec3};
use sceneflow_uda::synth::{
    build_scene, entity_consistent_positions, preprocess, preprocess_indexed, GroundStrategy, PreprocessConfig,
    SceneScript,
};

fn mean_nn_spacing(cloud: &PointCloud) -> f64 {
    let index = KnnIndex::new(cloud.points());
    let total: f64 = cloud.points().iter().map(|p| index.knn(p, 2).unwrap()[1].distance).sum();
    total / cloud.len() as f64
}

#[test]
fn source_and_target_presets_differ_in_density() {
    let prep = PreprocessConfig::default();
    let spacing = |name: &str| {
        let script = SceneScript::preset(name).unwrap();
        let mut sum = 0.0;
        for seed in 0..4 {
            let raw = build_scene(&script, seed).unwrap().pair(0).unwrap();
            sum += mean_nn_spacing(&preprocess(&raw, &prep, seed).unwrap().first);
        }
        sum / 4.0
    };
    let (s, t) = (spacing("source"), spacing("target"));
    assert!(t >= 2.0 * s, "source spacing {s:.3}, target {t:.3}");
}

#[test]
fn target_preset_differs_in_sensor_height_and_noise() {
    let s = SceneScript::preset("source").unwrap();
    let t = SceneScript::preset("target").unwrap();
    assert_ne!(s.sensor.mount_height, t.sensor.mount_height);
    assert_eq!(s.lidar.range_noise, 0.0);
    assert_eq!(t.lidar.range_noise, 0.03);
}

#[test]
fn small_clouds_keep_their_size() {
    let script = SceneScript::preset("target").unwrap();
    let raw = build_scene(&script, 3).unwrap().pair(0).unwrap();
    let prep = PreprocessConfig { ground: GroundStrategy::None, max_range: 1e9, num_points: 1_000_000, ..Default::default() };
    let out = preprocess(&raw, &prep, 0).unwrap();
    assert_eq!(out.first.len(), raw.first.len());
    assert_eq!(out.second.len(), raw.second.len());
}

fn small_script(name: &str) -> SceneScript {
    let mut s = SceneScript::preset(name).unwrap();
    s.lidar.azimuth_bins = 160;
    s.lidar.elevation_bins = 16;
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn preprocessing_keeps_flow_aligned(seed in 0u64..10_000, n in 50usize..3000) {
        let raw = build_scene(&small_script("source"), seed).unwrap().pair(0).unwrap();
        let prep = PreprocessConfig { num_points: n, ..Default::default() };
        let (out, idx) = preprocess_indexed(&raw, &prep, seed).unwrap();
        prop_assert_eq!(out.first.len(), out.flow.len());
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        for (k, &i) in idx.iter().enumerate() {
            prop_assert_eq!(out.first.points()[k], raw.first.points()[i]);
            prop_assert_eq!(out.flow.vectors()[k], raw.flow.vectors()[i]);
            prop_assert_eq!(out.first.labels().unwrap()[k], raw.first.labels().unwrap()[i]);
        }
    }

    #[test]
    fn moving_points_land_on_their_entity(seed in 0u64..10_000, which in 0usize..3) {
        let name = ["source", "target", "slope"][which];
        let scene = build_scene(&small_script(name), seed).unwrap();
        let pair = scene.pair(0).unwrap();
        let expected = entity_consistent_positions(&scene.entities, &scene.sensor, 0, &pair.first).unwrap();
        let warped = pair.flow.warp(pair.first.points());
        for (w, e) in warped.iter().zip(&expected) {
            if let Some(e) = e {
                prop_assert!((w - e).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn generation_is_deterministic(seed in 0u64..10_000) {
        let script = small_script("target");
        let a = build_scene(&script, seed).unwrap().pair(0).unwrap();
        let b = build_scene(&script, seed).unwrap().pair(0).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn static_points_follow_ego_motion_only() {
    let scene = build_scene(&SceneScript::preset("source").unwrap(), 42).unwrap();
    let pair = scene.pair(0).unwrap();
    let ego = scene.sensor.pose(0).then(&scene.sensor.world_to_lidar(1));
    let labels = pair.first.labels().unwrap();
    let mut checked = 0;
    for ((p, f), l) in pair.first.points().iter().zip(pair.flow.vectors()).zip(labels) {
        let moving = l.is_some_and(|id| scene.entities.iter().any(|e| e.id == id && !e.is_static()));
        if !moving {
            let want: Vec3 = ego.apply(p) - p;
            assert!((f - want).norm() < 1e-9);
            checked += 1;
        }
    }
    assert!(checked > 0);
}
