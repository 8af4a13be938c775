use nalgebra::Vector3;

use super::*;
use crate::eval::synth::random_gaussian_scene;
use crate::render::render;

fn dataset(n_views: usize, w: usize) -> (Vec<View>, PointCloud) {
    let truth = random_gaussian_scene(40, 11);
    let views = (0..n_views)
        .map(|i| {
            let c = Vector3::new(0.1 * i as f64, -0.05 * i as f64, 0.0);
            let camera = ErpCamera::identity(c, w, w / 2).unwrap().yawed(0.4 * i as f64);
            let rgb = render(&truth, &camera, &RenderOptions::default()).unwrap().rgb;
            View { name: format!("v{i}"), camera, rgb }
        })
        .collect();
    let cloud = PointCloud {
        positions: truth.gaussians.iter().map(|g| g.mean + Vector3::new(0.05, -0.03, 0.02)).collect(),
        colors: None,
    };
    (views, cloud)
}

fn small_config(iterations: usize) -> TrainConfig {
    TrainConfig {
        densify_from: 10,
        densify_interval: 10,
        ..TrainConfig::scaled(iterations)
    }
}

#[test]
fn zero_iterations_returns_initialization() {
    let (views, cloud) = dataset(2, 32);
    let cfg = TrainConfig { iterations: 0, densify_until: 0, ..TrainConfig::default() };
    let dir = tempfile::tempdir().unwrap();
    let scene = train_to_dir(&views, &cloud, &cfg, dir.path()).unwrap();
    let mut init = init::init_from_points(&cloud, 0).unwrap();
    let cams: Vec<_> = views.iter().map(|v| v.camera.clone()).collect();
    init.update_filter_radii(&cams, cfg.kappa);
    assert_eq!(scene, init);
    assert_eq!(ply::read_scene(&dir.path().join("scene.ply")).unwrap(), init);
}

#[test]
fn empty_inputs_are_config_errors() {
    let (views, cloud) = dataset(1, 16);
    let empty = PointCloud { positions: vec![], colors: None };
    assert!(matches!(Trainer::from_points(&views, &empty, TrainConfig::default()), Err(Error::Config(_))));
    assert!(matches!(Trainer::from_points(&[], &cloud, TrainConfig::default()), Err(Error::Config(_))));
}

#[test]
fn runs_are_deterministic() {
    let (views, cloud) = dataset(3, 32);
    let cfg = small_config(40);
    let run = || {
        let mut t = Trainer::from_points(&views, &cloud, cfg.clone()).unwrap();
        let mut logs = Vec::new();
        t.run(|_, l| {
            logs.push(l.clone());
            Ok(())
        })
        .unwrap();
        (t.into_scene(), logs)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(a, b);
    assert_eq!(la, lb);
    assert!(la.iter().any(|l| l.densify.is_some()));
}

#[test]
fn loss_decreases_and_primitives_stay_valid() {
    let (views, cloud) = dataset(3, 32);
    let mut t = Trainer::from_points(&views, &cloud, small_config(150)).unwrap();
    let mut totals = Vec::new();
    t.run(|t, l| {
        totals.push(l.loss.rgb);
        if l.densify.is_some() {
            assert!(densify::all_valid(&t.scene().gaussians));
        }
        Ok(())
    })
    .unwrap();
    let head: f64 = totals[..15].iter().sum::<f64>() / 15.0;
    let tail: f64 = totals[totals.len() - 15..].iter().sum::<f64>() / 15.0;
    assert!(tail < 0.7 * head, "{head} -> {tail}");
    assert!(densify::all_valid(&t.scene().gaussians));
}

#[test]
fn writes_log_and_checkpoints() {
    let (views, cloud) = dataset(2, 16);
    let cfg = TrainConfig { checkpoint_interval: 5, ..small_config(12) };
    let dir = tempfile::tempdir().unwrap();
    let scene = train_to_dir(&views, &cloud, &cfg, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("loss.csv")).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 13);
    assert!(lines[0].starts_with("iteration,view,total,rgb"));
    for n in [5, 10] {
        let p = dir.path().join(format!("checkpoints/iter_{n}.ply"));
        assert!(p.exists() && p.with_extension("adam").exists());
    }
    assert_eq!(ply::read_scene(&dir.path().join("scene.ply")).unwrap(), scene);
    let adam = Adam::load(&dir.path().join("scene.adam")).unwrap();
    assert_eq!(adam.step, 12);
    assert_eq!(adam.m.len(), scene.len() * crate::backward::PARAMS_PER_GAUSSIAN);
}
