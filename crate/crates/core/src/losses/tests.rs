use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn cam(w: usize, h: usize) -> ErpCamera {
    ErpCamera::identity(Vector3::zeros(), w, h).unwrap()
}

fn full(w: usize, h: usize) -> Mask {
    Map::filled(w, h, true)
}

fn random_rgb(w: usize, h: usize, rng: &mut impl Rng) -> RgbMap {
    Map::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()])
}

fn random_depth(w: usize, h: usize, rng: &mut impl Rng) -> ScalarMap {
    Map::from_fn(w, h, |_, _| rng.random_range(1.0..3.0))
}

fn random_normals(w: usize, h: usize, rng: &mut impl Rng) -> NormalMap {
    Map::from_fn(w, h, |_, _| {
        Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize()
    })
}

/// Relative error with an absolute floor for finite-difference roundoff.
fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs().max(b.abs()) + 1e-5)
}

#[test]
fn valid_mask_examples() {
    let c = cam(360, 180);
    assert_eq!(valid_mask(&Map::filled(360, 180, 0.0), 0.5, &c).count(), 0);
    let ones = Map::filled(360, 180, 1.0);
    assert_eq!(valid_mask(&ones, 0.5, &c).count(), 360 * 180);
    let banded = c.with_lat_band((-40f64).to_radians(), 20f64.to_radians()).unwrap();
    assert_eq!(valid_mask(&ones, 0.5, &banded).count(), 360 * 60);
}

#[test]
fn rgb_loss_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_rgb(16, 16, &mut rng);
    assert!(rgb_loss(&x, &x, &full(16, 16), 0.2).unwrap().abs() < 1e-12);

    let y = x.map(|p| p.map(|v| v + 0.1));
    let l1_only = rgb_loss(&x, &y, &full(16, 16), 0.0).unwrap();
    assert!((l1_only - 0.1).abs() < 1e-12);
    let mixed = rgb_loss(&x, &y, &full(16, 16), 0.2).unwrap();
    let s = crate::ssim::ssim(&x, &y).unwrap();
    assert!((mixed - (0.8 * 0.1 + 0.2 * (1.0 - s))).abs() < 1e-12);

    let (l, g) = rgb_loss_grad(&x, &y, &Map::filled(16, 16, false), 0.2).unwrap();
    assert_eq!(l, 0.0);
    assert!(g.data().iter().all(|p| *p == [0.0; 3]));
}

#[test]
fn rgb_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (w, h) = (16, 8);
    let x = random_rgb(w, h, &mut rng);
    let y = random_rgb(w, h, &mut rng);
    let mask = Map::from_fn(w, h, |u, v| (u + v) % 4 != 0);
    let (_, g) = rgb_loss_grad(&x, &y, &mask, 0.2).unwrap();
    let eps = 1e-7;
    for i in 0..w * h {
        for c in 0..3 {
            let mut p = x.clone();
            p.data_mut()[i][c] += eps;
            let mut m = x.clone();
            m.data_mut()[i][c] -= eps;
            let fd = (rgb_loss(&p, &y, &mask, 0.2).unwrap() - rgb_loss(&m, &y, &mask, 0.2).unwrap()) / (2.0 * eps);
            assert!(rel(g.data()[i][c], fd) < 1e-4, "{} vs {fd}", g.data()[i][c]);
        }
    }
}

/// Radial distance to the plane `z = 2` along each pixel ray.
fn plane_depth(c: &ErpCamera) -> (ScalarMap, Mask) {
    let (w, h) = (c.width(), c.height());
    let depth = Map::from_fn(w, h, |u, v| {
        let d = c.pixel_to_ray(u, v).unwrap();
        if d.z > 0.05 { 2.0 / d.z } else { 0.0 }
    });
    let mask = depth.map(|&d| d > 0.0);
    (depth, mask)
}

#[test]
fn plane_depth_gives_plane_normal() {
    let c = cam(128, 64);
    let (depth, mask) = plane_depth(&c);
    let dn = depth_to_normal(&depth, &c, &mask).unwrap();
    let target = Vector3::new(0.0, 0.0, -1.0);
    assert!(dn.valid.get(64, 32));
    let mut checked = 0;
    for v in 0..64 {
        if c.row_latitude(v).abs() > 60f64.to_radians() {
            continue;
        }
        for u in 0..128 {
            if *dn.valid.get(u, v) {
                let ang = dn.normal.get(u, v).dot(&target).clamp(-1.0, 1.0).acos();
                assert!(ang < 1f64.to_radians(), "({u},{v}) off by {ang}");
                checked += 1;
            }
        }
    }
    assert!(checked > 1000);
}

#[test]
fn sphere_depth_gives_radial_normals() {
    let (w, h) = (720, 360);
    let c = cam(w, h);
    let depth = Map::filled(w, h, 3.0);
    let dn = depth_to_normal(&depth, &c, &full(w, h)).unwrap();
    for v in (0..h).step_by(7) {
        if c.row_latitude(v).abs() > 60f64.to_radians() {
            continue;
        }
        for u in (0..w).step_by(11) {
            let ray = c.pixel_to_ray(u, v).unwrap();
            let ang = dn.normal.get(u, v).dot(&-ray).clamp(-1.0, 1.0).acos();
            assert!(ang < 0.5f64.to_radians(), "({u},{v}) off by {}", ang.to_degrees());
        }
    }
}

#[test]
fn single_pixel_mask_has_no_normals() {
    let c = cam(16, 8);
    let mut mask = Map::filled(16, 8, false);
    mask.set(5, 4, true);
    let dn = depth_to_normal(&Map::filled(16, 8, 2.0), &c, &mask).unwrap();
    assert_eq!(dn.valid.count(), 0);
}

#[test]
fn dn_loss_examples() {
    let c = cam(32, 16);
    let dn = depth_to_normal(&Map::filled(32, 16, 2.0), &c, &full(32, 16)).unwrap();
    assert!(dn_loss(&dn.normal, &dn, 0.1).unwrap().abs() < 1e-12);
    let flipped = dn.normal.map(|n| -n);
    assert!(dn_loss(&flipped, &dn, 0.1).unwrap().abs() < 1e-12);
    let perp = dn.normal.map(|n| {
        let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        n.cross(&helper).normalize()
    });
    assert!((dn_loss(&perp, &dn, 0.1).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn dn_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (w, h) = (16, 8);
    let c = cam(w, h);
    let depth = random_depth(w, h, &mut rng);
    let normal = random_normals(w, h, &mut rng);
    let mask = Map::from_fn(w, h, |u, v| !(u == 3 && v == 2));
    let eval = |d: &ScalarMap, n: &NormalMap| dn_loss(n, &depth_to_normal(d, &c, &mask).unwrap(), 0.1).unwrap();
    let (_, g_n, g_d) = dn_loss_grad(&normal, &depth_to_normal(&depth, &c, &mask).unwrap(), 0.1).unwrap();
    let eps = 1e-6;
    for i in 0..w * h {
        let mut p = depth.clone();
        p.data_mut()[i] += eps;
        let mut m = depth.clone();
        m.data_mut()[i] -= eps;
        let fd = (eval(&p, &normal) - eval(&m, &normal)) / (2.0 * eps);
        assert!(rel(g_d.data()[i], fd) < 1e-4, "depth {i}: {} vs {fd}", g_d.data()[i]);
        for k in 0..3 {
            let mut p = normal.clone();
            p.data_mut()[i][k] += eps;
            let mut m = normal.clone();
            m.data_mut()[i][k] -= eps;
            let fd = (eval(&depth, &p) - eval(&depth, &m)) / (2.0 * eps);
            assert!(rel(g_n.data()[i][k], fd) < 1e-4, "normal {i}: {} vs {fd}", g_n.data()[i][k]);
        }
    }
}

fn jump_inputs<'a>(depth: &'a ScalarMap, image: &'a RgbMap, mask: &'a Mask) -> JumpInputs<'a> {
    JumpInputs {
        depth,
        image,
        mask,
        beta: 10.0,
        lat_eps: 0.1,
    }
}

#[test]
fn jump_losses_vanish_on_constant_depth() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let img = random_rgb(32, 16, &mut rng);
    let depth = Map::filled(32, 16, 2.5);
    let m = full(32, 16);
    assert_eq!(jump1_loss(&jump_inputs(&depth, &img, &m), 0.05).unwrap(), 0.0);
    assert_eq!(jump2_loss(&jump_inputs(&depth, &img, &m), 0.02).unwrap(), 0.0);
}

#[test]
fn jump1_dead_zone() {
    let img = Map::filled(32, 16, [0.5; 3]);
    // log-depth steps of 0.01 per row stay inside the hinge everywhere
    let depth = Map::from_fn(32, 16, |_, v| (0.01 * v as f64).exp());
    assert_eq!(jump1_loss(&jump_inputs(&depth, &img, &full(32, 16)), 0.05).unwrap(), 0.0);
}

#[test]
fn jump1_step_example() {
    // two rows straddling the equator; a log-depth step of tau1 + 0.1 between columns 3 and 4
    let (w, h) = (8, 2);
    let img = Map::filled(w, h, [0.3; 3]);
    let tau1 = 0.05;
    let step: f64 = tau1 + 0.1;
    let depth = Map::from_fn(w, h, |u, _| if (4..8).contains(&u) { step.exp() } else { 1.0 });
    let mut mask = Map::filled(w, h, false);
    for v in 0..h {
        mask.set(3, v, true);
        mask.set(4, v, true);
    }
    let l = jump1_loss(&jump_inputs(&depth, &img, &mask), tau1).unwrap();
    // rows sit at +-45 degrees: horizontal correction 1/cos, lat weight cos
    let lat = PI / 4.0;
    let e = step / lat.cos() - tau1;
    // column 3 owns both horizontal stencils; (4, 0) only has a flat vertical one
    let expected = (2.0 * lat.cos() * e) / (3.0 * lat.cos());
    assert!((l - expected).abs() < 1e-12, "{l} vs {expected}");
}

#[test]
fn jump1_step_at_equator_contributes_excess() {
    let (w, h) = (16, 181);
    let img = Map::filled(w, h, [0.3; 3]);
    let tau1 = 0.05;
    let depth = Map::from_fn(w, h, |u, _| if u >= 8 { (tau1 + 0.1f64).exp() } else { 1.0 });
    // only the equator row, columns 7 and 8
    let mut mask = Map::filled(w, h, false);
    mask.set(7, 90, true);
    mask.set(8, 90, true);
    let l = jump1_loss(&jump_inputs(&depth, &img, &mask), tau1).unwrap();
    // column 8 has no stencil of its own
    assert!((l - 0.1).abs() < 1e-12, "{l}");
}

#[test]
fn jump2_linear_ramp_and_ripple() {
    let (w, h) = (16, 9);
    let img = Map::filled(w, h, [0.3; 3]);
    let m = full(w, h);
    let ramp = Map::from_fn(w, h, |_, v| (0.3 * v as f64).exp());
    assert!(jump2_loss(&jump_inputs(&ramp, &img, &m), 0.02).unwrap().abs() < 1e-12);

    let a = 0.05;
    let ripple = Map::from_fn(w, h, |u, _| (a * (2.0 * PI * u as f64 / 4.0).sin()).exp());
    let tau2 = 0.02;
    let got = jump2_loss(&jump_inputs(&ripple, &img, &m), tau2).unwrap();
    // hand stencil: second difference is -2a sin(2 pi u / 4) scaled by 1/cos(lat)
    let (mut num, mut den) = (0.0, 0.0);
    for v in 0..h {
        let lat = crate::camera::row_latitude(v, h);
        let wl = lat.cos().max(0.1);
        for u in 0..w {
            let d2 = -2.0 * a * (2.0 * PI * u as f64 / 4.0).sin() / lat.cos().max(0.1);
            num += wl * (d2.abs() - tau2).max(0.0);
            den += wl;
        }
    }
    assert!((got - num / den).abs() < 1e-12, "{got} vs {}", num / den);
    assert!(got > 0.0);
}

#[test]
fn jump_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (w, h) = (16, 8);
    let img = random_rgb(w, h, &mut rng);
    let depth = random_depth(w, h, &mut rng);
    let mask = Map::from_fn(w, h, |u, v| (u * 7 + v * 3) % 11 != 0);
    for (which, tau) in [(1, 0.05), (2, 0.02)] {
        let eval = |d: &ScalarMap| {
            let inp = jump_inputs(d, &img, &mask);
            if which == 1 { jump1_loss(&inp, tau).unwrap() } else { jump2_loss(&inp, tau).unwrap() }
        };
        let inp = jump_inputs(&depth, &img, &mask);
        let (_, g) = if which == 1 { jump1_loss_grad(&inp, tau).unwrap() } else { jump2_loss_grad(&inp, tau).unwrap() };
        let eps = 1e-7;
        for i in 0..w * h {
            let mut p = depth.clone();
            p.data_mut()[i] += eps;
            let mut m = depth.clone();
            m.data_mut()[i] -= eps;
            let fd = (eval(&p) - eval(&m)) / (2.0 * eps);
            assert!(rel(g.data()[i], fd) < 1e-4, "jump{which} {i}: {} vs {fd}", g.data()[i]);
        }
    }
}

#[test]
fn jump_losses_are_scale_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (w, h) = (32, 16);
    let img = random_rgb(w, h, &mut rng);
    let depth = random_depth(w, h, &mut rng);
    let m = full(w, h);
    let base1 = jump1_loss(&jump_inputs(&depth, &img, &m), 0.05).unwrap();
    let base2 = jump2_loss(&jump_inputs(&depth, &img, &m), 0.02).unwrap();
    for k in [0.1, 3.7, 250.0] {
        let scaled = depth.map(|d| d * k);
        assert!((jump1_loss(&jump_inputs(&scaled, &img, &m), 0.05).unwrap() - base1).abs() < 1e-9);
        assert!((jump2_loss(&jump_inputs(&scaled, &img, &m), 0.02).unwrap() - base2).abs() < 1e-9);
    }
}

fn fake_render(rgb: RgbMap, depth: ScalarMap, normal: NormalMap, alpha: ScalarMap) -> RenderOutput {
    let (w, h) = (rgb.width(), rgb.height());
    RenderOutput {
        rgb,
        expected_depth: depth.clone(),
        depth,
        normal,
        alpha,
        contributors: Map::filled(w, h, 1),
    }
}

#[test]
fn breakdown_identity_and_zero_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (w, h) = (32, 16);
    let c = cam(w, h);
    let gt = random_rgb(w, h, &mut rng);
    let r = fake_render(
        random_rgb(w, h, &mut rng),
        random_depth(w, h, &mut rng),
        random_normals(w, h, &mut rng),
        Map::from_fn(w, h, |_, _| rng.random()),
    );
    let wts = LossWeights::default();
    let sched = ScheduleState { jump: 0.4, dn: 1.0 };
    let b = total_loss(&r, &gt, &c, &wts, sched).unwrap();
    let recomposed = b.rgb + wts.lambda_dn * b.dn + 0.4 * (wts.lambda_j1 * b.jump1 + wts.lambda_j2 * b.jump2);
    assert!((b.total - recomposed).abs() < 1e-9);
    assert!(b.dn > 0.0 && b.jump1 > 0.0 && b.jump2 > 0.0);
    assert_eq!(b.valid_pixel_count, r.alpha.data().iter().filter(|&&a| a > 0.5).count());

    let zero = LossWeights { lambda_dn: 0.0, lambda_j1: 0.0, lambda_j2: 0.0, ..wts };
    let b0 = total_loss(&r, &gt, &c, &zero, ScheduleState::FULL).unwrap();
    assert_eq!(b0.total, b0.rgb);
}

#[test]
fn perfect_render_has_zero_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (w, h) = (32, 16);
    let c = cam(w, h);
    let gt = random_rgb(w, h, &mut rng);
    let depth = Map::filled(w, h, 2.0);
    let dn = depth_to_normal(&depth, &c, &full(w, h)).unwrap();
    let r = fake_render(gt.clone(), depth, dn.normal.clone(), Map::filled(w, h, 0.99));
    let b = total_loss(&r, &gt, &c, &LossWeights::default(), ScheduleState::FULL).unwrap();
    assert!(b.total.abs() < 1e-6, "{b:?}");
}

#[test]
fn total_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (w, h) = (16, 8);
    let c = cam(w, h);
    let gt = random_rgb(w, h, &mut rng);
    let r = fake_render(
        random_rgb(w, h, &mut rng),
        random_depth(w, h, &mut rng),
        random_normals(w, h, &mut rng),
        Map::from_fn(w, h, |u, _| if u % 5 == 0 { 0.2 } else { 0.9 }),
    );
    let wts = LossWeights::default();
    let sched = ScheduleState { jump: 0.7, dn: 1.0 };
    let (_, g) = total_loss_grad(&r, &gt, &c, &wts, sched).unwrap();
    let eps = 1e-7;
    let eval = |r: &RenderOutput| total_loss(r, &gt, &c, &wts, sched).unwrap().total;
    for i in (0..w * h).step_by(3) {
        let mut p = r.clone();
        p.depth.data_mut()[i] += eps;
        let mut m = r.clone();
        m.depth.data_mut()[i] -= eps;
        let fd = (eval(&p) - eval(&m)) / (2.0 * eps);
        assert!(rel(g.depth.data()[i], fd) < 1e-4, "depth {i}: {} vs {fd}", g.depth.data()[i]);
        let mut p = r.clone();
        p.normal.data_mut()[i].y += eps;
        let mut m = r.clone();
        m.normal.data_mut()[i].y -= eps;
        let fd = (eval(&p) - eval(&m)) / (2.0 * eps);
        assert!(rel(g.normal.data()[i].y, fd) < 1e-4);
    }
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]

    #[test]
    fn geometric_losses_invariant_under_longitude_shift(seed in 0u64..1000, k in 1usize..32) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (32, 16);
        let c = cam(w, h);
        let img = random_rgb(w, h, &mut rng);
        let depth = random_depth(w, h, &mut rng);
        let normal = random_normals(w, h, &mut rng);
        let mask = Map::from_fn(w, h, |_, _| rng.random::<f64>() > 0.2);
        let losses = |d: &ScalarMap, n: &NormalMap, im: &RgbMap, m: &Mask| {
            let inp = jump_inputs(d, im, m);
            let dn = depth_to_normal(d, &c, m).unwrap();
            (jump1_loss(&inp, 0.05).unwrap(), jump2_loss(&inp, 0.02).unwrap(), dn_loss(n, &dn, 0.1).unwrap())
        };
        let a = losses(&depth, &normal, &img, &mask);
        // rotating the normals with the yaw keeps them attached to the same surface
        let yaw = nalgebra::Rotation3::from_axis_angle(&Vector3::y_axis(), 2.0 * PI * k as f64 / w as f64);
        let b = losses(
            &depth.shift_columns(k),
            &normal.shift_columns(k).map(|n| yaw * n),
            &img.shift_columns(k),
            &mask.shift_columns(k),
        );
        proptest::prop_assert!((a.0 - b.0).abs() < 1e-9);
        proptest::prop_assert!((a.1 - b.1).abs() < 1e-9);
        proptest::prop_assert!((a.2 - b.2).abs() < 1e-9, "{} vs {}", a.2, b.2);
    }

    #[test]
    fn losses_nonnegative_and_finite(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (16, 8);
        let c = cam(w, h);
        let r = fake_render(
            random_rgb(w, h, &mut rng),
            Map::from_fn(w, h, |_, _| rng.random_range(0.0..5.0)),
            random_normals(w, h, &mut rng),
            Map::from_fn(w, h, |_, _| rng.random()),
        );
        let gt = random_rgb(w, h, &mut rng);
        let b = total_loss(&r, &gt, &c, &LossWeights::default(), ScheduleState::FULL).unwrap();
        for v in [b.total, b.rgb, b.dn, b.jump1, b.jump2] {
            proptest::prop_assert!(v.is_finite() && v >= 0.0);
        }
    }

    #[test]
    fn dn_sign_invariant(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = cam(16, 8);
        let depth = random_depth(16, 8, &mut rng);
        let n = random_normals(16, 8, &mut rng);
        let dn = depth_to_normal(&depth, &c, &full(16, 8)).unwrap();
        let a = dn_loss(&n, &dn, 0.1).unwrap();
        let b = dn_loss(&n.map(|x| -x), &dn, 0.1).unwrap();
        proptest::prop_assert!((a - b).abs() < 1e-12);
    }
}
