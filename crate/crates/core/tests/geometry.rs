mod common;

use bsnerf_core::geometry::*;
use bsnerf_core::Error;
use common::*;
use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn max_abs(m: &Matrix3<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

#[test]
fn quaternion_oracle_agrees_on_random_rotations() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let axis = random_unit(&mut rng);
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let r = rodrigues(&(axis * angle)).unwrap();
        let q = quaternion_matrix(&axis, angle);
        assert!(max_abs(&(r - q)) < 1e-12);
        let v = random_vec3(&mut rng, 2.0);
        assert!((r * v - quat_rotate(&axis, angle, &v)).norm() < 1e-12);
    }
}

#[test]
fn mixed_example_rotation() {
    let phi = Vector3::new(0.1, -0.2, 0.3);
    let r = rodrigues(&phi).unwrap();
    assert!(max_abs(&(r * r.transpose() - Matrix3::identity())) < 1e-12);
    assert!((r.determinant() - 1.0).abs() < 1e-12);
    let angle = ((r.trace() - 1.0) / 2.0).acos();
    assert!((angle - phi.norm()).abs() < 1e-12);
    assert!(max_abs(&(r - quaternion_matrix(&phi.normalize(), phi.norm()))) < 1e-14);
}

#[test]
fn composition_matches_quaternion_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let (a1, t1) = (random_unit(&mut rng), rng.random_range(0.0..3.0));
        let (a2, t2) = (random_unit(&mut rng), rng.random_range(0.0..3.0));
        let r = rodrigues(&(a1 * t1)).unwrap() * rodrigues(&(a2 * t2)).unwrap();
        let (s1, c1) = (0.5 * t1).sin_cos();
        let (s2, c2) = (0.5 * t2).sin_cos();
        let q = quat_mul([c1, a1.x * s1, a1.y * s1, a1.z * s1], [c2, a2.x * s2, a2.y * s2, a2.z * s2]);
        let v = Vector3::new(q[1], q[2], q[3]);
        let angle = 2.0 * v.norm().atan2(q[0]);
        let expect = if v.norm() > 0.0 { quaternion_matrix(&v.normalize(), angle) } else { Matrix3::identity() };
        assert!(max_abs(&(r - expect)) < 1e-12);
    }
}

#[test]
fn small_angle_branch_is_continuous() {
    let axis = Vector3::new(0.3, -0.5, 0.8).normalize();
    for angle in [SMALL_ANGLE * (1.0 - 1e-9), SMALL_ANGLE, SMALL_ANGLE * (1.0 + 1e-9), 5e-7, 2e-6] {
        let phi = axis * angle;
        let r = rodrigues(&phi).unwrap();
        assert!(max_abs(&(r - rodrigues_series(&phi))) < 1e-12);
        assert!(max_abs(&(r - quaternion_matrix(&axis, angle))) < 1e-12);
    }
    let below = rodrigues(&(axis * (SMALL_ANGLE * (1.0 - 1e-12)))).unwrap();
    let above = rodrigues(&(axis * (SMALL_ANGLE * (1.0 + 1e-12)))).unwrap();
    assert!(max_abs(&(below - above)) < 1e-12);
}

#[test]
fn backward_at_zero_with_elementary_upstream() {
    let h = 1e-5;
    for i in 0..3 {
        for j in 0..3 {
            let mut e = Matrix3::zeros();
            e[(i, j)] = 1.0;
            let g = rodrigues_backward(&Vector3::zeros(), &e).unwrap();
            for c in 0..3 {
                let mut f = |x: &[f64]| rodrigues(&Vector3::from_column_slice(x)).unwrap()[(i, j)];
                let fd = central_diff(&mut f, &[0.0; 3], c, h);
                assert!((g[c] - fd).abs() < 1e-9, "({i},{j}) coord {c}: {} vs {fd}", g[c]);
            }
        }
    }
}

#[test]
fn backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for draw in 0..100 {
        let phi = match draw % 4 {
            0 => random_vec3(&mut rng, 0.01),
            1 => random_vec3(&mut rng, 0.2),
            _ => random_vec3(&mut rng, 1.5),
        };
        let upstream = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let g = rodrigues_backward(&phi, &upstream).unwrap();
        let mut loss = |x: &[f64]| rodrigues(&Vector3::from_column_slice(x)).unwrap().component_mul(&upstream).sum();
        let fd: Vec<f64> = (0..3).map(|c| central_diff(&mut loss, phi.as_slice(), c, 1e-5)).collect();
        let err = rel_err_vec(g.as_slice(), &fd, 1e-8);
        assert!(err < 1e-6, "draw {draw}: rel err {err}");
    }
}

#[test]
fn non_finite_inputs_rejected() {
    assert!(matches!(rodrigues(&Vector3::new(f64::NAN, 0.0, 0.0)), Err(Error::InvalidArgument(_))));
    assert!(rodrigues_backward(&Vector3::new(0.0, f64::INFINITY, 0.0), &Matrix3::zeros()).is_err());
    assert!(AxisAngle::new(Vector3::new(0.0, 0.0, f64::NAN)).is_err());
}

fn cam_with(pose: Pose) -> CameraParams {
    CameraParams::new(vec![pose], 50.0, 64, 48).unwrap()
}

#[test]
fn ray_examples() {
    let bounds = SceneBounds::new(1.0, 4.0).unwrap();
    let cam = cam_with(Pose::identity());
    let ray = generate_ray(&cam, 0, 32.0, 24.0, &bounds).unwrap();
    assert!((ray.direction - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-15);
    let ray = generate_ray(&cam, 0, 32.0 + 50.0 - 1e-9, 24.0, &bounds);
    assert!(ray.is_err(), "pixel outside the image must be rejected");
    let wide = CameraParams::new(vec![Pose::identity()], 20.0, 64, 48).unwrap();
    let ray = generate_ray(&wide, 0, 52.0, 24.0, &bounds).unwrap();
    assert!((ray.direction - Vector3::new(1.0, 0.0, -1.0).normalize()).norm() < 1e-15);
    let turned = cam_with(Pose::new(AxisAngle::new(Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2)).unwrap(), Vector3::zeros()).unwrap());
    let ray = generate_ray(&turned, 0, 32.0, 24.0, &bounds).unwrap();
    assert!((ray.direction - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-15);
    assert!(generate_ray(&cam, 1, 1.0, 1.0, &bounds).is_err());
}

fn camera_loss(cam: &CameraParams, u: f64, v: f64, wo: &Vector3<f64>, wd: &Vector3<f64>) -> f64 {
    let bounds = SceneBounds::new(1.0, 4.0).unwrap();
    let r = generate_ray(cam, 0, u, v, &bounds).unwrap();
    wo.dot(&r.origin) + wd.dot(&r.direction) + 0.5 * r.direction.x * r.direction.y
}

#[test]
fn ray_backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..50 {
        let phi = random_vec3(&mut rng, 0.8);
        let t = random_vec3(&mut rng, 2.0);
        let focal = rng.random_range(30.0..90.0);
        let (u, v) = (rng.random_range(0.0..64.0), rng.random_range(0.0..48.0));
        let (wo, wd) = (random_vec3(&mut rng, 1.0), random_vec3(&mut rng, 1.0));
        let build = |x: &[f64]| {
            CameraParams::new(
                vec![Pose::new(AxisAngle::new(Vector3::new(x[0], x[1], x[2])).unwrap(), Vector3::new(x[3], x[4], x[5])).unwrap()],
                x[6],
                64,
                48,
            )
            .unwrap()
        };
        let x0 = [phi.x, phi.y, phi.z, t.x, t.y, t.z, focal];
        let cam = build(&x0);
        let ray = generate_ray(&cam, 0, u, v, &SceneBounds::new(1.0, 4.0).unwrap()).unwrap();
        let d = ray.direction;
        let grad_dir = wd + 0.5 * Vector3::new(d.y, d.x, 0.0);
        let g = generate_ray_backward(&cam, 0, u, v, &wo, &grad_dir).unwrap();
        let analytic = [g.rotation.x, g.rotation.y, g.rotation.z, g.translation.x, g.translation.y, g.translation.z, g.focal];
        let mut f = |x: &[f64]| camera_loss(&build(x), u, v, &wo, &wd);
        let steps = [1e-5, 1e-5, 1e-5, 1e-5, 1e-5, 1e-5, 1e-3];
        let fd: Vec<f64> = (0..7).map(|i| central_diff(&mut f, &x0, i, steps[i])).collect();
        for i in 0..7 {
            assert!(rel_err(analytic[i], fd[i], 1e-6) < 1e-6, "coord {i}: {} vs {}", analytic[i], fd[i]);
        }
    }
}

proptest! {
    #[test]
    fn rotation_invariants(x in -3.0f64..3.0, y in -3.0f64..3.0, z in -3.0f64..3.0) {
        let phi = Vector3::new(x, y, z);
        let r = rodrigues(&phi).unwrap();
        prop_assert!(max_abs(&(r * r.transpose() - Matrix3::identity())) < 1e-9);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
        prop_assert!(max_abs(&(rodrigues(&-phi).unwrap() - r.transpose())) < 1e-9);
        if phi.norm() > 0.0 {
            let w = phi.normalize();
            prop_assert!((r * w - w).norm() < 1e-9);
        }
    }

    #[test]
    fn rays_are_unit(x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0,
                     u in 0.0f64..64.0, v in 0.0f64..48.0, f in 5.0f64..500.0) {
        let pose = Pose::new(AxisAngle::new(Vector3::new(x, y, z)).unwrap(), Vector3::new(z, x, y)).unwrap();
        let cam = CameraParams::new(vec![pose], f, 64, 48).unwrap();
        let ray = generate_ray(&cam, 0, u, v, &SceneBounds::new(0.5, 2.0).unwrap()).unwrap();
        prop_assert!((ray.direction.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn axis_angle_round_trip(x in -1.5f64..1.5, y in -1.5f64..1.5, z in -1.5f64..1.5) {
        let phi = Vector3::new(x, y, z);
        let back = matrix_to_axis_angle(&rodrigues(&phi).unwrap()).unwrap();
        prop_assert!((back.vector() - phi).norm() < 1e-9);
    }
}
