#![allow(dead_code)]

use nalgebra::{Matrix3, Vector3};
use rand::Rng;

/// Central difference of `f` at `x` along coordinate `i`.
pub fn central_diff(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut p = x.to_vec();
    p[i] += h;
    let fp = f(&p);
    p[i] = x[i] - h;
    let fm = f(&p);
    (fp - fm) / (2.0 * h)
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)` over whole vectors.
pub fn rel_err_vec(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(floor)
}

pub fn random_vec3<R: Rng>(rng: &mut R, scale: f64) -> Vector3<f64> {
    Vector3::new(
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
    )
}

pub fn random_unit<R: Rng>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = random_vec3(rng, 1.0);
        if v.norm() > 0.1 && v.norm() <= 1.0 {
            return v.normalize();
        }
    }
}

/// Rotation matrix of the unit quaternion for rotating by `angle` about `axis`.
pub fn quaternion_matrix(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let (s, w) = (0.5 * angle).sin_cos();
    let (x, y, z) = (axis.x * s, axis.y * s, axis.z * s);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Hamilton product of quaternions stored as `(w, x, y, z)`.
pub fn quat_mul(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

/// Rotates `v` by the quaternion for `angle` about `axis` via `q v q*`.
pub fn quat_rotate(axis: &Vector3<f64>, angle: f64, v: &Vector3<f64>) -> Vector3<f64> {
    let (s, c) = (0.5 * angle).sin_cos();
    let q = [c, axis.x * s, axis.y * s, axis.z * s];
    let q_conj = [c, -axis.x * s, -axis.y * s, -axis.z * s];
    let r = quat_mul(quat_mul(q, [0.0, v.x, v.y, v.z]), q_conj);
    Vector3::new(r[1], r[2], r[3])
}

/// Central difference that returns `None` when a ReLU kink inside
/// `[x − h, x + h]` would bias it by more than about `tol`. For a smooth
/// function the one-sided slope gap is linear in the step; a kink adds a
/// step-independent part, which is what the two-step comparison isolates.
pub fn smooth_central(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64, tol: f64) -> Option<f64> {
    let f0 = f(x);
    let mut p = x.to_vec();
    let mut eval = |step: f64| {
        p[i] = x[i] + step;
        let fp = f(&p);
        p[i] = x[i] - step;
        let fm = f(&p);
        (fp, fm)
    };
    let (fp, fm) = eval(h);
    let (hp, hm) = eval(0.5 * h);
    let gap = (fp - 2.0 * f0 + fm) / h;
    let half_gap = (hp - 2.0 * f0 + hm) / (0.5 * h);
    if (half_gap - 0.5 * gap).abs() > tol {
        return None;
    }
    Some((fp - fm) / (2.0 * h))
}
