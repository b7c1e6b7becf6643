mod common;

use bsnerf_core::field::*;
use common::*;
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_arch() -> FieldArch {
    FieldArch {
        depth: 4,
        width: 16,
        skip: Some(2),
        pos_freqs: 3,
        dir_freqs: 2,
        bins: 5,
    }
}

/// Random parameters with non-zero biases so every layer's bias gradient is exercised.
fn random_params(arch: FieldArch, rng: &mut ChaCha8Rng) -> FieldParams {
    let mut p = FieldParams::init(arch, rng.random()).unwrap();
    for v in p.as_mut_slice() {
        *v += rng.random_range(-0.1..0.1);
    }
    p
}

fn scalar_loss(params: &FieldParams, x: &Vector3<f64>, dir: &Vector3<f64>, a: &[f64], c: f64) -> f64 {
    let cache = forward_batch(params, std::slice::from_ref(x), std::slice::from_ref(dir)).unwrap();
    let s: f64 = cache.spectrum().iter().zip(a).map(|(s, a)| s * a).sum();
    s + c * cache.sigma()[0]
}

#[test]
fn backward_matches_finite_differences_on_twenty_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let h = 1e-5;
    let (mut checked, mut skipped) = (0usize, 0usize);
    for draw in 0..20 {
        let params = random_params(small_arch(), &mut rng);
        let x = random_vec3(&mut rng, 1.0);
        let dir = random_unit(&mut rng);
        let a: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c = rng.random_range(-1.0..1.0);
        let (_, cache) = field_forward(&params, &x, &dir).unwrap();
        let g = field_backward(&params, &cache, &a, c).unwrap();

        let theta0 = params.as_slice().to_vec();
        let mut f = |t: &[f64]| scalar_loss(&FieldParams::from_vec(*params.arch(), t.to_vec()).unwrap(), &x, &dir, &a, c);
        for i in 0..theta0.len() {
            match smooth_central(&mut f, &theta0, i, h, 2e-6 * g.theta[i].abs().max(1e-6)) {
                Some(fd) => {
                    checked += 1;
                    let e = rel_err(g.theta[i], fd, 1e-6);
                    assert!(e < 1e-5, "draw {draw} theta[{i}]: {} vs {fd} (rel {e})", g.theta[i]);
                }
                None => skipped += 1,
            }
        }
        let mut fx = |v: &[f64]| scalar_loss(&params, &Vector3::from_column_slice(v), &dir, &a, c);
        let mut fd_dir = |v: &[f64]| scalar_loss(&params, &x, &Vector3::from_column_slice(v), &a, c);
        for i in 0..3 {
            if let Some(fd) = smooth_central(&mut fx, x.as_slice(), i, h, 2e-6 * g.x[i].abs().max(1e-6)) {
                assert!(rel_err(g.x[i], fd, 1e-6) < 1e-5, "draw {draw} x[{i}]: {} vs {fd}", g.x[i]);
            }
            if let Some(fd) = smooth_central(&mut fd_dir, dir.as_slice(), i, h, 2e-6 * g.dir[i].abs().max(1e-6)) {
                assert!(rel_err(g.dir[i], fd, 1e-6) < 1e-5, "draw {draw} dir[{i}]: {} vs {fd}", g.dir[i]);
            }
        }
    }
    assert!(skipped * 100 < checked, "{skipped} of {checked} coordinates straddled a kink");
}

#[test]
fn default_architecture_gradients_on_sampled_coordinates() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let params = random_params(FieldArch::default(), &mut rng);
    let x = random_vec3(&mut rng, 0.5);
    let dir = random_unit(&mut rng);
    let a: Vec<f64> = (0..24).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (_, cache) = field_forward(&params, &x, &dir).unwrap();
    let g = field_backward(&params, &cache, &a, 0.7).unwrap();
    let theta0 = params.as_slice().to_vec();
    let mut f = |t: &[f64]| scalar_loss(&FieldParams::from_vec(*params.arch(), t.to_vec()).unwrap(), &x, &dir, &a, 0.7);
    for _ in 0..300 {
        let i = rng.random_range(0..theta0.len());
        if let Some(fd) = smooth_central(&mut f, &theta0, i, 1e-5, 2e-6 * g.theta[i].abs().max(1e-6)) {
            assert!(rel_err(g.theta[i], fd, 1e-6) < 1e-5, "theta[{i}]: {} vs {fd}", g.theta[i]);
        }
    }
}

fn softplus(x: f64) -> f64 {
    (1.0 + x.exp()).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Depth 1, width 2, no encoding frequencies, one bin. Parameter layout:
/// W0 (3×2), b0 (2), wd (2×1), bd, Wv (5×1: h then dir), bv, ws (1×1), bs.
#[test]
fn toy_network_matches_hand_derivation() {
    let arch = FieldArch {
        depth: 1,
        width: 2,
        skip: None,
        pos_freqs: 0,
        dir_freqs: 0,
        bins: 1,
    };
    let w0 = [[0.5, -0.3], [0.2, 0.4], [-0.1, 0.6]];
    let b0 = [0.1, 0.2];
    let wd = [0.7, -0.4];
    let bd = 0.05;
    let wv = [0.3, 0.8, 0.2, -0.5, 0.1];
    let bv = 0.3;
    let ws = 1.5;
    let bs = -0.2;
    let mut theta = Vec::new();
    for row in w0 {
        theta.extend(row);
    }
    theta.extend(b0);
    theta.extend(wd);
    theta.push(bd);
    theta.extend(wv);
    theta.push(bv);
    theta.push(ws);
    theta.push(bs);
    let params = FieldParams::from_vec(arch, theta).unwrap();
    assert_eq!(params.len(), 19);

    let x = Vector3::new(0.4, 0.3, 0.2);
    let d = Vector3::new(0.0, 0.6, 0.8);
    let (gs, gsig) = (0.9, -0.6);

    // Forward by hand.
    let pre: Vec<f64> = (0..2).map(|j| x[0] * w0[0][j] + x[1] * w0[1][j] + x[2] * w0[2][j] + b0[j]).collect();
    let h: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
    assert!(h.iter().all(|v| *v > 0.0));
    let raw_sigma = h[0] * wd[0] + h[1] * wd[1] + bd;
    let v_pre = h[0] * wv[0] + h[1] * wv[1] + d[0] * wv[2] + d[1] * wv[3] + d[2] * wv[4] + bv;
    assert!(v_pre > 0.0);
    let raw_s = v_pre * ws + bs;
    let s = sigmoid(raw_s);

    let (out, cache) = field_forward(&params, &x, &d).unwrap();
    assert!((out.sigma - softplus(raw_sigma)).abs() < 1e-14);
    assert!((out.spectrum[0] - s).abs() < 1e-14);

    // Backward by hand.
    let d_raw_s = gs * s * (1.0 - s);
    let d_v = d_raw_s * ws;
    let d_raw_sigma = gsig * sigmoid(raw_sigma);
    let d_h = [wd[0] * d_raw_sigma + wv[0] * d_v, wd[1] * d_raw_sigma + wv[1] * d_v];
    let mut expect = Vec::new();
    for i in 0..3 {
        expect.extend([x[i] * d_h[0], x[i] * d_h[1]]);
    }
    expect.extend(d_h);
    expect.extend([h[0] * d_raw_sigma, h[1] * d_raw_sigma, d_raw_sigma]);
    expect.extend([h[0] * d_v, h[1] * d_v, d[0] * d_v, d[1] * d_v, d[2] * d_v, d_v]);
    expect.extend([v_pre * d_raw_s, d_raw_s]);
    let expect_x: Vec<f64> = (0..3).map(|i| w0[i][0] * d_h[0] + w0[i][1] * d_h[1]).collect();
    let expect_d: Vec<f64> = (0..3).map(|i| wv[2 + i] * d_v).collect();

    let g = field_backward(&params, &cache, &[gs], gsig).unwrap();
    for (i, (a, b)) in g.theta.iter().zip(&expect).enumerate() {
        assert!((a - b).abs() < 1e-14, "theta[{i}]: {a} vs {b}");
    }
    for i in 0..3 {
        assert!((g.x[i] - expect_x[i]).abs() < 1e-14);
        assert!((g.dir[i] - expect_d[i]).abs() < 1e-14);
    }
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let params = random_params(small_arch(), &mut rng);
    let (_, cache) = field_forward(&params, &Vector3::new(0.1, 0.2, 0.3), &Vector3::z()).unwrap();
    let g = field_backward(&params, &cache, &[0.0; 5], 0.0).unwrap();
    assert!(g.theta.iter().all(|v| *v == 0.0));
    assert_eq!(g.x, Vector3::zeros());
    assert_eq!(g.dir, Vector3::zeros());
}

#[test]
fn cache_shape_mismatch_is_rejected() {
    let params = FieldParams::init(small_arch(), 1).unwrap();
    let other = FieldParams::init(FieldArch { width: 8, ..small_arch() }, 1).unwrap();
    let (_, cache) = field_forward(&params, &Vector3::zeros(), &Vector3::z()).unwrap();
    assert!(field_backward(&params, &cache, &[0.0; 4], 0.0).is_err());
    assert!(field_backward(&other, &cache, &[0.0; 5], 0.0).is_err());
    assert!(field_forward(&params, &Vector3::zeros(), &Vector3::new(0.0, 0.0, 2.0)).is_err());
}

#[test]
fn batch_equals_single_point_evaluations() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let params = random_params(small_arch(), &mut rng);
    let points: Vec<_> = (0..17).map(|_| random_vec3(&mut rng, 1.0)).collect();
    let dirs: Vec<_> = (0..17).map(|_| random_unit(&mut rng)).collect();
    let batch = forward_batch(&params, &points, &dirs).unwrap();
    for i in 0..17 {
        let (single, _) = field_forward(&params, &points[i], &dirs[i]).unwrap();
        let b = batch.output(i);
        assert!((single.sigma - b.sigma).abs() < 1e-13);
        for (x, y) in single.spectrum.iter().zip(&b.spectrum) {
            assert!((x - y).abs() < 1e-13);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn outputs_in_range_and_density_ignores_direction(seed in 0u64..10_000, x in -2.0f64..2.0, y in -2.0f64..2.0, z in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = random_params(small_arch(), &mut rng);
        let p = Vector3::new(x, y, z);
        let (a, _) = field_forward(&params, &p, &random_unit(&mut rng)).unwrap();
        let (b, _) = field_forward(&params, &p, &random_unit(&mut rng)).unwrap();
        prop_assert!(a.sigma >= 0.0 && a.sigma.is_finite());
        prop_assert!(a.spectrum.iter().all(|s| (0.0..=1.0).contains(s)));
        prop_assert_eq!(a.sigma.to_bits(), b.sigma.to_bits());
    }

    #[test]
    fn evaluation_is_deterministic(seed in 0u64..10_000) {
        let params = FieldParams::init(small_arch(), seed).unwrap();
        let p = Vector3::new(0.3, -0.1, 0.7);
        let (a, _) = field_forward(&params, &p, &Vector3::y()).unwrap();
        let (b, _) = field_forward(&params, &p, &Vector3::y()).unwrap();
        prop_assert_eq!(a, b);
    }
}
