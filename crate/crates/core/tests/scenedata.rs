use bsnerf_core::geometry::{CameraParams, Pose, SceneBounds};
use bsnerf_core::losses::channel_stats;
use bsnerf_core::scenedata::*;
use bsnerf_core::spectral::*;
use bsnerf_core::Error;
use nalgebra::Vector3;

fn grid() -> WavelengthGrid {
    WavelengthGrid::default()
}

fn front_camera(w: usize, h: usize) -> CameraParams {
    let pose = Pose::look_at(Vector3::new(0.0, 0.0, 2.5), Vector3::zeros(), Vector3::y()).unwrap();
    CameraParams::new(vec![pose], 100.0 * w as f64 / 64.0, w, h).unwrap()
}

fn one_hot(bin: usize) -> SpectralCurve {
    let mut v = vec![0.0; grid().bins()];
    v[bin] = 1.0;
    SpectralCurve::new(format!("bin{bin}"), grid(), v).unwrap()
}

fn rms(a: &Image, b: &Image) -> f64 {
    let n = a.data().len() as f64;
    (a.data().iter().zip(b.data()).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>() / n).sqrt()
}

fn default_response() -> ResponseMatrix {
    build_response(&default_filter_bank(grid()).unwrap(), &default_sensor(grid()).unwrap()).unwrap()
}

#[test]
fn empty_scene_renders_black() {
    let scene = SyntheticScene::empty(24);
    let cam = default_rig(16, 12).unwrap();
    let response = default_response();
    for d in 0..9 {
        let img = oracle_render(&scene, &cam, d, &DEFAULT_BOUNDS, &response, ORACLE_STEP).unwrap();
        assert!(img.data().iter().all(|v| *v == 0.0));
    }
}

#[test]
fn one_hot_spectra_are_orthogonal() {
    let b = 7;
    let mut spectrum = vec![0.0; 24];
    spectrum[b] = 1.0;
    let blob = Blob { center: Vector3::zeros(), radius: 0.3, density: 40.0, spectrum };
    let scene = SyntheticScene::new(vec![blob], 24, 1.0).unwrap();
    let filters = CurveSet::new(CurveKind::Transmission, vec![one_hot(b), one_hot(b + 1), one_hot(20)]).unwrap();
    let response = build_response(&filters, &default_sensor(grid()).unwrap()).unwrap();
    let pose = Pose::look_at(Vector3::new(0.0, 0.0, 2.5), Vector3::zeros(), Vector3::y()).unwrap();
    let cam = CameraParams::new(vec![pose; 3], 25.0, 16, 12).unwrap();
    let lit = oracle_render(&scene, &cam, 0, &DEFAULT_BOUNDS, &response, ORACLE_STEP).unwrap();
    assert!(lit.max_value() > 0.0);
    for d in 1..3 {
        let dark = oracle_render(&scene, &cam, d, &DEFAULT_BOUNDS, &response, ORACLE_STEP).unwrap();
        assert!(dark.data().iter().all(|v| *v == 0.0));
    }
}

#[test]
fn oracle_converges_when_the_step_halves() {
    let scene = SyntheticScene::default_scene(&grid()).unwrap();
    let cam = front_camera(16, 12);
    let m = default_response().select_view(0).unwrap();
    let render = |step| oracle_render(&scene, &cam, 0, &DEFAULT_BOUNDS, &m, step).unwrap();
    let (coarse, fine, finer) = (render(2e-3), render(1e-3), render(5e-4));
    let scale = (finer.data().iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / finer.data().len() as f64).sqrt();
    let d1 = rms(&coarse, &fine);
    let d2 = rms(&fine, &finer);
    assert!(d2 < d1, "{d2} !< {d1}");
    assert!(d2 < 1e-3 * scale, "relative RMS change {}", d2 / scale);
}

#[test]
fn oracle_is_linear_in_the_filter() {
    let scene = SyntheticScene::default_scene(&grid()).unwrap();
    let cam = front_camera(16, 12);
    let bank = default_filter_bank(grid()).unwrap();
    let sensor = default_sensor(grid()).unwrap();
    let pick = |i: usize| CurveSet::new(CurveKind::Transmission, vec![bank.curves()[i].clone()]).unwrap();
    let a = build_response(&pick(1), &sensor).unwrap();
    let b = build_response(&pick(5), &sensor).unwrap();
    let sum = a.sum(&b).unwrap();
    let spectra = oracle_spectral_image(&scene, &cam, 0, &DEFAULT_BOUNDS, ORACLE_STEP).unwrap();
    let (ia, ib, is) = (spectra.project(&a, 0).unwrap(), spectra.project(&b, 0).unwrap(), spectra.project(&sum, 0).unwrap());
    for i in 0..is.data().len() {
        let expect = ia.data()[i] as f64 + ib.data()[i] as f64;
        assert!((is.data()[i] as f64 - expect).abs() <= 1e-9 + 1e-6 * expect);
    }
}

#[test]
fn noiseless_dataset_equals_oracle_renders() {
    let scene = SyntheticScene::default_scene(&grid()).unwrap();
    let cam = default_rig(16, 12).unwrap();
    let filters = default_filter_bank(grid()).unwrap();
    let sensor = default_sensor(grid()).unwrap();
    let data = make_dataset(&scene, &cam, &filters, &sensor, &SynthOptions::default(), None).unwrap();
    let response = build_response(&filters, &sensor).unwrap();
    for d in 0..9 {
        let img = oracle_render(&scene, &cam, d, &DEFAULT_BOUNDS, &response, ORACLE_STEP).unwrap();
        assert_eq!(data.images[d], img);
    }
    let noisy = make_dataset(&scene, &cam, &filters, &sensor, &SynthOptions { noise_std: 0.01, seed: 3, ..SynthOptions::default() }, None).unwrap();
    assert_ne!(noisy.images, data.images);
    assert!(noisy.images.iter().all(|i| i.data().iter().all(|v| *v >= 0.0)));
}

#[test]
fn desk_dataset_round_trips_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let scene = SyntheticScene::default_scene(&grid()).unwrap();
    let (w, h) = Preset::Desk.size();
    let cam = default_rig(w, h).unwrap();
    let opts = SynthOptions { noise_std: 0.01, seed: 1, ..SynthOptions::default() };
    let data = make_dataset(
        &scene,
        &cam,
        &default_filter_bank(grid()).unwrap(),
        &default_sensor(grid()).unwrap(),
        &opts,
        Some(dir.path()),
    )
    .unwrap();
    let rasters = std::fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "imgf32"))
        .count();
    assert_eq!(rasters, 9);
    assert!(dir.path().join("meta.json").exists());
    let loaded = load_dataset(dir.path()).unwrap();
    assert_eq!(loaded, data);
    for (img, stats) in loaded.images.iter().zip(&loaded.stats) {
        let fresh = channel_stats(&img.to_f64(), 3).unwrap();
        for k in 0..3 {
            assert!((fresh.mean[k] - stats.mean[k]).abs() < 1e-12);
            assert!((fresh.std[k] - stats.std[k]).abs() < 1e-12);
        }
    }
}

#[test]
fn corrupt_raster_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.imgf32");
    save_image(&path, &Image::zeros(2, 2, 3)).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'J';
    std::fs::write(&path, bytes).unwrap();
    let err = load_image(&path).unwrap_err();
    assert!(err.to_string().contains("x.imgf32"), "{err}");
}

#[test]
fn raster_dimensions_must_match_meta() {
    let dir = tempfile::tempdir().unwrap();
    let scene = SyntheticScene::default_scene(&grid()).unwrap();
    let cam = default_rig(8, 6).unwrap();
    make_dataset(
        &scene,
        &cam,
        &default_filter_bank(grid()).unwrap(),
        &default_sensor(grid()).unwrap(),
        &SynthOptions::default(),
        Some(dir.path()),
    )
    .unwrap();
    save_image(dir.path().join("view_4.imgf32"), &Image::zeros(6, 8, 3)).unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Format { .. }), "{err}");
    assert!(err.to_string().contains("view_4.imgf32"), "{err}");
}

#[test]
fn paper_geometry_is_generable() {
    // One full-resolution subview at a coarse oracle step keeps this cheap;
    // the CLI generates all nine at the reference step.
    let (w, h) = Preset::PaperGeometry.size();
    assert_eq!((w, h), (245, 154));
    let scene = SyntheticScene::default_scene(&grid()).unwrap();
    let rig = default_rig(w, h).unwrap();
    let cam = CameraParams::new(vec![rig.poses[4]], rig.focal, w, h).unwrap();
    let m = default_response().select_view(4).unwrap();
    let img = oracle_render(&scene, &cam, 0, &SceneBounds::new(1.8, 3.3).unwrap(), &m, 5e-3).unwrap();
    assert_eq!((img.width(), img.height(), img.channels()), (245, 154, 3));
    assert!(img.max_value() > 0.0);
}
