//! Synthesizes the default desk dataset and trains on it, printing timing
//! and metrics. Usage: `train_desk [epochs] [width] [rays] [samples] [pos_freqs] [color 0|1]`.

use std::time::Instant;

use bsnerf_core::eval::evaluate;
use bsnerf_core::optim::{train, TrainConfig};
use bsnerf_core::scenedata::{default_rig, make_dataset, SynthOptions, SyntheticScene};
use bsnerf_core::spectral::{default_filter_bank, default_sensor, WavelengthGrid};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let arg = |i: usize, d: usize| args.get(i).copied().unwrap_or(d);
    let grid = WavelengthGrid::default();
    let scene = SyntheticScene::default_scene(&grid)?;
    let cam = default_rig(64, 48)?;
    let t = Instant::now();
    let data = make_dataset(&scene, &cam, &default_filter_bank(grid)?, &default_sensor(grid)?, &SynthOptions::default(), None)?;
    println!("synth {:.2}s peak {}", t.elapsed().as_secs_f64(), data.peak());

    let mut cfg = TrainConfig::desk();
    cfg.epochs = arg(0, 20);
    cfg.arch.width = arg(1, cfg.arch.width);
    cfg.rays_per_batch = arg(2, cfg.rays_per_batch);
    cfg.samples = arg(3, cfg.samples);
    cfg.arch.pos_freqs = arg(4, cfg.arch.pos_freqs);
    cfg.color_loss = arg(5, 1) != 0;
    cfg.optimize_poses = false;
    cfg.optimize_focal = false;
    cfg.seed = 7;
    let t = Instant::now();
    let out = train(&data, &cfg)?;
    let secs = t.elapsed().as_secs_f64();
    println!(
        "{} epochs in {:.2}s ({:.1} ms/step)",
        cfg.epochs,
        secs,
        1e3 * secs / (cfg.epochs.max(1) * data.views()) as f64
    );
    for r in out.log.rows.iter().step_by((cfg.epochs / 10).max(1)) {
        println!("epoch {} loss {:.4e} psnr {:.2}", r.epoch, r.loss, r.psnr_train);
    }
    let report = evaluate(&out.params, &out.cameras, &data, 256, 0)?;
    println!("eval psnr {:.2} dB, color distance {:.4e}", report.mean_psnr(), report.color_distance);
    Ok(())
}

