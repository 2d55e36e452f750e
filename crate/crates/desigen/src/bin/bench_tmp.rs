use desigen::corpus::{synth_record, StyleSpace};
use desigen::diffusion::*;
use desigen::layout as dlayout;
use std::time::Instant;

fn main() {
    // corpus synth speed
    let t0 = Instant::now();
    let records: Vec<_> = (0..64u64)
        .map(|s| synth_record(s, (32, 32), &StyleSpace::default()).unwrap())
        .collect();
    println!("synth 64 records (1 thread): {:?}", t0.elapsed());

    let unet_cfg = UNetConfig {
        res: 32,
        channels: vec![16, 32, 64],
        attn: vec![false, true, true],
        t_dim: 96,
        txt_dim: 64,
        heads: 2,
        text_layers: 2,
    };
    let refs: Vec<&desigen::corpus::BannerRecord> = records.iter().collect();
    let tc = DiffusionTrainConfig {
        steps: 10,
        batch_size: 8,
        lr: 2e-4,
        warmup_steps: 5,
        schedule_t: 1000,
        gamma: 0.5,
        quiet: true,
        ..Default::default()
    };
    let t0 = Instant::now();
    let (model, _, _) = train_diffusion(&refs, &unet_cfg, &tc).unwrap();
    println!("10 diffusion train steps (batch 8): {:?} -> per step {:?}", t0.elapsed(), t0.elapsed() / 10);

    let gen = GenerationConfig { sample_steps: 24, seed: 0, ..Default::default() };
    let t0 = Instant::now();
    let out = sample(&model, "red circle on the left", &gen, None).unwrap();
    println!("1 sample @24 DDIM steps: {:?}", t0.elapsed());
    let t0 = Instant::now();
    let _ = ddim_invert(&model, &out.image, "red circle on the left", 24).unwrap();
    println!("1 inversion @24 steps: {:?}", t0.elapsed());

    // layout model speed
    let lcfg = dlayout::LayoutModelConfig {
        res: 32,
        d_model: 128,
        layers: 3,
        heads: 4,
        enc_base: 32,
        vocab: Default::default(),
    };
    let ltc = dlayout::LayoutTrainConfig { epochs: 1, batch_size: 16, quiet: true, ..Default::default() };
    let t0 = Instant::now();
    let _ = dlayout::train_layout(&refs, &lcfg, &ltc).unwrap();
    println!("1 layout epoch over 64 records (batch 16): {:?}", t0.elapsed());
}
