use desigen::corpus::*;
use desigen::diffusion::*;
use desigen::metrics::{attn_sim::map_cosine, salient_ratio};
use desigen::raster::psnr;
use desigen::saliency::*;
use rayon::prelude::*;
use std::time::Instant;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1200);
    let lr: f32 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2e-4);
    let n_corpus: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(2000);

    let t0 = Instant::now();
    let dir = std::path::PathBuf::from(format!("/tmp/exp-corpus-{n_corpus}"));
    let (manifest, records) = if dir.join("manifest.json").exists() {
        load_corpus(&dir).unwrap()
    } else {
        build_corpus(&dir, n_corpus, &FilterCriteria::default(), [0.8, 0.1, 0.1], 1000, (32, 32), &StyleSpace::default()).unwrap();
        load_corpus(&dir).unwrap()
    };
    println!("corpus: {} records, rejection {:.1}% ({:?})", manifest.n, manifest.rejection.rejection_rate()*100.0, t0.elapsed());
    let train: Vec<&BannerRecord> = records.iter().filter(|(_, r)| r.split == Split::Train).map(|(_, r)| r).collect();
    let val: Vec<&BannerRecord> = records.iter().filter(|(_, r)| r.split == Split::Val).map(|(_, r)| r).collect();
    let test: Vec<&BannerRecord> = records.iter().filter(|(_, r)| r.split == Split::Test).map(|(_, r)| r).collect();
    println!("splits: {} train / {} val / {} test", train.len(), val.len(), test.len());
    println!("corpus mean salient ratio: {:.4}", mean(&records.iter().map(|(_, r)| salient_ratio(&r.saliency)).collect::<Vec<_>>()));

    // detector
    let t0 = Instant::now();
    let det_cache = std::path::PathBuf::from(format!("/tmp/exp-detector-{n_corpus}.ckpt"));
    let detector = if det_cache.exists() {
        desigen::saliency::detector::load_detector(&det_cache).unwrap().0
    } else {
        let mut trained = train_detector(
            &train,
            &val,
            DetectorConfig { res: 32, base: 16 },
            &DetectorTrainConfig { epochs: 20, batch_size: 16, lr: 2e-3, seed: 0 },
        )
        .unwrap();
        println!("detector: val IoU {:.4}, final loss {:.5} ({:?})", trained.val_iou, trained.final_loss, t0.elapsed());
        desigen::saliency::detector::save_detector(&mut trained, &det_cache).unwrap();
        trained.detector
    };
    // blank-image check
    let blank = ndarray::Array3::from_elem((3, 32, 32), 0.85f32);
    let blank_sal = salient_ratio(&detector.detect(&blank).unwrap());
    println!("detector on blank image: mean saliency {:.4}", blank_sal);

    // diffusion: gamma 0 and 0.5, matched seed
    let unet_cfg = UNetConfig {
        res: 32,
        channels: vec![16, 32, 64],
        attn: vec![true, true, true],
        t_dim: 96,
        txt_dim: 64,
        heads: 2,
        text_layers: 2,
    };
    let mut models = Vec::new();
    for gamma in [0.0f32, 0.5] {
        let path = std::path::PathBuf::from(format!("/tmp/exp-diff-{n_corpus}-{steps}-{lr}-{gamma}.ckpt"));
        let model = if path.exists() {
            load_diffusion(&path).unwrap().0
        } else {
            let t0 = Instant::now();
            let tc = DiffusionTrainConfig {
                steps,
                batch_size: 8,
                lr,
                warmup_steps: 50,
                gamma,
                schedule_t: 1000,
                cond_dropout: 0.05,
                seed: 1,
                quiet: true,
                ..Default::default()
            };
            let (mut m, _, stats) = train_diffusion(&train, &unet_cfg, &tc).unwrap();
            let last = &stats[stats.len() - 1];
            println!(
                "gamma={gamma}: trained {steps} steps, l_d {:.5} l_c {:.5} ({:?})",
                last.l_d, last.l_c, t0.elapsed()
            );
            save_diffusion(&mut m, gamma, steps, 1, &path).unwrap();
            m
        };
        models.push((gamma, model));
    }

    // salient ratio comparison over 100 samples
    let n_samples = 100usize;
    let prompts: Vec<&str> = (0..n_samples).map(|i| test[i % test.len()].prompt.as_str()).collect();
    // text reliance: same seed, empty vs full prompt
    {
        let model = &models[1].1;
        let mut diffs = Vec::new();
        for i in 0..8u64 {
            let gen = GenerationConfig { sample_steps: 24, seed: 40000 + i, ..Default::default() };
            let a = sample(model, prompts[i as usize], &gen, None).unwrap();
            let b = sample(model, "", &gen, None).unwrap();
            let d: f32 = (&a.image - &b.image).iter().map(|v| v.abs()).sum::<f32>() / a.image.len() as f32;
            diffs.push(d as f64);
        }
        println!("text reliance: mean |prompt - empty| pixel diff {:.4}", mean(&diffs));
    }
    // detector sanity on real test images
    {
        let vals: Vec<f64> = test.iter().take(50).map(|r| salient_ratio(&detector.detect(&r.image).unwrap())).collect();
        println!("detector mean ratio on real test images: {:.4}", mean(&vals));
    }

    for (gamma, model) in &models {
        let t0 = Instant::now();
        let ratios: Vec<f64> = (0..n_samples)
            .into_par_iter()
            .map(|i| {
                let gen = GenerationConfig { sample_steps: 24, seed: 5000 + i as u64, ..Default::default() };
                let out = sample(model, prompts[i], &gen, None).unwrap();
                salient_ratio(&detector.detect(&out.image).unwrap())
            })
            .collect();
        println!("gamma={gamma}: mean salient ratio {:.4} (x100: {:.2}) ({:?})", mean(&ratios), mean(&ratios)*100.0, t0.elapsed());
    }

    // mask sweep on the gamma=0.5 model
    let model = &models[1].1;
    let mut sweep = Vec::new();
    for ratio in [0.0f32, 0.25, 0.5, 0.75, 1.0] {
        let vals: Vec<f64> = (0..50)
            .into_par_iter()
            .map(|i| {
                let gen = GenerationConfig { sample_steps: 24, seed: 9000 + i as u64, ..Default::default() };
                let mask = if ratio == 0.0 {
                    None
                } else {
                    // centered square of area `ratio`
                    let side = (ratio).sqrt();
                    Some(RegionMask::rect(32, 32, (1.0 - side) / 2.0, (1.0 - side) / 2.0, side, side))
                };
                let out = sample(model, prompts[i % prompts.len()], &gen, mask.as_ref()).unwrap();
                salient_ratio(&detector.detect(&out.image).unwrap())
            })
            .collect();
        sweep.push((ratio, mean(&vals)));
    }
    println!("mask sweep (ratio -> mean salient ratio): {:?}", sweep);

    // locality: left-half mask vs none
    let halves: Vec<(f64, f64, f64, f64)> = (0..50)
        .into_par_iter()
        .map(|i| {
            let gen = GenerationConfig { sample_steps: 24, seed: 12000 + i as u64, ..Default::default() };
            let mask = RegionMask::rect(32, 32, 0.0, 0.0, 0.5, 1.0);
            let masked = sample(model, prompts[i % prompts.len()], &gen, Some(&mask)).unwrap();
            let plain = sample(model, prompts[i % prompts.len()], &gen, None).unwrap();
            let sm = detector.detect(&masked.image).unwrap();
            let sp = detector.detect(&plain.image).unwrap();
            let (mut in_m, mut out_m, mut in_p, mut out_p) = (0.0f64, 0.0, 0.0, 0.0);
            for y in 0..32 {
                for x in 0..32 {
                    if x < 16 {
                        in_m += sm[[y, x]] as f64;
                        in_p += sp[[y, x]] as f64;
                    } else {
                        out_m += sm[[y, x]] as f64;
                        out_p += sp[[y, x]] as f64;
                    }
                }
            }
            (in_m, out_m, in_p, out_p)
        })
        .collect();
    let f_in = halves.iter().map(|h| h.0).sum::<f64>() / halves.iter().map(|h| h.2).sum::<f64>().max(1e-9);
    let f_out = halves.iter().map(|h| h.1).sum::<f64>() / halves.iter().map(|h| h.3).sum::<f64>().max(1e-9);
    println!("locality: masked-region factor {:.3}, unmasked-region factor {:.3}", f_in, f_out);

    // inversion PSNR on generated images @50 steps
    let psnrs: Vec<f64> = (0..20)
        .into_par_iter()
        .map(|i| {
            let gen = GenerationConfig { sample_steps: 50, seed: 15000 + i as u64, ..Default::default() };
            let out = sample(model, prompts[i % prompts.len()], &gen, None).unwrap();
            let latent = ddim_invert(model, &out.image, prompts[i % prompts.len()], 50).unwrap();
            let back = sample_with_latent(model, prompts[i % prompts.len()], &gen, None, Some(latent)).unwrap();
            psnr(&out.image, &back.image)
        })
        .collect();
    let mut sorted = psnrs.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    println!("inversion PSNR over 20 gen images @50 steps: median {:.2} min {:.2}", sorted[sorted.len()/2], sorted[0]);

    // attention-saliency cosine on corpus images (gamma=0 model per Fig.3 setting)
    let model0 = &models[0].1;
    let cosines: Vec<f64> = (0..50)
        .into_par_iter()
        .map(|i| {
            let rec = test[i % test.len()];
            let latent = ddim_invert(model0, &rec.image, &rec.prompt, 20).unwrap();
            let gen = GenerationConfig { sample_steps: 20, seed: 0, ..Default::default() };
            let out = sample_with_latent(model0, &rec.prompt, &gen, None, Some(latent)).unwrap();
            let agg = aggregate_attention(&out.attention, (32, 32)).unwrap();
            let det = detector.detect(&rec.image).unwrap();
            map_cosine(&agg, &det)
        })
        .collect();
    let mut cs = cosines.clone();
    cs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    println!("attention/saliency cosine (gamma=0 model): median {:.3} min {:.3} max {:.3}", cs[cs.len()/2], cs[0], cs[cs.len()-1]);

    // also cosine for gamma=0.5 model for comparison
    let cosines5: Vec<f64> = (0..50)
        .into_par_iter()
        .map(|i| {
            let rec = test[i % test.len()];
            let latent = ddim_invert(model, &rec.image, &rec.prompt, 20).unwrap();
            let gen = GenerationConfig { sample_steps: 20, seed: 0, ..Default::default() };
            let out = sample_with_latent(model, &rec.prompt, &gen, None, Some(latent)).unwrap();
            let agg = aggregate_attention(&out.attention, (32, 32)).unwrap();
            let det = detector.detect(&rec.image).unwrap();
            map_cosine(&agg, &det)
        })
        .collect();
    let mut cs5 = cosines5.clone();
    cs5.sort_by(|a, b| a.partial_cmp(b).unwrap());
    println!("attention/saliency cosine (gamma=0.5 model): median {:.3}", cs5[cs5.len()/2]);

    // sample grid dump for visual inspection
    let _ = std::fs::create_dir_all("/tmp/exp-samples");
    for (gamma, model) in &models {
        for i in 0..6 {
            let gen = GenerationConfig { sample_steps: 24, seed: 100 + i, ..Default::default() };
            let out = sample(model, prompts[i as usize], &gen, None).unwrap();
            desigen::raster::save_rgb(&out.image, std::path::Path::new(&format!("/tmp/exp-samples/g{gamma}-{i}.png"))).unwrap();
        }
    }
    // real corpus sample for reference
    desigen::raster::save_rgb(&test[0].image, std::path::Path::new("/tmp/exp-samples/real0.png")).unwrap();
    println!("sample PNGs in /tmp/exp-samples; prompts[0] = {:?}", prompts[0]);
}
