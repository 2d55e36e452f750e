//! Shared artifacts for the acceptance suite: one frozen corpus plus trained
//! detector, feature extractor, layout model and six diffusion models
//! (three training seeds x {gamma 0, gamma 0.5}).
//!
//! Artifacts are cached under `CARGO_TARGET_TMPDIR`, keyed by a hash of the
//! full build recipe, so reruns skip training. Everything is deterministic;
//! a cold rebuild reproduces the same artifacts bit for bit.

use desigen::corpus::{self, BannerRecord, FilterCriteria, Split, StyleSpace};
use desigen::diffusion::{
    self, ConstraintMask, DiffusionModel, DiffusionTrainConfig, ScheduleKind, UNetConfig,
};
use desigen::layout::{self, LayoutModel, LayoutModelConfig, LayoutTrainConfig};
use desigen::metrics::{self, FeatureExtractor, FxConfig};
use desigen::saliency::{DetectorConfig, DetectorTrainConfig, SaliencyDetector};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::OnceLock;

pub const RES: usize = 32;
pub const CORPUS_N: usize = 2000;
pub const CORPUS_SEED: u64 = 1000;
pub const TRAIN_SEEDS: [u64; 3] = [1, 2, 3];
pub const GAMMA: f32 = 0.5;
/// Sampling steps used by the bulk criteria (criterion 9 pins 50 itself).
pub const SAMPLE_STEPS: usize = 24;

pub fn diffusion_train_cfg(seed: u64, gamma: f32) -> DiffusionTrainConfig {
    DiffusionTrainConfig {
        steps: 4000,
        batch_size: 8,
        lr: 2e-4,
        warmup_steps: 50,
        weight_decay: 0.0,
        grad_clip: 1.0,
        gamma,
        constraint_mask: ConstraintMask::Saliency,
        schedule_kind: ScheduleKind::Linear,
        schedule_t: 1000,
        cond_dropout: 0.1,
        seed,
        quiet: true,
    }
}

pub fn unet_cfg() -> UNetConfig {
    UNetConfig {
        res: RES,
        channels: vec![16, 32, 64],
        attn: vec![false, true, true],
        t_dim: 96,
        txt_dim: 64,
        heads: 2,
        text_layers: 2,
    }
}

pub fn layout_cfg() -> LayoutModelConfig {
    LayoutModelConfig {
        res: RES,
        d_model: 128,
        layers: 3,
        heads: 4,
        enc_base: 32,
        vocab: Default::default(),
    }
}

pub fn detector_cfg() -> DetectorConfig {
    DetectorConfig { res: RES, base: 16 }
}

pub fn fx_cfg() -> FxConfig {
    FxConfig { res: RES, dim: 64, base: 16 }
}

fn recipe_hash() -> String {
    // every artifact-affecting knob must appear here
    let recipe = serde_json::json!({
        "version": 3,
        "res": RES,
        "corpus": { "n": CORPUS_N, "seed": CORPUS_SEED, "criteria": FilterCriteria::default(),
                     "style": StyleSpace::default(), "splits": [0.8, 0.1, 0.1] },
        "unet": unet_cfg(),
        "diffusion_train": diffusion_train_cfg(0, GAMMA),
        "seeds": TRAIN_SEEDS,
        "layout": layout_cfg(),
        "layout_train": LayoutTrainConfig { epochs: 15, batch_size: 16, lr: 3e-4, grad_clip: 1.0, seed: 0, quiet: true },
        "detector": detector_cfg(),
        "detector_train": DetectorTrainConfig { epochs: 20, batch_size: 16, lr: 2e-3, seed: 0 },
        "fx_epochs": 6,
    });
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&recipe).unwrap());
    hex::encode(&h.finalize()[..8])
}

pub struct Artifacts {
    pub dir: PathBuf,
    pub records: Vec<(String, BannerRecord)>,
    pub detector: SaliencyDetector,
    pub detector_val_iou: f64,
    pub fx: FeatureExtractor,
    pub layout: LayoutModel,
    /// (train seed, gamma on) -> model
    pub diffusion: BTreeMap<(u64, bool), DiffusionModel>,
}

impl Artifacts {
    pub fn split(&self, split: Split) -> Vec<&BannerRecord> {
        self.records.iter().filter(|(_, r)| r.split == split).map(|(_, r)| r).collect()
    }

    pub fn model(&self, seed: u64, gamma_on: bool) -> &DiffusionModel {
        &self.diffusion[&(seed, gamma_on)]
    }
}

static ARTIFACTS: OnceLock<Artifacts> = OnceLock::new();

pub fn artifacts() -> &'static Artifacts {
    ARTIFACTS.get_or_init(build_artifacts)
}

fn build_artifacts() -> Artifacts {
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(format!("acceptance-{}", recipe_hash()));
    std::fs::create_dir_all(&root).expect("create acceptance cache dir");
    eprintln!("[acceptance] artifacts at {}", root.display());

    let corpus_dir = root.join("corpus");
    if !corpus_dir.join("manifest.json").exists() {
        eprintln!("[acceptance] building {CORPUS_N}-record corpus...");
        corpus::build_corpus(
            &corpus_dir,
            CORPUS_N,
            &FilterCriteria::default(),
            [0.8, 0.1, 0.1],
            CORPUS_SEED,
            (RES, RES),
            &StyleSpace::default(),
        )
        .expect("corpus build");
    }
    let (_, records) = corpus::load_corpus(&corpus_dir).expect("corpus load");
    let train: Vec<&BannerRecord> =
        records.iter().filter(|(_, r)| r.split == Split::Train).map(|(_, r)| r).collect();
    let val: Vec<&BannerRecord> =
        records.iter().filter(|(_, r)| r.split == Split::Val).map(|(_, r)| r).collect();

    let det_path = root.join("detector.ckpt");
    let (detector, detector_val_iou) = if det_path.exists() {
        desigen::saliency::detector::load_detector(&det_path).expect("load detector")
    } else {
        eprintln!("[acceptance] training saliency detector...");
        let tc = DetectorTrainConfig { epochs: 20, batch_size: 16, lr: 2e-3, seed: 0 };
        let mut trained =
            desigen::saliency::train_detector(&train, &val, detector_cfg(), &tc).expect("train detector");
        desigen::saliency::detector::save_detector(&mut trained, &det_path).expect("save detector");
        (trained.detector, trained.val_iou)
    };

    let fx_path = root.join("fx.ckpt");
    let fx = if fx_path.exists() {
        let cfg: FxConfig = desigen::nn::ckpt::load_header(&fx_path).expect("fx header");
        let mut rng = desigen::rng::derived_rng(0, "fx-init", 0);
        let mut fx = FeatureExtractor::new(&mut rng, cfg);
        desigen::nn::ckpt::load_into(&mut fx, &fx_path).expect("fx load");
        fx
    } else {
        eprintln!("[acceptance] training feature extractor...");
        let images: Vec<desigen::raster::Rgb> = train.iter().map(|r| r.image.clone()).collect();
        let mut fx = metrics::train_feature_extractor(&images, fx_cfg(), 6, 16, 1e-3, 0).expect("train fx");
        desigen::nn::ckpt::save(&mut fx, &fx_cfg(), &fx_path).expect("save fx");
        fx
    };

    let layout_path = root.join("layout.ckpt");
    let layout_model = if layout_path.exists() {
        layout::load_layout(&layout_path).expect("load layout")
    } else {
        eprintln!("[acceptance] training layout model...");
        let tc = LayoutTrainConfig { epochs: 15, batch_size: 16, lr: 3e-4, grad_clip: 1.0, seed: 0, quiet: true };
        let (mut model, _) = layout::train_layout(&train, &layout_cfg(), &tc).expect("train layout");
        layout::save_layout(&mut model, 0, &layout_path).expect("save layout");
        model
    };

    let mut diffusion_models = BTreeMap::new();
    for seed in TRAIN_SEEDS {
        for gamma_on in [false, true] {
            let gamma = if gamma_on { GAMMA } else { 0.0 };
            let path = root.join(format!("diffusion-s{seed}-g{gamma}.ckpt"));
            let model = if path.exists() {
                diffusion::load_diffusion(&path).expect("load diffusion").0
            } else {
                eprintln!("[acceptance] training diffusion seed={seed} gamma={gamma}...");
                let tc = diffusion_train_cfg(seed, gamma);
                let (mut m, _, _) = diffusion::train_diffusion(&train, &unet_cfg(), &tc).expect("train diffusion");
                diffusion::save_diffusion(&mut m, gamma, tc.steps, seed, &path).expect("save diffusion");
                m
            };
            diffusion_models.insert((seed, gamma_on), model);
        }
    }

    Artifacts {
        dir: root,
        records,
        detector,
        detector_val_iou,
        fx,
        layout: layout_model,
        diffusion: diffusion_models,
    }
}

/// Prints the per-criterion verdict line and panics on failure.
pub fn criterion(n: usize, name: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {n:>2} [{verdict}] {name}: {detail}");
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}

pub fn mean(xs: &[f64]) -> f64 {
    metrics::stats::mean(xs)
}
