//! Command-line entry point: `corpus`, `train`, `generate`, `layout`, `run`,
//! `eval` and `analyze` subcommands.
//!
//! Exit codes: 0 success, 1 usage/validation error, 2 runtime failure.

use crate::config::{artifact_root, load_config, RunConfig};
use crate::corpus::{self, ElementCategory};
use crate::diffusion::{self, DiffusionModel};
use crate::error::{DesigenError, Result};
use crate::layout::{self, LayoutModel};
use crate::metrics::{self, report::ReportMeta, MetricReport};
use crate::pipeline::{self, DeckPreset, PipelineContext, Template};
use crate::raster;
use crate::rng::derive_seed;
use crate::saliency::{self, RegionMask, SaliencyDetector};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "desigen",
    about = "Design template generation: saliency-aware backgrounds plus layouts",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build or inspect the synthetic banner corpus.
    Corpus {
        #[command(subcommand)]
        cmd: CorpusCmd,
    },
    /// Train one of the models.
    Train {
        #[command(subcommand)]
        cmd: TrainCmd,
    },
    /// Generate a background image from a prompt.
    Generate(GenerateArgs),
    /// Layout-model commands.
    Layout {
        #[command(subcommand)]
        cmd: LayoutCmd,
    },
    /// End-to-end template pipelines.
    Run {
        #[command(subcommand)]
        cmd: RunCmd,
    },
    /// Quantitative evaluation reports.
    Eval {
        #[command(subcommand)]
        cmd: EvalCmd,
    },
    /// Analysis tooling.
    Analyze {
        #[command(subcommand)]
        cmd: AnalyzeCmd,
    },
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Synthesize records until `n` pass the filter and persist them.
    Build {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print split sizes, metric means and the rejection rate.
    Stats {
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Subcommand)]
enum TrainCmd {
    /// Train the saliency detector on corpus analytic masks.
    Saliency {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the background diffusion model.
    Diffusion {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        gamma: Option<f32>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the layout generator.
    Layout {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the feature extractor used by FD-lite.
    Features {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    prompt: String,
    /// Path to an 8-bit grayscale mask PNG, or "none".
    #[arg(long, default_value = "none")]
    mask: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum LayoutCmd {
    /// Generate a layout for an existing background image.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Comma-separated element categories, e.g. "text,text,button".
        #[arg(long)]
        spec: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct PipelineArgs {
    #[arg(long = "diffusion-ckpt")]
    diffusion_ckpt: PathBuf,
    #[arg(long = "layout-ckpt")]
    layout_ckpt: PathBuf,
    #[arg(long)]
    prompt: String,
    /// Comma-separated element categories.
    #[arg(long, default_value = "text,button")]
    spec: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum RunCmd {
    /// Background + layout template generation.
    Generate {
        #[command(flatten)]
        args: PipelineArgs,
        /// Optional grayscale mask PNG for attention reduction.
        #[arg(long, default_value = "none")]
        mask: String,
    },
    /// Iterative background/layout refinement.
    Refine {
        #[command(flatten)]
        args: PipelineArgs,
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// Detector checkpoint for per-iteration salient-ratio/occlusion rows.
        #[arg(long = "detector-ckpt")]
        detector_ckpt: Option<PathBuf>,
    },
    /// Theme-consistent deck generation from mask presets.
    Deck {
        #[command(flatten)]
        args: PipelineArgs,
        /// JSON file with a list of presets (name, mask_rects, element_spec).
        #[arg(long)]
        presets: PathBuf,
    },
}

#[derive(Subcommand)]
enum EvalCmd {
    /// Salient-ratio (and optional FD-lite) report over generated backgrounds.
    Background {
        #[arg(long = "ckpt")]
        diffusion_ckpt: PathBuf,
        #[arg(long = "detector-ckpt")]
        detector_ckpt: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long)]
        report: PathBuf,
        #[arg(long = "fx-ckpt")]
        fx_ckpt: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Alignment/overlap/occlusion report for generated layouts.
    Layout {
        #[arg(long = "ckpt")]
        layout_ckpt: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum AnalyzeCmd {
    /// Attention/saliency cosine distribution over corpus images.
    Attention {
        #[arg(long = "ckpt")]
        diffusion_ckpt: PathBuf,
        #[arg(long = "detector-ckpt")]
        detector_ckpt: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 20)]
        invert_steps: usize,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Parses argv and runs; returns the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn parse_spec(spec: &str) -> Result<Vec<ElementCategory>> {
    spec.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(ElementCategory::parse)
        .collect()
}

fn load_mask(arg: &str) -> Result<Option<RegionMask>> {
    if arg == "none" || arg.is_empty() {
        return Ok(None);
    }
    let gray = raster::load_gray(Path::new(arg))?;
    Ok(Some(RegionMask::new(gray)?))
}

fn split_records<'a>(
    records: &'a [(String, corpus::BannerRecord)],
    split: corpus::Split,
) -> Vec<&'a corpus::BannerRecord> {
    records.iter().filter(|(_, r)| r.split == split).map(|(_, r)| r).collect()
}

fn load_models(
    diffusion_ckpt: &Path,
    layout_ckpt: &Path,
    cfg: &RunConfig,
) -> Result<(DiffusionModel, LayoutModel, String, String)> {
    let (diffusion, _) = diffusion::load_diffusion(diffusion_ckpt)?;
    let layout = layout::load_layout(layout_ckpt)?;
    let _ = cfg;
    Ok((
        diffusion,
        layout,
        diffusion::checkpoint_id(diffusion_ckpt)?,
        diffusion::checkpoint_id(layout_ckpt)?,
    ))
}

/// Draws 1-pixel element borders over a copy of the background
/// (text: blue, button: red, image: green).
fn composite_preview(background: &raster::Rgb, elements: &[corpus::LayoutElement]) -> raster::Rgb {
    let mut img = background.clone();
    let (h, w) = (raster::height(&img), raster::width(&img));
    for e in elements {
        let color = match e.category {
            ElementCategory::Text => [0.15, 0.3, 0.9f32],
            ElementCategory::Button => [0.9, 0.2, 0.2],
            ElementCategory::Image => [0.2, 0.8, 0.3],
        };
        let x0 = ((e.left * w as f32) as usize).min(w - 1);
        let x1 = ((e.right() * w as f32) as usize).clamp(x0 + 1, w) - 1;
        let y0 = ((e.top * h as f32) as usize).min(h - 1);
        let y1 = ((e.bottom() * h as f32) as usize).clamp(y0 + 1, h) - 1;
        for x in x0..=x1 {
            for y in [y0, y1] {
                for c in 0..3 {
                    img[[c, y, x]] = color[c];
                }
            }
        }
        for y in y0..=y1 {
            for x in [x0, x1] {
                for c in 0..3 {
                    img[[c, y, x]] = color[c];
                }
            }
        }
    }
    img
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| DesigenError::Internal(format!("json encode: {e}")))?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| DesigenError::io(path.display().to_string(), e))
}

/// Writes PNG + layout JSON + provenance JSON (+ composite preview).
fn write_template(template: &Template, cfg: &RunConfig, dir: &Path, name: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| DesigenError::io(dir.display().to_string(), e))?;
    raster::save_rgb(&template.background, &dir.join(format!("{name}.png")))?;
    let layout_json = serde_json::json!({ "elements": template.elements });
    write_json(&layout_json, &dir.join(format!("{name}.layout.json")))?;
    let prov = serde_json::json!({
        "provenance": template.provenance,
        "effective_config": cfg,
    });
    write_json(&prov, &dir.join(format!("{name}.provenance.json")))?;
    raster::save_rgb(
        &composite_preview(&template.background, &template.elements),
        &dir.join(format!("{name}.preview.png")),
    )
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Corpus { cmd } => match cmd {
            CorpusCmd::Build { n, out, seed, config } => {
                let mut cfg = load_config(config.as_deref())?;
                cfg.corpus.n = n;
                cfg.corpus.seed = seed;
                let manifest = corpus::build_corpus(
                    &out,
                    cfg.corpus.n,
                    &cfg.corpus.criteria,
                    cfg.corpus.split_fracs,
                    cfg.corpus.seed,
                    (cfg.corpus.canvas_h, cfg.corpus.canvas_w),
                    &cfg.corpus.style,
                )?;
                println!(
                    "built corpus: {} records at {}x{}, rejection rate {:.1}%, checksum {}",
                    manifest.n,
                    manifest.canvas.h,
                    manifest.canvas.w,
                    manifest.rejection.rejection_rate() * 100.0,
                    &manifest.corpus_checksum[..16]
                );
                Ok(())
            }
            CorpusCmd::Stats { dir } => {
                let stats = corpus::store::corpus_stats(&dir)?;
                println!("records: {}", stats.n);
                for (split, count) in &stats.split_counts {
                    println!("  {split}: {count}");
                }
                println!("mean salient ratio: {:.4}", stats.mean_salient_ratio);
                println!("mean occlusion (x100): {:.2}", stats.mean_occlusion);
                println!("mean elements: {:.2}", stats.mean_elements);
                println!("rejection rate: {:.1}%", stats.rejection_rate * 100.0);
                Ok(())
            }
        },
        Command::Train { cmd } => match cmd {
            TrainCmd::Saliency { corpus: dir, out, config } => {
                let cfg = load_config(config.as_deref())?;
                let (_, records) = corpus::load_corpus(&dir)?;
                let train = split_records(&records, corpus::Split::Train);
                let val = split_records(&records, corpus::Split::Val);
                let mut trained =
                    saliency::train_detector(&train, &val, cfg.saliency.detector, &cfg.saliency.train)?;
                saliency::detector::save_detector(&mut trained, &out)?;
                println!("saliency detector trained: val IoU {:.4} -> {}", trained.val_iou, out.display());
                Ok(())
            }
            TrainCmd::Diffusion { corpus: dir, out, gamma, steps, seed, config } => {
                let mut cfg = load_config(config.as_deref())?;
                if let Some(g) = gamma {
                    cfg.diffusion.train.gamma = g;
                }
                if let Some(s) = steps {
                    cfg.diffusion.train.steps = s;
                }
                if let Some(s) = seed {
                    cfg.diffusion.train.seed = s;
                }
                let (_, records) = corpus::load_corpus(&dir)?;
                let train = split_records(&records, corpus::Split::Train);
                let (mut model, _, stats) =
                    diffusion::train_diffusion(&train, &cfg.diffusion.unet, &cfg.diffusion.train)?;
                diffusion::save_diffusion(
                    &mut model,
                    cfg.diffusion.train.gamma,
                    cfg.diffusion.train.steps,
                    cfg.diffusion.train.seed,
                    &out,
                )?;
                let last = stats.last().expect("at least one step");
                println!(
                    "diffusion trained ({} steps, gamma {}): l_d {:.5} l_total {:.5} -> {}",
                    stats.len(),
                    cfg.diffusion.train.gamma,
                    last.l_d,
                    last.l_total,
                    out.display()
                );
                Ok(())
            }
            TrainCmd::Layout { corpus: dir, out, config } => {
                let cfg = load_config(config.as_deref())?;
                let (_, records) = corpus::load_corpus(&dir)?;
                let train = split_records(&records, corpus::Split::Train);
                let (mut model, losses) = layout::train_layout(&train, &cfg.layout.model, &cfg.layout.train)?;
                layout::save_layout(&mut model, cfg.layout.train.seed, &out)?;
                println!(
                    "layout model trained: final CE {:.4} -> {}",
                    losses.last().unwrap(),
                    out.display()
                );
                Ok(())
            }
            TrainCmd::Features { corpus: dir, out, config } => {
                let cfg = load_config(config.as_deref())?;
                let (_, records) = corpus::load_corpus(&dir)?;
                let train = split_records(&records, corpus::Split::Train);
                let images: Vec<raster::Rgb> = train.iter().map(|r| r.image.clone()).collect();
                let mut fx = metrics::train_feature_extractor(&images, cfg.features, 8, 16, 1e-3, 0)?;
                crate::nn::ckpt::save(&mut fx, &cfg.features, &out)?;
                println!("feature extractor trained -> {}", out.display());
                Ok(())
            }
        },
        Command::Generate(args) => {
            let cfg = load_config(args.config.as_deref())?;
            let (model, _) = diffusion::load_diffusion(&args.ckpt)?;
            let mut gen = cfg.generation.clone();
            gen.seed = args.seed;
            if let Some(s) = args.steps {
                gen.sample_steps = s;
            }
            let mask = load_mask(&args.mask)?;
            let out = diffusion::sample(&model, &args.prompt, &gen, mask.as_ref())?;
            raster::save_rgb(&out.image, &args.out)?;
            println!("wrote {}", args.out.display());
            Ok(())
        }
        Command::Layout { cmd } => match cmd {
            LayoutCmd::Generate { ckpt, image, spec, seed, out, config } => {
                let cfg = load_config(config.as_deref())?;
                let model = layout::load_layout(&ckpt)?;
                let img = raster::load_rgb(&image)?;
                let spec = parse_spec(&spec)?;
                let mut decode = cfg.decode;
                decode.seed = seed;
                let elements = layout::generate_layout(&model, &img, &spec, &decode)?;
                let json = serde_json::json!({ "elements": elements });
                write_json(&json, &out)?;
                println!("wrote {}", out.display());
                Ok(())
            }
        },
        Command::Run { cmd } => {
            let (args, mode) = match &cmd {
                RunCmd::Generate { args, .. } => (args.clone(), "generate"),
                RunCmd::Refine { args, .. } => (args.clone(), "refine"),
                RunCmd::Deck { args, .. } => (args.clone(), "deck"),
            };
            let cfg = load_config(args.config.as_deref())?;
            let (diffusion_model, layout_model, did, lid) =
                load_models(&args.diffusion_ckpt, &args.layout_ckpt, &cfg)?;
            let ctx = PipelineContext {
                diffusion: &diffusion_model,
                layout: &layout_model,
                generation: cfg.generation.clone(),
                decode: cfg.decode,
                diffusion_id: did,
                layout_id: lid,
            };
            let out_dir = args
                .out
                .clone()
                .unwrap_or_else(|| artifact_root().join(format!("{mode}-{}", args.seed)));
            match cmd {
                RunCmd::Generate { mask, .. } => {
                    let spec = parse_spec(&args.spec)?;
                    let user_mask = load_mask(&mask)?;
                    let t = pipeline::generate_template(
                        &ctx,
                        &args.prompt,
                        &spec,
                        user_mask.as_ref(),
                        args.seed,
                    )?;
                    write_template(&t, &cfg, &out_dir, "template")?;
                    println!("wrote template to {}", out_dir.display());
                    Ok(())
                }
                RunCmd::Refine { k, detector_ckpt, .. } => {
                    let spec = parse_spec(&args.spec)?;
                    let t = pipeline::generate_template(&ctx, &args.prompt, &spec, None, args.seed)?;
                    write_template(&t, &cfg, &out_dir, "iter0")?;
                    let rc = pipeline::RefineConfig {
                        iterations: k,
                        invert_steps: cfg.refine.invert_steps,
                    };
                    let outcome = pipeline::refine(&ctx, &t, &rc)?;
                    for tmpl in &outcome.trajectory {
                        write_template(
                            tmpl,
                            &cfg,
                            &out_dir,
                            &format!("iter{}", tmpl.provenance.iteration),
                        )?;
                    }
                    // per-iteration metric rows when a detector is available
                    if let Some(dp) = detector_ckpt {
                        let (detector, _) = saliency::detector::load_detector(&dp)?;
                        let mut rows = Vec::new();
                        for tmpl in std::iter::once(&t).chain(outcome.trajectory.iter()) {
                            let sal = detector.detect(&tmpl.background)?;
                            rows.push(metrics::report::IterationRow {
                                iteration: tmpl.provenance.iteration,
                                salient_ratio: metrics::salient_ratio(&sal) * 100.0,
                                occlusion: metrics::occlusion(&tmpl.elements, &sal),
                            });
                        }
                        let mut rep = MetricReport::new(ReportMeta {
                            corpus_id: String::new(),
                            checkpoint_id: ctx.diffusion_id.clone(),
                            seed: args.seed,
                        });
                        rep.iterations = Some(rows);
                        metrics::emit_report(&rep, &out_dir)?;
                    }
                    if let Some(e) = &outcome.error {
                        eprintln!("warning: {e}");
                    }
                    println!(
                        "wrote {} refinement iterations to {}",
                        outcome.trajectory.len(),
                        out_dir.display()
                    );
                    Ok(())
                }
                RunCmd::Deck { presets, .. } => {
                    let text = std::fs::read_to_string(&presets)
                        .map_err(|e| DesigenError::io(presets.display().to_string(), e))?;
                    let presets: Vec<DeckPreset> = serde_json::from_str(&text).map_err(|e| {
                        DesigenError::SchemaViolation {
                            path: "presets".into(),
                            detail: e.to_string(),
                        }
                    })?;
                    let deck = pipeline::generate_deck(&ctx, &args.prompt, &presets, args.seed)?;
                    for (t, preset) in deck.iter().zip(presets.iter()) {
                        write_template(t, &cfg, &out_dir, &format!("slide-{}", preset.name))?;
                    }
                    println!("wrote {} slides to {}", deck.len(), out_dir.display());
                    Ok(())
                }
            }
        }
        Command::Eval { cmd } => match cmd {
            EvalCmd::Background {
                diffusion_ckpt,
                detector_ckpt,
                corpus: dir,
                n,
                report,
                fx_ckpt,
                seed,
                config,
            } => {
                let _cfg = load_config(config.as_deref())?;
                let (model, _) = diffusion::load_diffusion(&diffusion_ckpt)?;
                let (detector, _) = saliency::detector::load_detector(&detector_ckpt)?;
                let (_, records) = corpus::load_corpus(&dir)?;
                let test = split_records(&records, corpus::Split::Test);
                if test.is_empty() {
                    return Err(DesigenError::InvalidArgument("corpus has no test split".into()));
                }
                let rep = eval_background_report(
                    &model,
                    &detector,
                    &test,
                    n,
                    seed,
                    fx_ckpt.as_deref(),
                    &diffusion::checkpoint_id(&diffusion_ckpt)?,
                )?;
                metrics::emit_report(&rep, &report)?;
                println!(
                    "mean salient ratio (x100): {:.2} over {n} samples -> {}",
                    rep.metrics["salient_ratio"].mean,
                    report.display()
                );
                Ok(())
            }
            EvalCmd::Layout { layout_ckpt, corpus: dir, report, seed, config } => {
                let cfg = load_config(config.as_deref())?;
                let model = layout::load_layout(&layout_ckpt)?;
                let (_, records) = corpus::load_corpus(&dir)?;
                let test = split_records(&records, corpus::Split::Test);
                let rep = eval_layout_report(&model, &test, cfg.decode, seed)?;
                metrics::emit_report(&rep, &report)?;
                println!(
                    "alignment {:.3}  overlap {:.3}  occlusion {:.3} -> {}",
                    rep.metrics["alignment"].mean,
                    rep.metrics["overlap"].mean,
                    rep.metrics["occlusion"].mean,
                    report.display()
                );
                Ok(())
            }
        },
        Command::Analyze { cmd } => match cmd {
            AnalyzeCmd::Attention {
                diffusion_ckpt,
                detector_ckpt,
                corpus: dir,
                n,
                report,
                invert_steps,
                config,
            } => {
                let cfg = load_config(config.as_deref())?;
                let (model, _) = diffusion::load_diffusion(&diffusion_ckpt)?;
                let (detector, _) = saliency::detector::load_detector(&detector_ckpt)?;
                let (_, records) = corpus::load_corpus(&dir)?;
                let images: Vec<(raster::Rgb, String)> = records
                    .iter()
                    .take(n)
                    .map(|(_, r)| (r.image.clone(), r.prompt.clone()))
                    .collect();
                let outcomes = metrics::attention_saliency_similarity(
                    &model,
                    &images,
                    &detector,
                    invert_steps,
                    &cfg.generation,
                );
                let mut cosines = Vec::new();
                let mut failures = 0usize;
                for o in &outcomes {
                    match o {
                        metrics::AttnSimOutcome::Cosine(c) => cosines.push(*c),
                        metrics::AttnSimOutcome::Failed(_) => failures += 1,
                    }
                }
                let (edges, counts) = metrics::stats::histogram(&cosines, -1.0, 1.0, 20);
                let median = metrics::stats::median(&cosines);
                let mut rep = MetricReport::new(ReportMeta {
                    corpus_id: dir.display().to_string(),
                    checkpoint_id: diffusion::checkpoint_id(&diffusion_ckpt)?,
                    seed: 0,
                });
                rep.insert("attention_saliency_cosine", cosines);
                rep.cosine_hist = Some(metrics::report::HistogramData { edges, counts, median });
                metrics::emit_report(&rep, &report)?;
                println!(
                    "median cosine {median:.3} over {} images ({failures} failures) -> {}",
                    outcomes.len(),
                    report.display()
                );
                Ok(())
            }
        },
    }
}

/// Salient-ratio (x100) over generated backgrounds, prompts cycled from the
/// test split; optional FD-lite against the test images.
pub fn eval_background_report(
    model: &DiffusionModel,
    detector: &SaliencyDetector,
    test: &[&corpus::BannerRecord],
    n: usize,
    seed: u64,
    fx_ckpt: Option<&Path>,
    ckpt_id: &str,
) -> Result<MetricReport> {
    use rayon::prelude::*;
    let gen = crate::diffusion::GenerationConfig::default();
    let ratios: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let rec = test[i % test.len()];
            let mut g = gen.clone();
            g.seed = derive_seed(seed, "eval-bg", i as u64);
            let out = diffusion::sample(model, &rec.prompt, &g, None)?;
            let sal = detector.detect(&out.image)?;
            Ok(metrics::salient_ratio(&sal) * 100.0)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rep = MetricReport::new(ReportMeta {
        corpus_id: String::new(),
        checkpoint_id: ckpt_id.to_string(),
        seed,
    });
    rep.insert("salient_ratio", ratios);
    if let Some(fx_path) = fx_ckpt {
        let fx_cfg: crate::metrics::FxConfig = crate::nn::ckpt::load_header(fx_path)?;
        let mut rng = crate::rng::derived_rng(0, "fx-load", 0);
        let mut fx = metrics::FeatureExtractor::new(&mut rng, fx_cfg);
        crate::nn::ckpt::load_into(&mut fx, fx_path)?;
        let gen_embeds: Vec<Vec<f64>> = (0..n.min(64))
            .into_par_iter()
            .map(|i| {
                let rec = test[i % test.len()];
                let mut g = gen.clone();
                g.seed = derive_seed(seed, "eval-bg", i as u64);
                let out = diffusion::sample(model, &rec.prompt, &g, None)?;
                Ok(fx.embed(&out.image).iter().map(|v| *v as f64).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        let test_embeds: Vec<Vec<f64>> =
            test.iter().map(|r| fx.embed(&r.image).iter().map(|v| *v as f64).collect()).collect();
        let a = vecs_to_array(&gen_embeds);
        let b = vecs_to_array(&test_embeds);
        let fd = metrics::fd_lite(&a, &b)?;
        rep.insert("fd_lite", vec![fd]);
    }
    Ok(rep)
}

fn vecs_to_array(v: &[Vec<f64>]) -> ndarray::Array2<f64> {
    let rows = v.len();
    let cols = v.first().map(|r| r.len()).unwrap_or(0);
    let mut arr = ndarray::Array2::zeros((rows, cols));
    for (i, row) in v.iter().enumerate() {
        for (j, val) in row.iter().enumerate() {
            arr[[i, j]] = *val;
        }
    }
    arr
}

/// Layout metrics over generated layouts on test backgrounds, with the real
/// test-split values included for comparison.
pub fn eval_layout_report(
    model: &LayoutModel,
    test: &[&corpus::BannerRecord],
    decode: layout::DecodeConfig,
    seed: u64,
) -> Result<MetricReport> {
    use rayon::prelude::*;
    let results: Vec<(f64, f64, f64)> = test
        .par_iter()
        .enumerate()
        .map(|(i, rec)| {
            let spec: Vec<ElementCategory> = rec.elements.iter().map(|e| e.category).collect();
            let mut d = decode;
            d.seed = derive_seed(seed, "eval-layout", i as u64);
            let elements = layout::generate_layout(model, &rec.image, &spec, &d)?;
            Ok((
                metrics::alignment(&elements),
                metrics::overlap(&elements),
                metrics::occlusion(&elements, &rec.saliency),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rep = MetricReport::new(ReportMeta { corpus_id: String::new(), checkpoint_id: String::new(), seed });
    rep.insert("alignment", results.iter().map(|r| r.0).collect());
    rep.insert("overlap", results.iter().map(|r| r.1).collect());
    rep.insert("occlusion", results.iter().map(|r| r.2).collect());
    rep.insert(
        "real_alignment",
        test.iter().map(|r| metrics::alignment(&r.elements)).collect(),
    );
    rep.insert("real_overlap", test.iter().map(|r| metrics::overlap(&r.elements)).collect());
    rep.insert(
        "real_occlusion",
        test.iter().map(|r| metrics::occlusion(&r.elements, &r.saliency)).collect(),
    );
    Ok(rep)
}
