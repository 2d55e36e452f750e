//! Run configuration: defaults <- config file <- command-line overrides.
//!
//! The file format is TOML with one section per subsystem. Unknown keys and
//! type mismatches are rejected with the offending key named. The effective
//! configuration is echoed into every provenance output.

use crate::corpus::{FilterCriteria, StyleSpace};
use crate::diffusion::{DiffusionTrainConfig, GenerationConfig, UNetConfig};
use crate::error::{DesigenError, Result};
use crate::layout::{DecodeConfig, LayoutModelConfig, LayoutTrainConfig};
use crate::metrics::FxConfig;
use crate::pipeline::RefineConfig;
use crate::saliency::{DetectorConfig, DetectorTrainConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const DESIGEN_HOME_ENV: &str = "DESIGEN_HOME";

/// Default artifact root: `$DESIGEN_HOME` or `./desigen-artifacts`.
pub fn artifact_root() -> PathBuf {
    std::env::var_os(DESIGEN_HOME_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("desigen-artifacts"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub n: usize,
    pub canvas_h: usize,
    pub canvas_w: usize,
    pub seed: u64,
    pub split_fracs: [f64; 3],
    pub criteria: FilterCriteria,
    pub style: StyleSpace,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n: 2000,
            canvas_h: 64,
            canvas_w: 64,
            seed: 0,
            split_fracs: [0.8, 0.1, 0.1],
            criteria: FilterCriteria::default(),
            style: StyleSpace::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionSection {
    pub unet: UNetConfig,
    pub train: DiffusionTrainConfig,
}

impl Default for DiffusionSection {
    fn default() -> Self {
        DiffusionSection { unet: UNetConfig::for_res(64), train: DiffusionTrainConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaliencySection {
    pub detector: DetectorConfig,
    pub train: DetectorTrainConfig,
}

impl Default for SaliencySection {
    fn default() -> Self {
        SaliencySection { detector: DetectorConfig::default(), train: DetectorTrainConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LayoutSection {
    pub model: LayoutModelConfig,
    pub train: LayoutTrainConfig,
}

impl Default for LayoutSection {
    fn default() -> Self {
        LayoutSection { model: LayoutModelConfig::for_res(64), train: LayoutTrainConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub diffusion: DiffusionSection,
    pub saliency: SaliencySection,
    pub layout: LayoutSection,
    pub generation: GenerationConfig,
    pub decode: DecodeConfig,
    pub refine: RefineConfig,
    pub features: FxConfig,
}

impl RunConfig {
    /// Consistency checks across sections (resolutions must agree).
    pub fn validate(&self) -> Result<()> {
        let canvas = (self.corpus.canvas_h, self.corpus.canvas_w);
        if canvas.0 != canvas.1 {
            return Err(DesigenError::Config(
                "corpus.canvas_h must equal corpus.canvas_w (square canvases only)".into(),
            ));
        }
        if self.diffusion.unet.res != canvas.0 {
            return Err(DesigenError::Config(format!(
                "diffusion.unet.res ({}) must match corpus canvas ({})",
                self.diffusion.unet.res, canvas.0
            )));
        }
        self.diffusion.unet.validate().map_err(|e| DesigenError::Config(e.to_string()))?;
        self.generation.validate().map_err(|e| DesigenError::Config(e.to_string()))?;
        self.refine.validate().map_err(|e| DesigenError::Config(e.to_string()))?;
        self.corpus.criteria.validate().map_err(|e| DesigenError::Config(e.to_string()))?;
        let frac_sum: f64 = self.corpus.split_fracs.iter().sum();
        if (frac_sum - 1.0).abs() > 1e-6 {
            return Err(DesigenError::Config("corpus.split_fracs must sum to 1".into()));
        }
        Ok(())
    }

    /// A configuration sized for 32x32 experiments.
    pub fn desk32() -> Self {
        let mut cfg = RunConfig::default();
        cfg.corpus.canvas_h = 32;
        cfg.corpus.canvas_w = 32;
        cfg.diffusion.unet = UNetConfig::for_res(32);
        cfg.saliency.detector = DetectorConfig { res: 32, base: 16 };
        cfg.layout.model = LayoutModelConfig { res: 32, ..LayoutModelConfig::for_res(32) };
        cfg.features = FxConfig { res: 32, ..FxConfig::default() };
        cfg
    }
}

fn merge_toml(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_toml(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Loads a config file over the defaults. Unknown keys and type mismatches
/// are errors naming the key.
pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let cfg = match path {
        None => RunConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| DesigenError::io(p.display().to_string(), e))?;
            let overlay: toml::Value = text
                .parse()
                .map_err(|e| DesigenError::Config(format!("{}: {e}", p.display())))?;
            let mut base = toml::Value::try_from(RunConfig::default())
                .map_err(|e| DesigenError::Internal(format!("default config serialization: {e}")))?;
            merge_toml(&mut base, overlay);
            base.try_into::<RunConfig>()
                .map_err(|e| DesigenError::Config(format!("{}: {e}", p.display())))?
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cfg.toml");
        std::fs::write(&p, "").unwrap();
        let cfg = load_config(Some(&p)).unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn file_overrides_defaults_and_cli_wins() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cfg.toml");
        std::fs::write(&p, "[generation]\ngamma = 0.25\n").unwrap();
        let mut cfg = load_config(Some(&p)).unwrap();
        assert_eq!(cfg.generation.gamma, 0.25);
        // command line applies after the file
        cfg.generation.gamma = 0.5;
        assert_eq!(cfg.generation.gamma, 0.5);
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cfg.toml");
        std::fs::write(&p, "[generation]\ngamm = 0.25\n").unwrap();
        match load_config(Some(&p)) {
            Err(DesigenError::Config(msg)) => assert!(msg.contains("gamm"), "message: {msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn type_mismatch_is_rejected_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cfg.toml");
        std::fs::write(&p, "[corpus]\nn = \"many\"\n").unwrap();
        match load_config(Some(&p)) {
            Err(DesigenError::Config(msg)) => {
                assert!(msg.contains('n') && msg.to_lowercase().contains("string"), "message: {msg}")
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn cross_section_validation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cfg.toml");
        std::fs::write(&p, "[corpus]\ncanvas_h = 32\ncanvas_w = 32\n").unwrap();
        // unet still at 64 -> mismatch
        assert!(matches!(load_config(Some(&p)), Err(DesigenError::Config(_))));
        assert!(RunConfig::desk32().validate().is_ok());
    }
}
