//! Procedural banner corpus: records, style space, synthesis, filtering and
//! persistence.
//!
//! Every record carries a background raster, an analytically known saliency
//! map (the rendered union of the object alpha masks), a snapped layout and a
//! grammar-generated prompt. Corpus construction is rejection sampling
//! against [`FilterCriteria`].

mod filter;
pub mod prompt;
pub mod store;
pub mod style;
pub mod synth;

pub use filter::filter_record;
pub use prompt::{make_prompt, vocabulary};
pub use store::{build_corpus, load_corpus, read_record, write_record, CorpusManifest};
pub use style::{BgKind, ObjectStyle, RecordStyle, ShapeKind, Side, StyleSpace};
pub use synth::synth_record;

use crate::error::{DesigenError, Result};
use crate::raster::{Gray, Rgb};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementCategory {
    Text,
    Button,
    Image,
}

impl ElementCategory {
    pub const ALL: [ElementCategory; 3] =
        [ElementCategory::Text, ElementCategory::Button, ElementCategory::Image];

    pub fn as_str(&self) -> &'static str {
        match self {
            ElementCategory::Text => "text",
            ElementCategory::Button => "button",
            ElementCategory::Image => "image",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(ElementCategory::Text),
            "button" => Ok(ElementCategory::Button),
            "image" => Ok(ElementCategory::Image),
            other => Err(DesigenError::InvalidArgument(format!(
                "unknown element category {other:?} (expected text|button|image)"
            ))),
        }
    }
}

/// Typed bounding box in normalized coordinates (fractions of the canvas).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutElement {
    pub category: ElementCategory,
    pub left: f32,
    pub top: f32,
    pub width: f32,
    pub height: f32,
}

impl LayoutElement {
    pub fn new(category: ElementCategory, left: f32, top: f32, width: f32, height: f32) -> Self {
        LayoutElement { category, left, top, width, height }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.left >= 0.0
            && self.top >= 0.0
            && self.width > 0.0
            && self.height > 0.0
            && self.left + self.width <= 1.0 + 1e-6
            && self.top + self.height <= 1.0 + 1e-6;
        if ok {
            Ok(())
        } else {
            Err(DesigenError::InvalidArgument(format!(
                "element out of bounds: left={} top={} width={} height={}",
                self.left, self.top, self.width, self.height
            )))
        }
    }

    pub fn right(&self) -> f32 {
        self.left + self.width
    }

    pub fn bottom(&self) -> f32 {
        self.top + self.height
    }

    pub fn x_center(&self) -> f32 {
        self.left + self.width / 2.0
    }

    pub fn y_center(&self) -> f32 {
        self.top + self.height / 2.0
    }

    pub fn area(&self) -> f32 {
        self.width * self.height
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// One design sample: background raster, saliency map, layout, prompt.
#[derive(Clone, Debug)]
pub struct BannerRecord {
    pub image: Rgb,
    pub saliency: Gray,
    pub elements: Vec<LayoutElement>,
    pub prompt: String,
    pub split: Split,
}

impl BannerRecord {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.saliency.dim();
        if (self.image.shape()[1], self.image.shape()[2]) != (h, w) {
            return Err(DesigenError::InvalidArgument(
                "saliency dimensions must equal image dimensions".into(),
            ));
        }
        if self.prompt.trim().is_empty() {
            return Err(DesigenError::InvalidArgument("prompt must be non-empty".into()));
        }
        if self.saliency.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(DesigenError::InvalidArgument("saliency values must be in [0,1]".into()));
        }
        for e in &self.elements {
            e.validate()?;
        }
        Ok(())
    }
}

/// Rejection-sampling bounds from the dataset filtering protocol.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterCriteria {
    pub salient_ratio_min: f32,
    pub salient_ratio_max: f32,
    pub occlusion_max: f32,
}

impl Default for FilterCriteria {
    fn default() -> Self {
        FilterCriteria { salient_ratio_min: 0.05, salient_ratio_max: 0.30, occlusion_max: 0.30 }
    }
}

impl FilterCriteria {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 <= self.salient_ratio_min
            && self.salient_ratio_min < self.salient_ratio_max
            && self.salient_ratio_max <= 1.0
            && (0.0..=1.0).contains(&self.occlusion_max);
        if ok {
            Ok(())
        } else {
            Err(DesigenError::InvalidArgument(format!("bad filter criteria: {self:?}")))
        }
    }
}
