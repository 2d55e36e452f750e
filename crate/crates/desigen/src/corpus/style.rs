//! Style space the synthesizer samples from, and the realized per-record
//! style that the prompt grammar describes.

use serde::{Deserialize, Serialize};

/// Closed color palette; names are part of the prompt vocabulary.
pub const PALETTE: &[(&str, [f32; 3])] = &[
    ("red", [0.86, 0.15, 0.15]),
    ("orange", [0.95, 0.55, 0.10]),
    ("yellow", [0.95, 0.85, 0.20]),
    ("green", [0.18, 0.65, 0.25]),
    ("teal", [0.10, 0.62, 0.62]),
    ("blue", [0.16, 0.35, 0.80]),
    ("purple", [0.50, 0.25, 0.70]),
    ("pink", [0.93, 0.50, 0.70]),
    ("brown", [0.52, 0.35, 0.18]),
    ("black", [0.10, 0.10, 0.10]),
    ("white", [0.97, 0.97, 0.97]),
    ("gray", [0.60, 0.60, 0.60]),
];

pub fn color_rgb(idx: usize) -> [f32; 3] {
    PALETTE[idx].1
}

pub fn color_name(idx: usize) -> &'static str {
    PALETTE[idx].0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Circle,
    Rectangle,
    Triangle,
    Blob,
}

impl ShapeKind {
    pub fn word(&self) -> &'static str {
        match self {
            ShapeKind::Circle => "circle",
            ShapeKind::Rectangle => "rectangle",
            ShapeKind::Triangle => "triangle",
            ShapeKind::Blob => "blob",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BgKind {
    Flat,
    Gradient,
    Stripes,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
    Top,
    Bottom,
    Center,
}

impl Side {
    pub const ALL: [Side; 5] = [Side::Left, Side::Right, Side::Top, Side::Bottom, Side::Center];

    pub fn word(&self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
            Side::Top => "top",
            Side::Bottom => "bottom",
            Side::Center => "center",
        }
    }
}

/// One realized salient object.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectStyle {
    pub shape: ShapeKind,
    pub color: usize,
    pub side: Side,
}

/// Fully specified style of one record; [`super::make_prompt`] is a pure
/// function of this.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordStyle {
    pub objects: Vec<ObjectStyle>,
    pub bg: BgKind,
    pub bg_color: usize,
}

/// Ranges the record sampler draws from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StyleSpace {
    pub bg_kinds: Vec<BgKind>,
    pub shapes: Vec<ShapeKind>,
    pub object_count_min: usize,
    pub object_count_max: usize,
    pub element_count_min: usize,
    pub element_count_max: usize,
    /// Object radius as a fraction of min(H, W).
    pub object_scale_min: f32,
    pub object_scale_max: f32,
    /// Position/size grid for layout elements.
    pub grid_bins: usize,
}

impl Default for StyleSpace {
    fn default() -> Self {
        StyleSpace {
            bg_kinds: vec![BgKind::Flat, BgKind::Gradient, BgKind::Stripes],
            shapes: vec![ShapeKind::Circle, ShapeKind::Rectangle, ShapeKind::Triangle, ShapeKind::Blob],
            object_count_min: 1,
            object_count_max: 3,
            element_count_min: 1,
            element_count_max: 4,
            object_scale_min: 0.14,
            object_scale_max: 0.26,
            grid_bins: 32,
        }
    }
}

impl StyleSpace {
    /// A style space that can never produce any salient object; exists for
    /// the zero-object contract and infeasibility tests.
    pub fn background_only() -> Self {
        StyleSpace { object_count_min: 0, object_count_max: 0, ..Default::default() }
    }
}
