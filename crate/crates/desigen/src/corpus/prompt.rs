//! Closed prompt grammar:
//!
//! `<color> <shape> on the <side> [and ...] with <bg-phrase> background`
//!
//! where `<bg-phrase>` is `flat <color>`, `<color> gradient` or
//! `striped <color>`. Every emitted word belongs to [`vocabulary`].

use super::style::{color_name, BgKind, RecordStyle, PALETTE};
use std::collections::BTreeSet;

/// Deterministic prompt for a realized record style.
pub fn make_prompt(style: &RecordStyle) -> String {
    let mut parts: Vec<String> = Vec::new();
    for obj in &style.objects {
        parts.push(format!(
            "{} {} on the {}",
            color_name(obj.color),
            obj.shape.word(),
            obj.side.word()
        ));
    }
    let bg_color = color_name(style.bg_color);
    let bg_phrase = match style.bg {
        BgKind::Flat => format!("flat {bg_color}"),
        BgKind::Gradient => format!("{bg_color} gradient"),
        BgKind::Stripes => format!("striped {bg_color}"),
    };
    if parts.is_empty() {
        format!("{bg_phrase} background")
    } else {
        format!("{} with {bg_phrase} background", parts.join(" and "))
    }
}

/// The full closed vocabulary of the grammar (well under 200 words).
pub fn vocabulary() -> BTreeSet<String> {
    let mut v = BTreeSet::new();
    for (name, _) in PALETTE {
        v.insert((*name).to_string());
    }
    for w in ["circle", "rectangle", "triangle", "blob"] {
        v.insert(w.to_string());
    }
    for w in ["left", "right", "top", "bottom", "center"] {
        v.insert(w.to_string());
    }
    for w in ["on", "the", "and", "with", "flat", "gradient", "striped", "background"] {
        v.insert(w.to_string());
    }
    v
}
