//! Template-based referring expression generation.
//!
//! Expressions are built from a closed word bank and are guaranteed to
//! uniquely resolve their target: a candidate attribute set is only
//! emitted when exactly one instance in the scene satisfies it. The
//! attribute semantics are deliberately simple and machine-checkable so
//! an exhaustive matcher can re-derive the target from the text.

use super::scene::{region_index, Scene, COLOR_NAMES, REGION_NAMES};
use crate::error::{Error, Result};
use crate::lingdecomp::{CANONICAL_CATEGORIES, MASK_TOKEN, UNKNOWN_CATEGORY_TOKEN};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Closed phrase bank used for generation; its word set defines the text
/// encoder vocabulary.
#[derive(Clone, Debug)]
pub struct TemplateBank {
    pub colors: Vec<String>,
    pub regions: Vec<String>,
    pub size_words: [String; 2],
    pub extremal_words: [String; 4],
}

impl Default for TemplateBank {
    fn default() -> Self {
        Self {
            colors: COLOR_NAMES.iter().map(|s| s.to_string()).collect(),
            regions: REGION_NAMES.iter().map(|s| s.to_string()).collect(),
            size_words: ["small".into(), "large".into()],
            extremal_words: [
                "leftmost".into(),
                "rightmost".into(),
                "topmost".into(),
                "bottommost".into(),
            ],
        }
    }
}

impl TemplateBank {
    /// Every word the generator can emit, plus the mask and
    /// unknown-category tokens; sorted and deduplicated.
    pub fn vocabulary(&self) -> Vec<String> {
        let mut words: Vec<String> = vec![
            "the".into(),
            "in".into(),
            "of".into(),
            "image".into(),
            "next".into(),
            "to".into(),
            "one".into(),
            MASK_TOKEN.into(),
            UNKNOWN_CATEGORY_TOKEN.into(),
        ];
        words.extend(self.colors.iter().cloned());
        for region in &self.regions {
            words.extend(region.split_whitespace().map(|w| w.to_string()));
        }
        words.extend(self.size_words.iter().cloned());
        words.extend(self.extremal_words.iter().cloned());
        words.extend(CANONICAL_CATEGORIES.iter().map(|s| s.to_string()));
        words.sort();
        words.dedup();
        words
    }
}

/// One checkable claim about the target instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Attribute {
    Color(usize),
    Region(usize),
    /// Strictly smallest (false) / largest (true) area among
    /// same-category instances.
    SizeExtremal(bool),
    /// 0 leftmost, 1 rightmost, 2 topmost, 3 bottommost among
    /// same-category instances (strict).
    PosExtremal(u8),
    /// The strictly nearest same-category instance has this color.
    NearColor(usize),
}

/// Index of the strictly nearest same-category instance, if unique.
pub fn nearest_same_category(scene: &Scene, idx: usize) -> Option<usize> {
    let me = &scene.instances[idx];
    let mut best: Option<(usize, f64)> = None;
    let mut tied = false;
    for (j, other) in scene.instances.iter().enumerate() {
        if j == idx || other.category_id != me.category_id {
            continue;
        }
        let dx = other.obb.cx - me.obb.cx;
        let dy = other.obb.cy - me.obb.cy;
        let d = dx * dx + dy * dy;
        match best {
            None => best = Some((j, d)),
            Some((_, bd)) => {
                if (d - bd).abs() < 1e-9 {
                    tied = true;
                } else if d < bd {
                    best = Some((j, d));
                    tied = false;
                }
            }
        }
    }
    if tied {
        None
    } else {
        best.map(|(j, _)| j)
    }
}

/// Whether instance `idx` satisfies one attribute within its scene.
pub fn satisfies(scene: &Scene, idx: usize, attr: Attribute) -> bool {
    let me = &scene.instances[idx];
    let same_cat = || {
        scene
            .instances
            .iter()
            .enumerate()
            .filter(move |(j, o)| *j != idx && o.category_id == me.category_id)
    };
    match attr {
        Attribute::Color(c) => me.color == c,
        Attribute::Region(r) => region_index(me.obb.cx, me.obb.cy, scene.image_size) == r,
        Attribute::SizeExtremal(largest) => {
            same_cat().all(|(_, o)| {
                if largest {
                    me.area > o.area
                } else {
                    me.area < o.area
                }
            })
        }
        Attribute::PosExtremal(dir) => same_cat().all(|(_, o)| match dir {
            0 => me.obb.cx < o.obb.cx,
            1 => me.obb.cx > o.obb.cx,
            2 => me.obb.cy < o.obb.cy,
            _ => me.obb.cy > o.obb.cy,
        }),
        Attribute::NearColor(c) => match nearest_same_category(scene, idx) {
            Some(j) => scene.instances[j].color == c,
            None => false,
        },
    }
}

/// Instances of `category_id` satisfying every attribute.
pub fn satisfier_indices(scene: &Scene, category_id: usize, attrs: &[Attribute]) -> Vec<usize> {
    (0..scene.instances.len())
        .filter(|&i| scene.instances[i].category_id == category_id)
        .filter(|&i| attrs.iter().all(|&a| satisfies(scene, i, a)))
        .collect()
}

fn render(scene: &Scene, target: usize, bank: &TemplateBank, attrs: &[Attribute]) -> String {
    let cat = CANONICAL_CATEGORIES[scene.instances[target].category_id];
    let mut color: Option<&str> = None;
    let mut region: Option<&str> = None;
    let mut size: Option<&str> = None;
    let mut extremal: Option<&str> = None;
    let mut near: Option<&str> = None;
    for attr in attrs {
        match *attr {
            Attribute::Color(c) => color = Some(&bank.colors[c]),
            Attribute::Region(r) => region = Some(&bank.regions[r]),
            Attribute::SizeExtremal(largest) => {
                size = Some(&bank.size_words[largest as usize])
            }
            Attribute::PosExtremal(dir) => extremal = Some(&bank.extremal_words[dir as usize]),
            Attribute::NearColor(c) => near = Some(&bank.colors[c]),
        }
    }
    let mut out = String::from("the");
    if let Some(w) = extremal {
        out.push(' ');
        out.push_str(w);
    }
    if let Some(w) = size {
        out.push(' ');
        out.push_str(w);
    }
    if let Some(w) = color {
        out.push(' ');
        out.push_str(w);
    }
    out.push(' ');
    out.push_str(cat);
    if let Some(r) = region {
        out.push_str(" in the ");
        out.push_str(r);
        out.push_str(" of the image");
    }
    if let Some(c2) = near {
        out.push_str(" next to the ");
        out.push_str(c2);
        out.push_str(" one");
    }
    out
}

/// Generates an expression that uniquely resolves `target_index`, trying
/// attribute combinations from plain (color + region) to relational
/// (nearest same-category neighbor) forms. Fails when no combination in
/// the bank singles the target out.
pub fn generate_expression(
    scene: &Scene,
    target_index: usize,
    bank: &TemplateBank,
    rng: &mut ChaCha8Rng,
) -> Result<String> {
    if target_index >= scene.instances.len() {
        return Err(Error::InvalidInput(format!(
            "target index {target_index} out of range"
        )));
    }
    let me = &scene.instances[target_index];
    let cat = me.category_id;
    let color = Attribute::Color(me.color);
    let region = Attribute::Region(region_index(me.obb.cx, me.obb.cy, scene.image_size));

    let mut candidates: Vec<Vec<Attribute>> = Vec::new();
    candidates.push(vec![color, region]);

    let mut dirs: Vec<u8> = (0..4).collect();
    for i in (1..dirs.len()).rev() {
        let j = rng.gen_range(0..=i);
        dirs.swap(i, j);
    }
    for dir in dirs {
        candidates.push(vec![Attribute::PosExtremal(dir), color]);
    }
    for largest in [false, true] {
        candidates.push(vec![Attribute::SizeExtremal(largest), color, region]);
    }
    if let Some(j) = nearest_same_category(scene, target_index) {
        candidates.push(vec![color, Attribute::NearColor(scene.instances[j].color)]);
    }
    candidates.push(vec![region]);

    for attrs in candidates {
        if !attrs.iter().all(|&a| satisfies(scene, target_index, a)) {
            continue;
        }
        let hits = satisfier_indices(scene, cat, &attrs);
        if hits == [target_index] {
            return Ok(render(scene, target_index, bank, &attrs));
        }
    }
    Err(Error::Generation(format!(
        "no attribute combination uniquely resolves instance {target_index}"
    )))
}
