//! Synthetic scene rendering: colored geometric glyphs (one family per
//! object category) on a textured background, with instance masks and
//! oriented boxes. Scenes reproduce the two stress conditions the model
//! targets: tiny objects (coverage kept below 0.1) and crowded clusters
//! of same-category instances.

use super::obb::{rasterize_shape, OrientedBox};
use crate::error::{Error, Result};
use crate::lingdecomp::CANONICAL_CATEGORIES;
use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Glyph fill colors; the words double as expression attributes.
pub const COLOR_NAMES: [&str; 8] = [
    "red", "blue", "green", "yellow", "white", "black", "orange", "purple",
];

pub const COLOR_RGB: [[u8; 3]; 8] = [
    [210, 45, 45],
    [50, 70, 210],
    [55, 185, 70],
    [225, 215, 60],
    [235, 235, 235],
    [20, 20, 22],
    [235, 140, 40],
    [150, 60, 200],
];

/// 3x3 image-region names, row-major from the top left.
pub const REGION_NAMES: [&str; 9] = [
    "top left", "top", "top right", "left", "middle", "right", "bottom left", "bottom",
    "bottom right",
];

const BACKGROUNDS: [[u8; 3]; 4] = [
    [105, 105, 110], // asphalt
    [118, 100, 72],  // dirt
    [62, 88, 56],    // dark grass
    [148, 148, 142], // concrete
];

const NIGHT_DIM: f64 = 0.35;

/// Configuration for one synthetic scene.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneConfig {
    pub image_size: usize,
    /// Category ids drawn from; defaults to all eight.
    pub categories: Vec<usize>,
    pub min_instances: usize,
    pub max_instances: usize,
    /// Box side range in pixels.
    pub size_range: (f64, f64),
    /// Probability of a crowded same-category cluster (>= 3 instances).
    pub same_class_cluster_prob: f64,
    /// Probability of global illumination dimming.
    pub night_prob: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            categories: (0..CANONICAL_CATEGORIES.len()).collect(),
            min_instances: 1,
            max_instances: 3,
            size_range: (10.0, 19.0),
            same_class_cluster_prob: 0.25,
            night_prob: 0.2,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 32 {
            return Err(Error::Config("image_size must be at least 32".into()));
        }
        if self.categories.is_empty()
            || self
                .categories
                .iter()
                .any(|&c| c >= CANONICAL_CATEGORIES.len())
        {
            return Err(Error::Config("categories must be valid ids".into()));
        }
        if self.min_instances == 0 || self.min_instances > self.max_instances {
            return Err(Error::Config(
                "instance range must satisfy 1 <= min <= max".into(),
            ));
        }
        let (lo, hi) = self.size_range;
        if !(lo >= 4.0 && hi >= lo) {
            return Err(Error::Config("size_range must satisfy 4 <= lo <= hi".into()));
        }
        // Keep every instance below the 0.1 coverage bound by construction.
        let max_cover = hi * hi / (self.image_size * self.image_size) as f64;
        if max_cover >= 0.1 {
            return Err(Error::Config(format!(
                "size_range upper bound {hi} can exceed coverage 0.1 at image size {}",
                self.image_size
            )));
        }
        if !(0.0..=1.0).contains(&self.same_class_cluster_prob)
            || !(0.0..=1.0).contains(&self.night_prob)
        {
            return Err(Error::Config("probabilities must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// One rendered object instance.
#[derive(Clone, Debug)]
pub struct SceneInstance {
    pub category_id: usize,
    /// Index into [`COLOR_NAMES`].
    pub color: usize,
    pub obb: OrientedBox,
    pub mask: Array2<bool>,
    pub area: usize,
}

impl SceneInstance {
    pub fn center(&self) -> (f64, f64) {
        (self.obb.cx, self.obb.cy)
    }
}

/// A rendered scene: image plus its instances.
#[derive(Clone, Debug)]
pub struct Scene {
    /// `(H, W, 3)` RGB.
    pub image: Array3<u8>,
    pub instances: Vec<SceneInstance>,
    pub night: bool,
    pub image_size: usize,
}

/// Region of a point under the 3x3 grid, row-major index into
/// [`REGION_NAMES`].
pub fn region_index(cx: f64, cy: f64, image_size: usize) -> usize {
    let third = image_size as f64 / 3.0;
    let col = ((cx / third) as usize).min(2);
    let row = ((cy / third) as usize).min(2);
    row * 3 + col
}

/// Glyph membership test in the box's normalized local frame. One glyph
/// family per category, chosen to be mutually distinguishable silhouettes.
pub fn glyph_contains(category_id: usize, a: f64, b: f64) -> bool {
    let circle = |ca: f64, cb: f64, r: f64| (a - ca).powi(2) + (b - cb).powi(2) <= r * r;
    match category_id {
        0 => a * a + b * b <= 1.0,                    // people: ellipse
        1 => true,                                    // car: full box
        2 => b >= 2.0 * a.abs() - 1.0,                // motor: triangle
        3 => circle(-0.5, 0.0, 0.48) || circle(0.5, 0.0, 0.48), // bicycle
        4 => {
            circle(-0.55, 0.5, 0.45) || circle(0.55, 0.5, 0.45) || circle(0.0, -0.5, 0.45)
            // tricycle
        }
        5 => b >= 0.0 || a <= 0.0,                    // truck: L silhouette
        6 => !(b < -0.55 && ((a + 0.5).abs() < 0.2 || (a - 0.5).abs() < 0.2)), // bus
        7 => a.abs() <= 1.0 - 0.75 * b.max(0.0),      // boat: hull
        _ => false,
    }
}

/// Rasterizes the glyph of `category_id` within an oriented box.
pub fn rasterize_glyph(
    box_: &OrientedBox,
    category_id: usize,
    height: usize,
    width: usize,
) -> Array2<bool> {
    rasterize_shape(box_, height, width, |a, b| glyph_contains(category_id, a, b))
}

struct Placement {
    category_id: usize,
    obb: OrientedBox,
}

fn draw_box(
    rng: &mut ChaCha8Rng,
    config: &SceneConfig,
    center_hint: Option<(f64, f64, f64)>,
) -> Result<OrientedBox> {
    let (lo, hi) = config.size_range;
    let w = rng.gen_range(lo..=hi);
    let h = rng.gen_range(lo..=hi);
    let angle = rng.gen_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2);
    let radius = (w * w + h * h).sqrt() / 2.0;
    let margin = radius + 1.0;
    let s = config.image_size as f64;
    if 2.0 * margin >= s {
        return Err(Error::Generation("instance larger than image".into()));
    }
    let (cx, cy) = match center_hint {
        Some((hx, hy, spread)) => {
            let ang = rng.gen_range(0.0..std::f64::consts::TAU);
            let r = rng.gen_range(0.0..spread);
            (
                (hx + r * ang.cos()).clamp(margin, s - margin),
                (hy + r * ang.sin()).clamp(margin, s - margin),
            )
        }
        None => (
            rng.gen_range(margin..s - margin),
            rng.gen_range(margin..s - margin),
        ),
    };
    OrientedBox::new(cx, cy, w, h, angle)
}

fn overlaps(a: &OrientedBox, b: &OrientedBox) -> bool {
    let dx = a.cx - b.cx;
    let dy = a.cy - b.cy;
    let min_dist = a.radius() + b.radius() + 1.0;
    dx * dx + dy * dy < min_dist * min_dist
}

fn place_instances(
    rng: &mut ChaCha8Rng,
    config: &SceneConfig,
    primary_category: usize,
) -> Result<(Vec<Placement>, bool)> {
    let clustered = rng.gen_bool(config.same_class_cluster_prob);
    let drawn = rng.gen_range(config.min_instances..=config.max_instances);
    let total = if clustered { drawn.max(3) } else { drawn };

    for _attempt in 0..40 {
        let mut placed: Vec<Placement> = Vec::new();
        let mut ok = true;

        let cluster_hint = if clustered {
            let s = config.image_size as f64;
            let margin = config.size_range.1 + 2.0;
            Some((
                rng.gen_range(margin..s - margin),
                rng.gen_range(margin..s - margin),
                config.size_range.1 * 1.6,
            ))
        } else {
            None
        };
        let n_primary = if clustered { 3 } else { 1 };

        for i in 0..total {
            let category_id = if i < n_primary {
                primary_category
            } else {
                config.categories[rng.gen_range(0..config.categories.len())]
            };
            let hint = if clustered && i < n_primary {
                cluster_hint
            } else {
                None
            };
            let mut found = false;
            for _retry in 0..60 {
                let obb = draw_box(rng, config, hint)?;
                if placed.iter().all(|p| !overlaps(&p.obb, &obb)) {
                    placed.push(Placement { category_id, obb });
                    found = true;
                    break;
                }
            }
            if !found {
                ok = false;
                break;
            }
        }
        if ok {
            return Ok((placed, clustered));
        }
    }
    Err(Error::Generation(format!(
        "could not place {total} non-overlapping instances in a {0}x{0} scene",
        config.image_size
    )))
}

fn assign_colors(rng: &mut ChaCha8Rng, placements: &[Placement]) -> Vec<usize> {
    // Same-category groups get pairwise distinct colors whenever the group
    // fits in the palette, so color is usually a discriminative attribute.
    let mut colors = vec![0usize; placements.len()];
    let mut by_cat: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, p) in placements.iter().enumerate() {
        match by_cat.iter_mut().find(|(c, _)| *c == p.category_id) {
            Some((_, v)) => v.push(i),
            None => by_cat.push((p.category_id, vec![i])),
        }
    }
    for (_, members) in by_cat {
        if members.len() <= COLOR_NAMES.len() {
            let mut palette: Vec<usize> = (0..COLOR_NAMES.len()).collect();
            for i in (1..palette.len()).rev() {
                let j = rng.gen_range(0..=i);
                palette.swap(i, j);
            }
            for (slot, &idx) in members.iter().enumerate() {
                colors[idx] = palette[slot];
            }
        } else {
            for &idx in &members {
                colors[idx] = rng.gen_range(0..COLOR_NAMES.len());
            }
        }
    }
    colors
}

/// Renders a scene with the target category chosen uniformly at random.
pub fn generate_synthetic_scene(config: &SceneConfig, rng: &mut ChaCha8Rng) -> Result<Scene> {
    let primary = config.categories[rng.gen_range(0..config.categories.len())];
    generate_scene_with_primary(config, rng, primary)
}

/// Renders a scene guaranteed to contain `primary_category` (the cluster
/// category when the cluster condition fires). Corpus builders stratify
/// over this to keep category counts balanced.
pub fn generate_scene_with_primary(
    config: &SceneConfig,
    rng: &mut ChaCha8Rng,
    primary_category: usize,
) -> Result<Scene> {
    config.validate()?;
    if !config.categories.contains(&primary_category) {
        return Err(Error::Config(format!(
            "primary category {primary_category} not in configured categories"
        )));
    }
    let s = config.image_size;
    let (placements, _clustered) = place_instances(rng, config, primary_category)?;
    let colors = assign_colors(rng, &placements);

    // Background: flat base with per-pixel noise.
    let base = BACKGROUNDS[rng.gen_range(0..BACKGROUNDS.len())];
    let mut image = Array3::<u8>::zeros((s, s, 3));
    for y in 0..s {
        for x in 0..s {
            let n = rng.gen_range(-8i16..=8);
            for ch in 0..3 {
                image[[y, x, ch]] = (base[ch] as i16 + n).clamp(0, 255) as u8;
            }
        }
    }

    let mut instances = Vec::with_capacity(placements.len());
    for (placement, &color) in placements.iter().zip(&colors) {
        let mask = rasterize_glyph(&placement.obb, placement.category_id, s, s);
        let area = mask.iter().filter(|&&v| v).count();
        if area == 0 {
            return Err(Error::Generation("degenerate empty glyph".into()));
        }
        let jitter = rng.gen_range(-10i16..=10);
        let rgb = COLOR_RGB[color];
        for y in 0..s {
            for x in 0..s {
                if mask[[y, x]] {
                    for ch in 0..3 {
                        image[[y, x, ch]] = (rgb[ch] as i16 + jitter).clamp(0, 255) as u8;
                    }
                }
            }
        }
        instances.push(SceneInstance {
            category_id: placement.category_id,
            color,
            obb: placement.obb,
            mask,
            area,
        });
    }

    let night = rng.gen_bool(config.night_prob);
    if night {
        image.mapv_inplace(|v| (v as f64 * NIGHT_DIM).round() as u8);
    }

    Ok(Scene {
        image,
        instances,
        night,
        image_size: s,
    })
}

/// Per-scene RNG stream derived from the root seed, scene index, and
/// retry attempt, so generation is pure per sample and order-independent.
pub fn scene_rng(root_seed: u64, scene_index: u64, attempt: u64) -> ChaCha8Rng {
    let mixed = crate::params::mix_seed(
        root_seed,
        &format!("scene/{scene_index}/{attempt}"),
    );
    rand::SeedableRng::seed_from_u64(mixed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn single_instance_scene_has_one_nonempty_mask() {
        let config = SceneConfig {
            min_instances: 1,
            max_instances: 1,
            same_class_cluster_prob: 0.0,
            ..SceneConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let scene = generate_synthetic_scene(&config, &mut rng).unwrap();
        assert_eq!(scene.instances.len(), 1);
        assert!(scene.instances[0].area > 0);
    }

    #[test]
    fn seeded_regeneration_is_bit_identical() {
        let config = SceneConfig::default();
        let a = generate_synthetic_scene(&config, &mut scene_rng(9, 3, 0)).unwrap();
        let b = generate_synthetic_scene(&config, &mut scene_rng(9, 3, 0)).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.instances.len(), b.instances.len());
        for (x, y) in a.instances.iter().zip(&b.instances) {
            assert_eq!(x.mask, y.mask);
            assert_eq!(x.obb, y.obb);
            assert_eq!(x.color, y.color);
        }
    }

    #[test]
    fn cluster_condition_places_at_least_three_same_category() {
        let config = SceneConfig {
            same_class_cluster_prob: 1.0,
            ..SceneConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scene = generate_scene_with_primary(&config, &mut rng, 1).unwrap();
        let same = scene
            .instances
            .iter()
            .filter(|i| i.category_id == 1)
            .count();
        assert!(same >= 3, "expected a cluster, got {same}");
    }

    #[test]
    fn instances_do_not_overlap() {
        for seed in 0..20 {
            let config = SceneConfig::default();
            let scene =
                generate_synthetic_scene(&config, &mut scene_rng(7, seed, 0)).unwrap();
            for i in 0..scene.instances.len() {
                for j in i + 1..scene.instances.len() {
                    let overlap = scene.instances[i]
                        .mask
                        .iter()
                        .zip(scene.instances[j].mask.iter())
                        .any(|(&a, &b)| a && b);
                    assert!(!overlap, "masks {i} and {j} overlap (seed {seed})");
                }
            }
        }
    }

    #[test]
    fn coverage_constraint_holds_by_construction() {
        for seed in 0..30 {
            let config = SceneConfig::default();
            let scene =
                generate_synthetic_scene(&config, &mut scene_rng(11, seed, 0)).unwrap();
            for inst in &scene.instances {
                let ratio = inst.area as f64 / (64.0 * 64.0);
                assert!(ratio < 0.1, "coverage {ratio} too large");
            }
        }
    }

    #[test]
    fn infeasible_config_is_a_generation_error() {
        let config = SceneConfig {
            image_size: 32,
            min_instances: 24,
            max_instances: 24,
            size_range: (9.0, 10.0),
            same_class_cluster_prob: 0.0,
            ..SceneConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            generate_synthetic_scene(&config, &mut rng),
            Err(Error::Generation(_))
        ));
    }

    #[test]
    fn oversized_instances_are_a_config_error() {
        let config = SceneConfig {
            image_size: 32,
            size_range: (10.0, 12.0),
            ..SceneConfig::default()
        };
        assert!(matches!(config.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn glyph_families_are_distinct_silhouettes() {
        // Sample the unit square; every category pair must disagree
        // somewhere so shapes are distinguishable.
        for a_cat in 0..8 {
            for b_cat in (a_cat + 1)..8 {
                let mut differs = false;
                for yi in 0..20 {
                    for xi in 0..20 {
                        let a = -0.95 + 0.1 * xi as f64;
                        let b = -0.95 + 0.1 * yi as f64;
                        if glyph_contains(a_cat, a, b) != glyph_contains(b_cat, a, b) {
                            differs = true;
                        }
                    }
                }
                assert!(differs, "glyphs {a_cat} and {b_cat} are identical");
            }
        }
    }

    #[test]
    fn region_grid_partitions_the_image() {
        assert_eq!(region_index(5.0, 5.0, 64), 0);
        assert_eq!(region_index(32.0, 5.0, 64), 1);
        assert_eq!(region_index(60.0, 60.0, 64), 8);
        assert_eq!(region_index(32.0, 32.0, 64), 4);
    }
}
