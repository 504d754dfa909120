//! Dataset tooling: triplet storage, tiling, oriented-box rasterization,
//! coverage filtering, splitting, external-model client interfaces, and
//! the synthetic scene pipeline.

pub mod clients;
pub mod expression;
pub mod obb;
pub mod scene;
pub mod split;
pub mod tiling;

pub use clients::{CaptionerClient, ObbSegmenter, SegmenterClient, TemplateCaptioner};
pub use expression::{generate_expression, TemplateBank};
pub use obb::{coverage_ratio, rasterize_obb, validate_coverage, CoverageReport, OrientedBox};
pub use scene::{generate_synthetic_scene, Scene, SceneConfig, SceneInstance};
pub use split::{split_dataset, split_sizes, Split};
pub use tiling::{tile_image, tile_offsets};

use crate::error::{Error, Result};
use crate::lingdecomp::CANONICAL_CATEGORIES;
use ndarray::{Array2, Array3, ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

/// One image-text-mask triplet: the dataset atom.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferringSample {
    pub sample_id: String,
    /// Paths are relative to the annotation file's directory.
    pub image_path: String,
    pub mask_path: String,
    pub expression: String,
    /// Canonical category name.
    pub category: String,
    pub split: Split,
}

/// Writes one JSON object per line.
pub fn write_annotations(path: &Path, samples: &[ReferringSample]) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    for sample in samples {
        serde_json::to_writer(&mut out, sample)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_annotations(path: &Path) -> Result<Vec<ReferringSample>> {
    let file = std::fs::File::open(path)?;
    let mut samples = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        samples.push(serde_json::from_str(&line)?);
    }
    Ok(samples)
}

pub fn save_image_png(path: &Path, image: ArrayView3<'_, u8>) -> Result<()> {
    let (h, w, c) = image.dim();
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    let data = image.as_standard_layout().iter().copied().collect();
    let img = image::RgbImage::from_raw(w as u32, h as u32, data)
        .ok_or_else(|| Error::Shape("image buffer size mismatch".into()))?;
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn load_image_png(path: &Path) -> Result<Array3<u8>> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(Array3::from_shape_vec(
        (h as usize, w as usize, 3),
        img.into_raw(),
    )
    .expect("raw buffer matches dimensions"))
}

/// Stores a binary mask as a single-channel PNG with values {0, 255}.
pub fn save_mask_png(path: &Path, mask: ArrayView2<'_, bool>) -> Result<()> {
    let (h, w) = mask.dim();
    let data: Vec<u8> = mask.iter().map(|&v| if v { 255 } else { 0 }).collect();
    let img = image::GrayImage::from_raw(w as u32, h as u32, data)
        .ok_or_else(|| Error::Shape("mask buffer size mismatch".into()))?;
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn load_mask_png(path: &Path) -> Result<Array2<bool>> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_vec(
        (h as usize, w as usize),
        img.into_raw().into_iter().map(|v| v >= 128).collect(),
    )
    .expect("raw buffer matches dimensions"))
}

/// A fully generated sample before it is written to disk.
pub struct SampleBundle {
    pub scene: Scene,
    pub target_index: usize,
    pub expression: String,
}

/// Generates one scene plus a uniquely resolving expression for a target
/// of `primary_category`. Scenes whose targets cannot be described are
/// regenerated from a fresh per-attempt stream, keeping the whole bundle
/// a pure function of (config.seed, scene_index, primary_category).
pub fn build_sample_bundle(
    config: &SceneConfig,
    scene_index: u64,
    primary_category: usize,
    bank: &TemplateBank,
) -> Result<SampleBundle> {
    const MAX_ATTEMPTS: u64 = 8;
    let mut last_err = None;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = scene::scene_rng(config.seed, scene_index, attempt);
        let scene = match scene::generate_scene_with_primary(config, &mut rng, primary_category)
        {
            Ok(s) => s,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        let candidates: Vec<usize> = scene
            .instances
            .iter()
            .enumerate()
            .filter(|(_, inst)| inst.category_id == primary_category)
            .map(|(i, _)| i)
            .collect();
        let target_index = candidates[rand::Rng::gen_range(&mut rng, 0..candidates.len())];
        match generate_expression(&scene, target_index, bank, &mut rng) {
            Ok(expression) => {
                return Ok(SampleBundle {
                    scene,
                    target_index,
                    expression,
                })
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::Generation("sample generation failed".into())))
}

/// Canonical name for a category id.
pub fn category_name(id: usize) -> &'static str {
    CANONICAL_CATEGORIES[id]
}
