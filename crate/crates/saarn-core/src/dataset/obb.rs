//! Oriented bounding boxes and mask rasterization.

use crate::error::{Error, Result};
use ndarray::Array2;

/// Rotated rectangle in pixel coordinates. `cx/cy` is the center, `w`
/// extends along the local x axis before rotation, and `angle` is in
/// radians within `[-pi/2, pi/2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientedBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub angle: f64,
}

impl OrientedBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, angle: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0) {
            return Err(Error::InvalidInput(format!(
                "box sides must be positive, got w={w}, h={h}"
            )));
        }
        if !(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2).contains(&angle) {
            return Err(Error::InvalidInput(format!(
                "angle {angle} outside [-pi/2, pi/2)"
            )));
        }
        Ok(Self { cx, cy, w, h, angle })
    }

    /// Maps a point from world to normalized local coordinates, where the
    /// box interior is `[-1, 1] x [-1, 1]`.
    pub fn to_local(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (sin, cos) = self.angle.sin_cos();
        let u = cos * dx + sin * dy;
        let v = -sin * dx + cos * dy;
        (u / (self.w / 2.0), v / (self.h / 2.0))
    }

    /// Corners in world coordinates, counter-clockwise.
    pub fn corners(&self) -> [(f64, f64); 4] {
        let (sin, cos) = self.angle.sin_cos();
        let (hw, hh) = (self.w / 2.0, self.h / 2.0);
        let rot = |u: f64, v: f64| (self.cx + cos * u - sin * v, self.cy + sin * u + cos * v);
        [rot(-hw, -hh), rot(hw, -hh), rot(hw, hh), rot(-hw, hh)]
    }

    /// Half-diagonal: radius of the box's bounding circle.
    pub fn radius(&self) -> f64 {
        (self.w * self.w + self.h * self.h).sqrt() / 2.0
    }
}

/// Rasterizes a predicate defined in the box's normalized local frame:
/// a pixel `(row, col)` is set when its center lies inside the box and
/// `test(a, b)` holds for the normalized local coordinates.
pub fn rasterize_shape<F>(box_: &OrientedBox, height: usize, width: usize, test: F) -> Array2<bool>
where
    F: Fn(f64, f64) -> bool,
{
    let mut mask = Array2::from_elem((height, width), false);
    let (sin, cos) = (box_.angle.sin(), box_.angle.cos());
    let ext_x = (box_.w / 2.0 * cos).abs() + (box_.h / 2.0 * sin).abs();
    let ext_y = (box_.w / 2.0 * sin).abs() + (box_.h / 2.0 * cos).abs();
    let x_lo = ((box_.cx - ext_x - 1.0).floor().max(0.0)) as usize;
    let y_lo = ((box_.cy - ext_y - 1.0).floor().max(0.0)) as usize;
    let x_hi = ((box_.cx + ext_x + 1.0).ceil().min(width as f64)) as usize;
    let y_hi = ((box_.cy + ext_y + 1.0).ceil().min(height as f64)) as usize;
    for py in y_lo..y_hi {
        for px in x_lo..x_hi {
            let (a, b) = box_.to_local(px as f64 + 0.5, py as f64 + 0.5);
            if a.abs() <= 1.0 && b.abs() <= 1.0 && test(a, b) {
                mask[[py, px]] = true;
            }
        }
    }
    mask
}

/// Pixel set whose centers lie inside the rotated rectangle, boundary
/// inclusive. A box fully outside the image yields an empty mask.
pub fn rasterize_obb(box_: &OrientedBox, height: usize, width: usize) -> Array2<bool> {
    rasterize_shape(box_, height, width, |_, _| true)
}

/// Foreground fraction of a binary mask.
pub fn coverage_ratio(mask: &Array2<bool>) -> f64 {
    let total = mask.len();
    if total == 0 {
        return 0.0;
    }
    mask.iter().filter(|&&v| v).count() as f64 / total as f64
}

/// Outcome of checking the small-object constraint over a sample set.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct CoverageReport {
    pub n_samples: usize,
    pub n_below: usize,
    pub fraction_below: f64,
    pub max_ratio: f64,
    pub min_fraction: f64,
    pub passed: bool,
    /// Sample ids whose coverage is not below `max_ratio`.
    pub violators: Vec<String>,
}

/// Passes when at least `min_fraction` of the samples have coverage
/// strictly below `max_ratio`.
pub fn validate_coverage(
    items: &[(String, f64)],
    max_ratio: f64,
    min_fraction: f64,
) -> Result<CoverageReport> {
    if items.is_empty() {
        return Err(Error::InvalidInput(
            "coverage validation requires at least one sample".into(),
        ));
    }
    let mut violators = Vec::new();
    for (id, ratio) in items {
        if !(*ratio < max_ratio) {
            violators.push(id.clone());
        }
    }
    let n_below = items.len() - violators.len();
    let fraction_below = n_below as f64 / items.len() as f64;
    Ok(CoverageReport {
        n_samples: items.len(),
        n_below,
        fraction_below,
        max_ratio,
        min_fraction,
        passed: fraction_below >= min_fraction,
        violators,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn axis_aligned_box_covers_exactly_four_pixel_centers() {
        // Centers (0.5,0.5), (1.5,0.5), (0.5,1.5), (1.5,1.5) sit on the
        // inclusive boundary of a 2x2 box centered at (1,1).
        let b = OrientedBox::new(1.0, 1.0, 2.0, 2.0, 0.0).unwrap();
        let mask = rasterize_obb(&b, 4, 4);
        assert_eq!(mask.iter().filter(|&&v| v).count(), 4);
        for (r, c) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            assert!(mask[[r, c]]);
        }
    }

    #[test]
    fn box_fully_outside_image_is_empty() {
        let b = OrientedBox::new(-50.0, -50.0, 4.0, 4.0, 0.3).unwrap();
        assert_eq!(rasterize_obb(&b, 8, 8).iter().filter(|&&v| v).count(), 0);
    }

    #[test]
    fn invalid_boxes_are_rejected() {
        assert!(OrientedBox::new(0.0, 0.0, 0.0, 1.0, 0.0).is_err());
        assert!(OrientedBox::new(0.0, 0.0, 1.0, 1.0, 2.0).is_err());
    }

    /// Point-in-convex-polygon oracle over the rotated corners.
    fn inside_polygon(corners: &[(f64, f64); 4], x: f64, y: f64) -> bool {
        let mut sign = 0i8;
        for i in 0..4 {
            let (x1, y1) = corners[i];
            let (x2, y2) = corners[(i + 1) % 4];
            let cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1);
            if cross.abs() < 1e-9 {
                continue; // on the (inclusive) boundary
            }
            let s = if cross > 0.0 { 1 } else { -1 };
            if sign == 0 {
                sign = s;
            } else if s != sign {
                return false;
            }
        }
        true
    }

    #[test]
    fn rotated_square_matches_point_in_polygon_oracle() {
        let b = OrientedBox::new(6.0, 5.5, 5.0, 5.0, std::f64::consts::FRAC_PI_4).unwrap();
        let mask = rasterize_obb(&b, 12, 12);
        let corners = b.corners();
        for py in 0..12 {
            for px in 0..12 {
                let expect = inside_polygon(&corners, px as f64 + 0.5, py as f64 + 0.5);
                assert_eq!(mask[[py, px]], expect, "disagree at ({py},{px})");
            }
        }
    }

    #[test]
    fn coverage_ratio_extremes_and_arithmetic() {
        assert_eq!(coverage_ratio(&Array2::from_elem((4, 4), true)), 1.0);
        assert_eq!(coverage_ratio(&Array2::from_elem((4, 4), false)), 0.0);
        // A 108x108 object inside 1080x1080 covers exactly 1%.
        let mut m = Array2::from_elem((1080, 1080), false);
        m.slice_mut(ndarray::s![..108, ..108]).fill(true);
        assert!((coverage_ratio(&m) - 0.01).abs() < 1e-12);
    }

    #[test]
    fn coverage_validation_boundary_is_inclusive() {
        let mut items: Vec<(String, f64)> =
            (0..9).map(|i| (format!("s{i}"), 0.05)).collect();
        items.push(("big".into(), 0.5));
        let report = validate_coverage(&items, 0.1, 0.9).unwrap();
        assert!(report.passed, "exactly 0.9 must pass");
        assert_eq!(report.violators, vec!["big".to_string()]);

        let all_small: Vec<(String, f64)> =
            (0..5).map(|i| (format!("s{i}"), 0.01)).collect();
        assert!(validate_coverage(&all_small, 0.1, 0.9).unwrap().passed);
    }

    #[test]
    fn coverage_validation_lists_violators_on_failure() {
        let mut items: Vec<(String, f64)> =
            (0..8).map(|i| (format!("s{i}"), 0.05)).collect();
        items.push(("v1".into(), 0.2));
        items.push(("v2".into(), 0.1)); // boundary: not strictly below
        let report = validate_coverage(&items, 0.1, 0.9).unwrap();
        assert!(!report.passed);
        assert_eq!(report.violators.len(), 2);
    }

    #[test]
    fn empty_sample_set_is_invalid() {
        assert!(validate_coverage(&[], 0.1, 0.9).is_err());
    }

    proptest! {
        #[test]
        fn rasterization_agrees_with_polygon_oracle(
            cx in 2.0f64..14.0,
            cy in 2.0f64..14.0,
            w in 1.0f64..8.0,
            h in 1.0f64..8.0,
            angle in -1.5f64..1.5,
        ) {
            let b = OrientedBox::new(cx, cy, w, h, angle.clamp(-1.57, 1.5707)).unwrap();
            let mask = rasterize_obb(&b, 16, 16);
            let corners = b.corners();
            for py in 0..16 {
                for px in 0..16 {
                    let x = px as f64 + 0.5;
                    let y = py as f64 + 0.5;
                    // Skip centers razor-close to the boundary where the
                    // two formulations may round differently.
                    let (a, bb) = b.to_local(x, y);
                    if (a.abs() - 1.0).abs() < 1e-6 || (bb.abs() - 1.0).abs() < 1e-6 {
                        continue;
                    }
                    prop_assert_eq!(mask[[py, px]], inside_polygon(&corners, x, y));
                }
            }
        }
    }
}
