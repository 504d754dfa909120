//! Pluggable external-model client interfaces.
//!
//! The annotation pipeline consumes a segmenter (mask from an oriented-box
//! prompt) and a captioner (expression from a cropped instance plus the
//! full image with the target marked). The default implementations are
//! fully local; network-backed implementations must time out and keep
//! transport failures distinct from content failures via
//! [`ClientError`](crate::error::ClientError)'s variants.

use super::obb::{rasterize_obb, OrientedBox};
use crate::error::ClientError;
use ndarray::{Array2, Array3, ArrayView3};

/// The dual-input caption request: an upsampled crop of the instance and
/// the full image with a red box marking the target's location.
pub struct CaptionRequest {
    pub crop: Array3<u8>,
    pub marked_full: Array3<u8>,
}

pub trait SegmenterClient {
    fn segment(
        &self,
        image: ArrayView3<'_, u8>,
        prompt: &OrientedBox,
    ) -> std::result::Result<Array2<bool>, ClientError>;
}

pub trait CaptionerClient {
    fn caption(&self, request: &CaptionRequest) -> std::result::Result<String, ClientError>;
}

/// Default local segmenter: the oriented-box prompt rasterized directly.
pub struct ObbSegmenter;

impl SegmenterClient for ObbSegmenter {
    fn segment(
        &self,
        image: ArrayView3<'_, u8>,
        prompt: &OrientedBox,
    ) -> std::result::Result<Array2<bool>, ClientError> {
        let (h, w, _) = image.dim();
        Ok(rasterize_obb(prompt, h, w))
    }
}

/// Default local captioner: returns a pre-generated template expression,
/// ignoring the pixel inputs.
pub struct TemplateCaptioner {
    expression: String,
}

impl TemplateCaptioner {
    pub fn new(expression: String) -> Self {
        Self { expression }
    }
}

impl CaptionerClient for TemplateCaptioner {
    fn caption(&self, _request: &CaptionRequest) -> std::result::Result<String, ClientError> {
        Ok(self.expression.clone())
    }
}

/// Crops the axis-aligned bounds of an oriented box (clamped to the
/// image) and nearest-neighbor upscales the crop by 2x.
pub fn crop_instance(image: ArrayView3<'_, u8>, box_: &OrientedBox) -> Array3<u8> {
    let (h, w, c) = image.dim();
    let r = box_.radius() + 1.0;
    let x0 = (box_.cx - r).floor().max(0.0) as usize;
    let y0 = (box_.cy - r).floor().max(0.0) as usize;
    let x1 = ((box_.cx + r).ceil() as usize).min(w).max(x0 + 1);
    let y1 = ((box_.cy + r).ceil() as usize).min(h).max(y0 + 1);
    let (ch, cw) = (y1 - y0, x1 - x0);
    let mut out = Array3::<u8>::zeros((ch * 2, cw * 2, c));
    for y in 0..ch * 2 {
        for x in 0..cw * 2 {
            for ci in 0..c {
                out[[y, x, ci]] = image[[y0 + y / 2, x0 + x / 2, ci]];
            }
        }
    }
    out
}

/// Copies the image and draws a red rectangle around the box's
/// axis-aligned bounds as the location marker.
pub fn mark_target(image: ArrayView3<'_, u8>, box_: &OrientedBox) -> Array3<u8> {
    let (h, w, _c) = image.dim();
    let mut out = image.to_owned();
    let r = box_.radius() + 1.0;
    let x0 = (box_.cx - r).floor().max(0.0) as usize;
    let y0 = (box_.cy - r).floor().max(0.0) as usize;
    let x1 = ((box_.cx + r).ceil() as usize).min(w.saturating_sub(1));
    let y1 = ((box_.cy + r).ceil() as usize).min(h.saturating_sub(1));
    let mut paint = |y: usize, x: usize| {
        out[[y, x, 0]] = 255;
        out[[y, x, 1]] = 0;
        out[[y, x, 2]] = 0;
    };
    for x in x0..=x1 {
        paint(y0, x);
        paint(y1, x);
    }
    for y in y0..=y1 {
        paint(y, x0);
        paint(y, x1);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::ClientError;

    struct MalformedCaptioner;

    impl CaptionerClient for MalformedCaptioner {
        fn caption(&self, _r: &CaptionRequest) -> std::result::Result<String, ClientError> {
            Err(ClientError::MalformedResponse("empty payload".into()))
        }
    }

    #[test]
    fn default_segmenter_delegates_to_obb_rasterization() {
        let image = Array3::<u8>::zeros((16, 16, 3));
        let b = OrientedBox::new(8.0, 8.0, 6.0, 4.0, 0.4).unwrap();
        let got = ObbSegmenter.segment(image.view(), &b).unwrap();
        assert_eq!(got, rasterize_obb(&b, 16, 16));
    }

    #[test]
    fn default_captioner_returns_bound_expression() {
        let cap = TemplateCaptioner::new("the red car in the middle of the image".into());
        let req = CaptionRequest {
            crop: Array3::zeros((4, 4, 3)),
            marked_full: Array3::zeros((8, 8, 3)),
        };
        assert_eq!(
            cap.caption(&req).unwrap(),
            "the red car in the middle of the image"
        );
    }

    #[test]
    fn error_classes_are_distinguishable() {
        let req = CaptionRequest {
            crop: Array3::zeros((4, 4, 3)),
            marked_full: Array3::zeros((8, 8, 3)),
        };
        let err = MalformedCaptioner.caption(&req).unwrap_err();
        assert!(matches!(err, ClientError::MalformedResponse(_)));
        let t = ClientError::Timeout(std::time::Duration::from_secs(5));
        let x = ClientError::Transport("connection reset".into());
        assert!(matches!(t, ClientError::Timeout(_)));
        assert!(matches!(x, ClientError::Transport(_)));
    }

    #[test]
    fn marker_draws_a_red_frame_and_crop_upscales() {
        let mut image = Array3::<u8>::zeros((16, 16, 3));
        image.fill(100);
        let b = OrientedBox::new(8.0, 8.0, 4.0, 4.0, 0.0).unwrap();
        let marked = mark_target(image.view(), &b);
        let crop = crop_instance(image.view(), &b);
        assert!(crop.dim().0 >= 8 && crop.dim().1 >= 8);
        let reds = marked
            .outer_iter()
            .flat_map(|row| row.outer_iter().map(|p| (p[0], p[1], p[2])).collect::<Vec<_>>())
            .filter(|&(r, g, bl)| r == 255 && g == 0 && bl == 0)
            .count();
        assert!(reds > 8, "expected a visible marker frame");
    }
}
