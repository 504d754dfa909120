//! Four-stage patch-merging convolutional encoder.
//!
//! Stage spatial sizes are H/4, H/8, H/16, H/32 with a declared channel
//! schedule. Two normalized coordinate channels are appended to the RGB
//! input so spatial phrases ("top left") are resolvable by convolutions.
//! A per-stage enhancer (the cross-modal enhancement stack) can be hooked
//! in after each stage output; with no enhancer the plain pyramid is the
//! ablation baseline.

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::params::{Init, Linear, ParamStore};
use ndarray::{Array4, ArrayD, IxDyn};

/// Per-stage hook applied to the `(B, H, W, C)` stage output.
pub type StageEnhancer<'a> =
    dyn FnMut(&mut Graph, usize, NodeId) -> Result<NodeId> + 'a;

#[derive(Clone, Debug)]
pub struct VisualEncoder {
    pub channels: [usize; 4],
    stem: Linear,
    refine: Linear,
    downs: [Linear; 3],
}

impl VisualEncoder {
    pub fn register(store: &mut ParamStore, channels: [usize; 4]) -> Self {
        let stem = Linear::register(
            store,
            "vis.stage1.stem",
            4 * 4 * 5,
            channels[0],
            true,
            Init::UniformFanIn,
        );
        let refine = Linear::register(
            store,
            "vis.stage1.refine",
            3 * 3 * channels[0],
            channels[0],
            true,
            Init::UniformFanIn,
        );
        let downs = [
            Linear::register(store, "vis.stage2.down", 3 * 3 * channels[0], channels[1], true, Init::UniformFanIn),
            Linear::register(store, "vis.stage3.down", 3 * 3 * channels[1], channels[2], true, Init::UniformFanIn),
            Linear::register(store, "vis.stage4.down", 3 * 3 * channels[2], channels[3], true, Init::UniformFanIn),
        ];
        Self {
            channels,
            stem,
            refine,
            downs,
        }
    }

    /// Normalized (x, y) coordinate planes for a batch.
    fn coord_grid(b: usize, h: usize, w: usize) -> ArrayD<f64> {
        let mut grid = ArrayD::<f64>::zeros(IxDyn(&[b, h, w, 2]));
        for bi in 0..b {
            for y in 0..h {
                for x in 0..w {
                    grid[[bi, y, x, 0]] = x as f64 / (w.max(2) - 1) as f64 * 2.0 - 1.0;
                    grid[[bi, y, x, 1]] = y as f64 / (h.max(2) - 1) as f64 * 2.0 - 1.0;
                }
            }
        }
        grid
    }

    /// Runs the pyramid on a channels-last `(B, H, W, 3)` image node
    /// already on the graph.
    pub fn forward(
        &self,
        graph: &mut Graph,
        store: &ParamStore,
        image: NodeId,
        mut enhance: Option<&mut StageEnhancer<'_>>,
    ) -> Result<[NodeId; 4]> {
        let shape = graph.shape(image).to_vec();
        if shape.len() != 4 || shape[3] != 3 {
            return Err(Error::Shape(format!(
                "expected (B, H, W, 3) image, got {shape:?}"
            )));
        }
        let (b, h, w) = (shape[0], shape[1], shape[2]);
        if h % 32 != 0 || w % 32 != 0 {
            return Err(Error::Shape(format!(
                "image size {h}x{w} must be divisible by 32"
            )));
        }
        let coords = graph.constant(Self::coord_grid(b, h, w));
        let x = graph.concat_last(&[image, coords]);

        let stem = self.stem.bind(graph, store);
        let col = graph.im2col(x, 4, 4, 0);
        let mut feat = stem.apply(graph, col);
        feat = graph.gelu(feat);
        let refine = self.refine.bind(graph, store);
        let col = graph.im2col(feat, 3, 1, 1);
        feat = refine.apply(graph, col);
        feat = graph.gelu(feat);

        let mut stages = Vec::with_capacity(4);
        if let Some(enh) = enhance.as_deref_mut() {
            feat = enh(graph, 0, feat)?;
        }
        stages.push(feat);
        for (i, down) in self.downs.iter().enumerate() {
            let bound = down.bind(graph, store);
            let col = graph.im2col(feat, 3, 2, 1);
            feat = bound.apply(graph, col);
            feat = graph.gelu(feat);
            if let Some(enh) = enhance.as_deref_mut() {
                feat = enh(graph, i + 1, feat)?;
            }
            stages.push(feat);
        }
        Ok([stages[0], stages[1], stages[2], stages[3]])
    }

    /// Spec-shaped entry point: accepts a `(B, 3, H, W)` image, converts
    /// to channels-last, and registers it as a differentiable input.
    pub fn encode_image(
        &self,
        graph: &mut Graph,
        store: &ParamStore,
        image: &Array4<f64>,
        enhance: Option<&mut StageEnhancer<'_>>,
    ) -> Result<[NodeId; 4]> {
        let (b, c, h, w) = image.dim();
        if c != 3 {
            return Err(Error::Shape(format!("expected 3 channels, got {c}")));
        }
        let cl = image
            .view()
            .permuted_axes([0, 2, 3, 1])
            .as_standard_layout()
            .to_owned()
            .into_dyn();
        let _ = (b, h, w);
        let node = graph.input(cl);
        self.forward(graph, store, node, enhance)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck;
    use ndarray::{Array, Array4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_image(b: usize, h: usize, w: usize, seed: u64) -> Array4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array::from_shape_simple_fn((b, 3, h, w), || rng.gen_range(0.0..1.0))
    }

    #[test]
    fn pyramid_shapes_follow_the_declared_schedule() {
        let mut store = ParamStore::new(1);
        let enc = VisualEncoder::register(&mut store, [32, 64, 128, 256]);
        let mut g = Graph::new();
        let image = rand_image(2, 64, 64, 3);
        let stages = enc.encode_image(&mut g, &store, &image, None).unwrap();
        let expect = [(16, 32), (8, 64), (4, 128), (2, 256)];
        for (stage, (hw, c)) in stages.iter().zip(expect) {
            assert_eq!(g.shape(*stage), &[2, hw, hw, c]);
        }
    }

    #[test]
    fn non_divisible_input_is_a_shape_error() {
        let mut store = ParamStore::new(1);
        let enc = VisualEncoder::register(&mut store, [8, 16, 24, 32]);
        let mut g = Graph::new();
        let image = rand_image(1, 48, 48, 4);
        assert!(matches!(
            enc.encode_image(&mut g, &store, &image, None),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn outputs_are_finite_and_deterministic() {
        let mut store = ParamStore::new(2);
        let enc = VisualEncoder::register(&mut store, [8, 16, 24, 32]);
        let image = rand_image(1, 32, 32, 5);
        let run = || {
            let mut g = Graph::new();
            let stages = enc.encode_image(&mut g, &store, &image, None).unwrap();
            g.value(stages[3]).clone()
        };
        let a = run();
        assert!(a.iter().all(|v| v.is_finite()));
        assert_eq!(a, run());
    }

    #[test]
    fn pixel_gradients_match_central_differences() {
        let mut store = ParamStore::new(3);
        let enc = VisualEncoder::register(&mut store, [4, 6, 8, 10]);
        let image = rand_image(1, 32, 32, 6);
        let head_weights = {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            ArrayD::from_shape_simple_fn(IxDyn(&[1, 1, 1, 10]), || rng.gen_range(-1.0..1.0))
        };
        let eval = |imgs: &[ndarray::ArrayD<f64>]| -> f64 {
            let mut g = Graph::new();
            let node = g.input(imgs[0].clone());
            let stages = enc.forward(&mut g, &store, node, None).unwrap();
            let shape = g.shape(stages[3]).to_vec();
            let tiled = head_weights.broadcast(IxDyn(&shape)).unwrap().to_owned();
            let wconst = g.constant(tiled);
            let prod = g.mul(stages[3], wconst);
            let loss = g.sum_all(prod);
            g.value(loss)[[]]
        };
        let cl = image
            .view()
            .permuted_axes([0, 2, 3, 1])
            .as_standard_layout()
            .to_owned()
            .into_dyn();

        let mut g = Graph::new();
        let node = g.input(cl.clone());
        let stages = enc.forward(&mut g, &store, node, None).unwrap();
        let shape = g.shape(stages[3]).to_vec();
        let tiled = head_weights.broadcast(IxDyn(&shape)).unwrap().to_owned();
        let wconst = g.constant(tiled);
        let prod = g.mul(stages[3], wconst);
        let loss = g.sum_all(prod);
        let grads = g.backward(loss);

        let outcome = gradcheck::compare(
            &eval,
            &[cl],
            &[grads.wrt(node)],
            gradcheck::CheckSettings::default(),
        );
        assert!(
            outcome.max_rel_error < 1e-3,
            "pixel gradient mismatch: {:.3e}",
            outcome.max_rel_error
        );
    }
}
