//! Mask decoder and training loss.
//!
//! The decoder upsamples the fused coarse feature back to input
//! resolution with per-scale skip concatenation and channel projection.
//! The loss is mean binary cross-entropy plus soft Dice (equal weights,
//! Dice smoothing constant 1), which is robust to the heavy
//! foreground/background imbalance of small-object masks.

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::params::{Init, Linear, ParamStore};
use ndarray::{ArrayD, ArrayViewD};

/// Decoder projections; channel widths derive from the encoder schedule.
#[derive(Clone, Debug)]
pub struct DecoderParams {
    levels: [Linear; 4],
    refine: Linear,
    head: Linear,
    pub channels: [usize; 4],
    pub c_prime: usize,
}

impl DecoderParams {
    pub fn register(store: &mut ParamStore, channels: [usize; 4], c_prime: usize) -> Self {
        let d = [
            (channels[3] / 2).max(4),
            (channels[2] / 2).max(4),
            (channels[1] / 2).max(4),
            (channels[0] / 2).max(4),
        ];
        let d0 = (channels[0] / 4).max(4);
        let levels = [
            // Coarsest first: operates on concat(fused, skip4).
            Linear::register(store, "dec.l4", 9 * (c_prime + channels[3]), d[0], true, Init::UniformFanIn),
            Linear::register(store, "dec.l3", 9 * (d[0] + channels[2]), d[1], true, Init::UniformFanIn),
            Linear::register(store, "dec.l2", 9 * (d[1] + channels[1]), d[2], true, Init::UniformFanIn),
            Linear::register(store, "dec.l1", 9 * (d[2] + channels[0]), d[3], true, Init::UniformFanIn),
        ];
        let refine = Linear::register(store, "dec.l0", 9 * d[3], d0, true, Init::UniformFanIn);
        let head = Linear::register(store, "dec.head", d0, 1, true, Init::UniformFanIn);
        Self {
            levels,
            refine,
            head,
            channels,
            c_prime,
        }
    }
}

/// Decodes the fused feature and the four skip features into logits at
/// `32 * H'` resolution, shape `(B, H0, W0)`.
pub fn decode_mask(
    graph: &mut Graph,
    fused: NodeId,
    skips: &[NodeId; 4],
    params: &DecoderParams,
    store: &ParamStore,
) -> Result<NodeId> {
    let fs = graph.shape(fused).to_vec();
    if fs.len() != 4 || fs[3] != params.c_prime {
        return Err(Error::Shape(format!(
            "fused feature must be (B,H',W',{}), got {fs:?}",
            params.c_prime
        )));
    }
    let (b, hp) = (fs[0], fs[1]);
    for (i, &skip) in skips.iter().enumerate() {
        let ss = graph.shape(skip).to_vec();
        let expect_hw = hp << (3 - i);
        if ss != [b, expect_hw, expect_hw, params.channels[i]] {
            return Err(Error::Shape(format!(
                "skip {i} must be (B,{expect_hw},{expect_hw},{}), got {ss:?}",
                params.channels[i]
            )));
        }
    }

    let conv = |graph: &mut Graph, x: NodeId, lin: &Linear, store: &ParamStore| {
        let bound = lin.bind(graph, store);
        let col = graph.im2col(x, 3, 1, 1);
        bound.apply(graph, col)
    };

    // Coarse-to-fine with skip concatenation.
    let mut h = graph.concat_last(&[fused, skips[3]]);
    h = conv(graph, h, &params.levels[0], store);
    h = graph.gelu(h);
    for (level, skip) in params.levels[1..].iter().zip([skips[2], skips[1], skips[0]]) {
        h = graph.upsample_nearest(h, 2);
        h = graph.concat_last(&[h, skip]);
        h = conv(graph, h, level, store);
        h = graph.gelu(h);
    }
    h = graph.upsample_nearest(h, 2);
    h = conv(graph, h, &params.refine, store);
    h = graph.gelu(h);
    h = graph.upsample_nearest(h, 2);
    let head = params.head.bind(graph, store);
    let logits = head.apply(graph, h);
    let shape = graph.shape(logits).to_vec();
    Ok(graph.reshape(logits, &[shape[0], shape[1], shape[2]]))
}

/// The loss terms as graph nodes.
pub struct LossNodes {
    pub total: NodeId,
    pub bce: NodeId,
    pub dice: NodeId,
}

/// Mean BCE-with-logits plus mean per-sample soft Dice, equally weighted.
pub fn segmentation_loss(
    graph: &mut Graph,
    logits: NodeId,
    target: &ArrayD<f64>,
) -> Result<LossNodes> {
    if graph.shape(logits) != target.shape() {
        return Err(Error::Shape(format!(
            "logits {:?} vs target {:?}",
            graph.shape(logits),
            target.shape()
        )));
    }
    if target.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidInput("target mask must be binary".into()));
    }
    let bce = graph.bce_with_logits_mean(logits, target.clone());
    let dice = graph.dice_with_logits_mean(logits, target.clone());
    let total = graph.add(bce, dice);
    Ok(LossNodes { total, bce, dice })
}

/// Soft Dice loss on probabilities (smoothing 1.0), averaged over the
/// batch axis; plain function shared with tests.
pub fn dice_on_probs(probs: ArrayViewD<'_, f64>, target: ArrayViewD<'_, f64>) -> f64 {
    assert_eq!(probs.shape(), target.shape());
    let b = probs.shape()[0];
    let inner: usize = probs.len() / b;
    let p = probs.to_shape((b, inner)).unwrap();
    let t = target.to_shape((b, inner)).unwrap();
    let mut acc = 0.0;
    for bi in 0..b {
        let mut i = 0.0;
        let mut ps = 0.0;
        let mut gs = 0.0;
        for (pv, tv) in p.row(bi).iter().zip(t.row(bi).iter()) {
            i += pv * tv;
            ps += pv;
            gs += tv;
        }
        acc += 1.0 - (2.0 * i + 1.0) / (ps + gs + 1.0);
    }
    acc / b as f64
}

/// Sigmoid threshold at 0.5, i.e. positive logits.
pub fn binarize_logits(logits: &ArrayD<f64>) -> ArrayD<bool> {
    logits.mapv(|v| v > 0.0)
}
