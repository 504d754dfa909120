//! Adaptive reasoning fusion across scales.
//!
//! The four-stage pyramid is pooled to the coarsest resolution, projected
//! to a shared channel width, and merged by summation. Three parallel
//! attention branches then let the merged feature attend to the global,
//! descriptive, and class-level components; a scale reasoning gate
//! produces softmax weights over the branches, and a channel-fusion
//! projection recombines them. The result is added back residually,
//! pushed through a feed-forward block, and redistributed to the original
//! four resolutions through per-scale sigmoid self-gates (the simplified
//! scale gate fusion), which become the decoder's skip features.

use crate::autodiff::{Graph, NodeId};
use crate::encoders::{EncodedText, LinguisticComponent};
use crate::error::{Error, Result};
use crate::params::{BoundLinear, Init, Linear, ParamStore};
use ndarray::Array2;

/// Branch identity, in the fixed (l, d, c) order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BranchKind {
    Global,
    Descriptive,
    Class,
}

impl BranchKind {
    pub const ORDER: [BranchKind; 3] = [
        BranchKind::Global,
        BranchKind::Descriptive,
        BranchKind::Class,
    ];

    fn tag(&self) -> &'static str {
        match self {
            BranchKind::Global => "l",
            BranchKind::Descriptive => "d",
            BranchKind::Class => "c",
        }
    }

    fn component(&self) -> LinguisticComponent {
        match self {
            BranchKind::Global => LinguisticComponent::Global,
            BranchKind::Descriptive => LinguisticComponent::Descriptive,
            BranchKind::Class => LinguisticComponent::Class,
        }
    }
}

/// Projections of one linguistic branch.
#[derive(Clone, Debug)]
pub struct ArfbBranchParams {
    pub kind: BranchKind,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

impl ArfbBranchParams {
    fn register(store: &mut ParamStore, kind: BranchKind, c_prime: usize, d_text: usize) -> Self {
        let p = format!("arfm.branch.{}", kind.tag());
        Self {
            kind,
            q: Linear::register(store, &format!("{p}.q"), c_prime, c_prime, true, Init::UniformFanIn),
            k: Linear::register(store, &format!("{p}.k"), d_text, c_prime, true, Init::UniformFanIn),
            v: Linear::register(store, &format!("{p}.v"), d_text, c_prime, true, Init::UniformFanIn),
            o: Linear::register(store, &format!("{p}.o"), c_prime, c_prime, true, Init::UniformFanIn),
        }
    }
}

/// All fusion-module parameters.
#[derive(Clone, Debug)]
pub struct ArfmParams {
    pub align: Vec<Linear>,
    pub branches: Vec<ArfbBranchParams>,
    pub srg1: Linear,
    pub srg2: Linear,
    pub fuse: Linear,
    pub ffn1: Linear,
    pub ffn2: Linear,
    pub scale_gates: Vec<Linear>,
    pub c_prime: usize,
    pub heads: usize,
}

impl ArfmParams {
    /// `enabled` toggles the (l, d, c) branches; the SRG emits one weight
    /// per enabled branch and the fusion projection compresses their
    /// concatenation.
    pub fn register(
        store: &mut ParamStore,
        channels: &[usize; 4],
        d_text: usize,
        heads: usize,
        enabled: [bool; 3],
    ) -> Self {
        let c_prime = channels[3];
        assert!(c_prime % heads == 0, "head count must divide the channel width");
        let n_branches = enabled.iter().filter(|&&e| e).count();
        assert!(n_branches > 0, "at least one branch must be enabled");
        let align = (0..4)
            .map(|i| {
                Linear::register(
                    store,
                    &format!("arfm.align.{i}"),
                    channels[i],
                    c_prime,
                    true,
                    Init::UniformFanIn,
                )
            })
            .collect();
        let branches = BranchKind::ORDER
            .iter()
            .zip(enabled)
            .filter(|(_, e)| *e)
            .map(|(kind, _)| ArfbBranchParams::register(store, *kind, c_prime, d_text))
            .collect();
        let hidden = (c_prime / 4).max(2);
        Self {
            align,
            branches,
            srg1: Linear::register(store, "arfm.srg.1", c_prime, hidden, true, Init::UniformFanIn),
            srg2: Linear::register(store, "arfm.srg.2", hidden, n_branches, true, Init::UniformFanIn),
            fuse: Linear::register(store, "arfm.fuse", n_branches * c_prime, c_prime, true, Init::UniformFanIn),
            ffn1: Linear::register(store, "arfm.ffn.1", c_prime, 2 * c_prime, true, Init::UniformFanIn),
            ffn2: Linear::register(store, "arfm.ffn.2", 2 * c_prime, c_prime, true, Init::UniformFanIn),
            scale_gates: (0..4)
                .map(|i| {
                    Linear::register(
                        store,
                        &format!("arfm.scalegate.{i}"),
                        c_prime,
                        channels[i],
                        true,
                        Init::UniformFanIn,
                    )
                })
                .collect(),
            c_prime,
            heads,
        }
    }
}

/// Pyramid after pooling/projection to the shared shape, plus the merged
/// sum used by the reasoning branches.
pub struct AlignedPyramid {
    pub aligned: [NodeId; 4],
    pub merged: NodeId,
    pub target_hw: usize,
}

/// Pools every scale to the coarsest spatial size, projects each to the
/// shared channel width, and merges by elementwise sum.
pub fn align_pyramid(
    graph: &mut Graph,
    pyramid: &[NodeId; 4],
    align: &[BoundLinear],
    target_hw: usize,
) -> Result<AlignedPyramid> {
    if align.len() != 4 {
        return Err(Error::Config("alignment needs four projections".into()));
    }
    let mut aligned = Vec::with_capacity(4);
    for (i, &stage) in pyramid.iter().enumerate() {
        let shape = graph.shape(stage).to_vec();
        if shape.len() != 4 {
            return Err(Error::Shape(format!(
                "stage {i} must be (B,H,W,C), got {shape:?}"
            )));
        }
        let (h, w) = (shape[1], shape[2]);
        if target_hw > h || target_hw > w {
            return Err(Error::Config(format!(
                "alignment target {target_hw} exceeds stage {i} size {h}x{w}"
            )));
        }
        if h % target_hw != 0 || w % target_hw != 0 {
            return Err(Error::Config(format!(
                "stage {i} size {h}x{w} is not a multiple of the target {target_hw}"
            )));
        }
        let factor = h / target_hw;
        let pooled = if factor > 1 {
            graph.avg_pool(stage, factor)
        } else {
            stage
        };
        aligned.push(align[i].apply(graph, pooled));
    }
    let mut merged = aligned[0];
    for &a in &aligned[1..] {
        merged = graph.add(merged, a);
    }
    Ok(AlignedPyramid {
        aligned: [aligned[0], aligned[1], aligned[2], aligned[3]],
        merged,
        target_hw,
    })
}

/// One reasoning branch: masked multi-head attention from the flattened
/// merged feature onto the branch's linguistic tokens.
pub struct BranchOutput {
    pub kind: BranchKind,
    pub out: NodeId,
    /// `(B * heads, P, N)` attention weights.
    pub weights: NodeId,
}

fn multi_head_attention(
    graph: &mut Graph,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    mask: &Array2<f64>,
    heads: usize,
) -> (NodeId, NodeId) {
    let (b, p, e) = {
        let s = graph.shape(q);
        (s[0], s[1], s[2])
    };
    let n = graph.shape(k)[1];
    let dh = e / heads;
    let split = |graph: &mut Graph, x: NodeId, len: usize| {
        let r = graph.reshape(x, &[b, len, heads, dh]);
        let t = graph.permute0213(r);
        graph.reshape(t, &[b * heads, len, dh])
    };
    let qh = split(graph, q, p);
    let kh = split(graph, k, n);
    let vh = split(graph, v, n);
    let mut mask_rep = Array2::<f64>::zeros((b * heads, n));
    for bi in 0..b {
        for hi in 0..heads {
            for ni in 0..n {
                mask_rep[[bi * heads + hi, ni]] = mask[[bi, ni]];
            }
        }
    }
    let kt = graph.transpose_last2(kh);
    let scores = graph.bmm(qh, kt);
    let scaled = graph.scale(scores, 1.0 / (dh as f64).sqrt());
    let weights = graph.softmax_masked_last(scaled, mask_rep);
    let ctx = graph.bmm(weights, vh);
    let r = graph.reshape(ctx, &[b, heads, p, dh]);
    let t = graph.permute0213(r);
    let merged = graph.reshape(t, &[b, p, e]);
    (merged, weights)
}

/// Runs one branch on the flattened `(B, P, C')` merged feature.
pub fn arfb_branch(
    graph: &mut Graph,
    merged_flat: NodeId,
    text: &EncodedText,
    branch: &ArfbBranchParams,
    store: &ParamStore,
    heads: usize,
) -> Result<BranchOutput> {
    if text.component != branch.kind.component() {
        return Err(Error::InvalidInput(format!(
            "branch {:?} was handed a {:?} embedding",
            branch.kind, text.component
        )));
    }
    if text.mask.rows().into_iter().any(|r| r.sum() == 0.0) {
        return Err(Error::InvalidInput(
            "attention requires at least one valid token per sample".into(),
        ));
    }
    let q = branch.q.bind(graph, store).apply(graph, merged_flat);
    let k = branch.k.bind(graph, store).apply(graph, text.tokens);
    let v = branch.v.bind(graph, store).apply(graph, text.tokens);
    let (ctx, weights) = multi_head_attention(graph, q, k, v, &text.mask, heads);
    let out = branch.o.bind(graph, store).apply(graph, ctx);
    Ok(BranchOutput {
        kind: branch.kind,
        out,
        weights,
    })
}

/// Scale reasoning gate: global average pooling, two projections with a
/// ReLU between, then a softmax over the branch axis. Returns the
/// `(B, n_branches)` weights (positive, rows summing to 1).
pub fn scale_reasoning_gate(
    graph: &mut Graph,
    merged: NodeId,
    srg1: BoundLinear,
    srg2: BoundLinear,
) -> Result<NodeId> {
    if graph.shape(merged).len() != 4 {
        return Err(Error::Shape("gate input must be (B,H,W,C)".into()));
    }
    let b = graph.shape(merged)[0];
    let pooled = graph.mean_hw(merged);
    let hidden = srg1.apply(graph, pooled);
    let hidden = graph.relu(hidden);
    let logits = srg2.apply(graph, hidden);
    let k = graph.shape(logits)[1];
    let r = graph.reshape(logits, &[b, 1, k]);
    let soft = graph.softmax_masked_last(r, Array2::ones((b, k)));
    Ok(graph.reshape(soft, &[b, k]))
}

/// Channel fusion: per-sample branch weighting, channel concatenation,
/// then a compression projection back to `C'`.
pub fn fuse(
    graph: &mut Graph,
    branch_outs: &[NodeId],
    weights: NodeId,
    fuse_proj: BoundLinear,
) -> Result<NodeId> {
    if branch_outs.is_empty() {
        return Err(Error::InvalidInput("fuse requires at least one branch".into()));
    }
    let first = graph.shape(branch_outs[0]).to_vec();
    for &o in branch_outs {
        if graph.shape(o) != first.as_slice() {
            return Err(Error::Shape("branch outputs must be shape-identical".into()));
        }
    }
    if graph.shape(weights) != [first[0], branch_outs.len()] {
        return Err(Error::Shape(format!(
            "weights must be (B, {}), got {:?}",
            branch_outs.len(),
            graph.shape(weights)
        )));
    }
    let scaled: Vec<NodeId> = branch_outs
        .iter()
        .enumerate()
        .map(|(i, &o)| {
            let w = graph.slice_col(weights, i);
            graph.scale_rows(o, w)
        })
        .collect();
    let cat = graph.concat_last(&scaled);
    Ok(fuse_proj.apply(graph, cat))
}

/// Redistributes the fused feature to the four original resolutions: a
/// per-scale channel projection with a sigmoid self-gate, nearest
/// upsampling, and a residual add onto the raw pyramid.
pub fn scale_gate_transform(
    graph: &mut Graph,
    fused: NodeId,
    pyramid: &[NodeId; 4],
    gates: &[BoundLinear],
    target_hw: usize,
) -> Result<[NodeId; 4]> {
    if gates.len() != 4 {
        return Err(Error::Config("scale gate needs four projections".into()));
    }
    let mut out = Vec::with_capacity(4);
    for (i, &stage) in pyramid.iter().enumerate() {
        let h = graph.shape(stage)[1];
        let proj = gates[i].apply(graph, fused);
        let gate = graph.sigmoid(proj);
        let gated = graph.mul(proj, gate);
        let up = if h > target_hw {
            graph.upsample_nearest(gated, h / target_hw)
        } else {
            gated
        };
        out.push(graph.add(stage, up));
    }
    Ok([out[0], out[1], out[2], out[3]])
}

/// Linguistic inputs for the enabled branches, in (l, d, c) order.
pub struct BranchInputs<'a> {
    pub global: Option<&'a EncodedText>,
    pub descriptive: Option<&'a EncodedText>,
    pub class: Option<&'a EncodedText>,
}

impl<'a> BranchInputs<'a> {
    fn get(&self, kind: BranchKind) -> Option<&'a EncodedText> {
        match kind {
            BranchKind::Global => self.global,
            BranchKind::Descriptive => self.descriptive,
            BranchKind::Class => self.class,
        }
    }
}

/// Everything the decoder (and the metrics log) needs from the module.
pub struct ArfmOutput {
    /// Language-fused coarse feature `(B, H', W', C')`.
    pub fused: NodeId,
    /// Scale-gated pyramid at the original four resolutions.
    pub skips: [NodeId; 4],
    /// `(B, n_branches)` reasoning-gate weights.
    pub srg_weights: NodeId,
    pub branch_kinds: Vec<BranchKind>,
}

/// Full module forward: align, reason per branch, weight, fuse, residual
/// add, feed-forward, then scale gate fusion.
pub fn arfm_forward(
    graph: &mut Graph,
    pyramid: &[NodeId; 4],
    inputs: &BranchInputs<'_>,
    params: &ArfmParams,
    store: &ParamStore,
) -> Result<ArfmOutput> {
    let target_hw = graph.shape(pyramid[3])[1];
    let align_nodes: Vec<BoundLinear> =
        params.align.iter().map(|l| l.bind(graph, store)).collect();
    let aligned = align_pyramid(graph, pyramid, &align_nodes, target_hw)?;
    let (b, hp, wp, c) = {
        let s = graph.shape(aligned.merged);
        (s[0], s[1], s[2], s[3])
    };
    let flat = graph.reshape(aligned.merged, &[b, hp * wp, c]);

    let mut branch_outs = Vec::new();
    let mut branch_kinds = Vec::new();
    for branch in &params.branches {
        let text = inputs.get(branch.kind).ok_or_else(|| {
            Error::Config(format!("branch {:?} enabled but no embedding given", branch.kind))
        })?;
        let out = arfb_branch(graph, flat, text, branch, store, params.heads)?;
        branch_outs.push(out.out);
        branch_kinds.push(out.kind);
    }

    let srg1 = params.srg1.bind(graph, store);
    let srg2 = params.srg2.bind(graph, store);
    let srg_weights = scale_reasoning_gate(graph, aligned.merged, srg1, srg2)?;

    let fuse_proj = params.fuse.bind(graph, store);
    let fused_flat = fuse(graph, &branch_outs, srg_weights, fuse_proj)?;
    let fused_spatial = graph.reshape(fused_flat, &[b, hp, wp, c]);

    let residual = graph.add(aligned.merged, fused_spatial);
    let ffn1 = params.ffn1.bind(graph, store);
    let ffn2 = params.ffn2.bind(graph, store);
    let h = ffn1.apply(graph, residual);
    let h = graph.relu(h);
    let h = ffn2.apply(graph, h);
    let enhanced = graph.add(residual, h);

    let gate_nodes: Vec<BoundLinear> = params
        .scale_gates
        .iter()
        .map(|l| l.bind(graph, store))
        .collect();
    let skips = scale_gate_transform(graph, enhanced, pyramid, &gate_nodes, target_hw)?;

    Ok(ArfmOutput {
        fused: enhanced,
        skips,
        srg_weights,
        branch_kinds,
    })
}
