//! Category-dominated linguistic enhancement.
//!
//! Applied inside each encoder stage, this module first aligns visual
//! positions with the class-level component via scaled dot-product
//! attention and a residual gate, then repeats the same pattern with the
//! global component on the class-enhanced feature. The global pass always
//! consumes the class-enhanced feature, never the raw stage output, which
//! is what keeps category semantics dominant. The descriptive component
//! is excluded from this module by contract.
//!
//! Both gate networks end in a zero-initialized layer, so a freshly
//! initialized stack is exactly the identity and training starts from
//! the unmodified encoder.

use crate::autodiff::{Graph, NodeId};
use crate::encoders::{EncodedText, LinguisticComponent};
use crate::error::{Error, Result};
use crate::params::{Init, Linear, ParamStore};
use ndarray::Array2;

/// One attention-plus-gate pass (the class pass or the global pass).
#[derive(Clone, Debug)]
pub struct CdlePassParams {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub w: Linear,
    pub m: Linear,
    pub o: Linear,
    pub f1: Linear,
    pub f2: Linear,
}

impl CdlePassParams {
    pub fn register(store: &mut ParamStore, prefix: &str, d: usize, d_text: usize) -> Self {
        let lin = |store: &mut ParamStore, name: &str, i: usize, o: usize, init: Init| {
            Linear::register(store, &format!("{prefix}.{name}"), i, o, true, init)
        };
        Self {
            q: lin(store, "q", d, d, Init::UniformFanIn),
            k: lin(store, "k", d_text, d, Init::UniformFanIn),
            v: lin(store, "v", d_text, d, Init::UniformFanIn),
            w: lin(store, "w", d, d, Init::UniformFanIn),
            m: lin(store, "m", d, d, Init::UniformFanIn),
            o: lin(store, "o", d, d, Init::UniformFanIn),
            f1: lin(store, "f1", d, d, Init::UniformFanIn),
            // Zero-initialized gate output: the pass starts as identity.
            f2: lin(store, "f2", d, d, Init::Zeros),
        }
    }

    pub fn bind(&self, graph: &mut Graph, store: &ParamStore) -> CdlePassNodes {
        CdlePassNodes {
            q: self.q.bind(graph, store),
            k: self.k.bind(graph, store),
            v: self.v.bind(graph, store),
            w: self.w.bind(graph, store),
            m: self.m.bind(graph, store),
            o: self.o.bind(graph, store),
            f1: self.f1.bind(graph, store),
            f2: self.f2.bind(graph, store),
        }
    }
}

/// Graph-bound pass parameters.
#[derive(Clone, Copy, Debug)]
pub struct CdlePassNodes {
    pub q: crate::params::BoundLinear,
    pub k: crate::params::BoundLinear,
    pub v: crate::params::BoundLinear,
    pub w: crate::params::BoundLinear,
    pub m: crate::params::BoundLinear,
    pub o: crate::params::BoundLinear,
    pub f1: crate::params::BoundLinear,
    pub f2: crate::params::BoundLinear,
}

/// Attention result plus the row-normalized weights for inspection.
pub struct AttentionOutput {
    pub out: NodeId,
    /// `(B, HW, N)` attention weights; masked tokens hold exactly 0.
    pub weights: NodeId,
}

/// Gate result plus the modulation term `z` (the gated update is
/// `out = x + z * tanh_gate(z)`, so `|out - x| <= |z|` elementwise).
pub struct GateOutput {
    pub out: NodeId,
    pub modulation: NodeId,
}

/// Scaled dot-product attention from visual positions onto linguistic
/// tokens: `softmax(q(x) k(s)^T / sqrt(d_scale)) v(s)` with masked-token
/// columns excluded from the softmax.
pub fn category_attention(
    graph: &mut Graph,
    x: NodeId,
    tokens: NodeId,
    token_mask: &Array2<f64>,
    pass: &CdlePassNodes,
    d_scale: f64,
) -> Result<AttentionOutput> {
    let xs = graph.shape(x).to_vec();
    let ts = graph.shape(tokens).to_vec();
    if xs.len() != 3 || ts.len() != 3 {
        return Err(Error::Shape(format!(
            "expected (B,HW,D) and (B,N,Dt), got {xs:?} and {ts:?}"
        )));
    }
    if xs[0] != ts[0] || token_mask.dim() != (ts[0], ts[1]) {
        return Err(Error::Shape(format!(
            "batch/mask mismatch: x {xs:?}, tokens {ts:?}, mask {:?}",
            token_mask.dim()
        )));
    }
    if token_mask.rows().into_iter().any(|r| r.sum() == 0.0) {
        return Err(Error::InvalidInput(
            "attention requires at least one valid token per sample".into(),
        ));
    }
    if !(d_scale > 0.0) {
        return Err(Error::InvalidInput("d_scale must be positive".into()));
    }
    let q = pass.q.apply(graph, x);
    let k = pass.k.apply(graph, tokens);
    let v = pass.v.apply(graph, tokens);
    let kt = graph.transpose_last2(k);
    let scores = graph.bmm(q, kt);
    let scaled = graph.scale(scores, 1.0 / d_scale.sqrt());
    let weights = graph.softmax_masked_last(scaled, token_mask.clone());
    let out = graph.bmm(weights, v);
    Ok(AttentionOutput { out, weights })
}

/// Residual gate: `z = gelu(o(w(alpha) * gelu(m(x))))`, then
/// `out = x + z * tanh(f2(relu(f1(z))))`.
pub fn residual_gate(
    graph: &mut Graph,
    alpha: NodeId,
    x: NodeId,
    pass: &CdlePassNodes,
) -> Result<GateOutput> {
    if graph.shape(alpha) != graph.shape(x) {
        return Err(Error::Shape(format!(
            "gate inputs must share a shape, got {:?} vs {:?}",
            graph.shape(alpha),
            graph.shape(x)
        )));
    }
    let wa = pass.w.apply(graph, alpha);
    let mx = pass.m.apply(graph, x);
    let mx = graph.gelu(mx);
    let prod = graph.mul(wa, mx);
    let z = pass.o.apply(graph, prod);
    let z = graph.gelu(z);
    let g1 = pass.f1.apply(graph, z);
    let g1 = graph.relu(g1);
    let g2 = pass.f2.apply(graph, g1);
    let gate = graph.tanh_op(g2);
    let update = graph.mul(z, gate);
    let out = graph.add(x, update);
    Ok(GateOutput {
        out,
        modulation: z,
    })
}

/// Parameters for one encoder stage: the class pass then the global pass.
#[derive(Clone, Debug)]
pub struct CdleStage {
    pub class_pass: CdlePassParams,
    pub global_pass: CdlePassParams,
    pub d: usize,
}

impl CdleStage {
    pub fn register(store: &mut ParamStore, stage: usize, d: usize, d_text: usize) -> Self {
        Self {
            class_pass: CdlePassParams::register(store, &format!("cdle.s{stage}.cls"), d, d_text),
            global_pass: CdlePassParams::register(store, &format!("cdle.s{stage}.glob"), d, d_text),
            d,
        }
    }

    pub fn bind(&self, graph: &mut Graph, store: &ParamStore) -> CdleStageNodes {
        CdleStageNodes {
            class_pass: self.class_pass.bind(graph, store),
            global_pass: self.global_pass.bind(graph, store),
            d: self.d,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CdleStageNodes {
    pub class_pass: CdlePassNodes,
    pub global_pass: CdlePassNodes,
    pub d: usize,
}

/// Intermediate nodes of one stage forward, exposed for dataflow tests.
pub struct CdleStageTrace {
    pub class_attention: AttentionOutput,
    pub class_enhanced: NodeId,
    pub global_attention: AttentionOutput,
    pub out: NodeId,
}

/// Full stage forward: class pass strictly first, global pass consuming
/// the class-enhanced feature. Rejects descriptive-component inputs.
pub fn cdle_forward(
    graph: &mut Graph,
    x: NodeId,
    class_emb: &EncodedText,
    global_emb: &EncodedText,
    stage: &CdleStageNodes,
) -> Result<CdleStageTrace> {
    if class_emb.component == LinguisticComponent::Descriptive
        || global_emb.component == LinguisticComponent::Descriptive
    {
        return Err(Error::InvalidInput(
            "the descriptive component is excluded from category-dominated enhancement".into(),
        ));
    }
    let d_scale = stage.d as f64;
    let class_attention = category_attention(
        graph,
        x,
        class_emb.tokens,
        &class_emb.mask,
        &stage.class_pass,
        d_scale,
    )?;
    let class_gate = residual_gate(graph, class_attention.out, x, &stage.class_pass)?;
    let class_enhanced = class_gate.out;

    let global_attention = category_attention(
        graph,
        class_enhanced,
        global_emb.tokens,
        &global_emb.mask,
        &stage.global_pass,
        d_scale,
    )?;
    let global_gate = residual_gate(
        graph,
        global_attention.out,
        class_enhanced,
        &stage.global_pass,
    )?;
    Ok(CdleStageTrace {
        class_attention,
        class_enhanced,
        global_attention,
        out: global_gate.out,
    })
}

/// Per-stage stack over the encoder's channel schedule.
#[derive(Clone, Debug)]
pub struct CdleStack {
    pub stages: Vec<CdleStage>,
}

impl CdleStack {
    pub fn register(store: &mut ParamStore, channels: &[usize], d_text: usize) -> Self {
        Self {
            stages: channels
                .iter()
                .enumerate()
                .map(|(i, &d)| CdleStage::register(store, i, d, d_text))
                .collect(),
        }
    }

    pub fn bind(&self, graph: &mut Graph, store: &ParamStore) -> Vec<CdleStageNodes> {
        self.stages.iter().map(|s| s.bind(graph, store)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck;
    use ndarray::{arr2, Array, ArrayD, IxDyn};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randn(shape: &[usize], seed: u64) -> ArrayD<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array::from_shape_simple_fn(IxDyn(shape), || rng.gen_range(-1.0..1.0))
    }

    fn pass_params(store: &mut ParamStore, d: usize, d_text: usize) -> CdlePassParams {
        CdlePassParams::register(store, "t.pass", d, d_text)
    }

    /// Overwrites a linear map with explicit weights.
    fn set_linear(store: &mut ParamStore, lin: &Linear, w: ArrayD<f64>) {
        store.set(&lin.w_name, w);
    }

    fn encoded(
        g: &mut Graph,
        tokens: ArrayD<f64>,
        mask: Array2<f64>,
        component: LinguisticComponent,
    ) -> EncodedText {
        let t = g.input(tokens);
        let pooled = g.masked_mean_tokens(t, mask.clone());
        EncodedText {
            tokens: t,
            pooled,
            mask,
            component,
            embedded: t,
        }
    }

    #[test]
    fn hand_softmax_case_two_keys() {
        // 1-dim: query 2, keys {1, 3}, unit projections, d_scale 1:
        // weights = softmax([2, 6]) = (0.01799, 0.98201).
        let mut store = ParamStore::new(0);
        let pass = pass_params(&mut store, 1, 1);
        let eye = arr2(&[[1.0]]).into_dyn();
        for lin in [&pass.q, &pass.k, &pass.v] {
            set_linear(&mut store, lin, eye.clone());
        }
        let mut g = Graph::new();
        let nodes = pass.bind(&mut g, &store);
        let x = g.input(randn(&[1, 1, 1], 0).mapv(|_| 2.0));
        let tokens = g.input(
            ArrayD::from_shape_vec(IxDyn(&[1, 2, 1]), vec![1.0, 3.0]).unwrap(),
        );
        let mask = Array2::ones((1, 2));
        let att = category_attention(&mut g, x, tokens, &mask, &nodes, 1.0).unwrap();
        let w = g.value(att.weights);
        assert!((w[[0, 0, 0]] - 0.01799).abs() < 1e-4);
        assert!((w[[0, 0, 1]] - 0.98201).abs() < 1e-4);
    }

    #[test]
    fn single_token_attention_is_exact_value_projection() {
        let mut store = ParamStore::new(1);
        let pass = pass_params(&mut store, 3, 2);
        let mut g = Graph::new();
        let nodes = pass.bind(&mut g, &store);
        let x = g.input(randn(&[1, 5, 3], 2));
        let tokens_arr = randn(&[1, 1, 2], 3);
        let tokens = g.input(tokens_arr.clone());
        let mask = Array2::ones((1, 1));
        let att = category_attention(&mut g, x, tokens, &mask, &nodes, 3.0).unwrap();
        let w = g.value(att.weights);
        for p in 0..5 {
            assert_eq!(w[[0, p, 0]], 1.0, "softmax over one key is exactly 1");
        }
        // Every position receives the projected token value.
        let vtok = {
            let mut g2 = Graph::new();
            let n2 = pass.bind(&mut g2, &store);
            let t = g2.input(tokens_arr);
            let v = n2.v.apply(&mut g2, t);
            g2.value(v).clone()
        };
        let out = g.value(att.out);
        for p in 0..5 {
            for d in 0..3 {
                assert!((out[[0, p, d]] - vtok[[0, 0, d]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_keys_share_weight_equally() {
        let mut store = ParamStore::new(2);
        let pass = pass_params(&mut store, 2, 2);
        let mut g = Graph::new();
        let nodes = pass.bind(&mut g, &store);
        let x = g.input(randn(&[1, 4, 2], 4));
        let tok = randn(&[1, 1, 2], 5);
        let two = ndarray::concatenate(
            ndarray::Axis(1),
            &[tok.view(), tok.view()],
        )
        .unwrap()
        .as_standard_layout()
        .to_owned();
        let tokens = g.input(two);
        let mask = Array2::ones((1, 2));
        let att = category_attention(&mut g, x, tokens, &mask, &nodes, 2.0).unwrap();
        let w = g.value(att.weights);
        for p in 0..4 {
            assert!((w[[0, p, 0]] - 0.5).abs() < 1e-12);
            assert!((w[[0, p, 1]] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_tokens_receive_exactly_zero_weight() {
        let mut store = ParamStore::new(3);
        let pass = pass_params(&mut store, 2, 2);
        let mut g = Graph::new();
        let nodes = pass.bind(&mut g, &store);
        let x = g.input(randn(&[2, 3, 2], 6));
        let tokens = g.input(randn(&[2, 4, 2], 7));
        let mut mask = Array2::ones((2, 4));
        mask[[0, 3]] = 0.0;
        mask[[1, 1]] = 0.0;
        mask[[1, 2]] = 0.0;
        let att = category_attention(&mut g, x, tokens, &mask, &nodes, 2.0).unwrap();
        let w = g.value(att.weights);
        for p in 0..3 {
            assert_eq!(w[[0, p, 3]], 0.0);
            assert_eq!(w[[1, p, 1]], 0.0);
            assert_eq!(w[[1, p, 2]], 0.0);
            let s0: f64 = (0..4).map(|n| w[[0, p, n]]).sum();
            assert!((s0 - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn fully_masked_input_is_invalid() {
        let mut store = ParamStore::new(4);
        let pass = pass_params(&mut store, 2, 2);
        let mut g = Graph::new();
        let nodes = pass.bind(&mut g, &store);
        let x = g.input(randn(&[1, 3, 2], 8));
        let tokens = g.input(randn(&[1, 2, 2], 9));
        let mask = Array2::zeros((1, 2));
        assert!(matches!(
            category_attention(&mut g, x, tokens, &mask, &nodes, 2.0),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn zeroed_gate_is_exact_identity() {
        // f2 is zero-initialized by default, so the whole gate vanishes.
        let mut store = ParamStore::new(5);
        let pass = pass_params(&mut store, 3, 3);
        let mut g = Graph::new();
        let nodes = pass.bind(&mut g, &store);
        let x_arr = randn(&[2, 4, 3], 10);
        let x = g.input(x_arr.clone());
        let alpha = g.input(randn(&[2, 4, 3], 11));
        let gate = residual_gate(&mut g, alpha, x, &nodes).unwrap();
        assert_eq!(g.value(gate.out), &x_arr);
    }

    #[test]
    fn gate_update_is_bounded_by_modulation() {
        let mut store = ParamStore::new(6);
        let pass = pass_params(&mut store, 3, 3);
        // Give the gate a non-zero output layer.
        set_linear(&mut store, &pass.f2, randn(&[3, 3], 12));
        let mut g = Graph::new();
        let nodes = pass.bind(&mut g, &store);
        let x_arr = randn(&[2, 4, 3], 13);
        let x = g.input(x_arr.clone());
        let alpha = g.input(randn(&[2, 4, 3], 14));
        let gate = residual_gate(&mut g, alpha, x, &nodes).unwrap();
        let out = g.value(gate.out);
        let z = g.value(gate.modulation);
        for (i, (&o, &zi)) in out.iter().zip(z.iter()).enumerate() {
            let xi = x_arr.as_slice().unwrap()[i];
            assert!(
                (o - xi).abs() <= zi.abs() + 1e-12,
                "|out - x| must stay within |z|"
            );
        }
    }

    #[test]
    fn scalar_trace_matches_reference_computation() {
        // All maps 1x1 with unit weight and zero bias; trace the math by
        // hand: z = gelu(alpha * gelu(x)), out = x + z * tanh(relu(z)).
        let gelu = |v: f64| 0.5 * v * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (v + 0.044715 * v * v * v)).tanh());
        let mut store = ParamStore::new(7);
        let pass = pass_params(&mut store, 1, 1);
        let eye = arr2(&[[1.0]]).into_dyn();
        for lin in [&pass.w, &pass.m, &pass.o, &pass.f1, &pass.f2] {
            set_linear(&mut store, lin, eye.clone());
        }
        let mut g = Graph::new();
        let nodes = pass.bind(&mut g, &store);
        let (xv, av) = (0.7f64, -0.4f64);
        let x = g.input(ArrayD::from_elem(IxDyn(&[1, 1, 1]), xv));
        let alpha = g.input(ArrayD::from_elem(IxDyn(&[1, 1, 1]), av));
        let gate = residual_gate(&mut g, alpha, x, &nodes).unwrap();
        let z = gelu(av * gelu(xv));
        let expect = xv + z * (z.max(0.0)).tanh();
        assert!((g.value(gate.out)[[0, 0, 0]] - expect).abs() < 1e-12);
    }

    fn stage_fixture(seed: u64, d: usize, d_text: usize) -> (ParamStore, CdleStage) {
        let mut store = ParamStore::new(seed);
        let stage = CdleStage::register(&mut store, 0, d, d_text);
        (store, stage)
    }

    #[test]
    fn zeroed_stage_is_exact_identity_and_shape_preserving() {
        let (store, stage) = stage_fixture(8, 4, 3);
        let mut g = Graph::new();
        let nodes = stage.bind(&mut g, &store);
        let x_arr = randn(&[2, 6, 4], 20);
        let x = g.input(x_arr.clone());
        let c = encoded(&mut g, randn(&[2, 1, 3], 21), Array2::ones((2, 1)), LinguisticComponent::Class);
        let l = encoded(&mut g, randn(&[2, 5, 3], 22), Array2::ones((2, 5)), LinguisticComponent::Global);
        let trace = cdle_forward(&mut g, x, &c, &l, &nodes).unwrap();
        assert_eq!(g.shape(trace.out), &[2, 6, 4]);
        assert_eq!(g.value(trace.out), &x_arr);
    }

    #[test]
    fn descriptive_component_is_rejected_at_the_interface() {
        let (store, stage) = stage_fixture(9, 3, 3);
        let mut g = Graph::new();
        let nodes = stage.bind(&mut g, &store);
        let x = g.input(randn(&[1, 4, 3], 23));
        let c = encoded(&mut g, randn(&[1, 1, 3], 24), Array2::ones((1, 1)), LinguisticComponent::Class);
        let d = encoded(&mut g, randn(&[1, 4, 3], 25), Array2::ones((1, 4)), LinguisticComponent::Descriptive);
        assert!(matches!(
            cdle_forward(&mut g, x, &c, &d, &nodes),
            Err(Error::InvalidInput(_))
        ));
        let l = encoded(&mut g, randn(&[1, 4, 3], 26), Array2::ones((1, 4)), LinguisticComponent::Global);
        let d2 = encoded(&mut g, randn(&[1, 1, 3], 27), Array2::ones((1, 1)), LinguisticComponent::Descriptive);
        assert!(cdle_forward(&mut g, x, &d2, &l, &nodes).is_err());
    }

    #[test]
    fn global_pass_consumes_the_class_enhanced_feature() {
        // Sentinel: configure the class pass to add a constant shift (its
        // gate fully open, modulation constant), then verify the global
        // attention queries were computed from f^c and not from raw x.
        let (mut store, stage) = stage_fixture(10, 2, 2);
        // Class pass: z = gelu(o(...)) with o.w = 0 and o.b = 5 makes the
        // modulation a constant; f1/f2 large makes tanh(..) ~ 1.
        store.set("cdle.s0.cls.o.w", ArrayD::zeros(IxDyn(&[2, 2])));
        store.set(
            "cdle.s0.cls.o.b",
            ArrayD::from_elem(IxDyn(&[2]), 5.0),
        );
        store.set("cdle.s0.cls.f1.w", (arr2(&[[10.0, 0.0], [0.0, 10.0]])).into_dyn());
        store.set("cdle.s0.cls.f2.w", (arr2(&[[10.0, 0.0], [0.0, 10.0]])).into_dyn());
        let mut g = Graph::new();
        let nodes = stage.bind(&mut g, &store);
        let x_arr = randn(&[1, 3, 2], 30);
        let x = g.input(x_arr.clone());
        let c = encoded(&mut g, randn(&[1, 1, 2], 31), Array2::ones((1, 1)), LinguisticComponent::Class);
        let l = encoded(&mut g, randn(&[1, 4, 2], 32), Array2::ones((1, 4)), LinguisticComponent::Global);
        let trace = cdle_forward(&mut g, x, &c, &l, &nodes).unwrap();

        // f^c must differ from x (the sentinel shift fired).
        let fc = g.value(trace.class_enhanced).clone();
        assert!(fc.iter().zip(x_arr.iter()).all(|(a, b)| (a - b).abs() > 0.1));

        // Recompute the global attention directly from f^c: identical.
        let att_from_fc = {
            let fc_node = g.input(fc);
            let att = category_attention(&mut g, fc_node, l.tokens, &l.mask, &nodes.global_pass, 2.0).unwrap();
            g.value(att.out).clone()
        };
        assert_eq!(g.value(trace.global_attention.out), &att_from_fc);

        // And it must differ from attention computed on raw x.
        let att_from_x = {
            let x_node = g.input(x_arr);
            let att = category_attention(&mut g, x_node, l.tokens, &l.mask, &nodes.global_pass, 2.0).unwrap();
            g.value(att.out).clone()
        };
        assert_ne!(g.value(trace.global_attention.out), &att_from_x);
    }

    #[test]
    fn stage_gradients_match_finite_differences() {
        let (mut store, stage) = stage_fixture(11, 3, 2);
        // Non-trivial gates so every path carries gradient.
        store.set("cdle.s0.cls.f2.w", randn(&[3, 3], 40) * 0.3);
        store.set("cdle.s0.glob.f2.w", randn(&[3, 3], 41) * 0.3);
        let x = randn(&[1, 4, 3], 42);
        let c = randn(&[1, 2, 2], 43);
        let l = randn(&[1, 3, 2], 44);
        let cmask = Array2::ones((1, 2));
        let lmask = Array2::ones((1, 3));
        let head = randn(&[1, 4, 3], 45);

        let run = |xa: &ArrayD<f64>, ca: &ArrayD<f64>, la: &ArrayD<f64>| {
            let mut g = Graph::new();
            let nodes = stage.bind(&mut g, &store);
            let xn = g.input(xa.clone());
            let ce = encoded(&mut g, ca.clone(), cmask.clone(), LinguisticComponent::Class);
            let le = encoded(&mut g, la.clone(), lmask.clone(), LinguisticComponent::Global);
            let trace = cdle_forward(&mut g, xn, &ce, &le, &nodes).unwrap();
            let hw = g.constant(head.clone());
            let prod = g.mul(trace.out, hw);
            let loss = g.sum_all(prod);
            (g, xn, ce.tokens, le.tokens, loss)
        };

        let (g, xn, cn, ln, loss) = run(&x, &c, &l);
        let grads = g.backward(loss);
        let f = |vals: &[ArrayD<f64>]| {
            let (g, _, _, _, loss) = run(&vals[0], &vals[1], &vals[2]);
            g.value(loss)[[]]
        };
        gradcheck::assert_close(
            &f,
            &[x.clone(), c.clone(), l.clone()],
            &[grads.wrt(xn), grads.wrt(cn), grads.wrt(ln)],
            1e-3,
            "cdle stage wrt inputs",
        );
    }
}
