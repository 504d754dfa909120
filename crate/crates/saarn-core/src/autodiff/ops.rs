//! Tape operations: eager forward evaluation plus a recorded backward.

use super::{BackCtx, Graph, NodeId};
use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayD, ArrayView2, Axis, Ix2, Ix3, IxDyn};

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C0: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C1: f64 = 0.044_715;

fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C0 * (x + GELU_C1 * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let u = GELU_C0 * (x + GELU_C1 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C0 * (1.0 + 3.0 * GELU_C1 * x * x)
}

/// Views an array as `(rows, cols)`; the array must be contiguous.
fn view2(a: &ArrayD<f64>, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    a.view()
        .into_shape((rows, cols))
        .expect("contiguous reshape")
}

fn matmul2(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.nrows(), b.ncols()));
    general_mat_mul(1.0, &a, &b, 0.0, &mut out);
    out
}

impl Graph {
    /// `a + b`, identical shapes.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = {
            let (va, vb) = (self.value(a), self.value(b));
            assert_eq!(va.shape(), vb.shape(), "add shape mismatch");
            va + vb
        };
        self.push(
            out,
            vec![a, b],
            Some(Box::new(|ctx: &BackCtx| {
                vec![Some(ctx.grad.clone()), Some(ctx.grad.clone())]
            })),
            false,
        )
    }

    /// `a - b`, identical shapes.
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = {
            let (va, vb) = (self.value(a), self.value(b));
            assert_eq!(va.shape(), vb.shape(), "sub shape mismatch");
            va - vb
        };
        self.push(
            out,
            vec![a, b],
            Some(Box::new(|ctx: &BackCtx| {
                vec![Some(ctx.grad.clone()), Some(ctx.grad.map(|g| -g))]
            })),
            false,
        )
    }

    /// Elementwise product, identical shapes.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = {
            let (va, vb) = (self.value(a), self.value(b));
            assert_eq!(va.shape(), vb.shape(), "mul shape mismatch");
            va * vb
        };
        self.push(
            out,
            vec![a, b],
            Some(Box::new(|ctx: &BackCtx| {
                let da = ctx.wants[0].then(|| ctx.grad * ctx.parents[1]);
                let db = ctx.wants[1].then(|| ctx.grad * ctx.parents[0]);
                vec![da, db]
            })),
            false,
        )
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let out = self.value(a) * factor;
        self.push(
            out,
            vec![a],
            Some(Box::new(move |ctx: &BackCtx| vec![Some(ctx.grad * factor)])),
            false,
        )
    }

    /// Adds a 1-D bias over the last axis.
    pub fn add_bias_last(&mut self, x: NodeId, b: NodeId) -> NodeId {
        let out = {
            let (vx, vb) = (self.value(x), self.value(b));
            assert_eq!(vb.ndim(), 1, "bias must be 1-D");
            let d = *vx.shape().last().expect("bias target needs an axis");
            assert_eq!(d, vb.len(), "bias length mismatch");
            let b1 = vb.view().into_shape(d).expect("1-D bias");
            vx + &b1
        };
        self.push(
            out,
            vec![x, b],
            Some(Box::new(|ctx: &BackCtx| {
                let d = *ctx.grad.shape().last().unwrap();
                let m = ctx.grad.len() / d;
                let db = ctx.wants[1].then(|| {
                    view2(ctx.grad, m, d)
                        .sum_axis(Axis(0))
                        .into_dyn()
                });
                vec![Some(ctx.grad.clone()), db]
            })),
            false,
        )
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).mapv(|v| v.max(0.0));
        self.push(
            out,
            vec![a],
            Some(Box::new(|ctx: &BackCtx| {
                let mut dx = ctx.grad.clone();
                dx.zip_mut_with(ctx.parents[0], |g, &x| {
                    if x <= 0.0 {
                        *g = 0.0;
                    }
                });
                vec![Some(dx)]
            })),
            false,
        )
    }

    /// Gaussian error linear unit (tanh form).
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).mapv(gelu_scalar);
        self.push(
            out,
            vec![a],
            Some(Box::new(|ctx: &BackCtx| {
                let mut dx = ctx.parents[0].mapv(gelu_grad_scalar);
                dx *= ctx.grad;
                vec![Some(dx)]
            })),
            false,
        )
    }

    pub fn tanh_op(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).mapv(f64::tanh);
        self.push(
            out,
            vec![a],
            Some(Box::new(|ctx: &BackCtx| {
                let mut dx = ctx.out.mapv(|y| 1.0 - y * y);
                dx *= ctx.grad;
                vec![Some(dx)]
            })),
            false,
        )
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).mapv(sigmoid_scalar);
        self.push(
            out,
            vec![a],
            Some(Box::new(|ctx: &BackCtx| {
                let mut dx = ctx.out.mapv(|y| y * (1.0 - y));
                dx *= ctx.grad;
                vec![Some(dx)]
            })),
            false,
        )
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        let out = {
            let va = self.value(a);
            assert_eq!(
                va.len(),
                shape.iter().product::<usize>(),
                "reshape length mismatch"
            );
            va.clone().into_shape(IxDyn(shape)).expect("contiguous")
        };
        let parent_shape: Vec<usize> = self.value(a).shape().to_vec();
        self.push(
            out,
            vec![a],
            Some(Box::new(move |ctx: &BackCtx| {
                vec![Some(
                    ctx.grad
                        .clone()
                        .into_shape(IxDyn(&parent_shape))
                        .expect("contiguous"),
                )]
            })),
            false,
        )
    }

    /// Swaps the last two axes, materializing a contiguous copy.
    pub fn transpose_last2(&mut self, a: NodeId) -> NodeId {
        fn swap(v: &ArrayD<f64>) -> ArrayD<f64> {
            let nd = v.ndim();
            assert!(nd >= 2, "transpose needs >= 2 axes");
            let mut axes: Vec<usize> = (0..nd).collect();
            axes.swap(nd - 1, nd - 2);
            v.view().permuted_axes(&axes[..]).as_standard_layout().to_owned()
        }
        let out = swap(self.value(a));
        self.push(
            out,
            vec![a],
            Some(Box::new(|ctx: &BackCtx| vec![Some(swap(ctx.grad))])),
            false,
        )
    }

    /// Permutes a 4-D array `(a, b, c, d)` to `(a, c, b, d)`; the op is
    /// its own inverse, which is what head split/merge needs.
    pub fn permute0213(&mut self, a: NodeId) -> NodeId {
        fn perm(v: &ArrayD<f64>) -> ArrayD<f64> {
            assert_eq!(v.ndim(), 4, "permute0213 expects 4 axes");
            v.view()
                .permuted_axes(&[0usize, 2, 1, 3][..])
                .as_standard_layout()
                .to_owned()
        }
        let out = perm(self.value(a));
        self.push(
            out,
            vec![a],
            Some(Box::new(|ctx: &BackCtx| vec![Some(perm(ctx.grad))])),
            false,
        )
    }

    /// Extracts column `j` of a 2-D array as a `(rows,)` vector.
    pub fn slice_col(&mut self, x: NodeId, j: usize) -> NodeId {
        let out = {
            let v = self.value(x).view().into_dimensionality::<Ix2>().unwrap();
            assert!(j < v.ncols(), "column index out of range");
            v.column(j).to_owned().into_dyn()
        };
        self.push(
            out,
            vec![x],
            Some(Box::new(move |ctx: &BackCtx| {
                let shape = ctx.parents[0].shape();
                let mut dx = Array2::<f64>::zeros((shape[0], shape[1]));
                for (i, g) in ctx.grad.iter().enumerate() {
                    dx[[i, j]] = *g;
                }
                vec![Some(dx.into_dyn())]
            })),
            false,
        )
    }

    /// Concatenates along the last axis.
    pub fn concat_last(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let nd = views[0].ndim();
        let out = ndarray::concatenate(Axis(nd - 1), &views)
            .expect("concat shapes")
            .as_standard_layout()
            .to_owned();
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| *self.value(p).shape().last().unwrap())
            .collect();
        self.push(
            out,
            parts.to_vec(),
            Some(Box::new(move |ctx: &BackCtx| {
                let nd = ctx.grad.ndim();
                let mut offset = 0;
                widths
                    .iter()
                    .map(|&w| {
                        let piece = ctx
                            .grad
                            .slice_axis(Axis(nd - 1), ndarray::Slice::from(offset..offset + w as isize))
                            .to_owned();
                        offset += w as isize;
                        Some(piece.as_standard_layout().to_owned())
                    })
                    .collect()
            })),
            false,
        )
    }

    /// 2-D matrix product `(M,K) x (K,N)`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = {
            let va = self.value(a).view().into_dimensionality::<Ix2>().unwrap();
            let vb = self.value(b).view().into_dimensionality::<Ix2>().unwrap();
            assert_eq!(va.ncols(), vb.nrows(), "matmul inner dim");
            matmul2(va, vb).into_dyn()
        };
        self.push(
            out,
            vec![a, b],
            Some(Box::new(|ctx: &BackCtx| {
                let g = ctx.grad.view().into_dimensionality::<Ix2>().unwrap();
                let va = ctx.parents[0].view().into_dimensionality::<Ix2>().unwrap();
                let vb = ctx.parents[1].view().into_dimensionality::<Ix2>().unwrap();
                let da = ctx.wants[0].then(|| matmul2(g, vb.t()).into_dyn());
                let db = ctx.wants[1].then(|| matmul2(va.t(), g).into_dyn());
                vec![da, db]
            })),
            false,
        )
    }

    /// Batched matrix product `(P,M,K) x (P,K,N)`.
    pub fn bmm(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = {
            let va = self.value(a).view().into_dimensionality::<Ix3>().unwrap();
            let vb = self.value(b).view().into_dimensionality::<Ix3>().unwrap();
            assert_eq!(va.shape()[0], vb.shape()[0], "bmm batch dim");
            assert_eq!(va.shape()[2], vb.shape()[1], "bmm inner dim");
            let (p, m, n) = (va.shape()[0], va.shape()[1], vb.shape()[2]);
            let mut out = ndarray::Array3::<f64>::zeros((p, m, n));
            for i in 0..p {
                general_mat_mul(
                    1.0,
                    &va.index_axis(Axis(0), i),
                    &vb.index_axis(Axis(0), i),
                    0.0,
                    &mut out.index_axis_mut(Axis(0), i),
                );
            }
            out.into_dyn()
        };
        self.push(
            out,
            vec![a, b],
            Some(Box::new(|ctx: &BackCtx| {
                let g = ctx.grad.view().into_dimensionality::<Ix3>().unwrap();
                let va = ctx.parents[0].view().into_dimensionality::<Ix3>().unwrap();
                let vb = ctx.parents[1].view().into_dimensionality::<Ix3>().unwrap();
                let p = g.shape()[0];
                let da = ctx.wants[0].then(|| {
                    let mut da = ndarray::Array3::<f64>::zeros(va.raw_dim());
                    for i in 0..p {
                        general_mat_mul(
                            1.0,
                            &g.index_axis(Axis(0), i),
                            &vb.index_axis(Axis(0), i).t(),
                            0.0,
                            &mut da.index_axis_mut(Axis(0), i),
                        );
                    }
                    da.into_dyn()
                });
                let db = ctx.wants[1].then(|| {
                    let mut db = ndarray::Array3::<f64>::zeros(vb.raw_dim());
                    for i in 0..p {
                        general_mat_mul(
                            1.0,
                            &va.index_axis(Axis(0), i).t(),
                            &g.index_axis(Axis(0), i),
                            0.0,
                            &mut db.index_axis_mut(Axis(0), i),
                        );
                    }
                    db.into_dyn()
                });
                vec![da, db]
            })),
            false,
        )
    }

    /// Contracts the last axis of `x` with a `(K,N)` weight: a per-position
    /// linear map (equivalently a 1x1 convolution for channels-last maps).
    pub fn linear_last(&mut self, x: NodeId, w: NodeId) -> NodeId {
        let out = {
            let vx = self.value(x);
            let vw = self.value(w).view().into_dimensionality::<Ix2>().unwrap();
            let k = *vx.shape().last().expect("linear input needs an axis");
            assert_eq!(k, vw.nrows(), "linear_last inner dim");
            let m = vx.len() / k;
            let mut shape: Vec<usize> = vx.shape().to_vec();
            *shape.last_mut().unwrap() = vw.ncols();
            matmul2(view2(vx, m, k), vw.view())
                .into_shape(IxDyn(&shape))
                .expect("contiguous")
        };
        self.push(
            out,
            vec![x, w],
            Some(Box::new(|ctx: &BackCtx| {
                let vw = ctx.parents[1].view().into_dimensionality::<Ix2>().unwrap();
                let (k, n) = (vw.nrows(), vw.ncols());
                let m = ctx.grad.len() / n;
                let g2 = view2(ctx.grad, m, n);
                let dx = ctx.wants[0].then(|| {
                    matmul2(g2, vw.t())
                        .into_shape(IxDyn(ctx.parents[0].shape()))
                        .expect("contiguous")
                });
                let dw = ctx.wants[1].then(|| {
                    let x2 = view2(ctx.parents[0], m, k);
                    matmul2(x2.t(), g2).into_dyn()
                });
                vec![dx, dw]
            })),
            false,
        )
    }

    /// Embedding lookup: `table` is `(V, D)`, `ids` selects `(B, N)` rows.
    pub fn gather_rows(&mut self, table: NodeId, ids: Array2<usize>) -> NodeId {
        let out = {
            let vt = self.value(table).view().into_dimensionality::<Ix2>().unwrap();
            let (b, n) = ids.dim();
            let d = vt.ncols();
            let mut out = ndarray::Array3::<f64>::zeros((b, n, d));
            for bi in 0..b {
                for ni in 0..n {
                    let row = ids[[bi, ni]];
                    assert!(row < vt.nrows(), "token id out of range");
                    out.slice_mut(ndarray::s![bi, ni, ..]).assign(&vt.row(row));
                }
            }
            out.into_dyn()
        };
        self.push(
            out,
            vec![table],
            Some(Box::new(move |ctx: &BackCtx| {
                let g = ctx.grad.view().into_dimensionality::<Ix3>().unwrap();
                let mut dt = Array2::<f64>::zeros(
                    ctx.parents[0]
                        .view()
                        .into_dimensionality::<Ix2>()
                        .unwrap()
                        .raw_dim(),
                );
                let (b, n) = ids.dim();
                for bi in 0..b {
                    for ni in 0..n {
                        let mut row = dt.row_mut(ids[[bi, ni]]);
                        row += &g.slice(ndarray::s![bi, ni, ..]);
                    }
                }
                vec![Some(dt.into_dyn())]
            })),
            false,
        )
    }

    /// Softmax over the last axis with key positions excluded wherever
    /// `mask` is zero. `logits` is `(P, ..., N)`; `mask` is `(P, N)` with
    /// entries in {0,1} and at least one valid key per row. Masked
    /// positions receive a weight of exactly 0.
    pub fn softmax_masked_last(&mut self, logits: NodeId, mask: Array2<f64>) -> NodeId {
        let out = {
            let v = self.value(logits);
            let nd = v.ndim();
            assert!(nd >= 2);
            let p = v.shape()[0];
            let n = v.shape()[nd - 1];
            assert_eq!(mask.dim(), (p, n), "mask shape mismatch");
            for row in mask.rows() {
                assert!(row.iter().any(|&m| m != 0.0), "fully masked softmax row");
            }
            let mid = v.len() / (p * n);
            let mut out = v.clone();
            {
                let mut o3 = out.view_mut().into_shape((p, mid, n)).expect("contiguous");
                for pi in 0..p {
                    for mi in 0..mid {
                        let mut row = o3.slice_mut(ndarray::s![pi, mi, ..]);
                        let mut maxv = f64::NEG_INFINITY;
                        for ni in 0..n {
                            if mask[[pi, ni]] != 0.0 {
                                maxv = maxv.max(row[ni]);
                            }
                        }
                        let mut sum = 0.0;
                        for ni in 0..n {
                            if mask[[pi, ni]] != 0.0 {
                                let e = (row[ni] - maxv).exp();
                                row[ni] = e;
                                sum += e;
                            } else {
                                row[ni] = 0.0;
                            }
                        }
                        for ni in 0..n {
                            row[ni] /= sum;
                        }
                    }
                }
            }
            out
        };
        self.push(
            out,
            vec![logits],
            Some(Box::new(|ctx: &BackCtx| {
                let y = ctx.out;
                let nd = y.ndim();
                let p = y.shape()[0];
                let n = y.shape()[nd - 1];
                let mid = y.len() / (p * n);
                let y3 = y.view().into_shape((p, mid, n)).expect("contiguous");
                let g3 = ctx.grad.view().into_shape((p, mid, n)).expect("contiguous");
                let mut dx = ndarray::Array3::<f64>::zeros((p, mid, n));
                for pi in 0..p {
                    for mi in 0..mid {
                        let yr = y3.slice(ndarray::s![pi, mi, ..]);
                        let gr = g3.slice(ndarray::s![pi, mi, ..]);
                        let dot: f64 = yr.iter().zip(gr.iter()).map(|(a, b)| a * b).sum();
                        let mut dr = dx.slice_mut(ndarray::s![pi, mi, ..]);
                        for ni in 0..n {
                            dr[ni] = yr[ni] * (gr[ni] - dot);
                        }
                    }
                }
                vec![Some(
                    dx.into_shape(IxDyn(ctx.grad.shape())).expect("contiguous"),
                )]
            })),
            false,
        )
    }

    /// Mean over valid token positions: `(B,N,D)` with mask `(B,N)` to `(B,D)`.
    pub fn masked_mean_tokens(&mut self, x: NodeId, mask: Array2<f64>) -> NodeId {
        let out = {
            let v = self.value(x).view().into_dimensionality::<Ix3>().unwrap();
            let (b, n, d) = v.dim();
            assert_eq!(mask.dim(), (b, n), "mask shape mismatch");
            let mut out = Array2::<f64>::zeros((b, d));
            for bi in 0..b {
                let count: f64 = mask.row(bi).sum();
                assert!(count > 0.0, "no valid tokens to pool");
                for ni in 0..n {
                    if mask[[bi, ni]] != 0.0 {
                        let mut row = out.row_mut(bi);
                        row += &v.slice(ndarray::s![bi, ni, ..]);
                    }
                }
                out.row_mut(bi).mapv_inplace(|v| v / count);
            }
            out.into_dyn()
        };
        self.push(
            out,
            vec![x],
            Some(Box::new(move |ctx: &BackCtx| {
                let g = ctx.grad.view().into_dimensionality::<Ix2>().unwrap();
                let (b, n, _d) = ctx.parents[0]
                    .view()
                    .into_dimensionality::<Ix3>()
                    .unwrap()
                    .dim();
                let mut dx = ndarray::Array3::<f64>::zeros(
                    ctx.parents[0]
                        .view()
                        .into_dimensionality::<Ix3>()
                        .unwrap()
                        .raw_dim(),
                );
                for bi in 0..b {
                    let count: f64 = mask.row(bi).sum();
                    for ni in 0..n {
                        if mask[[bi, ni]] != 0.0 {
                            let mut row = dx.slice_mut(ndarray::s![bi, ni, ..]);
                            row.zip_mut_with(&g.row(bi), |o, &gv| *o = gv / count);
                        }
                    }
                }
                vec![Some(dx.into_dyn())]
            })),
            false,
        )
    }

    /// Spatial mean of a channels-last map: `(B,H,W,C)` to `(B,C)`.
    pub fn mean_hw(&mut self, x: NodeId) -> NodeId {
        let out = {
            let v = self.value(x);
            assert_eq!(v.ndim(), 4, "mean_hw expects (B,H,W,C)");
            let (b, h, w, c) = (v.shape()[0], v.shape()[1], v.shape()[2], v.shape()[3]);
            let v2 = view2(v, b * h * w, c);
            let mut out = Array2::<f64>::zeros((b, c));
            for bi in 0..b {
                for i in 0..h * w {
                    let mut row = out.row_mut(bi);
                    row += &v2.row(bi * h * w + i);
                }
            }
            out.mapv_inplace(|v| v / (h * w) as f64);
            out.into_dyn()
        };
        self.push(
            out,
            vec![x],
            Some(Box::new(|ctx: &BackCtx| {
                let shape = ctx.parents[0].shape();
                let (b, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
                let g = ctx.grad.view().into_dimensionality::<Ix2>().unwrap();
                let mut dx = ArrayD::<f64>::zeros(IxDyn(shape));
                {
                    let mut dx2 = dx.view_mut().into_shape((b * h * w, c)).expect("contiguous");
                    for bi in 0..b {
                        for i in 0..h * w {
                            let mut row = dx2.row_mut(bi * h * w + i);
                            row.zip_mut_with(&g.row(bi), |o, &gv| *o = gv / (h * w) as f64);
                        }
                    }
                }
                vec![Some(dx)]
            })),
            false,
        )
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let out = ndarray::arr0(self.value(x).sum()).into_dyn();
        self.push(
            out,
            vec![x],
            Some(Box::new(|ctx: &BackCtx| {
                let g = ctx.grad[[]];
                vec![Some(ArrayD::from_elem(
                    IxDyn(ctx.parents[0].shape()),
                    g,
                ))]
            })),
            false,
        )
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let len = self.value(x).len() as f64;
        let out = ndarray::arr0(self.value(x).sum() / len).into_dyn();
        self.push(
            out,
            vec![x],
            Some(Box::new(move |ctx: &BackCtx| {
                let g = ctx.grad[[]] / len;
                vec![Some(ArrayD::from_elem(
                    IxDyn(ctx.parents[0].shape()),
                    g,
                ))]
            })),
            false,
        )
    }

    /// Multiplies each batch row of `x` (axis 0) by the matching scalar in
    /// `s`, shape `(B,)`.
    pub fn scale_rows(&mut self, x: NodeId, s: NodeId) -> NodeId {
        let out = {
            let vx = self.value(x);
            let vs = self.value(s);
            assert_eq!(vs.ndim(), 1);
            let b = vx.shape()[0];
            assert_eq!(vs.len(), b, "scale_rows batch mismatch");
            let inner = vx.len() / b;
            let mut out = vx.clone();
            {
                let mut o2 = out.view_mut().into_shape((b, inner)).expect("contiguous");
                for bi in 0..b {
                    let f = vs[[bi]];
                    o2.row_mut(bi).mapv_inplace(|v| v * f);
                }
            }
            out
        };
        self.push(
            out,
            vec![x, s],
            Some(Box::new(|ctx: &BackCtx| {
                let b = ctx.parents[0].shape()[0];
                let inner = ctx.parents[0].len() / b;
                let g2 = view2(ctx.grad, b, inner);
                let x2 = view2(ctx.parents[0], b, inner);
                let vs = ctx.parents[1];
                let dx = ctx.wants[0].then(|| {
                    let mut dx = ctx.grad.clone();
                    let mut d2 = dx.view_mut().into_shape((b, inner)).expect("contiguous");
                    for bi in 0..b {
                        let f = vs[[bi]];
                        d2.row_mut(bi).mapv_inplace(|v| v * f);
                    }
                    dx
                });
                let ds = ctx.wants[1].then(|| {
                    let mut ds = Array1::<f64>::zeros(b);
                    for bi in 0..b {
                        ds[bi] = g2
                            .row(bi)
                            .iter()
                            .zip(x2.row(bi).iter())
                            .map(|(g, x)| g * x)
                            .sum();
                    }
                    ds.into_dyn()
                });
                vec![dx, ds]
            })),
            false,
        )
    }

    /// Unfolds sliding windows of a channels-last map for convolution:
    /// `(B,H,W,C)` to `(B,OH,OW,K*K*C)` with zero padding.
    pub fn im2col(&mut self, x: NodeId, k: usize, stride: usize, pad: usize) -> NodeId {
        let (b, h, w, c) = {
            let v = self.value(x);
            assert_eq!(v.ndim(), 4, "im2col expects (B,H,W,C)");
            (v.shape()[0], v.shape()[1], v.shape()[2], v.shape()[3])
        };
        assert!(h + 2 * pad >= k && w + 2 * pad >= k, "kernel exceeds input");
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        let out = {
            let v = self.value(x);
            let xs = v.as_slice().expect("contiguous");
            let mut col = vec![0.0f64; b * oh * ow * k * k * c];
            for bi in 0..b {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let base = ((bi * oh + oy) * ow + ox) * k * k * c;
                        for ky in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let src = ((bi * h + iy as usize) * w + ix as usize) * c;
                                let dst = base + (ky * k + kx) * c;
                                col[dst..dst + c].copy_from_slice(&xs[src..src + c]);
                            }
                        }
                    }
                }
            }
            ArrayD::from_shape_vec(IxDyn(&[b, oh, ow, k * k * c]), col).expect("shape")
        };
        self.push(
            out,
            vec![x],
            Some(Box::new(move |ctx: &BackCtx| {
                let gs = ctx.grad.as_slice().expect("contiguous");
                let mut dx = vec![0.0f64; b * h * w * c];
                for bi in 0..b {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let base = ((bi * oh + oy) * ow + ox) * k * k * c;
                            for ky in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..k {
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let dst = ((bi * h + iy as usize) * w + ix as usize) * c;
                                    let src = base + (ky * k + kx) * c;
                                    for ci in 0..c {
                                        dx[dst + ci] += gs[src + ci];
                                    }
                                }
                            }
                        }
                    }
                }
                vec![Some(
                    ArrayD::from_shape_vec(IxDyn(&[b, h, w, c]), dx).expect("shape"),
                )]
            })),
            false,
        )
    }

    /// Non-overlapping average pooling of a channels-last map.
    pub fn avg_pool(&mut self, x: NodeId, k: usize) -> NodeId {
        let (b, h, w, c) = {
            let v = self.value(x);
            assert_eq!(v.ndim(), 4, "avg_pool expects (B,H,W,C)");
            (v.shape()[0], v.shape()[1], v.shape()[2], v.shape()[3])
        };
        assert!(h % k == 0 && w % k == 0, "pool size must divide input");
        let (oh, ow) = (h / k, w / k);
        let norm = 1.0 / (k * k) as f64;
        let out = {
            let v = self.value(x);
            let xs = v.as_slice().expect("contiguous");
            let mut out = vec![0.0f64; b * oh * ow * c];
            for bi in 0..b {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let dst = ((bi * oh + oy) * ow + ox) * c;
                        for ky in 0..k {
                            for kx in 0..k {
                                let src = ((bi * h + oy * k + ky) * w + ox * k + kx) * c;
                                for ci in 0..c {
                                    out[dst + ci] += xs[src + ci];
                                }
                            }
                        }
                        for ci in 0..c {
                            out[dst + ci] *= norm;
                        }
                    }
                }
            }
            ArrayD::from_shape_vec(IxDyn(&[b, oh, ow, c]), out).expect("shape")
        };
        self.push(
            out,
            vec![x],
            Some(Box::new(move |ctx: &BackCtx| {
                let gs = ctx.grad.as_slice().expect("contiguous");
                let mut dx = vec![0.0f64; b * h * w * c];
                for bi in 0..b {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let src = ((bi * oh + oy) * ow + ox) * c;
                            for ky in 0..k {
                                for kx in 0..k {
                                    let dst = ((bi * h + oy * k + ky) * w + ox * k + kx) * c;
                                    for ci in 0..c {
                                        dx[dst + ci] = gs[src + ci] * norm;
                                    }
                                }
                            }
                        }
                    }
                }
                vec![Some(
                    ArrayD::from_shape_vec(IxDyn(&[b, h, w, c]), dx).expect("shape"),
                )]
            })),
            false,
        )
    }

    /// Nearest-neighbor upsampling of a channels-last map by factor `f`.
    pub fn upsample_nearest(&mut self, x: NodeId, f: usize) -> NodeId {
        let (b, h, w, c) = {
            let v = self.value(x);
            assert_eq!(v.ndim(), 4, "upsample expects (B,H,W,C)");
            (v.shape()[0], v.shape()[1], v.shape()[2], v.shape()[3])
        };
        let (oh, ow) = (h * f, w * f);
        let out = {
            let v = self.value(x);
            let xs = v.as_slice().expect("contiguous");
            let mut out = vec![0.0f64; b * oh * ow * c];
            for bi in 0..b {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let src = ((bi * h + oy / f) * w + ox / f) * c;
                        let dst = ((bi * oh + oy) * ow + ox) * c;
                        out[dst..dst + c].copy_from_slice(&xs[src..src + c]);
                    }
                }
            }
            ArrayD::from_shape_vec(IxDyn(&[b, oh, ow, c]), out).expect("shape")
        };
        self.push(
            out,
            vec![x],
            Some(Box::new(move |ctx: &BackCtx| {
                let gs = ctx.grad.as_slice().expect("contiguous");
                let mut dx = vec![0.0f64; b * h * w * c];
                for bi in 0..b {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let dst = ((bi * h + oy / f) * w + ox / f) * c;
                            let src = ((bi * oh + oy) * ow + ox) * c;
                            for ci in 0..c {
                                dx[dst + ci] += gs[src + ci];
                            }
                        }
                    }
                }
                vec![Some(
                    ArrayD::from_shape_vec(IxDyn(&[b, h, w, c]), dx).expect("shape"),
                )]
            })),
            false,
        )
    }

    /// Mean binary cross-entropy between logits and a {0,1} target of the
    /// same shape, computed with the numerically stable formulation.
    pub fn bce_with_logits_mean(&mut self, logits: NodeId, target: ArrayD<f64>) -> NodeId {
        let out = {
            let v = self.value(logits);
            assert_eq!(v.shape(), target.shape(), "bce target shape mismatch");
            let mut acc = 0.0;
            for (&z, &y) in v.iter().zip(target.iter()) {
                acc += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
            }
            ndarray::arr0(acc / v.len() as f64).into_dyn()
        };
        self.push(
            out,
            vec![logits],
            Some(Box::new(move |ctx: &BackCtx| {
                let g = ctx.grad[[]];
                let norm = g / ctx.parents[0].len() as f64;
                let mut dz = ctx.parents[0].mapv(sigmoid_scalar);
                dz.zip_mut_with(&target, |p, &y| *p = (*p - y) * norm);
                vec![Some(dz)]
            })),
            false,
        )
    }

    /// Mean soft Dice loss over the batch axis with smoothing constant 1,
    /// probabilities taken as `sigmoid(logits)`.
    pub fn dice_with_logits_mean(&mut self, logits: NodeId, target: ArrayD<f64>) -> NodeId {
        const SMOOTH: f64 = 1.0;
        let (b, inner) = {
            let v = self.value(logits);
            assert_eq!(v.shape(), target.shape(), "dice target shape mismatch");
            let b = v.shape()[0];
            (b, v.len() / b)
        };
        let out = {
            let v = self.value(logits);
            let p2 = view2(v, b, inner);
            let t2 = view2(&target, b, inner);
            let mut acc = 0.0;
            for bi in 0..b {
                let mut isum = 0.0;
                let mut psum = 0.0;
                let mut gsum = 0.0;
                for (z, y) in p2.row(bi).iter().zip(t2.row(bi).iter()) {
                    let p = sigmoid_scalar(*z);
                    isum += p * y;
                    psum += p;
                    gsum += y;
                }
                acc += 1.0 - (2.0 * isum + SMOOTH) / (psum + gsum + SMOOTH);
            }
            ndarray::arr0(acc / b as f64).into_dyn()
        };
        self.push(
            out,
            vec![logits],
            Some(Box::new(move |ctx: &BackCtx| {
                let g = ctx.grad[[]];
                let z2 = view2(ctx.parents[0], b, inner);
                let t2 = view2(&target, b, inner);
                let mut dz = Array2::<f64>::zeros((b, inner));
                for bi in 0..b {
                    let mut isum = 0.0;
                    let mut psum = 0.0;
                    let mut gsum = 0.0;
                    for (z, y) in z2.row(bi).iter().zip(t2.row(bi).iter()) {
                        let p = sigmoid_scalar(*z);
                        isum += p * y;
                        psum += p;
                        gsum += y;
                    }
                    let denom = psum + gsum + SMOOTH;
                    let num = 2.0 * isum + SMOOTH;
                    for i in 0..inner {
                        let p = sigmoid_scalar(z2[[bi, i]]);
                        let ddp = -(2.0 * t2[[bi, i]] * denom - num) / (denom * denom);
                        dz[[bi, i]] = g / b as f64 * ddp * p * (1.0 - p);
                    }
                }
                vec![Some(
                    dz.into_shape(IxDyn(ctx.parents[0].shape())).expect("contiguous"),
                )]
            })),
            false,
        )
    }
}

/// Stable sigmoid, shared with non-graph callers.
pub fn sigmoid(x: f64) -> f64 {
    sigmoid_scalar(x)
}
