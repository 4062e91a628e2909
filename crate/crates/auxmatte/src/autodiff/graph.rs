//! The tape/arena graph and every primitive operation with its backward rule.

use num_traits::Float;
use std::collections::HashSet;

/// Element type of a graph: `f32` in training, `f64` under verification.
pub trait Real: Float + std::fmt::Debug + std::fmt::Display + Default + 'static {}
impl Real for f32 {}
impl Real for f64 {}

fn c<F: Real>(x: f64) -> F {
    F::from(x).unwrap()
}

/// Dense shape. Rank 0 is a scalar, rank 3 is (channels, height, width),
/// rank 4 is (out_ch, in_ch, kh, kw) for convolution weights.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Shape {
    pub dims: Vec<usize>,
}

impl Shape {
    pub fn scalar() -> Self {
        Self { dims: vec![] }
    }

    pub fn chw(ch: usize, h: usize, w: usize) -> Self {
        Self { dims: vec![ch, h, w] }
    }

    pub fn oikk(o: usize, i: usize, kh: usize, kw: usize) -> Self {
        Self {
            dims: vec![o, i, kh, kw],
        }
    }

    pub fn vector(n: usize) -> Self {
        Self { dims: vec![n] }
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn ch(&self) -> usize {
        assert_eq!(self.dims.len(), 3, "ch() needs a (C,H,W) shape");
        self.dims[0]
    }

    pub fn h(&self) -> usize {
        assert_eq!(self.dims.len(), 3, "h() needs a (C,H,W) shape");
        self.dims[1]
    }

    pub fn w(&self) -> usize {
        assert_eq!(self.dims.len(), 3, "w() needs a (C,H,W) shape");
        self.dims[2]
    }
}

/// Handle into a graph's node arena.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Tensor(pub(crate) usize);

#[derive(Clone, Debug)]
enum Op<F: Real> {
    Leaf,
    /// Copies data, contributes no gradient edge to its source.
    Detach,
    Add(usize, usize),
    Sub(usize, usize),
    Scale(usize, F),
    Relu(usize),
    Sigmoid(usize),
    ConcatC(usize, usize),
    Upsample2x(usize),
    DownAvg2x(usize),
    Crop {
        a: usize,
        h: usize,
        w: usize,
    },
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        stride: usize,
        pad: usize,
    },
    /// Bilinear resample of `ma` at `p + delta(p)`, coordinates clamped to the
    /// frame (border replicate).
    Warp {
        ma: usize,
        delta: usize,
    },
    L1(usize, usize),
    Bce {
        logits: usize,
        target: Vec<F>,
    },
    WeightedCe {
        logits: usize,
        target: Vec<F>,
    },
    MaskedL1 {
        pred: usize,
        target: Vec<F>,
        mask: Vec<F>,
    },
}

struct Node<F: Real> {
    op: Op<F>,
    shape: Shape,
    data: Vec<F>,
    grad: Vec<F>,
}

/// Append-only computation graph. One forward/backward pass per instance;
/// training builds a fresh graph per step.
pub struct Graph<F: Real> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op<F>, shape: Shape, data: Vec<F>) -> Tensor {
        debug_assert_eq!(shape.numel(), data.len());
        let grad = vec![F::zero(); data.len()];
        self.nodes.push(Node {
            op,
            shape,
            data,
            grad,
        });
        Tensor(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, shape: Shape, data: Vec<F>) -> Tensor {
        assert_eq!(shape.numel(), data.len(), "leaf data does not fill its shape");
        self.push(Op::Leaf, shape, data)
    }

    pub fn shape(&self, t: Tensor) -> &Shape {
        &self.nodes[t.0].shape
    }

    pub fn data(&self, t: Tensor) -> &[F] {
        &self.nodes[t.0].data
    }

    pub fn grad(&self, t: Tensor) -> &[F] {
        &self.nodes[t.0].grad
    }

    pub fn scalar_value(&self, t: Tensor) -> F {
        assert!(self.nodes[t.0].shape.dims.is_empty(), "not a scalar");
        self.nodes[t.0].data[0]
    }

    /// Stop-gradient copy: same data, no ancestry edge.
    pub fn detach(&mut self, t: Tensor) -> Tensor {
        let shape = self.nodes[t.0].shape.clone();
        let data = self.nodes[t.0].data.clone();
        self.push(Op::Detach, shape, data)
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Tensor {
        assert_eq!(self.nodes[a.0].shape, self.nodes[b.0].shape, "add shapes differ");
        let data: Vec<F> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push(Op::Add(a.0, b.0), shape, data)
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Tensor {
        assert_eq!(self.nodes[a.0].shape, self.nodes[b.0].shape, "sub shapes differ");
        let data: Vec<F> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x - y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push(Op::Sub(a.0, b.0), shape, data)
    }

    pub fn scale(&mut self, a: Tensor, k: F) -> Tensor {
        let data: Vec<F> = self.nodes[a.0].data.iter().map(|&x| x * k).collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push(Op::Scale(a.0, k), shape, data)
    }

    pub fn relu(&mut self, a: Tensor) -> Tensor {
        let data: Vec<F> = self.nodes[a.0]
            .data
            .iter()
            .map(|&x| if x > F::zero() { x } else { F::zero() })
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push(Op::Relu(a.0), shape, data)
    }

    pub fn sigmoid(&mut self, a: Tensor) -> Tensor {
        let data: Vec<F> = self.nodes[a.0].data.iter().map(|&x| sigmoid(x)).collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push(Op::Sigmoid(a.0), shape, data)
    }

    pub fn concat_channels(&mut self, a: Tensor, b: Tensor) -> Tensor {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        assert_eq!(sa.dims.len(), 3, "concat needs (C,H,W) inputs");
        assert_eq!(
            (sa.h(), sa.w()),
            (sb.h(), sb.w()),
            "concat spatial shapes differ"
        );
        let shape = Shape::chw(sa.ch() + sb.ch(), sa.h(), sa.w());
        let mut data = Vec::with_capacity(shape.numel());
        data.extend_from_slice(&self.nodes[a.0].data);
        data.extend_from_slice(&self.nodes[b.0].data);
        self.push(Op::ConcatC(a.0, b.0), shape, data)
    }

    /// Bilinear 2x upsample, align-corners-false, border replicate.
    pub fn upsample_bilinear_2x(&mut self, a: Tensor) -> Tensor {
        let s = &self.nodes[a.0].shape;
        let (ch, h, w) = (s.ch(), s.h(), s.w());
        let (oh, ow) = (h * 2, w * 2);
        let src = &self.nodes[a.0].data;
        let mut data = vec![F::zero(); ch * oh * ow];
        for cc in 0..ch {
            for oy in 0..oh {
                let (y0, y1, fy) = up2_taps(oy, h);
                for ox in 0..ow {
                    let (x0, x1, fx) = up2_taps(ox, w);
                    let at = |yy: usize, xx: usize| src[(cc * h + yy) * w + xx];
                    let one = F::one();
                    let v = (one - fy) * ((one - fx) * at(y0, x0) + fx * at(y0, x1))
                        + fy * ((one - fx) * at(y1, x0) + fx * at(y1, x1));
                    data[(cc * oh + oy) * ow + ox] = v;
                }
            }
        }
        self.push(Op::Upsample2x(a.0), Shape::chw(ch, oh, ow), data)
    }

    /// 2x2 average pooling with stride 2; requires even spatial dims.
    pub fn downsample_avg_2x(&mut self, a: Tensor) -> Tensor {
        let s = &self.nodes[a.0].shape;
        let (ch, h, w) = (s.ch(), s.h(), s.w());
        assert!(h % 2 == 0 && w % 2 == 0, "downsample needs even dims");
        let (oh, ow) = (h / 2, w / 2);
        let src = &self.nodes[a.0].data;
        let quarter = c::<F>(0.25);
        let mut data = vec![F::zero(); ch * oh * ow];
        for cc in 0..ch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let at = |yy: usize, xx: usize| src[(cc * h + yy) * w + xx];
                    let sum = at(2 * oy, 2 * ox)
                        + at(2 * oy, 2 * ox + 1)
                        + at(2 * oy + 1, 2 * ox)
                        + at(2 * oy + 1, 2 * ox + 1);
                    data[(cc * oh + oy) * ow + ox] = sum * quarter;
                }
            }
        }
        self.push(Op::DownAvg2x(a.0), Shape::chw(ch, oh, ow), data)
    }

    /// Top-left crop to `(h, w)`.
    pub fn crop(&mut self, a: Tensor, h: usize, w: usize) -> Tensor {
        let s = &self.nodes[a.0].shape;
        let (ch, ih, iw) = (s.ch(), s.h(), s.w());
        assert!(h <= ih && w <= iw, "crop cannot grow");
        let src = &self.nodes[a.0].data;
        let mut data = vec![F::zero(); ch * h * w];
        for cc in 0..ch {
            for y in 0..h {
                for x in 0..w {
                    data[(cc * h + y) * w + x] = src[(cc * ih + y) * iw + x];
                }
            }
        }
        self.push(Op::Crop { a: a.0, h, w }, Shape::chw(ch, h, w), data)
    }

    /// Cross-correlation with optional bias.
    pub fn conv2d(
        &mut self,
        x: Tensor,
        w: Tensor,
        b: Option<Tensor>,
        stride: usize,
        pad: usize,
    ) -> Tensor {
        assert!(stride >= 1, "stride must be >= 1");
        let xs = self.nodes[x.0].shape.clone();
        let ws = self.nodes[w.0].shape.clone();
        assert_eq!(ws.dims.len(), 4, "conv weight must be (O,I,Kh,Kw)");
        let (ci, h, wid) = (xs.ch(), xs.h(), xs.w());
        let (o, wi, kh, kw) = (ws.dims[0], ws.dims[1], ws.dims[2], ws.dims[3]);
        assert_eq!(ci, wi, "conv channel mismatch");
        assert!(h + 2 * pad >= kh && wid + 2 * pad >= kw, "kernel exceeds input");
        if let Some(bb) = b {
            assert_eq!(self.nodes[bb.0].shape.dims, vec![o], "bias must be (O,)");
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wid + 2 * pad - kw) / stride + 1;
        let mut data = vec![F::zero(); o * oh * ow];
        {
            let xd = &self.nodes[x.0].data;
            let wd = &self.nodes[w.0].data;
            let bd = b.map(|bb| &self.nodes[bb.0].data);
            for oc in 0..o {
                let base = bd.map(|v| v[oc]).unwrap_or_else(F::zero);
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = base;
                        for ic in 0..ci {
                            for ky in 0..kh {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if ix < 0 || ix >= wid as isize {
                                        continue;
                                    }
                                    acc = acc
                                        + xd[(ic * h + iy as usize) * wid + ix as usize]
                                            * wd[((oc * ci + ic) * kh + ky) * kw + kx];
                                }
                            }
                        }
                        data[(oc * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        self.push(
            Op::Conv2d {
                x: x.0,
                w: w.0,
                b: b.map(|t| t.0),
                stride,
                pad,
            },
            Shape::chw(o, oh, ow),
            data,
        )
    }

    /// Bilinear sampling of `ma` at `p + delta(p)`; `delta` is (2,H,W) with
    /// channel 0 = x offset, channel 1 = y offset. Coordinates clamp to the
    /// frame, and a zero offset reproduces `ma` bit-exactly.
    pub fn warp_with_offsets(&mut self, ma: Tensor, delta: Tensor) -> Tensor {
        let ms = self.nodes[ma.0].shape.clone();
        let ds = self.nodes[delta.0].shape.clone();
        assert_eq!(ds.ch(), 2, "offset field needs 2 channels");
        assert_eq!(
            (ms.h(), ms.w()),
            (ds.h(), ds.w()),
            "warp spatial shapes differ"
        );
        let (ch, h, w) = (ms.ch(), ms.h(), ms.w());
        let mut data = vec![F::zero(); ch * h * w];
        {
            let md = &self.nodes[ma.0].data;
            let dd = &self.nodes[delta.0].data;
            for y in 0..h {
                for x in 0..w {
                    let p = y * w + x;
                    let (x0, x1, fx, y0, y1, fy) = warp_taps::<F>(x, y, dd[p], dd[h * w + p], h, w);
                    for cc in 0..ch {
                        let at = |yy: usize, xx: usize| md[(cc * h + yy) * w + xx];
                        let v = if fx == F::zero() && fy == F::zero() {
                            at(y0, x0)
                        } else {
                            let one = F::one();
                            (one - fy) * ((one - fx) * at(y0, x0) + fx * at(y0, x1))
                                + fy * ((one - fx) * at(y1, x0) + fx * at(y1, x1))
                        };
                        data[(cc * h + y) * w + x] = v;
                    }
                }
            }
        }
        self.push(
            Op::Warp {
                ma: ma.0,
                delta: delta.0,
            },
            Shape::chw(ch, h, w),
            data,
        )
    }

    /// Mean absolute difference, scalar.
    pub fn l1_loss(&mut self, a: Tensor, b: Tensor) -> Tensor {
        assert_eq!(self.nodes[a.0].shape, self.nodes[b.0].shape, "l1 shapes differ");
        let n = self.nodes[a.0].data.len();
        let mut acc = F::zero();
        for i in 0..n {
            acc = acc + (self.nodes[a.0].data[i] - self.nodes[b.0].data[i]).abs();
        }
        let v = acc / c(n as f64);
        self.push(Op::L1(a.0, b.0), Shape::scalar(), vec![v])
    }

    /// Mean sigmoid cross-entropy against fixed targets, in the stable
    /// log-sum-exp form: `max(z,0) - z t + ln(1 + exp(-|z|))`.
    pub fn bce_loss(&mut self, logits: Tensor, target: &[F]) -> Tensor {
        let n = self.nodes[logits.0].data.len();
        assert_eq!(n, target.len(), "bce target length differs");
        let mut acc = F::zero();
        for (&z, &t) in self.nodes[logits.0].data.iter().zip(target) {
            acc = acc + bce_elem(z, t);
        }
        let v = acc / c(n as f64);
        self.push(
            Op::Bce {
                logits: logits.0,
                target: target.to_vec(),
            },
            Shape::scalar(),
            vec![v],
        )
    }

    /// Class-balanced sigmoid cross-entropy for binary edge maps: the positive
    /// class is weighted by the negative fraction and vice versa, then averaged
    /// over all pixels.
    pub fn weighted_ce_loss(&mut self, logits: Tensor, target: &[F]) -> Tensor {
        let n = self.nodes[logits.0].data.len();
        assert_eq!(n, target.len(), "weighted ce target length differs");
        let (w_pos, w_neg) = class_weights(target);
        let mut acc = F::zero();
        for (&z, &t) in self.nodes[logits.0].data.iter().zip(target) {
            let w = if t >= c(0.5) { w_pos } else { w_neg };
            acc = acc + w * bce_elem(z, t);
        }
        let v = acc / c(n as f64);
        self.push(
            Op::WeightedCe {
                logits: logits.0,
                target: target.to_vec(),
            },
            Shape::scalar(),
            vec![v],
        )
    }

    /// Mean absolute difference over pixels where `mask >= 0.5`; an empty mask
    /// gives a zero loss and `true` in the flag.
    pub fn masked_l1_loss(&mut self, pred: Tensor, target: &[F], mask: &[F]) -> (Tensor, bool) {
        let n = self.nodes[pred.0].data.len();
        assert_eq!(n, target.len(), "masked l1 target length differs");
        assert_eq!(n, mask.len(), "masked l1 mask length differs");
        let mut acc = F::zero();
        let mut count = 0usize;
        for i in 0..n {
            if mask[i] >= c(0.5) {
                acc = acc + (self.nodes[pred.0].data[i] - target[i]).abs();
                count += 1;
            }
        }
        let v = if count == 0 { F::zero() } else { acc / c(count as f64) };
        let t = self.push(
            Op::MaskedL1 {
                pred: pred.0,
                target: target.to_vec(),
                mask: mask.to_vec(),
            },
            Shape::scalar(),
            vec![v],
        );
        (t, count == 0)
    }

    /// Reverse sweep from a scalar loss; each node is visited exactly once and
    /// gradients accumulate into every differentiable parent.
    pub fn backward(&mut self, loss: Tensor) {
        assert!(
            self.nodes[loss.0].shape.dims.is_empty(),
            "backward needs a scalar loss"
        );
        self.nodes[loss.0].grad[0] = F::one();
        for i in (0..=loss.0).rev() {
            self.backward_node(i);
        }
    }

    fn backward_node(&mut self, i: usize) {
        let (head, tail) = self.nodes.split_at_mut(i);
        let node = &tail[0];
        if node.grad.iter().all(|&g| g == F::zero()) {
            return;
        }
        match &node.op {
            Op::Leaf | Op::Detach => {}
            Op::Add(a, b) => {
                accumulate(&mut head[*a].grad, &node.grad);
                accumulate(&mut head[*b].grad, &node.grad);
            }
            Op::Sub(a, b) => {
                accumulate(&mut head[*a].grad, &node.grad);
                for (g, &d) in head[*b].grad.iter_mut().zip(&node.grad) {
                    *g = *g - d;
                }
            }
            Op::Scale(a, k) => {
                let k = *k;
                for (g, &d) in head[*a].grad.iter_mut().zip(&node.grad) {
                    *g = *g + d * k;
                }
            }
            Op::Relu(a) => {
                let a = *a;
                for idx in 0..node.grad.len() {
                    if head[a].data[idx] > F::zero() {
                        head[a].grad[idx] = head[a].grad[idx] + node.grad[idx];
                    }
                }
            }
            Op::Sigmoid(a) => {
                let a = *a;
                for idx in 0..node.grad.len() {
                    let s = node.data[idx];
                    head[a].grad[idx] = head[a].grad[idx] + node.grad[idx] * s * (F::one() - s);
                }
            }
            Op::ConcatC(a, b) => {
                let na = head[*a].grad.len();
                accumulate(&mut head[*a].grad, &node.grad[..na]);
                accumulate(&mut head[*b].grad, &node.grad[na..]);
            }
            Op::Upsample2x(a) => {
                let a = *a;
                let s = &head[a].shape;
                let (ch, h, w) = (s.ch(), s.h(), s.w());
                let (oh, ow) = (h * 2, w * 2);
                for cc in 0..ch {
                    for oy in 0..oh {
                        let (y0, y1, fy) = up2_taps::<F>(oy, h);
                        for ox in 0..ow {
                            let (x0, x1, fx) = up2_taps::<F>(ox, w);
                            let d = node.grad[(cc * oh + oy) * ow + ox];
                            if d == F::zero() {
                                continue;
                            }
                            let one = F::one();
                            let g = &mut head[a].grad;
                            g[(cc * h + y0) * w + x0] =
                                g[(cc * h + y0) * w + x0] + d * (one - fy) * (one - fx);
                            g[(cc * h + y0) * w + x1] = g[(cc * h + y0) * w + x1] + d * (one - fy) * fx;
                            g[(cc * h + y1) * w + x0] = g[(cc * h + y1) * w + x0] + d * fy * (one - fx);
                            g[(cc * h + y1) * w + x1] = g[(cc * h + y1) * w + x1] + d * fy * fx;
                        }
                    }
                }
            }
            Op::DownAvg2x(a) => {
                let a = *a;
                let s = &head[a].shape;
                let (ch, h, w) = (s.ch(), s.h(), s.w());
                let (oh, ow) = (h / 2, w / 2);
                let quarter = c::<F>(0.25);
                for cc in 0..ch {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let d = node.grad[(cc * oh + oy) * ow + ox] * quarter;
                            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                                let idx = (cc * h + 2 * oy + dy) * w + 2 * ox + dx;
                                head[a].grad[idx] = head[a].grad[idx] + d;
                            }
                        }
                    }
                }
            }
            Op::Crop { a, h, w } => {
                let (a, h, w) = (*a, *h, *w);
                let s = &head[a].shape;
                let (ch, ih, iw) = (s.ch(), s.h(), s.w());
                for cc in 0..ch {
                    for y in 0..h {
                        for x in 0..w {
                            let idx = (cc * ih + y) * iw + x;
                            head[a].grad[idx] = head[a].grad[idx] + node.grad[(cc * h + y) * w + x];
                        }
                    }
                }
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let (x, w, b, stride, pad) = (*x, *w, *b, *stride, *pad);
                let xs = &head[x].shape;
                let ws = &head[w].shape;
                let (ci, h, wid) = (xs.ch(), xs.h(), xs.w());
                let (o, kh, kw) = (ws.dims[0], ws.dims[2], ws.dims[3]);
                let (oh, ow) = (node.shape.h(), node.shape.w());
                let mut dx = vec![F::zero(); head[x].data.len()];
                let mut dw = vec![F::zero(); head[w].data.len()];
                let mut db = vec![F::zero(); o];
                {
                    let xd = &head[x].data;
                    let wd = &head[w].data;
                    for oc in 0..o {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let d = node.grad[(oc * oh + oy) * ow + ox];
                                if d == F::zero() {
                                    continue;
                                }
                                db[oc] = db[oc] + d;
                                for ic in 0..ci {
                                    for ky in 0..kh {
                                        let iy = (oy * stride + ky) as isize - pad as isize;
                                        if iy < 0 || iy >= h as isize {
                                            continue;
                                        }
                                        for kx in 0..kw {
                                            let ix = (ox * stride + kx) as isize - pad as isize;
                                            if ix < 0 || ix >= wid as isize {
                                                continue;
                                            }
                                            let xi = (ic * h + iy as usize) * wid + ix as usize;
                                            let wi = ((oc * ci + ic) * kh + ky) * kw + kx;
                                            dx[xi] = dx[xi] + wd[wi] * d;
                                            dw[wi] = dw[wi] + xd[xi] * d;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                accumulate(&mut head[x].grad, &dx);
                accumulate(&mut head[w].grad, &dw);
                if let Some(b) = b {
                    accumulate(&mut head[b].grad, &db);
                }
            }
            Op::Warp { ma, delta } => {
                let (ma, delta) = (*ma, *delta);
                let s = &head[ma].shape;
                let (ch, h, w) = (s.ch(), s.h(), s.w());
                let mut dma = vec![F::zero(); head[ma].data.len()];
                let mut ddelta = vec![F::zero(); head[delta].data.len()];
                {
                    let md = &head[ma].data;
                    let dd = &head[delta].data;
                    let one = F::one();
                    for y in 0..h {
                        for x in 0..w {
                            let p = y * w + x;
                            let ox = dd[p];
                            let oy = dd[h * w + p];
                            let (x0, x1, fx, y0, y1, fy) = warp_taps::<F>(x, y, ox, oy, h, w);
                            // clamp kills the offset gradient outside the frame
                            let sx_raw = c::<F>(x as f64) + ox;
                            let sy_raw = c::<F>(y as f64) + oy;
                            let x_free = sx_raw > F::zero() && sx_raw < c(w as f64 - 1.0);
                            let y_free = sy_raw > F::zero() && sy_raw < c(h as f64 - 1.0);
                            for cc in 0..ch {
                                let d = node.grad[(cc * h + y) * w + x];
                                if d == F::zero() {
                                    continue;
                                }
                                let at = |yy: usize, xx: usize| md[(cc * h + yy) * w + xx];
                                let gi = |yy: usize, xx: usize| (cc * h + yy) * w + xx;
                                dma[gi(y0, x0)] = dma[gi(y0, x0)] + d * (one - fy) * (one - fx);
                                dma[gi(y0, x1)] = dma[gi(y0, x1)] + d * (one - fy) * fx;
                                dma[gi(y1, x0)] = dma[gi(y1, x0)] + d * fy * (one - fx);
                                dma[gi(y1, x1)] = dma[gi(y1, x1)] + d * fy * fx;
                                if x_free {
                                    let dvdx = (one - fy) * (at(y0, x1) - at(y0, x0))
                                        + fy * (at(y1, x1) - at(y1, x0));
                                    ddelta[p] = ddelta[p] + d * dvdx;
                                }
                                if y_free {
                                    let dvdy = (one - fx) * (at(y1, x0) - at(y0, x0))
                                        + fx * (at(y1, x1) - at(y0, x1));
                                    ddelta[h * w + p] = ddelta[h * w + p] + d * dvdy;
                                }
                            }
                        }
                    }
                }
                accumulate(&mut head[ma].grad, &dma);
                accumulate(&mut head[delta].grad, &ddelta);
            }
            Op::L1(a, b) => {
                let (a, b) = (*a, *b);
                let d = node.grad[0];
                let n = c::<F>(head[a].data.len() as f64);
                for idx in 0..head[a].data.len() {
                    let diff = head[a].data[idx] - head[b].data[idx];
                    let s = sign(diff);
                    head[a].grad[idx] = head[a].grad[idx] + d * s / n;
                    head[b].grad[idx] = head[b].grad[idx] - d * s / n;
                }
            }
            Op::Bce { logits, target } => {
                let logits = *logits;
                let d = node.grad[0];
                let n = c::<F>(target.len() as f64);
                for (idx, &t) in target.iter().enumerate() {
                    let z = head[logits].data[idx];
                    head[logits].grad[idx] =
                        head[logits].grad[idx] + d * (sigmoid(z) - t) / n;
                }
            }
            Op::WeightedCe { logits, target } => {
                let logits = *logits;
                let d = node.grad[0];
                let n = c::<F>(target.len() as f64);
                let (w_pos, w_neg) = class_weights(target);
                for (idx, &t) in target.iter().enumerate() {
                    let w = if t >= c(0.5) { w_pos } else { w_neg };
                    let z = head[logits].data[idx];
                    head[logits].grad[idx] =
                        head[logits].grad[idx] + d * w * (sigmoid(z) - t) / n;
                }
            }
            Op::MaskedL1 { pred, target, mask } => {
                let pred = *pred;
                let d = node.grad[0];
                let count = mask.iter().filter(|&&m| m >= c(0.5)).count();
                if count == 0 {
                    return;
                }
                let n = c::<F>(count as f64);
                for idx in 0..target.len() {
                    if mask[idx] >= c(0.5) {
                        let s = sign(head[pred].data[idx] - target[idx]);
                        head[pred].grad[idx] = head[pred].grad[idx] + d * s / n;
                    }
                }
            }
        }
    }

    /// Indices of all nodes reachable from `t` through differentiable edges
    /// (a detach contributes none), including `t` itself.
    pub fn ancestors(&self, t: Tensor) -> HashSet<usize> {
        let mut seen = HashSet::new();
        let mut stack = vec![t.0];
        while let Some(i) = stack.pop() {
            if !seen.insert(i) {
                continue;
            }
            for p in self.parents(i) {
                stack.push(p);
            }
        }
        seen
    }

    /// True when `candidate` participates in the differentiable history of `t`.
    pub fn depends_on(&self, t: Tensor, candidate: Tensor) -> bool {
        self.ancestors(t).contains(&candidate.0)
    }

    fn parents(&self, i: usize) -> Vec<usize> {
        match &self.nodes[i].op {
            Op::Leaf | Op::Detach => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::ConcatC(a, b) | Op::L1(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Upsample2x(a)
            | Op::DownAvg2x(a)
            | Op::Crop { a, .. } => vec![*a],
            Op::Conv2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                if let Some(b) = b {
                    v.push(*b);
                }
                v
            }
            Op::Warp { ma, delta } => vec![*ma, *delta],
            Op::Bce { logits, .. } | Op::WeightedCe { logits, .. } => vec![*logits],
            Op::MaskedL1 { pred, .. } => vec![*pred],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

fn accumulate<F: Real>(grad: &mut [F], delta: &[F]) {
    debug_assert_eq!(grad.len(), delta.len());
    for (g, &d) in grad.iter_mut().zip(delta) {
        *g = *g + d;
    }
}

fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

fn sign<F: Real>(x: F) -> F {
    if x > F::zero() {
        F::one()
    } else if x < F::zero() {
        -F::one()
    } else {
        F::zero()
    }
}

fn bce_elem<F: Real>(z: F, t: F) -> F {
    let zero = F::zero();
    let m = if z > zero { z } else { zero };
    m - z * t + (F::one() + (-z.abs()).exp()).ln()
}

fn class_weights<F: Real>(target: &[F]) -> (F, F) {
    let half = c::<F>(0.5);
    let n_pos = target.iter().filter(|&&t| t >= half).count();
    let n = target.len();
    let n_neg = n - n_pos;
    (
        c::<F>(n_neg as f64 / n as f64),
        c::<F>(n_pos as f64 / n as f64),
    )
}

/// Source taps for align-corners-false 2x upsampling of a length-`n` axis.
fn up2_taps<F: Real>(o: usize, n: usize) -> (usize, usize, F) {
    let s = (o as f64 + 0.5) / 2.0 - 0.5;
    let s = s.clamp(0.0, (n - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, c(s - i0 as f64))
}

/// Clamped bilinear taps for the offset warp at pixel `(x, y)`.
fn warp_taps<F: Real>(
    x: usize,
    y: usize,
    ox: F,
    oy: F,
    h: usize,
    w: usize,
) -> (usize, usize, F, usize, usize, F) {
    let zero = F::zero();
    let sx = (c::<F>(x as f64) + ox).max(zero).min(c(w as f64 - 1.0));
    let sy = (c::<F>(y as f64) + oy).max(zero).min(c(h as f64 - 1.0));
    let x0f = sx.floor();
    let y0f = sy.floor();
    let x0 = x0f.to_usize().unwrap();
    let y0 = y0f.to_usize().unwrap();
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    (x0, x1, sx - x0f, y0, y1, sy - y0f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(n: usize, seed: u64, lo: f32, hi: f32) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(lo..hi)).collect()
    }

    #[test]
    fn identity_kernel_preserves_input() {
        let mut g: Graph<f32> = Graph::new();
        let x = g.leaf(Shape::chw(1, 4, 5), rand_vec(20, 1, -1.0, 1.0));
        let w = g.leaf(Shape::oikk(1, 1, 1, 1), vec![1.0]);
        let y = g.conv2d(x, w, None, 1, 0);
        assert_eq!(g.data(x), g.data(y));
    }

    #[test]
    fn ones_kernel_sums_window() {
        let mut g: Graph<f32> = Graph::new();
        let x = g.leaf(Shape::chw(1, 5, 5), vec![1.0; 25]);
        let w = g.leaf(Shape::oikk(1, 1, 3, 3), vec![1.0; 9]);
        let y = g.conv2d(x, w, None, 1, 1);
        assert_eq!(g.shape(y).dims, vec![1, 5, 5]);
        // interior pixel sees the full window, corner only 4 entries
        assert_eq!(g.data(y)[2 * 5 + 2], 9.0);
        assert_eq!(g.data(y)[0], 4.0);
    }

    #[test]
    fn conv_matches_indexless_oracle() {
        // independent formulation: iterate input-major and scatter
        let (ci, h, w) = (2, 5, 6);
        let (o, kh, kw) = (3, 3, 3);
        for (stride, pad) in [(1usize, 1usize), (2, 0), (2, 1)] {
            let xd = rand_vec(ci * h * w, 7, -1.0, 1.0);
            let wd = rand_vec(o * ci * kh * kw, 8, -0.5, 0.5);
            let bd = rand_vec(o, 9, -0.2, 0.2);
            let mut g: Graph<f32> = Graph::new();
            let x = g.leaf(Shape::chw(ci, h, w), xd.clone());
            let wt = g.leaf(Shape::oikk(o, ci, kh, kw), wd.clone());
            let bt = g.leaf(Shape::vector(o), bd.clone());
            let y = g.conv2d(x, wt, Some(bt), stride, pad);
            let (oh, ow) = (g.shape(y).h(), g.shape(y).w());

            let mut want = vec![0.0f32; o * oh * ow];
            for (oc, row) in want.chunks_mut(oh * ow).enumerate() {
                for v in row.iter_mut() {
                    *v = bd[oc];
                }
            }
            for ic in 0..ci {
                for iy in 0..h {
                    for ix in 0..w {
                        let xv = xd[(ic * h + iy) * w + ix];
                        for oc in 0..o {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let ny = iy + pad;
                                    let nx = ix + pad;
                                    if ny < ky || nx < kx {
                                        continue;
                                    }
                                    let (py, px) = (ny - ky, nx - kx);
                                    if py % stride != 0 || px % stride != 0 {
                                        continue;
                                    }
                                    let (oy, ox) = (py / stride, px / stride);
                                    if oy >= oh || ox >= ow {
                                        continue;
                                    }
                                    want[(oc * oh + oy) * ow + ox] +=
                                        xv * wd[((oc * ci + ic) * kh + ky) * kw + kx];
                                }
                            }
                        }
                    }
                }
            }
            for (a, b) in g.data(y).iter().zip(&want) {
                assert!((a - b).abs() < 1e-5, "stride {stride} pad {pad}");
            }
        }
    }

    #[test]
    fn relu_endpoints() {
        let mut g: Graph<f32> = Graph::new();
        let x = g.leaf(Shape::chw(1, 1, 2), vec![-1.0, 2.0]);
        let y = g.relu(x);
        assert_eq!(g.data(y), &[0.0, 2.0]);
    }

    #[test]
    fn concat_adds_channels() {
        let mut g: Graph<f32> = Graph::new();
        let a = g.leaf(Shape::chw(2, 3, 3), vec![1.0; 18]);
        let b = g.leaf(Shape::chw(3, 3, 3), vec![2.0; 27]);
        let y = g.concat_channels(a, b);
        assert_eq!(g.shape(y).dims, vec![5, 3, 3]);
        assert_eq!(g.data(y)[0], 1.0);
        assert_eq!(g.data(y)[18], 2.0);
    }

    #[test]
    fn upsample_keeps_constants() {
        let mut g: Graph<f32> = Graph::new();
        let a = g.leaf(Shape::chw(2, 3, 4), vec![0.75; 24]);
        let y = g.upsample_bilinear_2x(a);
        assert_eq!(g.shape(y).dims, vec![2, 6, 8]);
        assert!(g.data(y).iter().all(|&v| v == 0.75));
    }

    #[test]
    fn downsample_averages_quads() {
        let mut g: Graph<f32> = Graph::new();
        let a = g.leaf(Shape::chw(1, 2, 2), vec![0.0, 1.0, 1.0, 0.0]);
        let y = g.downsample_avg_2x(a);
        assert_eq!(g.data(y), &[0.5]);
    }

    #[test]
    fn warp_zero_offset_is_bit_exact() {
        let mut g: Graph<f32> = Graph::new();
        let ma = g.leaf(Shape::chw(3, 6, 5), rand_vec(90, 3, -2.0, 2.0));
        let delta = g.leaf(Shape::chw(2, 6, 5), vec![0.0; 60]);
        let se = g.warp_with_offsets(ma, delta);
        assert_eq!(g.data(ma), g.data(se));
    }

    #[test]
    fn warp_unit_shift_on_ramp() {
        let (h, w) = (4, 6);
        let ramp: Vec<f32> = (0..h * w).map(|i| (i % w) as f32).collect();
        let mut g: Graph<f32> = Graph::new();
        let ma = g.leaf(Shape::chw(1, h, w), ramp);
        let mut dd = vec![0.0f32; 2 * h * w];
        for v in dd[..h * w].iter_mut() {
            *v = 1.0; // +1 in x
        }
        let delta = g.leaf(Shape::chw(2, h, w), dd);
        let se = g.warp_with_offsets(ma, delta);
        for y in 0..h {
            for x in 0..w - 1 {
                assert_eq!(g.data(se)[y * w + x], (x + 1) as f32);
            }
            // clamped at the right border
            assert_eq!(g.data(se)[y * w + w - 1], (w - 1) as f32);
        }
    }

    #[test]
    fn warp_is_linear_in_source() {
        let (h, w) = (6, 5);
        let a = rand_vec(2 * h * w, 21, -1.0, 1.0);
        let b = rand_vec(2 * h * w, 22, -1.0, 1.0);
        let off = rand_vec(2 * h * w, 23, -2.0, 2.0);
        let run = |src: &[f32]| -> Vec<f32> {
            let mut g: Graph<f32> = Graph::new();
            let ma = g.leaf(Shape::chw(2, h, w), src.to_vec());
            let delta = g.leaf(Shape::chw(2, h, w), off.clone());
            let se = g.warp_with_offsets(ma, delta);
            g.data(se).to_vec()
        };
        let sum: Vec<f32> = a.iter().zip(&b).map(|(&x, &y)| x + y).collect();
        let wa = run(&a);
        let wb = run(&b);
        let ws = run(&sum);
        for i in 0..ws.len() {
            assert!((ws[i] - (wa[i] + wb[i])).abs() < 1e-6);
        }
    }

    #[test]
    fn diamond_graph_accumulates_both_paths() {
        // y = 1*x + 2*x, d|y|/dx = 3 for positive x
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(Shape::chw(1, 1, 1), vec![0.5]);
        let u = g.scale(x, 1.0);
        let v = g.scale(x, 2.0);
        let y = g.add(u, v);
        let zero = g.leaf(Shape::chw(1, 1, 1), vec![0.0]);
        let loss = g.l1_loss(y, zero);
        g.backward(loss);
        assert!((g.grad(x)[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn bce_closed_form_at_zero_logit() {
        let mut g: Graph<f64> = Graph::new();
        let z = g.leaf(Shape::chw(1, 1, 1), vec![0.0]);
        let loss = g.bce_loss(z, &[0.5]);
        assert!((g.scalar_value(loss) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_finite_at_extreme_logits() {
        let mut g: Graph<f32> = Graph::new();
        let z = g.leaf(Shape::chw(1, 1, 4), vec![-80.0, 80.0, -80.0, 80.0]);
        let loss = g.bce_loss(z, &[0.0, 1.0, 1.0, 0.0]);
        let v = g.scalar_value(loss);
        assert!(v.is_finite(), "loss {v}");
        g.backward(loss);
        assert!(g.grad(z).iter().all(|x| x.is_finite()));
    }

    #[test]
    fn balanced_weighted_ce_halves_plain_ce() {
        let logits = rand_vec(16, 31, -2.0, 2.0);
        let target: Vec<f32> = (0..16).map(|i| if i < 8 { 1.0 } else { 0.0 }).collect();
        let mut g: Graph<f32> = Graph::new();
        let z = g.leaf(Shape::chw(1, 4, 4), logits.clone());
        let lw = g.weighted_ce_loss(z, &target);
        let lp = g.bce_loss(z, &target);
        let (wv, pv) = (g.scalar_value(lw), g.scalar_value(lp));
        assert!((wv - 0.5 * pv).abs() < 1e-6, "weighted {wv} plain {pv}");
    }

    #[test]
    fn masked_l1_ignores_and_flags() {
        let mut g: Graph<f32> = Graph::new();
        let p = g.leaf(Shape::chw(1, 2, 2), vec![0.0, 0.0, 0.0, 0.0]);
        let target = [1.0, 1.0, 5.0, 5.0];
        let mask = [1.0, 1.0, 0.0, 0.0];
        let (loss, empty) = g.masked_l1_loss(p, &target, &mask);
        assert!(!empty);
        assert_eq!(g.scalar_value(loss), 1.0);
        let (loss2, empty2) = g.masked_l1_loss(p, &target, &[0.0; 4]);
        assert!(empty2);
        assert_eq!(g.scalar_value(loss2), 0.0);
        g.backward(loss2);
        assert!(g.grad(p).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn detach_blocks_ancestry_and_gradient() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(Shape::chw(1, 1, 2), vec![1.0, 2.0]);
        let d = g.detach(x);
        let y = g.scale(d, 3.0);
        let zero = g.leaf(Shape::chw(1, 1, 2), vec![0.0, 0.0]);
        let loss = g.l1_loss(y, zero);
        assert_eq!(g.data(d), g.data(x));
        assert!(!g.depends_on(loss, x));
        assert!(g.depends_on(loss, d));
        g.backward(loss);
        assert!(g.grad(x).iter().all(|&v| v == 0.0));
        assert!(g.grad(d).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn ancestry_tracks_wiring() {
        let mut g: Graph<f32> = Graph::new();
        let a = g.leaf(Shape::chw(1, 2, 2), vec![1.0; 4]);
        let b = g.leaf(Shape::chw(1, 2, 2), vec![2.0; 4]);
        let s = g.add(a, b);
        let t = g.relu(b);
        assert!(g.depends_on(s, a));
        assert!(g.depends_on(s, b));
        assert!(!g.depends_on(t, a));
    }

    #[test]
    fn crop_takes_top_left() {
        let mut g: Graph<f32> = Graph::new();
        let a = g.leaf(Shape::chw(1, 3, 3), (0..9).map(|i| i as f32).collect());
        let y = g.crop(a, 2, 2);
        assert_eq!(g.data(y), &[0.0, 1.0, 3.0, 4.0]);
    }
}
