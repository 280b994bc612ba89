use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::Scalar;
use crate::error::{Error, Result};

/// A stack of `channels` feature maps, each `height x width`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FeatureMap { channels, height, width, data: vec![T::ZERO; channels * height * width] }
    }

    pub fn shape(&self) -> Shape {
        Shape { channels: self.channels, height: self.height, width: self.width }
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Relu,
    /// 2x2 max pooling with stride 2.
    MaxPool2,
    /// Nearest-neighbour x2 upsampling followed by a 2x2 convolution.
    UpConv2,
    /// Channel concatenation of two equally sized maps.
    Concat,
    /// Adds the network input (node 0) to a single-channel map.
    AddInput,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool2 => "maxpool2",
            LayerKind::UpConv2 => "upconv2",
            LayerKind::Concat => "concat",
            LayerKind::AddInput => "add_input",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "conv" => LayerKind::Conv,
            "relu" => LayerKind::Relu,
            "maxpool2" => LayerKind::MaxPool2,
            "upconv2" => LayerKind::UpConv2,
            "concat" => LayerKind::Concat,
            "add_input" => LayerKind::AddInput,
            _ => return None,
        })
    }

    pub fn has_params(self) -> bool {
        matches!(self, LayerKind::Conv | LayerKind::UpConv2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Kernel {
    pub kh: usize,
    pub kw: usize,
    pub in_ch: usize,
    pub out_ch: usize,
}

impl Kernel {
    pub fn weight_len(&self) -> usize {
        self.out_ch * self.in_ch * self.kh * self.kw
    }
}

/// One node of a network program. Node 0 is the input image; layer `i`
/// produces node `i + 1` from the nodes listed in `inputs`, all of which
/// must precede it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub inputs: Vec<usize>,
    /// Present exactly for `Conv` and `UpConv2`.
    pub kernel: Option<Kernel>,
    /// Zero rows above and columns left of the map; the remainder of
    /// `kh - 1`, `kw - 1` goes below and right, so convolutions keep size.
    pub padding: (usize, usize),
}

impl LayerSpec {
    pub fn conv(input: usize, kernel: Kernel) -> Self {
        LayerSpec {
            kind: LayerKind::Conv,
            inputs: vec![input],
            kernel: Some(kernel),
            padding: ((kernel.kh - 1) / 2, (kernel.kw - 1) / 2),
        }
    }

    pub fn upconv2(input: usize, in_ch: usize, out_ch: usize) -> Self {
        LayerSpec {
            kind: LayerKind::UpConv2,
            inputs: vec![input],
            kernel: Some(Kernel { kh: 2, kw: 2, in_ch, out_ch }),
            padding: (0, 0),
        }
    }

    pub fn unary(kind: LayerKind, input: usize) -> Self {
        LayerSpec { kind, inputs: vec![input], kernel: None, padding: (0, 0) }
    }

    pub fn concat(a: usize, b: usize) -> Self {
        LayerSpec { kind: LayerKind::Concat, inputs: vec![a, b], kernel: None, padding: (0, 0) }
    }

    /// Output shape given the shapes of all earlier nodes.
    pub(crate) fn infer(&self, node: usize, shapes: &[Shape]) -> Result<Shape> {
        let bad = |msg: alloc::string::String| {
            Err(Error::InvalidArgument(format!("layer {node} ({}): {msg}", self.kind.name())))
        };
        let arity = if self.kind == LayerKind::Concat { 2 } else { 1 };
        if self.inputs.len() != arity {
            return bad(format!("expects {arity} inputs, has {}", self.inputs.len()));
        }
        if let Some(&i) = self.inputs.iter().find(|&&i| i >= shapes.len()) {
            return bad(format!("input {i} is not an earlier node"));
        }
        if self.kind.has_params() != self.kernel.is_some() {
            return bad("kernel present on a parameter-free layer or missing".into());
        }
        let s = shapes[self.inputs[0]];
        match self.kind {
            LayerKind::Conv | LayerKind::UpConv2 => {
                let k = self.kernel.unwrap();
                if k.kh == 0 || k.kw == 0 || k.out_ch == 0 {
                    return bad("empty kernel".into());
                }
                if self.padding.0 >= k.kh || self.padding.1 >= k.kw {
                    return bad(format!("padding {:?} exceeds kernel", self.padding));
                }
                if k.in_ch != s.channels {
                    return bad(format!("kernel expects {} channels, input has {}", k.in_ch, s.channels));
                }
                let f = if self.kind == LayerKind::UpConv2 { 2 } else { 1 };
                Ok(Shape { channels: k.out_ch, height: f * s.height, width: f * s.width })
            }
            LayerKind::Relu => Ok(s),
            LayerKind::MaxPool2 => {
                if !s.height.is_multiple_of(2) || !s.width.is_multiple_of(2) {
                    return bad(format!("odd map {}x{}", s.height, s.width));
                }
                Ok(Shape { channels: s.channels, height: s.height / 2, width: s.width / 2 })
            }
            LayerKind::Concat => {
                let t = shapes[self.inputs[1]];
                if (s.height, s.width) != (t.height, t.width) {
                    return bad(format!("spatial sizes {}x{} and {}x{} differ", s.height, s.width, t.height, t.width));
                }
                Ok(Shape { channels: s.channels + t.channels, ..s })
            }
            LayerKind::AddInput => {
                if s != shapes[0] {
                    return bad("shape differs from the network input".into());
                }
                Ok(s)
            }
        }
    }
}

/// Unrolls `input` into a `(in_ch * kh * kw) x (h * w)` matrix so that a
/// size-preserving convolution becomes a matrix product.
pub(crate) fn im2col<T: Scalar>(x: &FeatureMap<T>, k: &Kernel, pad: (usize, usize), cols: &mut Vec<T>) {
    let (h, w) = (x.height, x.width);
    let hw = h * w;
    cols.clear();
    cols.resize(k.in_ch * k.kh * k.kw * hw, T::ZERO);
    for ci in 0..k.in_ch {
        let plane = x.plane(ci);
        for ky in 0..k.kh {
            for kx in 0..k.kw {
                let row = (ci * k.kh + ky) * k.kw + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let (x0, x1) = valid_range(kx, pad.1, w);
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y + ky;
                    if sy < pad.0 || sy - pad.0 >= h {
                        continue;
                    }
                    let src = &plane[(sy - pad.0) * w..(sy - pad.0 + 1) * w];
                    let off = kx as isize - pad.1 as isize;
                    let d = &mut dst[y * w + x0..y * w + x1];
                    let s = &src[(x0 as isize + off) as usize..(x1 as isize + off) as usize];
                    d.copy_from_slice(s);
                }
            }
        }
    }
}

/// Scatter-add of a column matrix back onto an input-shaped gradient.
pub(crate) fn col2im<T: Scalar>(cols: &[T], k: &Kernel, pad: (usize, usize), dx: &mut FeatureMap<T>) {
    let (h, w) = (dx.height, dx.width);
    let hw = h * w;
    for ci in 0..k.in_ch {
        let plane = &mut dx.data[ci * hw..(ci + 1) * hw];
        for ky in 0..k.kh {
            for kx in 0..k.kw {
                let row = (ci * k.kh + ky) * k.kw + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let (x0, x1) = valid_range(kx, pad.1, w);
                if x0 >= x1 {
                    continue;
                }
                let off = kx as isize - pad.1 as isize;
                for y in 0..h {
                    let sy = y + ky;
                    if sy < pad.0 || sy - pad.0 >= h {
                        continue;
                    }
                    let d = &mut plane[(sy - pad.0) * w..(sy - pad.0 + 1) * w];
                    let d = &mut d[(x0 as isize + off) as usize..(x1 as isize + off) as usize];
                    for (a, &b) in d.iter_mut().zip(&src[y * w + x0..y * w + x1]) {
                        *a += b;
                    }
                }
            }
        }
    }
}

/// Output columns `x` for which `x + kx - pad` lies inside `0..w`.
fn valid_range(kx: usize, pad: usize, w: usize) -> (usize, usize) {
    let x0 = pad.saturating_sub(kx);
    let x1 = (w + pad).saturating_sub(kx).min(w);
    (x0, x1)
}

const TILE: usize = 256;

/// `out[o][p] = bias[o] + sum_k weight[o][k] * cols[k][p]`.
pub(crate) fn gemm_forward<T: Scalar>(weight: &[T], bias: &[T], cols: &[T], kdim: usize, hw: usize, out: &mut [T]) {
    let out_ch = bias.len();
    for p0 in (0..hw).step_by(TILE) {
        let p1 = (p0 + TILE).min(hw);
        let n = p1 - p0;
        let mut o = 0;
        while o + 4 <= out_ch {
            let mut acc = [[T::ZERO; TILE]; 4];
            for (r, a) in acc.iter_mut().enumerate() {
                a[..n].fill(bias[o + r]);
            }
            for k in 0..kdim {
                let c = &cols[k * hw + p0..k * hw + p1];
                let w0 = weight[o * kdim + k];
                let w1 = weight[(o + 1) * kdim + k];
                let w2 = weight[(o + 2) * kdim + k];
                let w3 = weight[(o + 3) * kdim + k];
                let [a0, a1, a2, a3] = &mut acc;
                for (i, &cv) in c.iter().enumerate() {
                    a0[i] += w0 * cv;
                    a1[i] += w1 * cv;
                    a2[i] += w2 * cv;
                    a3[i] += w3 * cv;
                }
            }
            for (r, a) in acc.iter().enumerate() {
                out[(o + r) * hw + p0..(o + r) * hw + p1].copy_from_slice(&a[..n]);
            }
            o += 4;
        }
        while o < out_ch {
            let dst = &mut out[o * hw + p0..o * hw + p1];
            dst.fill(bias[o]);
            for k in 0..kdim {
                let wv = weight[o * kdim + k];
                for (d, &cv) in dst.iter_mut().zip(&cols[k * hw + p0..k * hw + p1]) {
                    *d += wv * cv;
                }
            }
            o += 1;
        }
    }
}

/// Accumulates `dweight[o][k] += sum_p dout[o][p] cols[k][p]` and
/// `dbias[o] += sum_p dout[o][p]`.
pub(crate) fn gemm_weight_grad<T: Scalar>(
    dout: &[T],
    cols: &[T],
    kdim: usize,
    hw: usize,
    dweight: &mut [T],
    dbias: &mut [T],
) {
    for (o, db) in dbias.iter_mut().enumerate() {
        let g = &dout[o * hw..(o + 1) * hw];
        *db += sum(g);
        for k in 0..kdim {
            dweight[o * kdim + k] += dot(g, &cols[k * hw..(k + 1) * hw]);
        }
    }
}

/// `dcols[k][p] = sum_o weight[o][k] * dout[o][p]`.
pub(crate) fn gemm_input_grad<T: Scalar>(
    weight: &[T],
    dout: &[T],
    out_ch: usize,
    kdim: usize,
    hw: usize,
    dcols: &mut Vec<T>,
) {
    dcols.clear();
    dcols.resize(kdim * hw, T::ZERO);
    for p0 in (0..hw).step_by(TILE) {
        let p1 = (p0 + TILE).min(hw);
        for k in 0..kdim {
            let dst = &mut dcols[k * hw + p0..k * hw + p1];
            let mut o = 0;
            while o + 4 <= out_ch {
                let (w0, w1, w2, w3) = (
                    weight[o * kdim + k],
                    weight[(o + 1) * kdim + k],
                    weight[(o + 2) * kdim + k],
                    weight[(o + 3) * kdim + k],
                );
                let g0 = &dout[o * hw + p0..o * hw + p1];
                let g1 = &dout[(o + 1) * hw + p0..(o + 1) * hw + p1];
                let g2 = &dout[(o + 2) * hw + p0..(o + 2) * hw + p1];
                let g3 = &dout[(o + 3) * hw + p0..(o + 3) * hw + p1];
                for i in 0..dst.len() {
                    dst[i] += w0 * g0[i] + w1 * g1[i] + w2 * g2[i] + w3 * g3[i];
                }
                o += 4;
            }
            while o < out_ch {
                let wv = weight[o * kdim + k];
                for (d, &g) in dst.iter_mut().zip(&dout[o * hw + p0..o * hw + p1]) {
                    *d += wv * g;
                }
                o += 1;
            }
        }
    }
}

/// Dot product with eight independent partial sums, combined in a fixed
/// order.
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::ZERO; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        for j in 0..8 {
            acc[j] += a[8 * c + j] * b[8 * c + j];
        }
    }
    let mut tail = T::ZERO;
    for i in 8 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

pub(crate) fn sum<T: Scalar>(a: &[T]) -> T {
    let mut acc = [T::ZERO; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        for j in 0..8 {
            acc[j] += a[8 * c + j];
        }
    }
    let mut tail = T::ZERO;
    for &v in &a[8 * chunks..] {
        tail += v;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// 2x2 max pooling; `argmax` records which of the four inputs won (first
/// maximum in row-major order).
pub(crate) fn maxpool2<T: Scalar>(x: &FeatureMap<T>, argmax: &mut Vec<u8>) -> FeatureMap<T> {
    let (h, w) = (x.height / 2, x.width / 2);
    let mut out = FeatureMap::zeros(x.channels, h, w);
    argmax.clear();
    argmax.resize(out.data.len(), 0);
    for c in 0..x.channels {
        let src = x.plane(c);
        for y in 0..h {
            for xx in 0..w {
                let base = 2 * y * x.width + 2 * xx;
                let cand = [src[base], src[base + 1], src[base + x.width], src[base + x.width + 1]];
                let mut best = 0;
                for j in 1..4 {
                    if cand[j] > cand[best] {
                        best = j;
                    }
                }
                let i = (c * h + y) * w + xx;
                out.data[i] = cand[best];
                argmax[i] = best as u8;
            }
        }
    }
    out
}

pub(crate) fn maxpool2_backward<T: Scalar>(dout: &FeatureMap<T>, argmax: &[u8], dx: &mut FeatureMap<T>) {
    let (h, w) = (dout.height, dout.width);
    let iw = dx.width;
    for c in 0..dout.channels {
        for y in 0..h {
            for xx in 0..w {
                let i = (c * h + y) * w + xx;
                let a = argmax[i] as usize;
                let (dy, dxo) = (a / 2, a % 2);
                dx.data[(c * dx.height + 2 * y + dy) * iw + 2 * xx + dxo] += dout.data[i];
            }
        }
    }
}

pub(crate) fn upsample2<T: Scalar>(x: &FeatureMap<T>) -> FeatureMap<T> {
    let (h, w) = (2 * x.height, 2 * x.width);
    let mut out = FeatureMap::zeros(x.channels, h, w);
    for c in 0..x.channels {
        let src = x.plane(c);
        for y in 0..h {
            let s = &src[(y / 2) * x.width..(y / 2 + 1) * x.width];
            let d = &mut out.data[(c * h + y) * w..(c * h + y + 1) * w];
            for (i, v) in d.iter_mut().enumerate() {
                *v = s[i / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward<T: Scalar>(dout: &FeatureMap<T>, dx: &mut FeatureMap<T>) {
    let (h, w) = (dout.height, dout.width);
    for c in 0..dout.channels {
        for y in 0..h {
            let s = &dout.data[(c * h + y) * w..(c * h + y + 1) * w];
            let row = (c * dx.height + y / 2) * dx.width;
            for (i, &g) in s.iter().enumerate() {
                dx.data[row + i / 2] += g;
            }
        }
    }
}
