use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::layers::{
    col2im, gemm_forward, gemm_input_grad, gemm_weight_grad, im2col, maxpool2, maxpool2_backward, upsample2,
    upsample2_backward, FeatureMap, Kernel, LayerKind, LayerSpec, Shape,
};
use super::Scalar;
use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::projector::Image;

/// Location of one parameterized layer's weights and bias inside the flat
/// parameter vector. Weights are laid out `[out_ch][in_ch][kh][kw]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamSlot {
    pub layer: usize,
    pub kernel: Kernel,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

/// A network program together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    program: Vec<LayerSpec>,
    slots: Vec<ParamSlot>,
    values: Vec<T>,
    depth: usize,
    base_channels: usize,
}

impl<T: Scalar> NetworkParams<T> {
    /// Wraps a program with all parameters zero. The program must map a
    /// single-channel `2^depth`-sided image to a single-channel image of
    /// the same size.
    pub fn new(program: Vec<LayerSpec>, depth: usize, base_channels: usize) -> Result<Self> {
        let mut slots = Vec::new();
        let mut len = 0;
        for (i, l) in program.iter().enumerate() {
            if let Some(k) = l.kernel.filter(|_| l.kind.has_params()) {
                slots.push(ParamSlot { layer: i, kernel: k, weight_offset: len, bias_offset: len + k.weight_len() });
                len += k.weight_len() + k.out_ch;
            }
        }
        let p = NetworkParams { program, slots, values: vec![T::ZERO; len], depth, base_channels };
        let side = 1usize.checked_shl(depth as u32).ok_or_else(|| Error::InvalidArgument(format!("depth {depth}")))?;
        p.shapes(side)?;
        Ok(p)
    }

    /// Residual U-net: `depth` max-pooling stages with two 3x3 conv+relu
    /// per scale, `base_channels << k` channels at scale `k`, nearest
    /// upsampling + 2x2 conv on the way back up, skip concatenation, a
    /// final 1x1 conv to one channel and the input added back. Parameters
    /// start at zero, i.e. the identity map.
    pub fn unet(depth: usize, base_channels: usize) -> Result<Self> {
        if base_channels == 0 {
            return Err(Error::InvalidArgument("base_channels = 0".into()));
        }
        let mut prog = Vec::new();
        let mut push = |l: LayerSpec| {
            prog.push(l);
            prog.len()
        };
        let conv3 = |input, in_ch, out_ch| LayerSpec::conv(input, Kernel { kh: 3, kw: 3, in_ch, out_ch });
        let mut cur = 0;
        let mut ch = 1;
        let mut skips = Vec::with_capacity(depth);
        for k in 0..=depth {
            let out = base_channels << k;
            cur = push(conv3(cur, ch, out));
            cur = push(LayerSpec::unary(LayerKind::Relu, cur));
            cur = push(conv3(cur, out, out));
            cur = push(LayerSpec::unary(LayerKind::Relu, cur));
            ch = out;
            if k < depth {
                skips.push(cur);
                cur = push(LayerSpec::unary(LayerKind::MaxPool2, cur));
            }
        }
        for k in (0..depth).rev() {
            let out = base_channels << k;
            cur = push(LayerSpec::upconv2(cur, ch, out));
            cur = push(LayerSpec::concat(skips[k], cur));
            cur = push(conv3(cur, 2 * out, out));
            cur = push(LayerSpec::unary(LayerKind::Relu, cur));
            cur = push(conv3(cur, out, out));
            cur = push(LayerSpec::unary(LayerKind::Relu, cur));
            ch = out;
        }
        cur = push(LayerSpec::conv(cur, Kernel { kh: 1, kw: 1, in_ch: ch, out_ch: 1 }));
        push(LayerSpec::unary(LayerKind::AddInput, cur));
        NetworkParams::new(prog, depth, base_channels)
    }

    /// Zero-mean Gaussian weights with std `sqrt(2 / (kh kw in_ch))`, zero
    /// biases.
    pub fn he_init(&mut self, rng: &mut Rng) {
        for s in &self.slots {
            let k = s.kernel;
            let std = crate::math::sqrt(2.0 / (k.kh * k.kw * k.in_ch) as f64);
            for w in &mut self.values[s.weight_offset..s.bias_offset] {
                *w = T::from_f64(std * rng.normal());
            }
            self.values[s.bias_offset..s.bias_offset + k.out_ch].fill(T::ZERO);
        }
    }

    pub fn program(&self) -> &[LayerSpec] {
        &self.program
    }

    pub fn slots(&self) -> &[ParamSlot] {
        &self.slots
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn base_channels(&self) -> usize {
        self.base_channels
    }

    /// All weights and biases, slot by slot.
    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn weight(&self, slot: usize) -> &[T] {
        let s = &self.slots[slot];
        &self.values[s.weight_offset..s.bias_offset]
    }

    pub fn bias(&self, slot: usize) -> &[T] {
        let s = &self.slots[slot];
        &self.values[s.bias_offset..s.bias_offset + s.kernel.out_ch]
    }

    /// Same network in another precision.
    pub fn cast<U: Scalar>(&self) -> NetworkParams<U> {
        NetworkParams {
            program: self.program.clone(),
            slots: self.slots.clone(),
            values: self.values.iter().map(|v| U::from_f64(v.to_f64())).collect(),
            depth: self.depth,
            base_channels: self.base_channels,
        }
    }

    /// Node shapes for a square single-channel input of the given side.
    pub fn shapes(&self, side: usize) -> Result<Vec<Shape>> {
        let mut shapes = Vec::with_capacity(self.program.len() + 1);
        shapes.push(Shape { channels: 1, height: side, width: side });
        for (i, l) in self.program.iter().enumerate() {
            let s = l.infer(i + 1, &shapes)?;
            shapes.push(s);
        }
        let out = *shapes.last().unwrap();
        if out != shapes[0] {
            return Err(Error::InvalidArgument(format!(
                "network maps {side}x{side} to {}x{}x{}",
                out.channels, out.height, out.width
            )));
        }
        Ok(shapes)
    }

    fn check_side(&self, side: usize) -> Result<()> {
        if side == 0 || !side.is_multiple_of(1usize << self.depth) {
            return Err(Error::InvalidArgument(format!("input side {side} is not divisible by 2^{}", self.depth)));
        }
        Ok(())
    }
}

/// Gradients with the same layout as [`NetworkParams::values`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub values: Vec<T>,
}

impl<T: Scalar> Gradients<T> {
    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.to_f64().abs()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
enum Cache<T> {
    None,
    /// im2col matrix of the (upsampled) input.
    Cols(Vec<T>),
    Argmax(Vec<u8>),
}

/// One evaluated node. Node 0 is the input.
#[derive(Debug, Clone)]
pub struct TapeNode<T> {
    pub kind: Option<LayerKind>,
    pub inputs: Vec<usize>,
    pub value: FeatureMap<T>,
    cache: Cache<T>,
}

/// Forward evaluation record in topological order, consumed by
/// [`backward_net`].
#[derive(Debug, Clone)]
pub struct Tape<T> {
    pub nodes: Vec<TapeNode<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn output(&self) -> &FeatureMap<T> {
        &self.nodes.last().unwrap().value
    }
}

/// Runs the program and records what the gradient rules need.
pub fn forward_tape<T: Scalar>(params: &NetworkParams<T>, input: FeatureMap<T>) -> Result<Tape<T>> {
    if input.channels != 1 || input.height != input.width {
        return Err(Error::InvalidArgument(format!(
            "network input must be one square channel, got {}x{}x{}",
            input.channels, input.height, input.width
        )));
    }
    params.check_side(input.height)?;
    params.shapes(input.height)?;
    let mut nodes: Vec<TapeNode<T>> = Vec::with_capacity(params.program.len() + 1);
    nodes.push(TapeNode { kind: None, inputs: Vec::new(), value: input, cache: Cache::None });
    let mut slot = 0;
    for l in &params.program {
        let x = &nodes[l.inputs[0]].value;
        let (value, cache) = match l.kind {
            LayerKind::Conv | LayerKind::UpConv2 => {
                let k = params.slots[slot].kernel;
                let up;
                let src = if l.kind == LayerKind::UpConv2 {
                    up = upsample2(x);
                    &up
                } else {
                    x
                };
                let mut cols = Vec::new();
                im2col(src, &k, l.padding, &mut cols);
                let hw = src.height * src.width;
                let mut out = FeatureMap::zeros(k.out_ch, src.height, src.width);
                gemm_forward(params.weight(slot), params.bias(slot), &cols, k.in_ch * k.kh * k.kw, hw, &mut out.data);
                slot += 1;
                (out, Cache::Cols(cols))
            }
            LayerKind::Relu => {
                let mut out = x.clone();
                for v in &mut out.data {
                    if !(*v > T::ZERO) {
                        *v = T::ZERO;
                    }
                }
                (out, Cache::None)
            }
            LayerKind::MaxPool2 => {
                let mut arg = Vec::new();
                (maxpool2(x, &mut arg), Cache::Argmax(arg))
            }
            LayerKind::Concat => {
                let y = &nodes[l.inputs[1]].value;
                let mut data = Vec::with_capacity(x.data.len() + y.data.len());
                data.extend_from_slice(&x.data);
                data.extend_from_slice(&y.data);
                let out = FeatureMap { channels: x.channels + y.channels, height: x.height, width: x.width, data };
                (out, Cache::None)
            }
            LayerKind::AddInput => {
                let mut out = x.clone();
                for (o, &i) in out.data.iter_mut().zip(&nodes[0].value.data) {
                    *o += i;
                }
                (out, Cache::None)
            }
        };
        nodes.push(TapeNode { kind: Some(l.kind), inputs: l.inputs.clone(), value, cache });
    }
    Ok(Tape { nodes })
}

/// Reverse-mode gradients of a scalar loss whose gradient with respect to
/// the network output is `loss_grad`.
pub fn backward_net<T: Scalar>(
    params: &NetworkParams<T>,
    tape: &Tape<T>,
    loss_grad: &FeatureMap<T>,
) -> Result<Gradients<T>> {
    if tape.nodes.len() != params.program.len() + 1 {
        return Err(crate::error::mismatch(params.program.len() + 1, tape.nodes.len()));
    }
    if loss_grad.shape() != tape.output().shape() {
        return Err(crate::error::mismatch(format!("{:?}", tape.output().shape()), format!("{:?}", loss_grad.shape())));
    }
    let mut grads = Gradients { values: vec![T::ZERO; params.values.len()] };
    let mut adj: Vec<Option<FeatureMap<T>>> = vec![None; tape.nodes.len()];
    *adj.last_mut().unwrap() = Some(loss_grad.clone());
    let mut slot = params.slots.len();
    let mut dcols = Vec::new();
    for idx in (1..tape.nodes.len()).rev() {
        let node = &tape.nodes[idx];
        let l = &params.program[idx - 1];
        if l.kind.has_params() {
            slot -= 1;
        }
        let Some(g) = adj[idx].take() else { continue };
        let src = l.inputs[0];
        match l.kind {
            LayerKind::Conv | LayerKind::UpConv2 => {
                let Cache::Cols(cols) = &node.cache else { unreachable!() };
                let s = params.slots[slot];
                let k = s.kernel;
                let kdim = k.in_ch * k.kh * k.kw;
                let hw = g.height * g.width;
                let (dw, db) = grads.values[s.weight_offset..s.bias_offset + k.out_ch].split_at_mut(k.weight_len());
                gemm_weight_grad(&g.data, cols, kdim, hw, dw, db);
                // the network input needs no gradient
                if src != 0 {
                    gemm_input_grad(params.weight(slot), &g.data, k.out_ch, kdim, hw, &mut dcols);
                    let mut dx = FeatureMap::zeros(k.in_ch, g.height, g.width);
                    col2im(&dcols, &k, l.padding, &mut dx);
                    if l.kind == LayerKind::UpConv2 {
                        let x = &tape.nodes[src].value;
                        let mut dsmall = FeatureMap::zeros(x.channels, x.height, x.width);
                        upsample2_backward(&dx, &mut dsmall);
                        dx = dsmall;
                    }
                    accumulate(&mut adj[src], dx);
                }
            }
            LayerKind::Relu => {
                let mut dx = g;
                for (d, &y) in dx.data.iter_mut().zip(&node.value.data) {
                    if !(y > T::ZERO) {
                        *d = T::ZERO;
                    }
                }
                accumulate(&mut adj[src], dx);
            }
            LayerKind::MaxPool2 => {
                let Cache::Argmax(arg) = &node.cache else { unreachable!() };
                let x = &tape.nodes[src].value;
                let mut dx = FeatureMap::zeros(x.channels, x.height, x.width);
                maxpool2_backward(&g, arg, &mut dx);
                accumulate(&mut adj[src], dx);
            }
            LayerKind::Concat => {
                let a = &tape.nodes[src].value;
                let b = &tape.nodes[l.inputs[1]].value;
                let split = a.data.len();
                let da =
                    FeatureMap { data: g.data[..split].to_vec(), ..FeatureMap::zeros(a.channels, a.height, a.width) };
                let db =
                    FeatureMap { data: g.data[split..].to_vec(), ..FeatureMap::zeros(b.channels, b.height, b.width) };
                accumulate(&mut adj[src], da);
                accumulate(&mut adj[l.inputs[1]], db);
            }
            LayerKind::AddInput => accumulate(&mut adj[src], g),
        }
    }
    Ok(grads)
}

fn accumulate<T: Scalar>(slot: &mut Option<FeatureMap<T>>, g: FeatureMap<T>) {
    match slot {
        Some(acc) => {
            for (a, &b) in acc.data.iter_mut().zip(&g.data) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

pub fn image_to_map<T: Scalar>(image: &Image) -> FeatureMap<T> {
    let s = image.side();
    FeatureMap { channels: 1, height: s, width: s, data: image.values().iter().map(|&v| T::from_f64(v)).collect() }
}

pub fn map_to_image<T: Scalar>(map: &FeatureMap<T>, pixel_spacing: f64) -> Result<Image> {
    if map.channels != 1 || map.height != map.width {
        return Err(crate::error::mismatch("one square channel", format!("{:?}", map.shape())));
    }
    Image::from_values(map.height, pixel_spacing, map.data.iter().map(|v| v.to_f64()).collect())
}

/// `output = input + body(input)`.
pub fn forward_net<T: Scalar>(params: &NetworkParams<T>, input: &Image) -> Result<Image> {
    let tape = forward_tape(params, image_to_map(input))?;
    map_to_image(tape.output(), input.pixel_spacing())
}

/// Mean squared error and its gradient with respect to `output`.
pub fn mse<T: Scalar>(output: &FeatureMap<T>, target: &FeatureMap<T>) -> Result<(f64, FeatureMap<T>)> {
    if output.shape() != target.shape() {
        return Err(crate::error::mismatch(format!("{:?}", output.shape()), format!("{:?}", target.shape())));
    }
    let n = output.data.len() as f64;
    let scale = T::from_f64(2.0 / n);
    let mut loss = 0.0;
    let mut grad = FeatureMap::zeros(output.channels, output.height, output.width);
    for ((g, &o), &t) in grad.data.iter_mut().zip(&output.data).zip(&target.data) {
        let r = o - t;
        loss += r.to_f64() * r.to_f64();
        *g = scale * r;
    }
    Ok((loss / n, grad))
}

/// Loss and parameter gradients for one training pair.
pub fn loss_and_gradients<T: Scalar>(
    params: &NetworkParams<T>,
    input: FeatureMap<T>,
    target: &FeatureMap<T>,
) -> Result<(f64, Gradients<T>)> {
    let tape = forward_tape(params, input)?;
    let (loss, g) = mse(tape.output(), target)?;
    Ok((loss, backward_net(params, &tape, &g)?))
}
