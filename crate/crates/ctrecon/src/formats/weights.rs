use std::fs;
use std::path::Path;

use ctrecon_core::net::{Kernel, LayerKind, LayerSpec, NetworkParams, Scalar};

use super::{write_bytes, FormatError, Reader, Result, Writer};

pub const WEIGHTS_MAGIC: &[u8; 8] = b"CTRNET\0\0";

const KINDS: [LayerKind; 6] =
    [LayerKind::Conv, LayerKind::Relu, LayerKind::MaxPool2, LayerKind::UpConv2, LayerKind::Concat, LayerKind::AddInput];

/// Header `depth, base_channels, n_layers` (`u32`), then per layer:
/// `kind, n_inputs, inputs..., has_kernel, kh, kw, in_ch, out_ch, pad_top,
/// pad_left` (`u32`); then `n_params: u64` and the parameters as `f32`.
pub fn encode_weights<T: Scalar>(params: &NetworkParams<T>) -> Vec<u8> {
    let mut w = Writer::new(WEIGHTS_MAGIC);
    w.u32(params.depth() as u32);
    w.u32(params.base_channels() as u32);
    w.u32(params.program().len() as u32);
    for l in params.program() {
        w.u32(KINDS.iter().position(|&k| k == l.kind).unwrap() as u32);
        w.u32(l.inputs.len() as u32);
        for &i in &l.inputs {
            w.u32(i as u32);
        }
        let k = l.kernel.unwrap_or(Kernel { kh: 0, kw: 0, in_ch: 0, out_ch: 0 });
        w.u32(l.kernel.is_some() as u32);
        for v in [k.kh, k.kw, k.in_ch, k.out_ch, l.padding.0, l.padding.1] {
            w.u32(v as u32);
        }
    }
    w.u64(params.len() as u64);
    for &v in params.values() {
        w.f32(v.to_f64() as f32);
    }
    w.buf
}

pub fn decode_weights(bytes: &[u8]) -> Result<NetworkParams<f32>> {
    let mut r = Reader::new(bytes, WEIGHTS_MAGIC, "weights")?;
    let depth = r.u32()? as usize;
    let base = r.u32()? as usize;
    let n_layers = r.u32()? as usize;
    r.expect_remaining(4 * 9 * n_layers as u64)?;
    let mut program = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        let kind =
            *KINDS.get(r.u32()? as usize).ok_or_else(|| FormatError::Invalid(format!("layer {i}: unknown kind")))?;
        let n_in = r.u32()? as usize;
        r.expect_remaining(4 * n_in as u64)?;
        let inputs = (0..n_in).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let has_kernel = r.u32()? != 0;
        let mut f = [0usize; 6];
        for v in &mut f {
            *v = r.u32()? as usize;
        }
        let kernel = has_kernel.then_some(Kernel { kh: f[0], kw: f[1], in_ch: f[2], out_ch: f[3] });
        program.push(LayerSpec { kind, inputs, kernel, padding: (f[4], f[5]) });
    }
    let mut params = NetworkParams::<f32>::new(program, depth, base)?;
    let n = r.u64()?;
    if n != params.len() as u64 {
        return Err(FormatError::Invalid(format!("layer table needs {} parameters, file has {n}", params.len())));
    }
    r.expect_remaining(4 * n)?;
    for v in params.values_mut() {
        *v = r.f32()?;
    }
    r.finish()?;
    Ok(params)
}

pub fn write_weights<T: Scalar>(path: &Path, params: &NetworkParams<T>) -> Result<()> {
    write_bytes(path, &encode_weights(params))
}

pub fn read_weights(path: &Path) -> Result<NetworkParams<f32>> {
    decode_weights(&fs::read(path)?)
}
