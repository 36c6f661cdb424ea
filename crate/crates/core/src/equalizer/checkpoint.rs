//! Binary model checkpoints.
//!
//! ```text
//! magic "KQMODEL\0" | version u16 | sps u32 | n_layers u32
//! per layer:
//!   kind u8 (0 kan, 1 relu-linear, 2 linear) | c_in c_out k s grid u32 | bias u8
//!   n_weights u64 | weights f64 row-major
//!   n_bias u64 | bias f64
//!   n_connections u64 | mask bitmap, LSB first, ceil(n/8) bytes
//! ```
//! All integers and floats little-endian.

use std::io::{Read, Write};

use super::{Architecture, ConvLayerSpec, EqualizerModel, LayerKind, LayerParams};
use crate::io::{read_array, read_f64, read_u16, read_u32, read_u64, read_u8};
use crate::spline::{KanLayerDense, SplineGrid};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"KQMODEL\0";
const VERSION: u16 = 1;

pub(super) fn write<W: Write>(model: &EqualizerModel, mut w: W) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(model.arch.sps as u32).to_le_bytes());
    buf.extend_from_slice(&(model.layers.len() as u32).to_le_bytes());
    for (spec, params) in model.arch.layers.iter().zip(&model.layers) {
        let (kind, grid) = match spec.kind {
            LayerKind::Kan { grid } => (0u8, grid as u32),
            LayerKind::ReluLinear => (1, 0),
            LayerKind::Linear => (2, 0),
        };
        buf.push(kind);
        for v in [spec.c_in as u32, spec.c_out as u32, spec.k as u32, spec.s as u32, grid] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.push(spec.bias as u8);
        for values in [params.weights(), params.bias()] {
            buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
            for v in values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mask = params.mask();
        buf.extend_from_slice(&(mask.len() as u64).to_le_bytes());
        let mut bytes = vec![0u8; mask.len().div_ceil(8)];
        for (i, &m) in mask.iter().enumerate() {
            if m {
                bytes[i / 8] |= 1 << (i % 8);
            }
        }
        buf.extend_from_slice(&bytes);
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R) -> Result<Vec<f64>> {
    let n = read_u64(r)? as usize;
    if n > 1 << 32 {
        return Err(Error::format("implausible array length"));
    }
    (0..n).map(|_| read_f64(r)).collect()
}

pub(super) fn read<R: Read>(mut r: R) -> Result<EqualizerModel> {
    let magic: [u8; 8] = read_array(&mut r)?;
    if &magic != MAGIC {
        return Err(Error::format("not a model checkpoint"));
    }
    let version = read_u16(&mut r)?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported checkpoint version {version}")));
    }
    let sps = read_u32(&mut r)? as usize;
    let n_layers = read_u32(&mut r)? as usize;
    let mut specs = Vec::with_capacity(n_layers);
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let kind = read_u8(&mut r)?;
        let c_in = read_u32(&mut r)? as usize;
        let c_out = read_u32(&mut r)? as usize;
        let k = read_u32(&mut r)? as usize;
        let s = read_u32(&mut r)? as usize;
        let grid = read_u32(&mut r)? as usize;
        let bias_flag = read_u8(&mut r)? != 0;
        let weights = read_f64s(&mut r)?;
        let bias = read_f64s(&mut r)?;
        let n_conn = read_u64(&mut r)? as usize;
        if n_conn != c_in * c_out * k {
            return Err(Error::format("mask length does not match layer dimensions"));
        }
        let mut bytes = vec![0u8; n_conn.div_ceil(8)];
        r.read_exact(&mut bytes)?;
        let mask: Vec<bool> = (0..n_conn).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect();
        let kind = match kind {
            0 => LayerKind::Kan { grid },
            1 => LayerKind::ReluLinear,
            2 => LayerKind::Linear,
            other => return Err(Error::format(format!("unknown layer kind {other}"))),
        };
        let params = match kind {
            LayerKind::Kan { grid } => LayerParams::Kan(KanLayerDense {
                n_in: c_in * k,
                n_out: c_out,
                grid: SplineGrid::new(grid).map_err(|_| Error::format("bad grid size"))?,
                coeffs: weights,
                mask,
            }),
            _ => LayerParams::Conv { weights, bias, mask },
        };
        specs.push(ConvLayerSpec {
            kind,
            c_in,
            c_out,
            k,
            s,
            bias: bias_flag,
        });
        layers.push(params);
    }
    EqualizerModel::from_parts(Architecture { sps, layers: specs }, layers)
        .map_err(|e| Error::format(format!("inconsistent checkpoint: {e}")))
}
