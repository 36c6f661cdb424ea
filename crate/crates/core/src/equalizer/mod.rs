//! Convolutional equalizers: KAN-1, KAN-2, CNN-2 and FIR.
//!
//! Every architecture is a stack of 1D convolutions over a 2-sps input.
//! Layer `l` slides a `k`-tap window with stride `s` over `c_in` channels
//! and produces `c_out` channels. The last layer emits
//! `c_out = prod(S) / sps` values per position, which are interleaved into
//! one estimate per symbol.
//!
//! A KAN layer replaces each weight of the window by a spline function
//! (`c_out * c_in * k` functions); CNN layers are affine maps with ReLU on
//! hidden layers; FIR is a single bias-free linear layer.

mod checkpoint;

use std::fmt;
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::spline::{self, interpolate, KanLayerDense, Segment, SplineGrid};
use crate::{Error, Result};

pub const KAN_GRID_SIZES: [usize; 3] = [5, 9, 17];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum LayerKind {
    Kan { grid: usize },
    ReluLinear,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    #[serde(flatten)]
    pub kind: LayerKind,
    pub c_in: usize,
    /// 0 on the last layer means "derive from the strides".
    pub c_out: usize,
    pub k: usize,
    pub s: usize,
    #[serde(default)]
    pub bias: bool,
}

impl ConvLayerSpec {
    pub fn connections(&self) -> usize {
        self.c_out * self.c_in * self.k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "FIR")]
    Fir,
    #[serde(rename = "KAN-1")]
    Kan1,
    #[serde(rename = "KAN-2")]
    Kan2,
    #[serde(rename = "CNN-2")]
    Cnn2,
    #[serde(rename = "custom")]
    Custom,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Fir => "FIR",
            Family::Kan1 => "KAN-1",
            Family::Kan2 => "KAN-2",
            Family::Cnn2 => "CNN-2",
            Family::Custom => "custom",
        })
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FIR" => Ok(Family::Fir),
            "KAN-1" | "KAN1" => Ok(Family::Kan1),
            "KAN-2" | "KAN2" => Ok(Family::Kan2),
            "CNN-2" | "CNN2" => Ok(Family::Cnn2),
            "CUSTOM" => Ok(Family::Custom),
            _ => Err(Error::config(format!("unknown equalizer family {s:?}"))),
        }
    }
}

/// A validated layer stack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub sps: usize,
    pub layers: Vec<ConvLayerSpec>,
}

/// `prod(S) / sps`, the channel count the last layer must have.
pub fn last_layer_channels(strides: &[usize], sps: usize) -> Result<usize> {
    let prod: usize = strides.iter().product();
    if sps == 0 || !prod.is_multiple_of(sps) || prod / sps == 0 {
        return Err(Error::config(format!(
            "last-layer C_out = prod(S)/sps = {prod}/{sps} is not a positive integer"
        )));
    }
    Ok(prod / sps)
}

/// Check channel chaining and the last-layer rate constraint. A last-layer
/// `c_out` of 0 is filled in.
pub fn validate_architecture(mut layers: Vec<ConvLayerSpec>, sps: usize) -> Result<Architecture> {
    if layers.is_empty() {
        return Err(Error::config("an equalizer needs at least one layer"));
    }
    let strides: Vec<usize> = layers.iter().map(|l| l.s).collect();
    let required = last_layer_channels(&strides, sps)?;
    let n = layers.len();
    for (i, layer) in layers.iter_mut().enumerate() {
        if layer.k == 0 || layer.s == 0 {
            return Err(Error::config(format!("layer {}: K and S must be >= 1", i + 1)));
        }
        if i == 0 && layer.c_in != 1 {
            return Err(Error::config(format!(
                "layer 1: C_in must be 1, got {}",
                layer.c_in
            )));
        }
        if let LayerKind::Kan { grid } = layer.kind {
            if !KAN_GRID_SIZES.contains(&grid) {
                return Err(Error::config(format!(
                    "layer {}: KAN grid size must be one of {KAN_GRID_SIZES:?}, got {grid}",
                    i + 1
                )));
            }
            if layer.bias {
                return Err(Error::config(format!("layer {}: KAN layers have no bias", i + 1)));
            }
        }
        if i + 1 == n {
            if layer.c_out == 0 {
                layer.c_out = required;
            } else if layer.c_out != required {
                return Err(Error::config(format!(
                    "last layer: C_out must be prod(S)/sps = {required}, got {}",
                    layer.c_out
                )));
            }
        } else if layer.c_out == 0 {
            return Err(Error::config(format!("layer {}: C_out must be >= 1", i + 1)));
        }
    }
    for i in 1..n {
        if layers[i].c_in != layers[i - 1].c_out {
            return Err(Error::config(format!(
                "layer {}: C_in = {} does not match previous C_out = {}",
                i + 1,
                layers[i].c_in,
                layers[i - 1].c_out
            )));
        }
    }
    Ok(Architecture { sps, layers })
}

impl Architecture {
    pub fn fir(taps: usize) -> Result<Self> {
        validate_architecture(
            vec![ConvLayerSpec {
                kind: LayerKind::Linear,
                c_in: 1,
                c_out: 1,
                k: taps,
                s: 2,
                bias: false,
            }],
            2,
        )
    }

    pub fn kan1(taps: usize, grid: usize) -> Result<Self> {
        validate_architecture(
            vec![ConvLayerSpec {
                kind: LayerKind::Kan { grid },
                c_in: 1,
                c_out: 1,
                k: taps,
                s: 2,
                bias: false,
            }],
            2,
        )
    }

    pub fn cnn2(c1: usize, k1: usize, s1: usize, k2: usize, s2: usize) -> Result<Self> {
        validate_architecture(
            vec![
                ConvLayerSpec {
                    kind: LayerKind::ReluLinear,
                    c_in: 1,
                    c_out: c1,
                    k: k1,
                    s: s1,
                    bias: true,
                },
                ConvLayerSpec {
                    kind: LayerKind::Linear,
                    c_in: c1,
                    c_out: 0,
                    k: k2,
                    s: s2,
                    bias: true,
                },
            ],
            2,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn kan2(
        c1: usize,
        k1: usize,
        s1: usize,
        g1: usize,
        k2: usize,
        s2: usize,
        g2: usize,
    ) -> Result<Self> {
        validate_architecture(
            vec![
                ConvLayerSpec {
                    kind: LayerKind::Kan { grid: g1 },
                    c_in: 1,
                    c_out: c1,
                    k: k1,
                    s: s1,
                    bias: false,
                },
                ConvLayerSpec {
                    kind: LayerKind::Kan { grid: g2 },
                    c_in: c1,
                    c_out: 0,
                    k: k2,
                    s: s2,
                    bias: false,
                },
            ],
            2,
        )
    }

    pub fn family(&self) -> Family {
        let kinds: Vec<LayerKind> = self.layers.iter().map(|l| l.kind).collect();
        let all_kan = kinds.iter().all(|k| matches!(k, LayerKind::Kan { .. }));
        match kinds.as_slice() {
            [LayerKind::Linear] if !self.layers[0].bias => Family::Fir,
            [LayerKind::Kan { .. }] => Family::Kan1,
            [_, _] if all_kan => Family::Kan2,
            [LayerKind::ReluLinear, LayerKind::Linear] => Family::Cnn2,
            _ => Family::Custom,
        }
    }

    pub fn total_stride(&self) -> usize {
        self.layers.iter().map(|l| l.s).product()
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(0, |l| l.c_out)
    }

    /// Input samples seen by one final output position.
    pub fn receptive_field(&self) -> usize {
        let mut rf = 1;
        let mut stride = 1;
        for l in &self.layers {
            rf += (l.k - 1) * stride;
            stride *= l.s;
        }
        rf
    }

    /// Output `q` (flattened, one per symbol) estimates symbol `q + lag`;
    /// the lag centers the receptive field on the middle symbol of each
    /// output group.
    pub fn symbol_lag(&self) -> isize {
        let rf = self.receptive_field() as f64;
        let c = self.out_channels() as f64;
        let lag = (rf - 1.0) / (2.0 * self.sps as f64) - (c - 1.0) / 2.0;
        (lag + 0.5).floor() as isize
    }

    /// Number of final positions produced from `len` input samples.
    pub fn positions(&self, len: usize) -> usize {
        let mut l = len;
        for layer in &self.layers {
            if l < layer.k {
                return 0;
            }
            l = (l - layer.k) / layer.s + 1;
        }
        l
    }

    /// Symbols of an `n_symbols` frame that have full receptive-field context.
    pub fn usable_symbols(&self, n_symbols: usize) -> Range<usize> {
        let c = self.out_channels() as isize;
        let lag = self.symbol_lag();
        let n_samples = n_symbols * self.sps;
        let rf = self.receptive_field();
        if n_samples < rf {
            return 0..0;
        }
        let p_max = ((n_samples - rf) / self.total_stride()) as isize;
        let first = lag.max(0);
        let last = p_max * c + c - 1 + lag;
        let end = (last + 1).min(n_symbols as isize);
        if end <= first {
            0..0
        } else {
            first as usize..end as usize
        }
    }

    /// Input sample window needed to estimate symbols `first..first+count`
    /// from an input of `n_samples`.
    pub fn window(&self, first: usize, count: usize, n_samples: usize) -> Result<BlockWindow> {
        if count == 0 {
            return Err(Error::contract("empty symbol block"));
        }
        let c = self.out_channels() as isize;
        let lag = self.symbol_lag();
        let q0 = first as isize - lag;
        let q1 = (first + count - 1) as isize - lag;
        let p0 = q0.div_euclid(c);
        let p1 = q1.div_euclid(c);
        let stride = self.total_stride() as isize;
        let start = p0 * stride;
        let end = p1 * stride + self.receptive_field() as isize;
        if p0 < 0 || end > n_samples as isize {
            return Err(Error::contract(format!(
                "symbols {first}..{} lack receptive-field context in {n_samples} samples",
                first + count
            )));
        }
        Ok(BlockWindow {
            sample_start: start as usize,
            sample_len: (end - start) as usize,
            skip: (q0 - p0 * c) as usize,
            count,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: Architecture = toml::from_str(text)?;
        validate_architecture(raw.layers, raw.sps)
    }

    /// Compact descriptor, e.g. `kan2-c4-k32-s2-g9-k8-s4-g5`.
    pub fn descriptor(&self) -> String {
        let mut out = match self.family() {
            Family::Fir => "fir".to_string(),
            Family::Kan1 => "kan1".to_string(),
            Family::Kan2 => "kan2".to_string(),
            Family::Cnn2 => "cnn2".to_string(),
            Family::Custom => "custom".to_string(),
        };
        for (i, l) in self.layers.iter().enumerate() {
            if i + 1 < self.layers.len() || self.layers.len() == 1 && l.c_out != 1 {
                out.push_str(&format!("-c{}", l.c_out));
            }
            out.push_str(&format!("-k{}-s{}", l.k, l.s));
            if let LayerKind::Kan { grid } = l.kind {
                out.push_str(&format!("-g{grid}"));
            }
        }
        out
    }

    /// Inverse of [`Architecture::descriptor`] for the four named families.
    pub fn from_descriptor(text: &str) -> Result<Self> {
        let bad = || Error::config(format!("cannot parse architecture descriptor {text:?}"));
        let mut tokens = text.trim().split('-');
        let family: Family = tokens.next().ok_or_else(bad)?.parse()?;
        let mut values: Vec<(char, usize)> = Vec::new();
        for t in tokens {
            let mut chars = t.chars();
            let key = chars.next().ok_or_else(bad)?;
            let value = chars.as_str().parse().map_err(|_| bad())?;
            values.push((key, value));
        }
        let keys: String = values.iter().map(|(k, _)| *k).collect();
        let v: Vec<usize> = values.iter().map(|(_, v)| *v).collect();
        match (family, keys.as_str()) {
            (Family::Fir, "ks") if v[1] == 2 => Self::fir(v[0]),
            (Family::Kan1, "ksg") if v[1] == 2 => Self::kan1(v[0], v[2]),
            (Family::Cnn2, "cksks") => Self::cnn2(v[0], v[1], v[2], v[3], v[4]),
            (Family::Kan2, "cksgksg") => Self::kan2(v[0], v[1], v[2], v[3], v[4], v[5], v[6]),
            _ => Err(bad()),
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_descriptor(s)
    }
}

/// Sample range fed to the model for one block of symbols; the block's
/// estimates are `output[skip..skip + count]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockWindow {
    pub sample_start: usize,
    pub sample_len: usize,
    pub skip: usize,
    pub count: usize,
}

/// Trainable parameters of one layer.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    /// `n_in = c_in * k`, `n_out = c_out`; function `(c, ci * k + j)`.
    Kan(KanLayerDense),
    /// Weights `[c_out][c_in][k]`, one mask bit per weight.
    Conv {
        weights: Vec<f64>,
        bias: Vec<f64>,
        mask: Vec<bool>,
    },
}

impl LayerParams {
    pub fn weights(&self) -> &[f64] {
        match self {
            LayerParams::Kan(l) => &l.coeffs,
            LayerParams::Conv { weights, .. } => weights,
        }
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        match self {
            LayerParams::Kan(l) => &mut l.coeffs,
            LayerParams::Conv { weights, .. } => weights,
        }
    }

    pub fn bias(&self) -> &[f64] {
        match self {
            LayerParams::Kan(_) => &[],
            LayerParams::Conv { bias, .. } => bias,
        }
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        match self {
            LayerParams::Kan(_) => &mut [],
            LayerParams::Conv { bias, .. } => bias,
        }
    }

    /// One entry per connection (weight or spline function).
    pub fn mask(&self) -> &[bool] {
        match self {
            LayerParams::Kan(l) => &l.mask,
            LayerParams::Conv { mask, .. } => mask,
        }
    }

    /// Weight entries per connection: `G` for KAN, 1 otherwise.
    pub fn params_per_connection(&self) -> usize {
        match self {
            LayerParams::Kan(l) => l.grid.len(),
            LayerParams::Conv { .. } => 1,
        }
    }

    pub fn active_connections(&self) -> usize {
        self.mask().iter().filter(|&&m| m).count()
    }

    /// Mask out a connection and zero its parameters.
    pub fn prune_connection(&mut self, conn: usize) {
        let per = self.params_per_connection();
        match self {
            LayerParams::Kan(l) => l.mask[conn] = false,
            LayerParams::Conv { mask, .. } => mask[conn] = false,
        }
        self.weights_mut()[conn * per..(conn + 1) * per].fill(0.0);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EqualizerModel {
    arch: Architecture,
    layers: Vec<LayerParams>,
}

/// Gradients laid out like [`LayerParams`]: `weights` aligned with
/// [`LayerParams::weights`], `bias` with [`LayerParams::bias`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

pub type Gradients = Vec<LayerGrad>;

/// Activations kept by [`EqualizerModel::forward_cached`] for the backward
/// pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Vec<f64>>,
    lens: Vec<usize>,
    segments: Vec<Vec<Segment>>,
    pre: Vec<Vec<f64>>,
    positions: usize,
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    /// Segment index of every KAN input and the sign of every ReLU
    /// pre-activation; equal patterns mean no kink lies between two
    /// parameter settings.
    pub fn activation_pattern(&self) -> Vec<u32> {
        let mut p = Vec::new();
        for segs in &self.segments {
            p.extend(segs.iter().map(|s| s.index as u32 * 2 + s.inside as u32));
        }
        for pre in &self.pre {
            p.extend(pre.iter().map(|&v| (v > 0.0) as u32));
        }
        p
    }
}

impl EqualizerModel {
    pub fn new<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self> {
        let arch = validate_architecture(arch.layers, arch.sps)?;
        let layers = arch
            .layers
            .iter()
            .map(|spec| -> Result<LayerParams> {
                let fan_in = spec.c_in * spec.k;
                Ok(match spec.kind {
                    LayerKind::Kan { grid } => LayerParams::Kan(KanLayerDense::random(
                        fan_in,
                        spec.c_out,
                        SplineGrid::new(grid)?,
                        rng,
                    )),
                    LayerKind::ReluLinear | LayerKind::Linear => {
                        let bound = 1.0 / (fan_in as f64).sqrt();
                        let weights = (0..spec.connections())
                            .map(|_| rng.random_range(-bound..=bound))
                            .collect();
                        LayerParams::Conv {
                            weights,
                            bias: vec![0.0; if spec.bias { spec.c_out } else { 0 }],
                            mask: vec![true; spec.connections()],
                        }
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { arch, layers })
    }

    /// Assemble a model from explicit parameters, checking their shapes.
    pub fn from_parts(arch: Architecture, layers: Vec<LayerParams>) -> Result<Self> {
        let arch = validate_architecture(arch.layers, arch.sps)?;
        if layers.len() != arch.layers.len() {
            return Err(Error::contract("parameter layer count does not match architecture"));
        }
        for (i, (spec, p)) in arch.layers.iter().zip(&layers).enumerate() {
            let ok = match (spec.kind, p) {
                (LayerKind::Kan { grid }, LayerParams::Kan(l)) => {
                    l.grid.len() == grid
                        && l.n_in == spec.c_in * spec.k
                        && l.n_out == spec.c_out
                        && l.coeffs.len() == spec.connections() * grid
                        && l.mask.len() == spec.connections()
                }
                (LayerKind::ReluLinear | LayerKind::Linear, LayerParams::Conv { weights, bias, mask }) => {
                    weights.len() == spec.connections()
                        && mask.len() == spec.connections()
                        && bias.len() == if spec.bias { spec.c_out } else { 0 }
                }
                _ => false,
            };
            if !ok {
                return Err(Error::contract(format!(
                    "layer {}: parameter shapes do not match the architecture",
                    i + 1
                )));
            }
        }
        Ok(Self { arch, layers })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn family(&self) -> Family {
        self.arch.family()
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights().len() + l.bias().len())
            .sum()
    }

    pub fn zero_gradients(&self) -> Gradients {
        self.layers
            .iter()
            .map(|l| LayerGrad {
                weights: vec![0.0; l.weights().len()],
                bias: vec![0.0; l.bias().len()],
            })
            .collect()
    }

    pub fn forward(&self, samples: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(samples)?.output)
    }

    pub fn forward_cached(&self, samples: &[f64]) -> Result<ForwardCache> {
        let rf = self.arch.receptive_field();
        if samples.len() < rf {
            return Err(Error::contract(format!(
                "input of {} samples is shorter than the receptive field ({rf})",
                samples.len()
            )));
        }
        let n = self.layers.len();
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(n),
            lens: Vec::with_capacity(n),
            segments: Vec::new(),
            pre: Vec::new(),
            positions: 0,
            output: Vec::new(),
        };
        let mut x = samples.to_vec();
        let mut len = samples.len();
        for (spec, params) in self.arch.layers.iter().zip(&self.layers) {
            let out_len = (len - spec.k) / spec.s + 1;
            let mut y = vec![0.0; spec.c_out * out_len];
            match params {
                LayerParams::Kan(layer) => {
                    let segs: Vec<Segment> = x.iter().map(|&v| layer.grid.locate(v)).collect();
                    kan_conv_forward(spec, layer, &segs, len, out_len, &mut y);
                    cache.segments.push(segs);
                }
                LayerParams::Conv { weights, bias, mask } => {
                    conv_forward(spec, weights, bias, mask, &x, len, out_len, &mut y);
                    if spec.kind == LayerKind::ReluLinear {
                        cache.pre.push(y.clone());
                        y.iter_mut().for_each(|v| *v = v.max(0.0));
                    }
                }
            }
            let next = std::mem::replace(&mut x, y);
            cache.inputs.push(next);
            cache.lens.push(len);
            len = out_len;
        }
        let c = self.arch.out_channels();
        cache.positions = len;
        cache.output = vec![0.0; len * c];
        for ch in 0..c {
            for p in 0..len {
                cache.output[p * c + ch] = x[ch * len + p];
            }
        }
        Ok(cache)
    }

    /// Parameter gradients of `sum_q upstream[q] * output[q]`.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<Gradients> {
        if upstream.len() != cache.output.len() {
            return Err(Error::contract("upstream gradient length does not match the output"));
        }
        let mut grads = self.zero_gradients();
        let c = self.arch.out_channels();
        let len = cache.positions;
        let mut up = vec![0.0; c * len];
        for ch in 0..c {
            for p in 0..len {
                up[ch * len + p] = upstream[p * c + ch];
            }
        }
        let mut kan_idx = cache.segments.len();
        let mut relu_idx = cache.pre.len();
        for i in (0..self.layers.len()).rev() {
            let spec = &self.arch.layers[i];
            let in_len = cache.lens[i];
            let out_len = (in_len - spec.k) / spec.s + 1;
            let need_input_grad = i > 0;
            let mut grad_x = if need_input_grad {
                vec![0.0; spec.c_in * in_len]
            } else {
                Vec::new()
            };
            match &self.layers[i] {
                LayerParams::Kan(layer) => {
                    kan_idx -= 1;
                    kan_conv_backward(
                        spec,
                        layer,
                        &cache.segments[kan_idx],
                        in_len,
                        out_len,
                        &up,
                        &mut grads[i].weights,
                        need_input_grad.then_some(&mut grad_x[..]),
                    );
                }
                LayerParams::Conv { weights, mask, .. } => {
                    if spec.kind == LayerKind::ReluLinear {
                        relu_idx -= 1;
                        for (u, &pre) in up.iter_mut().zip(&cache.pre[relu_idx]) {
                            if pre <= 0.0 {
                                *u = 0.0;
                            }
                        }
                    }
                    let g = &mut grads[i];
                    conv_backward(
                        spec,
                        weights,
                        mask,
                        &cache.inputs[i],
                        in_len,
                        out_len,
                        &up,
                        &mut g.weights,
                        &mut g.bias,
                        need_input_grad.then_some(&mut grad_x[..]),
                    );
                }
            }
            up = grad_x;
        }
        Ok(grads)
    }

    /// Estimates for symbols `first..first+count` of a sample stream.
    pub fn estimate(&self, samples: &[f64], first: usize, count: usize) -> Result<Vec<f64>> {
        let w = self.arch.window(first, count, samples.len())?;
        let out = self.forward(&samples[w.sample_start..w.sample_start + w.sample_len])?;
        Ok(out[w.skip..w.skip + count].to_vec())
    }

    pub fn count_rvms(&self) -> RvmsReport {
        let sps = self.arch.sps as f64;
        let mut stride = 1usize;
        let mut per_layer = Vec::with_capacity(self.layers.len());
        let mut total_conn = 0usize;
        let mut active_conn = 0usize;
        for (spec, params) in self.arch.layers.iter().zip(&self.layers) {
            stride *= spec.s;
            let positions_per_symbol = sps / stride as f64;
            let active = params.active_connections();
            per_layer.push(active as f64 * positions_per_symbol);
            total_conn += params.mask().len();
            active_conn += active;
        }
        RvmsReport {
            total: per_layer.iter().sum(),
            per_layer,
            pruned_fraction: if total_conn == 0 {
                0.0
            } else {
                1.0 - active_conn as f64 / total_conn as f64
            },
        }
    }

    pub fn write_checkpoint<W: std::io::Write>(&self, w: W) -> Result<()> {
        checkpoint::write(self, w)
    }

    pub fn read_checkpoint<R: std::io::Read>(r: R) -> Result<Self> {
        checkpoint::read(r)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_checkpoint(std::io::BufWriter::new(file))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_checkpoint(std::io::BufReader::new(file))
    }
}

/// Real-valued multiplications per equalized symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct RvmsReport {
    pub per_layer: Vec<f64>,
    pub total: f64,
    pub pruned_fraction: f64,
}

fn kan_conv_forward(
    spec: &ConvLayerSpec,
    layer: &KanLayerDense,
    segs: &[Segment],
    in_len: usize,
    out_len: usize,
    y: &mut [f64],
) {
    let g = layer.grid.len();
    for c in 0..spec.c_out {
        let out = &mut y[c * out_len..(c + 1) * out_len];
        for ci in 0..spec.c_in {
            let row = &segs[ci * in_len..(ci + 1) * in_len];
            for j in 0..spec.k {
                let f = c * layer.n_in + ci * spec.k + j;
                if !layer.mask[f] {
                    continue;
                }
                let coeffs = &layer.coeffs[f * g..(f + 1) * g];
                for (p, o) in out.iter_mut().enumerate() {
                    *o += interpolate(coeffs, row[p * spec.s + j]);
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn kan_conv_backward(
    spec: &ConvLayerSpec,
    layer: &KanLayerDense,
    segs: &[Segment],
    in_len: usize,
    out_len: usize,
    up: &[f64],
    grad_coeffs: &mut [f64],
    mut grad_x: Option<&mut [f64]>,
) {
    let g = layer.grid.len();
    for c in 0..spec.c_out {
        let up_c = &up[c * out_len..(c + 1) * out_len];
        for ci in 0..spec.c_in {
            let row = &segs[ci * in_len..(ci + 1) * in_len];
            for j in 0..spec.k {
                let f = c * layer.n_in + ci * spec.k + j;
                if !layer.mask[f] {
                    continue;
                }
                let range = f * g..(f + 1) * g;
                let coeffs = &layer.coeffs[range.clone()];
                let ga = &mut grad_coeffs[range];
                for (p, &u) in up_c.iter().enumerate() {
                    if u == 0.0 {
                        continue;
                    }
                    let idx = p * spec.s + j;
                    let gx = spline::accumulate_backward_located(coeffs, layer.grid, row[idx], u, ga);
                    if let Some(gxs) = grad_x.as_deref_mut() {
                        gxs[ci * in_len + idx] += gx;
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    spec: &ConvLayerSpec,
    weights: &[f64],
    bias: &[f64],
    mask: &[bool],
    x: &[f64],
    in_len: usize,
    out_len: usize,
    y: &mut [f64],
) {
    for c in 0..spec.c_out {
        let out = &mut y[c * out_len..(c + 1) * out_len];
        if let Some(&b) = bias.get(c) {
            out.fill(b);
        }
        for ci in 0..spec.c_in {
            let row = &x[ci * in_len..(ci + 1) * in_len];
            for j in 0..spec.k {
                let f = (c * spec.c_in + ci) * spec.k + j;
                if !mask[f] {
                    continue;
                }
                let w = weights[f];
                for (p, o) in out.iter_mut().enumerate() {
                    *o += w * row[p * spec.s + j];
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    spec: &ConvLayerSpec,
    weights: &[f64],
    mask: &[bool],
    x: &[f64],
    in_len: usize,
    out_len: usize,
    up: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    mut grad_x: Option<&mut [f64]>,
) {
    for c in 0..spec.c_out {
        let up_c = &up[c * out_len..(c + 1) * out_len];
        if let Some(gb) = grad_b.get_mut(c) {
            *gb += up_c.iter().sum::<f64>();
        }
        for ci in 0..spec.c_in {
            let row = &x[ci * in_len..(ci + 1) * in_len];
            for j in 0..spec.k {
                let f = (c * spec.c_in + ci) * spec.k + j;
                if !mask[f] {
                    continue;
                }
                let mut acc = 0.0;
                for (p, &u) in up_c.iter().enumerate() {
                    acc += u * row[p * spec.s + j];
                }
                grad_w[f] += acc;
                if let Some(gxs) = grad_x.as_deref_mut() {
                    let w = weights[f];
                    let gx_row = &mut gxs[ci * in_len..(ci + 1) * in_len];
                    for (p, &u) in up_c.iter().enumerate() {
                        gx_row[p * spec.s + j] += u * w;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests;
