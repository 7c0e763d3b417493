//! A small differentiable encoder-decoder mapping a chip to two raw
//! per-pixel output channels (pre-head mean and pre-softplus variance),
//! with a hand-derived backward pass.
//!
//! The backbone is a stack of 3x3 zero-padded convolutions with ReLU
//! between them. With `downsample_levels = 1` the layers after the first
//! run at half resolution behind a 2x2 average pool; a nearest-neighbor
//! upsample and an additive skip from the first activation restore full
//! resolution before the 1x1 output head. Output resolution always equals
//! input resolution.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus};
use crate::scene::Chip;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Variance floor applied after softplus; keeps the NLL's division by
/// sigma^2 away from the singularity.
pub const VAR_CLAMP: f64 = 1e-6;

/// Bias preset for the softplus-activated output channel: softplus of this
/// value is exactly 1 in double precision.
pub fn softplus_unit_bias() -> f64 {
    (std::f64::consts::E - 1.0).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// Channel 0 is the mean, softplus of channel 1 the variance.
    Gaussian,
    /// Channel 0 is the value estimate; no distribution.
    Deterministic,
    /// Softplus of channel 0 is a Poisson rate.
    Poisson,
}

impl HeadKind {
    pub fn output_channels(self) -> usize {
        match self {
            HeadKind::Gaussian => 2,
            HeadKind::Deterministic | HeadKind::Poisson => 1,
        }
    }

    pub fn is_probabilistic(self) -> bool {
        !matches!(self, HeadKind::Deterministic)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorConfig {
    #[serde(default = "default_channels_in")]
    pub channels_in: usize,
    #[serde(default = "default_widths")]
    pub widths: Vec<usize>,
    #[serde(default = "default_levels")]
    pub downsample_levels: usize,
    #[serde(default = "default_head")]
    pub head: HeadKind,
    #[serde(default)]
    pub seed: u64,
}

fn default_channels_in() -> usize {
    3
}
fn default_widths() -> Vec<usize> {
    vec![16, 32, 16]
}
fn default_levels() -> usize {
    1
}
fn default_head() -> HeadKind {
    HeadKind::Gaussian
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            channels_in: default_channels_in(),
            widths: default_widths(),
            downsample_levels: default_levels(),
            head: default_head(),
            seed: 0,
        }
    }
}

impl PredictorConfig {
    pub fn out_channels(&self) -> usize {
        self.head.output_channels()
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() {
            return Err(Error::config("widths must be non-empty".to_string()));
        }
        if self.channels_in == 0 || self.widths.iter().any(|&w| w == 0) {
            return Err(Error::config("channel counts must be positive".to_string()));
        }
        match self.downsample_levels {
            0 => {}
            1 => {
                if self.widths.len() < 2 {
                    return Err(Error::config(
                        "downsampling needs at least two conv layers".to_string(),
                    ));
                }
                if self.widths.first() != self.widths.last() {
                    return Err(Error::config(
                        "additive skip requires first and last widths to match".to_string(),
                    ));
                }
            }
            n => {
                return Err(Error::config(format!(
                    "downsample_levels {n} unsupported (desk-scale backbone allows 0 or 1)"
                )))
            }
        }
        Ok(())
    }

    /// (in_ch, out_ch) per 3x3 conv layer, then the 1x1 head.
    fn conv_plan(&self) -> (Vec<(usize, usize)>, (usize, usize)) {
        let mut convs = Vec::with_capacity(self.widths.len());
        let mut prev = self.channels_in;
        for &w in &self.widths {
            convs.push((prev, w));
            prev = w;
        }
        (convs, (*self.widths.last().unwrap(), self.out_channels()))
    }
}

/// One named parameter array with shape metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    fn zeros(name: &str, shape: Vec<usize>) -> Tensor {
        let len = shape.iter().product();
        Tensor {
            name: name.to_string(),
            shape,
            data: vec![0.0; len],
        }
    }
}

/// Ordered collection of convolution kernels and biases. The declaration
/// order (conv0.weight, conv0.bias, ..., head.weight, head.bias) is the
/// checkpoint block order.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub config: PredictorConfig,
    pub tensors: Vec<Tensor>,
}

impl Parameters {
    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn zeros_like(&self) -> Parameters {
        Parameters {
            config: self.config.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(&t.name, t.shape.clone()))
                .collect(),
        }
    }

    pub fn shapes_match(&self, other: &Parameters) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    /// Flatten all values in declaration order.
    pub fn flat(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.data.iter().copied())
            .collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.total_len() {
            return Err(Error::shape(format!(
                "expected {} parameter values, got {}",
                self.total_len(),
                values.len()
            )));
        }
        let mut offset = 0;
        for t in &mut self.tensors {
            let len = t.data.len();
            t.data.copy_from_slice(&values[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }
}

/// Seeded fan-in-scaled uniform initialization. Biases start at zero except
/// the softplus-activated output channel's bias, preset so the initial
/// variance (or rate) is 1 in scaled label units.
pub fn init_params(cfg: &PredictorConfig) -> Result<Parameters> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (convs, head) = cfg.conv_plan();
    let mut tensors = Vec::new();
    for (t, &(ci, co)) in convs.iter().enumerate() {
        tensors.push(uniform_kernel(
            &mut rng,
            &format!("conv{t}.weight"),
            vec![co, ci, 3, 3],
        ));
        tensors.push(Tensor::zeros(&format!("conv{t}.bias"), vec![co]));
    }
    let (hi, ho) = head;
    tensors.push(uniform_kernel(&mut rng, "head.weight", vec![ho, hi, 1, 1]));
    let mut head_bias = Tensor::zeros("head.bias", vec![ho]);
    match cfg.head {
        HeadKind::Gaussian => head_bias.data[1] = softplus_unit_bias(),
        HeadKind::Poisson => head_bias.data[0] = softplus_unit_bias(),
        HeadKind::Deterministic => {}
    }
    tensors.push(head_bias);
    Ok(Parameters {
        config: cfg.clone(),
        tensors,
    })
}

fn uniform_kernel(rng: &mut ChaCha8Rng, name: &str, shape: Vec<usize>) -> Tensor {
    let fan_in: usize = shape[1..].iter().product();
    let bound = (2.0 / fan_in as f64).sqrt();
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor {
        name: name.to_string(),
        shape,
        data,
    }
}

/// Intermediates stored by [`forward`] for the exact backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    config: PredictorConfig,
    height: usize,
    width: usize,
    /// Input feature map of each 3x3 conv, in layer order.
    conv_inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each 3x3 conv.
    pre_acts: Vec<Vec<f64>>,
    /// Input to the 1x1 head (post-skip for downsampled configs).
    head_input: Vec<f64>,
}

/// Raw two-channel output at input resolution. For single-channel heads
/// `raw_s` is all zeros.
pub struct RawOutput {
    pub raw_mu: Vec<f64>,
    pub raw_s: Vec<f64>,
}

pub fn forward(params: &Parameters, chip: &Chip) -> Result<(RawOutput, ForwardCache)> {
    let cfg = &params.config;
    cfg.validate()?;
    if chip.channels != cfg.channels_in {
        return Err(Error::shape(format!(
            "chip has {} channels, predictor expects {}",
            chip.channels, cfg.channels_in
        )));
    }
    let (h, w) = (chip.height, chip.width);
    let div = 1usize << cfg.downsample_levels;
    if h % div != 0 || w % div != 0 {
        return Err(Error::shape(format!(
            "input {h}x{w} not divisible by 2^{}",
            cfg.downsample_levels
        )));
    }

    let (convs, _) = cfg.conv_plan();
    let k = convs.len();
    let pooled = cfg.downsample_levels == 1;
    let (hh, hw) = if pooled { (h / 2, w / 2) } else { (h, w) };

    let mut conv_inputs = Vec::with_capacity(k);
    let mut pre_acts = Vec::with_capacity(k);

    // first conv at full resolution
    let z0 = conv3x3(
        &chip.data,
        convs[0].0,
        h,
        w,
        tensor(params, 0),
        tensor(params, 1),
    );
    conv_inputs.push(chip.data.clone());
    let a0 = relu(&z0);
    pre_acts.push(z0);

    let mut cur = if pooled {
        avg_pool2(&a0, convs[0].1, h, w)
    } else {
        a0.clone()
    };
    let (ch, cw) = if pooled { (hh, hw) } else { (h, w) };

    for t in 1..k {
        let z = conv3x3(
            &cur,
            convs[t].0,
            ch,
            cw,
            tensor(params, 2 * t),
            tensor(params, 2 * t + 1),
        );
        conv_inputs.push(std::mem::take(&mut cur));
        cur = relu(&z);
        pre_acts.push(z);
    }

    let head_input = if pooled {
        let up = upsample_nn2(&cur, convs[k - 1].1, hh, hw);
        add(&up, &a0)
    } else {
        cur
    };

    let head_w = tensor(params, 2 * k);
    let head_b = tensor(params, 2 * k + 1);
    let out = conv1x1(&head_input, convs[k - 1].1, h, w, head_w, head_b);
    let plane = h * w;
    let raw_mu = out[..plane].to_vec();
    let raw_s = if cfg.out_channels() == 2 {
        out[plane..].to_vec()
    } else {
        vec![0.0; plane]
    };

    Ok((
        RawOutput { raw_mu, raw_s },
        ForwardCache {
            config: cfg.clone(),
            height: h,
            width: w,
            conv_inputs,
            pre_acts,
            head_input,
        },
    ))
}

fn tensor<'a>(params: &'a Parameters, i: usize) -> &'a Tensor {
    &params.tensors[i]
}

/// Exact gradients of sum(d_raw_mu . raw_mu + d_raw_s . raw_s) with respect
/// to every parameter. The cache must come from a forward call with the
/// same configuration and input shape.
pub fn backward(
    params: &Parameters,
    cache: &ForwardCache,
    d_raw_mu: &[f64],
    d_raw_s: &[f64],
) -> Result<Parameters> {
    let cfg = &params.config;
    if *cfg != cache.config {
        return Err(Error::config(
            "forward cache does not match these parameters".to_string(),
        ));
    }
    let (h, w) = (cache.height, cache.width);
    let plane = h * w;
    if d_raw_mu.len() != plane || d_raw_s.len() != plane {
        return Err(Error::shape(format!(
            "upstream gradients must be {h}x{w} maps"
        )));
    }

    let (convs, _) = cfg.conv_plan();
    let k = convs.len();
    let pooled = cfg.downsample_levels == 1;
    let (hh, hw) = if pooled { (h / 2, w / 2) } else { (h, w) };
    let mut grads = params.zeros_like();

    // head gradient
    let out_ch = cfg.out_channels();
    let mut d_out = vec![0.0; out_ch * plane];
    d_out[..plane].copy_from_slice(d_raw_mu);
    if out_ch == 2 {
        d_out[plane..].copy_from_slice(d_raw_s);
    }
    let head_in_ch = convs[k - 1].1;
    let (d_head_in, d_head_w, d_head_b) = conv1x1_backward(
        &cache.head_input,
        head_in_ch,
        h,
        w,
        tensor(params, 2 * k),
        &d_out,
    );
    grads.tensors[2 * k].data = d_head_w;
    grads.tensors[2 * k + 1].data = d_head_b;

    // split the head-input gradient into the decoder and skip paths
    let (mut d_cur, d_a0_skip) = if pooled {
        let d_last = upsample_nn2_backward(&d_head_in, head_in_ch, hh, hw);
        (d_last, Some(d_head_in))
    } else {
        (d_head_in, None)
    };

    // walk conv layers in reverse down to layer 1
    for t in (1..k).rev() {
        let (ch, cw) = if pooled { (hh, hw) } else { (h, w) };
        let d_z = relu_backward(&cache.pre_acts[t], &d_cur);
        let (d_in, d_w, d_b) = conv3x3_backward(
            &cache.conv_inputs[t],
            convs[t].0,
            ch,
            cw,
            tensor(params, 2 * t),
            &d_z,
        );
        grads.tensors[2 * t].data = d_w;
        grads.tensors[2 * t + 1].data = d_b;
        d_cur = d_in;
    }

    // through the pool and skip into the first activation
    let d_a0 = if pooled {
        let mut d = avg_pool2_backward(&d_cur, convs[0].1, h, w);
        if let Some(skip) = d_a0_skip {
            for (a, b) in d.iter_mut().zip(&skip) {
                *a += b;
            }
        }
        d
    } else {
        d_cur
    };

    let d_z0 = relu_backward(&cache.pre_acts[0], &d_a0);
    let (_, d_w0, d_b0) = conv3x3_backward(
        &cache.conv_inputs[0],
        convs[0].0,
        h,
        w,
        tensor(params, 0),
        &d_z0,
    );
    grads.tensors[0].data = d_w0;
    grads.tensors[1].data = d_b0;

    Ok(grads)
}

/// Map raw outputs through the head nonlinearity.
///
/// Gaussian: (raw_mu, max(softplus(raw_s), VAR_CLAMP)) as (mean, variance).
/// Poisson: (max(softplus(raw_mu), VAR_CLAMP), zeros) as (rate, unused).
/// Deterministic: (raw_mu, zeros).
pub fn apply_head(raw_mu: &[f64], raw_s: &[f64], head: HeadKind) -> (Vec<f64>, Vec<f64>) {
    match head {
        HeadKind::Gaussian => (
            raw_mu.to_vec(),
            raw_s.iter().map(|&x| softplus(x).max(VAR_CLAMP)).collect(),
        ),
        HeadKind::Poisson => (
            raw_mu.iter().map(|&x| softplus(x).max(VAR_CLAMP)).collect(),
            vec![0.0; raw_s.len()],
        ),
        HeadKind::Deterministic => (raw_mu.to_vec(), vec![0.0; raw_s.len()]),
    }
}

/// Chain upstream gradients back through [`apply_head`]. Where the clamp is
/// active the softplus branch contributes zero gradient.
pub fn head_backward(
    raw_mu: &[f64],
    raw_s: &[f64],
    head: HeadKind,
    d_first: &[f64],
    d_second: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    match head {
        HeadKind::Gaussian => {
            let d_raw_s = raw_s
                .iter()
                .zip(d_second)
                .map(|(&x, &g)| {
                    if softplus(x) > VAR_CLAMP {
                        g * sigmoid(x)
                    } else {
                        0.0
                    }
                })
                .collect();
            (d_first.to_vec(), d_raw_s)
        }
        HeadKind::Poisson => {
            let d_raw_mu = raw_mu
                .iter()
                .zip(d_first)
                .map(|(&x, &g)| {
                    if softplus(x) > VAR_CLAMP {
                        g * sigmoid(x)
                    } else {
                        0.0
                    }
                })
                .collect();
            (d_raw_mu, vec![0.0; raw_s.len()])
        }
        HeadKind::Deterministic => (d_first.to_vec(), vec![0.0; raw_s.len()]),
    }
}

// ---- dense primitives -------------------------------------------------
//
// Feature maps are planar: data[(c*h + y)*w + x]. All loops run in a fixed
// order so results are bit-reproducible.

pub(crate) fn relu(z: &[f64]) -> Vec<f64> {
    z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

pub(crate) fn relu_backward(z: &[f64], d_a: &[f64]) -> Vec<f64> {
    z.iter()
        .zip(d_a)
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect()
}

/// 3x3 convolution, zero padding 1, stride 1.
pub(crate) fn conv3x3(
    input: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &Tensor,
    bias: &Tensor,
) -> Vec<f64> {
    let c_out = weight.shape[0];
    debug_assert_eq!(weight.shape, vec![c_out, c_in, 3, 3]);
    let plane = h * w;
    let mut out = vec![0.0; c_out * plane];
    for o in 0..c_out {
        let zo = &mut out[o * plane..(o + 1) * plane];
        let b = bias.data[o];
        for v in zo.iter_mut() {
            *v = b;
        }
        for ci in 0..c_in {
            let xi = &input[ci * plane..(ci + 1) * plane];
            let kbase = (o * c_in + ci) * 9;
            for dy in 0..3usize {
                let oy = dy as isize - 1;
                for dx in 0..3usize {
                    let ox = dx as isize - 1;
                    let kw = weight.data[kbase + dy * 3 + dx];
                    let y0 = (-oy).max(0) as usize;
                    let y1 = (h as isize + (-oy).min(0)) as usize;
                    let x0 = (-ox).max(0) as usize;
                    let x1 = (w as isize + (-ox).min(0)) as usize;
                    for y in y0..y1 {
                        let src = ((y as isize + oy) as usize) * w;
                        let dst = y * w;
                        for x in x0..x1 {
                            zo[dst + x] += kw * xi[src + (x as isize + ox) as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of a 3x3 convolution: (d_input, d_weight, d_bias).
pub(crate) fn conv3x3_backward(
    input: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &Tensor,
    d_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let c_out = weight.shape[0];
    let plane = h * w;
    let mut d_in = vec![0.0; c_in * plane];
    let mut d_w = vec![0.0; weight.data.len()];
    let mut d_b = vec![0.0; c_out];
    for o in 0..c_out {
        let dz = &d_out[o * plane..(o + 1) * plane];
        d_b[o] = dz.iter().sum();
        for ci in 0..c_in {
            let xi = &input[ci * plane..(ci + 1) * plane];
            let di = &mut d_in[ci * plane..(ci + 1) * plane];
            let kbase = (o * c_in + ci) * 9;
            for dy in 0..3usize {
                let oy = dy as isize - 1;
                for dx in 0..3usize {
                    let ox = dx as isize - 1;
                    let kw = weight.data[kbase + dy * 3 + dx];
                    let y0 = (-oy).max(0) as usize;
                    let y1 = (h as isize + (-oy).min(0)) as usize;
                    let x0 = (-ox).max(0) as usize;
                    let x1 = (w as isize + (-ox).min(0)) as usize;
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let src = ((y as isize + oy) as usize) * w;
                        let dst = y * w;
                        for x in x0..x1 {
                            let g = dz[dst + x];
                            let xsrc = src + (x as isize + ox) as usize;
                            acc += g * xi[xsrc];
                            di[xsrc] += kw * g;
                        }
                    }
                    d_w[kbase + dy * 3 + dx] = acc;
                }
            }
        }
    }
    (d_in, d_w, d_b)
}

/// 1x1 convolution (per-pixel linear map across channels).
pub(crate) fn conv1x1(
    input: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &Tensor,
    bias: &Tensor,
) -> Vec<f64> {
    let c_out = weight.shape[0];
    let plane = h * w;
    let mut out = vec![0.0; c_out * plane];
    for o in 0..c_out {
        let zo = &mut out[o * plane..(o + 1) * plane];
        let b = bias.data[o];
        for v in zo.iter_mut() {
            *v = b;
        }
        for ci in 0..c_in {
            let kw = weight.data[o * c_in + ci];
            let xi = &input[ci * plane..(ci + 1) * plane];
            for (z, &x) in zo.iter_mut().zip(xi) {
                *z += kw * x;
            }
        }
    }
    out
}

pub(crate) fn conv1x1_backward(
    input: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &Tensor,
    d_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let c_out = weight.shape[0];
    let plane = h * w;
    let mut d_in = vec![0.0; c_in * plane];
    let mut d_w = vec![0.0; weight.data.len()];
    let mut d_b = vec![0.0; c_out];
    for o in 0..c_out {
        let dz = &d_out[o * plane..(o + 1) * plane];
        d_b[o] = dz.iter().sum();
        for ci in 0..c_in {
            let kw = weight.data[o * c_in + ci];
            let xi = &input[ci * plane..(ci + 1) * plane];
            let di = &mut d_in[ci * plane..(ci + 1) * plane];
            let mut acc = 0.0;
            for ((d, &g), &x) in di.iter_mut().zip(dz).zip(xi) {
                acc += g * x;
                *d += kw * g;
            }
            d_w[o * c_in + ci] = acc;
        }
    }
    (d_in, d_w, d_b)
}

/// 2x2 average pool, stride 2.
pub(crate) fn avg_pool2(input: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (hh, hw) = (h / 2, w / 2);
    let mut out = vec![0.0; c * hh * hw];
    for ci in 0..c {
        let xi = &input[ci * h * w..(ci + 1) * h * w];
        let po = &mut out[ci * hh * hw..(ci + 1) * hh * hw];
        for y in 0..hh {
            for x in 0..hw {
                let (sy, sx) = (2 * y, 2 * x);
                po[y * hw + x] = 0.25
                    * (xi[sy * w + sx]
                        + xi[sy * w + sx + 1]
                        + xi[(sy + 1) * w + sx]
                        + xi[(sy + 1) * w + sx + 1]);
            }
        }
    }
    out
}

pub(crate) fn avg_pool2_backward(d_out: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (hh, hw) = (h / 2, w / 2);
    let mut d_in = vec![0.0; c * h * w];
    for ci in 0..c {
        let dz = &d_out[ci * hh * hw..(ci + 1) * hh * hw];
        let di = &mut d_in[ci * h * w..(ci + 1) * h * w];
        for y in 0..hh {
            for x in 0..hw {
                let g = 0.25 * dz[y * hw + x];
                let (sy, sx) = (2 * y, 2 * x);
                di[sy * w + sx] += g;
                di[sy * w + sx + 1] += g;
                di[(sy + 1) * w + sx] += g;
                di[(sy + 1) * w + sx + 1] += g;
            }
        }
    }
    d_in
}

/// Nearest-neighbor 2x upsample.
pub(crate) fn upsample_nn2(input: &[f64], c: usize, hh: usize, hw: usize) -> Vec<f64> {
    let (h, w) = (hh * 2, hw * 2);
    let mut out = vec![0.0; c * h * w];
    for ci in 0..c {
        let xi = &input[ci * hh * hw..(ci + 1) * hh * hw];
        let uo = &mut out[ci * h * w..(ci + 1) * h * w];
        for y in 0..h {
            let sy = y / 2;
            for x in 0..w {
                uo[y * w + x] = xi[sy * hw + x / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample_nn2_backward(d_out: &[f64], c: usize, hh: usize, hw: usize) -> Vec<f64> {
    let (h, w) = (hh * 2, hw * 2);
    let mut d_in = vec![0.0; c * hh * hw];
    for ci in 0..c {
        let dz = &d_out[ci * h * w..(ci + 1) * h * w];
        let di = &mut d_in[ci * hh * hw..(ci + 1) * hh * hw];
        for y in 0..h {
            let sy = y / 2;
            for x in 0..w {
                di[sy * hw + x / 2] += dz[y * w + x];
            }
        }
    }
    d_in
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| x + y).collect()
}
