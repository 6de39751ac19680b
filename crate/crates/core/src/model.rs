//! Hierarchical temporal transformer and the pulse predictor head.
//!
//! A clip runs through the fusion stem and patch embedding, then a schedule
//! of shape-preserving blocks. Each block downsamples time by 2^n with
//! strided convolutions, applies pre-norm sparse attention and a convolutional
//! feed-forward, then restores the temporal length with learned transposed
//! convolutions. Residuals wrap the attention, the feed-forward, and the
//! whole block at full resolution. The head averages space away and maps each
//! frame's feature vector to one scalar of the predicted waveform.

use std::io::{Read as _, Write as _};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    default_topk, mhsa_forward, mhsa_forward_traced, AttentionConfig, MhsaParams, MhsaTrace, RegionGrid,
};
use crate::error::Error;
use crate::nn::{
    batch_norm, conv3d, conv_fans, gelu, xavier_uniform, ConvParams, ForwardMode, LinearParams, NormParams,
};
use crate::stem::{fusion_stem_forward, patch_embed, PatchEmbedParams, StemParams};
use crate::tensor::Tensor;
use crate::video::{BvpSignal, VideoClip};
use crate::{Real, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Sampling coefficients of the consecutive blocks.
    pub schedule: Vec<u32>,
    pub channels: usize,
    pub heads: usize,
    /// Routed regions per query region; `None` takes a quarter of the grid.
    pub topk: Option<usize>,
    pub partition_coefficient: u32,
    pub tdc_theta: f64,
    /// Feed-forward expansion ratio.
    pub ff_expansion: usize,
    pub stem_channels: usize,
    pub head_hidden: usize,
    pub stem_alpha: f64,
    pub stem_beta: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            schedule: vec![1, 2, 3],
            channels: 64,
            heads: 4,
            topk: None,
            partition_coefficient: 2,
            tdc_theta: 0.7,
            ff_expansion: 2,
            stem_channels: 32,
            head_hidden: 32,
            stem_alpha: 0.5,
            stem_beta: 0.5,
            seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schedule.is_empty() {
            return Err(Error::bad("model_config", "empty stage schedule"));
        }
        if self.channels == 0 || self.heads == 0 || self.channels % self.heads != 0 {
            return Err(Error::bad(
                "model_config",
                format!("channels {} must be a positive multiple of heads {}", self.channels, self.heads),
            ));
        }
        if self.ff_expansion == 0 || self.stem_channels == 0 || self.head_hidden == 0 {
            return Err(Error::bad("model_config", "zero-width layer"));
        }
        if self.topk == Some(0) {
            return Err(Error::bad("model_config", "topk must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.tdc_theta) {
            return Err(Error::bad("model_config", format!("tdc_theta {} outside [0,1]", self.tdc_theta)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    pub fn max_stage(&self) -> u32 {
        self.schedule.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
pub struct FeedForwardParams<S> {
    pub lift: LinearParams<S>,
    pub hidden: ConvParams<S>,
    pub hidden_norm: NormParams<S>,
    pub drop: LinearParams<S>,
}

impl<S: Real> FeedForwardParams<S> {
    pub fn init(channels: usize, expansion: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let wide = channels * expansion;
        let (fi, fo) = conv_fans(&[wide, 1, 3, 3, 3]);
        Ok(FeedForwardParams {
            lift: LinearParams {
                weight: xavier_uniform(&[wide, channels], channels, wide, rng)?,
                bias: vec![S::zero(); wide],
            },
            hidden: ConvParams::new(
                xavier_uniform(&[wide, 1, 3, 3, 3], fi, fo, rng)?,
                vec![S::zero(); wide],
                [1, 1, 1],
                [1, 1, 1],
            )
            .with_groups(wide),
            hidden_norm: NormParams::identity(wide),
            drop: LinearParams {
                weight: xavier_uniform(&[channels, wide], wide, channels, rng)?,
                bias: vec![S::zero(); channels],
            },
        })
    }
}

/// Apply a linear map to the channel axis of a `[C, ...]` volume.
fn pointwise<S: Real>(x: &Tensor<S>, lin: &LinearParams<S>) -> Result<Tensor<S>> {
    let ws = lin.weight.shape();
    if ws.len() != 2 || ws[1] != x.shape()[0] || lin.bias.len() != ws[0] {
        return Err(Error::bad(
            "pointwise",
            format!("weight {ws:?} / bias {} against {} channels", lin.bias.len(), x.shape()[0]),
        ));
    }
    let (o, c) = (ws[0], ws[1]);
    let n: usize = x.shape()[1..].iter().product();
    let mut shape = x.shape().to_vec();
    shape[0] = o;
    let mut out = Tensor::zeros(&shape)?;
    let od = out.data_mut();
    let xd = x.data();
    let wd = lin.weight.data();
    for co in 0..o {
        let dst = co * n;
        for ci in 0..c {
            let wv = wd[co * c + ci];
            if wv == S::zero() {
                continue;
            }
            let src = ci * n;
            for i in 0..n {
                od[dst + i] = od[dst + i] + wv * xd[src + i];
            }
        }
        let b = lin.bias[co];
        if b != S::zero() {
            for i in 0..n {
                od[dst + i] = od[dst + i] + b;
            }
        }
    }
    Ok(out)
}

pub fn feed_forward<S: Real>(x: &Tensor<S>, p: &FeedForwardParams<S>) -> Result<Tensor<S>> {
    feed_forward_mode(x, p, ForwardMode::Standard)
}

pub fn feed_forward_mode<S: Real>(x: &Tensor<S>, p: &FeedForwardParams<S>, mode: ForwardMode) -> Result<Tensor<S>> {
    let lifted = pointwise(x, &p.lift)?;
    let hidden = conv3d(&lifted, &p.hidden)?;
    let hidden = match mode {
        ForwardMode::Standard => gelu(&batch_norm(&hidden, &p.hidden_norm)?),
        ForwardMode::LinearProbe => hidden,
    };
    pointwise(&hidden, &p.drop)
}

/// Halve the temporal extent: optional BN, then a (2,1,1)-strided conv.
pub fn temporal_downsample<S: Real>(
    x: &Tensor<S>,
    norm: Option<&NormParams<S>>,
    conv: &ConvParams<S>,
) -> Result<Tensor<S>> {
    let ws = conv.weight.shape();
    if ws[2..] != [2, 1, 1] || conv.stride != [2, 1, 1] || conv.padding != [0, 0, 0] {
        return Err(Error::bad("temporal_downsample", "conv must be kernel (2,1,1), stride (2,1,1)"));
    }
    if x.shape()[1] % 2 != 0 {
        return Err(Error::bad("temporal_downsample", format!("odd temporal extent {}", x.shape()[1])));
    }
    match norm {
        Some(n) => conv3d(&batch_norm(x, n)?, conv),
        None => conv3d(x, conv),
    }
}

/// Double the temporal extent with a transposed (2,1,1) convolution. The
/// weight is laid out `[C_in, C_out, 2, 1, 1]`: frame t spreads into output
/// frames 2t and 2t+1.
pub fn temporal_upsample<S: Real>(x: &Tensor<S>, conv: &ConvParams<S>) -> Result<Tensor<S>> {
    let ws = conv.weight.shape();
    if ws.len() != 5 || ws[2..] != [2, 1, 1] || conv.stride != [2, 1, 1] || conv.padding != [0, 0, 0] {
        return Err(Error::bad("temporal_upsample", "conv must be kernel (2,1,1), stride (2,1,1)"));
    }
    let (c_in, c_out) = (ws[0], ws[1]);
    if x.shape()[0] != c_in {
        return Err(Error::ShapeMismatch { op: "temporal_upsample", expected: ws.to_vec(), got: x.shape().to_vec() });
    }
    if conv.bias.len() != c_out {
        return Err(Error::bad("temporal_upsample", "bias length must match output channels"));
    }
    let [t, h, w] = [x.shape()[1], x.shape()[2], x.shape()[3]];
    let plane = h * w;
    let mut out = Tensor::zeros(&[c_out, 2 * t, h, w])?;
    let od = out.data_mut();
    let xd = x.data();
    let wd = conv.weight.data();
    for oc in 0..c_out {
        let b = conv.bias[oc];
        for v in od[oc * 2 * t * plane..(oc + 1) * 2 * t * plane].iter_mut() {
            *v = b;
        }
    }
    for ic in 0..c_in {
        for oc in 0..c_out {
            let w0 = wd[(ic * c_out + oc) * 2];
            let w1 = wd[(ic * c_out + oc) * 2 + 1];
            for tt in 0..t {
                let src = (ic * t + tt) * plane;
                let d0 = (oc * 2 * t + 2 * tt) * plane;
                let d1 = d0 + plane;
                for p in 0..plane {
                    od[d0 + p] = od[d0 + p] + w0 * xd[src + p];
                    od[d1 + p] = od[d1 + p] + w1 * xd[src + p];
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TptBlockParams<S> {
    pub n: u32,
    pub down: Vec<(NormParams<S>, ConvParams<S>)>,
    pub attn_norm: NormParams<S>,
    pub attn: MhsaParams<S>,
    pub heads: usize,
    pub topk: Option<usize>,
    pub partition_coefficient: u32,
    pub tdc_theta: f64,
    pub ff_norm: NormParams<S>,
    pub ff: FeedForwardParams<S>,
    pub up: Vec<ConvParams<S>>,
}

impl<S: Real> TptBlockParams<S> {
    pub fn init(cfg: &ModelConfig, n: u32, rng: &mut ChaCha8Rng) -> Result<Self> {
        let c = cfg.channels;
        let mut down = Vec::new();
        for _ in 0..n {
            let sh = [c, c, 2, 1, 1];
            let (fi, fo) = conv_fans(&sh);
            down.push((
                NormParams::identity(c),
                ConvParams::new(xavier_uniform(&sh, fi, fo, rng)?, vec![S::zero(); c], [2, 1, 1], [0, 0, 0]),
            ));
        }
        let attn_cfg = AttentionConfig {
            channels: c,
            heads: cfg.heads,
            head_dim: cfg.head_dim(),
            topk: cfg.topk.unwrap_or(1),
            partition_coefficient: cfg.partition_coefficient,
            tdc_theta: cfg.tdc_theta,
        };
        let attn = MhsaParams::init(&attn_cfg, rng)?;
        let ff = FeedForwardParams::init(c, cfg.ff_expansion, rng)?;
        let mut up = Vec::new();
        for _ in 0..n {
            let sh = [c, c, 2, 1, 1];
            let (fi, fo) = conv_fans(&sh);
            up.push(ConvParams::new(xavier_uniform(&sh, fi, fo, rng)?, vec![S::zero(); c], [2, 1, 1], [0, 0, 0]));
        }
        Ok(TptBlockParams {
            n,
            down,
            attn_norm: NormParams::identity(c),
            attn,
            heads: cfg.heads,
            topk: cfg.topk,
            partition_coefficient: cfg.partition_coefficient,
            tdc_theta: cfg.tdc_theta,
            ff_norm: NormParams::identity(c),
            ff,
            up,
        })
    }

    fn attention_config(&self, channels: usize, tokens: [usize; 3]) -> Result<AttentionConfig> {
        let grid = RegionGrid::new(
            tokens,
            [
                (tokens[0] / (1usize << self.partition_coefficient.max(self.n))).max(1),
                tokens[1] / 4,
                tokens[2] / 4,
            ],
        )?;
        Ok(AttentionConfig {
            channels,
            heads: self.heads,
            head_dim: channels / self.heads,
            topk: self.topk.unwrap_or_else(|| default_topk(grid.region_count())),
            partition_coefficient: self.partition_coefficient,
            tdc_theta: self.tdc_theta,
        })
    }
}

pub fn tpt_block_forward<S: Real>(x: &Tensor<S>, p: &TptBlockParams<S>) -> Result<Tensor<S>> {
    tpt_block_forward_traced(x, p, None)
}

pub fn tpt_block_forward_traced<S: Real>(
    x: &Tensor<S>,
    p: &TptBlockParams<S>,
    trace: Option<&mut MhsaTrace<S>>,
) -> Result<Tensor<S>> {
    let t = x.shape()[1];
    let stride = 1usize << p.n;
    if t % stride != 0 {
        return Err(Error::bad(
            "tpt_block",
            format!("temporal extent {t} not divisible by 2^{}", p.n),
        ));
    }
    if p.down.len() != p.n as usize || p.up.len() != p.n as usize {
        return Err(Error::bad("tpt_block", "sampler count does not match n"));
    }
    let mut y = x.clone();
    for (norm, conv) in &p.down {
        y = temporal_downsample(&y, Some(norm), conv)?;
    }
    let cfg = p.attention_config(x.shape()[0], [y.shape()[1], y.shape()[2], y.shape()[3]])?;
    let normed = batch_norm(&y, &p.attn_norm)?;
    let attended = match trace {
        Some(tr) => mhsa_forward_traced(&normed, &cfg, &p.attn, p.n, Some(tr))?,
        None => mhsa_forward(&normed, &cfg, &p.attn, p.n)?,
    };
    y = y.add(&attended)?;
    y = y.add(&feed_forward(&batch_norm(&y, &p.ff_norm)?, &p.ff)?)?;
    for conv in &p.up {
        y = temporal_upsample(&y, conv)?;
    }
    y.add(x)
}

#[derive(Debug, Clone)]
pub struct ModelParams<S> {
    pub stem: StemParams<S>,
    pub embed: PatchEmbedParams<S>,
    pub blocks: Vec<TptBlockParams<S>>,
    pub head_hidden: LinearParams<S>,
    pub head_out: LinearParams<S>,
}

impl<S: Real> ModelParams<S> {
    /// Deterministic construction: every draw comes from one stream seeded by
    /// the config, in fixed declaration order.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let stem = StemParams::init(cfg.stem_channels, cfg.channels, cfg.stem_alpha, cfg.stem_beta, &mut rng)?;
        let embed = PatchEmbedParams::init(cfg.channels, &mut rng)?;
        let mut blocks = Vec::new();
        for &n in &cfg.schedule {
            blocks.push(TptBlockParams::init(cfg, n, &mut rng)?);
        }
        let c = cfg.channels;
        let hh = cfg.head_hidden;
        Ok(ModelParams {
            stem,
            embed,
            blocks,
            head_hidden: LinearParams {
                weight: xavier_uniform(&[hh, c], c, hh, &mut rng)?,
                bias: vec![S::zero(); hh],
            },
            head_out: LinearParams {
                weight: xavier_uniform(&[1, hh], hh, 1, &mut rng)?,
                bias: vec![S::zero(); 1],
            },
        })
    }
}

/// Spatial mean per frame, then the two-layer head on each frame vector.
fn predictor_head<S: Real>(x: &Tensor<S>, hidden: &LinearParams<S>, out: &LinearParams<S>) -> Result<Vec<S>> {
    let [c, t, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let plane = h * w;
    let inv = S::one() / S::of(plane as f64);
    let xd = x.data();
    let mut bvp = Vec::with_capacity(t);
    let mut feat = vec![S::zero(); c];
    for tt in 0..t {
        for (ch, f) in feat.iter_mut().enumerate() {
            let base = (ch * t + tt) * plane;
            let mut acc = S::zero();
            for p in 0..plane {
                acc = acc + xd[base + p];
            }
            *f = acc * inv;
        }
        let mut mid = hidden.apply(&feat)?;
        for v in mid.iter_mut() {
            *v = v.max(S::zero());
        }
        bvp.push(out.apply(&mid)?[0]);
    }
    Ok(bvp)
}

pub fn model_forward<S: Real>(clip: &VideoClip<S>, cfg: &ModelConfig, params: &ModelParams<S>) -> Result<BvpSignal<S>> {
    model_forward_traced(clip, cfg, params, None)
}

/// As `model_forward`, optionally capturing each block's routing internals.
pub fn model_forward_traced<S: Real>(
    clip: &VideoClip<S>,
    cfg: &ModelConfig,
    params: &ModelParams<S>,
    mut traces: Option<&mut Vec<MhsaTrace<S>>>,
) -> Result<BvpSignal<S>> {
    cfg.validate()?;
    if clip.height() % 16 != 0 || clip.width() % 16 != 0 {
        return Err(Error::bad(
            "model_forward",
            format!("frame {}x{} not divisible by 16", clip.height(), clip.width()),
        ));
    }
    let t = clip.len_t();
    let stride = 1usize << cfg.max_stage();
    if t % stride != 0 {
        return Err(Error::bad(
            "model_forward",
            format!("clip length {t} not divisible by 2^{}", cfg.max_stage()),
        ));
    }
    let mut x = patch_embed(&fusion_stem_forward(clip, &params.stem)?, &params.embed)?;
    for block in &params.blocks {
        match traces.as_deref_mut() {
            Some(ts) => {
                let mut tr = MhsaTrace::default();
                x = tpt_block_forward_traced(&x, block, Some(&mut tr))?;
                ts.push(tr);
            }
            None => x = tpt_block_forward(&x, block)?,
        }
    }
    BvpSignal::new(predictor_head(&x, &params.head_hidden, &params.head_out)?, clip.fps())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ModelSummary {
    pub params: usize,
    pub macs: u64,
}

fn conv_macs(out_voxels: usize, in_per_group: usize, kvol: usize, out_channels: usize) -> u64 {
    out_voxels as u64 * in_per_group as u64 * kvol as u64 * out_channels as u64
}

/// Exact parameter count by enumeration, and closed-form multiply-accumulate
/// count for one clip of the given `[T, H, W]` shape. Only convolutions,
/// linear maps, and attention products are counted; the routed-gather term
/// uses the mean region size, since exact sizes depend on the scores.
pub fn model_summary(cfg: &ModelConfig, input_shape: [usize; 3]) -> Result<ModelSummary> {
    cfg.validate()?;
    let params = count_params(&ModelParams::<f64>::init(cfg)?);

    let [t, h, w] = input_shape;
    if h % 16 != 0 || w % 16 != 0 || t % (1 << cfg.max_stage()) != 0 {
        return Err(Error::bad("model_summary", format!("input shape {input_shape:?} violates divisibility")));
    }
    let c = cfg.channels;
    let c1 = cfg.stem_channels;
    let mut macs = 0u64;

    // stem towers: conv at half resolution, fused conv runs twice
    let half = t * (h / 2) * (w / 2);
    macs += conv_macs(half, 12, 25, c1) + conv_macs(half, 3, 25, c1);
    let quarter = t * (h / 4) * (w / 4);
    macs += 2 * conv_macs(quarter, c1, 9, c);
    // patch embedding
    let (s, s2) = (h / 16, w / 16);
    let tokens_full = t * s * s2;
    macs += conv_macs(tokens_full, c, 16, c);

    for &n in &cfg.schedule {
        let mut td = t;
        for _ in 0..n {
            td /= 2;
            macs += conv_macs(td * s * s2, c, 2, c);
        }
        let tokens = td * s * s2;
        // q/k are 3x3x3 with the pointwise difference correction; v is 1x1x1
        macs += 2 * (conv_macs(tokens, c, 27, c) + conv_macs(tokens, c, 1, c));
        macs += conv_macs(tokens, c, 1, c);
        let span = 1usize << cfg.partition_coefficient.max(n);
        let t_win = td / span;
        if t_win == 0 {
            return Err(Error::bad("model_summary", format!("clip too short for stage n={n}")));
        }
        let regions = td.div_ceil(t_win) * 16;
        let k = cfg.topk.unwrap_or_else(|| default_topk(regions));
        // region scores at full width, then token attention per head
        macs += (regions * regions * c) as u64;
        let gathered = k as u64 * (tokens as u64 / regions as u64);
        macs += 2 * tokens as u64 * gathered * c as u64;
        // depthwise context conv and output projection
        macs += conv_macs(tokens, 1, 27, c);
        macs += conv_macs(tokens, c, 1, c);
        // feed-forward
        let wide = c * cfg.ff_expansion;
        macs += conv_macs(tokens, c, 1, wide);
        macs += conv_macs(tokens, 1, 27, wide);
        macs += conv_macs(tokens, wide, 1, c);
        // upsampling back to full length
        let mut tu = td;
        for _ in 0..n {
            tu *= 2;
            macs += conv_macs(tu * s * s2, c, 2, c);
        }
    }
    // head on each of T frame vectors
    macs += (t * (c * cfg.head_hidden + cfg.head_hidden)) as u64;

    Ok(ModelSummary { params, macs })
}

pub fn count_params<S: Real>(p: &ModelParams<S>) -> usize {
    let mut params = ModelParams::clone(p);
    walk_params(&mut params).iter().map(|(_, p)| p.len()).sum()
}

enum ParamSlot<'a, S> {
    T(&'a mut Tensor<S>),
    V(&'a mut Vec<S>),
}

impl<S: Real> ParamSlot<'_, S> {
    fn len(&self) -> usize {
        match self {
            ParamSlot::T(t) => t.len(),
            ParamSlot::V(v) => v.len(),
        }
    }

    fn shape(&self) -> Vec<usize> {
        match self {
            ParamSlot::T(t) => t.shape().to_vec(),
            ParamSlot::V(v) => vec![v.len()],
        }
    }

    fn values(&self) -> Vec<f64> {
        match self {
            ParamSlot::T(t) => t.data().iter().map(|v| v.f64()).collect(),
            ParamSlot::V(v) => v.iter().map(|v| v.f64()).collect(),
        }
    }

    fn fill(&mut self, data: &[f64]) {
        match self {
            ParamSlot::T(t) => {
                for (dst, src) in t.data_mut().iter_mut().zip(data) {
                    *dst = S::of(*src);
                }
            }
            ParamSlot::V(v) => {
                for (dst, src) in v.iter_mut().zip(data) {
                    *dst = S::of(*src);
                }
            }
        }
    }
}

fn conv_slots<'a, S: Real>(out: &mut Vec<(String, ParamSlot<'a, S>)>, name: &str, p: &'a mut ConvParams<S>) {
    out.push((format!("{name}.weight"), ParamSlot::T(&mut p.weight)));
    out.push((format!("{name}.bias"), ParamSlot::V(&mut p.bias)));
}

fn norm_slots<'a, S: Real>(out: &mut Vec<(String, ParamSlot<'a, S>)>, name: &str, p: &'a mut NormParams<S>) {
    out.push((format!("{name}.gamma"), ParamSlot::V(&mut p.gamma)));
    out.push((format!("{name}.beta"), ParamSlot::V(&mut p.beta)));
}

fn linear_slots<'a, S: Real>(out: &mut Vec<(String, ParamSlot<'a, S>)>, name: &str, p: &'a mut LinearParams<S>) {
    out.push((format!("{name}.weight"), ParamSlot::T(&mut p.weight)));
    out.push((format!("{name}.bias"), ParamSlot::V(&mut p.bias)));
}

/// Every learnable tensor with its stable checkpoint name, in file order.
fn walk_params<S: Real>(p: &mut ModelParams<S>) -> Vec<(String, ParamSlot<'_, S>)> {
    let mut out = Vec::new();
    conv_slots(&mut out, "stem.diff", &mut p.stem.stem1_diff);
    conv_slots(&mut out, "stem.raw", &mut p.stem.stem1_raw);
    norm_slots(&mut out, "stem.norm1", &mut p.stem.stem1_norm);
    conv_slots(&mut out, "stem.fuse", &mut p.stem.stem2);
    norm_slots(&mut out, "stem.norm2", &mut p.stem.stem2_norm);
    conv_slots(&mut out, "embed.proj", &mut p.embed.proj);
    for (i, b) in p.blocks.iter_mut().enumerate() {
        for (j, (norm, conv)) in b.down.iter_mut().enumerate() {
            norm_slots(&mut out, &format!("block{i}.down{j}.norm"), norm);
            conv_slots(&mut out, &format!("block{i}.down{j}.conv"), conv);
        }
        norm_slots(&mut out, &format!("block{i}.attn.norm"), &mut b.attn_norm);
        conv_slots(&mut out, &format!("block{i}.attn.q"), &mut b.attn.q_proj);
        conv_slots(&mut out, &format!("block{i}.attn.k"), &mut b.attn.k_proj);
        conv_slots(&mut out, &format!("block{i}.attn.v"), &mut b.attn.v_proj);
        conv_slots(&mut out, &format!("block{i}.attn.lce"), &mut b.attn.lce);
        linear_slots(&mut out, &format!("block{i}.attn.out"), &mut b.attn.out_proj);
        norm_slots(&mut out, &format!("block{i}.ff.norm"), &mut b.ff_norm);
        linear_slots(&mut out, &format!("block{i}.ff.lift"), &mut b.ff.lift);
        conv_slots(&mut out, &format!("block{i}.ff.hidden"), &mut b.ff.hidden);
        norm_slots(&mut out, &format!("block{i}.ff.hidden_norm"), &mut b.ff.hidden_norm);
        linear_slots(&mut out, &format!("block{i}.ff.drop"), &mut b.ff.drop);
        for (j, conv) in b.up.iter_mut().enumerate() {
            conv_slots(&mut out, &format!("block{i}.up{j}.conv"), conv);
        }
    }
    linear_slots(&mut out, "head.hidden", &mut p.head_hidden);
    linear_slots(&mut out, "head.out", &mut p.head_out);
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    /// Element offset into the blob.
    offset: usize,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    dtype: String,
    endianness: String,
    data_file: String,
    entries: Vec<ManifestEntry>,
}

/// Write `{stem}.json` (manifest) and `{stem}.bin` (64-bit little-endian
/// values, concatenated in manifest order).
pub fn save_checkpoint<S: Real>(params: &ModelParams<S>, dir: &Path, stem: &str) -> Result<PathBuf> {
    let mut params = params.clone();
    let slots = walk_params(&mut params);
    let mut entries = Vec::with_capacity(slots.len());
    let mut blob: Vec<u8> = Vec::new();
    let mut offset = 0usize;
    for (name, slot) in &slots {
        entries.push(ManifestEntry { name: name.clone(), offset, shape: slot.shape() });
        for v in slot.values() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        offset += slot.len();
    }
    let manifest = Manifest {
        dtype: "f64".into(),
        endianness: "little".into(),
        data_file: format!("{stem}.bin"),
        entries,
    };
    std::fs::create_dir_all(dir)?;
    let bin_path = dir.join(format!("{stem}.bin"));
    std::fs::File::create(&bin_path)?.write_all(&blob)?;
    let json_path = dir.join(format!("{stem}.json"));
    let f = std::fs::File::create(&json_path)?;
    serde_json::to_writer_pretty(f, &manifest)?;
    Ok(json_path)
}

/// Rebuild parameters for `cfg` and fill every tensor from the checkpoint.
/// The manifest must cover exactly the tensors the config defines.
pub fn load_checkpoint<S: Real>(manifest_path: &Path, cfg: &ModelConfig) -> Result<ModelParams<S>> {
    let manifest: Manifest = serde_json::from_reader(std::fs::File::open(manifest_path)?)?;
    if manifest.dtype != "f64" || manifest.endianness != "little" {
        return Err(Error::Format {
            path: manifest_path.display().to_string(),
            msg: format!("unsupported encoding {}/{}", manifest.dtype, manifest.endianness),
        });
    }
    let blob_path = manifest_path.parent().unwrap_or(Path::new(".")).join(&manifest.data_file);
    let mut raw = Vec::new();
    std::fs::File::open(&blob_path)?.read_to_end(&mut raw)?;
    if raw.len() % 8 != 0 {
        return Err(Error::Format { path: blob_path.display().to_string(), msg: "blob is not whole f64s".into() });
    }
    let values: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();

    let mut params = ModelParams::<S>::init(cfg)?;
    let mut slots = walk_params(&mut params);
    if slots.len() != manifest.entries.len() {
        return Err(Error::Format {
            path: manifest_path.display().to_string(),
            msg: format!("{} entries for {} model tensors", manifest.entries.len(), slots.len()),
        });
    }
    for (entry, (name, slot)) in manifest.entries.iter().zip(slots.iter_mut()) {
        if &entry.name != name || entry.shape != slot.shape() {
            return Err(Error::Format {
                path: manifest_path.display().to_string(),
                msg: format!("entry {} {:?} does not match model tensor {} {:?}", entry.name, entry.shape, name, slot.shape()),
            });
        }
        let len = slot.len();
        if entry.offset + len > values.len() {
            return Err(Error::Format {
                path: blob_path.display().to_string(),
                msg: format!("entry {} overruns the blob", entry.name),
            });
        }
        slot.fill(&values[entry.offset..entry.offset + len]);
    }
    drop(slots);
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn thin_config() -> ModelConfig {
        ModelConfig {
            schedule: vec![1],
            channels: 8,
            heads: 2,
            stem_channels: 4,
            head_hidden: 4,
            ..Default::default()
        }
    }

    fn down_conv(weight: Vec<f64>, c: usize) -> ConvParams<f64> {
        let w = Tensor::from_vec(&[c, c, 2, 1, 1], weight).unwrap();
        ConvParams::new(w, vec![0.0; c], [2, 1, 1], [0, 0, 0])
    }

    #[test]
    fn downsample_averages_the_ramp() {
        let x = Tensor::from_vec(&[1, 4, 1, 1], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let y = temporal_downsample(&x, None, &down_conv(vec![0.5, 0.5], 1)).unwrap();
        assert_eq!(y.shape(), &[1, 2, 1, 1]);
        assert_eq!(y.data(), &[0.5, 2.5]);
    }

    #[test]
    fn downsample_halves_full_size_volumes() {
        let mut r = rng(1);
        let x = random_tensor(&[64, 160, 8, 8], &mut r);
        let sh = [64, 64, 2, 1, 1];
        let (fi, fo) = conv_fans(&sh);
        let conv = ConvParams::new(
            xavier_uniform(&sh, fi, fo, &mut r).unwrap(),
            vec![0.0; 64],
            [2, 1, 1],
            [0, 0, 0],
        );
        let y = temporal_downsample(&x, Some(&NormParams::identity(64)), &conv).unwrap();
        assert_eq!(y.shape(), &[64, 80, 8, 8]);
    }

    #[test]
    fn downsample_is_norm_then_strided_convolution() {
        let mut r = rng(2);
        let x = random_tensor(&[3, 8, 4, 4], &mut r);
        let sh = [3, 3, 2, 1, 1];
        let conv = ConvParams::new(random_tensor(&sh, &mut r), vec![0.1, -0.2, 0.3], [2, 1, 1], [0, 0, 0]);
        let norm = NormParams::identity(3);
        let got = temporal_downsample(&x, Some(&norm), &conv).unwrap();
        let want = conv3d(&batch_norm(&x, &norm).unwrap(), &conv).unwrap();
        assert!(got.max_abs_diff(&want).unwrap() < 1e-12);
    }

    #[test]
    fn downsample_rejects_odd_lengths() {
        let x = Tensor::<f64>::zeros(&[1, 5, 1, 1]).unwrap();
        assert!(temporal_downsample(&x, None, &down_conv(vec![0.5, 0.5], 1)).is_err());
    }

    #[test]
    fn upsample_replicates_with_unit_kernel() {
        let x = Tensor::from_vec(&[1, 2, 1, 1], vec![7.0, -3.0]).unwrap();
        let y = temporal_upsample(&x, &down_conv(vec![1.0, 1.0], 1)).unwrap();
        assert_eq!(y.data(), &[7.0, 7.0, -3.0, -3.0]);
    }

    #[test]
    fn upsample_doubles_full_size_volumes() {
        let mut r = rng(3);
        let x = random_tensor(&[64, 20, 8, 8], &mut r);
        let sh = [64, 64, 2, 1, 1];
        let (fi, fo) = conv_fans(&sh);
        let conv = ConvParams::new(
            xavier_uniform(&sh, fi, fo, &mut r).unwrap(),
            vec![0.0; 64],
            [2, 1, 1],
            [0, 0, 0],
        );
        assert_eq!(temporal_upsample(&x, &conv).unwrap().shape(), &[64, 40, 8, 8]);
    }

    #[test]
    fn upsample_matches_scatter_oracle() {
        let mut r = rng(4);
        let x = random_tensor(&[3, 5, 2, 2], &mut r);
        let conv = ConvParams::new(random_tensor(&[3, 2, 2, 1, 1], &mut r), vec![0.3, -0.1], [2, 1, 1], [0, 0, 0]);
        let got = temporal_upsample(&x, &conv).unwrap();
        let want = Tensor::from_fn(&[2, 10, 2, 2], |o| {
            let (tt, kt) = (o[1] / 2, o[1] % 2);
            let mut acc = conv.bias[o[0]];
            for ic in 0..3 {
                acc += conv.weight.at(&[ic, o[0], kt, 0, 0]) * x.at(&[ic, tt, o[2], o[3]]);
            }
            acc
        })
        .unwrap();
        assert!(got.max_abs_diff(&want).unwrap() < 1e-12);
    }

    #[test]
    fn matched_kernels_make_down_of_up_the_identity() {
        let mut r = rng(5);
        let x = random_tensor(&[2, 6, 3, 3], &mut r);
        let up = ConvParams::new(
            Tensor::from_fn(&[2, 2, 2, 1, 1], |i| if i[0] == i[1] { 1.0 } else { 0.0 }).unwrap(),
            vec![0.0; 2],
            [2, 1, 1],
            [0, 0, 0],
        );
        let down = ConvParams::new(
            Tensor::from_fn(&[2, 2, 2, 1, 1], |i| if i[0] == i[1] { 0.5 } else { 0.0 }).unwrap(),
            vec![0.0; 2],
            [2, 1, 1],
            [0, 0, 0],
        );
        let restored = temporal_downsample(&temporal_upsample(&x, &up).unwrap(), None, &down).unwrap();
        assert_eq!(restored.data(), x.data());
    }

    #[test]
    fn zeroed_feed_forward_outputs_zero() {
        let mut r = rng(6);
        let x = random_tensor(&[4, 4, 3, 3], &mut r);
        let mut p = FeedForwardParams::<f64>::init(4, 2, &mut r).unwrap();
        p.drop.weight = Tensor::zeros(&[4, 8]).unwrap();
        p.drop.bias = vec![0.0; 4];
        let y = feed_forward(&x, &p).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_wired_feed_forward_is_identity_in_probe_mode() {
        let c = 3;
        let wide = 6;
        let lift = LinearParams {
            weight: Tensor::from_fn(&[wide, c], |i| if i[0] % c == i[1] { 1.0 } else { 0.0 }).unwrap(),
            bias: vec![0.0; wide],
        };
        let hidden = ConvParams::new(
            Tensor::from_fn(&[wide, 1, 3, 3, 3], |i| if i[2..] == [1, 1, 1] { 1.0 } else { 0.0 }).unwrap(),
            vec![0.0; wide],
            [1, 1, 1],
            [1, 1, 1],
        )
        .with_groups(wide);
        let drop = LinearParams {
            weight: Tensor::from_fn(&[c, wide], |i| if i[1] % c == i[0] { 0.5 } else { 0.0 }).unwrap(),
            bias: vec![0.0; c],
        };
        let p = FeedForwardParams { lift, hidden, hidden_norm: NormParams::identity(wide), drop };
        let mut r = rng(7);
        let x = random_tensor(&[c, 4, 3, 3], &mut r);
        let y = feed_forward_mode(&x, &p, ForwardMode::LinearProbe).unwrap();
        assert!(y.max_abs_diff(&x).unwrap() < 1e-12);
    }

    #[test]
    fn feed_forward_matches_layer_composition() {
        let mut r = rng(8);
        let x = random_tensor(&[4, 4, 4, 4], &mut r);
        let p = FeedForwardParams::<f64>::init(4, 2, &mut r).unwrap();
        let got = feed_forward(&x, &p).unwrap();
        let lifted = pointwise(&x, &p.lift).unwrap();
        let hidden = gelu(&batch_norm(&conv3d(&lifted, &p.hidden).unwrap(), &p.hidden_norm).unwrap());
        let want = pointwise(&hidden, &p.drop).unwrap();
        assert!(got.max_abs_diff(&want).unwrap() < 1e-12);
    }

    #[test]
    fn tpt_block_preserves_shape_for_all_depths() {
        let cfg = thin_config();
        for n in 1..=3u32 {
            let mut r = rng(10 + n as u64);
            let p = TptBlockParams::<f64>::init(&cfg, n, &mut r).unwrap();
            let x = random_tensor(&[8, 160, 4, 4], &mut r);
            let y = tpt_block_forward(&x, &p).unwrap();
            assert_eq!(y.shape(), x.shape(), "n = {n}");
        }
    }

    #[test]
    fn tpt_block_rejects_indivisible_lengths() {
        let cfg = thin_config();
        let mut r = rng(11);
        let p = TptBlockParams::<f64>::init(&cfg, 2, &mut r).unwrap();
        let x = random_tensor(&[8, 18, 4, 4], &mut r);
        assert!(tpt_block_forward(&x, &p).is_err());
    }

    /// Zero every learnable value in the block, norms included.
    fn zero_block(p: &mut TptBlockParams<f64>) {
        let zero = |c: &mut ConvParams<f64>| {
            c.weight.data_mut().fill(0.0);
            c.bias.fill(0.0);
        };
        let zero_n = |n: &mut NormParams<f64>| {
            n.gamma.fill(0.0);
            n.beta.fill(0.0);
        };
        for (norm, conv) in &mut p.down {
            zero_n(norm);
            zero(conv);
        }
        zero_n(&mut p.attn_norm);
        zero(&mut p.attn.q_proj);
        zero(&mut p.attn.k_proj);
        zero(&mut p.attn.v_proj);
        zero(&mut p.attn.lce);
        p.attn.out_proj.weight.data_mut().fill(0.0);
        p.attn.out_proj.bias.fill(0.0);
        zero_n(&mut p.ff_norm);
        p.ff.lift.weight.data_mut().fill(0.0);
        p.ff.lift.bias.fill(0.0);
        zero(&mut p.ff.hidden);
        zero_n(&mut p.ff.hidden_norm);
        p.ff.drop.weight.data_mut().fill(0.0);
        p.ff.drop.bias.fill(0.0);
        for c in &mut p.up {
            zero(c);
        }
    }

    #[test]
    fn zero_weights_leave_only_the_block_residual() {
        let cfg = thin_config();
        let mut r = rng(12);
        let mut p = TptBlockParams::<f64>::init(&cfg, 1, &mut r).unwrap();
        zero_block(&mut p);
        let x = random_tensor(&[8, 16, 4, 4], &mut r);
        let y = tpt_block_forward(&x, &p).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn tpt_block_equals_manual_stage_composition() {
        let cfg = thin_config();
        let mut r = rng(13);
        let p = TptBlockParams::<f64>::init(&cfg, 1, &mut r).unwrap();
        let x = random_tensor(&[8, 16, 4, 4], &mut r);
        let got = tpt_block_forward(&x, &p).unwrap();

        let mut y = x.clone();
        for (norm, conv) in &p.down {
            y = conv3d(&batch_norm(&y, norm).unwrap(), conv).unwrap();
        }
        let cfg_attn = AttentionConfig {
            channels: 8,
            heads: 2,
            head_dim: 4,
            // 8 frames at span 4 give 4 temporal slabs of 4x4 spatial cells
            topk: default_topk(64),
            partition_coefficient: 2,
            tdc_theta: 0.7,
        };
        let a = mhsa_forward(&batch_norm(&y, &p.attn_norm).unwrap(), &cfg_attn, &p.attn, 1).unwrap();
        y = y.add(&a).unwrap();
        let f = feed_forward(&batch_norm(&y, &p.ff_norm).unwrap(), &p.ff).unwrap();
        y = y.add(&f).unwrap();
        for conv in &p.up {
            y = temporal_upsample(&y, conv).unwrap();
        }
        let want = y.add(&x).unwrap();
        assert!(got.max_abs_diff(&want).unwrap() < 1e-12);
    }

    fn synth_clip(t: usize, hw: usize, seed: u64) -> VideoClip<f64> {
        let spec = crate::video::SyntheticSceneSpec {
            t,
            h: hw,
            w: hw,
            noise_sigma: 1.0,
            seed,
            ..Default::default()
        };
        crate::video::generate_synthetic_clip(&spec).unwrap().0
    }

    #[test]
    fn forward_produces_one_sample_per_frame() {
        let cfg = ModelConfig { schedule: vec![1, 2, 3], ..thin_config() };
        let params = ModelParams::<f64>::init(&cfg).unwrap();
        let clip = synth_clip(64, 64, 21);
        let bvp = model_forward(&clip, &cfg, &params).unwrap();
        assert_eq!(bvp.samples().len(), 64);
        assert_eq!(bvp.fs(), clip.fps());
    }

    #[test]
    fn forward_rejects_bad_geometry() {
        let cfg = ModelConfig { schedule: vec![1, 2, 3], ..thin_config() };
        let params = ModelParams::<f64>::init(&cfg).unwrap();
        // 72 is not a multiple of 16
        let clip = synth_clip(64, 72, 22);
        assert!(model_forward(&clip, &cfg, &params).is_err());
        // 20 frames cannot be halved three times
        let clip = synth_clip(20, 64, 23);
        assert!(model_forward(&clip, &cfg, &params).is_err());
    }

    #[test]
    fn zeroed_head_gives_a_flat_zero_waveform() {
        let cfg = thin_config();
        let mut params = ModelParams::<f64>::init(&cfg).unwrap();
        params.head_out.weight = Tensor::zeros(&[1, 4]).unwrap();
        params.head_out.bias = vec![0.0];
        let clip = synth_clip(16, 64, 24);
        let bvp = model_forward(&clip, &cfg, &params).unwrap();
        assert!(bvp.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_deterministic_from_the_seed() {
        let cfg = thin_config();
        let clip = synth_clip(16, 64, 25);
        let a = model_forward(&clip, &cfg, &ModelParams::<f64>::init(&cfg).unwrap()).unwrap();
        let b = model_forward(&clip, &cfg, &ModelParams::<f64>::init(&cfg).unwrap()).unwrap();
        assert_eq!(a.samples(), b.samples());
    }

    #[test]
    fn every_schedule_of_the_ablation_is_constructible() {
        for schedule in [vec![1, 2, 3], vec![3, 2, 1], vec![1], vec![2], vec![3]] {
            let cfg = ModelConfig { schedule: schedule.clone(), ..thin_config() };
            let params = ModelParams::<f64>::init(&cfg).unwrap();
            let clip = synth_clip(64, 64, 26);
            let bvp = model_forward(&clip, &cfg, &params).unwrap();
            assert_eq!(bvp.samples().len(), 64, "schedule {schedule:?}");
        }
    }

    #[test]
    fn residual_path_carries_stem_features_when_transformer_is_zeroed() {
        let cfg = thin_config();
        let mut params = ModelParams::<f64>::init(&cfg).unwrap();
        for b in &mut params.blocks {
            zero_block(b);
        }
        let clip = synth_clip(16, 64, 27);
        let bvp = model_forward(&clip, &cfg, &params).unwrap();
        // same head applied directly to the embedded stem features
        let x = patch_embed(&fusion_stem_forward(&clip, &params.stem).unwrap(), &params.embed).unwrap();
        let want = predictor_head(&x, &params.head_hidden, &params.head_out).unwrap();
        assert_eq!(bvp.samples(), &want[..]);
    }

    #[test]
    fn tiny_layer_param_counts_match_arithmetic() {
        let conv = ConvParams::<f64>::new(Tensor::zeros(&[8, 4, 1, 1, 1]).unwrap(), vec![0.0; 8], [1, 1, 1], [0, 0, 0]);
        assert_eq!(conv.weight.len() + conv.bias.len(), 40);
        let lin = LinearParams::<f64> { weight: Tensor::zeros(&[64, 64]).unwrap(), bias: vec![0.0; 64] };
        assert_eq!(lin.weight.len() + lin.bias.len(), 4160);
    }

    #[test]
    fn summary_counts_are_positive_and_scale_with_input() {
        let cfg = thin_config();
        let s1 = model_summary(&cfg, [16, 32, 32]).unwrap();
        assert!(s1.params > 0 && s1.macs > 0);
        let s2 = model_summary(&cfg, [32, 32, 32]).unwrap();
        assert_eq!(s1.params, s2.params, "params do not depend on the input");
        assert!(s2.macs > s1.macs);
    }

    #[test]
    fn summary_param_count_equals_checkpoint_payload() {
        let cfg = thin_config();
        let params = ModelParams::<f64>::init(&cfg).unwrap();
        let dir = std::env::temp_dir().join("rppg-model-test-count");
        let manifest = save_checkpoint(&params, &dir, "w").unwrap();
        let blob = std::fs::read(dir.join("w.bin")).unwrap();
        assert_eq!(blob.len() / 8, count_params(&params));
        let _ = manifest;
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn checkpoint_roundtrip_restores_every_value() {
        let cfg = thin_config();
        let params = ModelParams::<f64>::init(&cfg).unwrap();
        let dir = std::env::temp_dir().join("rppg-model-test-roundtrip");
        let manifest = save_checkpoint(&params, &dir, "w").unwrap();
        let restored: ModelParams<f64> = load_checkpoint(&manifest, &cfg).unwrap();
        let clip = synth_clip(16, 64, 28);
        let a = model_forward(&clip, &cfg, &params).unwrap();
        let b = model_forward(&clip, &cfg, &restored).unwrap();
        assert_eq!(a.samples(), b.samples());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn checkpoint_rejects_mismatched_config() {
        let cfg = thin_config();
        let params = ModelParams::<f64>::init(&cfg).unwrap();
        let dir = std::env::temp_dir().join("rppg-model-test-mismatch");
        let manifest = save_checkpoint(&params, &dir, "w").unwrap();
        let other = ModelConfig { channels: 16, ..thin_config() };
        assert!(load_checkpoint::<f64>(&manifest, &other).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }
}
