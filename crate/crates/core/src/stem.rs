//! Fusion stem and patch embedding.
//!
//! The stem runs two Stem_1 towers with separate input slabs, one over a
//! 12-channel stack of frame differences and one over the raw frames, then
//! fuses them through a shared Stem_2:
//!
//! ```text
//! x_diff   = Stem_1(concat(D_-2, D_-1, D_1, D_2))
//! x_origin = Stem_1(X)
//! x_stem   = alpha * Stem_2(x_origin) + beta * Stem_2(alpha*x_origin + beta*x_diff)
//! ```
//!
//! Stem_1 is conv 5x5 stride 2 + BN + ReLU + maxpool 2x2 (total /4 spatial);
//! Stem_2 is conv 3x3 + BN + ReLU at constant resolution. Patch embedding is
//! a non-overlapping (1,4,4) strided projection with no positional term.

use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::nn::{batch_norm, conv3d, conv_fans, pool, relu, xavier_uniform, ConvParams, ForwardMode, NormParams, PoolKind};
use crate::tensor::Tensor;
use crate::video::VideoClip;
use crate::{Real, Result};

pub const DIFF_CHANNELS: usize = 12;

#[derive(Debug, Clone)]
pub struct StemParams<S> {
    pub stem1_diff: ConvParams<S>,
    pub stem1_raw: ConvParams<S>,
    pub stem1_norm: NormParams<S>,
    pub stem2: ConvParams<S>,
    pub stem2_norm: NormParams<S>,
    pub alpha: S,
    pub beta: S,
}

impl<S: Real> StemParams<S> {
    /// Seeded init: Stem_1 maps the diff/raw inputs to `stem1_ch` channels,
    /// Stem_2 to `c_out`. Biases start at zero.
    pub fn init(stem1_ch: usize, c_out: usize, alpha: f64, beta: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mk = |sh: &[usize], stride, padding, rng: &mut ChaCha8Rng| -> Result<ConvParams<S>> {
            let (fi, fo) = conv_fans(sh);
            Ok(ConvParams::new(xavier_uniform(sh, fi, fo, rng)?, vec![S::zero(); sh[0]], stride, padding))
        };
        let p = StemParams {
            stem1_diff: mk(&[stem1_ch, DIFF_CHANNELS, 1, 5, 5], [1, 2, 2], [0, 2, 2], rng)?,
            stem1_raw: mk(&[stem1_ch, 3, 1, 5, 5], [1, 2, 2], [0, 2, 2], rng)?,
            stem1_norm: NormParams::identity(stem1_ch),
            stem2: mk(&[c_out, stem1_ch, 1, 3, 3], [1, 1, 1], [0, 1, 1], rng)?,
            stem2_norm: NormParams::identity(c_out),
            alpha: S::of(alpha),
            beta: S::of(beta),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.alpha.f64();
        let b = self.beta.f64();
        if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) {
            return Err(Error::bad("stem_params", format!("alpha {a} / beta {b} outside [0,1]")));
        }
        let d = self.stem1_diff.weight.shape();
        let r = self.stem1_raw.weight.shape();
        if d[1] != DIFF_CHANNELS || r[1] != 3 || d[0] != r[0] {
            return Err(Error::bad(
                "stem_params",
                format!("stem1 slabs {d:?} / {r:?}, want matching out and 12/3 in"),
            ));
        }
        if d[2..] != [1, 5, 5] || r[2..] != [1, 5, 5] || self.stem2.weight.shape()[2..] != [1, 3, 3] {
            return Err(Error::bad("stem_params", "stem1 kernels must be (1,5,5), stem2 (1,3,3)"));
        }
        Ok(())
    }

    pub fn out_channels(&self) -> usize {
        self.stem2.out_channels()
    }
}

/// Four signed neighbor differences per frame, channel-concatenated in the
/// order D_-2, D_-1, D_1, D_2 (12 channels). Temporal edges replicate the
/// boundary frame, so differences that would reach outside the clip are zero.
pub fn difference_frames<S: Real>(clip: &VideoClip<S>) -> Result<Tensor<S>> {
    let frames = clip.frames();
    let [_, t_len, h, w] = [frames.shape()[0], frames.shape()[1], frames.shape()[2], frames.shape()[3]];
    let plane = h * w;
    let src = frames.data();
    let mut out = Tensor::zeros(&[DIFF_CHANNELS, t_len, h, w])?;
    let dst = out.data_mut();
    let clamp = |i: isize| i.clamp(0, t_len as isize - 1) as usize;
    // offsets of (later, earlier) frame per difference, relative to t
    let taps: [(isize, isize); 4] = [(-1, -2), (0, -1), (1, 0), (2, 1)];
    for (slot, &(late, early)) in taps.iter().enumerate() {
        for c in 0..3 {
            let src_c = c * t_len * plane;
            let dst_c = (slot * 3 + c) * t_len * plane;
            for t in 0..t_len as isize {
                let a = src_c + clamp(t + late) * plane;
                let b = src_c + clamp(t + early) * plane;
                let d = dst_c + t as usize * plane;
                for p in 0..plane {
                    dst[d + p] = src[a + p] - src[b + p];
                }
            }
        }
    }
    Ok(out)
}

fn stem1_tower<S: Real>(
    x: &Tensor<S>,
    conv: &ConvParams<S>,
    norm: &NormParams<S>,
    mode: ForwardMode,
) -> Result<Tensor<S>> {
    let y = conv3d(x, conv)?;
    let y = match mode {
        ForwardMode::Standard => relu(&batch_norm(&y, norm)?),
        ForwardMode::LinearProbe => y,
    };
    pool(&y, PoolKind::Max, &[1, 1, 2, 2], &[1, 1, 2, 2])
}

fn stem2_tower<S: Real>(
    x: &Tensor<S>,
    conv: &ConvParams<S>,
    norm: &NormParams<S>,
    mode: ForwardMode,
) -> Result<Tensor<S>> {
    let y = conv3d(x, conv)?;
    match mode {
        ForwardMode::Standard => Ok(relu(&batch_norm(&y, norm)?)),
        ForwardMode::LinearProbe => Ok(y),
    }
}

pub fn fusion_stem_forward<S: Real>(clip: &VideoClip<S>, p: &StemParams<S>) -> Result<Tensor<S>> {
    fusion_stem_forward_mode(clip, p, ForwardMode::Standard)
}

pub fn fusion_stem_forward_mode<S: Real>(
    clip: &VideoClip<S>,
    p: &StemParams<S>,
    mode: ForwardMode,
) -> Result<Tensor<S>> {
    p.validate()?;
    if clip.height() % 4 != 0 || clip.width() % 4 != 0 {
        return Err(Error::bad(
            "fusion_stem",
            format!("frame {}x{} not divisible by 4", clip.height(), clip.width()),
        ));
    }
    let diffs = difference_frames(clip)?;
    let x_diff = stem1_tower(&diffs, &p.stem1_diff, &p.stem1_norm, mode)?;
    let x_origin = stem1_tower(clip.frames(), &p.stem1_raw, &p.stem1_norm, mode)?;

    let fused = x_origin.scale(p.alpha).add(&x_diff.scale(p.beta))?;
    let term_a = stem2_tower(&x_origin, &p.stem2, &p.stem2_norm, mode)?.scale(p.alpha);
    let term_b = stem2_tower(&fused, &p.stem2, &p.stem2_norm, mode)?.scale(p.beta);
    term_a.add(&term_b)
}

#[derive(Debug, Clone)]
pub struct PatchEmbedParams<S> {
    pub proj: ConvParams<S>,
}

impl<S: Real> PatchEmbedParams<S> {
    pub fn init(channels: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let sh = [channels, channels, 1, 4, 4];
        let (fi, fo) = conv_fans(&sh);
        Ok(PatchEmbedParams {
            proj: ConvParams::new(
                xavier_uniform(&sh, fi, fo, rng)?,
                vec![S::zero(); channels],
                [1, 4, 4],
                [0, 0, 0],
            ),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let sh = self.proj.weight.shape();
        if sh[2..] != [1, 4, 4] || self.proj.stride != [1, 4, 4] || self.proj.padding != [0, 0, 0] {
            return Err(Error::bad("patch_embed", "projection must be kernel (1,4,4), stride (1,4,4), no pad"));
        }
        Ok(())
    }
}

/// Non-overlapping 4x4 spatial tokenization; temporal extent is untouched and
/// nothing positional is added.
pub fn patch_embed<S: Real>(x: &Tensor<S>, p: &PatchEmbedParams<S>) -> Result<Tensor<S>> {
    p.validate()?;
    if x.shape()[2] % 4 != 0 || x.shape()[3] % 4 != 0 {
        return Err(Error::bad(
            "patch_embed",
            format!("spatial extents {}x{} not divisible by 4", x.shape()[2], x.shape()[3]),
        ));
    }
    conv3d(x, &p.proj)
}
