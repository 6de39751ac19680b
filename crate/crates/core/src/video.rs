//! Video clips, pulse waveforms, synthetic scene generation, cropping, and
//! the two training-time augmentations (temporal resampling and horizontal
//! flips).
//!
//! The synthetic generator is the test bed for the whole pipeline: it renders
//! an elliptical "skin" patch whose color pulses with a known waveform, so
//! downstream HR estimates can be checked against ground truth.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Error;
use crate::tensor::Tensor;
use crate::{Real, Result};

/// RGB video volume, planar `[3, T, H, W]`, values in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip<S> {
    frames: Tensor<S>,
    fps: f64,
}

impl<S: Real> VideoClip<S> {
    /// Clips shorter than 5 frames are rejected here, which covers every
    /// construction path including file loads: the stem's ±2-frame
    /// neighborhood needs them.
    pub fn new(frames: Tensor<S>, fps: f64) -> Result<Self> {
        if frames.order() != 4 || frames.shape()[0] != 3 {
            return Err(Error::bad(
                "video_clip",
                format!("frames shape {:?}, want [3,T,H,W]", frames.shape()),
            ));
        }
        if frames.shape()[1] < 5 {
            return Err(Error::bad("video_clip", format!("{} frames, need at least 5", frames.shape()[1])));
        }
        if !(fps > 0.0) || !fps.is_finite() {
            return Err(Error::bad("video_clip", format!("fps {fps}")));
        }
        Ok(VideoClip { frames, fps })
    }

    pub fn frames(&self) -> &Tensor<S> {
        &self.frames
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn len_t(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[3]
    }

    /// Spatial mean of one channel per frame.
    pub fn mean_trace(&self, channel: usize) -> Result<Vec<S>> {
        if channel >= 3 {
            return Err(Error::bad("mean_trace", format!("channel {channel}")));
        }
        let (t, h, w) = (self.len_t(), self.height(), self.width());
        let px = S::of((h * w) as f64);
        let data = self.frames.data();
        let plane = h * w;
        let chan = &data[channel * t * plane..(channel + 1) * t * plane];
        Ok((0..t)
            .map(|f| chan[f * plane..(f + 1) * plane].iter().copied().sum::<S>() / px)
            .collect())
    }

    /// Per-frame spatial means of all three channels: `[r, g, b]` traces.
    pub fn rgb_traces(&self) -> Result<[Vec<S>; 3]> {
        Ok([self.mean_trace(0)?, self.mean_trace(1)?, self.mean_trace(2)?])
    }
}

/// Pulse waveform sampled at `fs` Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct BvpSignal<S> {
    samples: Vec<S>,
    fs: f64,
}

impl<S: Real> BvpSignal<S> {
    pub fn new(samples: Vec<S>, fs: f64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::bad("bvp_signal", format!("{} samples, need at least 2", samples.len())));
        }
        if !(fs > 0.0) || !fs.is_finite() {
            return Err(Error::bad("bvp_signal", format!("fs {fs}")));
        }
        Ok(BvpSignal { samples, fs })
    }

    pub fn samples(&self) -> &[S] {
        &self.samples
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Heart-rate course over a clip: constant or a linear drift start→end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HrTrajectory {
    Constant(f64),
    Linear { start_bpm: f64, end_bpm: f64 },
}

impl HrTrajectory {
    fn bpm_at(&self, frac: f64) -> f64 {
        match *self {
            HrTrajectory::Constant(b) => b,
            HrTrajectory::Linear { start_bpm, end_bpm } => start_bpm + (end_bpm - start_bpm) * frac,
        }
    }

    fn bounds(&self) -> (f64, f64) {
        match *self {
            HrTrajectory::Constant(b) => (b, b),
            HrTrajectory::Linear { start_bpm, end_bpm } => (start_bpm.min(end_bpm), start_bpm.max(end_bpm)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSceneSpec {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub fps: f64,
    pub hr: HrTrajectory,
    pub pulse_amplitude: f64,
    pub channel_weights: [f64; 3],
    pub noise_sigma: f64,
    pub motion_amplitude_px: f64,
    pub seed: u64,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        SyntheticSceneSpec {
            t: 160,
            h: 72,
            w: 72,
            fps: 30.0,
            hr: HrTrajectory::Constant(75.0),
            pulse_amplitude: 3.0,
            channel_weights: [0.4, 1.0, 0.6],
            noise_sigma: 1.0,
            motion_amplitude_px: 0.0,
            seed: 7,
        }
    }
}

const SKIN_BASE: [f64; 3] = [152.0, 108.0, 94.0];
const BACKGROUND: [f64; 3] = [40.0, 42.0, 46.0];
const MOTION_HZ: f64 = 0.25;

fn validate_scene(spec: &SyntheticSceneSpec) -> Result<()> {
    let (lo, hi) = spec.hr.bounds();
    if !(40.0..=180.0).contains(&lo) || !(40.0..=180.0).contains(&hi) {
        return Err(Error::bad("synthetic_scene", format!("hr range {lo}..{hi} bpm outside 40..180")));
    }
    if spec.pulse_amplitude < 0.0 || spec.noise_sigma < 0.0 || spec.motion_amplitude_px < 0.0 {
        return Err(Error::bad("synthetic_scene", "amplitudes must be non-negative"));
    }
    if spec.t < 5 || spec.h < 8 || spec.w < 8 {
        return Err(Error::bad("synthetic_scene", format!("scene {}x{}x{} too small", spec.t, spec.h, spec.w)));
    }
    if !(spec.fps > 0.0) {
        return Err(Error::bad("synthetic_scene", format!("fps {}", spec.fps)));
    }
    Ok(())
}

/// Renders the scene and returns the clip plus the noise-free ground-truth
/// waveform `sin(phase) + 0.3 sin(2*phase + phi)`, where the phase integrates
/// the (possibly drifting) heart-rate trajectory and `phi` is drawn once from
/// the seeded stream.
pub fn generate_synthetic_clip<S: Real>(spec: &SyntheticSceneSpec) -> Result<(VideoClip<S>, BvpSignal<S>)> {
    use rand::SeedableRng;
    validate_scene(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let normal = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("sigma validated");

    let (t_len, h, w) = (spec.t, spec.h, spec.w);
    let mut phase = vec![0.0f64; t_len];
    for i in 1..t_len {
        let frac = i as f64 / (t_len - 1).max(1) as f64;
        let f_hz = spec.hr.bpm_at(frac) / 60.0;
        phase[i] = phase[i - 1] + std::f64::consts::TAU * f_hz / spec.fps;
    }
    let bvp: Vec<f64> = phase.iter().map(|&p| p.sin() + 0.3 * (2.0 * p + phi).sin()).collect();

    let (cy, ry) = (h as f64 / 2.0, h as f64 * 0.32);
    let rx = w as f64 * 0.32;
    let mut frames = Tensor::zeros(&[3, t_len, h, w])?;
    let plane = h * w;
    let tlen_plane = t_len * plane;
    {
        let data = frames.data_mut();
        for f in 0..t_len {
            let tsec = f as f64 / spec.fps;
            let cx = w as f64 / 2.0
                + spec.motion_amplitude_px * (std::f64::consts::TAU * MOTION_HZ * tsec).sin();
            for y in 0..h {
                for x in 0..w {
                    let dy = (y as f64 + 0.5 - cy) / ry;
                    let dx = (x as f64 + 0.5 - cx) / rx;
                    let skin = dy * dy + dx * dx <= 1.0;
                    for c in 0..3 {
                        let v = if skin {
                            let noise =
                                if spec.noise_sigma > 0.0 { normal.sample(&mut rng) } else { 0.0 };
                            SKIN_BASE[c]
                                + spec.pulse_amplitude * bvp[f] * spec.channel_weights[c]
                                + noise
                        } else {
                            BACKGROUND[c]
                        };
                        data[c * tlen_plane + f * plane + y * w + x] = S::of(v.clamp(0.0, 255.0));
                    }
                }
            }
        }
    }
    let clip = VideoClip::new(frames, spec.fps)?;
    let bvp = BvpSignal::new(bvp.into_iter().map(S::of).collect(), spec.fps)?;
    Ok((clip, bvp))
}

/// Axis-aligned crop box in pixel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub fn full(clip_h: usize, clip_w: usize) -> Self {
        Rect { x: 0.0, y: 0.0, w: clip_w as f64, h: clip_h as f64 }
    }
}

/// Applies the same box to every frame and bilinearly resizes to
/// `out_hw`. Sample positions use half-pixel centers, so a full-frame box at
/// the native size is the identity.
pub fn crop_window<S: Real>(clip: &VideoClip<S>, rect: Rect, out_hw: (usize, usize)) -> Result<VideoClip<S>> {
    let (h, w) = (clip.height() as f64, clip.width() as f64);
    if rect.w <= 0.0 || rect.h <= 0.0 || rect.x < 0.0 || rect.y < 0.0 || rect.x + rect.w > w || rect.y + rect.h > h
    {
        return Err(Error::bad(
            "crop_window",
            format!("box ({},{},{},{}) outside {}x{} frame", rect.x, rect.y, rect.w, rect.h, h, w),
        ));
    }
    let (out_h, out_w) = out_hw;
    if out_h == 0 || out_w == 0 {
        return Err(Error::bad("crop_window", "empty output size"));
    }
    let t_len = clip.len_t();
    let (in_h, in_w) = (clip.height(), clip.width());
    let sy = rect.h / out_h as f64;
    let sx = rect.w / out_w as f64;
    let mut out = Tensor::zeros(&[3, t_len, out_h, out_w])?;
    let src = clip.frames().data();
    let (splane, stchan) = (in_h * in_w, t_len * in_h * in_w);
    let dst = out.data_mut();
    let mut o = 0usize;
    for c in 0..3 {
        for f in 0..t_len {
            let base = c * stchan + f * splane;
            for oy in 0..out_h {
                let fy = rect.y + (oy as f64 + 0.5) * sy - 0.5;
                let y0 = fy.floor().clamp(0.0, (in_h - 1) as f64) as usize;
                let y1 = (y0 + 1).min(in_h - 1);
                let wy = (fy - y0 as f64).clamp(0.0, 1.0);
                for ox in 0..out_w {
                    let fx = rect.x + (ox as f64 + 0.5) * sx - 0.5;
                    let x0 = fx.floor().clamp(0.0, (in_w - 1) as f64) as usize;
                    let x1 = (x0 + 1).min(in_w - 1);
                    let wx = (fx - x0 as f64).clamp(0.0, 1.0);
                    let v00 = src[base + y0 * in_w + x0].f64();
                    let v01 = src[base + y0 * in_w + x1].f64();
                    let v10 = src[base + y1 * in_w + x0].f64();
                    let v11 = src[base + y1 * in_w + x1].f64();
                    let top = v00 + (v01 - v00) * wx;
                    let bot = v10 + (v11 - v10) * wx;
                    dst[o] = S::of(top + (bot - top) * wy);
                    o += 1;
                }
            }
        }
    }
    VideoClip::new(out, clip.fps())
}

const DOWNSAMPLE_FACTORS: &[usize] = &[2];
const UPSAMPLE_FACTORS: &[usize] = &[2];

/// HR-balancing resample: clips labeled above 90 bpm are temporally
/// downsampled, below 75 bpm upsampled (linear interpolation), both with the
/// same factor applied to frames and waveform. Rate metadata is kept, so the
/// pair is effectively relabeled at the new apparent rate.
pub fn augment_temporal_resample<S: Real>(
    clip: &VideoClip<S>,
    bvp: &BvpSignal<S>,
    gt_hr_bpm: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(VideoClip<S>, BvpSignal<S>)> {
    if gt_hr_bpm > 90.0 {
        let factor = DOWNSAMPLE_FACTORS[rng.gen_range(0..DOWNSAMPLE_FACTORS.len())];
        let frames = take_every(clip.frames(), factor)?;
        let samples: Vec<S> = bvp.samples().iter().copied().step_by(factor).collect();
        Ok((VideoClip::new(frames, clip.fps())?, BvpSignal::new(samples, bvp.fs())?))
    } else if gt_hr_bpm < 75.0 {
        let factor = UPSAMPLE_FACTORS[rng.gen_range(0..UPSAMPLE_FACTORS.len())];
        let frames = lerp_expand(clip.frames(), factor)?;
        let samples = lerp_expand_vec(bvp.samples(), factor);
        Ok((VideoClip::new(frames, clip.fps())?, BvpSignal::new(samples, bvp.fs())?))
    } else {
        Ok((clip.clone(), bvp.clone()))
    }
}

fn take_every<S: Real>(frames: &Tensor<S>, factor: usize) -> Result<Tensor<S>> {
    let [c, t, h, w] = [frames.shape()[0], frames.shape()[1], frames.shape()[2], frames.shape()[3]];
    let t_out = (t + factor - 1) / factor;
    let mut out = Tensor::zeros(&[c, t_out, h, w])?;
    let plane = h * w;
    let src = frames.data();
    let dst = out.data_mut();
    for ch in 0..c {
        for (fo, fi) in (0..t).step_by(factor).enumerate() {
            let s = ch * t * plane + fi * plane;
            let d = ch * t_out * plane + fo * plane;
            dst[d..d + plane].copy_from_slice(&src[s..s + plane]);
        }
    }
    Ok(out)
}

/// Linear interpolation to length `factor*(T-1)+1`; original samples are kept
/// at stride `factor`.
fn lerp_expand<S: Real>(frames: &Tensor<S>, factor: usize) -> Result<Tensor<S>> {
    let [c, t, h, w] = [frames.shape()[0], frames.shape()[1], frames.shape()[2], frames.shape()[3]];
    let t_out = factor * (t - 1) + 1;
    let mut out = Tensor::zeros(&[c, t_out, h, w])?;
    let plane = h * w;
    let src = frames.data();
    let dst = out.data_mut();
    for ch in 0..c {
        for fo in 0..t_out {
            let pos = fo as f64 / factor as f64;
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(t - 1);
            let frac = S::of(pos - i0 as f64);
            let s0 = ch * t * plane + i0 * plane;
            let s1 = ch * t * plane + i1 * plane;
            let d = ch * t_out * plane + fo * plane;
            for p in 0..plane {
                dst[d + p] = src[s0 + p] + (src[s1 + p] - src[s0 + p]) * frac;
            }
        }
    }
    Ok(out)
}

fn lerp_expand_vec<S: Real>(v: &[S], factor: usize) -> Vec<S> {
    let t_out = factor * (v.len() - 1) + 1;
    (0..t_out)
        .map(|i| {
            let pos = i as f64 / factor as f64;
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(v.len() - 1);
            let frac = S::of(pos - i0 as f64);
            v[i0] + (v[i1] - v[i0]) * frac
        })
        .collect()
}

/// Reverses the width axis of every frame.
pub fn hflip<S: Real>(clip: &VideoClip<S>) -> VideoClip<S> {
    let frames = clip.frames();
    let [c, t, h, w] = [frames.shape()[0], frames.shape()[1], frames.shape()[2], frames.shape()[3]];
    let mut out = frames.clone();
    let data = out.data_mut();
    for row in 0..c * t * h {
        data[row * w..(row + 1) * w].reverse();
    }
    VideoClip { frames: out, fps: clip.fps() }
}

/// Flips with probability 1/2 from the caller's stream.
pub fn augment_hflip<S: Real>(clip: &VideoClip<S>, rng: &mut ChaCha8Rng) -> VideoClip<S> {
    if rng.gen_bool(0.5) {
        hflip(clip)
    } else {
        clip.clone()
    }
}
