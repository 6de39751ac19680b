//! Neural primitives over [`Tensor`]: direct-loop convolution, training-mode
//! batch normalization, pooling, softmax, linear maps, activations, and
//! seeded weight initialization.
//!
//! Convolution is cross-correlation (no kernel flip) with zero padding.
//! All functions are pure; determinism comes from fixed loop order.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::tensor::Tensor;
use crate::{Real, Result};

/// Convolution weights plus geometry. `weight` is
/// `[out_ch, in_ch/groups, kT, kH, kW]`; `kT = 1` degenerates to a per-frame
/// 2-D convolution. `theta` is carried for temporal-difference projections
/// (see the attention module); plain `conv3d` ignores it.
#[derive(Debug, Clone)]
pub struct ConvParams<S> {
    pub weight: Tensor<S>,
    pub bias: Vec<S>,
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub theta: S,
    pub groups: usize,
}

impl<S: Real> ConvParams<S> {
    pub fn new(weight: Tensor<S>, bias: Vec<S>, stride: [usize; 3], padding: [usize; 3]) -> Self {
        ConvParams { weight, bias, stride, padding, theta: S::zero(), groups: 1 }
    }

    pub fn with_theta(mut self, theta: S) -> Self {
        self.theta = theta;
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }
}

/// Per-channel affine normalization parameters.
#[derive(Debug, Clone)]
pub struct NormParams<S> {
    pub gamma: Vec<S>,
    pub beta: Vec<S>,
    pub epsilon: S,
}

impl<S: Real> NormParams<S> {
    pub fn identity(channels: usize) -> Self {
        NormParams { gamma: vec![S::one(); channels], beta: vec![S::zero(); channels], epsilon: S::of(1e-5) }
    }
}

/// `LinearProbe` skips normalization and activation layers, leaving only the
/// linear maps. Numeric tests use it to check homogeneity and identity wiring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    Standard,
    LinearProbe,
}

fn conv_out_extent(op: &'static str, input: usize, k: usize, pad: usize, stride: usize) -> Result<usize> {
    let padded = input + 2 * pad;
    if k == 0 || stride == 0 {
        return Err(Error::bad(op, "zero kernel or stride"));
    }
    if padded < k {
        return Err(Error::bad(op, format!("kernel {k} exceeds padded extent {padded}")));
    }
    if padded % stride != 0 {
        return Err(Error::bad(op, format!("padded extent {padded} not divisible by stride {stride}")));
    }
    Ok((padded - k) / stride + 1)
}

/// Direct 3-D cross-correlation over a `[C_in, T, H, W]` volume.
pub fn conv3d<S: Real>(x: &Tensor<S>, p: &ConvParams<S>) -> Result<Tensor<S>> {
    if x.order() != 4 {
        return Err(Error::bad("conv3d", format!("input order {} (want [C,T,H,W])", x.order())));
    }
    if p.weight.order() != 5 {
        return Err(Error::bad("conv3d", format!("weight order {} (want 5)", p.weight.order())));
    }
    let [c_in, t_in, h_in, w_in] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let ws = p.weight.shape();
    let (c_out, in_per_group, kt, kh, kw) = (ws[0], ws[1], ws[2], ws[3], ws[4]);
    if p.groups == 0 || c_out % p.groups != 0 {
        return Err(Error::bad("conv3d", format!("groups {} does not divide out channels {c_out}", p.groups)));
    }
    if in_per_group * p.groups != c_in {
        return Err(Error::ShapeMismatch {
            op: "conv3d",
            expected: vec![c_out, c_in / p.groups.max(1), kt, kh, kw],
            got: ws.to_vec(),
        });
    }
    if p.bias.len() != c_out {
        return Err(Error::bad("conv3d", format!("bias length {} for {c_out} out channels", p.bias.len())));
    }
    let t_out = conv_out_extent("conv3d", t_in, kt, p.padding[0], p.stride[0])?;
    let h_out = conv_out_extent("conv3d", h_in, kh, p.padding[1], p.stride[1])?;
    let w_out = conv_out_extent("conv3d", w_in, kw, p.padding[2], p.stride[2])?;

    let mut out = Tensor::zeros(&[c_out, t_out, h_out, w_out])?;
    let out_per_group = c_out / p.groups;
    let xd = x.data();
    let wd = p.weight.data();
    let od = out.data_mut();
    let (xs_c, xs_t, xs_h) = (t_in * h_in * w_in, h_in * w_in, w_in);
    let (ws_o, ws_i, ws_t, ws_h) = (in_per_group * kt * kh * kw, kt * kh * kw, kh * kw, kw);

    let mut o = 0usize;
    for oc in 0..c_out {
        let ic0 = (oc / out_per_group) * in_per_group;
        for ot in 0..t_out {
            let t0 = (ot * p.stride[0]) as isize - p.padding[0] as isize;
            for oh in 0..h_out {
                let h0 = (oh * p.stride[1]) as isize - p.padding[1] as isize;
                for ow in 0..w_out {
                    let w0 = (ow * p.stride[2]) as isize - p.padding[2] as isize;
                    let mut acc = p.bias[oc];
                    for ic in 0..in_per_group {
                        let xoff_c = (ic0 + ic) * xs_c;
                        let woff_c = oc * ws_o + ic * ws_i;
                        for dt in 0..kt {
                            let t = t0 + dt as isize;
                            if t < 0 || t >= t_in as isize {
                                continue;
                            }
                            for dh in 0..kh {
                                let h = h0 + dh as isize;
                                if h < 0 || h >= h_in as isize {
                                    continue;
                                }
                                let xrow = xoff_c + t as usize * xs_t + h as usize * xs_h;
                                let wrow = woff_c + dt * ws_t + dh * ws_h;
                                for dw in 0..kw {
                                    let w = w0 + dw as isize;
                                    if w < 0 || w >= w_in as isize {
                                        continue;
                                    }
                                    acc = acc + xd[xrow + w as usize] * wd[wrow + dw];
                                }
                            }
                        }
                    }
                    od[o] = acc;
                    o += 1;
                }
            }
        }
    }
    Ok(out)
}

/// Training-mode batch normalization: statistics are taken over all
/// non-channel axes of the current input (channel axis is axis 0), so the
/// output is a deterministic function of the input alone.
pub fn batch_norm<S: Real>(x: &Tensor<S>, p: &NormParams<S>) -> Result<Tensor<S>> {
    let c = x.shape()[0];
    if p.gamma.len() != c || p.beta.len() != c {
        return Err(Error::bad(
            "batch_norm",
            format!("{} gamma / {} beta values for {c} channels", p.gamma.len(), p.beta.len()),
        ));
    }
    if p.epsilon <= S::zero() {
        return Err(Error::bad("batch_norm", "epsilon must be positive"));
    }
    let inner: usize = x.shape()[1..].iter().product();
    let n = S::of(inner as f64);
    let mut out = x.clone();
    let data = out.data_mut();
    for ch in 0..c {
        let slice = &mut data[ch * inner..(ch + 1) * inner];
        let mean = slice.iter().copied().sum::<S>() / n;
        let var = slice.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
        let scale = p.gamma[ch] / (var + p.epsilon).sqrt();
        for v in slice.iter_mut() {
            *v = (*v - mean) * scale + p.beta[ch];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

/// Windowed pooling over every axis. Max windows must lie fully inside the
/// input (trailing partial windows are dropped, matching floor-mode extents);
/// avg windows may shrink at the trailing edge, dividing by the actual tap
/// count, so every input cell is represented.
pub fn pool<S: Real>(x: &Tensor<S>, kind: PoolKind, kernel: &[usize], stride: &[usize]) -> Result<Tensor<S>> {
    let nd = x.order();
    if kernel.len() != nd || stride.len() != nd {
        return Err(Error::bad(
            "pool",
            format!("kernel/stride rank {}/{} for order-{nd} input", kernel.len(), stride.len()),
        ));
    }
    let mut out_shape = Vec::with_capacity(nd);
    for ax in 0..nd {
        let (n, k, s) = (x.shape()[ax], kernel[ax], stride[ax]);
        if k == 0 || s == 0 {
            return Err(Error::bad("pool", "zero kernel or stride"));
        }
        if k > n {
            return Err(Error::bad("pool", format!("kernel {k} larger than input extent {n} on axis {ax}")));
        }
        let ext = match kind {
            PoolKind::Max => (n - k) / s + 1,
            PoolKind::Avg => (n - k + s - 1) / s + 1,
        };
        out_shape.push(ext);
    }

    let mut out = Tensor::zeros(&out_shape)?;
    let in_strides = x.strides();
    let xd = x.data();
    let mut window = vec![0usize; nd];
    let mut widx = vec![0usize; nd];
    let od = out.data_mut();
    let mut oidx = vec![0usize; nd];
    for o in 0..od.len() {
        // window extent on each axis, clipped to the input
        let mut taps = 1usize;
        for ax in 0..nd {
            let start = oidx[ax] * stride[ax];
            window[ax] = kernel[ax].min(x.shape()[ax] - start);
            taps *= window[ax];
        }
        let mut acc = match kind {
            PoolKind::Max => S::neg_infinity(),
            PoolKind::Avg => S::zero(),
        };
        widx.iter_mut().for_each(|v| *v = 0);
        for _ in 0..taps {
            let mut off = 0usize;
            for ax in 0..nd {
                off += (oidx[ax] * stride[ax] + widx[ax]) * in_strides[ax];
            }
            let v = xd[off];
            acc = match kind {
                PoolKind::Max => acc.max(v),
                PoolKind::Avg => acc + v,
            };
            for ax in (0..nd).rev() {
                widx[ax] += 1;
                if widx[ax] < window[ax] {
                    break;
                }
                widx[ax] = 0;
            }
        }
        od[o] = match kind {
            PoolKind::Max => acc,
            PoolKind::Avg => acc / S::of(taps as f64),
        };
        for ax in (0..nd).rev() {
            oidx[ax] += 1;
            if oidx[ax] < out_shape[ax] {
                break;
            }
            oidx[ax] = 0;
        }
    }
    Ok(out)
}

/// Max-subtracted softmax along `axis`; each lane sums to 1.
pub fn softmax<S: Real>(x: &Tensor<S>, axis: usize) -> Result<Tensor<S>> {
    let nd = x.order();
    if axis >= nd {
        return Err(Error::bad("softmax", format!("axis {axis} out of range for order {nd}")));
    }
    if x.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::degenerate("softmax", "non-finite input"));
    }
    let lane = x.shape()[axis];
    let inner: usize = x.shape()[axis + 1..].iter().product();
    let outer: usize = x.shape()[..axis].iter().product();
    let mut out = x.clone();
    let data = out.data_mut();
    for ou in 0..outer {
        for i in 0..inner {
            let base = ou * lane * inner + i;
            let mut m = S::neg_infinity();
            for l in 0..lane {
                m = m.max(data[base + l * inner]);
            }
            let mut sum = S::zero();
            for l in 0..lane {
                let e = (data[base + l * inner] - m).exp();
                data[base + l * inner] = e;
                sum = sum + e;
            }
            for l in 0..lane {
                data[base + l * inner] = data[base + l * inner] / sum;
            }
        }
    }
    Ok(out)
}

pub fn softmax_slice<S: Real>(row: &mut [S]) {
    let m = row.iter().fold(S::neg_infinity(), |a, &b| a.max(b));
    let mut sum = S::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

pub fn relu<S: Real>(x: &Tensor<S>) -> Tensor<S> {
    x.map(|v| v.max(S::zero()))
}

/// Tanh-approximation GELU.
pub fn gelu_scalar<S: Real>(v: S) -> S {
    let c = S::of(0.7978845608028654); // sqrt(2/pi)
    let half = S::of(0.5);
    let k = S::of(0.044715);
    half * v * (S::one() + (c * (v + k * v * v * v)).tanh())
}

pub fn gelu<S: Real>(x: &Tensor<S>) -> Tensor<S> {
    x.map(gelu_scalar)
}

/// Dense affine map, `weight` is `[out, in]`.
#[derive(Debug, Clone)]
pub struct LinearParams<S> {
    pub weight: Tensor<S>,
    pub bias: Vec<S>,
}

impl<S: Real> LinearParams<S> {
    pub fn apply(&self, input: &[S]) -> Result<Vec<S>> {
        let (out_n, in_n) = (self.weight.shape()[0], self.weight.shape()[1]);
        if input.len() != in_n {
            return Err(Error::bad("linear", format!("input length {} for weight [{out_n},{in_n}]", input.len())));
        }
        if self.bias.len() != out_n {
            return Err(Error::bad("linear", format!("bias length {} for {out_n} outputs", self.bias.len())));
        }
        let wd = self.weight.data();
        let mut out = Vec::with_capacity(out_n);
        for o in 0..out_n {
            let row = &wd[o * in_n..(o + 1) * in_n];
            let mut acc = self.bias[o];
            for (w, v) in row.iter().zip(input) {
                acc = acc + *w * *v;
            }
            out.push(acc);
        }
        Ok(out)
    }
}

/// Uniform init in `[-a, a]`, `a = sqrt(6/(fan_in+fan_out))`. Samples are
/// drawn in f64 then converted, so a seed fixes the weights for every scalar
/// type.
pub fn xavier_uniform<S: Real>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor<S>> {
    if fan_in + fan_out == 0 {
        return Err(Error::bad("xavier_uniform", "zero fans"));
    }
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<S> = (0..n).map(|_| S::of(rng.gen_range(-a..=a))).collect();
    Tensor::from_vec(shape, data)
}

/// Fan sizes for a conv weight `[out, in/groups, kT, kH, kW]`.
pub fn conv_fans(weight_shape: &[usize]) -> (usize, usize) {
    let kvol: usize = weight_shape[2..].iter().product();
    (weight_shape[1] * kvol, weight_shape[0] * kvol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::indices;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Reference convolution written index-by-index against the definition,
    /// independent of the production loop ordering and offset math.
    fn conv3d_oracle(x: &Tensor<f64>, p: &ConvParams<f64>) -> Tensor<f64> {
        let ws = p.weight.shape();
        let (c_out, in_pg, kt, kh, kw) = (ws[0], ws[1], ws[2], ws[3], ws[4]);
        let out_pg = c_out / p.groups;
        let mut out_shape = vec![c_out];
        for ax in 0..3 {
            let n = x.shape()[ax + 1] + 2 * p.padding[ax];
            out_shape.push((n - ws[ax + 2]) / p.stride[ax] + 1);
        }
        Tensor::from_fn(&out_shape, |o| {
            let mut acc = p.bias[o[0]];
            for idx in indices(&[in_pg, kt, kh, kw]) {
                let ic = (o[0] / out_pg) * in_pg + idx[0];
                let mut src = [0isize; 3];
                let mut inside = true;
                for ax in 0..3 {
                    src[ax] = (o[ax + 1] * p.stride[ax] + idx[ax + 1]) as isize - p.padding[ax] as isize;
                    inside &= src[ax] >= 0 && src[ax] < x.shape()[ax + 1] as isize;
                }
                if inside {
                    acc += p.weight.at(&[o[0], idx[0], idx[1], idx[2], idx[3]])
                        * x.at(&[ic, src[0] as usize, src[1] as usize, src[2] as usize]);
                }
            }
            acc
        })
        .unwrap()
    }

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn conv3d_identity_kernel_reproduces_input() {
        let mut r = rng(1);
        let x = random_tensor(&[3, 4, 5, 5], &mut r);
        let w = Tensor::from_fn(&[3, 3, 1, 1, 1], |i| if i[0] == i[1] { 1.0 } else { 0.0 }).unwrap();
        let p = ConvParams::new(w, vec![0.0; 3], [1, 1, 1], [0, 0, 0]);
        let y = conv3d(&x, &p).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv3d_ones_kernel_counts_interior_taps() {
        let x = Tensor::full(&[1, 5, 5, 5], 1.0).unwrap();
        let w = Tensor::full(&[1, 1, 3, 3, 3], 1.0).unwrap();
        let p = ConvParams::new(w, vec![0.0], [1, 1, 1], [1, 1, 1]);
        let y = conv3d(&x, &p).unwrap();
        assert_eq!(y.at(&[0, 2, 2, 2]), 27.0);
        // corner sees only the 2x2x2 in-bounds taps
        assert_eq!(y.at(&[0, 0, 0, 0]), 8.0);
    }

    #[test]
    fn conv3d_matches_loop_oracle_on_random_instances() {
        let mut r = rng(2);
        for case in 0..30 {
            let x = random_tensor(&[2, 4, 6, 6], &mut r);
            let w = random_tensor(&[3, 2, 3, 3, 3], &mut r);
            let p = ConvParams::new(w, (0..3).map(|_| r.gen_range(-1.0..1.0)).collect(), [1, 1, 1], [1, 1, 1]);
            let got = conv3d(&x, &p).unwrap();
            let want = conv3d_oracle(&x, &p);
            let diff = got.max_abs_diff(&want).unwrap();
            assert!(diff < 1e-10, "case {case}: max diff {diff}");
        }
    }

    #[test]
    fn conv3d_strided_and_grouped_match_oracle() {
        let mut r = rng(3);
        // stride-2 spatial, kT=1 per-frame conv; padded 8+4 = 12 halves cleanly
        let x = random_tensor(&[4, 3, 8, 8], &mut r);
        let w = random_tensor(&[6, 4, 1, 5, 5], &mut r);
        let p = ConvParams::new(w, vec![0.1; 6], [1, 2, 2], [0, 2, 2]);
        assert!(conv3d(&x, &p).unwrap().max_abs_diff(&conv3d_oracle(&x, &p)).unwrap() < 1e-10);
        // depthwise
        let w = random_tensor(&[4, 1, 3, 3, 3], &mut r);
        let p = ConvParams::new(w, vec![0.0; 4], [1, 1, 1], [1, 1, 1]).with_groups(4);
        assert!(conv3d(&x, &p).unwrap().max_abs_diff(&conv3d_oracle(&x, &p)).unwrap() < 1e-10);
    }

    #[test]
    fn conv3d_rejects_channel_mismatch_and_bad_stride() {
        let x = Tensor::<f64>::zeros(&[3, 4, 4, 4]).unwrap();
        let w = Tensor::<f64>::zeros(&[2, 2, 1, 1, 1]).unwrap();
        let p = ConvParams::new(w, vec![0.0; 2], [1, 1, 1], [0, 0, 0]);
        assert!(matches!(conv3d(&x, &p), Err(Error::ShapeMismatch { .. })));

        let w = Tensor::<f64>::zeros(&[2, 3, 1, 2, 2]).unwrap();
        let p = ConvParams::new(w, vec![0.0; 2], [1, 3, 3], [0, 0, 0]);
        assert!(matches!(conv3d(&x, &p), Err(Error::BadArgument { .. })));
    }

    #[test]
    fn batch_norm_normalizes_each_channel() {
        let mut r = rng(4);
        let x = random_tensor(&[3, 4, 4, 4], &mut r).map(|v| v * 3.0 + 0.7);
        let y = batch_norm(&x, &NormParams::identity(3)).unwrap();
        let inner = 64;
        for ch in 0..3 {
            let s = &y.data()[ch * inner..(ch + 1) * inner];
            let mean: f64 = s.iter().sum::<f64>() / inner as f64;
            let var: f64 = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / inner as f64;
            assert!(mean.abs() < 1e-8, "channel {ch} mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "channel {ch} var {var}");
        }
    }

    #[test]
    fn batch_norm_constant_channel_maps_to_beta() {
        let x = Tensor::full(&[2, 3, 3, 3], 42.0).unwrap();
        let p = NormParams { gamma: vec![1.0; 2], beta: vec![5.0; 2], epsilon: 1e-5 };
        let y = batch_norm(&x, &p).unwrap();
        assert!(y.data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn batch_norm_matches_formula_oracle() {
        let mut r = rng(5);
        let x = random_tensor(&[2, 2, 3, 3], &mut r);
        let p = NormParams { gamma: vec![1.3, 0.4], beta: vec![-0.2, 2.0], epsilon: 1e-5 };
        let y = batch_norm(&x, &p).unwrap();
        let inner = 18;
        for ch in 0..2 {
            let s = &x.data()[ch * inner..(ch + 1) * inner];
            let mean: f64 = s.iter().sum::<f64>() / inner as f64;
            let var: f64 = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / inner as f64;
            for i in 0..inner {
                let want = p.gamma[ch] * (s[i] - mean) / (var + p.epsilon).sqrt() + p.beta[ch];
                let got = y.data()[ch * inner + i];
                assert!(rel_close(got, want, 1e-10));
            }
        }
    }

    #[test]
    fn max_pool_picks_window_maxima() {
        let x = Tensor::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = pool(&x, PoolKind::Max, &[2], &[2]).unwrap();
        assert_eq!(y.data(), &[2.0, 4.0]);
    }

    #[test]
    fn avg_pool_constant_is_exact() {
        let x = Tensor::full(&[1, 8, 8, 8], 3.25).unwrap();
        let y = pool(&x, PoolKind::Avg, &[1, 2, 2, 2], &[1, 2, 2, 2]).unwrap();
        assert_eq!(y.shape(), &[1, 4, 4, 4]);
        assert!(y.data().iter().all(|&v| v == 3.25));
    }

    #[test]
    fn avg_pool_matches_loop_oracle() {
        let mut r = rng(6);
        let x = random_tensor(&[1, 8, 8, 8], &mut r);
        let y = pool(&x, PoolKind::Avg, &[1, 2, 2, 2], &[1, 2, 2, 2]).unwrap();
        for idx in indices(y.shape()) {
            let mut want = 0.0;
            for d in indices(&[1, 2, 2, 2]) {
                want += x.at(&[idx[0], idx[1] * 2 + d[1], idx[2] * 2 + d[2], idx[3] * 2 + d[3]]);
            }
            assert!(rel_close(y.at(&idx), want / 8.0, 1e-12));
        }
    }

    #[test]
    fn avg_pool_ragged_tail_shrinks_window() {
        let x = Tensor::from_vec(&[5], vec![1.0, 2.0, 3.0, 4.0, 10.0]).unwrap();
        let y = pool(&x, PoolKind::Avg, &[2], &[2]).unwrap();
        assert_eq!(y.data(), &[1.5, 3.5, 10.0]);
        // max pool drops the trailing partial window instead
        let m = pool(&x, PoolKind::Max, &[2], &[2]).unwrap();
        assert_eq!(m.data(), &[2.0, 4.0]);
    }

    #[test]
    fn pool_rejects_oversized_kernel() {
        let x = Tensor::<f64>::zeros(&[4]).unwrap();
        assert!(pool(&x, PoolKind::Max, &[5], &[1]).is_err());
    }

    #[test]
    fn softmax_uniform_and_closed_form() {
        let x = Tensor::full(&[5], 2.0f64).unwrap();
        let y = softmax(&x, 0).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.2).abs() < 1e-15));

        let x = Tensor::from_vec(&[2], vec![0.0, 3f64.ln()]).unwrap();
        let y = softmax(&x, 0).unwrap();
        assert!((y.data()[0] - 0.25).abs() < 1e-12);
        assert!((y.data()[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let mut r = rng(7);
        let x = random_tensor(&[3, 4, 5], &mut r).map(|v| v * 50.0);
        let y = softmax(&x, 1).unwrap();
        for outer in 0..3 {
            for inner in 0..5 {
                let sum: f64 = (0..4).map(|l| y.at(&[outer, l, inner])).sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
        let shifted = softmax(&x.map(|v| v + 123.0), 1).unwrap();
        assert!(y.max_abs_diff(&shifted).unwrap() < 1e-12);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let x = Tensor::from_vec(&[2], vec![f64::INFINITY, 0.0]).unwrap();
        assert!(matches!(softmax(&x, 0), Err(Error::Degenerate { .. })));
    }

    #[test]
    fn xavier_bounds_and_determinism() {
        let a = (6.0_f64 / (100 + 50) as f64).sqrt();
        let t1: Tensor<f64> = xavier_uniform(&[10, 10], 100, 50, &mut rng(9)).unwrap();
        let t2: Tensor<f64> = xavier_uniform(&[10, 10], 100, 50, &mut rng(9)).unwrap();
        assert_eq!(t1, t2);
        assert!(t1.data().iter().all(|v| v.abs() <= a));
        assert!(t1.data().iter().any(|v| v.abs() > a * 0.5));
    }

    #[test]
    fn linear_applies_affine_map() {
        let p = LinearParams {
            weight: Tensor::from_vec(&[2, 3], vec![1.0, 0.0, -1.0, 0.5, 0.5, 0.5]).unwrap(),
            bias: vec![1.0, 0.0],
        };
        let y = p.apply(&[2.0, 4.0, 6.0]).unwrap();
        assert_eq!(y, vec![-3.0, 6.0]);
    }
}
