//! Waveform post-processing and evaluation: zero-phase Butterworth bandpass,
//! Welch spectral density, heart-rate estimation and agreement metrics, and
//! the classical POS/GREEN extractors used as reference pipelines.

use num_complex::Complex;

use crate::error::Error;
use crate::video::{BvpSignal, Rect, VideoClip};
use crate::{Real, Result, HR_BAND_HZ};

/// Bandpass description for the second-order Butterworth design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec {
    pub order: usize,
    pub band: [f64; 2],
    pub fs: f64,
}

impl FilterSpec {
    pub fn new(band: [f64; 2], fs: f64) -> Self {
        FilterSpec { order: 2, band, fs }
    }

    /// Conventional heart-rate passband, 45 to 150 bpm.
    pub fn default_hr(fs: f64) -> Self {
        Self::new([0.75, 2.5], fs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.order != 2 {
            return Err(Error::bad("filter_spec", format!("order {} unsupported, only 2", self.order)));
        }
        let [lo, hi] = self.band;
        if !(lo > 0.0 && hi > lo && hi < self.fs / 2.0) {
            return Err(Error::bad(
                "filter_spec",
                format!("band {lo}..{hi} Hz must satisfy 0 < lo < hi < fs/2 at fs {}", self.fs),
            ));
        }
        Ok(())
    }
}

/// Fourth-order digital transfer function, numerator and denominator taps in
/// powers of z^-1 with `a[0] == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterCoeffs<S> {
    pub b: [S; 5],
    pub a: [S; 5],
}

/// Butterworth bandpass coefficients: the analog two-pole prototype is
/// band-transformed around the prewarped edges and discretized bilinearly.
pub fn design_bandpass<S: Real>(spec: &FilterSpec) -> Result<FilterCoeffs<S>> {
    spec.validate()?;
    let fs = spec.fs;
    let wl = 2.0 * fs * (std::f64::consts::PI * spec.band[0] / fs).tan();
    let wh = 2.0 * fs * (std::f64::consts::PI * spec.band[1] / fs).tan();
    let w0sq = wl * wh;
    let bw = wh - wl;

    // prototype poles at 135 and 225 degrees; each one turns into a
    // quadratic s^2 - p*bw*s + w0^2 whose roots are the bandpass poles
    let proto = [
        Complex::new(-std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2),
        Complex::new(-std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2),
    ];
    let mut analog_poles = Vec::with_capacity(4);
    for p in proto {
        let half = p * bw * 0.5;
        let disc = (half * half - Complex::new(w0sq, 0.0)).sqrt();
        analog_poles.push(half + disc);
        analog_poles.push(half - disc);
    }

    // bilinear map q -> (K + q) / (K - q); the two analog zeros at the
    // origin land on z = 1 and the pair at infinity on z = -1
    let k = 2.0 * fs;
    let mut gain = Complex::new(bw * bw * k * k, 0.0);
    let mut zpoles = Vec::with_capacity(4);
    for q in analog_poles {
        gain /= Complex::new(k, 0.0) - q;
        zpoles.push((Complex::new(k, 0.0) + q) / (Complex::new(k, 0.0) - q));
    }

    // expand the denominator from its roots, descending powers of z
    let mut den = vec![Complex::new(1.0, 0.0)];
    for zp in zpoles {
        let mut next = vec![Complex::new(0.0, 0.0); den.len() + 1];
        for (i, &c) in den.iter().enumerate() {
            next[i] += c;
            next[i + 1] -= c * zp;
        }
        den = next;
    }

    let g = gain.re;
    let b = [g, 0.0, -2.0 * g, 0.0, g];
    let mut a = [0.0; 5];
    for i in 0..5 {
        a[i] = den[i].re;
    }
    Ok(FilterCoeffs { b: b.map(S::of), a: a.map(S::of) })
}

/// Direct-form II transposed filter pass with explicit initial state.
fn lfilter<S: Real>(c: &FilterCoeffs<S>, x: &[S], zi: &[S; 4]) -> Vec<S> {
    let (b, a) = (&c.b, &c.a);
    let mut z = *zi;
    let mut y = Vec::with_capacity(x.len());
    for &xi in x {
        let yi = b[0] * xi + z[0];
        z[0] = b[1] * xi - a[1] * yi + z[1];
        z[1] = b[2] * xi - a[2] * yi + z[2];
        z[2] = b[3] * xi - a[3] * yi + z[3];
        z[3] = b[4] * xi - a[4] * yi;
        y.push(yi);
    }
    y
}

/// Steady-state filter state for a unit step, so each pass starts settled.
fn step_state<S: Real>(c: &FilterCoeffs<S>) -> [S; 4] {
    let bsum = c.b.iter().copied().sum::<S>();
    let asum = c.a.iter().copied().sum::<S>();
    let dc = bsum / asum;
    let mut zi = [S::zero(); 4];
    for i in 0..4 {
        let mut acc = S::zero();
        for j in i + 1..5 {
            acc = acc + c.b[j] - c.a[j] * dc;
        }
        zi[i] = acc;
    }
    zi
}

const PAD_FACTOR: usize = 3;

/// Forward-backward application of the bandpass, zero phase overall. The
/// signal is extended by odd reflection on both ends before each pass.
pub fn butterworth_bandpass<S: Real>(x: &BvpSignal<S>, spec: &FilterSpec) -> Result<BvpSignal<S>> {
    if (x.fs() - spec.fs).abs() > 1e-9 {
        return Err(Error::bad("butterworth_bandpass", format!("signal at {} Hz, filter at {} Hz", x.fs(), spec.fs)));
    }
    let coeffs = design_bandpass::<S>(spec)?;
    let padlen = PAD_FACTOR * 5;
    let s = x.samples();
    if s.len() <= padlen {
        return Err(Error::bad(
            "butterworth_bandpass",
            format!("{} samples, need more than {padlen} for edge padding", s.len()),
        ));
    }

    let two = S::of(2.0);
    let n = s.len();
    let mut ext = Vec::with_capacity(n + 2 * padlen);
    for i in (1..=padlen).rev() {
        ext.push(two * s[0] - s[i]);
    }
    ext.extend_from_slice(s);
    for i in 1..=padlen {
        ext.push(two * s[n - 1] - s[n - 1 - i]);
    }

    let zi = step_state(&coeffs);
    let scaled = |v: S| zi.map(|z| z * v);
    let fwd = lfilter(&coeffs, &ext, &scaled(ext[0]));
    let mut rev: Vec<S> = fwd.into_iter().rev().collect();
    rev = lfilter(&coeffs, &rev, &scaled(rev[0]));
    rev.reverse();
    BvpSignal::new(rev[padlen..padlen + n].to_vec(), x.fs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WelchWindow {
    #[default]
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchSpec {
    pub segment_len: usize,
    pub overlap: f64,
    pub window: WelchWindow,
    pub n_fft: usize,
}

impl WelchSpec {
    /// Ten-second segments (or the whole signal if shorter), half overlap,
    /// transform length at least 2048 for sub-bpm bins at video rates.
    pub fn defaults(len: usize, fs: f64) -> Self {
        let segment_len = len.min((10.0 * fs).round() as usize);
        WelchSpec {
            segment_len,
            overlap: 0.5,
            window: WelchWindow::Hann,
            n_fft: segment_len.next_power_of_two().max(2048),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.segment_len < 8 {
            return Err(Error::bad("welch_spec", format!("segment of {} samples", self.segment_len)));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::bad("welch_spec", format!("overlap {} outside [0, 1)", self.overlap)));
        }
        if self.n_fft < self.segment_len {
            return Err(Error::bad("welch_spec", format!("n_fft {} below segment {}", self.n_fft, self.segment_len)));
        }
        Ok(())
    }
}

/// In-place radix-2 transform, or the direct quadratic sum when the length
/// is not a power of two.
fn dft<S: Real>(x: &mut Vec<Complex<S>>) {
    let n = x.len();
    if !n.is_power_of_two() {
        let src = x.clone();
        for (k, out) in x.iter_mut().enumerate() {
            let mut acc = Complex::new(S::zero(), S::zero());
            for (i, &v) in src.iter().enumerate() {
                let th = -2.0 * std::f64::consts::PI * (k * i % n) as f64 / n as f64;
                acc = acc + v * Complex::new(S::of(th.cos()), S::of(th.sin()));
            }
            *out = acc;
        }
        return;
    }
    let mut j = 0;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            x.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -2.0 * std::f64::consts::PI / len as f64;
        let wl = Complex::new(S::of(ang.cos()), S::of(ang.sin()));
        for start in (0..n).step_by(len) {
            let mut w = Complex::new(S::one(), S::zero());
            for i in 0..len / 2 {
                let u = x[start + i];
                let v = x[start + i + len / 2] * w;
                x[start + i] = u + v;
                x[start + i + len / 2] = u - v;
                w = w * wl;
            }
        }
        len <<= 1;
    }
}

/// Averaged one-sided spectral density over Hann-windowed segments. Each
/// segment loses its own mean before windowing; power is scaled by
/// 1/(fs * sum w^2) and doubled away from DC and Nyquist.
pub fn welch_psd<S: Real>(x: &BvpSignal<S>, spec: &WelchSpec) -> Result<(Vec<f64>, Vec<S>)> {
    spec.validate()?;
    let s = x.samples();
    let seg = spec.segment_len;
    if s.len() < seg {
        return Err(Error::bad("welch_psd", format!("{} samples, segment needs {seg}", s.len())));
    }
    let step = seg - (spec.overlap * seg as f64).floor() as usize;
    if step == 0 {
        return Err(Error::bad("welch_psd", "overlap leaves no segment advance"));
    }
    let fs = x.fs();
    let n_fft = spec.n_fft;

    let WelchWindow::Hann = spec.window;
    let window: Vec<S> = (0..seg)
        .map(|i| S::of(0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / seg as f64).cos())))
        .collect();
    let wss = window.iter().map(|&w| w * w).sum::<S>();
    let scale = S::one() / (S::of(fs) * wss);

    let half = n_fft / 2;
    let mut acc = vec![S::zero(); half + 1];
    let mut count = 0usize;
    let mut start = 0;
    while start + seg <= s.len() {
        let chunk = &s[start..start + seg];
        let mean = chunk.iter().copied().sum::<S>() / S::of(seg as f64);
        let mut buf: Vec<Complex<S>> = Vec::with_capacity(n_fft);
        for i in 0..seg {
            buf.push(Complex::new((chunk[i] - mean) * window[i], S::zero()));
        }
        buf.resize(n_fft, Complex::new(S::zero(), S::zero()));
        dft(&mut buf);
        for k in 0..=half {
            let mut p = buf[k].norm_sqr() * scale;
            if k != 0 && !(n_fft % 2 == 0 && k == half) {
                p = p * S::of(2.0);
            }
            acc[k] = acc[k] + p;
        }
        count += 1;
        start += step;
    }
    let inv = S::one() / S::of(count as f64);
    for v in &mut acc {
        *v = *v * inv;
    }
    let freqs = (0..=half).map(|k| k as f64 * fs / n_fft as f64).collect();
    Ok((freqs, acc))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HrEstimate {
    pub bpm: f64,
    pub freq_hz: f64,
    /// Spectral resolution of the estimate, fs / n_fft.
    pub bin_hz: f64,
}

/// Heart rate as 60 times the dominant Welch frequency inside `band`.
pub fn estimate_hr<S: Real>(x: &BvpSignal<S>, band: [f64; 2]) -> Result<HrEstimate> {
    let spec = WelchSpec::defaults(x.samples().len(), x.fs());
    let (freqs, psd) = welch_psd(x, &spec)?;
    let mut best: Option<usize> = None;
    for (k, &f) in freqs.iter().enumerate() {
        if f >= band[0] && f <= band[1] {
            if best.map_or(true, |b| psd[k] > psd[b]) {
                best = Some(k);
            }
        }
    }
    let peak = best.ok_or_else(|| Error::bad("estimate_hr", format!("no spectral bins inside {band:?} Hz")))?;
    Ok(HrEstimate { bpm: freqs[peak] * 60.0, freq_hz: freqs[peak], bin_hz: x.fs() / spec.n_fft as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrValue {
    pub db: f64,
    pub clamped: bool,
}

/// One-sided power spectrum of the de-meaned signal, no taper, no padding.
fn periodogram<S: Real>(x: &BvpSignal<S>) -> (Vec<f64>, Vec<f64>) {
    let s = x.samples();
    let n = s.len();
    let fs = x.fs();
    let mean = s.iter().copied().sum::<S>() / S::of(n as f64);
    let mut buf: Vec<Complex<S>> = s.iter().map(|&v| Complex::new(v - mean, S::zero())).collect();
    dft(&mut buf);
    let half = n / 2;
    let scale = 1.0 / (fs * n as f64);
    let mut psd = Vec::with_capacity(half + 1);
    for k in 0..=half {
        let mut p = buf[k].norm_sqr().f64() * scale;
        if k != 0 && !(n % 2 == 0 && k == half) {
            p *= 2.0;
        }
        psd.push(p);
    }
    ((0..=half).map(|k| k as f64 * fs / n as f64).collect(), psd)
}

/// Signal band around the fundamental and its second harmonic, in Hz.
pub const SNR_WINDOW_HZ: f64 = 0.1;
/// Frequencies considered physiological when splitting signal from noise.
pub const SNR_UNIVERSE_HZ: [f64; 2] = [0.6, 4.0];
const SNR_CLAMP_DB: f64 = 60.0;

/// Spectral power near the reference rate and its harmonic against the rest
/// of the physiological band. Uses an untapered full-length periodogram, so
/// a bin-centered tone keeps all of its power inside the template.
pub fn snr_metric<S: Real>(x: &BvpSignal<S>, gt_hr_bpm: f64) -> Result<SnrValue> {
    let f0 = gt_hr_bpm / 60.0;
    if !(HR_BAND_HZ[0]..=HR_BAND_HZ[1]).contains(&f0) {
        return Err(Error::bad("snr_metric", format!("{gt_hr_bpm} bpm outside the heart-rate band")));
    }
    let (freqs, psd) = periodogram(x);
    let mut sig = 0.0;
    let mut noise = 0.0;
    for (k, &f) in freqs.iter().enumerate() {
        if f < SNR_UNIVERSE_HZ[0] || f > SNR_UNIVERSE_HZ[1] {
            continue;
        }
        let in_window = (f - f0).abs() <= SNR_WINDOW_HZ || (f - 2.0 * f0).abs() <= SNR_WINDOW_HZ;
        if in_window {
            sig += psd[k];
        } else {
            noise += psd[k];
        }
    }
    if noise == 0.0 {
        return Ok(SnrValue { db: SNR_CLAMP_DB, clamped: true });
    }
    if sig == 0.0 {
        return Ok(SnrValue { db: -SNR_CLAMP_DB, clamped: true });
    }
    let db = 10.0 * (sig / noise).log10();
    if db > SNR_CLAMP_DB {
        Ok(SnrValue { db: SNR_CLAMP_DB, clamped: true })
    } else {
        Ok(SnrValue { db, clamped: false })
    }
}

/// Agreement summary between predicted and reference heart rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HrMetrics {
    pub mae: f64,
    pub rmse: f64,
    pub mape: f64,
    /// None when either list is constant and the correlation is undefined.
    pub pearson_rho: Option<f64>,
    /// Filled by the evaluation pipeline; not derivable from rates alone.
    pub snr_db: Option<f64>,
}

pub fn hr_metrics(pred: &[f64], gt: &[f64]) -> Result<HrMetrics> {
    if pred.len() != gt.len() || pred.len() < 2 {
        return Err(Error::bad("hr_metrics", format!("lengths {} and {}", pred.len(), gt.len())));
    }
    if gt.iter().any(|&v| v == 0.0) {
        return Err(Error::bad("hr_metrics", "zero reference rate breaks the percentage error"));
    }
    let n = pred.len() as f64;
    let mut mae = 0.0;
    let mut mse = 0.0;
    let mut mape = 0.0;
    for (&p, &g) in pred.iter().zip(gt) {
        let d = p - g;
        mae += d.abs();
        mse += d * d;
        mape += (d / g).abs();
    }
    mae /= n;
    mse /= n;
    mape = mape / n * 100.0;

    let mp = pred.iter().sum::<f64>() / n;
    let mg = gt.iter().sum::<f64>() / n;
    let mut spp = 0.0;
    let mut sgg = 0.0;
    let mut spg = 0.0;
    for (&p, &g) in pred.iter().zip(gt) {
        spp += (p - mp) * (p - mp);
        sgg += (g - mg) * (g - mg);
        spg += (p - mp) * (g - mg);
    }
    let pearson_rho = if spp == 0.0 || sgg == 0.0 { None } else { Some(spg / (spp * sgg).sqrt()) };
    Ok(HrMetrics { mae, rmse: mse.sqrt(), mape, pearson_rho, snr_db: None })
}

/// Per-clip agreement points: (mean of the two rates, their difference).
pub fn bland_altman(pred: &[f64], gt: &[f64]) -> Result<Vec<(f64, f64)>> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::bad("bland_altman", format!("lengths {} and {}", pred.len(), gt.len())));
    }
    Ok(pred.iter().zip(gt).map(|(&p, &g)| ((p + g) / 2.0, p - g)).collect())
}

/// Per-frame channel means over a pixel-aligned box.
fn roi_traces<S: Real>(clip: &VideoClip<S>, roi: Rect) -> Result<[Vec<S>; 3]> {
    let (h, w) = (clip.height(), clip.width());
    let x0 = roi.x.round().max(0.0) as usize;
    let y0 = roi.y.round().max(0.0) as usize;
    let x1 = (roi.x + roi.w).round() as usize;
    let y1 = (roi.y + roi.h).round() as usize;
    if x1 <= x0 || y1 <= y0 || x1 > w || y1 > h {
        return Err(Error::bad("roi_traces", format!("box ({},{},{},{}) empty or outside {h}x{w}", roi.x, roi.y, roi.w, roi.h)));
    }
    let t = clip.len_t();
    let plane = h * w;
    let px = S::of(((x1 - x0) * (y1 - y0)) as f64);
    let data = clip.frames().data();
    let mut out: [Vec<S>; 3] = [Vec::with_capacity(t), Vec::with_capacity(t), Vec::with_capacity(t)];
    for (c, trace) in out.iter_mut().enumerate() {
        for f in 0..t {
            let base = c * t * plane + f * plane;
            let mut sum = S::zero();
            for y in y0..y1 {
                let row = base + y * w;
                for x in x0..x1 {
                    sum = sum + data[row + x];
                }
            }
            trace.push(sum / px);
        }
    }
    Ok(out)
}

/// Pulse window length used by the plane-orthogonal-to-skin projection.
pub const POS_WINDOW_SECONDS: f64 = 1.6;

/// Plane-orthogonal-to-skin pulse extraction over sliding windows with
/// overlap-add, after per-window temporal normalization of the RGB means.
pub fn pos_baseline<S: Real>(clip: &VideoClip<S>, roi: Rect) -> Result<BvpSignal<S>> {
    let [r, g, b] = roi_traces(clip, roi)?;
    let t = r.len();
    let win = (POS_WINDOW_SECONDS * clip.fps()).round() as usize;
    if win < 2 || t < win {
        return Err(Error::bad("pos_baseline", format!("{t} frames, projection window needs {win}")));
    }
    let wlen = S::of(win as f64);
    let mut out = vec![S::zero(); t];
    for m in 0..=t - win {
        let mut s1 = Vec::with_capacity(win);
        let mut s2 = Vec::with_capacity(win);
        let means: Vec<S> = [&r, &g, &b]
            .iter()
            .map(|tr| tr[m..m + win].iter().copied().sum::<S>() / wlen)
            .collect();
        if means.iter().any(|&mu| mu == S::zero()) {
            return Err(Error::degenerate("pos_baseline", "zero channel mean inside a window"));
        }
        for i in m..m + win {
            let rn = r[i] / means[0];
            let gn = g[i] / means[1];
            let bn = b[i] / means[2];
            s1.push(gn - bn);
            s2.push(gn + bn - S::of(2.0) * rn);
        }
        let std_of = |v: &[S]| {
            let mu = v.iter().copied().sum::<S>() / wlen;
            (v.iter().map(|&x| (x - mu) * (x - mu)).sum::<S>() / wlen).sqrt()
        };
        let sd1 = std_of(&s1);
        let sd2 = std_of(&s2);
        let alpha = if sd2 == S::zero() { S::zero() } else { sd1 / sd2 };
        let h: Vec<S> = s1.iter().zip(&s2).map(|(&a, &c)| a + alpha * c).collect();
        let hm = h.iter().copied().sum::<S>() / wlen;
        for (i, &v) in h.iter().enumerate() {
            out[m + i] = out[m + i] + v - hm;
        }
    }
    BvpSignal::new(out, clip.fps())
}

/// De-meaned, bandpassed spatial mean of the green channel.
pub fn green_baseline<S: Real>(clip: &VideoClip<S>, roi: Rect) -> Result<BvpSignal<S>> {
    let [_, g, _] = roi_traces(clip, roi)?;
    let mean = g.iter().copied().sum::<S>() / S::of(g.len() as f64);
    let centered: Vec<S> = g.iter().map(|&v| v - mean).collect();
    let raw = BvpSignal::new(centered, clip.fps())?;
    butterworth_bandpass(&raw, &FilterSpec::default_hr(clip.fps()))
}
