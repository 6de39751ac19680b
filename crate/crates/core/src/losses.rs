//! Training losses over predicted pulse waveforms.
//!
//! Three terms: negative Pearson correlation in time, cross-entropy between
//! the predicted band spectrum and the reference peak bin, and a Gaussian KL
//! distance between the two heart rates. The KL term is monitor-only; the
//! analytic gradients cover the time and frequency terms.

use crate::error::Error;
use crate::nn::softmax_slice;
use crate::video::BvpSignal;
use crate::{Real, Result, HR_BAND_HZ};

/// Heart rate viewed as a Gaussian in bpm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HrDistribution {
    pub mu: f64,
    pub sigma: f64,
}

impl HrDistribution {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !(40.0..=180.0).contains(&mu) {
            return Err(Error::bad("hr_distribution", format!("mu {mu} bpm outside 40..=180")));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::bad("hr_distribution", format!("sigma {sigma}")));
        }
        Ok(HrDistribution { mu, sigma })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossWeights<S> {
    pub time: S,
    pub freq: S,
    pub hr: S,
}

impl<S: Real> Default for LossWeights<S> {
    fn default() -> Self {
        LossWeights { time: S::of(0.2), freq: S::one(), hr: S::one() }
    }
}

impl<S: Real> LossWeights<S> {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("time", self.time), ("freq", self.freq), ("hr", self.hr)] {
            if v < S::zero() || !v.is_finite() {
                return Err(Error::bad("loss_weights", format!("{name} weight {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Time-domain loss value plus the flag for a flat prediction, where the
/// correlation is undefined and the loss is pinned at 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeLoss<S> {
    pub value: S,
    pub constant_pred: bool,
}

fn centered_sums<S: Real>(pred: &[S], gt: &[S]) -> (Vec<S>, Vec<S>, S, S, S) {
    let n = S::of(pred.len() as f64);
    let mp = pred.iter().copied().sum::<S>() / n;
    let mg = gt.iter().copied().sum::<S>() / n;
    let pc: Vec<S> = pred.iter().map(|&v| v - mp).collect();
    let gc: Vec<S> = gt.iter().map(|&v| v - mg).collect();
    let spp = pc.iter().map(|&v| v * v).sum::<S>();
    let sgg = gc.iter().map(|&v| v * v).sum::<S>();
    let spg = pc.iter().zip(&gc).map(|(&a, &b)| a * b).sum::<S>();
    (pc, gc, spp, sgg, spg)
}

/// One minus the Pearson correlation of the two waveforms.
pub fn pearson_loss<S: Real>(pred: &BvpSignal<S>, gt: &BvpSignal<S>) -> Result<TimeLoss<S>> {
    let (p, g) = (pred.samples(), gt.samples());
    if p.len() != g.len() {
        return Err(Error::bad("pearson_loss", format!("lengths {} vs {}", p.len(), g.len())));
    }
    let (_, _, spp, sgg, spg) = centered_sums(p, g);
    if sgg == S::zero() {
        return Err(Error::degenerate("pearson_loss", "reference waveform is constant"));
    }
    if spp == S::zero() {
        return Ok(TimeLoss { value: S::one(), constant_pred: true });
    }
    let r = spg / (spp * sgg).sqrt();
    Ok(TimeLoss { value: S::one() - r, constant_pred: false })
}

/// DFT bin indices whose frequencies fall inside `band`, for an N-point
/// transform at rate `fs`.
fn band_bins(n: usize, fs: f64, band: [f64; 2]) -> Result<Vec<usize>> {
    let [lo, hi] = band;
    if !(lo > 0.0) || !(hi > lo) || hi > fs / 2.0 {
        return Err(Error::bad("band_psd", format!("band {lo}..{hi} Hz invalid for fs {fs}")));
    }
    let bins: Vec<usize> = (1..=n / 2).filter(|&k| {
        let f = k as f64 * fs / n as f64;
        f >= lo && f <= hi
    }).collect();
    if bins.is_empty() {
        return Err(Error::degenerate("band_psd", "no spectral bins inside the band"));
    }
    Ok(bins)
}

/// Periodogram of the de-meaned waveform on the in-band DFT bins, scaled by
/// 1/N. `n_fft` zero-pads the transform for finer bin spacing.
pub fn band_psd<S: Real>(
    bvp: &BvpSignal<S>,
    band: [f64; 2],
    n_fft: Option<usize>,
) -> Result<(Vec<f64>, Vec<S>)> {
    let x = bvp.samples();
    if x.len() < 32 {
        return Err(Error::bad("band_psd", format!("{} samples, need at least 32", x.len())));
    }
    let n = n_fft.unwrap_or(x.len());
    if n < x.len() {
        return Err(Error::bad("band_psd", format!("n_fft {n} shorter than the signal {}", x.len())));
    }
    let fs = bvp.fs();
    let bins = band_bins(n, fs, band)?;

    let mean = x.iter().copied().sum::<S>() / S::of(x.len() as f64);
    let d: Vec<S> = x.iter().map(|&v| v - mean).collect();

    let mut freqs = Vec::with_capacity(bins.len());
    let mut powers = Vec::with_capacity(bins.len());
    let scale = S::one() / S::of(n as f64);
    for &k in &bins {
        let omega = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
        let coeff = S::of(2.0 * omega.cos());
        // Goertzel recurrence across the zero-padded extent
        let (mut s1, mut s2) = (S::zero(), S::zero());
        for i in 0..n {
            let xi = if i < d.len() { d[i] } else { S::zero() };
            let s = xi + coeff * s1 - s2;
            s2 = s1;
            s1 = s;
        }
        let power = s1 * s1 + s2 * s2 - coeff * s1 * s2;
        freqs.push(k as f64 * fs / n as f64);
        powers.push(power * scale);
    }
    Ok((freqs, powers))
}

fn psd_argmax<S: Real>(powers: &[S], op: &'static str) -> Result<usize> {
    if powers.iter().all(|&p| p == S::zero()) {
        return Err(Error::degenerate(op, "spectrum is identically zero in the band"));
    }
    let mut best = 0;
    for (i, &p) in powers.iter().enumerate() {
        if p > powers[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Cross-entropy between the reference peak bin and the predicted band
/// spectrum taken as logits.
pub fn freq_ce_loss<S: Real>(pred: &BvpSignal<S>, gt: &BvpSignal<S>) -> Result<S> {
    if pred.fs() != gt.fs() || pred.samples().len() != gt.samples().len() {
        return Err(Error::bad("freq_ce_loss", "waveforms must share rate and length"));
    }
    let (_, gt_psd) = band_psd(gt, HR_BAND_HZ, None)?;
    let (_, pred_psd) = band_psd(pred, HR_BAND_HZ, None)?;
    let target = psd_argmax(&gt_psd, "freq_ce_loss")?;
    if pred_psd.iter().all(|&p| p == S::zero()) {
        return Err(Error::degenerate("freq_ce_loss", "predicted spectrum is identically zero in the band"));
    }
    // -log softmax(logits)[target] via a max-shifted log-sum-exp
    let m = pred_psd.iter().fold(S::neg_infinity(), |a, &b| a.max(b));
    let lse = pred_psd.iter().map(|&p| (p - m).exp()).sum::<S>().ln();
    Ok(lse - (pred_psd[target] - m))
}

/// Heart rate of a waveform: the in-band spectral peak, in bpm.
pub fn hr_distribution<S: Real>(bvp: &BvpSignal<S>, sigma: f64) -> Result<HrDistribution> {
    let (freqs, powers) = band_psd(bvp, HR_BAND_HZ, None)?;
    let peak = psd_argmax(&powers, "hr_distribution")?;
    HrDistribution::new(freqs[peak] * 60.0, sigma)
}

/// KL divergence between the two equal-width heart-rate Gaussians:
/// (mu_gt - mu_pred)^2 / (2 sigma^2).
pub fn hr_kl_loss<S: Real>(pred: &BvpSignal<S>, gt: &BvpSignal<S>, sigma: f64) -> Result<S> {
    let hp = hr_distribution(pred, sigma)?;
    let hg = hr_distribution(gt, sigma)?;
    let gap = S::of(hg.mu) - S::of(hp.mu);
    Ok(gap * gap / (S::of(2.0) * S::of(sigma) * S::of(sigma)))
}

pub const DEFAULT_HR_SIGMA_BPM: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<S> {
    pub total: S,
    pub time: S,
    pub freq: S,
    /// Monitor term: included in the total, excluded from `loss_gradients`.
    pub hr: S,
    pub constant_pred: bool,
}

pub fn overall_loss<S: Real>(
    pred: &BvpSignal<S>,
    gt: &BvpSignal<S>,
    w: &LossWeights<S>,
    sigma: f64,
) -> Result<LossBreakdown<S>> {
    w.validate()?;
    let t = pearson_loss(pred, gt)?;
    let f = freq_ce_loss(pred, gt)?;
    let h = hr_kl_loss(pred, gt, sigma)?;
    Ok(LossBreakdown {
        total: w.time * t.value + w.freq * f + w.hr * h,
        time: t.value,
        freq: f,
        hr: h,
        constant_pred: t.constant_pred,
    })
}

/// Analytic gradient of `w.time * pearson + w.freq * freq_ce` with respect to
/// each predicted sample. The heart-rate term contributes nothing.
pub fn loss_gradients<S: Real>(pred: &BvpSignal<S>, gt: &BvpSignal<S>, w: &LossWeights<S>) -> Result<Vec<S>> {
    w.validate()?;
    let p = pred.samples();
    let g = gt.samples();
    if p.len() != g.len() {
        return Err(Error::bad("loss_gradients", format!("lengths {} vs {}", p.len(), g.len())));
    }
    let len = p.len();
    let mut grad = vec![S::zero(); len];
    if w.time == S::zero() && w.freq == S::zero() {
        return Ok(grad);
    }

    if w.time != S::zero() {
        let (pc, gc, spp, sgg, spg) = centered_sums(p, g);
        if sgg == S::zero() {
            return Err(Error::degenerate("loss_gradients", "reference waveform is constant"));
        }
        if spp == S::zero() {
            return Err(Error::degenerate("loss_gradients", "flat prediction has no correlation gradient"));
        }
        let b = (spp * sgg).sqrt();
        let r = spg / b;
        for i in 0..len {
            grad[i] = grad[i] + w.time * (r * pc[i] / spp - gc[i] / b);
        }
    }

    if w.freq != S::zero() {
        let n = len;
        let fs = pred.fs();
        let bins = band_bins(n, fs, HR_BAND_HZ)?;
        let (_, gt_psd) = band_psd(gt, HR_BAND_HZ, None)?;
        let (_, pred_psd) = band_psd(pred, HR_BAND_HZ, None)?;
        let target = psd_argmax(&gt_psd, "loss_gradients")?;
        if pred_psd.iter().all(|&v| v == S::zero()) {
            return Err(Error::degenerate("loss_gradients", "predicted spectrum is identically zero in the band"));
        }
        let mut soft: Vec<S> = pred_psd.clone();
        softmax_slice(&mut soft);

        let mean = p.iter().copied().sum::<S>() / S::of(len as f64);
        let two_over_n = S::of(2.0 / n as f64);
        for (bi, &k) in bins.iter().enumerate() {
            let omega = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            // spectrum of the de-meaned signal and the mean corrections of
            // the basis, all over the real sample range
            let mut a = S::zero();
            let mut bsum = S::zero();
            let mut cbar = S::zero();
            let mut sbar = S::zero();
            let cos_sin: Vec<(S, S)> = (0..len)
                .map(|i| {
                    let th = omega * i as f64;
                    (S::of(th.cos()), S::of(th.sin()))
                })
                .collect();
            for i in 0..len {
                let x = p[i] - mean;
                a = a + x * cos_sin[i].0;
                bsum = bsum + x * cos_sin[i].1;
                cbar = cbar + cos_sin[i].0;
                sbar = sbar + cos_sin[i].1;
            }
            let inv_len = S::one() / S::of(len as f64);
            cbar = cbar * inv_len;
            sbar = sbar * inv_len;
            let dldp = soft[bi] - if bi == target { S::one() } else { S::zero() };
            let factor = w.freq * dldp * two_over_n;
            for i in 0..len {
                let dpk = a * (cos_sin[i].0 - cbar) + bsum * (cos_sin[i].1 - sbar);
                grad[i] = grad[i] + factor * dpk;
            }
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bvp(samples: Vec<f64>, fs: f64) -> BvpSignal<f64> {
        BvpSignal::new(samples, fs).unwrap()
    }

    fn sine(freq: f64, fs: f64, n: usize, phase: f64) -> BvpSignal<f64> {
        bvp((0..n).map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / fs + phase).sin()).collect(), fs)
    }

    fn random_bvp(n: usize, fs: f64, rng: &mut ChaCha8Rng) -> BvpSignal<f64> {
        bvp((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), fs)
    }

    #[test]
    fn identical_waveforms_have_zero_time_loss() {
        let a = sine(1.5, 30.0, 160, 0.3);
        let l = pearson_loss(&a, &a).unwrap();
        assert!(l.value.abs() < 1e-12);
        assert!(!l.constant_pred);
    }

    #[test]
    fn negated_waveform_scores_two() {
        let a = sine(1.5, 30.0, 160, 0.3);
        let neg = bvp(a.samples().iter().map(|v| -v).collect(), 30.0);
        assert!((pearson_loss(&neg, &a).unwrap().value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_matches_covariance_oracle() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let p = random_bvp(160, 30.0, &mut r);
            let g = random_bvp(160, 30.0, &mut r);
            let got = pearson_loss(&p, &g).unwrap().value;
            // direct covariance quotient, written independently
            let n = 160.0;
            let mp: f64 = p.samples().iter().sum::<f64>() / n;
            let mg: f64 = g.samples().iter().sum::<f64>() / n;
            let mut cov = 0.0;
            let mut vp = 0.0;
            let mut vg = 0.0;
            for i in 0..160 {
                cov += (p.samples()[i] - mp) * (g.samples()[i] - mg);
                vp += (p.samples()[i] - mp).powi(2);
                vg += (g.samples()[i] - mg).powi(2);
            }
            let want = 1.0 - cov / (vp.sqrt() * vg.sqrt());
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_reference_errors_constant_prediction_is_flagged() {
        let flat = bvp(vec![2.0; 160], 30.0);
        let wave = sine(1.5, 30.0, 160, 0.0);
        assert!(matches!(pearson_loss(&wave, &flat), Err(Error::Degenerate { .. })));
        let l = pearson_loss(&flat, &wave).unwrap();
        assert_eq!(l.value, 1.0);
        assert!(l.constant_pred);
    }

    #[test]
    fn time_loss_is_affine_invariant_in_the_prediction() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..8 {
            let p = random_bvp(120, 30.0, &mut r);
            let g = random_bvp(120, 30.0, &mut r);
            let a = r.gen_range(0.1..5.0);
            let b = r.gen_range(-4.0..4.0);
            let scaled = bvp(p.samples().iter().map(|v| a * v + b).collect(), 30.0);
            let l0 = pearson_loss(&p, &g).unwrap().value;
            let l1 = pearson_loss(&scaled, &g).unwrap().value;
            assert!((l0 - l1).abs() < 1e-12);
        }
    }

    #[test]
    fn sinusoid_peaks_at_its_own_frequency() {
        let s = sine(1.5, 30.0, 512, 0.0);
        let (freqs, powers) = band_psd(&s, HR_BAND_HZ, None).unwrap();
        let peak = psd_argmax(&powers, "test").unwrap();
        assert!((freqs[peak] - 1.5).abs() <= 30.0 / 512.0);
    }

    #[test]
    fn constant_signal_has_no_band_power() {
        let s = bvp(vec![3.0; 64], 30.0);
        let (_, powers) = band_psd(&s, HR_BAND_HZ, None).unwrap();
        assert!(powers.iter().all(|&p| p == 0.0));
    }

    /// Direct DFT of the de-meaned signal, complex accumulation.
    fn dft_oracle(x: &[f64], fs: f64, n: usize, band: [f64; 2]) -> Vec<(f64, f64)> {
        let mean: f64 = x.iter().sum::<f64>() / x.len() as f64;
        (1..=n / 2)
            .map(|k| (k as f64 * fs / n as f64, k))
            .filter(|(f, _)| *f >= band[0] && *f <= band[1])
            .map(|(f, k)| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, &v) in x.iter().enumerate() {
                    let th = 2.0 * std::f64::consts::PI * k as f64 * i as f64 / n as f64;
                    re += (v - mean) * th.cos();
                    im -= (v - mean) * th.sin();
                }
                (f, (re * re + im * im) / n as f64)
            })
            .collect()
    }

    #[test]
    fn periodogram_matches_naive_dft_oracle() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        for (len, n_fft) in [(37usize, None), (64, None), (100, Some(256)), (160, Some(512))] {
            let s = random_bvp(len, 30.0, &mut r);
            let (freqs, powers) = band_psd(&s, HR_BAND_HZ, n_fft).unwrap();
            let want = dft_oracle(s.samples(), 30.0, n_fft.unwrap_or(len), HR_BAND_HZ);
            assert_eq!(freqs.len(), want.len());
            for (i, (wf, wp)) in want.iter().enumerate() {
                assert!((freqs[i] - wf).abs() < 1e-12);
                let denom = wp.abs().max(1.0);
                assert!((powers[i] - wp).abs() / denom < 1e-10, "bin {i}: {} vs {wp}", powers[i]);
            }
        }
    }

    #[test]
    fn band_psd_rejects_bad_requests() {
        let s = sine(1.5, 30.0, 64, 0.0);
        assert!(band_psd(&s, [0.67, 16.0], None).is_err(), "beyond Nyquist");
        assert!(band_psd(&s, HR_BAND_HZ, Some(32)).is_err(), "pad shorter than signal");
        let short = sine(1.5, 30.0, 16, 0.0);
        assert!(band_psd(&short, HR_BAND_HZ, None).is_err(), "too few samples");
    }

    #[test]
    fn equal_power_on_every_bin_costs_log_bin_count() {
        // bins at k*30/64 inside the band: k = 2..=6, five of them
        let fs = 30.0;
        let n = 64;
        let pred = bvp(
            (0..n)
                .map(|i| {
                    (2..=6)
                        .map(|k| (2.0 * std::f64::consts::PI * k as f64 * i as f64 / n as f64).sin())
                        .sum::<f64>()
                })
                .collect(),
            fs,
        );
        let gt = sine(4.0 * 30.0 / 64.0, fs, n, 0.0);
        let loss = freq_ce_loss(&pred, &gt).unwrap();
        assert!((loss - (5.0f64).ln()).abs() < 1e-9, "got {loss}");
    }

    #[test]
    fn matched_sinusoid_loss_follows_the_psd_softmax_oracle() {
        let s = sine(1.875, 30.0, 160, 0.2);
        let loss = freq_ce_loss(&s, &s).unwrap();
        let (_, psd) = band_psd(&s, HR_BAND_HZ, None).unwrap();
        let target = psd_argmax(&psd, "test").unwrap();
        let mut soft = psd.clone();
        softmax_slice(&mut soft);
        let want = -soft[target].ln();
        assert!((loss - want).abs() < 1e-12);
        assert!(loss >= 0.0);
    }

    #[test]
    fn sharp_peak_on_the_wrong_bin_costs_more_than_uniform() {
        // strong 0.9375 Hz prediction against a 2.8125 Hz reference
        let pred = bvp(sine(2.0 * 30.0 / 64.0, 30.0, 64, 0.0).samples().iter().map(|v| 40.0 * v).collect(), 30.0);
        let gt = sine(6.0 * 30.0 / 64.0, 30.0, 64, 0.0);
        let loss = freq_ce_loss(&pred, &gt).unwrap();
        assert!(loss > (5.0f64).ln(), "got {loss}");
    }

    #[test]
    fn freq_loss_is_nonnegative_on_random_pairs() {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let p = random_bvp(96, 30.0, &mut r);
            let g = random_bvp(96, 30.0, &mut r);
            assert!(freq_ce_loss(&p, &g).unwrap() >= 0.0);
        }
    }

    #[test]
    fn identical_rates_have_zero_kl() {
        let s = sine(1.5, 30.0, 160, 0.0);
        assert_eq!(hr_kl_loss(&s, &s, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn three_bpm_gap_at_sigma_three_is_one_half() {
        // 600 samples at 30 Hz put bins 3 bpm apart
        let gt = sine(1.5, 30.0, 600, 0.0);
        let pred = sine(1.55, 30.0, 600, 0.0);
        let kl = hr_kl_loss(&pred, &gt, 3.0).unwrap();
        assert!((kl - 0.5).abs() < 1e-12, "got {kl}");
    }

    #[test]
    fn kl_is_symmetric_in_its_arguments() {
        let a = sine(1.2, 30.0, 160, 0.0);
        let b = sine(2.1, 30.0, 160, 0.5);
        assert_eq!(hr_kl_loss(&a, &b, 3.0).unwrap(), hr_kl_loss(&b, &a, 3.0).unwrap());
    }

    #[test]
    fn hr_estimates_live_in_the_band() {
        let s = sine(2.0, 30.0, 160, 0.0);
        let d = hr_distribution(&s, 3.0).unwrap();
        assert!((40.0..=180.0).contains(&d.mu));
        assert!(HrDistribution::new(30.0, 3.0).is_err());
        assert!(HrDistribution::new(90.0, 0.0).is_err());
    }

    #[test]
    fn matched_pair_reduces_to_the_frequency_term() {
        let s = sine(1.5, 30.0, 160, 0.1);
        let w = LossWeights::default();
        let b = overall_loss(&s, &s, &w, 3.0).unwrap();
        assert!(b.time.abs() < 1e-12);
        assert_eq!(b.hr, 0.0);
        assert!((b.total - b.freq).abs() < 1e-12);
    }

    #[test]
    fn components_recombine_bitwise() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let p = random_bvp(160, 30.0, &mut r);
            let g = random_bvp(160, 30.0, &mut r);
            let w = LossWeights { time: 0.2, freq: 1.0, hr: 1.0 };
            let b = overall_loss(&p, &g, &w, 3.0).unwrap();
            let manual = w.time * b.time + w.freq * b.freq + w.hr * b.hr;
            assert_eq!(b.total, manual);
        }
    }

    #[test]
    fn hr_only_weights_reproduce_the_kl_term() {
        let mut r = ChaCha8Rng::seed_from_u64(6);
        let p = random_bvp(160, 30.0, &mut r);
        let g = random_bvp(160, 30.0, &mut r);
        let w = LossWeights { time: 0.0, freq: 0.0, hr: 1.0 };
        let b = overall_loss(&p, &g, &w, 3.0).unwrap();
        assert_eq!(b.total, b.hr);
        assert_eq!(b.hr, hr_kl_loss(&p, &g, 3.0).unwrap());
    }

    #[test]
    fn hr_only_weights_have_zero_gradient() {
        let mut r = ChaCha8Rng::seed_from_u64(7);
        let p = random_bvp(160, 30.0, &mut r);
        let g = random_bvp(160, 30.0, &mut r);
        let w = LossWeights { time: 0.0, freq: 0.0, hr: 1.0 };
        let grad = loss_gradients(&p, &g, &w).unwrap();
        assert!(grad.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_vanishes_at_a_perfect_match() {
        let s = sine(1.5, 30.0, 160, 0.7);
        let w = LossWeights { time: 1.0, freq: 0.0, hr: 0.0 };
        let grad = loss_gradients(&s, &s, &w).unwrap();
        let peak = grad.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        assert!(peak < 1e-10, "largest component {peak}");
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut r = ChaCha8Rng::seed_from_u64(8);
        let w = LossWeights { time: 0.2, freq: 1.0, hr: 0.0 };
        let differentiable = |p: &BvpSignal<f64>, g: &BvpSignal<f64>| {
            w.time * pearson_loss(p, g).unwrap().value + w.freq * freq_ce_loss(p, g).unwrap()
        };
        for _ in 0..3 {
            let p = random_bvp(160, 30.0, &mut r);
            let g = random_bvp(160, 30.0, &mut r);
            let grad = loss_gradients(&p, &g, &w).unwrap();
            let h = 1e-5;
            for i in (0..160).step_by(13) {
                let mut up = p.samples().to_vec();
                up[i] += h;
                let mut dn = p.samples().to_vec();
                dn[i] -= h;
                let fd = (differentiable(&bvp(up, 30.0), &g) - differentiable(&bvp(dn, 30.0), &g)) / (2.0 * h);
                let denom = fd.abs().max(grad[i].abs()).max(1e-8);
                assert!((fd - grad[i]).abs() / denom < 1e-4, "sample {i}: analytic {} vs fd {fd}", grad[i]);
            }
        }
    }
}
