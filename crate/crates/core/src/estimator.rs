//! Mismatch estimation by four-parameter sine fitting.
//!
//! Each channel stream is fitted with `A*sin(2*pi*f*k + phase) + C` at its
//! own sub-rate. Relative to channel 0:
//!
//! * gain: `A_m / A_0 - 1`
//! * offset: `C_m - C_0`
//! * skew: `unwrap(phase_m - phase_0) / (2*pi*f_in*Ts) - m`, on the branch
//!   closest to the nominal delay of `m*Ts`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::model::{interleave_channels, MismatchProfile, TiadcConfig};

pub const MIN_FIT_LEN: usize = 16;
pub const MAX_ITERATIONS: usize = 50;
pub const FREQ_TOLERANCE: f64 = 1e-12;
/// Samples per channel used for one estimate.
pub const DEFAULT_BLOCK_LEN: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct SineFit {
    pub amplitude: f64,
    /// Cycles per sample of the fitted stream.
    pub freq_rel: f64,
    /// Phase at sample 0, in (-pi, pi].
    pub phase: f64,
    pub dc: f64,
    pub rms_residual: f64,
    pub iterations: usize,
}

impl SineFit {
    pub fn value_at(&self, k: f64) -> f64 {
        self.amplitude * (2.0 * PI * self.freq_rel * k + self.phase).sin() + self.dc
    }

    /// Residual sum of squares against `samples`.
    pub fn rss(&self, samples: &[f64]) -> f64 {
        samples
            .iter()
            .enumerate()
            .map(|(k, &y)| (y - self.value_at(k as f64)).powi(2))
            .sum()
    }
}

/// Linear part of the fit: `a*cos + b*sin + c` at a fixed frequency.
struct LinearFit {
    a: f64,
    b: f64,
    c: f64,
    rss: f64,
}

fn least_squares(design: DMatrix<f64>, samples: &[f64]) -> Option<DVector<f64>> {
    let y = DVector::from_column_slice(samples);
    let svd = design.svd(true, true);
    let max_sv = svd.singular_values.max();
    let min_sv = svd.singular_values.min();
    if !(max_sv > 0.0) || min_sv <= max_sv * 1e-13 {
        return None;
    }
    svd.solve(&y, 0.0).ok()
}

fn three_param(samples: &[f64], omega: f64) -> Result<LinearFit> {
    let n = samples.len();
    let design = DMatrix::from_fn(n, 3, |k, col| {
        let x = omega * k as f64;
        match col {
            0 => x.cos(),
            1 => x.sin(),
            _ => 1.0,
        }
    });
    let sol = least_squares(design, samples)
        .ok_or_else(|| Error::DegenerateFit("singular three-parameter normal equations".into()))?;
    let (a, b, c) = (sol[0], sol[1], sol[2]);
    let rss = samples
        .iter()
        .enumerate()
        .map(|(k, &y)| {
            let x = omega * k as f64;
            (y - a * x.cos() - b * x.sin() - c).powi(2)
        })
        .sum();
    Ok(LinearFit { a, b, c, rss })
}

/// Linearized frequency step from the current iterate.
fn frequency_step(samples: &[f64], omega: f64, lin: &LinearFit) -> Result<f64> {
    let n = samples.len();
    let design = DMatrix::from_fn(n, 4, |k, col| {
        let t = k as f64;
        let x = omega * t;
        match col {
            0 => x.cos(),
            1 => x.sin(),
            2 => 1.0,
            _ => t * (-lin.a * x.sin() + lin.b * x.cos()),
        }
    });
    let sol = least_squares(design, samples)
        .ok_or_else(|| Error::DegenerateFit("singular four-parameter normal equations".into()))?;
    Ok(sol[3])
}

fn to_fit(lin: &LinearFit, omega: f64, n: usize, iterations: usize) -> SineFit {
    SineFit {
        amplitude: lin.a.hypot(lin.b),
        freq_rel: omega / (2.0 * PI),
        phase: lin.a.atan2(lin.b),
        dc: lin.c,
        rms_residual: (lin.rss / n as f64).sqrt(),
        iterations,
    }
}

/// Least-squares fit of amplitude, frequency, phase and offset.
///
/// Gauss-Newton in the frequency with a three-parameter linear solve per
/// iteration. `freq_guess_rel` (cycles/sample) must be within about one DFT
/// bin of the true frequency.
pub fn sine_fit_four_param(samples: &[f64], freq_guess_rel: f64) -> Result<SineFit> {
    if samples.len() < MIN_FIT_LEN {
        return Err(Error::Shape(format!(
            "sine fit needs at least {MIN_FIT_LEN} samples, got {}",
            samples.len()
        )));
    }
    if !(freq_guess_rel > 0.0 && freq_guess_rel < 0.5) {
        return Err(Error::Config(format!(
            "frequency guess {freq_guess_rel} outside (0, 0.5)"
        )));
    }
    let n = samples.len();
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut omega = 2.0 * PI * freq_guess_rel;
    let mut lin = three_param(samples, omega)?;
    if lin.a.hypot(lin.b) <= 1e-10 * peak {
        return Err(Error::DegenerateFit("no sinusoidal component in the record".into()));
    }

    let mut last_step = f64::INFINITY;
    for iteration in 1..=MAX_ITERATIONS {
        let mut step = frequency_step(samples, omega, &lin)?;
        let mut accepted = None;
        for _ in 0..40 {
            let candidate = omega + step;
            if candidate > 0.0 && candidate < PI {
                let next = three_param(samples, candidate)?;
                if next.rss <= lin.rss {
                    accepted = Some((candidate, next));
                    break;
                }
            }
            step *= 0.5;
        }
        last_step = match accepted {
            Some((candidate, next)) => {
                let rel = ((candidate - omega) / omega).abs();
                omega = candidate;
                lin = next;
                rel
            }
            // no downhill step left: already at the minimum
            None => 0.0,
        };
        if last_step < FREQ_TOLERANCE {
            return Ok(to_fit(&lin, omega, n, iteration));
        }
    }
    Err(Error::Convergence {
        iterations: MAX_ITERATIONS,
        last_step,
        last: Box::new(to_fit(&lin, omega, n, MAX_ITERATIONS)),
    })
}

/// Coarse tone frequency (cycles/sample) from the peak of a Hann-windowed
/// DFT, refined by parabolic interpolation of the log magnitudes.
pub fn estimate_frequency(samples: &[f64]) -> Result<f64> {
    let n = samples.len();
    if n < MIN_FIT_LEN {
        return Err(Error::Shape(format!(
            "frequency estimate needs at least {MIN_FIT_LEN} samples, got {n}"
        )));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex64> = samples
        .iter()
        .enumerate()
        .map(|(k, &y)| {
            let w = 0.5 - 0.5 * (2.0 * PI * k as f64 / n as f64).cos();
            Complex64::new((y - mean) * w, 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let mags: Vec<f64> = buf[..=n / 2].iter().map(|c| c.norm()).collect();
    let (peak, &peak_mag) = mags
        .iter()
        .enumerate()
        .skip(1)
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::DegenerateFit("empty spectrum".into()))?;
    if !(peak_mag > 0.0) {
        return Err(Error::DegenerateFit("no spectral peak in the record".into()));
    }
    let mut bin = peak as f64;
    if peak + 1 < mags.len() {
        let (l, c, r) = (mags[peak - 1].ln(), peak_mag.ln(), mags[peak + 1].ln());
        let denom = l - 2.0 * c + r;
        if denom.is_finite() && denom != 0.0 {
            bin += (0.5 * (l - r) / denom).clamp(-0.5, 0.5);
        }
    }
    Ok((bin / n as f64).clamp(0.5 / n as f64, 0.5 - 0.5 / n as f64))
}

/// Folds a frequency (cycles/sample) into `[0, 0.5]`; the flag is set when
/// the folded tone is spectrally mirrored.
fn alias(freq: f64) -> (f64, bool) {
    let f = freq.rem_euclid(1.0);
    if f > 0.5 {
        (1.0 - f, true)
    } else {
        (f, false)
    }
}

/// Per-channel mismatches relative to channel 0.
#[derive(Debug, Clone, PartialEq)]
pub struct MismatchEstimate {
    pub fits: Vec<SineFit>,
    pub offsets: Vec<f64>,
    pub gains: Vec<f64>,
    pub skews: Vec<f64>,
    pub reference_channel: usize,
    /// Tone frequency, fraction of `fs`, used for the skew mapping.
    pub tone_freq_rel: f64,
}

impl MismatchEstimate {
    pub fn to_profile(&self) -> Result<MismatchProfile> {
        MismatchProfile::new(self.offsets.clone(), self.gains.clone(), self.skews.clone())
    }
}

/// Turns per-channel fits of one tone into mismatch estimates.
pub fn derive_mismatches(fits: &[SineFit], config: &TiadcConfig, tone_freq_rel: f64) -> Result<MismatchEstimate> {
    if fits.len() != config.channels {
        return Err(Error::Config(format!(
            "{} fits for a {}-channel converter",
            fits.len(),
            config.channels
        )));
    }
    if !(tone_freq_rel > 0.0 && tone_freq_rel < 0.5) {
        return Err(Error::Config(format!(
            "tone frequency {tone_freq_rel} outside (0, 0.5)"
        )));
    }
    let (_, mirrored) = alias(config.channels as f64 * tone_freq_rel);
    let true_phase = |fit: &SineFit| if mirrored { PI - fit.phase } else { fit.phase };
    let reference = &fits[0];
    let phase0 = true_phase(reference);
    let period = 1.0 / tone_freq_rel;

    let mut skews = Vec::with_capacity(fits.len());
    for (m, fit) in fits.iter().enumerate() {
        if m == 0 {
            skews.push(0.0);
            continue;
        }
        let raw = (true_phase(fit) - phase0) / (2.0 * PI * tone_freq_rel) - m as f64;
        let skew = raw - (raw / period).round() * period;
        if skew.abs() >= 0.5 {
            return Err(Error::Ambiguity {
                channel: m,
                candidate: skew,
            });
        }
        skews.push(skew);
    }
    let gains = fits
        .iter()
        .enumerate()
        .map(|(m, f)| if m == 0 { 0.0 } else { f.amplitude / reference.amplitude - 1.0 })
        .collect();
    let offsets = fits
        .iter()
        .enumerate()
        .map(|(m, f)| if m == 0 { 0.0 } else { f.dc - reference.dc })
        .collect();
    Ok(MismatchEstimate {
        fits: fits.to_vec(),
        offsets,
        gains,
        skews,
        reference_channel: 0,
        tone_freq_rel,
    })
}

/// Fits every channel (in parallel) and derives the mismatches.
///
/// `per_channel` holds dequantized samples in full-scale units. Without a
/// frequency hint the tone is located on the interleaved stream.
pub fn estimate_mismatches(
    per_channel: &[Vec<f64>],
    config: &TiadcConfig,
    tone_hint: Option<f64>,
) -> Result<MismatchEstimate> {
    if per_channel.len() != config.channels {
        return Err(Error::Config(format!(
            "{} channel streams for a {}-channel converter",
            per_channel.len(),
            config.channels
        )));
    }
    let m = config.channels as f64;
    let coarse = match tone_hint {
        Some(f) => f,
        None => estimate_frequency(&interleave_channels(per_channel)?)?,
    };
    let (guess, _) = alias(m * coarse);
    if !(guess > 0.0 && guess < 0.5) {
        return Err(Error::Config(format!(
            "tone at {coarse} fs lands on DC or Nyquist of the sub-channels"
        )));
    }
    let fits = per_channel
        .par_iter()
        .map(|s| sine_fit_four_param(s, guess))
        .collect::<Result<Vec<_>>>()?;

    // pick the alias branch of the channel-0 fit closest to the coarse value
    let f_sub = fits[0].freq_rel;
    let tone = (0..=config.channels)
        .flat_map(|j| [(j as f64 + f_sub) / m, (j as f64 - f_sub) / m])
        .filter(|f| *f > 0.0 && *f < 0.5)
        .min_by(|a, b| (a - coarse).abs().total_cmp(&(b - coarse).abs()))
        .unwrap_or(coarse);
    derive_mismatches(&fits, config, tone)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sample_channels, simulate_capture, ToneSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use proptest::prelude::*;

    fn sine(n: usize, amp: f64, f: f64, phase: f64, dc: f64) -> Vec<f64> {
        (0..n)
            .map(|k| amp * (2.0 * PI * f * k as f64 + phase).sin() + dc)
            .collect()
    }

    fn wrap(p: f64) -> f64 {
        let w = (p + PI).rem_euclid(2.0 * PI) - PI;
        if w == -PI {
            PI
        } else {
            w
        }
    }

    #[test]
    fn exact_sine_is_recovered() {
        let x = sine(1000, 0.9, 0.1, 0.3, 0.05);
        let fit = sine_fit_four_param(&x, 0.1 + 0.6 / 1000.0).unwrap();
        assert!((fit.amplitude / 0.9 - 1.0).abs() < 1e-10, "{fit:?}");
        assert!((fit.freq_rel / 0.1 - 1.0).abs() < 1e-10);
        assert!((fit.phase / 0.3 - 1.0).abs() < 1e-10);
        assert!((fit.dc / 0.05 - 1.0).abs() < 1e-10);
        assert!(fit.rms_residual < 1e-12);
    }

    #[test]
    fn quantized_sine_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..40 {
            let phase = rng.random_range(-PI..PI);
            let x: Vec<f64> = sine(4096, 0.9, 0.1, phase, 0.05)
                .into_iter()
                .map(|v| (v * 2048.0).round() / 2048.0)
                .collect();
            let guess = estimate_frequency(&x).unwrap();
            let fit = sine_fit_four_param(&x, guess).unwrap();
            assert!((fit.amplitude / 0.9 - 1.0).abs() < 1e-3);
            assert!(wrap(fit.phase - phase).abs() < 1e-3);
        }
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(sine_fit_four_param(&[0.0; 64], 0.1), Err(Error::DegenerateFit(_))));
        assert!(matches!(sine_fit_four_param(&[0.3; 64], 0.1), Err(Error::DegenerateFit(_))));
        assert!(matches!(sine_fit_four_param(&[0.3; 8], 0.1), Err(Error::Shape(_))));
        assert!(matches!(sine_fit_four_param(&[0.3; 64], 0.5), Err(Error::Config(_))));
    }

    #[test]
    fn residual_is_a_local_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = sine(2048, 0.8, 0.0731, 1.2, -0.02)
            .into_iter()
            .map(|v| v + rng.random_range(-1e-3..1e-3))
            .collect();
        let fit = sine_fit_four_param(&x, 0.073).unwrap();
        let base = fit.rss(&x);
        for d in [1e-6, -1e-6] {
            let mut p = fit.clone();
            p.amplitude += d;
            assert!(p.rss(&x) >= base);
            let mut p = fit.clone();
            p.freq_rel += d;
            assert!(p.rss(&x) >= base);
            let mut p = fit.clone();
            p.phase += d;
            assert!(p.rss(&x) >= base);
            let mut p = fit.clone();
            p.dc += d;
            assert!(p.rss(&x) >= base);
        }
    }

    fn fit_with(amplitude: f64, phase: f64, dc: f64) -> SineFit {
        SineFit {
            amplitude,
            freq_rel: 0.2,
            phase,
            dc,
            rms_residual: 0.0,
            iterations: 1,
        }
    }

    #[test]
    fn derive_examples() {
        let cfg = TiadcConfig::new(2, 1.0, 12).unwrap();
        let fits = [fit_with(1.0, 0.4, 0.0), fit_with(1.01, 0.4 + 2.0 * PI * 0.1, 0.0)];
        let est = derive_mismatches(&fits, &cfg, 0.1).unwrap();
        assert_eq!(est.gains[0], 0.0);
        assert!((est.gains[1] - 0.01).abs() < 1e-12);
        assert!(est.skews[1].abs() < 1e-12);

        let fits = [fit_with(1.0, 0.2, 0.1), fit_with(1.0, wrap(0.2 + 2.0 * PI * 0.1 * 1.01), 0.13)];
        let est = derive_mismatches(&fits, &cfg, 0.1).unwrap();
        assert!((est.skews[1] - 0.01).abs() < 1e-12, "{:?}", est.skews);
        assert!((est.offsets[1] - 0.03).abs() < 1e-12);
        assert_eq!((est.offsets[0], est.gains[0], est.skews[0]), (0.0, 0.0, 0.0));
    }

    #[test]
    fn derive_rejects_ambiguous_phase() {
        let cfg = TiadcConfig::new(2, 1.0, 12).unwrap();
        // a 0.6 Ts skew is outside the model region on every branch
        let fits = [fit_with(1.0, 0.0, 0.0), fit_with(1.0, wrap(2.0 * PI * 0.1 * 1.6), 0.0)];
        let err = derive_mismatches(&fits, &cfg, 0.1).unwrap_err();
        assert!(matches!(err, Error::Ambiguity { channel: 1, .. }), "{err}");
    }

    fn capture_estimate(profile: &MismatchProfile, bits: u32, phase: f64, amp: f64) -> MismatchEstimate {
        let cfg = TiadcConfig::new(profile.channels(), 1.0, bits).unwrap();
        let tone = ToneSpec::new(amp, 77.0 / 4096.0, phase);
        let n = DEFAULT_BLOCK_LEN * cfg.channels;
        let cap = simulate_capture(&tone, &cfg, profile, n).unwrap();
        let chans: Vec<Vec<f64>> = cap
            .per_channel
            .iter()
            .map(|c| c.iter().map(|&v| cfg.dequantize(v)).collect())
            .collect();
        estimate_mismatches(&chans, &cfg, None).unwrap()
    }

    #[test]
    fn capture_round_trip_12_bits() {
        let profile = MismatchProfile::new(vec![0.0, 0.02], vec![0.0, 0.01], vec![0.0, 0.01]).unwrap();
        let est = capture_estimate(&profile, 12, 0.7, 0.9);
        for m in 0..2 {
            assert!((est.offsets[m] - profile.offsets[m]).abs() <= 5e-4, "{est:?}");
            assert!((est.gains[m] - profile.gains[m]).abs() <= 5e-4, "{est:?}");
            assert!((est.skews[m] - profile.skews[m]).abs() <= 5e-4, "{est:?}");
        }
    }

    #[test]
    fn unquantized_round_trip_is_tight() {
        let profile = MismatchProfile::new(
            vec![0.0, 0.01, -0.01],
            vec![0.0, 0.03, -0.02],
            vec![0.0, -0.04, 0.02],
        )
        .unwrap();
        let cfg = TiadcConfig::new(3, 1.0, 12).unwrap();
        // above the sub-channel Nyquist: exercises the mirrored branch
        let tone = ToneSpec::new(0.8, 0.41, -2.0);
        let chans = sample_channels(&tone, &cfg, &profile, 1024).unwrap();
        let est = estimate_mismatches(&chans, &cfg, None).unwrap();
        assert!((est.tone_freq_rel - 0.41).abs() < 1e-12);
        for m in 0..3 {
            assert!((est.gains[m] - profile.gains[m]).abs() < 1e-9);
            assert!((est.skews[m] - profile.skews[m]).abs() < 1e-9);
            assert!((est.offsets[m] - profile.offsets[m]).abs() < 1e-9);
        }
    }

    fn skew_at_amplitude(amp: f64) -> f64 {
        let profile = MismatchProfile::gain_skew(vec![0.0, 0.01], vec![0.0, 0.015]).unwrap();
        let cfg = TiadcConfig::new(2, 1.0, 16).unwrap();
        let tone = ToneSpec::new(amp, 77.0 / 4096.0, 0.3);
        let chans = sample_channels(&tone, &cfg, &profile, 2048).unwrap();
        estimate_mismatches(&chans, &cfg, None).unwrap().skews[1]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn skew_estimate_is_amplitude_invariant(c in 0.01f64..=1.0) {
            let full = skew_at_amplitude(0.9);
            prop_assert!((skew_at_amplitude(0.9 * c) - full).abs() < 1e-9);
        }
    }

}
