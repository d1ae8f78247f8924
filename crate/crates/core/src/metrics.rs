//! Spectra, SINAD/ENOB and mismatch-spur tables.
//!
//! Spectra are one-sided (`n_fft/2 + 1` bins) and normalized so that a
//! coherent full-scale sine reads 0 dBFS in its bin. SINAD defaults to the
//! coherent, rectangular-window measurement: the signal bin against the
//! sum of every other non-DC bin.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Floor for `log10(0)`.
pub const DBFS_FLOOR: f64 = -300.0;

/// Default analysis record length.
pub const DEFAULT_NFFT: usize = 4096;

/// Bins on either side of the signal (and DC) assigned to them in windowed mode.
const WINDOWED_LEAKAGE_BINS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SinadMode {
    /// Rectangular window; the tone must sit exactly on a bin.
    #[default]
    Coherent,
    /// 4-term Blackman-Harris window with +-3 bin leakage exclusion.
    Windowed,
}

fn check_record(stream: &[f64], n_fft: usize) -> Result<()> {
    if n_fft < 2 || !n_fft.is_power_of_two() {
        return Err(Error::Config(format!("n_fft must be a power of two >= 2, got {n_fft}")));
    }
    if stream.len() < n_fft {
        return Err(Error::Shape(format!(
            "stream has {} samples, spectrum needs {n_fft}",
            stream.len()
        )));
    }
    Ok(())
}

fn one_sided_dft(samples: impl Iterator<Item = f64>, n_fft: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = samples.map(|x| Complex64::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n_fft).process(&mut buf);
    buf.truncate(n_fft / 2 + 1);
    buf
}

/// Linear `|X[k]|` for `k = 0..=n_fft/2` of the first `n_fft` samples.
pub fn dft_magnitudes(stream: &[f64], n_fft: usize) -> Result<Vec<f64>> {
    check_record(stream, n_fft)?;
    Ok(one_sided_dft(stream[..n_fft].iter().copied(), n_fft)
        .iter()
        .map(|c| c.norm())
        .collect())
}

/// Magnitude spectrum in dBFS.
pub fn power_spectrum(stream: &[f64], n_fft: usize, full_scale: f64) -> Result<Vec<f64>> {
    let scale = 2.0 / (n_fft as f64 * full_scale);
    Ok(dft_magnitudes(stream, n_fft)?
        .into_iter()
        .map(|m| to_db(m * scale))
        .collect())
}

fn to_db(linear: f64) -> f64 {
    if linear > 0.0 {
        (20.0 * linear.log10()).max(DBFS_FLOOR)
    } else {
        DBFS_FLOOR
    }
}

/// Bin index of a coherent tone, or a coherence error.
pub fn coherent_bin(freq_rel: f64, n_fft: usize) -> Result<usize> {
    let exact = freq_rel * n_fft as f64;
    let bin = exact.round();
    if (exact - bin).abs() > 1e-6 || bin < 1.0 || bin >= (n_fft / 2) as f64 {
        return Err(Error::Coherence { freq_rel, n_fft });
    }
    Ok(bin as usize)
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Nearest coherent frequency `J/n_fft` to `nominal`, with `J` odd and
/// coprime to `n_fft`.
pub fn coherent_frequency(nominal: f64, n_fft: usize) -> Result<f64> {
    if !(nominal > 0.0 && nominal < 0.5) {
        return Err(Error::Config(format!("nominal frequency {nominal} outside (0, 0.5)")));
    }
    let target = nominal * n_fft as f64;
    let half = n_fft / 2;
    (1..half)
        .filter(|&j| j % 2 == 1 && gcd(j, n_fft) == 1)
        .min_by(|&a, &b| {
            let da = (a as f64 - target).abs();
            let db = (b as f64 - target).abs();
            da.total_cmp(&db).then(a.cmp(&b))
        })
        .map(|j| j as f64 / n_fft as f64)
        .ok_or_else(|| Error::Config(format!("no coherent bin available for n_fft={n_fft}")))
}

fn blackman_harris(n: usize) -> Vec<f64> {
    const A: [f64; 4] = [0.35875, 0.48829, 0.14128, 0.01168];
    (0..n)
        .map(|i| {
            let x = 2.0 * PI * i as f64 / n as f64;
            A[0] - A[1] * x.cos() + A[2] * (2.0 * x).cos() - A[3] * (3.0 * x).cos()
        })
        .collect()
}

/// Coherent SINAD in dB.
pub fn sinad(stream: &[f64], signal_freq_rel: f64, n_fft: usize) -> Result<f64> {
    sinad_with(stream, signal_freq_rel, n_fft, SinadMode::Coherent)
}

pub fn sinad_with(stream: &[f64], signal_freq_rel: f64, n_fft: usize, mode: SinadMode) -> Result<f64> {
    check_record(stream, n_fft)?;
    let (signal, noise) = match mode {
        SinadMode::Coherent => {
            let bin = coherent_bin(signal_freq_rel, n_fft)?;
            let power = bin_powers(one_sided_dft(stream[..n_fft].iter().copied(), n_fft));
            let noise: f64 = power
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != 0 && k != bin)
                .map(|(_, p)| p)
                .sum();
            (power[bin], noise)
        }
        SinadMode::Windowed => {
            let half = n_fft / 2;
            let bin = (signal_freq_rel * n_fft as f64).round() as usize;
            if bin == 0 || bin >= half {
                return Err(Error::Config(format!(
                    "signal frequency {signal_freq_rel} outside the analysis band"
                )));
            }
            let window = blackman_harris(n_fft);
            let samples = stream[..n_fft].iter().zip(&window).map(|(x, w)| x * w);
            let power = bin_powers(one_sided_dft(samples, n_fft));
            let lo = bin.saturating_sub(WINDOWED_LEAKAGE_BINS);
            let hi = (bin + WINDOWED_LEAKAGE_BINS).min(half);
            let signal: f64 = power[lo..=hi].iter().sum();
            let noise: f64 = power
                .iter()
                .enumerate()
                .filter(|&(k, _)| k > WINDOWED_LEAKAGE_BINS && !(lo..=hi).contains(&k))
                .map(|(_, p)| p)
                .sum();
            (signal, noise)
        }
    };
    if noise <= 0.0 {
        return Ok(f64::INFINITY);
    }
    if signal <= 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(10.0 * (signal / noise).log10())
}

/// One-sided bin powers; interior bins carry both the positive and negative
/// frequency halves.
fn bin_powers(spectrum: Vec<Complex64>) -> Vec<f64> {
    let last = spectrum.len() - 1;
    spectrum
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let p = c.norm_sqr();
            if k == 0 || k == last {
                p
            } else {
                2.0 * p
            }
        })
        .collect()
}

pub fn enob(sinad_db: f64) -> f64 {
    (sinad_db - 1.76) / 6.02
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpurKind {
    /// Gain / timing image at `k*fs/M +- f_in`.
    Image,
    /// Offset tone at `k*fs/M`.
    Offset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spur {
    pub kind: SpurKind,
    pub k: usize,
    /// Folded frequency in `[0, 0.5]` of `fs`.
    pub freq_rel: f64,
    pub bin: usize,
    pub level_dbfs: f64,
    /// The expected spur lands on the signal bin and cannot be measured.
    pub collides: bool,
}

fn fold(freq_rel: f64) -> f64 {
    let f = freq_rel.rem_euclid(1.0);
    if f > 0.5 {
        1.0 - f
    } else {
        f
    }
}

/// Reads the mismatch spur levels out of a dBFS spectrum.
pub fn spur_levels(spectrum_dbfs: &[f64], channels: usize, signal_freq_rel: f64) -> Result<Vec<Spur>> {
    if spectrum_dbfs.len() < 2 {
        return Err(Error::Shape("spectrum must have at least two bins".into()));
    }
    if channels == 0 {
        return Err(Error::Config("channel count must be positive".into()));
    }
    let n_fft = 2 * (spectrum_dbfs.len() - 1);
    let signal_bin = (fold(signal_freq_rel) * n_fft as f64).round() as usize;
    let mut spurs = Vec::new();
    let mut push = |kind, k, freq: f64| {
        let freq_rel = fold(freq);
        let bin = ((freq_rel * n_fft as f64).round() as usize).min(n_fft / 2);
        spurs.push(Spur {
            kind,
            k,
            freq_rel,
            bin,
            level_dbfs: spectrum_dbfs[bin],
            collides: bin == signal_bin,
        });
    };
    for k in 1..channels {
        let base = k as f64 / channels as f64;
        push(SpurKind::Image, k, base - signal_freq_rel);
        push(SpurKind::Image, k, base + signal_freq_rel);
        push(SpurKind::Offset, k, base);
    }
    // negative and positive images of k and M-k fold onto the same bins
    let mut seen = std::collections::HashSet::new();
    spurs.retain(|s| seen.insert((s.kind == SpurKind::Image, s.bin)));
    Ok(spurs)
}

/// Highest measurable spur level of the requested kind.
pub fn max_spur(spurs: &[Spur], kind: Option<SpurKind>) -> Option<f64> {
    spurs
        .iter()
        .filter(|s| !s.collides && kind.is_none_or(|k| s.kind == k))
        .map(|s| s.level_dbfs)
        .max_by(f64::total_cmp)
}

/// Everything the experiments need from one record.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    pub n_fft: usize,
    pub magnitudes_dbfs: Vec<f64>,
    pub signal_bin: usize,
    pub sinad_db: f64,
    pub enob: f64,
    pub spurs: Vec<Spur>,
}

impl SpectrumReport {
    pub fn analyze(
        stream: &[f64],
        signal_freq_rel: f64,
        n_fft: usize,
        full_scale: f64,
        channels: usize,
        mode: SinadMode,
    ) -> Result<Self> {
        let magnitudes_dbfs = power_spectrum(stream, n_fft, full_scale)?;
        let sinad_db = sinad_with(stream, signal_freq_rel, n_fft, mode)?;
        let spurs = spur_levels(&magnitudes_dbfs, channels, signal_freq_rel)?;
        Ok(Self {
            n_fft,
            signal_bin: (signal_freq_rel * n_fft as f64).round() as usize,
            sinad_db,
            enob: enob(sinad_db),
            spurs,
            magnitudes_dbfs,
        })
    }

    /// Largest image spur (gain/timing mismatch), in dBFS.
    pub fn max_image_dbfs(&self) -> Option<f64> {
        max_spur(&self.spurs, Some(SpurKind::Image))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_spectrum_csv(out, &self.magnitudes_dbfs)
    }
}

/// `bin_index,freq_rel,magnitude_dbfs` rows for external plotting.
pub fn write_spectrum_csv<W: Write>(mut out: W, spectrum_dbfs: &[f64]) -> std::io::Result<()> {
    let n_fft = 2 * spectrum_dbfs.len().saturating_sub(1);
    writeln!(out, "bin_index,freq_rel,magnitude_dbfs")?;
    for (k, db) in spectrum_dbfs.iter().enumerate() {
        writeln!(out, "{k},{:.9},{:.6}", k as f64 / n_fft.max(1) as f64, db)?;
    }
    Ok(())
}

/// Index of the largest non-DC bin.
pub fn peak_bin(magnitudes: &[f64]) -> usize {
    magnitudes
        .iter()
        .enumerate()
        .skip(1)
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0, |(k, _)| k)
}
