//! Behavioural model of an M-channel time-interleaved ADC.
//!
//! Channel `m` takes sample `k` of the aggregate stream at nominal instant
//! `(k*M + m)*Ts`. A mismatched channel is modelled as
//!
//! ```text
//! a_m[k] = (1 + dg_m) * x(((k*M + m) + dt_m) * Ts) + do_m
//! ```
//!
//! where `dt_m` is in units of the aggregate sample period `Ts`.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Static converter parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiadcConfig {
    /// Number of sub-ADC channels.
    pub channels: usize,
    /// Aggregate sample rate.
    pub fs: f64,
    /// Quantizer word length.
    pub bits: u32,
    /// Input amplitude mapped to the largest positive code.
    pub full_scale: f64,
}

impl TiadcConfig {
    pub fn new(channels: usize, fs: f64, bits: u32) -> Result<Self> {
        let config = Self {
            channels,
            fs,
            bits,
            full_scale: 1.0,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn with_full_scale(mut self, full_scale: f64) -> Result<Self> {
        self.full_scale = full_scale;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels < 2 {
            return Err(Error::Config(format!(
                "channel count must be at least 2, got {}",
                self.channels
            )));
        }
        if !(2..=24).contains(&self.bits) {
            return Err(Error::Config(format!(
                "word length must be in 2..=24 bits, got {}",
                self.bits
            )));
        }
        if !(self.fs > 0.0 && self.fs.is_finite()) {
            return Err(Error::Config(format!("sample rate must be positive, got {}", self.fs)));
        }
        if !(self.full_scale > 0.0 && self.full_scale.is_finite()) {
            return Err(Error::Config(format!(
                "full scale must be positive, got {}",
                self.full_scale
            )));
        }
        Ok(())
    }

    /// Aggregate sample period `Ts`.
    pub fn ts(&self) -> f64 {
        1.0 / self.fs
    }

    /// Sub-ADC sample period `T1 = M * Ts`.
    pub fn sub_period(&self) -> f64 {
        self.channels as f64 * self.ts()
    }

    /// `2^(B-1)`, the number of codes per unit of full scale.
    pub fn code_scale(&self) -> f64 {
        (1u64 << (self.bits - 1)) as f64
    }

    pub fn code_min(&self) -> i32 {
        -(1i32 << (self.bits - 1))
    }

    pub fn code_max(&self) -> i32 {
        (1i32 << (self.bits - 1)) - 1
    }

    /// Amplitude of one LSB.
    pub fn lsb(&self) -> f64 {
        self.full_scale / self.code_scale()
    }

    pub fn dequantize(&self, code: i32) -> f64 {
        code as f64 * self.lsb()
    }
}

/// Single-tone analog input `x(t) = dc + A*sin(2*pi*f*t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToneSpec {
    pub amplitude: f64,
    /// Frequency as a fraction of the aggregate rate `fs`.
    pub freq_rel: f64,
    pub phase: f64,
    pub dc: f64,
}

impl ToneSpec {
    pub fn new(amplitude: f64, freq_rel: f64, phase: f64) -> Self {
        Self {
            amplitude,
            freq_rel,
            phase,
            dc: 0.0,
        }
    }

    pub fn validate(&self, config: &TiadcConfig) -> Result<()> {
        if !(self.amplitude > 0.0 && self.amplitude <= config.full_scale) {
            return Err(Error::Config(format!(
                "tone amplitude {} outside (0, {}]",
                self.amplitude, config.full_scale
            )));
        }
        if !(self.freq_rel > 0.0 && self.freq_rel < 0.5) {
            return Err(Error::Config(format!(
                "tone frequency {} fs outside (0, 0.5)",
                self.freq_rel
            )));
        }
        if self.amplitude + self.dc.abs() > config.full_scale {
            return Err(Error::Config(format!(
                "tone amplitude {} plus dc {} exceeds full scale {}",
                self.amplitude, self.dc, config.full_scale
            )));
        }
        Ok(())
    }

    /// Value of the tone at time `t`, expressed in units of `Ts`.
    pub fn value_at(&self, t_in_ts: f64) -> f64 {
        self.dc + self.amplitude * (2.0 * PI * self.freq_rel * t_in_ts + self.phase).sin()
    }
}

/// Per-channel offset, gain and sample-time mismatch.
#[derive(Debug, Clone, PartialEq)]
pub struct MismatchProfile {
    /// Additive offsets, in full-scale units.
    pub offsets: Vec<f64>,
    /// Relative gain errors.
    pub gains: Vec<f64>,
    /// Sampling-instant errors in units of `Ts`.
    pub skews: Vec<f64>,
}

impl MismatchProfile {
    pub fn zeros(channels: usize) -> Self {
        Self {
            offsets: vec![0.0; channels],
            gains: vec![0.0; channels],
            skews: vec![0.0; channels],
        }
    }

    pub fn new(offsets: Vec<f64>, gains: Vec<f64>, skews: Vec<f64>) -> Result<Self> {
        let profile = Self {
            offsets,
            gains,
            skews,
        };
        profile.validate()?;
        Ok(profile)
    }

    /// Gain and skew only, zero offsets.
    pub fn gain_skew(gains: Vec<f64>, skews: Vec<f64>) -> Result<Self> {
        Self::new(vec![0.0; gains.len()], gains, skews)
    }

    pub fn channels(&self) -> usize {
        self.gains.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.gains.len();
        if self.offsets.len() != m || self.skews.len() != m {
            return Err(Error::Config(format!(
                "mismatch arrays have different lengths: offsets {}, gains {}, skews {}",
                self.offsets.len(),
                m,
                self.skews.len()
            )));
        }
        for (ch, (&g, &t)) in self.gains.iter().zip(&self.skews).enumerate() {
            if !(g.abs() < 0.5) || !(t.abs() < 0.5) {
                return Err(Error::Config(format!(
                    "channel {ch}: |gain| and |skew| must be below 0.5 (gain {g}, skew {t})"
                )));
            }
        }
        if self.offsets.iter().any(|o| !o.is_finite()) {
            return Err(Error::Config("offsets must be finite".into()));
        }
        Ok(())
    }

    fn check_channels(&self, config: &TiadcConfig) -> Result<()> {
        self.validate()?;
        if self.channels() != config.channels {
            return Err(Error::Config(format!(
                "mismatch profile has {} channels, converter has {}",
                self.channels(),
                config.channels
            )));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.offsets
            .iter()
            .chain(&self.gains)
            .chain(&self.skews)
            .all(|&v| v == 0.0)
    }
}

/// Where a capture came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Simulated,
    File,
}

/// Quantized output of every sub-ADC plus the interleaved aggregate stream.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelCapture {
    pub config: TiadcConfig,
    pub per_channel: Vec<Vec<i32>>,
    pub interleaved: Vec<i32>,
    pub origin: Origin,
}

impl ChannelCapture {
    pub fn from_per_channel(
        config: TiadcConfig,
        per_channel: Vec<Vec<i32>>,
        origin: Origin,
    ) -> Result<Self> {
        if per_channel.len() != config.channels {
            return Err(Error::Config(format!(
                "{} channel streams for a {}-channel converter",
                per_channel.len(),
                config.channels
            )));
        }
        let interleaved = interleave_channels(&per_channel)?;
        let capture = Self {
            config,
            per_channel,
            interleaved,
            origin,
        };
        capture.check_codes()?;
        Ok(capture)
    }

    pub fn from_interleaved(config: TiadcConfig, interleaved: Vec<i32>, origin: Origin) -> Result<Self> {
        let per_channel = deinterleave(&interleaved, config.channels)?;
        let capture = Self {
            config,
            per_channel,
            interleaved,
            origin,
        };
        capture.check_codes()?;
        Ok(capture)
    }

    fn check_codes(&self) -> Result<()> {
        let (lo, hi) = (self.config.code_min(), self.config.code_max());
        if let Some(pos) = self.interleaved.iter().position(|c| !(lo..=hi).contains(c)) {
            return Err(Error::Shape(format!(
                "code {} at index {pos} outside [{lo}, {hi}]",
                self.interleaved[pos]
            )));
        }
        Ok(())
    }

    /// Samples per channel.
    pub fn len_per_channel(&self) -> usize {
        self.per_channel.first().map_or(0, Vec::len)
    }

    pub fn dequantized(&self) -> Vec<f64> {
        self.interleaved.iter().map(|&c| self.config.dequantize(c)).collect()
    }
}

/// Real-valued (pre-quantization) channel samples.
pub fn sample_channels(
    tone: &ToneSpec,
    config: &TiadcConfig,
    profile: &MismatchProfile,
    n_per_channel: usize,
) -> Result<Vec<Vec<f64>>> {
    config.validate()?;
    profile.check_channels(config)?;
    if n_per_channel == 0 {
        return Err(Error::Shape("n_per_channel must be at least 1".into()));
    }
    let m_total = config.channels;
    let streams = (0..m_total)
        .map(|m| {
            let gain = 1.0 + profile.gains[m];
            (0..n_per_channel)
                .map(|k| {
                    let t = (k * m_total + m) as f64 + profile.skews[m];
                    gain * tone.value_at(t) + profile.offsets[m]
                })
                .collect()
        })
        .collect();
    Ok(streams)
}

/// Mid-rise saturating quantizer, round half away from zero.
pub fn quantize_sample(sample: f64, config: &TiadcConfig) -> i32 {
    let code = (sample / config.full_scale * config.code_scale()).round();
    code.clamp(config.code_min() as f64, config.code_max() as f64) as i32
}

pub fn quantize_stream(samples: &[f64], config: &TiadcConfig) -> Vec<i32> {
    samples.iter().map(|&s| quantize_sample(s, config)).collect()
}

/// Merges `M` equal-length channel streams: `out[k*M + m] = ch[m][k]`.
pub fn interleave_channels<T: Copy>(per_channel: &[Vec<T>]) -> Result<Vec<T>> {
    let Some(first) = per_channel.first() else {
        return Ok(Vec::new());
    };
    let k_len = first.len();
    if let Some((m, ch)) = per_channel.iter().enumerate().find(|(_, c)| c.len() != k_len) {
        return Err(Error::Shape(format!(
            "channel {m} has {} samples, channel 0 has {k_len}",
            ch.len()
        )));
    }
    let mut out = Vec::with_capacity(k_len * per_channel.len());
    for k in 0..k_len {
        out.extend(per_channel.iter().map(|ch| ch[k]));
    }
    Ok(out)
}

/// Inverse of [`interleave_channels`].
pub fn deinterleave<T: Copy>(stream: &[T], channels: usize) -> Result<Vec<Vec<T>>> {
    if channels == 0 {
        return Err(Error::Config("channel count must be positive".into()));
    }
    if stream.len() % channels != 0 {
        return Err(Error::Shape(format!(
            "stream length {} is not a multiple of {channels} channels",
            stream.len()
        )));
    }
    Ok((0..channels)
        .map(|m| stream.iter().skip(m).step_by(channels).copied().collect())
        .collect())
}

/// Quantized capture with the given mismatches.
pub fn simulate_capture(
    tone: &ToneSpec,
    config: &TiadcConfig,
    profile: &MismatchProfile,
    n_total: usize,
) -> Result<ChannelCapture> {
    tone.validate(config)?;
    if n_total == 0 || n_total % config.channels != 0 {
        return Err(Error::Shape(format!(
            "total length {n_total} is not a positive multiple of {} channels",
            config.channels
        )));
    }
    let analog = sample_channels(tone, config, profile, n_total / config.channels)?;
    let codes = analog.iter().map(|s| quantize_stream(s, config)).collect();
    ChannelCapture::from_per_channel(*config, codes, Origin::Simulated)
}

/// Reference capture of a mismatch-free converter.
pub fn ideal_capture(tone: &ToneSpec, config: &TiadcConfig, n_total: usize) -> Result<ChannelCapture> {
    simulate_capture(tone, config, &MismatchProfile::zeros(config.channels), n_total)
}
