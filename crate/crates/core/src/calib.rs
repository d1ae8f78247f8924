//! First-order correction filter bank.
//!
//! Channel `m` is corrected by an FIR filter whose response approximates
//! `(1 - dg_m) - j*w*dt_m/M` over the sub-channel band: a gain term at
//! `n = 0` plus a scaled ideal differentiator for the timing error,
//!
//! ```text
//! w_m[n] = (-1)^(n+1) / n * dt_m / M     n != 0
//! w_m[0] = 1 - dg_m                      (SubtractGain)
//! w_m[0] = 1 / (1 + dg_m)                (DivideGain)
//! ```
//!
//! The two-sided filter is truncated to `n in [-ceil(N/2)+1, floor(N/2)]`
//! and made causal with a delay of `D = ceil(N/2) - 1` applied to every
//! channel, including ones that need no correction.

use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::ops::Range;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{ChannelCapture, MismatchProfile, TiadcConfig};
use crate::polyphase::{self, PolyphasePlan};

pub const DEFAULT_TAPS: usize = 30;
pub const DEFAULT_COEFF_BITS: u32 = 30;

/// How the gain error enters the centre tap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    /// `w[0] = 1 - dg`
    #[default]
    SubtractGain,
    /// `w[0] = 1 / (1 + dg)`
    DivideGain,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::SubtractGain => "sub",
            Variant::DivideGain => "div",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sub" | "subtract" => Ok(Variant::SubtractGain),
            "div" | "divide" => Ok(Variant::DivideGain),
            other => Err(Error::Config(format!("unknown filter variant '{other}' (sub|div)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterSpec {
    pub n_taps: usize,
    /// Coefficient word length `W`; taps are stored as Q2.(W-2).
    pub coeff_bits: u32,
    pub variant: Variant,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            n_taps: DEFAULT_TAPS,
            coeff_bits: DEFAULT_COEFF_BITS,
            variant: Variant::SubtractGain,
        }
    }
}

impl FilterSpec {
    pub fn new(n_taps: usize, coeff_bits: u32, variant: Variant) -> Result<Self> {
        let spec = Self {
            n_taps,
            coeff_bits,
            variant,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_taps < 1 {
            return Err(Error::Config("filter needs at least one tap".into()));
        }
        if !(8..=32).contains(&self.coeff_bits) {
            return Err(Error::Config(format!(
                "coefficient word length must be in 8..=32, got {}",
                self.coeff_bits
            )));
        }
        Ok(())
    }

    /// Index of the first tap, `-ceil(N/2) + 1`.
    pub fn first_index(&self) -> i64 {
        1 - self.n_taps.div_ceil(2) as i64
    }

    /// Index of the last tap, `floor(N/2)`.
    pub fn last_index(&self) -> i64 {
        (self.n_taps / 2) as i64
    }

    /// Causal delay `D`, in sub-channel samples.
    pub fn delay(&self) -> usize {
        self.n_taps.div_ceil(2) - 1
    }

    pub fn frac_bits(&self) -> u32 {
        self.coeff_bits - 2
    }
}

/// Real-valued taps for one channel, ordered from `spec.first_index()`.
///
/// For even `N` the last index has no mirror inside the range; that tap is
/// left at zero so the timing part stays odd.
pub fn design_taps(gain: f64, skew: f64, channels: usize, spec: &FilterSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    if spec.variant == Variant::DivideGain && 1.0 + gain == 0.0 {
        return Err(Error::Division("gain mismatch of -1 has no reciprocal".into()));
    }
    if !(gain.abs() < 0.5 && skew.abs() < 0.5) {
        return Err(Error::Config(format!(
            "mismatch outside the first-order region: gain {gain}, skew {skew}"
        )));
    }
    if channels < 2 {
        return Err(Error::Config(format!("need at least 2 channels, got {channels}")));
    }
    let centre = match spec.variant {
        Variant::SubtractGain => 1.0 - gain,
        Variant::DivideGain => 1.0 / (1.0 + gain),
    };
    let slope = skew / channels as f64;
    let symmetric_limit = -spec.first_index();
    Ok((spec.first_index()..=spec.last_index())
        .map(|n| match n {
            0 => centre,
            n if n.abs() > symmetric_limit => 0.0,
            n => {
                let sign = if n % 2 == 0 { -1.0 } else { 1.0 };
                sign / n as f64 * slope
            }
        })
        .collect())
}

/// Rounds taps to Q2.(W-2) integers.
pub fn quantize_taps(taps: &[f64], coeff_bits: u32) -> Result<Vec<i64>> {
    if !(8..=32).contains(&coeff_bits) {
        return Err(Error::Config(format!(
            "coefficient word length must be in 8..=32, got {coeff_bits}"
        )));
    }
    let frac_bits = coeff_bits - 2;
    let scale = (1u64 << frac_bits) as f64;
    let (lo, hi) = (-(1i64 << (coeff_bits - 1)), (1i64 << (coeff_bits - 1)) - 1);
    taps.iter()
        .map(|&t| {
            if !(t.abs() < 2.0) {
                return Err(Error::Overflow { value: t, frac_bits });
            }
            let q = (t * scale).round() as i64;
            if !(lo..=hi).contains(&q) {
                return Err(Error::Overflow { value: t, frac_bits });
            }
            Ok(q)
        })
        .collect()
}

pub fn dequantize_taps(taps_fx: &[i64], coeff_bits: u32) -> Vec<f64> {
    let scale = (1u64 << (coeff_bits - 2)) as f64;
    taps_fx.iter().map(|&q| q as f64 / scale).collect()
}

/// `sum_n w[n] * exp(-j*omega*n)`, with `taps[0]` at index `first_index`.
pub fn filter_frequency_response(taps: &[f64], first_index: i64, omega: f64) -> Complex64 {
    taps.iter()
        .enumerate()
        .map(|(i, &w)| {
            let n = first_index + i as i64;
            w * Complex64::from_polar(1.0, -omega * n as f64)
        })
        .sum()
}

/// Response the truncated filter converges to for `|omega| < pi`.
pub fn ideal_response(gain: f64, skew: f64, channels: usize, omega: f64) -> Complex64 {
    debug_assert!(omega.abs() <= PI);
    Complex64::new(1.0 - gain, -omega * skew / channels as f64)
}

/// Per-channel correction filters for one converter.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub spec: FilterSpec,
    pub real_taps: Vec<Vec<f64>>,
    pub fixed_taps: Vec<Vec<i64>>,
    /// Offsets subtracted before filtering, in full-scale units.
    pub offsets: Vec<f64>,
}

impl FilterBank {
    pub fn design(profile: &MismatchProfile, spec: &FilterSpec) -> Result<Self> {
        profile.validate()?;
        let channels = profile.channels();
        let real_taps = profile
            .gains
            .iter()
            .zip(&profile.skews)
            .map(|(&g, &t)| design_taps(g, t, channels, spec))
            .collect::<Result<Vec<_>>>()?;
        let fixed_taps = real_taps
            .iter()
            .map(|t| quantize_taps(t, spec.coeff_bits))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec: *spec,
            real_taps,
            fixed_taps,
            offsets: profile.offsets.clone(),
        })
    }

    pub fn identity(channels: usize, spec: &FilterSpec) -> Result<Self> {
        Self::design(&MismatchProfile::zeros(channels), spec)
    }

    pub fn channels(&self) -> usize {
        self.real_taps.len()
    }

    pub fn delay(&self) -> usize {
        self.spec.delay()
    }

    /// Coefficient table: `channel,tap_index,real_value,fixed_point_integer,W,format`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "channel,tap_index,real_value,fixed_point_integer,W,format")?;
        let w = self.spec.coeff_bits;
        for (ch, (real, fixed)) in self.real_taps.iter().zip(&self.fixed_taps).enumerate() {
            for (i, (r, q)) in real.iter().zip(fixed).enumerate() {
                let n = self.spec.first_index() + i as i64;
                writeln!(out, "{ch},{n},{r:.17e},{q},{w},Q2.{}", w - 2)?;
            }
        }
        Ok(())
    }

    /// Parses a coefficient table written by [`FilterBank::write_csv`].
    ///
    /// The fixed-point column is authoritative; offsets are not part of the
    /// table and come back as zero.
    pub fn read_csv<R: BufRead>(input: R, variant: Variant) -> Result<Self> {
        let mut rows: Vec<(usize, i64, f64, i64, u32)> = Vec::new();
        for (line_no, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line_no == 0 || line.is_empty() {
                continue;
            }
            let bad = |what: &str| Error::Config(format!("coefficient table line {}: {what}", line_no + 1));
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 6 {
                return Err(bad("expected 6 columns"));
            }
            let ch = cols[0].parse().map_err(|_| bad("bad channel"))?;
            let n = cols[1].parse().map_err(|_| bad("bad tap index"))?;
            let r = cols[2].parse().map_err(|_| bad("bad real value"))?;
            let q = cols[3].parse().map_err(|_| bad("bad fixed-point value"))?;
            let w: u32 = cols[4].parse().map_err(|_| bad("bad word length"))?;
            if cols[5] != format!("Q2.{}", w.saturating_sub(2)) {
                return Err(bad("format tag does not match W"));
            }
            rows.push((ch, n, r, q, w));
        }
        let Some(&(_, _, _, _, coeff_bits)) = rows.first() else {
            return Err(Error::Config("coefficient table is empty".into()));
        };
        let channels = rows.iter().map(|r| r.0).max().unwrap_or(0) + 1;
        let n_taps = rows.iter().filter(|r| r.0 == 0).count();
        let spec = FilterSpec::new(n_taps, coeff_bits, variant)?;
        let mut real_taps = vec![vec![0.0; n_taps]; channels];
        let mut fixed_taps = vec![vec![0i64; n_taps]; channels];
        let mut seen = vec![vec![false; n_taps]; channels];
        for (ch, n, r, q, w) in rows {
            let slot = n - spec.first_index();
            if w != coeff_bits || slot < 0 || slot as usize >= n_taps || seen[ch][slot as usize] {
                return Err(Error::Config(format!(
                    "coefficient table: inconsistent entry for channel {ch}, tap {n}"
                )));
            }
            let slot = slot as usize;
            seen[ch][slot] = true;
            real_taps[ch][slot] = r;
            fixed_taps[ch][slot] = q;
        }
        if seen.iter().flatten().any(|s| !s) {
            return Err(Error::Config("coefficient table is missing taps".into()));
        }
        Ok(Self {
            spec,
            real_taps,
            fixed_taps,
            offsets: vec![0.0; channels],
        })
    }
}

/// Calibrated output of one channel.
///
/// `samples[k]` estimates the ideal channel sample `k - delay`; only
/// `valid` is free of start-up transient.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedChannel {
    pub samples: Vec<f64>,
    pub delay: usize,
    pub valid: Range<usize>,
}

fn offset_code(offset: f64, config: &TiadcConfig) -> i32 {
    (offset / config.lsb()).round() as i32
}

fn check_stream(len: usize, spec: &FilterSpec, taps_len: usize) -> Result<()> {
    if taps_len != spec.n_taps {
        return Err(Error::Shape(format!(
            "{taps_len} taps supplied for a {}-tap filter",
            spec.n_taps
        )));
    }
    if len < spec.n_taps {
        return Err(Error::Shape(format!(
            "stream of {len} samples is shorter than the {}-tap filter",
            spec.n_taps
        )));
    }
    Ok(())
}

/// Offset subtraction, exact integer filtering and scaling back to amplitude
/// units, using the serial convolution.
pub fn calibrate_channel(
    stream: &[i32],
    taps_fx: &[i64],
    offset: f64,
    spec: &FilterSpec,
    config: &TiadcConfig,
) -> Result<CalibratedChannel> {
    calibrate_channel_with(stream, taps_fx, offset, spec, config, None)
}

/// As [`calibrate_channel`]; with a plan the convolution runs on the
/// polyphase engine (bit-identical result).
pub fn calibrate_channel_with(
    stream: &[i32],
    taps_fx: &[i64],
    offset: f64,
    spec: &FilterSpec,
    config: &TiadcConfig,
    plan: Option<&PolyphasePlan>,
) -> Result<CalibratedChannel> {
    check_stream(stream.len(), spec, taps_fx.len())?;
    let off = offset_code(offset, config);
    let centred: Vec<i32> = stream.iter().map(|&c| c - off).collect();
    let acc = match plan {
        Some(plan) => polyphase::convolve(&centred, taps_fx, plan)?,
        None => polyphase::serial_convolve(&centred, taps_fx),
    };
    let scale = config.lsb() / (1u64 << spec.frac_bits()) as f64;
    Ok(CalibratedChannel {
        samples: acc.iter().map(|&a| a as f64 * scale).collect(),
        delay: spec.delay(),
        valid: spec.n_taps - 1..stream.len(),
    })
}

/// Floating-point counterpart of [`calibrate_channel`] for unquantized
/// streams and real-valued taps.
pub fn calibrate_channel_real(stream: &[f64], taps: &[f64], offset: f64, spec: &FilterSpec) -> Result<CalibratedChannel> {
    check_stream(stream.len(), spec, taps.len())?;
    let samples = (0..stream.len())
        .map(|n| {
            taps.iter()
                .take(n + 1)
                .enumerate()
                .map(|(i, &h)| h * (stream[n - i] - offset))
                .sum()
        })
        .collect();
    Ok(CalibratedChannel {
        samples,
        delay: spec.delay(),
        valid: spec.n_taps - 1..stream.len(),
    })
}

/// Interleaved calibrated output of the whole converter.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedCapture {
    pub interleaved: Vec<f64>,
    /// Per-channel input index of the first output sample.
    pub first_input_index: usize,
    pub channels: usize,
}

impl CalibratedCapture {
    /// Aggregate-stream index of `interleaved[0]`.
    pub fn first_aggregate_index(&self) -> usize {
        self.first_input_index * self.channels
    }

    /// The raw dequantized samples covering the same instants.
    pub fn aligned_raw(&self, capture: &ChannelCapture) -> Vec<f64> {
        let start = self.first_aggregate_index();
        capture.interleaved[start..start + self.interleaved.len()]
            .iter()
            .map(|&c| capture.config.dequantize(c))
            .collect()
    }
}

fn merge_channels(outputs: Vec<CalibratedChannel>, spec: &FilterSpec) -> Result<CalibratedCapture> {
    let channels = outputs.len();
    let trimmed: Vec<Vec<f64>> = outputs
        .into_iter()
        .map(|c| c.samples[c.valid].to_vec())
        .collect();
    Ok(CalibratedCapture {
        interleaved: crate::model::interleave_channels(&trimmed)?,
        first_input_index: spec.n_taps - 1 - spec.delay(),
        channels,
    })
}

fn check_bank(capture_channels: usize, bank: &FilterBank) -> Result<()> {
    if bank.channels() != capture_channels {
        return Err(Error::Config(format!(
            "filter bank has {} channels, capture has {capture_channels}",
            bank.channels()
        )));
    }
    Ok(())
}

/// Calibrates every channel and re-interleaves the transient-free part.
pub fn calibrate_capture(capture: &ChannelCapture, bank: &FilterBank, plan: Option<&PolyphasePlan>) -> Result<CalibratedCapture> {
    check_bank(capture.config.channels, bank)?;
    let outputs = capture
        .per_channel
        .iter()
        .enumerate()
        .map(|(m, stream)| {
            calibrate_channel_with(
                stream,
                &bank.fixed_taps[m],
                bank.offsets[m],
                &bank.spec,
                &capture.config,
                plan,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    merge_channels(outputs, &bank.spec)
}

/// Real-arithmetic calibration of unquantized channel streams.
pub fn calibrate_real(per_channel: &[Vec<f64>], bank: &FilterBank) -> Result<CalibratedCapture> {
    check_bank(per_channel.len(), bank)?;
    let outputs = per_channel
        .iter()
        .enumerate()
        .map(|(m, s)| calibrate_channel_real(s, &bank.real_taps[m], bank.offsets[m], &bank.spec))
        .collect::<Result<Vec<_>>>()?;
    merge_channels(outputs, &bank.spec)
}
