//! Experiment scenarios: parameter blocks, built-in figure configurations,
//! scenario and sweep runners, capture files and config files.

pub mod capture_file;
pub mod config;
mod run;

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::calib::{FilterSpec, Variant};
use crate::error::{Error, Result};
use crate::metrics::{coherent_frequency, SinadMode, DEFAULT_NFFT};
use crate::model::{MismatchProfile, TiadcConfig, ToneSpec};
use crate::polyphase::PolyphasePlan;

pub use run::{run_on_capture, run_scenario, run_sweep, run_with_bank, ScenarioResult, SweepAxis, SweepRow, SweepTable};

/// Default tone amplitude, in units of full scale.
pub const DEFAULT_AMPLITUDE: f64 = 0.95;

/// Where the correction coefficients come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoeffMode {
    /// Designed from the injected mismatch profile.
    #[default]
    GroundTruth,
    /// Estimated block by block from the capture; the estimate from block
    /// `k` calibrates block `k+1`.
    Estimated,
}

impl CoeffMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CoeffMode::GroundTruth => "truth",
            CoeffMode::Estimated => "est",
        }
    }
}

impl std::str::FromStr for CoeffMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "truth" | "ground_truth" => Ok(CoeffMode::GroundTruth),
            "est" | "estimated" => Ok(CoeffMode::Estimated),
            other => Err(Error::Config(format!("unknown coefficient mode '{other}' (truth|est)"))),
        }
    }
}

/// One complete experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub config: TiadcConfig,
    pub amplitude: f64,
    /// Requested input frequency; the run uses the nearest coherent bin.
    pub freq_nominal: f64,
    /// Fixed input phase; drawn from `seed` when absent.
    pub phase: Option<f64>,
    pub dc: f64,
    pub profile: MismatchProfile,
    pub spec: FilterSpec,
    pub plan: PolyphasePlan,
    pub mode: CoeffMode,
    pub sinad_mode: SinadMode,
    pub seed: u64,
    /// Total interleaved samples; sized automatically when absent.
    pub n_samples: Option<usize>,
    pub n_fft: usize,
    /// Samples per channel per estimation block.
    pub est_block: usize,
}

impl Scenario {
    /// Two-channel, 12-bit, 0.019 fs, 30 taps of 30 bits, dg = dt = (0, 0.01).
    pub fn fig6() -> Self {
        Self {
            name: "fig6".into(),
            config: TiadcConfig {
                channels: 2,
                fs: 1.0,
                bits: 12,
                full_scale: 1.0,
            },
            amplitude: DEFAULT_AMPLITUDE,
            freq_nominal: 0.019,
            phase: None,
            dc: 0.0,
            profile: MismatchProfile {
                offsets: vec![0.0, 0.0],
                gains: vec![0.0, 0.01],
                skews: vec![0.0, 0.01],
            },
            spec: FilterSpec {
                n_taps: 30,
                coeff_bits: 30,
                variant: Variant::SubtractGain,
            },
            plan: PolyphasePlan::default(),
            mode: CoeffMode::GroundTruth,
            sinad_mode: SinadMode::Coherent,
            seed: 1,
            n_samples: None,
            n_fft: DEFAULT_NFFT,
            est_block: crate::estimator::DEFAULT_BLOCK_LEN,
        }
    }

    /// Built-in scenario by name.
    pub fn builtin(name: &str) -> Option<Self> {
        let mut s = Self::fig6();
        match name {
            "fig6" | "fig8" | "fig9" => {}
            "fig7" => {
                s.config.channels = 5;
                s.profile = MismatchProfile {
                    offsets: vec![0.0; 5],
                    gains: vec![0.0, 0.01, -0.01, 0.02, -0.02],
                    skews: vec![0.0, 0.01, 0.02, -0.01, -0.02],
                };
            }
            "fig10" => s.profile.skews = vec![0.0, 0.02],
            "fig11" => {
                s.freq_nominal = 0.46;
                s.profile.skews = vec![0.0, 0.0];
            }
            "fig12" => {
                s.freq_nominal = 0.19;
                s.profile.gains = vec![0.0, 0.0];
            }
            "zero" => s.profile = MismatchProfile::zeros(2),
            _ => return None,
        }
        s.name = name.into();
        Some(s)
    }

    pub const BUILTIN_NAMES: [&'static str; 8] =
        ["fig6", "fig7", "fig8", "fig9", "fig10", "fig11", "fig12", "zero"];

    /// The sweep that reproduces a figure family, if it has one.
    pub fn builtin_sweep(name: &str) -> Option<(SweepAxis, Vec<f64>)> {
        let range = |lo: u32, hi: u32| (lo..=hi).map(f64::from).collect();
        match name {
            "fig8" => Some((SweepAxis::Freq, vec![0.019, 0.133, 0.266, 0.399])),
            "fig9" => Some((SweepAxis::CoeffBits, range(12, 30))),
            "fig10" => Some((SweepAxis::Taps, (1..=31).map(|n| f64::from(2 * n)).collect())),
            "fig11" => Some((
                SweepAxis::Gain,
                vec![0.0, 0.001, 0.002, 0.005, 0.01, 0.02, 0.03, 0.04, 0.05],
            )),
            "fig12" => Some((
                SweepAxis::Skew,
                vec![0.0, 0.001, 0.002, 0.005, 0.01, 0.02, 0.03, 0.04, 0.05],
            )),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.profile.validate()?;
        if self.profile.channels() != self.config.channels {
            return Err(Error::Config(format!(
                "mismatch profile has {} channels, converter has {}",
                self.profile.channels(),
                self.config.channels
            )));
        }
        self.spec.validate()?;
        PolyphasePlan::new(self.plan.parallelism, self.plan.block_len)?;
        if !self.n_fft.is_power_of_two() || self.n_fft < 16 {
            return Err(Error::Config(format!("n_fft must be a power of two >= 16, got {}", self.n_fft)));
        }
        if self.est_block < crate::estimator::MIN_FIT_LEN.max(self.spec.n_taps) {
            return Err(Error::Config(format!("estimation block of {} samples is too short", self.est_block)));
        }
        if let Some(n) = self.n_samples {
            if n % self.config.channels != 0 {
                return Err(Error::Config(format!(
                    "n_samples {n} is not a multiple of {} channels",
                    self.config.channels
                )));
            }
        }
        self.tone()?.validate(&self.config)?;
        Ok(())
    }

    /// Input tone with the coherent frequency and the resolved phase.
    pub fn tone(&self) -> Result<ToneSpec> {
        let freq_rel = coherent_frequency(self.freq_nominal, self.n_fft)?;
        let phase = self
            .phase
            .unwrap_or_else(|| ChaCha8Rng::seed_from_u64(self.seed).random_range(-PI..PI));
        Ok(ToneSpec {
            amplitude: self.amplitude * self.config.full_scale,
            freq_rel,
            phase,
            dc: self.dc,
        })
    }

    /// Per-channel samples needed by the analysis window.
    pub fn analysis_per_channel(&self) -> usize {
        self.n_fft.div_ceil(self.config.channels)
    }

    /// Total interleaved samples to simulate.
    pub fn total_samples(&self) -> usize {
        if let Some(n) = self.n_samples {
            return n;
        }
        let per_channel = match self.mode {
            CoeffMode::GroundTruth => self.analysis_per_channel() + self.spec.n_taps - 1,
            CoeffMode::Estimated => self.est_block + self.analysis_per_channel(),
        };
        per_channel * self.config.channels
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_are_valid() {
        for name in Scenario::BUILTIN_NAMES {
            let s = Scenario::builtin(name).unwrap();
            s.validate().unwrap();
            assert_eq!(s.name, name);
        }
        assert!(Scenario::builtin("fig99").is_none());
    }

    #[test]
    fn seeded_phase_is_reproducible() {
        let a = Scenario::fig6();
        let mut b = Scenario::fig6();
        assert_eq!(a.tone().unwrap(), b.tone().unwrap());
        b.seed = 2;
        assert_ne!(a.tone().unwrap().phase, b.tone().unwrap().phase);
    }

    #[test]
    fn coherent_tone() {
        let t = Scenario::fig6().tone().unwrap();
        assert_eq!(t.freq_rel, 77.0 / 4096.0);
        assert_eq!(t.amplitude, DEFAULT_AMPLITUDE);
    }

    #[test]
    fn sample_budget() {
        let s = Scenario::fig6();
        assert_eq!(s.total_samples(), 2 * (2048 + 29));
        let mut e = s.clone();
        e.mode = CoeffMode::Estimated;
        assert_eq!(e.total_samples(), 2 * (4096 + 2048));
    }
}
