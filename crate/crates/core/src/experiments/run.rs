use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::calib::{calibrate_capture, calibrate_channel_with, FilterBank};
use crate::error::{Error, Result};
use crate::estimator::{estimate_mismatches, MismatchEstimate};
use crate::metrics::{max_spur, SpectrumReport};
use crate::model::{simulate_capture, ChannelCapture, ToneSpec};

use super::{CoeffMode, Scenario};

/// Outcome of one scenario run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub name: String,
    pub tone: ToneSpec,
    pub uncalibrated: SpectrumReport,
    pub calibrated: SpectrumReport,
    /// Per-block estimates, in estimated mode.
    pub estimates: Vec<MismatchEstimate>,
    /// Largest mismatch spur before calibration minus after, in dB.
    pub spur_reduction_db: Option<f64>,
    /// Aggregate input index of `raw[0]` and `calibrated_stream[0]`.
    pub first_index: usize,
    pub raw: Vec<f64>,
    pub calibrated_stream: Vec<f64>,
}

impl ScenarioResult {
    pub fn max_spur_uncal(&self) -> Option<f64> {
        max_spur(&self.uncalibrated.spurs, None)
    }

    pub fn max_spur_cal(&self) -> Option<f64> {
        max_spur(&self.calibrated.spurs, None)
    }

    /// One `key,value` line per summary quantity.
    pub fn write_summary<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |x| format!("{x:.6}"));
        writeln!(out, "key,value")?;
        writeln!(out, "name,{}", self.name)?;
        writeln!(out, "tone_freq_rel,{:.12}", self.tone.freq_rel)?;
        writeln!(out, "tone_phase,{:.12}", self.tone.phase)?;
        writeln!(out, "sinad_uncal_db,{:.6}", self.uncalibrated.sinad_db)?;
        writeln!(out, "sinad_cal_db,{:.6}", self.calibrated.sinad_db)?;
        writeln!(out, "enob_uncal,{:.6}", self.uncalibrated.enob)?;
        writeln!(out, "enob_cal,{:.6}", self.calibrated.enob)?;
        writeln!(out, "max_spur_uncal_dbfs,{}", opt(self.max_spur_uncal()))?;
        writeln!(out, "max_spur_cal_dbfs,{}", opt(self.max_spur_cal()))?;
        writeln!(out, "spur_reduction_db,{}", opt(self.spur_reduction_db))?;
        Ok(())
    }

    /// `sample_index,raw,calibrated` for every aligned output sample.
    pub fn write_stream_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "sample_index,raw,calibrated")?;
        for (i, (r, c)) in self.raw.iter().zip(&self.calibrated_stream).enumerate() {
            writeln!(out, "{},{r:.12e},{c:.12e}", self.first_index + i)?;
        }
        Ok(())
    }

    /// `spectrum_uncal.csv`, `spectrum_cal.csv`, `calibrated.csv` and
    /// `summary.csv` in `dir`.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.uncalibrated
            .write_csv(BufWriter::new(File::create(dir.join("spectrum_uncal.csv"))?))?;
        self.calibrated
            .write_csv(BufWriter::new(File::create(dir.join("spectrum_cal.csv"))?))?;
        self.write_stream_csv(BufWriter::new(File::create(dir.join("calibrated.csv"))?))?;
        self.write_summary(BufWriter::new(File::create(dir.join("summary.csv"))?))?;
        Ok(())
    }
}

/// Simulates the scenario's capture and runs it.
pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioResult> {
    scenario.validate()?;
    let tone = scenario.tone()?;
    let capture = simulate_capture(&tone, &scenario.config, &scenario.profile, scenario.total_samples())?;
    run_on_capture(scenario, &tone, &capture)
}

/// Calibrates an existing capture and analyses the result. `tone` gives the
/// analysis frequency; it must be coherent with `scenario.n_fft`.
pub fn run_on_capture(scenario: &Scenario, tone: &ToneSpec, capture: &ChannelCapture) -> Result<ScenarioResult> {
    match scenario.mode {
        CoeffMode::GroundTruth => {
            let bank = FilterBank::design(&scenario.profile, &scenario.spec)?;
            run_with_bank(scenario, tone, capture, &bank)
        }
        CoeffMode::Estimated => {
            let (first, raw, cal, estimates) = estimated_outputs(scenario, capture)?;
            analyse(scenario, tone, first, raw, cal, estimates)
        }
    }
}

/// Calibrates `capture` with a fixed filter bank.
pub fn run_with_bank(
    scenario: &Scenario,
    tone: &ToneSpec,
    capture: &ChannelCapture,
    bank: &FilterBank,
) -> Result<ScenarioResult> {
    let out = calibrate_capture(capture, bank, Some(&scenario.plan))?;
    let raw = out.aligned_raw(capture);
    analyse(scenario, tone, out.first_aggregate_index(), raw, out.interleaved, Vec::new())
}

fn analyse(
    scenario: &Scenario,
    tone: &ToneSpec,
    first_index: usize,
    raw: Vec<f64>,
    cal: Vec<f64>,
    estimates: Vec<MismatchEstimate>,
) -> Result<ScenarioResult> {
    let n_fft = scenario.n_fft;
    if cal.len() < n_fft || raw.len() < n_fft {
        return Err(Error::Shape(format!(
            "{} calibrated samples available, analysis needs {n_fft}",
            cal.len()
        )));
    }
    let fs = scenario.config.full_scale;
    let m = scenario.config.channels;
    let mode = scenario.sinad_mode;
    let uncalibrated = SpectrumReport::analyze(&raw[..n_fft], tone.freq_rel, n_fft, fs, m, mode)?;
    let calibrated = SpectrumReport::analyze(&cal[..n_fft], tone.freq_rel, n_fft, fs, m, mode)?;
    let spur_reduction_db = match (max_spur(&uncalibrated.spurs, None), max_spur(&calibrated.spurs, None)) {
        (Some(a), Some(b)) => Some(a - b),
        _ => None,
    };
    Ok(ScenarioResult {
        name: scenario.name.clone(),
        tone: *tone,
        uncalibrated,
        calibrated,
        estimates,
        spur_reduction_db,
        first_index,
        raw,
        calibrated_stream: cal,
    })
}

type Outputs = (usize, Vec<f64>, Vec<f64>, Vec<MismatchEstimate>);

/// Block-adaptive calibration: output block `b` uses the filters estimated
/// from input block `b-1`. Block 0 is never analysed.
fn estimated_outputs(scenario: &Scenario, capture: &ChannelCapture) -> Result<Outputs> {
    let e = scenario.est_block;
    let m = capture.config.channels;
    let len = capture.len_per_channel();
    let spec = &scenario.spec;
    let d = spec.delay();
    if e < spec.n_taps {
        return Err(Error::Config(format!(
            "estimation block of {e} samples is shorter than the {}-tap filter",
            spec.n_taps
        )));
    }
    if len <= e {
        return Err(Error::Shape(format!(
            "{len} samples per channel leave nothing after the first {e}-sample estimation block"
        )));
    }
    let dequantized: Vec<Vec<f64>> = capture
        .per_channel
        .iter()
        .map(|ch| ch.iter().map(|&c| capture.config.dequantize(c)).collect())
        .collect();

    let mut estimates = Vec::new();
    let mut per_channel_out = vec![vec![0.0; len - e]; m];
    for b in 1..len.div_ceil(e) {
        let block: Vec<Vec<f64>> = dequantized.iter().map(|ch| ch[(b - 1) * e..b * e].to_vec()).collect();
        let est = estimate_mismatches(&block, &capture.config, None)?;
        let bank = FilterBank::design(&est.to_profile()?, spec)?;
        estimates.push(est);
        let lo = b * e;
        let hi = ((b + 1) * e).min(len);
        // history of N-1 samples is enough for the causal filter
        let start = lo + 1 - spec.n_taps;
        for (ch, out) in per_channel_out.iter_mut().enumerate() {
            let y = calibrate_channel_with(
                &capture.per_channel[ch][start..hi],
                &bank.fixed_taps[ch],
                bank.offsets[ch],
                spec,
                &capture.config,
                Some(&scenario.plan),
            )?;
            out[lo - e..hi - e].copy_from_slice(&y.samples[spec.n_taps - 1..]);
        }
    }
    let cal = crate::model::interleave_channels(&per_channel_out)?;
    // output index k estimates input index k - D
    let raw_start = (e - d) * m;
    let raw: Vec<f64> = capture.interleaved[raw_start..raw_start + cal.len()]
        .iter()
        .map(|&c| capture.config.dequantize(c))
        .collect();
    Ok((raw_start, raw, cal, estimates))
}

/// Parameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    CoeffBits,
    Taps,
    /// Gain mismatch of channel 1.
    Gain,
    /// Timing skew of channel 1.
    Skew,
    Freq,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::CoeffBits => "coeff_bits",
            SweepAxis::Taps => "n_taps",
            SweepAxis::Gain => "gain",
            SweepAxis::Skew => "skew",
            SweepAxis::Freq => "freq",
        }
    }

    /// The base scenario with this axis set to `value`.
    pub fn apply(self, base: &Scenario, value: f64) -> Result<Scenario> {
        let mut s = base.clone();
        let integer = || {
            if value.fract() != 0.0 || value < 1.0 || value > u32::MAX as f64 {
                Err(Error::Config(format!("{} must be a positive integer, got {value}", self.as_str())))
            } else {
                Ok(value as u32)
            }
        };
        let channel_one = |v: &mut Vec<f64>| {
            v.get_mut(1)
                .map(|x| *x = value)
                .ok_or_else(|| Error::Config("gain and skew sweeps need at least two channels".into()))
        };
        match self {
            SweepAxis::CoeffBits => s.spec.coeff_bits = integer()?,
            SweepAxis::Taps => s.spec.n_taps = integer()? as usize,
            SweepAxis::Gain => channel_one(&mut s.profile.gains)?,
            SweepAxis::Skew => channel_one(&mut s.profile.skews)?,
            SweepAxis::Freq => s.freq_nominal = value,
        }
        Ok(s)
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coeff_bits" | "W" | "w" => Ok(SweepAxis::CoeffBits),
            "n_taps" | "taps" | "N" => Ok(SweepAxis::Taps),
            "gain" => Ok(SweepAxis::Gain),
            "skew" => Ok(SweepAxis::Skew),
            "freq" => Ok(SweepAxis::Freq),
            other => Err(Error::Config(format!(
                "unknown sweep axis '{other}' (coeff_bits|n_taps|gain|skew|freq)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub tone_freq_rel: f64,
    pub sinad_uncal_db: f64,
    pub sinad_cal_db: f64,
    pub max_spur_uncal_dbfs: Option<f64>,
    pub max_spur_cal_dbfs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |x| format!("{x:.6}"));
        writeln!(
            out,
            "axis,value,tone_freq_rel,sinad_uncal_db,sinad_cal_db,max_spur_uncal_dbfs,max_spur_cal_dbfs"
        )?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{:.12},{:.6},{:.6},{},{}",
                self.axis.as_str(),
                r.value,
                r.tone_freq_rel,
                r.sinad_uncal_db,
                r.sinad_cal_db,
                opt(r.max_spur_uncal_dbfs),
                opt(r.max_spur_cal_dbfs)
            )?;
        }
        Ok(())
    }
}

/// Runs the base scenario once per value.
pub fn run_sweep(base: &Scenario, axis: SweepAxis, values: &[f64]) -> Result<SweepTable> {
    let rows = values
        .iter()
        .map(|&v| {
            let r = run_scenario(&axis.apply(base, v)?)?;
            Ok(SweepRow {
                value: v,
                tone_freq_rel: r.tone.freq_rel,
                sinad_uncal_db: r.uncalibrated.sinad_db,
                sinad_cal_db: r.calibrated.sinad_db,
                max_spur_uncal_dbfs: r.max_spur_uncal(),
                max_spur_cal_dbfs: r.max_spur_cal(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable { axis, rows })
}
