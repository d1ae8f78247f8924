//! `tiadc`: simulate, estimate, calibrate and analyse time-interleaved ADC captures.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data-format
//! error, 4 numeric failure.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use tiadc_core::calib::{FilterBank, Variant};
use tiadc_core::estimator::{estimate_frequency, estimate_mismatches};
use tiadc_core::experiments::capture_file::{load_capture, save_capture};
use tiadc_core::experiments::config::resolve_scenario;
use tiadc_core::experiments::{
    run_on_capture, run_scenario, run_sweep, run_with_bank, CoeffMode, Scenario, ScenarioResult, SweepAxis,
};
use tiadc_core::metrics::{coherent_frequency, peak_bin, power_spectrum, sinad, write_spectrum_csv, DEFAULT_NFFT};
use tiadc_core::model::{simulate_capture, ChannelCapture, MismatchProfile};
use tiadc_core::Error;

const SIDECAR: &str = "scenario.cfg";

#[derive(Parser, Debug)]
#[command(name = "tiadc", version, about = "TIADC mismatch simulation and calibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a scenario and write capture.bin plus scenario.cfg
    Simulate(Common),
    /// Estimate offset, gain and timing mismatches from a capture
    Estimate {
        capture: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Calibrate a capture (or a freshly simulated one) and report SINAD
    Calibrate {
        capture: Option<PathBuf>,
        /// Coefficient table written by `run`, `calibrate` or `estimate`
        #[arg(long)]
        coeffs: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Sweep one parameter of a scenario
    Sweep {
        /// coeff_bits | n_taps | gain | skew | freq
        #[arg(long)]
        axis: Option<String>,
        /// `lo:hi[:step]` or a comma-separated list
        #[arg(long)]
        values: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Spectrum of a capture as CSV
    Spectrum {
        capture: PathBuf,
        #[arg(long, default_value_t = DEFAULT_NFFT)]
        n_fft: usize,
        /// Tone frequency (fraction of fs) for the SINAD line
        #[arg(long)]
        freq: Option<f64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run a scenario end to end and write every output
    Run(Common),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Scenario file or built-in name (fig6 ... fig12, zero)
    #[arg(long)]
    config: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    taps: Option<usize>,
    #[arg(long)]
    coeff_bits: Option<u32>,
    /// sub | div
    #[arg(long)]
    variant: Option<String>,
    /// Polyphase parallelism L
    #[arg(long)]
    parallel: Option<usize>,
    /// truth | est
    #[arg(long)]
    mode: Option<String>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

impl Common {
    fn scenario(&self, fallback: Option<&Path>) -> Result<Scenario> {
        let mut s = match (&self.config, fallback) {
            (Some(c), _) => resolve_scenario(c)?,
            (None, Some(sidecar)) if sidecar.exists() => resolve_scenario(&sidecar.to_string_lossy())?,
            _ => Scenario::fig6(),
        };
        self.apply(&mut s)?;
        Ok(s)
    }

    fn apply(&self, s: &mut Scenario) -> Result<()> {
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some(n) = self.taps {
            s.spec.n_taps = n;
        }
        if let Some(w) = self.coeff_bits {
            s.spec.coeff_bits = w;
        }
        if let Some(v) = &self.variant {
            s.spec.variant = v.parse::<Variant>()?;
        }
        if let Some(l) = self.parallel {
            s.plan.parallelism = l;
        }
        if let Some(m) = &self.mode {
            s.mode = m.parse::<CoeffMode>()?;
        }
        s.validate()?;
        Ok(())
    }

    fn has_config(&self, fallback: Option<&Path>) -> bool {
        self.config.is_some() || fallback.is_some_and(Path::exists)
    }
}

fn sidecar_of(capture: &Path) -> PathBuf {
    capture.parent().unwrap_or(Path::new(".")).join(SIDECAR)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).map_err(Error::from)?))
}

/// Loads a capture and adopts its converter settings into the scenario.
/// Without a known scenario the mismatch profile falls back to zero.
fn load_for(capture: &Path, scenario: &mut Scenario, known: bool) -> Result<ChannelCapture> {
    let mut cap = load_capture(capture)?;
    let c = &scenario.config;
    if !known && cap.config.channels != c.channels {
        scenario.profile = MismatchProfile::zeros(cap.config.channels);
    } else if cap.config.channels != c.channels {
        return Err(Error::Config(format!(
            "capture has {} channels, scenario '{}' has {}",
            cap.config.channels, scenario.name, c.channels
        ))
        .into());
    }
    cap.config.full_scale = c.full_scale;
    scenario.config = cap.config;
    Ok(cap)
}

fn print_result(r: &ScenarioResult) -> Result<()> {
    r.write_summary(io::stdout().lock())?;
    Ok(())
}

fn simulate(common: &Common) -> Result<()> {
    let mut s = common.scenario(None)?;
    let tone = s.tone()?;
    s.phase = Some(tone.phase);
    let cap = simulate_capture(&tone, &s.config, &s.profile, s.total_samples())?;
    std::fs::create_dir_all(&common.out)?;
    save_capture(&cap, &common.out.join("capture.bin"))?;
    create(&common.out, SIDECAR)?.write_all(s.to_config_string().as_bytes())?;
    println!(
        "wrote {} samples ({} channels, {} bits) to {}",
        cap.interleaved.len(),
        cap.config.channels,
        cap.config.bits,
        common.out.join("capture.bin").display()
    );
    Ok(())
}

fn estimate(capture: &Path, common: &Common) -> Result<()> {
    let sidecar = sidecar_of(capture);
    let mut s = common.scenario(Some(&sidecar))?;
    let cap = load_for(capture, &mut s, common.has_config(Some(&sidecar)))?;
    let per_channel: Vec<Vec<f64>> = cap
        .per_channel
        .iter()
        .map(|ch| ch.iter().map(|&c| cap.config.dequantize(c)).collect())
        .collect();
    let est = estimate_mismatches(&per_channel, &cap.config, None)?;
    let mut out = create(&common.out, "estimates.csv")?;
    writeln!(out, "channel,offset,gain,skew,amplitude,phase,dc,rms_residual")?;
    println!("tone_freq_rel {:.12}", est.tone_freq_rel);
    println!("channel,offset,gain,skew");
    for (m, fit) in est.fits.iter().enumerate() {
        writeln!(
            out,
            "{m},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.6e}",
            est.offsets[m], est.gains[m], est.skews[m], fit.amplitude, fit.phase, fit.dc, fit.rms_residual
        )?;
        println!("{m},{:.6e},{:.6e},{:.6e}", est.offsets[m], est.gains[m], est.skews[m]);
    }
    out.flush()?;
    let bank = FilterBank::design(&est.to_profile()?, &s.spec)?;
    let mut coeffs = create(&common.out, "coeffs.csv")?;
    bank.write_csv(&mut coeffs)?;
    coeffs.flush()?;
    Ok(())
}

/// Analysis tone: the scenario's when a config is known, else the strongest
/// component of the capture snapped to a coherent bin.
fn analysis_tone(s: &Scenario, cap: &ChannelCapture, known: bool) -> Result<tiadc_core::model::ToneSpec> {
    let mut tone = s.tone()?;
    if !known {
        let f = estimate_frequency(&cap.dequantized())?;
        tone.freq_rel = coherent_frequency(f, s.n_fft)?;
    }
    Ok(tone)
}

fn calibrate(capture: Option<&Path>, coeffs: Option<&Path>, common: &Common) -> Result<()> {
    let sidecar = capture.map(sidecar_of);
    let mut s = common.scenario(sidecar.as_deref())?;
    let (cap, tone) = match capture {
        Some(path) => {
            let known = common.has_config(sidecar.as_deref());
            let cap = load_for(path, &mut s, known)?;
            let tone = analysis_tone(&s, &cap, known)?;
            (cap, tone)
        }
        None => {
            let tone = s.tone()?;
            (simulate_capture(&tone, &s.config, &s.profile, s.total_samples())?, tone)
        }
    };
    let result = match coeffs {
        Some(path) => {
            let file = File::open(path).map_err(Error::from)?;
            let bank = FilterBank::read_csv(BufReader::new(file), s.spec.variant)?;
            s.spec = bank.spec;
            run_with_bank(&s, &tone, &cap, &bank)?
        }
        None => {
            if s.mode == CoeffMode::GroundTruth {
                let bank = FilterBank::design(&s.profile, &s.spec)?;
                let mut out = create(&common.out, "coeffs.csv")?;
                bank.write_csv(&mut out)?;
                out.flush()?;
            }
            run_on_capture(&s, &tone, &cap)?
        }
    };
    result.write_outputs(&common.out)?;
    print_result(&result)
}

fn parse_values(text: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("cannot parse sweep values '{text}'"));
    if text.contains(':') {
        let parts: Vec<f64> = text
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        let (lo, hi, step) = match parts[..] {
            [lo, hi] => (lo, hi, 1.0),
            [lo, hi, step] => (lo, hi, step),
            _ => return Err(bad().into()),
        };
        if !(step > 0.0) || hi < lo {
            return Err(bad().into());
        }
        let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
        return Ok((0..count).map(|i| lo + i as f64 * step).collect());
    }
    Ok(text
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_, _>>()?)
}

fn sweep(axis: Option<&str>, values: Option<&str>, common: &Common) -> Result<()> {
    let s = common.scenario(None)?;
    let builtin = Scenario::builtin_sweep(&s.name);
    let axis = match (axis, &builtin) {
        (Some(a), _) => a.parse::<SweepAxis>()?,
        (None, Some((a, _))) => *a,
        (None, None) => return Err(Error::Config(format!("scenario '{}' has no default sweep; pass --axis", s.name)).into()),
    };
    let values = match (values, &builtin) {
        (Some(v), _) => parse_values(v)?,
        (None, Some((a, v))) if *a == axis => v.clone(),
        _ => return Err(Error::Config("pass --values for this axis".into()).into()),
    };
    let table = run_sweep(&s, axis, &values)?;
    let mut out = create(&common.out, "sweep.csv")?;
    table.write_csv(&mut out)?;
    out.flush()?;
    table.write_csv(io::stdout().lock())?;
    Ok(())
}

fn spectrum(capture: &Path, n_fft: usize, freq: Option<f64>, out_dir: &Path) -> Result<()> {
    let cap = load_capture(capture)?;
    let stream = cap.dequantized();
    let spec = power_spectrum(&stream, n_fft, cap.config.full_scale)?;
    let mut out = create(out_dir, "spectrum.csv")?;
    write_spectrum_csv(&mut out, &spec)?;
    out.flush()?;
    let peak = peak_bin(&spec);
    println!("peak_bin,{peak}");
    println!("peak_freq_rel,{:.9}", peak as f64 / n_fft as f64);
    if let Some(f) = freq {
        let f = coherent_frequency(f, n_fft)?;
        println!("sinad_db,{:.6}", sinad(&stream, f, n_fft)?);
    }
    Ok(())
}

fn run(common: &Common) -> Result<()> {
    let mut s = common.scenario(None)?;
    s.phase = Some(s.tone()?.phase);
    let result = run_scenario(&s)?;
    result.write_outputs(&common.out)?;
    create(&common.out, SIDECAR)?.write_all(s.to_config_string().as_bytes())?;
    if s.mode == CoeffMode::GroundTruth {
        let mut out = create(&common.out, "coeffs.csv")?;
        FilterBank::design(&s.profile, &s.spec)?.write_csv(&mut out)?;
        out.flush()?;
    }
    print_result(&result)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Config(_) | Error::Coherence { .. }) => 2,
        Some(Error::Format { .. } | Error::Shape(_) | Error::Io(_)) => 3,
        Some(_) => 4,
        None if err.chain().any(|e| e.is::<io::Error>()) => 3,
        None => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Simulate(c) => simulate(c),
        Command::Estimate { capture, common } => estimate(capture, common),
        Command::Calibrate { capture, coeffs, common } => calibrate(capture.as_deref(), coeffs.as_deref(), common),
        Command::Sweep { axis, values, common } => sweep(axis.as_deref(), values.as_deref(), common),
        Command::Spectrum {
            capture,
            n_fft,
            freq,
            out,
        } => spectrum(capture, *n_fft, *freq, out),
        Command::Run(c) => run(c),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
