//! Flat `key = value` scenario files.
//!
//! ```text
//! # two-channel capture at 0.133 fs
//! base = fig6
//! freq = 0.133
//! gains = 0, 0.01
//! ```
//!
//! `base` must come first when present; every other key overrides one field
//! of the base scenario (default `fig6`). Unknown keys are rejected.

use std::path::Path;

use crate::calib::Variant;
use crate::error::{Error, Result};
use crate::metrics::SinadMode;

use super::{CoeffMode, Scenario};

fn number<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|v| number(key, v.trim())).collect()
}

fn sinad_mode(value: &str) -> Result<SinadMode> {
    match value {
        "coherent" => Ok(SinadMode::Coherent),
        "windowed" => Ok(SinadMode::Windowed),
        other => Err(Error::Config(format!("sinad: unknown mode '{other}' (coherent|windowed)"))),
    }
}

fn set(s: &mut Scenario, key: &str, value: &str) -> Result<()> {
    match key {
        "name" => s.name = value.to_string(),
        "channels" => s.config.channels = number(key, value)?,
        "fs" => s.config.fs = number(key, value)?,
        "bits" => s.config.bits = number(key, value)?,
        "full_scale" => s.config.full_scale = number(key, value)?,
        "amplitude" => s.amplitude = number(key, value)?,
        "freq" => s.freq_nominal = number(key, value)?,
        "phase" => {
            s.phase = match value {
                "random" => None,
                v => Some(number(key, v)?),
            }
        }
        "dc" => s.dc = number(key, value)?,
        "offsets" => s.profile.offsets = list(key, value)?,
        "gains" => s.profile.gains = list(key, value)?,
        "skews" => s.profile.skews = list(key, value)?,
        "taps" => s.spec.n_taps = number(key, value)?,
        "coeff_bits" => s.spec.coeff_bits = number(key, value)?,
        "variant" => s.spec.variant = value.parse::<Variant>()?,
        "parallel" => s.plan.parallelism = number(key, value)?,
        "block_len" => s.plan.block_len = number(key, value)?,
        "mode" => s.mode = value.parse::<CoeffMode>()?,
        "sinad" => s.sinad_mode = sinad_mode(value)?,
        "seed" => s.seed = number(key, value)?,
        "n_samples" => {
            s.n_samples = match value {
                "auto" => None,
                v => Some(number(key, v)?),
            }
        }
        "n_fft" => s.n_fft = number(key, value)?,
        "est_block" => s.est_block = number(key, value)?,
        other => return Err(Error::Config(format!("unknown key '{other}'"))),
    }
    Ok(())
}

/// Parses and validates a scenario file.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let mut scenario: Option<Scenario> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {lineno}: expected 'key = value'")))?;
        let (key, value) = (key.trim(), value.trim());
        if key == "base" {
            if scenario.is_some() {
                return Err(Error::Config(format!("line {lineno}: 'base' must be the first key")));
            }
            scenario = Some(
                Scenario::builtin(value)
                    .ok_or_else(|| Error::Config(format!("line {lineno}: unknown base scenario '{value}'")))?,
            );
            continue;
        }
        let s = scenario.get_or_insert_with(Scenario::fig6);
        set(s, key, value).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("line {lineno}: {msg}")),
            other => other,
        })?;
    }
    let scenario = scenario.unwrap_or_else(Scenario::fig6);
    scenario.validate()?;
    Ok(scenario)
}

/// A built-in scenario name or the path of a scenario file.
pub fn resolve_scenario(arg: &str) -> Result<Scenario> {
    if let Some(s) = Scenario::builtin(arg) {
        return Ok(s);
    }
    let path = Path::new(arg);
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("'{arg}' is neither a built-in scenario nor a readable file: {e}")))?;
    parse_scenario(&text)
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(", ")
}

impl Scenario {
    /// Full, self-contained file text; [`parse_scenario`] restores `self`.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        kv("name", self.name.clone());
        kv("channels", self.config.channels.to_string());
        kv("fs", self.config.fs.to_string());
        kv("bits", self.config.bits.to_string());
        kv("full_scale", self.config.full_scale.to_string());
        kv("amplitude", self.amplitude.to_string());
        kv("freq", self.freq_nominal.to_string());
        kv("phase", self.phase.map_or_else(|| "random".into(), |p| p.to_string()));
        kv("dc", self.dc.to_string());
        kv("offsets", join(&self.profile.offsets));
        kv("gains", join(&self.profile.gains));
        kv("skews", join(&self.profile.skews));
        kv("taps", self.spec.n_taps.to_string());
        kv("coeff_bits", self.spec.coeff_bits.to_string());
        kv("variant", self.spec.variant.as_str().into());
        kv("parallel", self.plan.parallelism.to_string());
        kv("block_len", self.plan.block_len.to_string());
        kv("mode", self.mode.as_str().into());
        kv(
            "sinad",
            match self.sinad_mode {
                SinadMode::Coherent => "coherent".into(),
                SinadMode::Windowed => "windowed".into(),
            },
        );
        kv("seed", self.seed.to_string());
        kv("n_samples", self.n_samples.map_or_else(|| "auto".into(), |n| n.to_string()));
        kv("n_fft", self.n_fft.to_string());
        kv("est_block", self.est_block.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_on_base() {
        let s = parse_scenario("base = fig7\n# comment\nfreq = 0.133  # trailing\nmode = est\n").unwrap();
        assert_eq!(s.config.channels, 5);
        assert_eq!(s.freq_nominal, 0.133);
        assert_eq!(s.mode, CoeffMode::Estimated);
        assert_eq!(s.name, "fig7");
    }

    #[test]
    fn empty_file_is_fig6() {
        assert_eq!(parse_scenario("").unwrap(), Scenario::fig6());
    }

    #[test]
    fn errors_name_the_line() {
        let e = parse_scenario("freq = 0.1\nwhatever = 3\n").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        assert!(matches!(parse_scenario("taps = many"), Err(Error::Config(_))));
        assert!(matches!(parse_scenario("freq = 0.1\nbase = fig7"), Err(Error::Config(_))));
        assert!(matches!(parse_scenario("gains = 0, 0.01, 0.02"), Err(Error::Config(_))));
        assert!(matches!(parse_scenario("no equals sign"), Err(Error::Config(_))));
    }

    #[test]
    fn round_trip_builtins() {
        for name in Scenario::BUILTIN_NAMES {
            let s = Scenario::builtin(name).unwrap();
            assert_eq!(parse_scenario(&s.to_config_string()).unwrap(), s, "{name}");
        }
        let mut s = Scenario::fig6();
        s.phase = Some(-1.234_567_890_123);
        s.n_samples = Some(8192);
        s.sinad_mode = SinadMode::Windowed;
        s.spec.variant = Variant::DivideGain;
        assert_eq!(parse_scenario(&s.to_config_string()).unwrap(), s);
    }
}
