//! Binary capture files.
//!
//! Little-endian layout:
//!
//! | offset | type    | field                         |
//! |--------|---------|-------------------------------|
//! | 0      | `[u8;4]`| magic `TIAD`                  |
//! | 4      | u16     | version (1)                   |
//! | 6      | u16     | channels                      |
//! | 8      | u16     | bits                          |
//! | 10     | f64     | aggregate sample rate         |
//! | 18     | u64     | interleaved sample count      |
//! | 26     | i16 × n | interleaved codes             |
//!
//! Full scale is not stored; captures read back with full scale 1.0.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ChannelCapture, Origin, TiadcConfig};

pub const MAGIC: [u8; 4] = *b"TIAD";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 26;

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

pub fn encode_capture(capture: &ChannelCapture) -> Result<Vec<u8>> {
    let c = &capture.config;
    if c.bits > 16 {
        return Err(Error::Config(format!("{}-bit codes do not fit the 16-bit file format", c.bits)));
    }
    let channels = u16::try_from(c.channels)
        .map_err(|_| Error::Config(format!("{} channels do not fit the file format", c.channels)))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 2 * capture.interleaved.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&(c.bits as u16).to_le_bytes());
    out.extend_from_slice(&c.fs.to_le_bytes());
    out.extend_from_slice(&(capture.interleaved.len() as u64).to_le_bytes());
    for &code in &capture.interleaved {
        out.extend_from_slice(&(code as i16).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_capture(bytes: &[u8]) -> Result<ChannelCapture> {
    if bytes.len() < HEADER_LEN {
        return Err(format_err(
            bytes.len(),
            format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len()),
        ));
    }
    if bytes[0..4] != MAGIC {
        return Err(format_err(0, format!("bad magic {:?}, expected \"TIAD\"", &bytes[0..4])));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let version = u16_at(4);
    if version != VERSION {
        return Err(format_err(4, format!("unsupported version {version}")));
    }
    let channels = u16_at(6);
    if channels < 2 {
        return Err(format_err(6, format!("channel count {channels} is below 2")));
    }
    let bits = u16_at(8);
    if !(2..=16).contains(&bits) {
        return Err(format_err(8, format!("word length {bits} outside 2..=16")));
    }
    let fs = f64::from_le_bytes(bytes[10..18].try_into().expect("8-byte slice"));
    if !(fs > 0.0 && fs.is_finite()) {
        return Err(format_err(10, format!("sample rate {fs} is not positive")));
    }
    let count = u64::from_le_bytes(bytes[18..26].try_into().expect("8-byte slice"));
    if count % u64::from(channels) != 0 {
        return Err(format_err(
            18,
            format!("sample count {count} is not a multiple of {channels} channels"),
        ));
    }
    let payload = &bytes[HEADER_LEN..];
    let expected = count.checked_mul(2);
    if expected != Some(payload.len() as u64) {
        let what = if expected.is_some_and(|e| (payload.len() as u64) > e) {
            "trailing bytes"
        } else {
            "truncated payload"
        };
        return Err(format_err(
            HEADER_LEN,
            format!(
                "{what}: expected {} payload bytes for {count} samples, found {}",
                expected.map_or_else(|| "overflowing".to_string(), |e| e.to_string()),
                payload.len()
            ),
        ));
    }
    let config = TiadcConfig::new(channels as usize, fs, u32::from(bits)).map_err(|e| format_err(6, e.to_string()))?;
    let (lo, hi) = (config.code_min(), config.code_max());
    let mut codes = Vec::with_capacity(count as usize);
    for (i, pair) in payload.chunks_exact(2).enumerate() {
        let code = i32::from(i16::from_le_bytes([pair[0], pair[1]]));
        if !(lo..=hi).contains(&code) {
            return Err(format_err(
                HEADER_LEN + 2 * i,
                format!("code {code} outside [{lo}, {hi}] for {bits}-bit samples"),
            ));
        }
        codes.push(code);
    }
    ChannelCapture::from_interleaved(config, codes, Origin::File)
}

pub fn write_capture<W: Write>(capture: &ChannelCapture, mut out: W) -> Result<()> {
    out.write_all(&encode_capture(capture)?)?;
    Ok(())
}

pub fn read_capture<R: Read>(mut input: R) -> Result<ChannelCapture> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    decode_capture(&bytes)
}

pub fn save_capture(capture: &ChannelCapture, path: &Path) -> Result<()> {
    std::fs::write(path, encode_capture(capture)?)?;
    Ok(())
}

pub fn load_capture(path: &Path) -> Result<ChannelCapture> {
    decode_capture(&std::fs::read(path)?)
}
