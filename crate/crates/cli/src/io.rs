//! Audio and sample-text file handling: a small uncompressed-WAV codec
//! (16/24-bit PCM and 32-bit float, mono) and one-sample-per-line CSV.

use std::io::Write as _;
use std::path::Path;

use otrir::Signal;

use crate::error::{CliError, Result};

/// Sample encodings the writer produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

const TAG_PCM: u16 = 1;
const TAG_IEEE_FLOAT: u16 = 3;

fn rd_u16(b: &[u8], at: usize) -> Option<u16> {
    Some(u16::from_le_bytes([*b.get(at)?, *b.get(at + 1)?]))
}

fn rd_u32(b: &[u8], at: usize) -> Option<u32> {
    Some(u32::from_le_bytes([
        *b.get(at)?,
        *b.get(at + 1)?,
        *b.get(at + 2)?,
        *b.get(at + 3)?,
    ]))
}

/// Decodes a mono uncompressed WAV byte stream into samples and a sample
/// rate. Rejects compressed codecs, multi-channel data, and truncated or
/// malformed chunk structures.
pub fn parse_wav(bytes: &[u8]) -> Result<(Vec<f64>, f64)> {
    let bad = |msg: &str| CliError::Io(format!("wav: {msg}"));
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("not a RIFF/WAVE file"));
    }

    let mut pos = 12usize;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // tag, channels, rate, bits
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = rd_u32(bytes, pos + 4).ok_or_else(|| bad("truncated chunk header"))? as usize;
        let data_start = pos + 8;
        let data_end = data_start
            .checked_add(size)
            .ok_or_else(|| bad("chunk size overflow"))?;
        if data_end > bytes.len() {
            return Err(bad("chunk extends past end of file"));
        }
        let chunk = &bytes[data_start..data_end];
        match id {
            b"fmt " => {
                if chunk.len() < 16 {
                    return Err(bad("fmt chunk too short"));
                }
                let tag = rd_u16(chunk, 0).unwrap();
                let channels = rd_u16(chunk, 2).unwrap();
                let rate = rd_u32(chunk, 4).unwrap();
                let bits = rd_u16(chunk, 14).unwrap();
                fmt = Some((tag, channels, rate, bits));
            }
            b"data" => {
                let (tag, channels, rate, bits) =
                    fmt.ok_or_else(|| bad("data chunk before fmt chunk"))?;
                if channels != 1 {
                    return Err(bad(&format!(
                        "only mono supported, file has {channels} channels"
                    )));
                }
                if rate == 0 {
                    return Err(bad("zero sample rate"));
                }
                let samples = match (tag, bits) {
                    (TAG_PCM, 16) => chunk
                        .chunks_exact(2)
                        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
                        .collect(),
                    (TAG_PCM, 24) => chunk
                        .chunks_exact(3)
                        .map(|c| {
                            let v = ((c[2] as i32) << 24 | (c[1] as i32) << 16 | (c[0] as i32) << 8)
                                >> 8;
                            v as f64 / 8388608.0
                        })
                        .collect(),
                    (TAG_IEEE_FLOAT, 32) => chunk
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                        .collect(),
                    (tag, bits) => {
                        return Err(bad(&format!(
                            "unsupported codec: format tag {tag}, {bits} bits per sample"
                        )))
                    }
                };
                return Ok((samples, rate as f64));
            }
            _ => {}
        }
        // Chunks are word-aligned; odd sizes carry a pad byte.
        pos = data_end + (size & 1);
    }
    Err(bad("no data chunk found"))
}

/// Encodes mono samples as an uncompressed WAV byte stream.
pub fn encode_wav(samples: &[f64], sample_rate_hz: f64, format: WavFormat) -> Vec<u8> {
    let rate = sample_rate_hz.round() as u32;
    let (tag, bits, data): (u16, u16, Vec<u8>) = match format {
        WavFormat::Pcm16 => {
            let mut d = Vec::with_capacity(samples.len() * 2);
            for &s in samples {
                let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                d.extend_from_slice(&v.to_le_bytes());
            }
            (TAG_PCM, 16, d)
        }
        WavFormat::Float32 => {
            let mut d = Vec::with_capacity(samples.len() * 4);
            for &s in samples {
                d.extend_from_slice(&(s as f32).to_le_bytes());
            }
            (TAG_IEEE_FLOAT, 32, d)
        }
    };
    let block_align = (bits / 8) as u32;
    let has_fact = tag == TAG_IEEE_FLOAT;
    let fact_len: u32 = if has_fact { 12 } else { 0 };
    let riff_size = 4 + 24 + fact_len + 8 + data.len() as u32;

    let mut out = Vec::with_capacity(riff_size as usize + 8);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&riff_size.to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&rate.to_le_bytes());
    out.extend_from_slice(&(rate * block_align).to_le_bytes());
    out.extend_from_slice(&(block_align as u16).to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    if has_fact {
        out.extend_from_slice(b"fact");
        out.extend_from_slice(&4u32.to_le_bytes());
        out.extend_from_slice(&(samples.len() as u32).to_le_bytes());
    }
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data.len() as u32).to_le_bytes());
    out.extend_from_slice(&data);
    out
}

/// Parses one-sample-per-line text; '#' lines are comments. Reports the
/// offending line on failure.
pub fn parse_signal_csv(text: &str) -> Result<Vec<f64>> {
    let mut samples = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.parse::<f64>() {
            Ok(v) => samples.push(v),
            Err(_) => {
                return Err(CliError::Io(format!(
                    "csv: line {}: not a number: {line:?}",
                    idx + 1
                )))
            }
        }
    }
    Ok(samples)
}

pub fn format_signal_csv(samples: &[f64], provenance: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(p) = provenance {
        out.push_str(&format!("# {p}\n"));
    }
    for s in samples {
        out.push_str(&format!("{s}\n"));
    }
    out
}

/// Loads a signal from a `.wav` or `.csv` path; CSV needs a sample rate from
/// the configuration.
pub fn load_signal(path: &Path, csv_rate_hz: Option<f64>) -> Result<Signal> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    let bytes = std::fs::read(path).map_err(|e| CliError::file(path.display().to_string(), e))?;
    let (samples, rate) = match ext.as_str() {
        "wav" => parse_wav(&bytes)?,
        "csv" | "txt" => {
            let text = String::from_utf8(bytes)
                .map_err(|_| CliError::Io(format!("{}: not valid UTF-8", path.display())))?;
            let rate = csv_rate_hz.ok_or_else(|| {
                CliError::Config(format!(
                    "{}: CSV input needs io.sample_rate_hz (or the room sample rate) in the config",
                    path.display()
                ))
            })?;
            (parse_signal_csv(&text)?, rate)
        }
        other => {
            return Err(CliError::Io(format!(
                "{}: unsupported extension {other:?} (expected wav or csv)",
                path.display()
            )))
        }
    };
    Signal::new(samples, rate).map_err(CliError::Numeric)
}

/// Parses a sweep results CSV back into rows (see the sweep output schema).
pub fn parse_results_rows(text: &str) -> Result<Vec<otrir::eval::CsvRow>> {
    otrir::eval::parse_results_csv(text).map_err(CliError::Numeric)
}

pub fn write_wav_file(
    path: &Path,
    samples: &[f64],
    sample_rate_hz: f64,
    format: WavFormat,
) -> Result<()> {
    let bytes = encode_wav(samples, sample_rate_hz, format);
    write_bytes(path, &bytes)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::file(parent.display().to_string(), e))?;
        }
    }
    let mut f = std::fs::File::create(path)
        .map_err(|e| CliError::file(path.display().to_string(), e))?;
    f.write_all(bytes)
        .map_err(|e| CliError::file(path.display().to_string(), e))?;
    Ok(())
}
