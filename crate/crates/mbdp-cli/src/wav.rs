//! Minimal RIFF/WAVE reader and writer.
//!
//! Supports 16-bit and 24-bit integer PCM and 32-bit float, mono or
//! multichannel, including WAVE_FORMAT_EXTENSIBLE headers that wrap those
//! formats. Samples are normalized to ±1.0 as `f64` in memory (integer
//! full scale maps to ±1.0; +1.0 saturates to the format maximum on
//! write). Unknown chunks are skipped on read.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

const WAVE_FORMAT_PCM: u16 = 0x0001;
const WAVE_FORMAT_IEEE_FLOAT: u16 = 0x0003;
const WAVE_FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug)]
pub enum WavError {
    Io(io::Error),
    Malformed(String),
    Unsupported(String),
}

impl fmt::Display for WavError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WavError::Io(e) => write!(f, "{e}"),
            WavError::Malformed(m) => write!(f, "malformed WAV: {m}"),
            WavError::Unsupported(m) => write!(f, "unsupported WAV: {m}"),
        }
    }
}

impl std::error::Error for WavError {}

impl From<io::Error> for WavError {
    fn from(e: io::Error) -> Self {
        WavError::Io(e)
    }
}

/// On-disk sample encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    Int16,
    Int24,
    Float32,
}

impl SampleFormat {
    pub fn bits(self) -> u16 {
        match self {
            SampleFormat::Int16 => 16,
            SampleFormat::Int24 => 24,
            SampleFormat::Float32 => 32,
        }
    }
}

/// Decoded audio: per-channel normalized samples plus the source format.
#[derive(Debug, Clone)]
pub struct WavAudio {
    pub sample_rate: u32,
    pub format: SampleFormat,
    /// One Vec per channel, equal lengths.
    pub channels: Vec<Vec<f64>>,
}

impl WavAudio {
    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn num_frames(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, WavError> {
        let bytes = fs::read(path)?;
        Self::parse(&bytes)
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, WavError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != b"RIFF" {
            return Err(WavError::Malformed("missing RIFF header".into()));
        }
        let _riff_size = r.u32()?;
        if r.take(4)? != b"WAVE" {
            return Err(WavError::Malformed("missing WAVE tag".into()));
        }

        let mut fmt: Option<(u16, u16, u32, u16)> = None; // format, channels, rate, bits
        let mut data: Option<&[u8]> = None;
        while r.remaining() >= 8 {
            let id: [u8; 4] = r.take(4)?.try_into().unwrap();
            let size = r.u32()? as usize;
            let size = size.min(r.remaining());
            let body = r.take(size)?;
            match &id {
                b"fmt " => {
                    if body.len() < 16 {
                        return Err(WavError::Malformed("fmt chunk too short".into()));
                    }
                    let mut format = u16::from_le_bytes([body[0], body[1]]);
                    let channels = u16::from_le_bytes([body[2], body[3]]);
                    let rate = u32::from_le_bytes([body[4], body[5], body[6], body[7]]);
                    let bits = u16::from_le_bytes([body[14], body[15]]);
                    if format == WAVE_FORMAT_EXTENSIBLE {
                        // Sub-format GUID starts at offset 24; its first two
                        // bytes are the wrapped format code.
                        if body.len() < 26 {
                            return Err(WavError::Malformed(
                                "extensible fmt chunk too short".into(),
                            ));
                        }
                        format = u16::from_le_bytes([body[24], body[25]]);
                    }
                    fmt = Some((format, channels, rate, bits));
                }
                b"data" => data = Some(body),
                _ => {} // skip
            }
            if size % 2 == 1 && r.remaining() > 0 {
                r.take(1)?; // chunk pad byte
            }
        }

        let (format, channels, rate, bits) =
            fmt.ok_or_else(|| WavError::Malformed("no fmt chunk".into()))?;
        let data = data.ok_or_else(|| WavError::Malformed("no data chunk".into()))?;
        if channels == 0 {
            return Err(WavError::Malformed("zero channels".into()));
        }
        let sample_format = match (format, bits) {
            (WAVE_FORMAT_PCM, 16) => SampleFormat::Int16,
            (WAVE_FORMAT_PCM, 24) => SampleFormat::Int24,
            (WAVE_FORMAT_IEEE_FLOAT, 32) => SampleFormat::Float32,
            (f, b) => {
                return Err(WavError::Unsupported(format!(
                "format tag {f} with {b} bits per sample (supported: 16/24-bit PCM, 32-bit float)"
            )))
            }
        };

        let bytes_per_sample = (sample_format.bits() / 8) as usize;
        let frame_bytes = bytes_per_sample * channels as usize;
        let frames = data.len() / frame_bytes;
        let mut chans: Vec<Vec<f64>> = (0..channels).map(|_| Vec::with_capacity(frames)).collect();
        for frame in 0..frames {
            for (c, chan) in chans.iter_mut().enumerate() {
                let off = frame * frame_bytes + c * bytes_per_sample;
                let v = match sample_format {
                    SampleFormat::Int16 => {
                        i16::from_le_bytes([data[off], data[off + 1]]) as f64 / 32768.0
                    }
                    SampleFormat::Int24 => {
                        let raw = (data[off] as i32)
                            | ((data[off + 1] as i32) << 8)
                            | ((data[off + 2] as i8 as i32) << 16);
                        raw as f64 / 8388608.0
                    }
                    SampleFormat::Float32 => {
                        f32::from_le_bytes([data[off], data[off + 1], data[off + 2], data[off + 3]])
                            as f64
                    }
                };
                chan.push(v);
            }
        }
        Ok(WavAudio {
            sample_rate: rate,
            format: sample_format,
            channels: chans,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), WavError> {
        let bytes = self.encode()?;
        let mut f = fs::File::create(path)?;
        f.write_all(&bytes)?;
        f.flush()?;
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>, WavError> {
        let channels = self.channels.len();
        if channels == 0 {
            return Err(WavError::Malformed("zero channels".into()));
        }
        let frames = self.channels[0].len();
        if self.channels.iter().any(|c| c.len() != frames) {
            return Err(WavError::Malformed("channel length mismatch".into()));
        }
        let bytes_per_sample = (self.format.bits() / 8) as usize;
        let block_align = (bytes_per_sample * channels) as u16;
        let data_len = frames * block_align as usize;
        let is_float = self.format == SampleFormat::Float32;
        // fmt(24) + optional fact(12) + data header(8)
        let riff_len = 4 + 24 + if is_float { 12 } else { 0 } + 8 + data_len + data_len % 2;

        let mut out = Vec::with_capacity(riff_len + 8);
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&(riff_len as u32).to_le_bytes());
        out.extend_from_slice(b"WAVE");

        out.extend_from_slice(b"fmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        let tag = if is_float {
            WAVE_FORMAT_IEEE_FLOAT
        } else {
            WAVE_FORMAT_PCM
        };
        out.extend_from_slice(&tag.to_le_bytes());
        out.extend_from_slice(&(channels as u16).to_le_bytes());
        out.extend_from_slice(&self.sample_rate.to_le_bytes());
        out.extend_from_slice(&(self.sample_rate * block_align as u32).to_le_bytes());
        out.extend_from_slice(&block_align.to_le_bytes());
        out.extend_from_slice(&self.format.bits().to_le_bytes());

        if is_float {
            out.extend_from_slice(b"fact");
            out.extend_from_slice(&4u32.to_le_bytes());
            out.extend_from_slice(&(frames as u32).to_le_bytes());
        }

        out.extend_from_slice(b"data");
        out.extend_from_slice(&(data_len as u32).to_le_bytes());
        for frame in 0..frames {
            for chan in &self.channels {
                let x = chan[frame];
                match self.format {
                    SampleFormat::Int16 => {
                        let v = (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                    SampleFormat::Int24 => {
                        let v = (x * 8388608.0).round().clamp(-8388608.0, 8388607.0) as i32;
                        out.extend_from_slice(&v.to_le_bytes()[..3]);
                    }
                    SampleFormat::Float32 => {
                        out.extend_from_slice(&(x as f32).to_le_bytes());
                    }
                }
            }
        }
        if data_len % 2 == 1 {
            out.push(0);
        }
        Ok(out)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WavError> {
        if self.remaining() < n {
            return Err(WavError::Malformed("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, WavError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
