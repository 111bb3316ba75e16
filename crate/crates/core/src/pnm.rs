//! Netpbm graymap/pixmap codec (P2, P3, P5, P6).
//!
//! Samples are scaled to `[0, 1]` by `maxval` on read. On write, values are
//! clamped to `[0, 1]` and quantized as `round(v · maxval)`. Binary rasters
//! use one byte per sample up to `maxval = 255` and two big-endian bytes
//! above that.

use thiserror::Error;

use crate::signal::{Shape, Signal, SignalError};

pub const MAX_MAXVAL: u32 = 65_535;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PnmError {
    #[error("byte {offset}: unknown magic number (expected P2, P3, P5 or P6)")]
    BadMagic { offset: usize },
    #[error("byte {offset}: malformed header: {reason}")]
    MalformedHeader { offset: usize, reason: String },
    #[error("byte {offset}: maxval must be positive")]
    MaxvalZero { offset: usize },
    #[error("byte {offset}: maxval {value} exceeds 65535")]
    MaxvalTooLarge { offset: usize, value: u64 },
    #[error("byte {offset}: truncated raster, expected {expected} bytes, found {actual}")]
    Truncated {
        offset: usize,
        expected: usize,
        actual: usize,
    },
    #[error("byte {offset}: truncated ASCII raster, expected {expected} samples, found {actual}")]
    TruncatedAscii {
        offset: usize,
        expected: usize,
        actual: usize,
    },
    #[error("byte {offset}: sample {value} exceeds maxval {maxval}")]
    SampleOutOfRange {
        offset: usize,
        value: u64,
        maxval: u32,
    },
    #[error("byte {offset}: invalid ASCII sample")]
    BadSample { offset: usize },
    #[error("PNM supports 1 or 3 channels, got {0}")]
    UnsupportedChannels(usize),
    #[error("maxval must be in 1..=65535, got {0}")]
    InvalidMaxval(u32),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Encoding {
    Ascii,
    Binary,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    /// Skips whitespace and `#` comments (to end of line).
    fn skip_separators(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    /// Next unsigned decimal token, `None` at end of input.
    fn number(&mut self) -> Result<Option<(u64, usize)>, PnmError> {
        self.skip_separators();
        let start = self.pos;
        if start >= self.bytes.len() {
            return Ok(None);
        }
        let mut value: u64 = 0;
        while let Some(&b) = self.bytes.get(self.pos) {
            if !b.is_ascii_digit() {
                break;
            }
            value = value.saturating_mul(10).saturating_add(u64::from(b - b'0'));
            self.pos += 1;
        }
        let next = self.bytes.get(self.pos);
        let terminated = next.is_none_or(|b| b.is_ascii_whitespace() || *b == b'#');
        if self.pos == start || !terminated {
            return Err(PnmError::BadSample { offset: start });
        }
        Ok(Some((value, start)))
    }

    fn header_field(&mut self, name: &str) -> Result<(u64, usize), PnmError> {
        let offset = self.pos;
        match self.number() {
            Ok(Some(v)) => Ok(v),
            Ok(None) => Err(PnmError::MalformedHeader {
                offset,
                reason: format!("missing {name}"),
            }),
            Err(PnmError::BadSample { offset }) => Err(PnmError::MalformedHeader {
                offset,
                reason: format!("{name} is not a decimal integer"),
            }),
            Err(e) => Err(e),
        }
    }
}

/// Decodes a PNM image into a signal scaled by `maxval`.
pub fn read_pnm(bytes: &[u8]) -> Result<Signal, PnmError> {
    let (channels, encoding) = match bytes.get(..2) {
        Some(b"P2") => (1, Encoding::Ascii),
        Some(b"P3") => (3, Encoding::Ascii),
        Some(b"P5") => (1, Encoding::Binary),
        Some(b"P6") => (3, Encoding::Binary),
        _ => return Err(PnmError::BadMagic { offset: 0 }),
    };
    if bytes
        .get(2)
        .is_none_or(|b| !(b.is_ascii_whitespace() || *b == b'#'))
    {
        return Err(PnmError::MalformedHeader {
            offset: 2,
            reason: "magic number must be followed by whitespace".into(),
        });
    }
    let mut cur = Cursor { bytes, pos: 2 };
    let (width, w_off) = cur.header_field("width")?;
    let (height, h_off) = cur.header_field("height")?;
    let (maxval, m_off) = cur.header_field("maxval")?;
    if width == 0 {
        return Err(PnmError::MalformedHeader {
            offset: w_off,
            reason: "width must be positive".into(),
        });
    }
    if height == 0 {
        return Err(PnmError::MalformedHeader {
            offset: h_off,
            reason: "height must be positive".into(),
        });
    }
    if maxval == 0 {
        return Err(PnmError::MaxvalZero { offset: m_off });
    }
    if maxval > u64::from(MAX_MAXVAL) {
        return Err(PnmError::MaxvalTooLarge {
            offset: m_off,
            value: maxval,
        });
    }
    let maxval = maxval as u32;
    let shape = Shape::new(height as usize, width as usize, channels);
    let count = shape.len();
    let scale = 1.0 / f64::from(maxval);
    let mut values = Vec::with_capacity(count);
    match encoding {
        Encoding::Ascii => {
            for i in 0..count {
                match cur.number()? {
                    Some((v, offset)) => {
                        if v > u64::from(maxval) {
                            return Err(PnmError::SampleOutOfRange {
                                offset,
                                value: v,
                                maxval,
                            });
                        }
                        values.push(v as f64 * scale);
                    }
                    None => {
                        return Err(PnmError::TruncatedAscii {
                            offset: bytes.len(),
                            expected: count,
                            actual: i,
                        })
                    }
                }
            }
        }
        Encoding::Binary => {
            // exactly one whitespace byte separates maxval from the raster
            match bytes.get(cur.pos) {
                Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
                _ => {
                    return Err(PnmError::MalformedHeader {
                        offset: cur.pos,
                        reason: "maxval must be followed by a single whitespace byte".into(),
                    })
                }
            }
            let width_bytes = if maxval > 255 { 2 } else { 1 };
            let expected = count * width_bytes;
            let raster = &bytes[cur.pos..];
            if raster.len() < expected {
                return Err(PnmError::Truncated {
                    offset: cur.pos,
                    expected,
                    actual: raster.len(),
                });
            }
            for (i, chunk) in raster[..expected].chunks_exact(width_bytes).enumerate() {
                let v = match chunk {
                    [b] => u32::from(*b),
                    [hi, lo] => u32::from(*hi) << 8 | u32::from(*lo),
                    _ => unreachable!(),
                };
                if v > maxval {
                    return Err(PnmError::SampleOutOfRange {
                        offset: cur.pos + i * width_bytes,
                        value: u64::from(v),
                        maxval,
                    });
                }
                values.push(f64::from(v) * scale);
            }
        }
    }
    Ok(Signal::new(values, shape)?)
}

/// Quantizes one value: clamp to `[0, 1]`, then `round(v · maxval)`.
pub fn quantize(v: f64, maxval: u32) -> u32 {
    (v.clamp(0.0, 1.0) * f64::from(maxval)).round() as u32
}

/// Encodes a 1- or 3-channel signal. ASCII output puts one image row per line.
pub fn write_pnm(sig: &Signal, binary: bool, maxval: u32) -> Result<Vec<u8>, PnmError> {
    let shape = sig.shape();
    let magic = match (shape.channels, binary) {
        (1, false) => "P2",
        (3, false) => "P3",
        (1, true) => "P5",
        (3, true) => "P6",
        (c, _) => return Err(PnmError::UnsupportedChannels(c)),
    };
    if maxval == 0 || maxval > MAX_MAXVAL {
        return Err(PnmError::InvalidMaxval(maxval));
    }
    let mut out = format!("{magic}\n{} {}\n{maxval}\n", shape.width, shape.height).into_bytes();
    let row_len = shape.width * shape.channels;
    if binary {
        for &v in sig.values() {
            let q = quantize(v, maxval);
            if maxval > 255 {
                out.extend_from_slice(&(q as u16).to_be_bytes());
            } else {
                out.push(q as u8);
            }
        }
    } else {
        for row in sig.values().chunks(row_len) {
            let line: Vec<String> = row
                .iter()
                .map(|&v| quantize(v, maxval).to_string())
                .collect();
            out.extend_from_slice(line.join(" ").as_bytes());
            out.push(b'\n');
        }
    }
    Ok(out)
}
