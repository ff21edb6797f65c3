//! Portable float map.
//!
//! ```text
//! Pf | PF            1 or 3 channels
//! <width> <height>
//! <scale>            negative: little-endian payload, positive: big-endian
//! <payload>          f32 rows, bottom row first
//! ```
//!
//! In memory rows are top-down. Values are copied bit for bit, so NaN
//! payloads, negative zeros and denormals survive a round trip.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Pfm {
    /// `H×W` for grayscale, `H×W×3` for color.
    pub data: Tensor<f32>,
    /// Absolute value of the header scale.
    pub scale: f32,
    pub little_endian: bool,
}

fn malformed(reason: impl Into<String>) -> Error {
    Error::Format {
        format: "PFM",
        reason: reason.into(),
    }
}

/// Splits the next whitespace-delimited header token off `bytes[*pos..]`.
fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(malformed("truncated header"));
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| malformed("header is not ASCII"))
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Pfm> {
    let mut pos = 0;
    let channels = match token(bytes, &mut pos)? {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(malformed(format!("bad magic {other:?}"))),
    };
    let width: usize = token(bytes, &mut pos)?
        .parse()
        .map_err(|_| malformed("bad width"))?;
    let height: usize = token(bytes, &mut pos)?
        .parse()
        .map_err(|_| malformed("bad height"))?;
    let scale: f32 = token(bytes, &mut pos)?
        .parse()
        .map_err(|_| malformed("bad scale"))?;
    if width == 0 || height == 0 {
        return Err(malformed("zero dimension"));
    }
    if scale == 0.0 || !scale.is_finite() {
        return Err(malformed("scale must be finite and non-zero"));
    }
    // exactly one whitespace byte separates the header from the payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(malformed("missing payload"));
    }
    pos += 1;
    let little_endian = scale < 0.0;
    let row_len = width * channels;
    let need = height * row_len * 4;
    let payload = &bytes[pos..];
    if payload.len() < need {
        return Err(malformed(format!(
            "truncated payload: need {need} bytes, have {}",
            payload.len()
        )));
    }
    let mut data = vec![0.0f32; height * row_len];
    for (i, chunk) in payload[..need].chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little_endian {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let file_row = i / row_len;
        let mem_row = height - 1 - file_row;
        data[mem_row * row_len + i % row_len] = v;
    }
    let shape = if channels == 1 {
        vec![height, width]
    } else {
        vec![height, width, 3]
    };
    Ok(Pfm {
        data: Tensor::new(&shape, data)?,
        scale: scale.abs(),
        little_endian,
    })
}

/// Encodes `H×W` or `H×W×3` data as little-endian PFM with scale −1.
pub fn encode_pfm(data: &Tensor<f32>) -> Result<Vec<u8>> {
    let s = data.shape();
    let (h, w, magic) = match *s {
        [h, w] => (h, w, "Pf"),
        [h, w, 3] => (h, w, "PF"),
        _ => return Err(Error::shape(format!("PFM stores H×W or H×W×3, got {s:?}"))),
    };
    let row_len = data.len() / h;
    let mut out = format!("{magic}\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(data.len() * 4);
    for row in data.data().chunks_exact(row_len).rev() {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Pfm> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes)
}

/// Reads a single-channel map; a color (`PF`) file is an error.
pub fn read_pfm_gray(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let pfm = read_pfm(path)?;
    if pfm.data.rank() != 2 {
        return Err(malformed("expected a single-channel Pf file, found PF"));
    }
    Ok(pfm.data)
}

pub fn write_pfm(path: impl AsRef<Path>, data: &Tensor<f32>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pfm(data)?).map_err(|e| Error::io(path, e))
}
