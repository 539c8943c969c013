//! The STF1 field container.
//!
//! Layout: bytes 0–3 are the magic `STF1`; bytes 4–7 an unsigned 32-bit
//! little-endian header length `L`; bytes `8..8+L` a UTF-8 JSON header with
//! keys `{name, grid_dims, n_time, dt, mask_encoding: "bitpacked"}`; then
//! `ceil(n_cells/8)` bytes of bit-packed mask (cell `c` lives at byte `c/8`,
//! bit `c mod 8`); then `n_time * n_cells` 32-bit IEEE-754 little-endian
//! floats, time-major. Masked-invalid cells are stored as 0.0.
//!
//! Encoding is canonical — header keys are sorted and the mask's padding
//! bits are zero — so save/load round trips are byte-exact and equal inputs
//! produce equal checksums.

use std::path::Path;

use serde::{Deserialize, Serialize};
use shred_core::field::SpatioTemporalField;
use shred_core::Matrix;

pub const MAGIC: [u8; 4] = *b"STF1";

/// Failure modes of the container, kept distinct so callers can tell a
/// foreign file from a truncated or corrupted one.
#[derive(Debug, thiserror::Error)]
pub enum StfError {
    #[error("bad magic: expected \"STF1\", found {found:?}")]
    BadMagic { found: [u8; 4] },
    #[error("file truncated: need at least {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error(
        "payload size mismatch: header implies {expected} bytes after the mask, found {found}"
    )]
    PayloadSize { expected: usize, found: usize },
    #[error("non-finite value at time {t}, cell {c}")]
    NonFinite { t: usize, c: usize },
    #[error("invalid header: {0}")]
    Header(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dt: f64,
    grid_dims: Vec<usize>,
    mask_encoding: String,
    n_time: usize,
    name: String,
}

/// Serialize a field to STF1 bytes.
pub fn encode_field(field: &SpatioTemporalField) -> Vec<u8> {
    let (g1, g2) = field.grid_dims;
    let header = Header {
        dt: field.dt,
        grid_dims: vec![g1, g2],
        mask_encoding: "bitpacked".into(),
        n_time: field.n_time(),
        name: field.name.clone(),
    };
    // serde_json maps are key-sorted, so this is canonical.
    let header_bytes = serde_json::to_vec(&header).expect("header is plain data");

    let n_cells = field.n_cells();
    let mut out = Vec::with_capacity(8 + header_bytes.len() + n_cells.div_ceil(8) + 4 * n_cells);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);

    let mut mask_bytes = vec![0u8; n_cells.div_ceil(8)];
    for (c, &valid) in field.mask.iter().enumerate() {
        if valid {
            mask_bytes[c / 8] |= 1 << (c % 8);
        }
    }
    out.extend_from_slice(&mask_bytes);

    for t in 0..field.n_time() {
        for c in 0..n_cells {
            out.extend_from_slice(&field.values[(t, c)].to_le_bytes());
        }
    }
    out
}

/// Parse STF1 bytes back into a field, verifying sizes and finiteness.
pub fn decode_field(bytes: &[u8]) -> Result<SpatioTemporalField, StfError> {
    if bytes.len() < 8 {
        return Err(StfError::Truncated {
            needed: 8,
            have: bytes.len(),
        });
    }
    let found: [u8; 4] = bytes[0..4].try_into().unwrap();
    if found != MAGIC {
        return Err(StfError::BadMagic { found });
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + header_len {
        return Err(StfError::Truncated {
            needed: 8 + header_len,
            have: bytes.len(),
        });
    }
    let header: Header = serde_json::from_slice(&bytes[8..8 + header_len])
        .map_err(|e| StfError::Header(e.to_string()))?;
    if header.mask_encoding != "bitpacked" {
        return Err(StfError::Header(format!(
            "unsupported mask_encoding {:?}",
            header.mask_encoding
        )));
    }
    let grid_dims = match header.grid_dims.as_slice() {
        [n] => (1usize, *n),
        [g1, g2] => (*g1, *g2),
        other => {
            return Err(StfError::Header(format!(
                "grid_dims must have 1 or 2 entries, got {}",
                other.len()
            )))
        }
    };
    let n_cells = grid_dims.0 * grid_dims.1;
    if n_cells == 0 || header.n_time == 0 {
        return Err(StfError::Header("empty grid or time axis".into()));
    }

    let mask_len = n_cells.div_ceil(8);
    let mask_start = 8 + header_len;
    let payload_start = mask_start + mask_len;
    if bytes.len() < payload_start {
        return Err(StfError::Truncated {
            needed: payload_start,
            have: bytes.len(),
        });
    }
    let expected = header.n_time * n_cells * 4;
    let found_len = bytes.len() - payload_start;
    if found_len != expected {
        return Err(StfError::PayloadSize {
            expected,
            found: found_len,
        });
    }

    let mask_bytes = &bytes[mask_start..payload_start];
    let mask: Vec<bool> = (0..n_cells)
        .map(|c| mask_bytes[c / 8] & (1 << (c % 8)) != 0)
        .collect();

    let payload = &bytes[payload_start..];
    let mut values = Matrix::<f32>::zeros(header.n_time, n_cells);
    for t in 0..header.n_time {
        for c in 0..n_cells {
            let off = (t * n_cells + c) * 4;
            let v = f32::from_le_bytes(payload[off..off + 4].try_into().unwrap());
            if !v.is_finite() {
                return Err(StfError::NonFinite { t, c });
            }
            values[(t, c)] = v;
        }
    }

    SpatioTemporalField::new(header.name, values, grid_dims, mask, header.dt)
        .map_err(|e| StfError::Header(e.to_string()))
}

pub fn save_field(field: &SpatioTemporalField, path: &Path) -> Result<(), StfError> {
    std::fs::write(path, encode_field(field)).map_err(|source| StfError::Io {
        context: format!("writing {}", path.display()),
        source,
    })
}

pub fn load_field(path: &Path) -> Result<SpatioTemporalField, StfError> {
    let bytes = std::fs::read(path).map_err(|source| StfError::Io {
        context: format!("reading {}", path.display()),
        source,
    })?;
    decode_field(&bytes)
}

/// Total file size for a given shape: `8 + L + ceil(n_cells/8) +
/// n_time * n_cells * 4`.
pub fn expected_len(header_len: usize, n_time: usize, n_cells: usize) -> usize {
    8 + header_len + n_cells.div_ceil(8) + n_time * n_cells * 4
}
