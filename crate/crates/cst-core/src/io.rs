//! Bit-exact persistence: a small binary container for images and
//! sinograms, plus PGM and CSV export.
//!
//! Container layout: 8 ASCII magic bytes ("CSTIMG01" or "CSTSIN01"), a
//! 32-bit little-endian header length, that many bytes of UTF-8 JSON
//! (dimensions, bounds, dtype "f64le", layout "row-major"), then the raw
//! little-endian f64 payload. Writers go through a temp file and rename,
//! so concurrent readers never observe a partial file. The JSON schema is
//! documented in `docs/formats.md`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CstError, Result};
use crate::grid::{GridSpec, ImageGrid, ScanGeometry, Sinogram};

pub const IMAGE_MAGIC: &[u8; 8] = b"CSTIMG01";
pub const SINOGRAM_MAGIC: &[u8; 8] = b"CSTSIN01";

#[derive(Debug, Serialize, Deserialize)]
struct ImageHeader {
    kind: String,
    nx: usize,
    ny: usize,
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
    dtype: String,
    layout: String,
    #[serde(default)]
    created_by: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SinogramHeader {
    kind: String,
    ns: usize,
    ntheta: usize,
    smin: f64,
    smax: f64,
    thetamin: f64,
    thetamax: f64,
    dtype: String,
    layout: String,
    #[serde(default)]
    created_by: Option<String>,
}

fn created_by() -> Option<String> {
    Some(format!("cst-core {}", env!("CARGO_PKG_VERSION")))
}

fn write_container(path: &Path, magic: &[u8; 8], header_json: &[u8], payload: &[f64]) -> Result<()> {
    let mut bytes =
        Vec::with_capacity(8 + 4 + header_json.len() + payload.len() * 8);
    bytes.extend_from_slice(magic);
    bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(header_json);
    for v in payload {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(path, &bytes)
}

/// Write bytes through a sibling temp file and rename into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let stem = path.file_name().map(|s| s.to_string_lossy().into_owned());
    let tmp = dir.join(format!(
        ".{}.tmp.{}",
        stem.as_deref().unwrap_or("out"),
        std::process::id()
    ));
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Container {
    header: Vec<u8>,
    payload: Vec<f64>,
}

fn read_container(path: &Path, magic: &[u8; 8], other_kind: &[u8; 8]) -> Result<Container> {
    let mut file = fs::File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    if bytes.len() < 12 {
        return Err(CstError::TruncatedPayload { expected_bytes: 12, got_bytes: bytes.len() });
    }
    let found: [u8; 8] = bytes[0..8].try_into().unwrap();
    if &found != magic {
        if &found == other_kind {
            return Err(CstError::StageMismatch {
                expected: if magic == IMAGE_MAGIC { "image" } else { "sinogram" },
                found: String::from_utf8_lossy(&found).into_owned(),
            });
        }
        return Err(CstError::MagicMismatch { found });
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload_start = 12 + header_len;
    if bytes.len() < payload_start {
        return Err(CstError::HeaderError(format!(
            "declared header length {header_len} exceeds file size"
        )));
    }
    let header = bytes[12..payload_start].to_vec();
    let body = &bytes[payload_start..];
    if body.len() % 8 != 0 {
        return Err(CstError::TruncatedPayload {
            expected_bytes: body.len().next_multiple_of(8),
            got_bytes: body.len(),
        });
    }
    let payload = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Container { header, payload })
}

pub fn write_image(path: impl AsRef<Path>, img: &ImageGrid) -> Result<()> {
    let s = img.spec();
    let header = ImageHeader {
        kind: "image".into(),
        nx: s.nx,
        ny: s.ny,
        xmin: s.xmin,
        xmax: s.xmax,
        ymin: s.ymin,
        ymax: s.ymax,
        dtype: "f64le".into(),
        layout: "row-major".into(),
        created_by: created_by(),
    };
    let json = serde_json::to_vec(&header)?;
    write_container(path.as_ref(), IMAGE_MAGIC, &json, img.values())
}

pub fn read_image(path: impl AsRef<Path>) -> Result<ImageGrid> {
    let c = read_container(path.as_ref(), IMAGE_MAGIC, SINOGRAM_MAGIC)?;
    let h: ImageHeader =
        serde_json::from_slice(&c.header).map_err(|e| CstError::HeaderError(e.to_string()))?;
    if h.dtype != "f64le" || h.layout != "row-major" {
        return Err(CstError::HeaderError(format!(
            "unsupported dtype/layout {}/{}",
            h.dtype, h.layout
        )));
    }
    let expected = h.nx.checked_mul(h.ny).ok_or_else(|| {
        CstError::DimensionMismatch("image dimensions overflow".into())
    })?;
    if c.payload.len() != expected {
        return Err(CstError::TruncatedPayload {
            expected_bytes: expected * 8,
            got_bytes: c.payload.len() * 8,
        });
    }
    let spec = GridSpec::new(h.nx, h.ny, (h.xmin, h.xmax, h.ymin, h.ymax))?;
    ImageGrid::new(spec, c.payload)
}

pub fn write_sinogram(path: impl AsRef<Path>, sino: &Sinogram) -> Result<()> {
    let g = sino.geom();
    let header = SinogramHeader {
        kind: "sinogram".into(),
        ns: g.ns,
        ntheta: g.ntheta,
        smin: g.smin,
        smax: g.smax,
        thetamin: g.thetamin,
        thetamax: g.thetamax,
        dtype: "f64le".into(),
        layout: "row-major".into(),
        created_by: created_by(),
    };
    let json = serde_json::to_vec(&header)?;
    write_container(path.as_ref(), SINOGRAM_MAGIC, &json, sino.values())
}

pub fn read_sinogram(path: impl AsRef<Path>) -> Result<Sinogram> {
    let c = read_container(path.as_ref(), SINOGRAM_MAGIC, IMAGE_MAGIC)?;
    let h: SinogramHeader =
        serde_json::from_slice(&c.header).map_err(|e| CstError::HeaderError(e.to_string()))?;
    if h.dtype != "f64le" || h.layout != "row-major" {
        return Err(CstError::HeaderError(format!(
            "unsupported dtype/layout {}/{}",
            h.dtype, h.layout
        )));
    }
    let expected = h.ns.checked_mul(h.ntheta).ok_or_else(|| {
        CstError::DimensionMismatch("sinogram dimensions overflow".into())
    })?;
    if c.payload.len() != expected {
        return Err(CstError::TruncatedPayload {
            expected_bytes: expected * 8,
            got_bytes: c.payload.len() * 8,
        });
    }
    let geom = ScanGeometry::new(h.ns, h.ntheta, (h.smin, h.smax), (h.thetamin, h.thetamax))?;
    Sinogram::new(geom, c.payload)
}

/// Value range used when mapping an image to 16-bit gray levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PgmRange {
    /// Map [min, max] of the image to [0, 65535].
    Auto,
    /// Map the given [lo, hi] to [0, 65535], clamping outside values.
    Fixed(f64, f64),
}

/// 16-bit binary PGM export (P5, big-endian samples per the format).
pub fn export_pgm(path: impl AsRef<Path>, img: &ImageGrid, range: PgmRange) -> Result<()> {
    let (lo, hi) = match range {
        PgmRange::Fixed(lo, hi) => {
            if !(hi > lo) {
                return Err(CstError::InvalidParameter("empty PGM range".into()));
            }
            (lo, hi)
        }
        PgmRange::Auto => {
            let lo = img.values().iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = img.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                (lo, hi)
            } else {
                (lo, lo + 1.0)
            }
        }
    };
    let mut bytes = format!("P5\n{} {}\n65535\n", img.nx(), img.ny()).into_bytes();
    // Top PGM row = largest y, so the file displays with y upward.
    for iy in (0..img.ny()).rev() {
        for ix in 0..img.nx() {
            let v = (img.get(ix, iy) - lo) / (hi - lo);
            let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
            bytes.extend_from_slice(&q.to_be_bytes());
        }
    }
    atomic_write(path.as_ref(), &bytes)
}

/// RFC-4180-style CSV with a header row; floats carry 17 significant
/// digits so they round-trip exactly.
pub fn export_csv(path: impl AsRef<Path>, columns: &[(&str, &[f64])]) -> Result<()> {
    if let Some(first) = columns.first() {
        if columns.iter().any(|(_, c)| c.len() != first.1.len()) {
            return Err(CstError::DimensionMismatch("CSV columns differ in length".into()));
        }
    }
    let mut text = String::new();
    text.push_str(
        &columns.iter().map(|(name, _)| *name).collect::<Vec<_>>().join(","),
    );
    text.push_str("\r\n");
    let rows = columns.first().map_or(0, |(_, c)| c.len());
    for r in 0..rows {
        let row: Vec<String> = columns.iter().map(|(_, c)| format!("{:.16e}", c[r])).collect();
        text.push_str(&row.join(","));
        text.push_str("\r\n");
    }
    atomic_write(path.as_ref(), text.as_bytes())
}
