//! PGM (P2/P5, maxval 255) and single-column CSV codecs.
//!
//! Image samples map to `[0, 1]` as `v / 255` on read. On write, values are
//! clamped to `[0, 1]` and rounded half away from zero; this is the only
//! place in the crate where intensities are clamped.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{DiffusionError, Result};
use crate::grid::ScalarField;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PgmFormat {
    /// ASCII samples, magic `P2`.
    Plain,
    /// Binary samples, magic `P5`.
    Raw,
}

/// A decoded PGM file.
#[derive(Debug, Clone, PartialEq)]
pub struct PgmImage {
    pub format: PgmFormat,
    pub field: ScalarField,
    /// Bytes left after the declared payload (not consumed).
    pub trailing_bytes: usize,
}

const MAXVAL: u32 = 255;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_space_and_comments(&mut self) {
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

    fn number(&mut self, what: &str) -> Result<u32> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(match self.bytes.get(self.pos) {
                None => DiffusionError::parse_at_byte(start, format!("unexpected end of data, expected {what}")),
                Some(&b) => DiffusionError::parse_at_byte(start, format!("expected {what}, found {:?}", b as char)),
            });
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        text.parse::<u32>()
            .map_err(|_| DiffusionError::parse_at_byte(start, format!("{what} {text} is out of range")))
    }
}

/// Decodes a P2 or P5 image.
pub fn decode_pgm(bytes: &[u8]) -> Result<PgmImage> {
    let format = match bytes.get(..2) {
        Some(b"P2") => PgmFormat::Plain,
        Some(b"P5") => PgmFormat::Raw,
        _ => return Err(DiffusionError::parse_at_byte(0, "expected magic number P2 or P5")),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    if !cur.bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(DiffusionError::parse_at_byte(
            2,
            "expected whitespace after magic number",
        ));
    }
    let width = cur.number("width")? as usize;
    let height = cur.number("height")? as usize;
    if width == 0 || height == 0 {
        return Err(DiffusionError::parse_at_byte(
            cur.pos,
            format!("empty image {width}x{height}"),
        ));
    }
    cur.skip_space_and_comments();
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if maxval != MAXVAL {
        return Err(DiffusionError::parse_at_byte(
            maxval_at,
            format!("unsupported maxval {maxval} (only 255 is supported)"),
        ));
    }
    let count = width
        .checked_mul(height)
        .ok_or_else(|| DiffusionError::parse_at_byte(maxval_at, "image dimensions overflow"))?;
    let mut values = Vec::with_capacity(count);
    let trailing_bytes = match format {
        PgmFormat::Raw => {
            if !cur.bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
                return Err(DiffusionError::parse_at_byte(
                    cur.pos,
                    "expected a single whitespace byte before the raster",
                ));
            }
            let start = cur.pos + 1;
            let end = start + count;
            if bytes.len() < end {
                return Err(DiffusionError::parse_at_byte(
                    bytes.len(),
                    format!(
                        "truncated raster: {} of {count} samples present",
                        bytes.len().saturating_sub(start)
                    ),
                ));
            }
            values.extend(bytes[start..end].iter().map(|&b| f64::from(b) / 255.0));
            bytes.len() - end
        }
        PgmFormat::Plain => {
            for _ in 0..count {
                let at = cur.pos;
                let v = cur.number("sample")?;
                if v > MAXVAL {
                    return Err(DiffusionError::parse_at_byte(
                        at,
                        format!("sample {v} exceeds maxval {MAXVAL}"),
                    ));
                }
                values.push(f64::from(v) / 255.0);
            }
            let end = cur.pos;
            let rest = &bytes[end..];
            rest.len() - rest.iter().take_while(|b| b.is_ascii_whitespace()).count()
        }
    };
    Ok(PgmImage {
        format,
        field: ScalarField::new(height, width, values)?,
        trailing_bytes,
    })
}

/// Reads a PGM image into a field with values `v / 255`.
pub fn read_pgm(bytes: &[u8]) -> Result<ScalarField> {
    decode_pgm(bytes).map(|img| img.field)
}

/// The 8-bit sample for an intensity: clamp to `[0, 1]`, scale by 255,
/// round half away from zero.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_pgm(field: &ScalarField, format: PgmFormat) -> Vec<u8> {
    let (h, w) = (field.height(), field.width());
    let magic = match format {
        PgmFormat::Plain => "P2",
        PgmFormat::Raw => "P5",
    };
    let mut out = format!("{magic}\n{w} {h}\n{MAXVAL}\n").into_bytes();
    match format {
        PgmFormat::Raw => out.extend(field.values().iter().map(|&v| quantize(v))),
        PgmFormat::Plain => {
            let mut text = String::with_capacity(4 * field.len());
            for row in field.values().chunks(w) {
                for (j, &v) in row.iter().enumerate() {
                    if j > 0 {
                        text.push(' ');
                    }
                    let _ = write!(text, "{}", quantize(v));
                }
                text.push('\n');
            }
            out.extend(text.into_bytes());
        }
    }
    out
}

/// Parses a 1D signal: one number per line, or comma-separated values.
pub fn read_csv_signal(text: &str) -> Result<ScalarField> {
    let mut values = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        for token in line.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let v: f64 = token
                .parse()
                .map_err(|_| DiffusionError::parse_at_line(idx + 1, format!("not a number: {token:?}")))?;
            if !v.is_finite() {
                return Err(DiffusionError::parse_at_line(
                    idx + 1,
                    format!("non-finite value {token:?}"),
                ));
            }
            values.push(v);
        }
    }
    if values.is_empty() {
        return Err(DiffusionError::parse_at_line(1, "no values in signal"));
    }
    ScalarField::from_signal(values)
}

/// One value per line, in shortest round-trip decimal form.
pub fn write_csv_signal(field: &ScalarField) -> Result<String> {
    if field.height() != 1 {
        return Err(DiffusionError::Dimension {
            expected: "a 1xN signal".into(),
            actual: format!("{}x{}", field.height(), field.width()),
        });
    }
    let mut out = String::with_capacity(24 * field.len());
    for v in field.values() {
        let _ = writeln!(out, "{v}");
    }
    Ok(out)
}

/// On-disk representation chosen by file extension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    Pgm,
    Csv,
}

impl FileKind {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("pgm") => Ok(FileKind::Pgm),
            Some("csv") => Ok(FileKind::Csv),
            _ => Err(DiffusionError::Config(format!(
                "cannot infer file type of {} (expected .pgm or .csv)",
                path.display()
            ))),
        }
    }

    pub fn extension(&self) -> &'static str {
        match self {
            FileKind::Pgm => "pgm",
            FileKind::Csv => "csv",
        }
    }
}

pub fn load_field(path: &Path) -> Result<ScalarField> {
    let kind = FileKind::from_path(path)?;
    let bytes = std::fs::read(path).map_err(|e| DiffusionError::Io(format!("{}: {e}", path.display())))?;
    match kind {
        FileKind::Pgm => read_pgm(&bytes),
        FileKind::Csv => {
            let text = String::from_utf8(bytes)
                .map_err(|e| DiffusionError::parse_at_byte(e.utf8_error().valid_up_to(), "invalid UTF-8"))?;
            read_csv_signal(&text)
        }
    }
}

/// Writes `field` as binary PGM or CSV depending on the extension of `path`.
pub fn save_field(path: &Path, field: &ScalarField) -> Result<()> {
    let bytes = match FileKind::from_path(path)? {
        FileKind::Pgm => write_pgm(field, PgmFormat::Raw),
        FileKind::Csv => write_csv_signal(field)?.into_bytes(),
    };
    std::fs::write(path, bytes).map_err(|e| DiffusionError::Io(format!("{}: {e}", path.display())))
}
