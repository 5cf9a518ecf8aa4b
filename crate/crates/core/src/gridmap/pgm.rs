//! Binary 8-bit grayscale PGM (`P5`, maxval 255) and CSV grid files.

use super::{Cell, CityMap, GridError, GridSpec, RadioMap};
use std::fs;
use std::io::Write;
use std::path::Path;

/// Raw 8-bit image, row-major, row 0 at the top.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    City,
    /// Radio maps carry their transmitter cell, which the image does not.
    Radio { bs: Cell },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Grid {
    City(CityMap),
    Radio(RadioMap),
}

impl Grid {
    pub fn spec(&self) -> &GridSpec {
        match self {
            Grid::City(c) => c.spec(),
            Grid::Radio(r) => r.spec(),
        }
    }
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize, String> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(format!("expected {what}"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("{what} out of range"))
    }
}

fn parse_pgm(path: &Path, bytes: &[u8]) -> Result<Raster, GridError> {
    let malformed = |reason: String| GridError::MalformedHeader {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(malformed("missing P5 magic".into()));
    }
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let width = cur.number("width").map_err(malformed)?;
    let height = cur.number("height").map_err(malformed)?;
    let maxval = cur.number("maxval").map_err(malformed)?;
    if maxval != 255 {
        return Err(malformed(format!("maxval must be 255, got {maxval}")));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(malformed("missing whitespace after maxval".into())),
    }
    if width == 0 || height == 0 {
        return Err(GridError::Dimension {
            path: path.to_path_buf(),
            reason: format!("zero-sized image {width}x{height}"),
        });
    }
    let expected = width * height;
    let payload = &bytes[cur.pos..];
    if payload.len() < expected {
        return Err(GridError::Truncated {
            path: path.to_path_buf(),
            expected,
            found: payload.len(),
        });
    }
    Ok(Raster {
        height,
        width,
        data: payload[..expected].to_vec(),
    })
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Raster, GridError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| GridError::io(path, e))?;
    parse_pgm(path, &bytes)
}

pub fn write_pgm(path: impl AsRef<Path>, raster: &Raster) -> Result<(), GridError> {
    let path = path.as_ref();
    let mut out = format!("P5\n{} {}\n255\n", raster.width, raster.height).into_bytes();
    out.extend_from_slice(&raster.data);
    fs::write(path, out).map_err(|e| GridError::io(path, e))
}

/// Loads a grid image. Radio maps map pixel `p` to `p / 255`; city maps
/// treat `p >= 128` as building interior. When `expected` is given the image
/// dimensions must match it and its cell size is adopted; otherwise the
/// cell size defaults to 1 m.
pub fn load_grid(
    path: impl AsRef<Path>,
    kind: GridKind,
    expected: Option<&GridSpec>,
) -> Result<Grid, GridError> {
    let path = path.as_ref();
    let raster = read_pgm(path)?;
    let spec = match expected {
        Some(s) => {
            if s.height() != raster.height || s.width() != raster.width {
                return Err(GridError::Dimension {
                    path: path.to_path_buf(),
                    reason: format!(
                        "image is {}x{}, expected {}x{}",
                        raster.height,
                        raster.width,
                        s.height(),
                        s.width()
                    ),
                });
            }
            *s
        }
        None => GridSpec::unit(raster.height, raster.width)?,
    };
    match kind {
        GridKind::City => {
            let occupied = raster.data.iter().map(|&p| p >= 128).collect();
            Ok(Grid::City(CityMap::new(spec, occupied)?))
        }
        GridKind::Radio { bs } => {
            let values = raster.data.iter().map(|&p| p as f64 / 255.0).collect();
            Ok(Grid::Radio(RadioMap::new(spec, bs, values)?))
        }
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_radio_map(map: &RadioMap, path: impl AsRef<Path>) -> Result<(), GridError> {
    let spec = map.spec();
    write_pgm(
        path,
        &Raster {
            height: spec.height(),
            width: spec.width(),
            data: map.values().iter().map(|&v| quantize(v)).collect(),
        },
    )
}

pub fn save_city_map(city: &CityMap, path: impl AsRef<Path>) -> Result<(), GridError> {
    let spec = city.spec();
    write_pgm(
        path,
        &Raster {
            height: spec.height(),
            width: spec.width(),
            data: city.occupied().iter().map(|&o| if o { 255 } else { 0 }).collect(),
        },
    )
}

/// Writes `row,col,value` lines with a header.
pub fn write_csv(path: impl AsRef<Path>, spec: &GridSpec, values: &[f64]) -> Result<(), GridError> {
    let path = path.as_ref();
    if values.len() != spec.len() {
        return Err(GridError::CellCount {
            expected: spec.len(),
            found: values.len(),
        });
    }
    let file = fs::File::create(path).map_err(|e| GridError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let res = (|| -> std::io::Result<()> {
        writeln!(w, "row,col,value")?;
        for (i, v) in values.iter().enumerate() {
            let c = spec.cell(i);
            writeln!(w, "{},{},{}", c.row, c.col, v)?;
        }
        w.flush()
    })();
    res.map_err(|e| GridError::io(path, e))
}
