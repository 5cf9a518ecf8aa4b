//! Grid, city and radio-map data model.
//!
//! Grids are row-major with row 0 at the top, matching image layout so that
//! grayscale map assets load without flips. Cell `(row, col)` has its center
//! at `((row + 0.5) * cell_size, (col + 0.5) * cell_size)` meters.
//!
//! Pathloss is carried in normalized units in `[0, 1]` (1 = strongest
//! signal, 0 = at or below the noise cutoff). Decibels only appear at the
//! report boundary through [`DbScale`].

mod manifest;
mod pgm;

pub use manifest::{
    load_report_file, save_report_file, DbScaleEntry, GridEntry, Manifest, ReportFile,
    ReportFileEntry, Scenario, Station, StationEntry,
};
pub use pgm::{
    load_grid, read_pgm, save_city_map, save_radio_map, write_csv, write_pgm, Grid, GridKind,
    Raster,
};

use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum GridError {
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
    #[error("cell ({row}, {col}) outside {height}x{width} grid")]
    OutOfBounds {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },
    #[error("grid spec mismatch: expected {expected}, found {found}")]
    SpecMismatch { expected: GridSpec, found: GridSpec },
    #[error("value {value} at index {index} outside [0, 1]")]
    ValueOutOfRange { index: usize, value: f64 },
    #[error("expected {expected} cells, got {found}")]
    CellCount { expected: usize, found: usize },
    #[error("city map has no free cell")]
    NoFreeCell,
    #[error("invalid dB scale: max_db {max_db} must exceed min_db {min_db}")]
    InvalidDbScale { max_db: f64, min_db: f64 },
    #[error("measurement report is empty")]
    EmptyReport,
    #[error("duplicate base station id `{0}` in report")]
    DuplicateBsId(String),
    #[error("report value g = {value} for `{bs_id}` outside [0, 1]")]
    ReportValue { bs_id: String, value: f64 },
    #[error("{path}: malformed PGM header: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },
    #[error("{path}: dimension error: {reason}")]
    Dimension { path: PathBuf, reason: String },
    #[error("{path}: truncated payload, expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
}

impl GridError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GridError::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            GridError::InvalidSpec(_) => "invalid_spec",
            GridError::OutOfBounds { .. } => "out_of_bounds",
            GridError::SpecMismatch { .. } => "spec_mismatch",
            GridError::ValueOutOfRange { .. } => "value_out_of_range",
            GridError::CellCount { .. } => "cell_count",
            GridError::NoFreeCell => "no_free_cell",
            GridError::InvalidDbScale { .. } => "invalid_db_scale",
            GridError::EmptyReport => "empty_report",
            GridError::DuplicateBsId(_) => "duplicate_bs_id",
            GridError::ReportValue { .. } => "report_value",
            GridError::MalformedHeader { .. } => "malformed_header",
            GridError::Dimension { .. } => "dimension",
            GridError::Truncated { .. } => "truncated",
            GridError::Io { .. } => "io",
            GridError::Manifest { .. } => "manifest",
        }
    }
}

/// Shape and resolution of a regular 2D grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    height: usize,
    width: usize,
    cell_size: f64,
}

impl GridSpec {
    pub fn new(height: usize, width: usize, cell_size: f64) -> Result<Self, GridError> {
        if height == 0 || width == 0 {
            return Err(GridError::InvalidSpec(format!(
                "dimensions must be positive, got {height}x{width}"
            )));
        }
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(GridError::InvalidSpec(format!(
                "cell_size must be positive, got {cell_size}"
            )));
        }
        Ok(GridSpec {
            height,
            width,
            cell_size,
        })
    }

    /// Grid with the default 1 m cell size.
    pub fn unit(height: usize, width: usize) -> Result<Self, GridError> {
        Self::new(height, width, 1.0)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.row < self.height && cell.col < self.width
    }

    pub fn check(&self, cell: Cell) -> Result<(), GridError> {
        if self.contains(cell) {
            Ok(())
        } else {
            Err(GridError::OutOfBounds {
                row: cell.row,
                col: cell.col,
                height: self.height,
                width: self.width,
            })
        }
    }

    #[inline]
    pub fn index(&self, cell: Cell) -> usize {
        cell.row * self.width + cell.col
    }

    #[inline]
    pub fn cell(&self, index: usize) -> Cell {
        Cell {
            row: index / self.width,
            col: index % self.width,
        }
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.len()).map(move |i| self.cell(i))
    }

    pub fn ensure_same(&self, other: &GridSpec) -> Result<(), GridError> {
        if self == other {
            Ok(())
        } else {
            Err(GridError::SpecMismatch {
                expected: *self,
                found: *other,
            })
        }
    }
}

impl std::fmt::Display for GridSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{} @ {} m", self.height, self.width, self.cell_size)
    }
}

/// Integer grid location; row 0 is the top row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Cell { row, col }
    }

    /// Cell center in meters as `(y, x)`.
    pub fn center_m(&self, cell_size: f64) -> (f64, f64) {
        (
            (self.row as f64 + 0.5) * cell_size,
            (self.col as f64 + 0.5) * cell_size,
        )
    }

    pub fn position(&self) -> Position {
        Position {
            row: self.row as f64,
            col: self.col as f64,
        }
    }
}

/// Fractional location in cell-index coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub row: f64,
    pub col: f64,
}

impl Position {
    /// Euclidean distance in meters.
    pub fn distance_m(&self, other: &Position, cell_size: f64) -> f64 {
        let dr = self.row - other.row;
        let dc = self.col - other.col;
        (dr * dr + dc * dc).sqrt() * cell_size
    }
}

/// Binary occupancy grid; `true` marks building interior.
#[derive(Debug, Clone, PartialEq)]
pub struct CityMap {
    spec: GridSpec,
    occupied: Vec<bool>,
}

impl CityMap {
    pub fn new(spec: GridSpec, occupied: Vec<bool>) -> Result<Self, GridError> {
        if occupied.len() != spec.len() {
            return Err(GridError::CellCount {
                expected: spec.len(),
                found: occupied.len(),
            });
        }
        if occupied.iter().all(|&o| o) {
            return Err(GridError::NoFreeCell);
        }
        Ok(CityMap { spec, occupied })
    }

    pub fn empty(spec: GridSpec) -> Self {
        CityMap {
            spec,
            occupied: vec![false; spec.len()],
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn occupied(&self) -> &[bool] {
        &self.occupied
    }

    pub fn is_occupied(&self, cell: Cell) -> bool {
        self.occupied[self.spec.index(cell)]
    }

    pub fn is_free(&self, cell: Cell) -> bool {
        !self.is_occupied(cell)
    }

    pub fn free_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.spec.cells().filter(|&c| self.is_free(c))
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|&&o| o).count()
    }
}

/// Normalized pathloss field of one base station.
#[derive(Debug, Clone, PartialEq)]
pub struct RadioMap {
    spec: GridSpec,
    bs: Cell,
    values: Vec<f64>,
}

impl RadioMap {
    pub fn new(spec: GridSpec, bs: Cell, values: Vec<f64>) -> Result<Self, GridError> {
        spec.check(bs)?;
        if values.len() != spec.len() {
            return Err(GridError::CellCount {
                expected: spec.len(),
                found: values.len(),
            });
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(GridError::ValueOutOfRange { index, value });
        }
        Ok(RadioMap { spec, bs, values })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn bs(&self) -> Cell {
        self.bs
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, cell: Cell) -> f64 {
        self.values[self.spec.index(cell)]
    }

    pub(crate) fn from_parts_unchecked(spec: GridSpec, bs: Cell, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), spec.len());
        RadioMap { spec, bs, values }
    }
}

/// Affine mapping between pathloss in dB and normalized units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbScale {
    max_db: f64,
    min_db: f64,
}

impl Default for DbScale {
    fn default() -> Self {
        DbScale {
            max_db: 0.0,
            min_db: -147.0,
        }
    }
}

impl DbScale {
    pub fn new(max_db: f64, min_db: f64) -> Result<Self, GridError> {
        if !(max_db.is_finite() && min_db.is_finite() && max_db > min_db) {
            return Err(GridError::InvalidDbScale { max_db, min_db });
        }
        Ok(DbScale { max_db, min_db })
    }

    pub fn max_db(&self) -> f64 {
        self.max_db
    }

    pub fn min_db(&self) -> f64 {
        self.min_db
    }

    pub fn normalize_unclamped(&self, db: f64) -> f64 {
        (db - self.min_db) / (self.max_db - self.min_db)
    }

    pub fn normalize(&self, db: f64) -> f64 {
        self.normalize_unclamped(db).clamp(0.0, 1.0)
    }

    pub fn denormalize(&self, value: f64) -> f64 {
        self.min_db + value * (self.max_db - self.min_db)
    }
}

/// Normalized pathloss from received and transmitted power (both in dB
/// units): `P_L = P_rx - P_tx`, mapped through `scale` and clamped to
/// `[0, 1]`.
pub fn pathloss_from_powers(p_rx_dbm: f64, p_tx_dbm: f64, scale: &DbScale) -> f64 {
    scale.normalize(p_rx_dbm - p_tx_dbm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub bs_id: String,
    pub g: f64,
}

/// Pathloss values reported by one device, one per base station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ReportEntry>", into = "Vec<ReportEntry>")]
pub struct MeasurementReport {
    entries: Vec<ReportEntry>,
}

impl MeasurementReport {
    pub fn new(entries: Vec<ReportEntry>) -> Result<Self, GridError> {
        if entries.is_empty() {
            return Err(GridError::EmptyReport);
        }
        for (i, e) in entries.iter().enumerate() {
            if !(0.0..=1.0).contains(&e.g) {
                return Err(GridError::ReportValue {
                    bs_id: e.bs_id.clone(),
                    value: e.g,
                });
            }
            if entries[..i].iter().any(|p| p.bs_id == e.bs_id) {
                return Err(GridError::DuplicateBsId(e.bs_id.clone()));
            }
        }
        Ok(MeasurementReport { entries })
    }

    pub fn entries(&self) -> &[ReportEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Report restricted to its first `k` entries.
    pub fn prefix(&self, k: usize) -> Result<Self, GridError> {
        MeasurementReport::new(self.entries.iter().take(k).cloned().collect())
    }
}

impl TryFrom<Vec<ReportEntry>> for MeasurementReport {
    type Error = GridError;

    fn try_from(entries: Vec<ReportEntry>) -> Result<Self, Self::Error> {
        MeasurementReport::new(entries)
    }
}

impl From<MeasurementReport> for Vec<ReportEntry> {
    fn from(r: MeasurementReport) -> Self {
        r.entries
    }
}
