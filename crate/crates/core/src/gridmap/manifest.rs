//! Scenario manifests and device report files (JSON).
//!
//! A manifest lists the city raster and, per station, the ground-truth and
//! estimated radio-map rasters. Paths are resolved relative to the manifest's
//! directory.

use super::{
    load_grid, pathloss_from_powers, save_city_map, save_radio_map, Cell, CityMap, DbScale, Grid,
    GridError, GridKind, GridSpec, MeasurementReport, RadioMap, ReportEntry,
};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridEntry {
    pub height: usize,
    pub width: usize,
    #[serde(default = "one")]
    pub cell_size: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StationEntry {
    pub id: String,
    pub row: usize,
    pub col: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_map: Option<String>,
    pub est_map: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DbScaleEntry {
    pub max_db: f64,
    pub min_db: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub grid: GridEntry,
    pub city: String,
    pub stations: Vec<StationEntry>,
    pub db_scale: DbScaleEntry,
}

/// One base station with its estimated map and, when known, the ground
/// truth it approximates.
#[derive(Debug, Clone)]
pub struct Station {
    pub id: String,
    pub truth: Option<RadioMap>,
    pub estimate: RadioMap,
}

impl Station {
    pub fn bs(&self) -> Cell {
        self.estimate.bs()
    }
}

/// Fully loaded scenario: city, stations and the dB scale of its maps.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: GridSpec,
    pub city: CityMap,
    pub stations: Vec<Station>,
    pub db_scale: DbScale,
}

impl Scenario {
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self, GridError> {
        let path = manifest_path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| GridError::io(path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| GridError::Manifest {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_manifest(&manifest, base)
    }

    pub fn from_manifest(manifest: &Manifest, base: &Path) -> Result<Self, GridError> {
        let spec = GridSpec::new(
            manifest.grid.height,
            manifest.grid.width,
            manifest.grid.cell_size,
        )?;
        let db_scale = DbScale::new(manifest.db_scale.max_db, manifest.db_scale.min_db)?;
        let city = match load_grid(base.join(&manifest.city), GridKind::City, Some(&spec))? {
            Grid::City(c) => c,
            Grid::Radio(_) => unreachable!(),
        };
        let mut stations: Vec<Station> = Vec::with_capacity(manifest.stations.len());
        for s in &manifest.stations {
            if stations.iter().any(|p| p.id == s.id) {
                return Err(GridError::DuplicateBsId(s.id.clone()));
            }
            let bs = Cell::new(s.row, s.col);
            spec.check(bs)?;
            let load_radio = |rel: &str| -> Result<RadioMap, GridError> {
                match load_grid(base.join(rel), GridKind::Radio { bs }, Some(&spec))? {
                    Grid::Radio(r) => Ok(r),
                    Grid::City(_) => unreachable!(),
                }
            };
            let truth = s.truth_map.as_deref().map(load_radio).transpose()?;
            let estimate = load_radio(&s.est_map)?;
            stations.push(Station {
                id: s.id.clone(),
                truth,
                estimate,
            });
        }
        Ok(Scenario {
            spec,
            city,
            stations,
            db_scale,
        })
    }

    /// Writes `manifest.json`, `city.pgm` and per-station rasters into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf, GridError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| GridError::io(dir, e))?;
        save_city_map(&self.city, dir.join("city.pgm"))?;
        let mut entries = Vec::with_capacity(self.stations.len());
        for s in &self.stations {
            let est = format!("{}_est.pgm", s.id);
            save_radio_map(&s.estimate, dir.join(&est))?;
            let truth = match &s.truth {
                Some(t) => {
                    let name = format!("{}_truth.pgm", s.id);
                    save_radio_map(t, dir.join(&name))?;
                    Some(name)
                }
                None => None,
            };
            entries.push(StationEntry {
                id: s.id.clone(),
                row: s.bs().row,
                col: s.bs().col,
                truth_map: truth,
                est_map: est,
            });
        }
        let manifest = Manifest {
            grid: GridEntry {
                height: self.spec.height(),
                width: self.spec.width(),
                cell_size: self.spec.cell_size(),
            },
            city: "city.pgm".into(),
            stations: entries,
            db_scale: DbScaleEntry {
                max_db: self.db_scale.max_db(),
                min_db: self.db_scale.min_db(),
            },
        };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| GridError::io(&path, e))?;
        Ok(path)
    }
}

/// Report entry as written on disk: either a normalized `g`, or received and
/// transmitted power in dBm which are converted through the scenario's
/// [`DbScale`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportFileEntry {
    pub bs_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_rx_dbm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_tx_dbm: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportFile {
    /// Known device cell, present for generated or labeled data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ue: Option<Cell>,
    pub entries: Vec<ReportFileEntry>,
}

impl ReportFile {
    pub fn to_report(&self, scale: &DbScale) -> Result<MeasurementReport, String> {
        let entries = self
            .entries
            .iter()
            .map(|e| {
                let g = match (e.g, e.p_rx_dbm, e.p_tx_dbm) {
                    (Some(g), None, None) => g,
                    (None, Some(rx), Some(tx)) => pathloss_from_powers(rx, tx, scale),
                    _ => {
                        return Err(format!(
                            "entry `{}` needs either `g` or both `p_rx_dbm` and `p_tx_dbm`",
                            e.bs_id
                        ))
                    }
                };
                Ok(ReportEntry {
                    bs_id: e.bs_id.clone(),
                    g,
                })
            })
            .collect::<Result<Vec<_>, String>>()?;
        MeasurementReport::new(entries).map_err(|e| e.to_string())
    }

    pub fn from_report(report: &MeasurementReport, ue: Option<Cell>) -> Self {
        ReportFile {
            ue,
            entries: report
                .entries()
                .iter()
                .map(|e| ReportFileEntry {
                    bs_id: e.bs_id.clone(),
                    g: Some(e.g),
                    p_rx_dbm: None,
                    p_tx_dbm: None,
                })
                .collect(),
        }
    }
}

pub fn load_report_file(
    path: impl AsRef<Path>,
    scale: &DbScale,
) -> Result<(MeasurementReport, Option<Cell>), GridError> {
    let path = path.as_ref();
    let manifest_err = |reason: String| GridError::Manifest {
        path: path.to_path_buf(),
        reason,
    };
    let text = fs::read_to_string(path).map_err(|e| GridError::io(path, e))?;
    let file: ReportFile = serde_json::from_str(&text).map_err(|e| manifest_err(e.to_string()))?;
    let report = file.to_report(scale).map_err(manifest_err)?;
    Ok((report, file.ue))
}

pub fn save_report_file(
    path: impl AsRef<Path>,
    report: &MeasurementReport,
    ue: Option<Cell>,
) -> Result<(), GridError> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(&ReportFile::from_report(report, ue))
        .expect("report serializes");
    fs::write(path, text).map_err(|e| GridError::io(path, e))
}
