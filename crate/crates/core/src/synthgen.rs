//! Deterministic synthetic scenarios: random block cities, obstruction-aware
//! log-distance radio maps, spatially correlated estimator error, and device
//! measurement reports.
//!
//! Every generator is a pure function of its inputs and seed.

use crate::gridmap::{
    Cell, CityMap, DbScale, GridError, GridSpec, MeasurementReport, RadioMap, ReportEntry,
};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("base station cell ({}, {}) is inside a building", .0.row, .0.col)]
    BsInBuilding(Cell),
    #[error("device cell ({}, {}) is inside a building", .0.row, .0.col)]
    UeInBuilding(Cell),
    #[error("requested {requested} distinct free cells, only {available} available")]
    NotEnoughFreeCells { requested: usize, available: usize },
}

/// Mixes a stream index into a base seed (splitmix64 finalizer), so that
/// independent consumers get decorrelated, order-independent seeds.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CityGenParams {
    pub n_buildings: usize,
    pub min_side: usize,
    pub max_side: usize,
    /// Cells kept free along every border.
    pub margin: usize,
    pub seed: u64,
}

impl Default for CityGenParams {
    fn default() -> Self {
        CityGenParams {
            n_buildings: 12,
            min_side: 8,
            max_side: 24,
            margin: 2,
            seed: 0,
        }
    }
}

pub fn generate_city(spec: GridSpec, params: &CityGenParams) -> Result<CityMap, SynthError> {
    if params.n_buildings == 0 {
        return Ok(CityMap::empty(spec));
    }
    if params.min_side == 0 || params.min_side > params.max_side {
        return Err(SynthError::InvalidParams(format!(
            "building sides must satisfy 1 <= min_side <= max_side, got {}..{}",
            params.min_side, params.max_side
        )));
    }
    let room = |dim: usize| dim.checked_sub(2 * params.margin);
    match (room(spec.height()), room(spec.width())) {
        (Some(h), Some(w)) if params.max_side <= h && params.max_side <= w => {}
        _ => {
            return Err(SynthError::InvalidParams(format!(
                "buildings up to {} cells with margin {} do not fit a {}x{} grid",
                params.max_side,
                params.margin,
                spec.height(),
                spec.width()
            )))
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut occupied = vec![false; spec.len()];
    for _ in 0..params.n_buildings {
        let bh = rng.random_range(params.min_side..=params.max_side);
        let bw = rng.random_range(params.min_side..=params.max_side);
        let top = rng.random_range(params.margin..=spec.height() - params.margin - bh);
        let left = rng.random_range(params.margin..=spec.width() - params.margin - bw);
        for r in top..top + bh {
            let row = r * spec.width();
            occupied[row + left..row + left + bw].fill(true);
        }
    }
    CityMap::new(spec, occupied).map_err(SynthError::from)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PropagationParams {
    /// Pathloss at 1 m, dB.
    pub pl0_db: f64,
    pub exponent: f64,
    /// Extra attenuation per meter travelled inside buildings.
    pub wall_db_per_m: f64,
    pub db_scale: DbScale,
}

impl Default for PropagationParams {
    fn default() -> Self {
        PropagationParams {
            pl0_db: -40.0,
            exponent: 2.5,
            wall_db_per_m: 2.0,
            db_scale: DbScale::default(),
        }
    }
}

impl PropagationParams {
    fn validate(&self) -> Result<(), SynthError> {
        if !(self.exponent > 0.0) {
            return Err(SynthError::InvalidParams(format!(
                "path-loss exponent must be positive, got {}",
                self.exponent
            )));
        }
        if !(self.wall_db_per_m >= 0.0) {
            return Err(SynthError::InvalidParams(format!(
                "wall loss must be non-negative, got {}",
                self.wall_db_per_m
            )));
        }
        Ok(())
    }
}

/// Length in meters of the straight segment between two cell centers that
/// lies inside occupied cells, estimated with midpoint samples at a density
/// of four per cell length.
pub fn in_building_length(city: &CityMap, from: Cell, to: Cell) -> f64 {
    let spec = city.spec();
    let (r0, c0) = (from.row as f64 + 0.5, from.col as f64 + 0.5);
    let dr = to.row as f64 - from.row as f64;
    let dc = to.col as f64 - from.col as f64;
    let len_cells = (dr * dr + dc * dc).sqrt();
    if len_cells == 0.0 {
        return 0.0;
    }
    let n = (4.0 * len_cells).ceil() as usize;
    let occupied = city.occupied();
    let width = spec.width();
    let mut hits = 0usize;
    for i in 0..n {
        let t = (i as f64 + 0.5) / n as f64;
        // Sample points stay inside the hull of two in-grid centers.
        let r = (r0 + t * dr) as usize;
        let c = (c0 + t * dc) as usize;
        if occupied[r * width + c] {
            hits += 1;
        }
    }
    hits as f64 * len_cells * spec.cell_size() / n as f64
}

/// Log-distance pathloss with per-meter wall attenuation:
/// `PL(z) = pl0 - 10 n log10(max(d, 1)) - wall * w(z)`, normalized through
/// the parameter's dB scale.
pub fn generate_radio_map(
    city: &CityMap,
    bs: Cell,
    params: &PropagationParams,
) -> Result<RadioMap, SynthError> {
    params.validate()?;
    let spec = *city.spec();
    spec.check(bs)?;
    if city.is_occupied(bs) {
        return Err(SynthError::BsInBuilding(bs));
    }
    let any_buildings = city.occupied_count() > 0;
    let cs = spec.cell_size();
    let values = spec
        .cells()
        .map(|z| {
            let dr = (z.row as f64 - bs.row as f64) * cs;
            let dc = (z.col as f64 - bs.col as f64) * cs;
            let d = (dr * dr + dc * dc).sqrt().max(1.0);
            let mut pl = params.pl0_db - 10.0 * params.exponent * d.log10();
            if any_buildings && params.wall_db_per_m > 0.0 {
                pl -= params.wall_db_per_m * in_building_length(city, bs, z);
            }
            params.db_scale.normalize(pl)
        })
        .collect();
    Ok(RadioMap::from_parts_unchecked(spec, bs, values))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseParams {
    /// Root-mean-square error of the perturbation, normalized units.
    pub target_rmse: f64,
    /// Correlation length in cells (Gaussian blur sigma).
    pub smoothness: f64,
    pub seed: u64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams {
            target_rmse: 0.01,
            smoothness: 8.0,
            seed: 0,
        }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.into_iter().map(|v| v / sum).collect()
}

/// Separable blur with edge clamping.
fn blur(field: &[f64], height: usize, width: usize, sigma: f64) -> Vec<f64> {
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; field.len()];
    for r in 0..height {
        for c in 0..width {
            tmp[r * width + c] = kernel
                .iter()
                .enumerate()
                .map(|(j, w)| w * field[r * width + clampi(c as isize + j as isize - radius, width)])
                .sum();
        }
    }
    let mut out = vec![0.0; field.len()];
    for r in 0..height {
        for c in 0..width {
            out[r * width + c] = kernel
                .iter()
                .enumerate()
                .map(|(j, w)| w * tmp[clampi(r as isize + j as isize - radius, height) * width + c])
                .sum();
        }
    }
    out
}

/// Zero-mean, spatially smoothed noise field scaled to RMS `target_rmse`.
pub fn correlated_noise(spec: &GridSpec, params: &NoiseParams) -> Result<Vec<f64>, SynthError> {
    noise_field(spec, params, None)
}

/// Like [`correlated_noise`], with mean and RMS taken over the cells where
/// `over` is true.
fn noise_field(spec: &GridSpec, params: &NoiseParams, over: Option<&[bool]>) -> Result<Vec<f64>, SynthError> {
    if !(params.target_rmse >= 0.0) || !(params.smoothness >= 1.0) {
        return Err(SynthError::InvalidParams(format!(
            "noise needs target_rmse >= 0 and smoothness >= 1, got {} and {}",
            params.target_rmse, params.smoothness
        )));
    }
    if params.target_rmse == 0.0 {
        return Ok(vec![0.0; spec.len()]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let white: Vec<f64> = (0..spec.len())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let mut field = blur(&white, spec.height(), spec.width(), params.smoothness);
    let selected = |i: usize| over.is_none_or(|m| m[i]);
    let n = (0..field.len()).filter(|&i| selected(i)).count() as f64;
    let mean = field.iter().enumerate().filter(|(i, _)| selected(*i)).map(|(_, v)| v).sum::<f64>() / n;
    field.iter_mut().for_each(|v| *v -= mean);
    let rms = (field
        .iter()
        .enumerate()
        .filter(|(i, _)| selected(*i))
        .map(|(_, v)| v * v)
        .sum::<f64>()
        / n)
        .sqrt();
    if rms > 0.0 {
        let scale = params.target_rmse / rms;
        field.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(field)
}

fn add_noise(map: &RadioMap, noise: &[f64]) -> RadioMap {
    let values = map
        .values()
        .iter()
        .zip(noise)
        .map(|(v, n)| (v + n).clamp(0.0, 1.0))
        .collect();
    RadioMap::from_parts_unchecked(*map.spec(), map.bs(), values)
}

/// Emulates a learned estimate of `map`: adds correlated noise of the
/// requested RMSE and clamps to `[0, 1]`. The transmitter cell is kept.
pub fn perturb_radio_map(map: &RadioMap, params: &NoiseParams) -> Result<RadioMap, SynthError> {
    if params.target_rmse == 0.0 {
        return Ok(map.clone());
    }
    Ok(add_noise(map, &correlated_noise(map.spec(), params)?))
}

/// [`perturb_radio_map`] with the RMSE measured over the free cells of
/// `city` only.
pub fn perturb_radio_map_in(map: &RadioMap, params: &NoiseParams, city: &CityMap) -> Result<RadioMap, SynthError> {
    city.spec().ensure_same(map.spec())?;
    if params.target_rmse == 0.0 {
        return Ok(map.clone());
    }
    let free: Vec<bool> = city.occupied().iter().map(|o| !o).collect();
    Ok(add_noise(map, &noise_field(map.spec(), params, Some(&free))?))
}

/// Samples the device report at `ue` from the ground-truth maps, adding
/// i.i.d. Gaussian noise of standard deviation `noise_sd` and clamping.
/// Entries keep the input order.
pub fn sample_report<'a, I, S>(
    truth: I,
    city: &CityMap,
    ue: Cell,
    noise_sd: f64,
    seed: u64,
) -> Result<MeasurementReport, SynthError>
where
    I: IntoIterator<Item = (S, &'a RadioMap)>,
    S: Into<String>,
{
    city.spec().check(ue)?;
    if city.is_occupied(ue) {
        return Err(SynthError::UeInBuilding(ue));
    }
    if !(noise_sd >= 0.0) {
        return Err(SynthError::InvalidParams(format!(
            "report noise sd must be non-negative, got {noise_sd}"
        )));
    }
    let normal = Normal::new(0.0, noise_sd).expect("finite sd");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for (id, map) in truth {
        city.spec().ensure_same(map.spec())?;
        let mut g = map.value(ue);
        if noise_sd > 0.0 {
            g = (g + normal.sample(&mut rng)).clamp(0.0, 1.0);
        }
        entries.push(ReportEntry {
            bs_id: id.into(),
            g,
        });
    }
    MeasurementReport::new(entries).map_err(SynthError::from)
}

/// `n` distinct free cells drawn uniformly, in draw order.
pub fn sample_free_cells(city: &CityMap, n: usize, seed: u64) -> Result<Vec<Cell>, SynthError> {
    let free: Vec<Cell> = city.free_cells().collect();
    if n > free.len() {
        return Err(SynthError::NotEnoughFreeCells {
            requested: n,
            available: free.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample(&mut rng, free.len(), n)
        .into_iter()
        .map(|i| free[i])
        .collect())
}
