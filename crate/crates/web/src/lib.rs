//! Browser demo: generate a synthetic city with base stations, place the
//! device by clicking, and compare voting, intersection and adaptive-ε
//! localization.

use levelvote::gridmap::{Cell, GridSpec, MeasurementReport, Scenario, Station};
use levelvote::locengine::{
    estimates, localize_spm, localize_voting_detailed, vote_map, LocalizationResult, Mask,
    SpmParams, StationMap, VoteGrid,
};
use levelvote::synthgen::{
    derive_seed, generate_city, generate_radio_map, perturb_radio_map_in, sample_free_cells,
    sample_report, CityGenParams, NoiseParams, PropagationParams, SynthError,
};
use levelvote::tuner::{localize_adaptive, TunedPolicy, DEFAULT_EPS_GRID};
use wasm_bindgen::prelude::*;

const BUILDING: [u8; 4] = [70, 70, 70, 255];
const O_SET: [u8; 4] = [255, 220, 0, 255];

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn heat(t: f64) -> [u8; 4] {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    [lerp(20.0, 190.0), lerp(30.0, 240.0), lerp(90.0, 230.0), 255]
}

/// City, stations and one device with its current report.
pub struct Session {
    scenario: Scenario,
    domain: Mask,
    ue: Cell,
    report: MeasurementReport,
    report_sd: f64,
    seed: u64,
    draws: u64,
}

impl Session {
    pub fn generate(
        size: usize,
        n_stations: usize,
        n_buildings: usize,
        map_rmse: f64,
        report_sd: f64,
        seed: u64,
    ) -> Result<Self, SynthError> {
        let spec = GridSpec::unit(size, size)?;
        let side = (size / 6).max(2);
        let city = generate_city(
            spec,
            &CityGenParams {
                n_buildings,
                min_side: (side / 2).max(1),
                max_side: side.min(size.saturating_sub(4)).max(1),
                margin: 2.min(size / 4),
                seed: derive_seed(seed, 1),
            },
        )?;
        let bss = sample_free_cells(&city, n_stations, derive_seed(seed, 2))?;
        let props = PropagationParams::default();
        let stations = bss
            .into_iter()
            .enumerate()
            .map(|(k, bs)| {
                let truth = generate_radio_map(&city, bs, &props)?;
                let estimate = perturb_radio_map_in(
                    &truth,
                    &NoiseParams {
                        target_rmse: map_rmse,
                        smoothness: 8.0,
                        seed: derive_seed(seed, 100 + k as u64),
                    },
                    &city,
                )?;
                Ok(Station {
                    id: format!("bs{k}"),
                    truth: Some(truth),
                    estimate,
                })
            })
            .collect::<Result<Vec<_>, SynthError>>()?;
        let domain = Mask::free_space(&city);
        let ue = sample_free_cells(&city, 1, derive_seed(seed, 3))?[0];
        let scenario = Scenario {
            spec,
            city,
            stations,
            db_scale: props.db_scale,
        };
        let mut s = Session {
            scenario,
            domain,
            ue,
            report: MeasurementReport::new(vec![levelvote::gridmap::ReportEntry {
                bs_id: "bs0".into(),
                g: 0.0,
            }])?,
            report_sd,
            seed,
            draws: 0,
        };
        s.resample()?;
        Ok(s)
    }

    fn resample(&mut self) -> Result<(), SynthError> {
        self.draws += 1;
        let truth = self
            .scenario
            .stations
            .iter()
            .map(|s| (s.id.clone(), s.truth.as_ref().expect("synthetic truth")));
        self.report = sample_report(
            truth,
            &self.scenario.city,
            self.ue,
            self.report_sd,
            derive_seed(self.seed, 1000 + self.draws),
        )?;
        Ok(())
    }

    /// Moves the device; cells inside buildings are rejected.
    pub fn set_ue(&mut self, cell: Cell) -> Result<bool, SynthError> {
        if !self.scenario.spec.contains(cell) || self.scenario.city.is_occupied(cell) {
            return Ok(false);
        }
        self.ue = cell;
        self.resample()?;
        Ok(true)
    }

    fn prefix(&self, k: usize) -> (Vec<StationMap<'_>>, MeasurementReport) {
        let k = k.clamp(1, self.scenario.stations.len());
        (
            estimates(&self.scenario.stations[..k]),
            self.report.prefix(k).expect("k >= 1"),
        )
    }

    pub fn voting(&self, eps: f64, k: usize) -> Result<Outcome, JsError> {
        let (maps, report) = self.prefix(k);
        let (r, v) =
            localize_voting_detailed(&maps, &report, &eps.into(), &self.domain).map_err(js_err)?;
        Ok(self.outcome(r, v))
    }

    pub fn spm(&self, k: usize) -> Result<Outcome, JsError> {
        let (maps, report) = self.prefix(k);
        let r = localize_spm(&maps, &report, &SpmParams::default(), &self.domain).map_err(js_err)?;
        let v = vote_map(&maps, &report, &r.epsilon_used, &self.domain).map_err(js_err)?;
        Ok(self.outcome(r, v))
    }

    pub fn adaptive(&self, q_star: f64, k: usize) -> Result<Outcome, JsError> {
        let (maps, report) = self.prefix(k);
        let policy = TunedPolicy::Adaptive {
            q_star_m: q_star.max(0.0),
            eps_grid: DEFAULT_EPS_GRID.to_vec(),
        };
        let r = localize_adaptive(&maps, &report, &policy, &self.domain).map_err(js_err)?;
        let v = vote_map(&maps, &report, &r.epsilon_used, &self.domain).map_err(js_err)?;
        Ok(self.outcome(r, v))
    }

    fn outcome(&self, r: LocalizationResult, v: VoteGrid) -> Outcome {
        let pixels = self.pixels(&r, &v);
        Outcome {
            error_m: r.error_m(self.ue),
            eps_used: r.epsilon_used.common().unwrap_or(f64::NAN),
            fallback: r.spm.is_some_and(|s| s.fallback),
            result: r,
            pixels,
        }
    }

    /// RGBA, one pixel per cell.
    fn pixels(&self, r: &LocalizationResult, v: &VoteGrid) -> Vec<u8> {
        let k = v.k_total().max(1) as f64;
        let city = &self.scenario.city;
        self.scenario
            .spec
            .cells()
            .flat_map(|c| {
                if r.o_set.contains(c) {
                    O_SET
                } else if city.is_occupied(c) {
                    BUILDING
                } else {
                    heat(v.at(c) as f64 / k)
                }
            })
            .collect()
    }
}

#[wasm_bindgen]
pub struct Demo {
    session: Session,
}

#[wasm_bindgen]
impl Demo {
    /// Square `size`×`size` city with `n_stations` transmitters. Estimated
    /// maps carry correlated error of RMSE `map_rmse`; reports carry
    /// Gaussian noise of sd `report_sd` (both normalized units).
    #[wasm_bindgen(constructor)]
    pub fn new(
        size: usize,
        n_stations: usize,
        n_buildings: usize,
        map_rmse: f64,
        report_sd: f64,
        seed: u32,
    ) -> Result<Demo, JsError> {
        let session = Session::generate(size, n_stations, n_buildings, map_rmse, report_sd, seed as u64)
            .map_err(js_err)?;
        Ok(Demo { session })
    }

    pub fn size(&self) -> usize {
        self.session.scenario.spec.height()
    }

    /// Station cells as a flat `[row, col, row, col, ...]` list.
    pub fn stations(&self) -> Vec<u32> {
        self.session
            .scenario
            .stations
            .iter()
            .flat_map(|s| [s.bs().row as u32, s.bs().col as u32])
            .collect()
    }

    pub fn ue_row(&self) -> usize {
        self.session.ue.row
    }

    pub fn ue_col(&self) -> usize {
        self.session.ue.col
    }

    pub fn set_ue(&mut self, row: usize, col: usize) -> Result<bool, JsError> {
        self.session.set_ue(Cell::new(row, col)).map_err(js_err)
    }

    /// Level-set voting with a common ε over the first `k` stations.
    pub fn localize(&self, eps: f64, k: usize) -> Result<Outcome, JsError> {
        self.session.voting(eps, k)
    }

    /// Level-set intersection with growing ε.
    pub fn localize_spm(&self, k: usize) -> Result<Outcome, JsError> {
        self.session.spm(k)
    }

    /// Best-of-grid ε by closeness of the spread to `q_star` meters.
    pub fn localize_adaptive(&self, q_star: f64, k: usize) -> Result<Outcome, JsError> {
        self.session.adaptive(q_star, k)
    }
}

#[wasm_bindgen]
pub struct Outcome {
    result: LocalizationResult,
    error_m: f64,
    eps_used: f64,
    fallback: bool,
    pixels: Vec<u8>,
}

#[wasm_bindgen]
impl Outcome {
    pub fn est_row(&self) -> f64 {
        self.result.estimate.row
    }

    pub fn est_col(&self) -> f64 {
        self.result.estimate.col
    }

    pub fn quality_q(&self) -> f64 {
        self.result.quality_q
    }

    pub fn error_m(&self) -> f64 {
        self.error_m
    }

    pub fn area(&self) -> usize {
        self.result.area
    }

    pub fn vote_max(&self) -> u16 {
        self.result.vote_max
    }

    pub fn eps_used(&self) -> f64 {
        self.eps_used
    }

    pub fn fallback(&self) -> bool {
        self.fallback
    }

    pub fn no_support(&self) -> bool {
        self.result.no_support
    }

    pub fn pixels(&self) -> Vec<u8> {
        self.pixels.clone()
    }
}
