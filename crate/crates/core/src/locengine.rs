//! Level-set voting localization.
//!
//! Each base station `k` contributes the ε-level-set of its radio map around
//! the reported pathloss `g_k`:
//!
//! ```text
//! L_k = { z : |r_k(z) - g_k| < ε_k }        (strict)
//! V(z) = Σ_k 1[z ∈ L_k]
//! O    = argmax_z V(z)                      (all ties kept)
//! X    = mean of cell positions in O
//! Q    = sqrt(mean |z - X|²), meters
//! ```
//!
//! Cells outside the search domain (by default, building interiors) never
//! receive votes. The intersection baseline (`localize_spm`) keeps only cells
//! voted for by every station and grows a common ε until that set is
//! non-empty.

use crate::gridmap::{
    Cell, CityMap, GridError, GridSpec, MeasurementReport, Position, RadioMap, Raster, Station,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum LocError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("report names station `{0}` but no map was supplied for it")]
    UnknownStation(String),
    #[error("{maps} maps supplied for a report with {entries} entries")]
    StationCount { maps: usize, entries: usize },
    #[error("{given} epsilon values supplied for {stations} stations")]
    EpsilonCount { given: usize, stations: usize },
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("localization set is empty")]
    EmptyMask,
    #[error("invalid intersection schedule: {0}")]
    InvalidSchedule(String),
    #[error("at most 65535 stations supported, got {0}")]
    TooManyStations(usize),
}

/// Set of grid cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    spec: GridSpec,
    member: Vec<bool>,
}

impl Mask {
    pub fn new(spec: GridSpec, member: Vec<bool>) -> Result<Self, GridError> {
        if member.len() != spec.len() {
            return Err(GridError::CellCount {
                expected: spec.len(),
                found: member.len(),
            });
        }
        Ok(Mask { spec, member })
    }

    pub fn full(spec: GridSpec) -> Self {
        Mask {
            spec,
            member: vec![true; spec.len()],
        }
    }

    pub fn empty(spec: GridSpec) -> Self {
        Mask {
            spec,
            member: vec![false; spec.len()],
        }
    }

    /// Outdoor cells of `city`: the default search domain.
    pub fn free_space(city: &CityMap) -> Self {
        Mask {
            spec: *city.spec(),
            member: city.occupied().iter().map(|o| !o).collect(),
        }
    }

    /// Search domain for `city`, optionally including building interiors.
    pub fn domain(city: &CityMap, allow_indoor: bool) -> Self {
        if allow_indoor {
            Mask::full(*city.spec())
        } else {
            Mask::free_space(city)
        }
    }

    pub fn from_cells(spec: GridSpec, cells: &[Cell]) -> Result<Self, GridError> {
        let mut m = Mask::empty(spec);
        for &c in cells {
            spec.check(c)?;
            m.member[spec.index(c)] = true;
        }
        Ok(m)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn members(&self) -> &[bool] {
        &self.member
    }

    pub fn contains(&self, cell: Cell) -> bool {
        self.member[self.spec.index(cell)]
    }

    pub fn count(&self) -> usize {
        self.member.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.member.iter().any(|&m| m)
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.member
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| self.spec.cell(i))
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.member
            .iter()
            .zip(&other.member)
            .all(|(&a, &b)| !a || b)
    }

    pub fn to_raster(&self) -> Raster {
        Raster {
            height: self.spec.height(),
            width: self.spec.width(),
            data: self.member.iter().map(|&m| if m { 255 } else { 0 }).collect(),
        }
    }

    pub fn to_values(&self) -> Vec<f64> {
        self.member.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect()
    }
}

/// Per-cell vote counts.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteGrid {
    spec: GridSpec,
    votes: Vec<u16>,
    k_total: usize,
}

impl VoteGrid {
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn votes(&self) -> &[u16] {
        &self.votes
    }

    pub fn at(&self, cell: Cell) -> u16 {
        self.votes[self.spec.index(cell)]
    }

    pub fn k_total(&self) -> usize {
        self.k_total
    }

    pub fn max(&self) -> u16 {
        self.votes.iter().copied().max().unwrap_or(0)
    }

    /// Votes scaled by `255 / K` for display.
    pub fn to_raster(&self) -> Raster {
        let k = self.k_total.max(1) as f64;
        Raster {
            height: self.spec.height(),
            width: self.spec.width(),
            data: self
                .votes
                .iter()
                .map(|&v| (v as f64 * 255.0 / k).round() as u8)
                .collect(),
        }
    }

    pub fn to_values(&self) -> Vec<f64> {
        self.votes.iter().map(|&v| v as f64).collect()
    }
}

/// Station identifier paired with the radio map used for its level-set.
#[derive(Debug, Clone, Copy)]
pub struct StationMap<'a> {
    pub id: &'a str,
    pub map: &'a RadioMap,
}

/// Estimated maps of `stations`, in order.
pub fn estimates(stations: &[Station]) -> Vec<StationMap<'_>> {
    stations
        .iter()
        .map(|s| StationMap {
            id: &s.id,
            map: &s.estimate,
        })
        .collect()
}

/// Level-set tolerance: one value shared by all stations, or one per report
/// entry (in report order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Epsilon {
    Common(f64),
    PerStation(Vec<f64>),
}

impl Epsilon {
    fn resolve(&self, k: usize) -> Result<Vec<f64>, LocError> {
        let values = match self {
            Epsilon::Common(e) => vec![*e; k],
            Epsilon::PerStation(v) if v.len() == k => v.clone(),
            Epsilon::PerStation(v) => {
                return Err(LocError::EpsilonCount {
                    given: v.len(),
                    stations: k,
                })
            }
        };
        match values.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
            Some(&bad) => Err(LocError::InvalidEpsilon(bad)),
            None => Ok(values),
        }
    }

    pub fn common(&self) -> Option<f64> {
        match self {
            Epsilon::Common(e) => Some(*e),
            Epsilon::PerStation(_) => None,
        }
    }
}

impl From<f64> for Epsilon {
    fn from(e: f64) -> Self {
        Epsilon::Common(e)
    }
}

/// Membership of every cell in `{ z in domain : |map(z) - g| < eps }`.
pub fn epsilon_level_set(
    map: &RadioMap,
    g: f64,
    eps: f64,
    domain: &Mask,
) -> Result<Mask, LocError> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(LocError::InvalidEpsilon(eps));
    }
    domain.spec().ensure_same(map.spec())?;
    let member = map
        .values()
        .iter()
        .zip(domain.members())
        .map(|(&v, &d)| d && (v - g).abs() < eps)
        .collect();
    Ok(Mask {
        spec: *map.spec(),
        member,
    })
}

/// Report entries paired with their maps and tolerances, in report order.
fn align<'a>(
    maps: &[StationMap<'a>],
    report: &'a MeasurementReport,
    eps: &Epsilon,
    domain: &Mask,
) -> Result<Vec<(&'a RadioMap, f64, f64)>, LocError> {
    let k = report.len();
    if maps.len() != k {
        return Err(LocError::StationCount {
            maps: maps.len(),
            entries: k,
        });
    }
    if k > u16::MAX as usize {
        return Err(LocError::TooManyStations(k));
    }
    let eps = eps.resolve(k)?;
    report
        .entries()
        .iter()
        .zip(eps)
        .map(|(entry, e)| {
            let sm = maps
                .iter()
                .find(|m| m.id == entry.bs_id)
                .ok_or_else(|| LocError::UnknownStation(entry.bs_id.clone()))?;
            domain.spec().ensure_same(sm.map.spec())?;
            Ok((sm.map, entry.g, e))
        })
        .collect()
}

fn accumulate(votes: &mut [u16], offset: usize, terms: &[(&RadioMap, f64, f64)], domain: &[bool]) {
    for &(map, g, eps) in terms {
        let values = &map.values()[offset..offset + votes.len()];
        for ((v, &r), &d) in votes.iter_mut().zip(values).zip(domain) {
            *v += (d && (r - g).abs() < eps) as u16;
        }
    }
}

/// Sums the stations' ε-level-set indicators over the domain.
pub fn vote_map(
    maps: &[StationMap<'_>],
    report: &MeasurementReport,
    eps: &Epsilon,
    domain: &Mask,
) -> Result<VoteGrid, LocError> {
    let terms = align(maps, report, eps, domain)?;
    let spec = *domain.spec();
    let mut votes = vec![0u16; spec.len()];

    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let chunk = spec.width() * 16;
        votes
            .par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, block)| {
                let off = i * chunk;
                accumulate(block, off, &terms, &domain.members()[off..off + block.len()]);
            });
    }
    #[cfg(not(feature = "parallel"))]
    accumulate(&mut votes, 0, &terms, domain.members());

    Ok(VoteGrid {
        spec,
        votes,
        k_total: terms.len(),
    })
}

/// Cells attaining the maximum vote.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationSet {
    pub mask: Mask,
    pub vote_max: u16,
    /// No cell in the domain received a vote; the set defaults to the whole
    /// domain.
    pub no_support: bool,
}

/// Argmax set of `votes` over `domain`, keeping every tied cell.
pub fn localization_set(votes: &VoteGrid, domain: &Mask) -> Result<LocalizationSet, LocError> {
    domain.spec().ensure_same(votes.spec())?;
    if domain.is_empty() {
        return Err(LocError::EmptyMask);
    }
    let vote_max = votes
        .votes
        .iter()
        .zip(domain.members())
        .filter(|(_, &d)| d)
        .map(|(&v, _)| v)
        .max()
        .unwrap_or(0);
    let member = votes
        .votes
        .iter()
        .zip(domain.members())
        .map(|(&v, &d)| d && v == vote_max)
        .collect();
    Ok(LocalizationSet {
        mask: Mask {
            spec: *votes.spec(),
            member,
        },
        vote_max,
        no_support: vote_max == 0,
    })
}

/// Unweighted centroid of the set (cell-index coordinates) and the RMS
/// distance of its cells from that centroid, in meters.
pub fn centroid_and_spread(set: &Mask, spec: &GridSpec) -> Result<(Position, f64), LocError> {
    spec.ensure_same(set.spec())?;
    let (mut n, mut sr, mut sc) = (0usize, 0.0f64, 0.0f64);
    for c in set.cells() {
        n += 1;
        sr += c.row as f64;
        sc += c.col as f64;
    }
    if n == 0 {
        return Err(LocError::EmptyMask);
    }
    let x = Position {
        row: sr / n as f64,
        col: sc / n as f64,
    };
    if n == 1 {
        return Ok((x, 0.0));
    }
    let ss: f64 = set
        .cells()
        .map(|c| {
            let dr = c.row as f64 - x.row;
            let dc = c.col as f64 - x.col;
            dr * dr + dc * dc
        })
        .sum();
    Ok((x, (ss / n as f64).sqrt() * spec.cell_size()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpmOutcome {
    /// Number of ε values tried.
    pub iterations: usize,
    /// The intersection stayed empty up to the cap and the voting result at
    /// the cap was returned instead.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationResult {
    pub o_set: Mask,
    pub estimate: Position,
    /// Spread of `o_set` about `estimate`, meters.
    pub quality_q: f64,
    pub vote_max: u16,
    pub epsilon_used: Epsilon,
    pub area: usize,
    pub no_support: bool,
    pub spm: Option<SpmOutcome>,
}

impl LocalizationResult {
    fn from_set(set: Mask, vote_max: u16, no_support: bool, eps: Epsilon) -> Result<Self, LocError> {
        let (estimate, quality_q) = centroid_and_spread(&set, &set.spec)?;
        let area = set.count();
        Ok(LocalizationResult {
            o_set: set,
            estimate,
            quality_q,
            vote_max,
            epsilon_used: eps,
            area,
            no_support,
            spm: None,
        })
    }

    /// Distance in meters from the estimate to the center of `truth`.
    pub fn error_m(&self, truth: Cell) -> f64 {
        self.estimate
            .distance_m(&truth.position(), self.o_set.spec().cell_size())
    }

    pub fn summary(&self) -> ResultSummary {
        ResultSummary {
            estimate: self.estimate,
            quality_q: self.quality_q,
            vote_max: self.vote_max,
            epsilon_used: self.epsilon_used.clone(),
            area: self.area,
            no_support: self.no_support,
            spm: self.spm,
        }
    }
}

/// Serializable view of a [`LocalizationResult`] without the cell set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultSummary {
    pub estimate: Position,
    pub quality_q: f64,
    pub vote_max: u16,
    pub epsilon_used: Epsilon,
    pub area: usize,
    pub no_support: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spm: Option<SpmOutcome>,
}

/// Voting localization with its vote grid, for callers that render it.
pub fn localize_voting_detailed(
    maps: &[StationMap<'_>],
    report: &MeasurementReport,
    eps: &Epsilon,
    domain: &Mask,
) -> Result<(LocalizationResult, VoteGrid), LocError> {
    let votes = vote_map(maps, report, eps, domain)?;
    let set = localization_set(&votes, domain)?;
    let result = LocalizationResult::from_set(set.mask, set.vote_max, set.no_support, eps.clone())?;
    Ok((result, votes))
}

pub fn localize_voting(
    maps: &[StationMap<'_>],
    report: &MeasurementReport,
    eps: &Epsilon,
    domain: &Mask,
) -> Result<LocalizationResult, LocError> {
    localize_voting_detailed(maps, report, eps, domain).map(|(r, _)| r)
}

/// Growth schedule for the intersection baseline: ε = eps0 · growth^j while
/// ε <= eps_cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpmParams {
    pub eps0: f64,
    pub growth: f64,
    pub eps_cap: f64,
}

impl Default for SpmParams {
    fn default() -> Self {
        SpmParams {
            eps0: 0.01,
            growth: 1.5,
            eps_cap: 0.2,
        }
    }
}

impl SpmParams {
    fn validate(&self) -> Result<(), LocError> {
        if !(self.eps0 > 0.0 && self.eps0 <= self.eps_cap && self.eps_cap.is_finite()) {
            return Err(LocError::InvalidSchedule(format!(
                "need 0 < eps0 <= eps_cap, got eps0 {} and eps_cap {}",
                self.eps0, self.eps_cap
            )));
        }
        if !(self.growth > 1.0) {
            return Err(LocError::InvalidSchedule(format!(
                "growth factor must exceed 1, got {}",
                self.growth
            )));
        }
        Ok(())
    }
}

/// Intersection of all stations' ε-level-sets, widening a common ε until the
/// intersection is non-empty. Past `eps_cap` the voting result at `eps_cap`
/// is returned with `fallback` set.
pub fn localize_spm(
    maps: &[StationMap<'_>],
    report: &MeasurementReport,
    params: &SpmParams,
    domain: &Mask,
) -> Result<LocalizationResult, LocError> {
    params.validate()?;
    let mut j = 0usize;
    loop {
        let eps = params.eps0 * params.growth.powi(j as i32);
        if eps > params.eps_cap {
            break;
        }
        let votes = vote_map(maps, report, &Epsilon::Common(eps), domain)?;
        let k = votes.k_total as u16;
        let member: Vec<bool> = votes.votes.iter().map(|&v| v == k).collect();
        let set = Mask {
            spec: votes.spec,
            member,
        };
        j += 1;
        if !set.is_empty() {
            let mut r = LocalizationResult::from_set(set, k, false, Epsilon::Common(eps))?;
            r.spm = Some(SpmOutcome {
                iterations: j,
                fallback: false,
            });
            return Ok(r);
        }
    }
    let mut r = localize_voting(maps, report, &Epsilon::Common(params.eps_cap), domain)?;
    r.spm = Some(SpmOutcome {
        iterations: j,
        fallback: true,
    });
    Ok(r)
}
