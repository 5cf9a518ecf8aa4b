//! Brute-force reference for level-set voting, written directly from the
//! definitions over plain vectors. Shares no code with the library.

#![allow(dead_code, clippy::needless_range_loop)]

use levelvote::gridmap::{Cell, CityMap, GridSpec, MeasurementReport, RadioMap, ReportEntry};
use levelvote::locengine::{Mask, StationMap};
use rand::Rng;

/// Everything the oracle needs, as flat row-major vectors.
#[derive(Debug, Clone)]
pub struct Instance {
    pub height: usize,
    pub width: usize,
    pub cell_size: f64,
    pub maps: Vec<Vec<f64>>,
    pub bs: Vec<(usize, usize)>,
    pub g: Vec<f64>,
    pub eps: Vec<f64>,
    pub domain: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleOutcome {
    pub cells: Vec<(usize, usize)>,
    pub vote_max: u32,
    pub x: (f64, f64),
    pub q: f64,
}

pub fn votes(inst: &Instance) -> Vec<u32> {
    let mut v = vec![0u32; inst.height * inst.width];
    for r in 0..inst.height {
        for c in 0..inst.width {
            let i = r * inst.width + c;
            if !inst.domain[i] {
                continue;
            }
            for k in 0..inst.maps.len() {
                if (inst.maps[k][i] - inst.g[k]).abs() < inst.eps[k] {
                    v[i] += 1;
                }
            }
        }
    }
    v
}

fn summarize(inst: &Instance, cells: Vec<(usize, usize)>, vote_max: u32) -> OracleOutcome {
    let n = cells.len() as f64;
    let mut sr = 0.0;
    let mut sc = 0.0;
    for &(r, c) in &cells {
        sr += r as f64;
        sc += c as f64;
    }
    let x = (sr / n, sc / n);
    let mut ss = 0.0;
    for &(r, c) in &cells {
        let dr = (r as f64 - x.0) * inst.cell_size;
        let dc = (c as f64 - x.1) * inst.cell_size;
        ss += dr * dr + dc * dc;
    }
    OracleOutcome {
        q: (ss / n).sqrt(),
        cells,
        vote_max,
        x,
    }
}

pub fn voting(inst: &Instance) -> OracleOutcome {
    let v = votes(inst);
    let mut best = 0;
    for i in 0..v.len() {
        if inst.domain[i] && v[i] > best {
            best = v[i];
        }
    }
    let mut cells = Vec::new();
    for r in 0..inst.height {
        for c in 0..inst.width {
            let i = r * inst.width + c;
            if inst.domain[i] && v[i] == best {
                cells.push((r, c));
            }
        }
    }
    summarize(inst, cells, best)
}

/// Result, ε used, number of ε tried, and whether it fell back to voting.
pub fn spm(inst: &Instance, eps0: f64, growth: f64, cap: f64) -> (OracleOutcome, f64, usize, bool) {
    let k = inst.maps.len() as u32;
    let mut j = 0;
    loop {
        let eps = eps0 * growth.powi(j as i32);
        if eps > cap {
            break;
        }
        j += 1;
        let at = Instance {
            eps: vec![eps; inst.maps.len()],
            ..inst.clone()
        };
        let v = votes(&at);
        let mut cells = Vec::new();
        for r in 0..inst.height {
            for c in 0..inst.width {
                if v[r * inst.width + c] == k {
                    cells.push((r, c));
                }
            }
        }
        if !cells.is_empty() {
            return (summarize(inst, cells, k), eps, j, false);
        }
    }
    let at = Instance {
        eps: vec![cap; inst.maps.len()],
        ..inst.clone()
    };
    (voting(&at), cap, j, true)
}

/// Random instance. Half of them use values on a 1/64 lattice so that
/// exact ties and level-set boundaries are exercised.
pub fn random_instance(rng: &mut impl Rng, max_side: usize, max_k: usize) -> Instance {
    let height = rng.random_range(1..=max_side);
    let width = rng.random_range(1..=max_side);
    let k = rng.random_range(1..=max_k);
    let lattice = rng.random_bool(0.5);
    let n = height * width;
    let maps: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..n).map(|_| map_value(rng, lattice)).collect())
        .collect();
    let g = (0..k).map(|_| map_value(rng, lattice)).collect();
    let common = rng.random_bool(0.5);
    let e0 = eps_value(rng, lattice);
    let eps = (0..k)
        .map(|_| if common { e0 } else { eps_value(rng, lattice) })
        .collect();
    let occupied = rng.random_range(0.0..0.5);
    let mut domain: Vec<bool> = (0..n).map(|_| !rng.random_bool(occupied)).collect();
    if !domain.iter().any(|&d| d) {
        domain[rng.random_range(0..n)] = true;
    }
    let bs = (0..k)
        .map(|_| (rng.random_range(0..height), rng.random_range(0..width)))
        .collect();
    let cell_size = [1.0, 0.5, 2.0, 3.7][rng.random_range(0..4)];
    Instance {
        height,
        width,
        cell_size,
        maps,
        bs,
        g,
        eps,
        domain,
    }
}

fn map_value(rng: &mut impl Rng, lattice: bool) -> f64 {
    if lattice {
        rng.random_range(0..=64u32) as f64 / 64.0
    } else {
        rng.random::<f64>()
    }
}

fn eps_value(rng: &mut impl Rng, lattice: bool) -> f64 {
    if lattice {
        rng.random_range(1..=12u32) as f64 / 64.0
    } else {
        rng.random_range(0.001..0.25)
    }
}

/// The same instance as library values.
pub struct Lib {
    pub spec: GridSpec,
    pub maps: Vec<RadioMap>,
    pub ids: Vec<String>,
    pub report: MeasurementReport,
    pub domain: Mask,
    pub city: CityMap,
}

impl Lib {
    pub fn from_instance(inst: &Instance) -> Lib {
        let spec = GridSpec::new(inst.height, inst.width, inst.cell_size).unwrap();
        let ids: Vec<String> = (0..inst.maps.len()).map(|k| format!("bs{k}")).collect();
        let maps = inst
            .maps
            .iter()
            .zip(&inst.bs)
            .map(|(m, &(r, c))| RadioMap::new(spec, Cell::new(r, c), m.clone()).unwrap())
            .collect();
        let report = MeasurementReport::new(
            ids.iter()
                .zip(&inst.g)
                .map(|(id, &g)| ReportEntry {
                    bs_id: id.clone(),
                    g,
                })
                .collect(),
        )
        .unwrap();
        let city = CityMap::new(spec, inst.domain.iter().map(|d| !d).collect()).unwrap();
        Lib {
            spec,
            domain: Mask::free_space(&city),
            maps,
            ids,
            report,
            city,
        }
    }

    pub fn station_maps(&self) -> Vec<StationMap<'_>> {
        self.ids
            .iter()
            .zip(&self.maps)
            .map(|(id, map)| StationMap { id, map })
            .collect()
    }
}

pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) || (a - b).abs() <= 1e-12
}

pub fn mask_cells(m: &Mask) -> Vec<(usize, usize)> {
    m.cells().map(|c| (c.row, c.col)).collect()
}
