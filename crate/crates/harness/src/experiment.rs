//! Train/test experiment over many scenarios and station counts.

use crate::config::{Algorithm, ExperimentConfig, ScenarioSource, SyntheticSource};
use crate::HarnessError;
use levelvote::gridmap::{Cell, GridSpec, MeasurementReport, Scenario, Station};
use levelvote::locengine::{estimates, localize_spm, LocalizationResult, Mask};
use levelvote::synthgen::{
    derive_seed, generate_city, generate_radio_map, perturb_radio_map_in, sample_free_cells,
    sample_report, CityGenParams, NoiseParams,
};
use levelvote::tuner::{
    localize_adaptive, localize_with_policy, pairwise_sum, sweep_epsilon, tune_fixed_epsilon,
    tune_target_spread, SweepStats, TrainingInstance, TunedPolicy,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeSet;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

const SPLIT_STREAM: u64 = 0x5EED_5E1F;

/// Splits `ids` into disjoint train and test lists. The train side gets
/// `round(n * train_fraction)` ids, clamped so both sides are non-empty.
/// Each side keeps the input order.
pub fn split_dataset(
    ids: &[String],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<String>, Vec<String>), HarnessError> {
    let n = ids.len();
    if n < 2 {
        return Err(HarnessError::Config(format!(
            "need at least 2 scenarios to split, got {n}"
        )));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(HarnessError::Config(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_train = vec![false; n];
    for &i in &order[..n_train] {
        is_train[i] = true;
    }
    let (train, test): (Vec<_>, Vec<_>) = ids.iter().cloned().zip(is_train).partition(|(_, t)| *t);
    Ok((
        train.into_iter().map(|(id, _)| id).collect(),
        test.into_iter().map(|(id, _)| id).collect(),
    ))
}

/// A scenario with its search domain and labeled device reports.
#[derive(Debug, Clone)]
pub struct PreparedScenario {
    pub id: String,
    pub scenario: Scenario,
    pub domain: Mask,
    pub ues: Vec<(Cell, MeasurementReport)>,
}

fn sample_ues(
    scenario: &Scenario,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<Vec<(Cell, MeasurementReport)>, HarnessError> {
    let cells = sample_free_cells(&scenario.city, config.ues_per_scenario, derive_seed(seed, 3))?;
    cells
        .into_iter()
        .enumerate()
        .map(|(u, ue)| {
            let truth = scenario
                .stations
                .iter()
                .map(|s| {
                    s.truth.as_ref().map(|t| (s.id.clone(), t)).ok_or_else(|| {
                        HarnessError::Config(format!(
                            "station `{}` has no truth map; reports cannot be sampled",
                            s.id
                        ))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let report = sample_report(
                truth,
                &scenario.city,
                ue,
                config.report_noise_sd,
                derive_seed(seed, 200 + u as u64),
            )?;
            Ok((ue, report))
        })
        .collect()
}

/// Builds one synthetic scenario: city, station placement, ground truth
/// maps and their perturbed estimates. Pure in `(source, noise, seed)`.
pub fn synthetic_scenario(
    source: &SyntheticSource,
    noise: &crate::config::MapNoise,
    seed: u64,
) -> Result<Scenario, HarnessError> {
    let spec = GridSpec::new(source.height, source.width, source.cell_size)?;
    let city = generate_city(
        spec,
        &CityGenParams {
            seed: derive_seed(seed, 1),
            ..source.city.clone()
        },
    )?;
    let bss = sample_free_cells(&city, source.n_stations, derive_seed(seed, 2))?;
    let stations = bss
        .into_iter()
        .enumerate()
        .map(|(k, bs)| {
            let truth = generate_radio_map(&city, bs, &source.propagation)?;
            let estimate = perturb_radio_map_in(
                &truth,
                &NoiseParams {
                    target_rmse: noise.target_rmse,
                    smoothness: noise.smoothness,
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
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(Scenario {
        spec,
        city,
        stations,
        db_scale: source.propagation.db_scale,
    })
}

/// Sub-directories of `dir` containing a `manifest.json`, sorted by name.
pub fn manifest_dirs(dir: &Path) -> Result<Vec<std::path::PathBuf>, HarnessError> {
    let entries = std::fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| HarnessError::io(dir, e))?;
        let path = entry.path();
        if path.join("manifest.json").is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

pub fn prepare_scenarios(config: &ExperimentConfig) -> Result<Vec<PreparedScenario>, HarnessError> {
    let build = |id: String, scenario: Scenario, seed: u64| {
        let ues = sample_ues(&scenario, config, seed)?;
        Ok(PreparedScenario {
            id,
            domain: Mask::domain(&scenario.city, config.allow_indoor),
            scenario,
            ues,
        })
    };
    match &config.source {
        ScenarioSource::Synthetic(source) => (0..config.n_scenarios)
            .into_par_iter()
            .map(|i| {
                let seed = derive_seed(config.master_seed, i as u64);
                let scenario = synthetic_scenario(source, &config.noise, seed)?;
                build(format!("s{i:04}"), scenario, seed)
            })
            .collect(),
        ScenarioSource::Manifests { dir } => {
            let mut dirs = manifest_dirs(dir)?;
            if config.n_scenarios > 0 {
                dirs.truncate(config.n_scenarios);
            }
            dirs.into_par_iter()
                .enumerate()
                .map(|(i, d)| {
                    let scenario = Scenario::load(d.join("manifest.json"))?;
                    let id = d
                        .file_name()
                        .map(|n| n.to_string_lossy().into_owned())
                        .unwrap_or_else(|| format!("m{i:04}"));
                    build(id, scenario, derive_seed(config.master_seed, i as u64))
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceRow {
    pub algorithm: Algorithm,
    pub bs_count: usize,
    pub scenario_id: String,
    pub ue_index: usize,
    pub true_row: usize,
    pub true_col: usize,
    pub est_row: f64,
    pub est_col: f64,
    pub error_m: f64,
    pub q_m: f64,
    pub area: usize,
    pub vote_max: u16,
    pub eps_used: f64,
    pub fallback: bool,
    pub no_support: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub algorithm: Algorithm,
    pub bs_count: usize,
    pub n: usize,
    pub mean_error_m: f64,
    pub median_error_m: f64,
    pub mean_q_m: f64,
    pub fallback_rate: f64,
    pub no_support_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningRecord {
    pub bs_count: usize,
    pub sweep: SweepStats,
    pub fixed: TunedPolicy,
    pub adaptive: TunedPolicy,
}

/// Localization counts per split, incremented as work is done.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub train_localizations: usize,
    pub test_localizations: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub algorithms: Vec<Algorithm>,
    pub bs_counts: Vec<usize>,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    /// Scenario ids whose instances were fed to the tuners.
    pub tuned_on: BTreeSet<String>,
    pub tuning: Vec<TuningRecord>,
    pub rows: Vec<InstanceRow>,
    pub aggregates: Vec<Aggregate>,
    pub counters: Counters,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Per (algorithm, bs_count) aggregates of `rows`, in the given orders.
pub fn aggregate(rows: &[InstanceRow], algorithms: &[Algorithm], bs_counts: &[usize]) -> Vec<Aggregate> {
    let mut out = Vec::new();
    for &algorithm in algorithms {
        for &bs_count in bs_counts {
            let sel: Vec<&InstanceRow> = rows
                .iter()
                .filter(|r| r.algorithm == algorithm && r.bs_count == bs_count)
                .collect();
            if sel.is_empty() {
                continue;
            }
            let n = sel.len();
            let mut errors: Vec<f64> = sel.iter().map(|r| r.error_m).collect();
            let qs: Vec<f64> = sel.iter().map(|r| r.q_m).collect();
            let rate = |f: fn(&InstanceRow) -> bool| sel.iter().filter(|r| f(r)).count() as f64 / n as f64;
            out.push(Aggregate {
                algorithm,
                bs_count,
                n,
                mean_error_m: pairwise_sum(&errors) / n as f64,
                median_error_m: median(&mut errors),
                mean_q_m: pairwise_sum(&qs) / n as f64,
                fallback_rate: rate(|r| r.fallback),
                no_support_rate: rate(|r| r.no_support),
            });
        }
    }
    out
}

fn row(
    algorithm: Algorithm,
    bs_count: usize,
    scenario_id: &str,
    ue_index: usize,
    ue: Cell,
    r: &LocalizationResult,
) -> InstanceRow {
    InstanceRow {
        algorithm,
        bs_count,
        scenario_id: scenario_id.to_string(),
        ue_index,
        true_row: ue.row,
        true_col: ue.col,
        est_row: r.estimate.row,
        est_col: r.estimate.col,
        error_m: r.error_m(ue),
        q_m: r.quality_q,
        area: r.area,
        vote_max: r.vote_max,
        eps_used: r.epsilon_used.common().unwrap_or(f64::NAN),
        fallback: r.spm.is_some_and(|s| s.fallback),
        no_support: r.no_support,
    }
}

fn instances<'a>(
    scenarios: &'a [PreparedScenario],
    ids: &[String],
    k: usize,
) -> Result<Vec<TrainingInstance<'a>>, HarnessError> {
    let mut out = Vec::new();
    for s in scenarios.iter().filter(|s| ids.contains(&s.id)) {
        if s.scenario.stations.len() < k {
            return Err(HarnessError::Config(format!(
                "scenario `{}` has {} stations, bs_count {k} requested",
                s.id,
                s.scenario.stations.len()
            )));
        }
        for (ue, report) in &s.ues {
            out.push(TrainingInstance {
                scenario_id: s.id.clone(),
                maps: estimates(&s.scenario.stations[..k]),
                domain: &s.domain,
                ue: *ue,
                report: report.prefix(k)?,
            });
        }
    }
    Ok(out)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    pool.install(|| run_prepared(config, &prepare_scenarios(config)?))
}

/// Runs the tuning and evaluation stages on already prepared scenarios.
pub fn run_prepared(
    config: &ExperimentConfig,
    scenarios: &[PreparedScenario],
) -> Result<ExperimentReport, HarnessError> {
    let ids: Vec<String> = scenarios.iter().map(|s| s.id.clone()).collect();
    let (train_ids, test_ids) = split_dataset(
        &ids,
        config.train_fraction,
        derive_seed(config.master_seed, SPLIT_STREAM),
    )?;
    let train_count = AtomicUsize::new(0);
    let test_count = AtomicUsize::new(0);
    let mut tuned_on = BTreeSet::new();
    let mut tuning = Vec::new();
    let mut rows = Vec::new();

    for &k in &config.bs_counts {
        let train = instances(scenarios, &train_ids, k)?;
        tuned_on.extend(train.iter().map(|t| t.scenario_id.clone()));
        let sweep = sweep_epsilon(&train, &config.eps_grid)?;
        train_count.fetch_add(train.len() * config.eps_grid.len(), Ordering::Relaxed);
        let fixed = tune_fixed_epsilon(&sweep);
        let adaptive = tune_target_spread(&sweep);

        let test = instances(scenarios, &test_ids, k)?;
        let per_instance: Vec<Vec<InstanceRow>> = test
            .par_iter()
            .map(|inst| {
                let ue_index = scenarios
                    .iter()
                    .find(|s| s.id == inst.scenario_id)
                    .and_then(|s| s.ues.iter().position(|(c, _)| *c == inst.ue))
                    .unwrap_or(0);
                config
                    .algorithms
                    .iter()
                    .map(|&alg| {
                        let r = match alg {
                            Algorithm::Fixed => {
                                localize_with_policy(&inst.maps, &inst.report, &fixed, inst.domain)?
                            }
                            Algorithm::Adaptive => {
                                localize_adaptive(&inst.maps, &inst.report, &adaptive, inst.domain)?
                            }
                            Algorithm::Spm => {
                                localize_spm(&inst.maps, &inst.report, &config.spm, inst.domain)?
                            }
                        };
                        test_count.fetch_add(1, Ordering::Relaxed);
                        Ok(row(alg, k, &inst.scenario_id, ue_index, inst.ue, &r))
                    })
                    .collect::<Result<Vec<_>, HarnessError>>()
            })
            .collect::<Result<_, _>>()?;
        rows.extend(per_instance.into_iter().flatten());
        tuning.push(TuningRecord {
            bs_count: k,
            sweep,
            fixed,
            adaptive,
        });
    }

    // Rows are grouped by algorithm first so the CSV reads per curve.
    rows.sort_by_key(|r| {
        config
            .algorithms
            .iter()
            .position(|a| *a == r.algorithm)
            .unwrap_or(usize::MAX)
    });
    let aggregates = aggregate(&rows, &config.algorithms, &config.bs_counts);
    Ok(ExperimentReport {
        algorithms: config.algorithms.clone(),
        bs_counts: config.bs_counts.clone(),
        train_ids,
        test_ids,
        tuned_on,
        tuning,
        rows,
        aggregates,
        counters: Counters {
            train_localizations: train_count.into_inner(),
            test_localizations: test_count.into_inner(),
        },
    })
}

#[derive(Serialize)]
struct AggregateCsvRow {
    algorithm: Algorithm,
    bs_count: usize,
    n: usize,
    mean_error_m: f64,
    median_error_m: f64,
    mean_q_m: f64,
    fallback_rate: f64,
    no_support_rate: f64,
    eps_star: f64,
    q_star_m: f64,
}

impl ExperimentReport {
    /// Aggregates with the tuned parameters of their station count.
    pub fn to_csv(&self) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for agg in &self.aggregates {
            let t = self.tuning.iter().find(|t| t.bs_count == agg.bs_count);
            let eps_star = match t.map(|t| &t.fixed) {
                Some(TunedPolicy::Fixed { eps_star }) => *eps_star,
                _ => f64::NAN,
            };
            let q_star_m = match t.map(|t| &t.adaptive) {
                Some(TunedPolicy::Adaptive { q_star_m, .. }) => *q_star_m,
                _ => f64::NAN,
            };
            w.serialize(AggregateCsvRow {
                algorithm: agg.algorithm,
                bs_count: agg.bs_count,
                n: agg.n,
                mean_error_m: agg.mean_error_m,
                median_error_m: agg.median_error_m,
                mean_q_m: agg.mean_q_m,
                fallback_rate: agg.fallback_rate,
                no_support_rate: agg.no_support_rate,
                eps_star,
                q_star_m,
            })?;
        }
        finish_csv(w)
    }

    pub fn instances_csv(&self) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        finish_csv(w)
    }

    /// Sweep tables of every station count: `bs_count,eps,mean_error_m,mean_q_m,n`.
    pub fn sweeps_csv(&self) -> String {
        let mut s = String::from("bs_count,eps,mean_error_m,mean_q_m,n\n");
        for t in &self.tuning {
            for r in t.sweep.records() {
                s.push_str(&format!(
                    "{},{},{},{},{}\n",
                    t.bs_count, r.eps, r.mean_error_m, r.mean_q_m, r.n_instances
                ));
            }
        }
        s
    }

    pub fn aggregate_for(&self, algorithm: Algorithm, bs_count: usize) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.algorithm == algorithm && a.bs_count == bs_count)
    }

    /// Recomputes the aggregates from the rows and checks that no test
    /// scenario took part in tuning.
    pub fn check_consistency(&self) -> Result<(), String> {
        let again = aggregate(&self.rows, &self.algorithms, &self.bs_counts);
        if again != self.aggregates {
            return Err("aggregates differ from recomputation over instance rows".into());
        }
        if let Some(id) = self.test_ids.iter().find(|id| self.tuned_on.contains(*id)) {
            return Err(format!("test scenario `{id}` was used for tuning"));
        }
        if let Some(r) = self.rows.iter().find(|r| !self.test_ids.contains(&r.scenario_id)) {
            return Err(format!("row from non-test scenario `{}`", r.scenario_id));
        }
        let expected_test = self.rows.len();
        if self.counters.test_localizations != expected_test {
            return Err(format!(
                "{} test localizations counted for {} rows",
                self.counters.test_localizations, expected_test
            ));
        }
        Ok(())
    }
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String, HarnessError> {
    let bytes = w
        .into_inner()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
