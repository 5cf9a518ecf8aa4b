//! Acceptance suite. Each test prints one PASS/FAIL line; run with
//! `cargo test -p levelvote-harness --release --test acceptance -- --nocapture --test-threads=1`.

mod support;

use levelvote::gridmap::{
    load_grid, save_city_map, save_radio_map, Cell, CityMap, Grid, GridKind, GridSpec, RadioMap,
};
use levelvote::locengine::{
    centroid_and_spread, epsilon_level_set, estimates, localization_set, localize_spm,
    localize_voting, vote_map, Epsilon, SpmParams, StationMap,
};
use levelvote::synthgen::{derive_seed, sample_free_cells, sample_report, CityGenParams};
use levelvote::tuner::{
    localize_adaptive, tune_fixed_epsilon, tune_target_spread, SweepRecord, SweepStats, TunedPolicy,
    DEFAULT_EPS_GRID,
};
use levelvote_harness::experiment::synthetic_scenario;
use levelvote_harness::{run_experiment, Algorithm, ExperimentConfig, MapNoise, ScenarioSource, SyntheticSource};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::process::Command;
use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};
use support::{close, mask_cells, Instance, Lib};

// Criteria with time budgets must not share the CPU with each other.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(id: u32, name: &str, pass: bool, detail: &str) {
    println!(
        "criterion {id} {name}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(f)
}

fn check_oracle(inst: &Instance) -> Result<(), String> {
    let lib = Lib::from_instance(inst);
    let maps = lib.station_maps();
    let eps = Epsilon::PerStation(inst.eps.clone());

    let v = vote_map(&maps, &lib.report, &eps, &lib.domain).map_err(|e| e.to_string())?;
    let expect = support::votes(inst);
    if v.votes().iter().map(|&x| x as u32).ne(expect.iter().copied()) {
        return Err("vote map differs".into());
    }

    let want = support::voting(inst);
    let set = localization_set(&v, &lib.domain).map_err(|e| e.to_string())?;
    if mask_cells(&set.mask) != want.cells || set.vote_max as u32 != want.vote_max {
        return Err("localization set differs".into());
    }
    let (x, q) = centroid_and_spread(&set.mask, &lib.spec).map_err(|e| e.to_string())?;
    if !(close(x.row, want.x.0, 1e-9) && close(x.col, want.x.1, 1e-9) && close(q, want.q, 1e-9)) {
        return Err(format!("centroid/spread differ: {x:?} {q} vs {:?} {}", want.x, want.q));
    }
    let r = localize_voting(&maps, &lib.report, &eps, &lib.domain).map_err(|e| e.to_string())?;
    if mask_cells(&r.o_set) != want.cells || r.estimate != x || r.quality_q != q {
        return Err("localize_voting disagrees with its parts".into());
    }

    let p = SpmParams::default();
    let got = localize_spm(&maps, &lib.report, &p, &lib.domain).map_err(|e| e.to_string())?;
    let (want, want_eps, iters, fallback) = support::spm(inst, p.eps0, p.growth, p.eps_cap);
    let outcome = got.spm.unwrap();
    if mask_cells(&got.o_set) != want.cells
        || got.epsilon_used.common() != Some(want_eps)
        || outcome.iterations != iters
        || outcome.fallback != fallback
        || got.vote_max as u32 != want.vote_max
    {
        return Err(format!(
            "spm differs: {} cells at eps {:?} (iter {}, fallback {}) vs {} cells at eps {} (iter {iters}, fallback {fallback})",
            got.area,
            got.epsilon_used,
            outcome.iterations,
            outcome.fallback,
            want.cells.len(),
            want_eps
        ));
    }
    if !(close(got.estimate.row, want.x.0, 1e-9)
        && close(got.estimate.col, want.x.1, 1e-9)
        && close(got.quality_q, want.q, 1e-9))
    {
        return Err("spm centroid/spread differ".into());
    }
    Ok(())
}

#[test]
fn criterion_1_oracle_equivalence() {
    let _serial = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let instances: Vec<Instance> = (0..1000)
        .map(|_| support::random_instance(&mut rng, 32, 8))
        .collect();
    let failures: Vec<(usize, String)> = instances
        .iter()
        .enumerate()
        .filter_map(|(i, inst)| check_oracle(inst).err().map(|e| (i, e)))
        .collect();
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(30);
    verdict(
        1,
        "oracle equivalence",
        pass,
        &format!(
            "1000 instances, {} mismatches, {:.2} s",
            failures.len(),
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass, "first mismatches: {:?}", &failures[..failures.len().min(3)]);
}

fn small_source(size: usize, n_stations: usize) -> SyntheticSource {
    SyntheticSource {
        height: size,
        width: size,
        n_stations,
        city: CityGenParams {
            n_buildings: size / 6,
            min_side: size / 16,
            max_side: size / 6,
            margin: 2,
            seed: 0,
        },
        ..Default::default()
    }
}

#[test]
fn criterion_2_perfect_map_containment() {
    let _serial = serial();
    let source = small_source(64, 10);
    let exact = MapNoise {
        target_rmse: 0.0,
        smoothness: 8.0,
    };
    let failures: Vec<String> = (0..200u64)
        .into_par_iter()
        .flat_map_iter(|i| {
            let seed = derive_seed(2, i);
            let scenario = synthetic_scenario(&source, &exact, seed).unwrap();
            let truth: Vec<(&str, &RadioMap)> = scenario
                .stations
                .iter()
                .map(|s| (s.id.as_str(), s.truth.as_ref().unwrap()))
                .collect();
            let ue = sample_free_cells(&scenario.city, 1, derive_seed(seed, 3)).unwrap()[0];
            let report = sample_report(truth.iter().copied(), &scenario.city, ue, 0.0, 0).unwrap();
            let domain = levelvote::Mask::free_space(&scenario.city);
            let mut bad = Vec::new();
            for k in [3, 5, 10] {
                let maps: Vec<StationMap> = truth[..k]
                    .iter()
                    .map(|&(id, map)| StationMap { id, map })
                    .collect();
                let report = report.prefix(k).unwrap();
                for eps in DEFAULT_EPS_GRID {
                    let r = localize_voting(&maps, &report, &eps.into(), &domain).unwrap();
                    if !(r.o_set.contains(ue) && r.vote_max as usize == k) {
                        bad.push(format!("scenario {i} K={k} eps={eps}"));
                    }
                }
            }
            bad
        })
        .collect();
    let cases = 200 * 3 * DEFAULT_EPS_GRID.len();
    let pass = failures.is_empty();
    verdict(
        2,
        "perfect-map containment",
        pass,
        &format!("{} of {cases} cases contain the device with full votes", cases - failures.len()),
    );
    assert!(pass, "{failures:?}");
}

#[test]
fn criterion_3_monotonicity() {
    let _serial = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let source = small_source(32, 6);
    let noisy = MapNoise::default();
    let mut level_violations = 0;
    let mut vote_violations = 0;
    let mut spm_checked = 0;
    let mut spm_violations = 0;
    for i in 0..500u64 {
        let (lib_maps, report, domain) = if i % 2 == 0 {
            let lib = Lib::from_instance(&support::random_instance(&mut rng, 32, 6));
            (lib.maps, lib.report, lib.domain)
        } else {
            let scenario = synthetic_scenario(&source, &noisy, derive_seed(3, i)).unwrap();
            let ue = sample_free_cells(&scenario.city, 1, derive_seed(i, 9)).unwrap()[0];
            let report = sample_report(
                scenario
                    .stations
                    .iter()
                    .map(|s| (s.id.clone(), s.truth.as_ref().unwrap())),
                &scenario.city,
                ue,
                0.005,
                i,
            )
            .unwrap();
            let domain = levelvote::Mask::free_space(&scenario.city);
            let maps: Vec<RadioMap> = scenario.stations.into_iter().map(|s| s.estimate).collect();
            (maps, report, domain)
        };
        let ids: Vec<String> = report.entries().iter().map(|e| e.bs_id.clone()).collect();
        let maps: Vec<StationMap> = ids
            .iter()
            .zip(&lib_maps)
            .map(|(id, map)| StationMap { id, map })
            .collect();
        let a: f64 = rng.random_range(0.001..0.2);
        let b: f64 = rng.random_range(0.001..0.2);
        let (lo, hi) = (a.min(b), a.max(b));

        for (m, entry) in lib_maps.iter().zip(report.entries()) {
            let l_lo = epsilon_level_set(m, entry.g, lo, &domain).unwrap();
            let l_hi = epsilon_level_set(m, entry.g, hi, &domain).unwrap();
            if !l_lo.is_subset_of(&l_hi) {
                level_violations += 1;
            }
        }
        let v_lo = vote_map(&maps, &report, &lo.into(), &domain).unwrap();
        let v_hi = vote_map(&maps, &report, &hi.into(), &domain).unwrap();
        if v_lo.votes().iter().zip(v_hi.votes()).any(|(x, y)| x > y) {
            vote_violations += 1;
        }

        let spm = localize_spm(&maps, &report, &SpmParams::default(), &domain).unwrap();
        if !spm.spm.unwrap().fallback {
            spm_checked += 1;
            let voting = localize_voting(&maps, &report, &spm.epsilon_used, &domain).unwrap();
            if !spm.o_set.is_subset_of(&voting.o_set) {
                spm_violations += 1;
            }
        }
    }
    let pass = level_violations == 0 && vote_violations == 0 && spm_violations == 0;
    verdict(
        3,
        "monotonicity",
        pass,
        &format!(
            "500 pairs: {level_violations} level-set and {vote_violations} vote violations; \
             intersection within voting set in {}/{spm_checked} non-empty cases",
            spm_checked - spm_violations
        ),
    );
    assert!(pass);
}

fn pooled_mean(report: &levelvote_harness::ExperimentReport, algorithm: Algorithm) -> f64 {
    let errors: Vec<f64> = report
        .rows
        .iter()
        .filter(|r| r.algorithm == algorithm)
        .map(|r| r.error_m)
        .collect();
    errors.iter().sum::<f64>() / errors.len() as f64
}

#[test]
fn criterion_4_noise_regime_trend() {
    let _serial = serial();
    let config = ExperimentConfig {
        source: ScenarioSource::Synthetic(SyntheticSource::default()),
        n_scenarios: 80,
        train_fraction: 0.5,
        bs_counts: (2..=10).collect(),
        noise: MapNoise {
            target_rmse: 0.01,
            smoothness: 8.0,
        },
        report_noise_sd: 0.005,
        algorithms: vec![Algorithm::Fixed, Algorithm::Adaptive],
        workers: 1,
        ..Default::default()
    };
    let start = Instant::now();
    let report = run_experiment(&config).unwrap();
    let elapsed = start.elapsed();
    assert_eq!((report.train_ids.len(), report.test_ids.len()), (40, 40));

    let mean = |a, k| report.aggregate_for(a, k).unwrap().mean_error_m;
    let mut lines = Vec::new();
    let mut trend = true;
    for a in [Algorithm::Fixed, Algorithm::Adaptive] {
        let (m2, m10) = (mean(a, 2), mean(a, 10));
        trend &= m10 <= m2;
        lines.push(format!("{} {m2:.3} m at 2 BS, {m10:.3} m at 10 BS", a.name()));
    }
    let fixed = pooled_mean(&report, Algorithm::Fixed);
    let adaptive = pooled_mean(&report, Algorithm::Adaptive);
    let ratio = adaptive / fixed;
    let timely = elapsed < Duration::from_secs(300);
    let pass = trend && ratio <= 1.10 && timely;
    lines.push(format!(
        "adaptive/fixed mean error {adaptive:.3}/{fixed:.3} = {ratio:.3}; {:.1} s",
        elapsed.as_secs_f64()
    ));
    verdict(4, "noise-regime trend", pass, &lines.join("; "));
    let per_k: Vec<String> = report
        .bs_counts
        .iter()
        .map(|&k| format!("K={k}: {:.3}", mean(Algorithm::Adaptive, k) / mean(Algorithm::Fixed, k)))
        .collect();
    println!("  per-count adaptive/fixed ratios: {}", per_k.join(", "));
    assert!(pass);
}

#[test]
fn criterion_5_tuner_exactness() {
    let _serial = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut fixed_ok = 0;
    let mut adaptive_ok = 0;
    for _ in 0..100 {
        let n = rng.random_range(1..=8);
        let mut eps: Vec<f64> = (0..n).map(|_| rng.random_range(0.002..0.2)).collect();
        eps.sort_by(f64::total_cmp);
        eps.dedup();
        // coarse values force ties in both columns
        let records: Vec<SweepRecord> = eps
            .iter()
            .map(|&e| SweepRecord {
                eps: e,
                mean_error_m: rng.random_range(0..6u32) as f64 * 0.5,
                mean_q_m: rng.random_range(0..6u32) as f64 * 0.75,
                n_instances: rng.random_range(1..50),
            })
            .collect();
        let stats = SweepStats::new(records.clone()).unwrap();

        let min_err = records.iter().map(|r| r.mean_error_m).fold(f64::INFINITY, f64::min);
        let want = records.iter().find(|r| r.mean_error_m == min_err).unwrap();
        if tune_fixed_epsilon(&stats) == (TunedPolicy::Fixed { eps_star: want.eps }) {
            fixed_ok += 1;
        }

        let policy = match tune_target_spread(&stats) {
            TunedPolicy::Adaptive { eps_grid, .. } => TunedPolicy::Adaptive {
                q_star_m: rng.random_range(0.0..6.0),
                eps_grid,
            },
            other => panic!("unexpected {other:?}"),
        };
        let TunedPolicy::Adaptive { q_star_m, eps_grid } = &policy else {
            unreachable!()
        };
        let inst = support::random_instance(&mut rng, 24, 6);
        let lib = Lib::from_instance(&inst);
        let got = localize_adaptive(&lib.station_maps(), &lib.report, &policy, &lib.domain).unwrap();
        let outcomes: Vec<support::OracleOutcome> = eps_grid
            .iter()
            .map(|&e| {
                support::voting(&Instance {
                    eps: vec![e; inst.maps.len()],
                    ..inst.clone()
                })
            })
            .collect();
        let mut pick = 0;
        for (i, o) in outcomes.iter().enumerate() {
            if (o.q - q_star_m).abs() < (outcomes[pick].q - q_star_m).abs() {
                pick = i;
            }
        }
        let (e, cells) = (eps_grid[pick], &outcomes[pick].cells);
        if got.epsilon_used.common() == Some(e) && mask_cells(&got.o_set) == *cells {
            adaptive_ok += 1;
        }
    }
    let pass = fixed_ok == 100 && adaptive_ok == 100;
    verdict(
        5,
        "tuner exactness",
        pass,
        &format!("fixed argmin {fixed_ok}/100, adaptive closest spread {adaptive_ok}/100"),
    );
    assert!(pass);
}

fn eval_run(dir: &std::path::Path, tag: &str, workers: usize) -> Vec<Vec<u8>> {
    let out = |name: &str| dir.join(format!("{tag}_{name}.csv"));
    let status = Command::new(env!("CARGO_BIN_EXE_levelvote"))
        .args(["eval", "--height", "48", "--width", "48", "--n-stations", "6"])
        .args(["--n-buildings", "6", "--min-side", "3", "--max-side", "8"])
        .args(["--n-scenarios", "12", "--bs-counts", "2,4,6", "--report-noise-sd", "0.005"])
        .args(["--master-seed", "77", "--workers", &workers.to_string()])
        .arg("--out")
        .arg(out("report"))
        .arg("--instances-out")
        .arg(out("instances"))
        .arg("--sweeps-out")
        .arg(out("sweeps"))
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    ["report", "instances", "sweeps"]
        .iter()
        .map(|n| std::fs::read(out(n)).unwrap())
        .collect()
}

#[test]
fn criterion_6_determinism() {
    let _serial = serial();
    let dir = tempfile::tempdir().unwrap();
    let a = eval_run(dir.path(), "a", 1);
    let b = eval_run(dir.path(), "b", 1);
    let c = eval_run(dir.path(), "c", 4);
    let d = eval_run(dir.path(), "d", 4);
    let pass = a == b && c == d && a == c && !a[0].is_empty();
    verdict(
        6,
        "determinism",
        pass,
        &format!(
            "eval twice at 1 worker and twice at 4 workers, {} report bytes, identical: {pass}",
            a[0].len()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_7_throughput() {
    let _serial = serial();
    let mut source = small_source(256, 10);
    source.city.margin = 4;
    let scenario = synthetic_scenario(&source, &MapNoise::default(), 7).unwrap();
    let ue = sample_free_cells(&scenario.city, 1, 70).unwrap()[0];
    let report = sample_report(
        scenario
            .stations
            .iter()
            .map(|s| (s.id.clone(), s.truth.as_ref().unwrap())),
        &scenario.city,
        ue,
        0.005,
        71,
    )
    .unwrap();
    let domain = levelvote::Mask::free_space(&scenario.city);
    let maps = estimates(&scenario.stations);
    let eps = Epsilon::Common(0.03);
    let mut times = single_threaded(|| {
        let _ = localize_voting(&maps, &report, &eps, &domain).unwrap();
        (0..21)
            .map(|_| {
                let t = Instant::now();
                let r = localize_voting(&maps, &report, &eps, &domain).unwrap();
                std::hint::black_box(r);
                t.elapsed()
            })
            .collect::<Vec<_>>()
    });
    times.sort();
    let median = times[times.len() / 2];
    let pass = median < Duration::from_millis(50);
    verdict(
        7,
        "throughput",
        pass,
        &format!(
            "256x256, 10 BS, single thread: median {:.2} ms, max {:.2} ms over 21 runs",
            median.as_secs_f64() * 1e3,
            times.last().unwrap().as_secs_f64() * 1e3
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_8_pgm_round_trip() {
    let _serial = serial();
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut failures = Vec::new();
    for i in 0..100 {
        let (h, w) = (rng.random_range(1..=64), rng.random_range(1..=64));
        let spec = GridSpec::new(h, w, rng.random_range(0.25..4.0)).unwrap();
        let bs = Cell::new(rng.random_range(0..h), rng.random_range(0..w));
        let values: Vec<f64> = (0..h * w)
            .map(|_| match rng.random_range(0..10) {
                0 => 0.0,
                1 => 1.0,
                _ => rng.random(),
            })
            .collect();
        let map = RadioMap::new(spec, bs, values).unwrap();
        let mut occupied: Vec<bool> = (0..h * w).map(|_| rng.random_bool(0.3)).collect();
        occupied[rng.random_range(0..h * w)] = false;
        let city = CityMap::new(spec, occupied).unwrap();

        let rp = dir.path().join(format!("r{i}.pgm"));
        let cp = dir.path().join(format!("c{i}.pgm"));
        save_radio_map(&map, &rp).unwrap();
        save_city_map(&city, &cp).unwrap();
        let Grid::Radio(back) = load_grid(&rp, GridKind::Radio { bs }, Some(&spec)).unwrap() else {
            panic!("kind")
        };
        let Grid::City(city_back) = load_grid(&cp, GridKind::City, Some(&spec)).unwrap() else {
            panic!("kind")
        };
        let radio_ok = back.spec() == &spec
            && back.bs() == bs
            && back
                .values()
                .iter()
                .zip(map.values())
                .all(|(a, b)| (a - b).abs() <= 0.5 / 255.0 + 1e-12 && *a == (b * 255.0).round() / 255.0);
        if !radio_ok || city_back != city {
            failures.push(i);
        }
    }
    let pass = failures.is_empty();
    verdict(
        8,
        "pgm round-trip",
        pass,
        &format!("{}/100 grids round-trip", 100 - failures.len()),
    );
    assert!(pass, "{failures:?}");
}
