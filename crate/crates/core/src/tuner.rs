//! ε selection from training statistics.
//!
//! A sweep runs voting localization on every training instance for each ε
//! of a grid and records mean error and mean spread `Q`. Two policies are
//! derived from it:
//!
//! * fixed: the ε with the smallest mean training error;
//! * adaptive: a target spread `q*` (mean `Q` at the best ε); at query time
//!   every grid ε is tried and the outcome whose `Q` is closest to `q*` wins.
//!
//! Ties always go to the smaller ε.

use crate::gridmap::{Cell, MeasurementReport};
use crate::locengine::{localize_voting, Epsilon, LocError, LocalizationResult, Mask, StationMap};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// The ε grid 0.01, 0.02, …, 0.05.
pub const DEFAULT_EPS_GRID: [f64; 5] = [0.01, 0.02, 0.03, 0.04, 0.05];

#[derive(Debug, thiserror::Error)]
pub enum TuneError {
    #[error(transparent)]
    Loc(#[from] LocError),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("invalid epsilon grid: {0}")]
    InvalidGrid(String),
    #[error("policy mode `{0}` cannot be used here")]
    WrongMode(&'static str),
}

/// One labeled localization problem.
#[derive(Debug, Clone)]
pub struct TrainingInstance<'a> {
    pub scenario_id: String,
    pub maps: Vec<StationMap<'a>>,
    pub domain: &'a Mask,
    pub ue: Cell,
    pub report: MeasurementReport,
}

impl TrainingInstance<'_> {
    pub fn localize(&self, eps: f64) -> Result<LocalizationResult, LocError> {
        localize_voting(&self.maps, &self.report, &Epsilon::Common(eps), self.domain)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub eps: f64,
    pub mean_error_m: f64,
    pub mean_q_m: f64,
    pub n_instances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepStats {
    records: Vec<SweepRecord>,
}

impl SweepStats {
    pub fn new(records: Vec<SweepRecord>) -> Result<Self, TuneError> {
        if records.is_empty() {
            return Err(TuneError::InvalidGrid("no records".into()));
        }
        if records.windows(2).any(|w| !(w[0].eps < w[1].eps)) {
            return Err(TuneError::InvalidGrid(
                "eps values must be strictly increasing".into(),
            ));
        }
        if records.iter().any(|r| r.n_instances == 0) {
            return Err(TuneError::EmptyTrainingSet);
        }
        Ok(SweepStats { records })
    }

    pub fn records(&self) -> &[SweepRecord] {
        &self.records
    }

    pub fn eps_grid(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.eps).collect()
    }

    /// Index of the record with the smallest mean error, first on ties.
    pub fn best_index(&self) -> usize {
        let mut best = 0;
        for (i, r) in self.records.iter().enumerate().skip(1) {
            if r.mean_error_m < self.records[best].mean_error_m {
                best = i;
            }
        }
        best
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("eps,mean_error_m,mean_q_m,n\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                r.eps, r.mean_error_m, r.mean_q_m, r.n_instances
            );
        }
        s
    }
}

/// Pairwise summation, for a mean whose rounding does not depend on how
/// the work was scheduled.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n if n <= 8 => values.iter().sum(),
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

fn validate_grid(eps_grid: &[f64]) -> Result<(), TuneError> {
    if eps_grid.is_empty() {
        return Err(TuneError::InvalidGrid("empty".into()));
    }
    if eps_grid.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(TuneError::InvalidGrid("values must be positive".into()));
    }
    if eps_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(TuneError::InvalidGrid("values must be strictly increasing".into()));
    }
    Ok(())
}

/// `(error_m, q_m)` for every instance at one ε, in instance order.
fn evaluate(train: &[TrainingInstance<'_>], eps: f64) -> Result<Vec<(f64, f64)>, LocError> {
    let run = |inst: &TrainingInstance<'_>| {
        inst.localize(eps).map(|r| (r.error_m(inst.ue), r.quality_q))
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        train.par_iter().map(run).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        train.iter().map(run).collect()
    }
}

pub fn sweep_epsilon(
    train: &[TrainingInstance<'_>],
    eps_grid: &[f64],
) -> Result<SweepStats, TuneError> {
    if train.is_empty() {
        return Err(TuneError::EmptyTrainingSet);
    }
    validate_grid(eps_grid)?;
    let n = train.len();
    let mut records = Vec::with_capacity(eps_grid.len());
    for &eps in eps_grid {
        let outcomes = evaluate(train, eps)?;
        let errors: Vec<f64> = outcomes.iter().map(|o| o.0).collect();
        let qs: Vec<f64> = outcomes.iter().map(|o| o.1).collect();
        records.push(SweepRecord {
            eps,
            mean_error_m: pairwise_sum(&errors) / n as f64,
            mean_q_m: pairwise_sum(&qs) / n as f64,
            n_instances: n,
        });
    }
    SweepStats::new(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TunedPolicy {
    Fixed { eps_star: f64 },
    Adaptive { q_star_m: f64, eps_grid: Vec<f64> },
}

impl TunedPolicy {
    pub fn mode(&self) -> &'static str {
        match self {
            TunedPolicy::Fixed { .. } => "fixed",
            TunedPolicy::Adaptive { .. } => "adaptive",
        }
    }
}

pub fn tune_fixed_epsilon(stats: &SweepStats) -> TunedPolicy {
    TunedPolicy::Fixed {
        eps_star: stats.records[stats.best_index()].eps,
    }
}

/// Reads the target spread off the sweep's (mean Q, mean error) curve.
pub trait SpreadSelector {
    fn select(&self, stats: &SweepStats) -> f64;
}

/// Mean `Q` of the record with the smallest mean error.
#[derive(Debug, Clone, Copy, Default)]
pub struct ArgminErrorSpread;

impl SpreadSelector for ArgminErrorSpread {
    fn select(&self, stats: &SweepStats) -> f64 {
        stats.records[stats.best_index()].mean_q_m
    }
}

pub fn tune_target_spread(stats: &SweepStats) -> TunedPolicy {
    tune_target_spread_with(stats, &ArgminErrorSpread)
}

pub fn tune_target_spread_with(stats: &SweepStats, selector: &dyn SpreadSelector) -> TunedPolicy {
    TunedPolicy::Adaptive {
        q_star_m: selector.select(stats).max(0.0),
        eps_grid: stats.eps_grid(),
    }
}

/// Index of the spread closest to `q_star`, first on ties.
pub fn closest_spread(spreads: &[f64], q_star: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, q) in spreads.iter().enumerate() {
        let d = (q - q_star).abs();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

/// Localizes once per grid ε and keeps the outcome whose spread is closest
/// to the policy's target.
pub fn localize_adaptive(
    maps: &[StationMap<'_>],
    report: &MeasurementReport,
    policy: &TunedPolicy,
    domain: &Mask,
) -> Result<LocalizationResult, TuneError> {
    let TunedPolicy::Adaptive {
        q_star_m,
        eps_grid,
    } = policy
    else {
        return Err(TuneError::WrongMode(policy.mode()));
    };
    validate_grid(eps_grid)?;
    let mut outcomes = eps_grid
        .iter()
        .map(|&e| localize_voting(maps, report, &Epsilon::Common(e), domain))
        .collect::<Result<Vec<_>, _>>()?;
    let spreads: Vec<f64> = outcomes.iter().map(|o| o.quality_q).collect();
    let pick = closest_spread(&spreads, *q_star_m).expect("non-empty grid");
    Ok(outcomes.swap_remove(pick))
}

/// Applies either policy.
pub fn localize_with_policy(
    maps: &[StationMap<'_>],
    report: &MeasurementReport,
    policy: &TunedPolicy,
    domain: &Mask,
) -> Result<LocalizationResult, TuneError> {
    match policy {
        TunedPolicy::Fixed { eps_star } => {
            Ok(localize_voting(maps, report, &Epsilon::Common(*eps_star), domain)?)
        }
        TunedPolicy::Adaptive { .. } => localize_adaptive(maps, report, policy, domain),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridmap::{CityMap, GridSpec, RadioMap};
    use crate::synthgen::{generate_radio_map, sample_report, PropagationParams};

    fn stats(rows: &[(f64, f64, f64)]) -> SweepStats {
        SweepStats::new(
            rows.iter()
                .map(|&(eps, e, q)| SweepRecord {
                    eps,
                    mean_error_m: e,
                    mean_q_m: q,
                    n_instances: 1,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn default_grid_has_five_steps() {
        assert_eq!(DEFAULT_EPS_GRID.len(), 5);
        for (i, e) in DEFAULT_EPS_GRID.iter().enumerate() {
            assert!((e - 0.01 * (i + 1) as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn fixed_argmin() {
        let errs = [9.1, 7.2, 6.8, 7.0, 8.3];
        let rows: Vec<_> = DEFAULT_EPS_GRID
            .iter()
            .zip(errs)
            .map(|(&e, m)| (e, m, 1.0))
            .collect();
        assert_eq!(
            tune_fixed_epsilon(&stats(&rows)),
            TunedPolicy::Fixed { eps_star: 0.03 }
        );
        let flat: Vec<_> = DEFAULT_EPS_GRID.iter().map(|&e| (e, 5.0, 1.0)).collect();
        assert_eq!(
            tune_fixed_epsilon(&stats(&flat)),
            TunedPolicy::Fixed { eps_star: 0.01 }
        );
        assert_eq!(
            tune_fixed_epsilon(&stats(&[(0.07, 3.0, 1.0)])),
            TunedPolicy::Fixed { eps_star: 0.07 }
        );
    }

    #[test]
    fn target_spread_lookup() {
        let s = stats(&[(0.01, 9.0, 1.2), (0.03, 6.8, 3.1), (0.05, 8.1, 6.0)]);
        assert_eq!(
            tune_target_spread(&s),
            TunedPolicy::Adaptive {
                q_star_m: 3.1,
                eps_grid: vec![0.01, 0.03, 0.05]
            }
        );
        let tied = stats(&[(0.01, 4.0, 1.5), (0.02, 4.0, 2.5)]);
        assert!(matches!(
            tune_target_spread(&tied),
            TunedPolicy::Adaptive { q_star_m, .. } if q_star_m == 1.5
        ));
        let one = stats(&[(0.02, 4.0, 2.25)]);
        assert!(matches!(
            tune_target_spread(&one),
            TunedPolicy::Adaptive { q_star_m, .. } if q_star_m == 2.25
        ));
    }

    #[test]
    fn custom_selector() {
        struct Largest;
        impl SpreadSelector for Largest {
            fn select(&self, s: &SweepStats) -> f64 {
                s.records().iter().map(|r| r.mean_q_m).fold(0.0, f64::max)
            }
        }
        let s = stats(&[(0.01, 9.0, 1.2), (0.03, 6.8, 3.1), (0.05, 8.1, 6.0)]);
        assert!(matches!(
            tune_target_spread_with(&s, &Largest),
            TunedPolicy::Adaptive { q_star_m, .. } if q_star_m == 6.0
        ));
    }

    #[test]
    fn closest_spread_rules() {
        assert_eq!(closest_spread(&[1.0, 2.5, 3.2, 5.0, 8.0], 3.0), Some(2));
        assert_eq!(closest_spread(&[1.0, 0.0, 3.0], 0.0), Some(1));
        assert_eq!(closest_spread(&[1.0, 3.0, 5.0], 2.0), Some(0));
        assert_eq!(closest_spread(&[], 2.0), None);
    }

    #[test]
    fn stats_validation() {
        assert!(SweepStats::new(vec![]).is_err());
        let r = |eps| SweepRecord {
            eps,
            mean_error_m: 1.0,
            mean_q_m: 1.0,
            n_instances: 1,
        };
        assert!(SweepStats::new(vec![r(0.02), r(0.01)]).is_err());
        assert!(SweepStats::new(vec![r(0.02), r(0.02)]).is_err());
        let s = SweepStats::new(vec![r(0.01), r(0.02)]).unwrap();
        assert_eq!(
            s.to_csv(),
            "eps,mean_error_m,mean_q_m,n\n0.01,1,1,1\n0.02,1,1,1\n"
        );
    }

    #[test]
    fn policy_json() {
        let p = TunedPolicy::Adaptive {
            q_star_m: 2.0,
            eps_grid: vec![0.01, 0.02],
        };
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"mode":"adaptive","q_star_m":2.0,"eps_grid":[0.01,0.02]}"#);
        assert_eq!(serde_json::from_str::<TunedPolicy>(&s).unwrap(), p);
        let f: TunedPolicy = serde_json::from_str(r#"{"mode":"fixed","eps_star":0.03}"#).unwrap();
        assert_eq!(f, TunedPolicy::Fixed { eps_star: 0.03 });
    }

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 499_500.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    struct Fixture {
        maps: Vec<RadioMap>,
        domain: Mask,
        ids: Vec<String>,
    }

    fn fixture() -> Fixture {
        let spec = GridSpec::unit(24, 24).unwrap();
        let city = CityMap::empty(spec);
        let p = PropagationParams::default();
        let bss = [(0, 0), (0, 23), (23, 0), (23, 23), (12, 5)];
        Fixture {
            maps: bss
                .iter()
                .map(|&(r, c)| generate_radio_map(&city, Cell::new(r, c), &p).unwrap())
                .collect(),
            domain: Mask::free_space(&city),
            ids: (0..bss.len()).map(|i| format!("bs{i}")).collect(),
        }
    }

    impl Fixture {
        fn instance(&self, ue: Cell) -> TrainingInstance<'_> {
            let city = CityMap::empty(*self.domain.spec());
            let report =
                sample_report(self.ids.iter().cloned().zip(&self.maps), &city, ue, 0.0, 0)
                    .unwrap();
            TrainingInstance {
                scenario_id: format!("{}-{}", ue.row, ue.col),
                maps: self
                    .ids
                    .iter()
                    .zip(&self.maps)
                    .map(|(id, map)| StationMap { id, map })
                    .collect(),
                domain: &self.domain,
                ue,
                report,
            }
        }
    }

    #[test]
    fn noiseless_sweep_contains_truth() {
        let f = fixture();
        let train: Vec<_> = [Cell::new(3, 7), Cell::new(15, 18), Cell::new(20, 4)]
            .iter()
            .map(|&c| f.instance(c))
            .collect();
        let s = sweep_epsilon(&train, &DEFAULT_EPS_GRID).unwrap();
        assert_eq!(s.records().len(), 5);
        for inst in &train {
            for &e in &DEFAULT_EPS_GRID {
                let r = inst.localize(e).unwrap();
                assert!(r.o_set.contains(inst.ue));
                assert_eq!(r.vote_max as usize, 5);
            }
        }
        assert!(s.records()[0].mean_error_m < 2.0);
        assert_eq!(sweep_epsilon(&train, &DEFAULT_EPS_GRID).unwrap(), s);
    }

    #[test]
    fn single_instance_sweep_is_exact() {
        let f = fixture();
        let inst = f.instance(Cell::new(9, 14));
        let s = sweep_epsilon(std::slice::from_ref(&inst), &[0.04]).unwrap();
        let r = inst.localize(0.04).unwrap();
        assert_eq!(s.records()[0].mean_error_m, r.error_m(inst.ue));
        assert_eq!(s.records()[0].mean_q_m, r.quality_q);
    }

    #[test]
    fn sweep_errors() {
        assert!(matches!(
            sweep_epsilon(&[], &DEFAULT_EPS_GRID),
            Err(TuneError::EmptyTrainingSet)
        ));
        let f = fixture();
        let inst = f.instance(Cell::new(9, 14));
        assert!(sweep_epsilon(std::slice::from_ref(&inst), &[]).is_err());
        assert!(sweep_epsilon(std::slice::from_ref(&inst), &[0.02, 0.01]).is_err());
    }

    #[test]
    fn adaptive_picks_closest_outcome() {
        let f = fixture();
        let inst = f.instance(Cell::new(6, 11));
        for q_star in [0.0, 0.7, 1.5, 3.0, 50.0] {
            let policy = TunedPolicy::Adaptive {
                q_star_m: q_star,
                eps_grid: DEFAULT_EPS_GRID.to_vec(),
            };
            let r = localize_adaptive(&inst.maps, &inst.report, &policy, inst.domain).unwrap();
            let eps = r.epsilon_used.common().unwrap();
            assert!(DEFAULT_EPS_GRID.contains(&eps));
            let d = (r.quality_q - q_star).abs();
            for &e in &DEFAULT_EPS_GRID {
                let other = inst.localize(e).unwrap();
                let od = (other.quality_q - q_star).abs();
                assert!(d <= od);
                if od == d {
                    assert!(eps <= e);
                }
            }
        }
        assert!(matches!(
            localize_adaptive(
                &inst.maps,
                &inst.report,
                &TunedPolicy::Fixed { eps_star: 0.01 },
                inst.domain
            ),
            Err(TuneError::WrongMode("fixed"))
        ));
    }

    #[test]
    fn policy_dispatch() {
        let f = fixture();
        let inst = f.instance(Cell::new(6, 11));
        let r = localize_with_policy(
            &inst.maps,
            &inst.report,
            &TunedPolicy::Fixed { eps_star: 0.02 },
            inst.domain,
        )
        .unwrap();
        assert_eq!(r, inst.localize(0.02).unwrap());
    }
}
