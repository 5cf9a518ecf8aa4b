//! Localization of a device on a 2D city grid from received-signal-strength
//! reports, by voting over per-station radio-map level-sets.
//!
//! * [`gridmap`]: grids, city and radio maps, dB scaling, PGM/CSV/JSON files
//! * [`synthgen`]: synthetic cities, radio maps, estimator error and reports
//! * [`locengine`]: level-sets, vote map, localization set, centroid and spread
//! * [`tuner`]: ε sweeps and the fixed / adaptive ε policies

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod gridmap;
pub mod locengine;
pub mod synthgen;
pub mod tuner;

pub use gridmap::{Cell, CityMap, DbScale, GridSpec, MeasurementReport, Position, RadioMap};
pub use locengine::{Epsilon, LocalizationResult, Mask, StationMap, VoteGrid};
