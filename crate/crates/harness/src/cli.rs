//! Command-line subcommands: `gen`, `localize`, `tune`, `eval`, `render`.

use crate::config::{Algorithm, ExperimentConfig, ScenarioSource};
use crate::experiment::{manifest_dirs, prepare_scenarios, run_experiment};
use crate::render::{render_result, render_vote_sum, RenderInput};
use crate::HarnessError;
use clap::{Args, Parser, Subcommand, ValueEnum};
use levelvote::gridmap::{
    load_report_file, save_report_file, write_csv, write_pgm, Cell, MeasurementReport, Scenario,
};
use levelvote::locengine::{
    estimates, localize_spm, localize_voting_detailed, vote_map, Epsilon, LocalizationResult, Mask,
    ResultSummary, SpmParams,
};
use levelvote::tuner::{
    localize_with_policy, sweep_epsilon, tune_fixed_epsilon, tune_target_spread, TrainingInstance,
    TunedPolicy,
};
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "levelvote", version, about = "Level-set voting localization on radio maps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scenarios as manifests, PGM rasters and reports.
    Gen(GenArgs),
    /// Localize one report against one scenario.
    Localize(LocalizeArgs),
    /// Tune an ε policy on labeled scenarios.
    Tune(TuneArgs),
    /// Run a train/test experiment and write the report CSV.
    Eval(EvalArgs),
    /// Render the localization figure for one report.
    Render(RenderArgs),
}

/// Long-form overrides for [`ExperimentConfig`] fields.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigOverrides {
    /// JSON experiment config; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n_scenarios: Option<usize>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub bs_counts: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub eps_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub target_rmse: Option<f64>,
    #[arg(long)]
    pub smoothness: Option<f64>,
    #[arg(long)]
    pub report_noise_sd: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub algorithms: Option<Vec<Algorithm>>,
    #[arg(long)]
    pub master_seed: Option<u64>,
    #[arg(long)]
    pub ues_per_scenario: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub allow_indoor: bool,
    /// Read scenarios from manifest sub-directories instead of generating.
    #[arg(long)]
    pub manifest_dir: Option<PathBuf>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub cell_size: Option<f64>,
    #[arg(long)]
    pub n_stations: Option<usize>,
    #[arg(long)]
    pub n_buildings: Option<usize>,
    #[arg(long)]
    pub min_side: Option<usize>,
    #[arg(long)]
    pub max_side: Option<usize>,
    #[arg(long)]
    pub margin: Option<usize>,
    #[arg(long)]
    pub spm_eps0: Option<f64>,
    #[arg(long)]
    pub spm_growth: Option<f64>,
    #[arg(long)]
    pub spm_eps_cap: Option<f64>,
}

impl ConfigOverrides {
    pub fn resolve(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut c = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| HarnessError::io(p, e))?;
                ExperimentConfig::from_json(&text)?
            }
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = &self.$field { $target = v.clone(); })*
            };
        }
        set!(
            n_scenarios => c.n_scenarios,
            train_fraction => c.train_fraction,
            bs_counts => c.bs_counts,
            eps_grid => c.eps_grid,
            target_rmse => c.noise.target_rmse,
            smoothness => c.noise.smoothness,
            report_noise_sd => c.report_noise_sd,
            algorithms => c.algorithms,
            master_seed => c.master_seed,
            ues_per_scenario => c.ues_per_scenario,
            workers => c.workers,
            spm_eps0 => c.spm.eps0,
            spm_growth => c.spm.growth,
            spm_eps_cap => c.spm.eps_cap,
        );
        if self.allow_indoor {
            c.allow_indoor = true;
        }
        if let Some(dir) = &self.manifest_dir {
            c.source = ScenarioSource::Manifests { dir: dir.clone() };
        }
        if let ScenarioSource::Synthetic(s) = &mut c.source {
            set!(
                height => s.height,
                width => s.width,
                cell_size => s.cell_size,
                n_stations => s.n_stations,
                n_buildings => s.city.n_buildings,
                min_side => s.city.min_side,
                max_side => s.city.max_side,
                margin => s.city.margin,
            );
        }
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output directory; one sub-directory per scenario.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigOverrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Voting,
    Spm,
    /// Apply a tuned policy file (`--policy`).
    Policy,
}

#[derive(Debug, Clone, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Report JSON: `{"ue": {...}?, "entries": [{"bs_id", "g" | "p_rx_dbm"+"p_tx_dbm"}]}`.
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, default_value_t = 0.03)]
    pub eps: f64,
    /// Per-station ε in report order; overrides `--eps`.
    #[arg(long, value_delimiter = ',')]
    pub eps_per_bs: Option<Vec<f64>>,
    #[arg(long)]
    pub allow_indoor: bool,
}

impl QueryArgs {
    fn epsilon(&self) -> Epsilon {
        match &self.eps_per_bs {
            Some(v) => Epsilon::PerStation(v.clone()),
            None => Epsilon::Common(self.eps),
        }
    }
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    #[command(flatten)]
    pub query: QueryArgs,
    #[arg(long, value_enum, default_value_t = Method::Voting)]
    pub method: Method,
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[arg(long, default_value_t = SpmParams::default().eps0)]
    pub spm_eps0: f64,
    #[arg(long, default_value_t = SpmParams::default().growth)]
    pub spm_growth: f64,
    #[arg(long, default_value_t = SpmParams::default().eps_cap)]
    pub spm_eps_cap: f64,
    /// Directory for result.json, overlay.png, votes.pgm and o_set.pgm.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Also write votes.csv and o_set.csv.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyMode {
    Fixed,
    Adaptive,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    /// Directory of scenario sub-directories with manifest.json and labeled
    /// report*.json files.
    #[arg(long)]
    pub manifests: PathBuf,
    #[arg(long, value_enum, default_value_t = PolicyMode::Fixed)]
    pub mode: PolicyMode,
    #[arg(long, value_delimiter = ',')]
    pub eps_grid: Option<Vec<f64>>,
    /// Use only the first N stations of every scenario.
    #[arg(long)]
    pub bs_count: Option<usize>,
    #[arg(long)]
    pub allow_indoor: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Write the sweep table (`eps,mean_error_m,mean_q_m,n`).
    #[arg(long)]
    pub sweep_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigOverrides,
    /// Aggregate report CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub instances_out: Option<PathBuf>,
    #[arg(long)]
    pub sweeps_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[command(flatten)]
    pub query: QueryArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub votes_out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Gen(a) => gen(&a),
        Command::Localize(a) => localize(&a).map(|_| ()),
        Command::Tune(a) => tune(&a).map(|_| ()),
        Command::Eval(a) => eval(&a),
        Command::Render(a) => render(&a),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

pub fn gen(args: &GenArgs) -> Result<(), HarnessError> {
    let mut config = args.config.resolve()?;
    let ScenarioSource::Synthetic(source) = &config.source else {
        return Err(HarnessError::Config("gen needs a synthetic source".into()));
    };
    if args.config.bs_counts.is_none() {
        let n = source.n_stations;
        config.bs_counts.retain(|&k| k <= n);
    }
    config.validate()?;
    let scenarios = prepare_scenarios(&config)?;
    for s in &scenarios {
        let dir = args.out.join(&s.id);
        s.scenario.save(&dir)?;
        for (u, (ue, report)) in s.ues.iter().enumerate() {
            let name = if u == 0 {
                "report.json".to_string()
            } else {
                format!("report_{u}.json")
            };
            save_report_file(dir.join(name), report, Some(*ue))?;
        }
    }
    let text = serde_json::to_string_pretty(&config).expect("config serializes");
    write_text(&args.out.join("config.json"), &text)?;
    println!("{} scenarios written to {}", scenarios.len(), args.out.display());
    Ok(())
}

struct Query {
    scenario: Scenario,
    report: MeasurementReport,
    ue: Option<Cell>,
    domain: Mask,
}

fn load_query(q: &QueryArgs) -> Result<Query, HarnessError> {
    let scenario = Scenario::load(&q.manifest)?;
    let (report, ue) = load_report_file(&q.report, &scenario.db_scale)?;
    let domain = Mask::domain(&scenario.city, q.allow_indoor);
    Ok(Query {
        scenario,
        report,
        ue,
        domain,
    })
}

impl Query {
    /// Stations named in the report, in report order.
    fn station_refs(&self) -> Result<Vec<levelvote::StationMap<'_>>, HarnessError> {
        let all = estimates(&self.scenario.stations);
        self.report
            .entries()
            .iter()
            .map(|e| {
                all.iter()
                    .find(|m| m.id == e.bs_id)
                    .copied()
                    .ok_or_else(|| levelvote::locengine::LocError::UnknownStation(e.bs_id.clone()).into())
            })
            .collect()
    }

    fn bs_cells(&self) -> Vec<Cell> {
        self.report
            .entries()
            .iter()
            .filter_map(|e| self.scenario.stations.iter().find(|s| s.id == e.bs_id))
            .map(|s| s.bs())
            .collect()
    }
}

#[derive(Debug, Serialize)]
pub struct LocalizeOutput {
    #[serde(flatten)]
    pub result: ResultSummary,
    pub estimate_m: (f64, f64),
    #[serde(skip_serializing_if = "Option::is_none")]
    pub true_cell: Option<Cell>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_m: Option<f64>,
}

pub fn localize(args: &LocalizeArgs) -> Result<LocalizeOutput, HarnessError> {
    let q = load_query(&args.query)?;
    let maps = q.station_refs()?;
    let (result, votes) = match args.method {
        Method::Voting => localize_voting_detailed(&maps, &q.report, &args.query.epsilon(), &q.domain)?,
        Method::Spm => {
            let params = SpmParams {
                eps0: args.spm_eps0,
                growth: args.spm_growth,
                eps_cap: args.spm_eps_cap,
            };
            let r = localize_spm(&maps, &q.report, &params, &q.domain)?;
            let v = vote_map(&maps, &q.report, &r.epsilon_used, &q.domain)?;
            (r, v)
        }
        Method::Policy => {
            let path = args
                .policy
                .as_ref()
                .ok_or_else(|| HarnessError::Config("--method policy needs --policy".into()))?;
            let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
            let policy: TunedPolicy = serde_json::from_str(&text)
                .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
            let r = localize_with_policy(&maps, &q.report, &policy, &q.domain)?;
            let v = vote_map(&maps, &q.report, &r.epsilon_used, &q.domain)?;
            (r, v)
        }
    };
    fs::create_dir_all(&args.out_dir).map_err(|e| HarnessError::io(&args.out_dir, e))?;
    let output = output_for(&q, &result);
    let json = serde_json::to_string_pretty(&output).expect("result serializes");
    write_text(&args.out_dir.join("result.json"), &json)?;
    let stations = q.bs_cells();
    render_result(
        &RenderInput {
            city: &q.scenario.city,
            stations: &stations,
            votes: Some(&votes),
            result: &result,
            truth: q.ue,
        },
        args.out_dir.join("overlay.png"),
    )?;
    render_vote_sum(&votes, args.out_dir.join("votes.pgm"))?;
    write_pgm(args.out_dir.join("o_set.pgm"), &result.o_set.to_raster())?;
    if args.csv {
        write_csv(args.out_dir.join("votes.csv"), votes.spec(), &votes.to_values())?;
        write_csv(
            args.out_dir.join("o_set.csv"),
            result.o_set.spec(),
            &result.o_set.to_values(),
        )?;
    }
    println!("{json}");
    Ok(output)
}

fn output_for(q: &Query, r: &LocalizationResult) -> LocalizeOutput {
    let cs = q.scenario.spec.cell_size();
    LocalizeOutput {
        result: r.summary(),
        estimate_m: ((r.estimate.row + 0.5) * cs, (r.estimate.col + 0.5) * cs),
        true_cell: q.ue,
        error_m: q.ue.map(|u| r.error_m(u)),
    }
}

fn labeled_reports(dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| HarnessError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("report") && n.ends_with(".json"))
        })
        .collect();
    out.sort();
    Ok(out)
}

pub fn tune(args: &TuneArgs) -> Result<TunedPolicy, HarnessError> {
    let mut loaded = Vec::new();
    for dir in manifest_dirs(&args.manifests)? {
        let scenario = Scenario::load(dir.join("manifest.json"))?;
        let domain = Mask::domain(&scenario.city, args.allow_indoor);
        let mut reports = Vec::new();
        for p in labeled_reports(&dir)? {
            let (report, ue) = load_report_file(&p, &scenario.db_scale)?;
            let ue = ue.ok_or_else(|| {
                HarnessError::Config(format!("{}: training reports need a `ue` cell", p.display()))
            })?;
            reports.push((ue, report));
        }
        let id = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        loaded.push((id, scenario, domain, reports));
    }
    let mut train = Vec::new();
    for (id, scenario, domain, reports) in &loaded {
        let k = args.bs_count.unwrap_or(scenario.stations.len());
        if k == 0 || k > scenario.stations.len() {
            return Err(HarnessError::Config(format!(
                "scenario `{id}` has {} stations, bs_count {k} requested",
                scenario.stations.len()
            )));
        }
        for (ue, report) in reports {
            train.push(TrainingInstance {
                scenario_id: id.clone(),
                maps: estimates(&scenario.stations[..k]),
                domain,
                ue: *ue,
                report: report.prefix(k)?,
            });
        }
    }
    let grid = args
        .eps_grid
        .clone()
        .unwrap_or_else(|| levelvote::tuner::DEFAULT_EPS_GRID.to_vec());
    let stats = sweep_epsilon(&train, &grid)?;
    let policy = match args.mode {
        PolicyMode::Fixed => tune_fixed_epsilon(&stats),
        PolicyMode::Adaptive => tune_target_spread(&stats),
    };
    let text = serde_json::to_string_pretty(&policy).expect("policy serializes");
    write_text(&args.out, &text)?;
    if let Some(p) = &args.sweep_csv {
        write_text(p, &stats.to_csv())?;
    }
    println!("{text}");
    Ok(policy)
}

pub fn eval(args: &EvalArgs) -> Result<(), HarnessError> {
    let config = args.config.resolve()?;
    let report = run_experiment(&config)?;
    report.check_consistency().map_err(HarnessError::Config)?;
    write_text(&args.out, &report.to_csv()?)?;
    if let Some(p) = &args.instances_out {
        write_text(p, &report.instances_csv()?)?;
    }
    if let Some(p) = &args.sweeps_out {
        write_text(p, &report.sweeps_csv())?;
    }
    for a in &report.aggregates {
        println!(
            "{:<9} K={:<3} n={:<4} mean {:>8.3} m  median {:>8.3} m  Q {:>8.3} m",
            a.algorithm.name(),
            a.bs_count,
            a.n,
            a.mean_error_m,
            a.median_error_m,
            a.mean_q_m
        );
    }
    Ok(())
}

pub fn render(args: &RenderArgs) -> Result<(), HarnessError> {
    let q = load_query(&args.query)?;
    let maps = q.station_refs()?;
    let (result, votes) = localize_voting_detailed(&maps, &q.report, &args.query.epsilon(), &q.domain)?;
    let stations = q.bs_cells();
    let summary = render_result(
        &RenderInput {
            city: &q.scenario.city,
            stations: &stations,
            votes: Some(&votes),
            result: &result,
            truth: q.ue,
        },
        &args.out,
    )?;
    if let Some(p) = &args.votes_out {
        render_vote_sum(&votes, p)?;
    }
    println!(
        "{}: {} stations, {} highlighted cells",
        args.out.display(),
        summary.bs_markers,
        summary.highlighted_cells
    );
    Ok(())
}

/// One-line JSON error for scripts.
pub fn error_line(e: &HarnessError) -> String {
    serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } }).to_string()
}
