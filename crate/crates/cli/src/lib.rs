//! Experiment configuration, subcommand drivers and artifact writing for
//! the `smoothpwa` binary.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use smoothpwa::dynamics::{one_step_prediction_run, InputPolicy};
use smoothpwa::experiments::{
    adversary_experiment, erm_check, hard_id_experiment, ogd_regret_experiment, regression_run, stable_learner, stable_policy,
    stable_simulation_config, stable_two_mode_system, two_mode_1d, two_mode_learner, two_mode_policy,
};
use smoothpwa::learner::LearnerConfig;
use smoothpwa::metrics::{hash_bytes, RunReport};
use smoothpwa::simulation::simulation_regret;
use smoothpwa::smoothing::{estimate_directional_smoothness, NoiseChannel, SmoothnessCheck};
use smoothpwa::SeededRng;

pub const WORKERS_ENV: &str = "SMOOTHPWA_WORKERS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{0}")]
    Run(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Run(_) | CliError::Io(_) => 1,
        }
    }
}

impl From<smoothpwa::Error> for CliError {
    fn from(e: smoothpwa::Error) -> Self {
        use smoothpwa::Error as E;
        match e {
            E::NonFinite(_) => CliError::Numerical(e.to_string()),
            E::InvalidParameter { .. } | E::DimensionMismatch { .. } | E::LabelOutOfRange { .. } => CliError::Config(e.to_string()),
            _ => CliError::Run(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Regress,
    Dynamics,
    Simulate,
    Adversary,
    HardId,
    VerifySmoothness,
    ErmCheck,
    Ogd,
}

/// Optional overrides of the preset learner schedule and oracle.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleOverrides {
    #[serde(rename = "E")]
    pub epoch_len: Option<usize>,
    pub gamma: Option<f64>,
    pub eta: Option<f64>,
    #[serde(rename = "A")]
    pub cluster_threshold: Option<f64>,
    pub delta_sep: Option<f64>,
    pub restarts: Option<usize>,
}

impl ScheduleOverrides {
    pub fn apply(&self, config: &mut LearnerConfig) {
        let s = &mut config.schedule;
        if let Some(e) = self.epoch_len {
            s.epoch_len = e;
        }
        if let Some(g) = self.gamma {
            s.gamma = g;
        }
        if let Some(e) = self.eta {
            s.eta = e;
        }
        if let Some(a) = self.cluster_threshold {
            s.cluster_threshold = a;
        }
        if let Some(d) = self.delta_sep {
            s.merge_gap = d;
        }
        if let Some(r) = self.restarts {
            config.erm.restarts = r;
        }
    }
}

/// Everything a run needs. Serialized as JSON; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub mode: Mode,
    /// Instance reference: `two-mode-1d` (regression) or `stable-2mode`
    /// (dynamics and simulation). Empty selects the mode's default.
    pub preset: String,
    #[serde(rename = "T")]
    pub horizon: Option<usize>,
    #[serde(rename = "H")]
    pub h: usize,
    pub seeds: Vec<u64>,
    pub schedule: ScheduleOverrides,
    pub output_dir: PathBuf,
    pub learner: String,
    pub n_rollouts: usize,
    pub channel: String,
    pub sigma: f64,
    pub dim: usize,
    pub n_samples: usize,
    pub instances: usize,
    pub max_rows: usize,
    #[serde(rename = "N")]
    pub hard_n: usize,
    pub magnitude: f64,
    pub runs: usize,
    pub k: usize,
    pub max_grid_cells: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Regress,
            preset: String::new(),
            horizon: None,
            h: 10,
            seeds: vec![0],
            schedule: ScheduleOverrides::default(),
            output_dir: PathBuf::from("out"),
            learner: "halving".into(),
            n_rollouts: 64,
            channel: "gaussian".into(),
            sigma: 1.0,
            dim: 1,
            n_samples: 100_000,
            instances: 100,
            max_rows: 12,
            hard_n: 100,
            magnitude: 1.0,
            runs: 200,
            k: 3,
            max_grid_cells: 64,
        }
    }
}

impl ExperimentConfig {
    pub fn horizon(&self) -> usize {
        self.horizon.unwrap_or(match self.mode {
            Mode::Regress | Mode::Dynamics => 20_000,
            Mode::Simulate => 5_000,
            Mode::Adversary => 500,
            Mode::HardId => 50,
            Mode::Ogd => 2_000,
            Mode::VerifySmoothness | Mode::ErmCheck => 0,
        })
    }

    pub fn preset(&self) -> &str {
        if !self.preset.is_empty() {
            return &self.preset;
        }
        match self.mode {
            Mode::Regress => "two-mode-1d",
            Mode::Dynamics | Mode::Simulate => "stable-2mode",
            _ => "",
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        match (self.mode, self.preset()) {
            (Mode::Regress, "two-mode-1d") | (Mode::Dynamics | Mode::Simulate, "stable-2mode") => {}
            (Mode::Regress | Mode::Dynamics | Mode::Simulate, p) => return bad(format!("unknown preset `{p}` for {:?}", self.mode)),
            _ => {}
        }
        if self.seeds.is_empty() {
            return bad("seeds must be non-empty".into());
        }
        if matches!(self.mode, Mode::Regress | Mode::Dynamics | Mode::Simulate | Mode::Adversary | Mode::HardId | Mode::Ogd)
            && self.horizon() == 0
        {
            return bad("T must be >= 1".into());
        }
        if self.mode == Mode::VerifySmoothness && !matches!(self.channel.as_str(), "gaussian" | "ball") {
            return bad(format!("unknown channel `{}` (gaussian or ball)", self.channel));
        }
        if self.mode == Mode::Adversary && smoothpwa::learner::threshold::learner_by_name(&self.learner).is_none() {
            return bad(format!("unknown learner `{}`", self.learner));
        }
        Ok(())
    }

    /// Sets a dotted key (`schedule.eta`, `T`, …) from `value`, parsed as
    /// JSON when possible and as a string otherwise. Unknown keys fail on
    /// re-validation.
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let mut tree = serde_json::to_value(&*self).map_err(|e| CliError::Config(e.to_string()))?;
        let parsed = parse_value(key, value)?;
        let mut slot = &mut tree;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let obj = slot
                .as_object_mut()
                .ok_or_else(|| CliError::Config(format!("`{key}`: `{part}` is not inside an object")))?;
            if i + 1 == parts.len() {
                obj.insert((*part).to_string(), parsed);
                break;
            }
            slot = obj.entry((*part).to_string()).or_insert_with(|| Value::Object(Default::default()));
        }
        *self = serde_json::from_value(tree).map_err(|e| CliError::Config(format!("--set {key}: {e}")))?;
        Ok(())
    }
}

fn parse_value(key: &str, value: &str) -> CliResult<Value> {
    if key == "seeds" {
        return Ok(serde_json::to_value(parse_seeds(value)?).expect("u64 list"));
    }
    Ok(serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string())))
}

/// `a..b` (inclusive), `a,b,c`, or a single seed.
pub fn parse_seeds(text: &str) -> CliResult<Vec<u64>> {
    let num = |s: &str| s.trim().parse::<u64>().map_err(|_| CliError::Config(format!("bad seed `{s}` in `{text}`")));
    if let Some((a, b)) = text.split_once("..") {
        let (a, b) = (num(a)?, num(b)?);
        if b < a {
            return Err(CliError::Config(format!("empty seed range `{text}`")));
        }
        return Ok((a..=b).collect());
    }
    text.split(',').map(num).collect()
}

#[derive(Parser, Debug)]
#[command(name = "smoothpwa", version, about = "Smoothed online learning for piecewise-affine systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Online PWA regression on a preset instance.
    Regress(Common),
    /// One-step prediction on a trajectory of a PWA dynamical system.
    Dynamics(Common),
    /// Episodic simulation regret (empirical squared W2 per episode).
    Simulate(Common),
    /// Deterministic threshold learners on the unsmoothed adversarial stream.
    Adversary(Common),
    /// Random exploration of the hard identification instance.
    HardId(Common),
    /// Empirical directional-smoothness certificate of a noise channel.
    VerifySmoothness(Common),
    /// Heuristic ERM against exhaustive search on small 1-D instances.
    ErmCheck(Common),
    /// Projected OGD regret on a fixed hinge-loss sequence.
    Ogd(Common),
    /// Cartesian grid of `key=v1,v2,…` overrides over a base mode.
    Sweep {
        #[arg(long, value_enum, default_value = "regress")]
        base: Mode,
        /// Grid axis, e.g. `schedule.eta=0.01,0.1`; repeatable.
        #[arg(long = "grid")]
        grid: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `key=value` override, applied after the file and the flags; repeatable.
    #[arg(long = "set")]
    pub set: Vec<String>,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long = "T")]
    pub horizon: Option<usize>,
    #[arg(long = "H")]
    pub h: Option<usize>,
    /// `0..9`, `1,4,7` or `3`.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub learner: Option<String>,
    #[arg(long)]
    pub channel: Option<String>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Print a digest of all results that excludes wall-clock metadata.
    #[arg(long)]
    pub deterministic_hash: bool,
}

impl Common {
    pub fn resolve(&self, mode: Mode) -> CliResult<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
            None => ExperimentConfig::default(),
        };
        cfg.mode = mode;
        if let Some(p) = &self.preset {
            cfg.preset = p.clone();
        }
        if let Some(t) = self.horizon {
            cfg.horizon = Some(t);
        }
        if let Some(h) = self.h {
            cfg.h = h;
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = parse_seeds(s)?;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if let Some(l) = &self.learner {
            cfg.learner = l.clone();
        }
        if let Some(c) = &self.channel {
            cfg.channel = c.clone();
        }
        if let Some(s) = self.sigma {
            cfg.sigma = s;
        }
        if let Some(n) = self.n {
            cfg.n_samples = n;
        }
        if let Some(d) = self.dim {
            cfg.dim = d;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set expects key=value, got `{kv}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One seed's result: a JSON report, an optional per-round CSV series and a
/// flat summary row.
#[derive(Clone, Debug)]
pub struct SeedResult {
    pub seed: u64,
    pub report_json: String,
    pub series_csv: Option<String>,
    pub summary: Vec<(String, String)>,
    pub line: String,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub results: Vec<SeedResult>,
    pub digest: String,
}

fn check_finite(values: &[f64], what: &str) -> CliResult<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CliError::Numerical(format!("NaN or infinity in {what}")))
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.10e}")
}

fn run_report_result(seed: u64, report: &RunReport) -> CliResult<SeedResult> {
    check_finite(&[report.total_regret(), report.prediction_loss, report.noise_energy], "run report")?;
    let json = report.to_json()?;
    let mut csv = Vec::new();
    report.write_series_csv(&mut csv)?;
    let t = report.horizon.max(1) as f64;
    Ok(SeedResult {
        seed,
        line: format!(
            "seed {seed}: T={} regret={:.6} regret/T={:.6} mistakes={} epochs={} clip_rate={:.4}",
            report.horizon,
            report.total_regret(),
            report.total_regret() / t,
            report.total_mistakes(),
            report.epochs.len(),
            report.clip_rate
        ),
        summary: vec![
            ("seed".into(), seed.to_string()),
            ("T".into(), report.horizon.to_string()),
            ("regret".into(), fmt(report.total_regret())),
            ("regret_per_round".into(), fmt(report.total_regret() / t)),
            ("mistakes".into(), report.total_mistakes().to_string()),
            ("epochs".into(), report.epochs.len().to_string()),
            ("clip_rate".into(), fmt(report.clip_rate)),
            ("hash".into(), hash_bytes(json.as_bytes())),
        ],
        report_json: json,
        series_csv: Some(String::from_utf8(csv).expect("utf-8 csv")),
    })
}

fn json<T: Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string_pretty(value).map_err(|e| CliError::Numerical(e.to_string()))
}

fn run_seed(cfg: &ExperimentConfig, seed: u64) -> CliResult<SeedResult> {
    let t = cfg.horizon();
    match cfg.mode {
        Mode::Regress => {
            let mut learner = two_mode_learner();
            cfg.schedule.apply(&mut learner);
            let report = regression_run(&two_mode_1d(), &two_mode_policy(), t, &learner, seed)?;
            run_report_result(seed, &report)
        }
        Mode::Dynamics => {
            let mut learner = stable_learner(1000);
            cfg.schedule.apply(&mut learner);
            let policy = InputPolicy::UniformBox {
                low: -1.0,
                high: 1.0,
                dim: 1,
            };
            let report = one_step_prediction_run(&stable_two_mode_system(), &policy, nalgebra::DVector::zeros(1), t, &learner, seed)?;
            run_report_result(seed, &report)
        }
        Mode::Simulate => {
            let mut sim = stable_simulation_config(t, cfg.h, cfg.n_rollouts);
            cfg.schedule.apply(&mut sim.learner);
            let report = simulation_regret(&stable_two_mode_system(), &stable_policy(), &sim, seed)?;
            check_finite(&[report.cumulative_assign, report.cumulative_coupled], "simulation report")?;
            let mut csv = Vec::new();
            report.write_csv(&mut csv)?;
            let n = report.episodes.len();
            let tenth = (n / 10).max(1);
            let first = report.median_over(0, tenth, false);
            let last = report.median_over(n - tenth, n, false);
            let body = json(&report)?;
            Ok(SeedResult {
                seed,
                line: format!(
                    "seed {seed}: episodes={n} H={} cumulative_w2={:.6} first_decile_median={first:.6} last_decile_median={last:.6}",
                    cfg.h, report.cumulative_assign
                ),
                summary: vec![
                    ("seed".into(), seed.to_string()),
                    ("episodes".into(), n.to_string()),
                    ("cumulative_w2_assign".into(), fmt(report.cumulative_assign)),
                    ("cumulative_w2_coupled".into(), fmt(report.cumulative_coupled)),
                    ("first_decile_median".into(), fmt(first)),
                    ("last_decile_median".into(), fmt(last)),
                    ("hash".into(), hash_bytes(body.as_bytes())),
                ],
                report_json: body,
                series_csv: Some(String::from_utf8(csv).expect("utf-8 csv")),
            })
        }
        Mode::Adversary => {
            let s = adversary_experiment(&cfg.learner, t, &[seed])?;
            let rate = s.mean_rate;
            check_finite(&[rate], "mistake rate")?;
            let body = json(&s)?;
            Ok(SeedResult {
                seed,
                line: format!("seed {seed}: learner={} T={t} mistake_rate={rate:.4}", cfg.learner),
                summary: vec![
                    ("seed".into(), seed.to_string()),
                    ("learner".into(), cfg.learner.clone()),
                    ("T".into(), t.to_string()),
                    ("mistake_rate".into(), fmt(rate)),
                    ("hash".into(), hash_bytes(body.as_bytes())),
                ],
                report_json: body,
                series_csv: None,
            })
        }
        Mode::HardId => {
            let s = hard_id_experiment(cfg.hard_n, t, cfg.magnitude, cfg.runs, seed)?;
            let body = json(&s)?;
            Ok(SeedResult {
                seed,
                line: format!("seed {seed}: N={} T={t} runs={} failure_rate={:.4}", cfg.hard_n, cfg.runs, s.failure_rate),
                summary: vec![
                    ("seed".into(), seed.to_string()),
                    ("N".into(), cfg.hard_n.to_string()),
                    ("T".into(), t.to_string()),
                    ("failure_rate".into(), fmt(s.failure_rate)),
                    ("hash".into(), hash_bytes(body.as_bytes())),
                ],
                report_json: body,
                series_csv: None,
            })
        }
        Mode::VerifySmoothness => {
            let channel = match cfg.channel.as_str() {
                "gaussian" => NoiseChannel::gaussian(cfg.dim, cfg.sigma)?,
                _ => NoiseChannel::uniform_ball(cfg.dim, cfg.sigma)?,
            };
            let check = SmoothnessCheck {
                n_samples: cfg.n_samples,
                ..SmoothnessCheck::default()
            };
            let z = nalgebra::DVector::zeros(cfg.dim);
            let r = estimate_directional_smoothness(&channel, &z, &check, &mut SeededRng::new(seed, 0))?;
            check_finite(&[r.worst_density], "density estimate")?;
            let body = json(&r)?;
            Ok(SeedResult {
                seed,
                line: format!(
                    "{} seed {seed}: channel={} sigma={} sigma_dir={:.6} worst_density={:.6} bound={:.6} tol={}",
                    if r.pass { "PASS" } else { "FAIL" },
                    cfg.channel,
                    cfg.sigma,
                    r.claimed_sigma_dir,
                    r.worst_density,
                    r.density_bound,
                    r.tolerance
                ),
                summary: vec![
                    ("seed".into(), seed.to_string()),
                    ("channel".into(), cfg.channel.clone()),
                    ("sigma_dir".into(), fmt(r.claimed_sigma_dir)),
                    ("worst_density".into(), fmt(r.worst_density)),
                    ("pass".into(), r.pass.to_string()),
                    ("hash".into(), hash_bytes(body.as_bytes())),
                ],
                report_json: body,
                series_csv: None,
            })
        }
        Mode::ErmCheck => {
            let restarts = cfg.schedule.restarts.unwrap_or(32);
            let s = erm_check(cfg.instances, cfg.max_rows, restarts, seed)?;
            let body = json(&s)?;
            Ok(SeedResult {
                seed,
                line: format!(
                    "seed {seed}: matched {}/{} max_heuristic_advantage={:.3e}",
                    s.matched, s.instances, s.max_heuristic_advantage
                ),
                summary: vec![
                    ("seed".into(), seed.to_string()),
                    ("instances".into(), s.instances.to_string()),
                    ("matched".into(), s.matched.to_string()),
                    ("max_heuristic_advantage".into(), fmt(s.max_heuristic_advantage)),
                    ("hash".into(), hash_bytes(body.as_bytes())),
                ],
                report_json: body,
                series_csv: None,
            })
        }
        Mode::Ogd => {
            let gamma = cfg.schedule.gamma.unwrap_or(0.5);
            let eta = cfg.schedule.eta.unwrap_or(gamma * (4.0 * cfg.k as f64 / t as f64).sqrt());
            let s = ogd_regret_experiment(cfg.k, cfg.dim.max(2), t, gamma, eta, seed)?;
            check_finite(&[s.regret], "OGD regret")?;
            let body = json(&s)?;
            Ok(SeedResult {
                seed,
                line: format!("seed {seed}: K={} T={t} gamma={gamma} eta={eta:.6} regret={:.4} bound={:.4}", cfg.k, s.regret, s.bound),
                summary: vec![
                    ("seed".into(), seed.to_string()),
                    ("gamma".into(), fmt(gamma)),
                    ("eta".into(), fmt(eta)),
                    ("regret".into(), fmt(s.regret)),
                    ("bound".into(), fmt(s.bound)),
                    ("hash".into(), hash_bytes(body.as_bytes())),
                ],
                report_json: body,
                series_csv: None,
            })
        }
    }
}

/// Worker count from the environment (defaults to rayon's choice).
pub fn worker_count() -> CliResult<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .map(Some)
            .ok_or_else(|| CliError::Config(format!("{WORKERS_ENV} must be a positive integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

fn in_pool<T: Send>(f: impl FnOnce() -> T + Send) -> CliResult<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = worker_count()? {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Run(e.to_string()))?;
    Ok(pool.install(f))
}

/// Runs every seed (in the worker pool), keeping seed order.
pub fn execute(cfg: &ExperimentConfig) -> CliResult<RunOutcome> {
    cfg.validate()?;
    let results = in_pool(|| cfg.seeds.par_iter().map(|&s| run_seed(cfg, s)).collect::<Vec<_>>())?
        .into_iter()
        .collect::<CliResult<Vec<_>>>()?;
    let digest = digest(results.iter().map(|r| r.report_json.as_str()));
    Ok(RunOutcome { results, digest })
}

fn digest<'a>(reports: impl Iterator<Item = &'a str>) -> String {
    let joined: Vec<String> = reports.map(|r| hash_bytes(r.as_bytes())).collect();
    hash_bytes(joined.join("\n").as_bytes())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn write_summary(path: &Path, prefix: &[(String, String)], rows: &[Vec<(String, String)>]) -> CliResult<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    if let Some(first) = rows.first() {
        let header: Vec<String> = prefix.iter().chain(first).map(|(k, _)| csv_field(k)).collect();
        writeln!(out, "{}", header.join(","))?;
    }
    for row in rows {
        let vals: Vec<String> = prefix.iter().chain(row).map(|(_, v)| csv_field(v)).collect();
        writeln!(out, "{}", vals.join(","))?;
    }
    out.flush()?;
    Ok(())
}

fn unix_time() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Writes `report_<seed>.json`, `series_<seed>.csv`, `summary.csv`, the
/// resolved `config.json` and a separate `run_meta.json` carrying the
/// wall-clock timestamp.
pub fn write_outputs(cfg: &ExperimentConfig, outcome: &RunOutcome) -> CliResult<()> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    for r in &outcome.results {
        fs::write(dir.join(format!("report_{}.json", r.seed)), &r.report_json)?;
        if let Some(csv) = &r.series_csv {
            fs::write(dir.join(format!("series_{}.csv", r.seed)), csv)?;
        }
    }
    let rows: Vec<Vec<(String, String)>> = outcome.results.iter().map(|r| r.summary.clone()).collect();
    write_summary(&dir.join("summary.csv"), &[], &rows)?;
    fs::write(dir.join("config.json"), json(cfg)?)?;
    let meta = serde_json::json!({ "unix_time": unix_time(), "digest": outcome.digest });
    fs::write(dir.join("run_meta.json"), json(&meta)?)?;
    Ok(())
}

/// A parsed grid axis: dotted key and its values.
#[derive(Clone, Debug, PartialEq)]
pub struct GridAxis {
    pub key: String,
    pub values: Vec<String>,
}

pub fn parse_grid(text: &str) -> CliResult<GridAxis> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--grid expects key=v1,v2,…, got `{text}`")))?;
    let values: Vec<String> = v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    if values.is_empty() {
        return Err(CliError::Config(format!("grid axis `{k}` has no values")));
    }
    Ok(GridAxis {
        key: k.trim().to_string(),
        values,
    })
}

/// Cartesian product of the axes, first axis slowest. An empty grid yields
/// one empty cell (the base configuration).
pub fn grid_cells(axes: &[GridAxis], cap: usize) -> CliResult<Vec<Vec<(String, String)>>> {
    let total = axes.iter().try_fold(1usize, |acc, a| acc.checked_mul(a.values.len()));
    match total {
        Some(n) if n <= cap => {}
        _ => return Err(CliError::Config(format!("grid has more than {cap} cells"))),
    }
    let mut cells = vec![Vec::new()];
    for axis in axes {
        cells = cells
            .into_iter()
            .flat_map(|cell: Vec<(String, String)>| {
                axis.values.iter().map(move |v| {
                    let mut c = cell.clone();
                    c.push((axis.key.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    Ok(cells)
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub cells: Vec<(Vec<(String, String)>, RunOutcome)>,
    pub digest: String,
}

pub fn sweep(base: &ExperimentConfig, axes: &[GridAxis]) -> CliResult<SweepOutcome> {
    let cells = grid_cells(axes, base.max_grid_cells)?;
    let configs = cells
        .iter()
        .map(|cell| {
            let mut cfg = base.clone();
            for (k, v) in cell {
                cfg.set(k, v)?;
            }
            cfg.validate()?;
            Ok(cfg)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut out = Vec::with_capacity(cells.len());
    for (cell, cfg) in cells.into_iter().zip(&configs) {
        out.push((cell, execute(cfg)?));
    }
    let digest = hash_bytes(out.iter().map(|(_, o)| o.digest.as_str()).collect::<Vec<_>>().join("\n").as_bytes());
    Ok(SweepOutcome { cells: out, digest })
}

pub fn write_sweep(base: &ExperimentConfig, outcome: &SweepOutcome) -> CliResult<()> {
    let dir = &base.output_dir;
    fs::create_dir_all(dir)?;
    let mut rows = Vec::new();
    for (i, (cell, run)) in outcome.cells.iter().enumerate() {
        let cell_dir = dir.join(format!("cell_{i}"));
        let mut cfg = base.clone();
        for (k, v) in cell {
            cfg.set(k, v)?;
        }
        cfg.output_dir = cell_dir;
        write_outputs(&cfg, run)?;
        let mut prefix = vec![("cell".to_string(), i.to_string())];
        prefix.extend(cell.iter().cloned());
        for r in &run.results {
            rows.push(prefix.iter().cloned().chain(r.summary.iter().cloned()).collect::<Vec<_>>());
        }
    }
    write_summary(&dir.join("summary.csv"), &[], &rows)?;
    Ok(())
}

/// Parses arguments, runs, writes artifacts, prints per-seed lines and
/// returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let (mode, common, grid) = match cli.command {
        Command::Regress(c) => (Mode::Regress, c, None),
        Command::Dynamics(c) => (Mode::Dynamics, c, None),
        Command::Simulate(c) => (Mode::Simulate, c, None),
        Command::Adversary(c) => (Mode::Adversary, c, None),
        Command::HardId(c) => (Mode::HardId, c, None),
        Command::VerifySmoothness(c) => (Mode::VerifySmoothness, c, None),
        Command::ErmCheck(c) => (Mode::ErmCheck, c, None),
        Command::Ogd(c) => (Mode::Ogd, c, None),
        Command::Sweep { base, grid, common } => (base, common, Some(grid)),
    };
    let cfg = common.resolve(mode)?;
    match grid {
        None => {
            let outcome = execute(&cfg)?;
            for r in &outcome.results {
                println!("{}", r.line);
            }
            if mode == Mode::Adversary {
                let rates: Vec<f64> = outcome
                    .results
                    .iter()
                    .filter_map(|r| serde_json::from_str::<Value>(&r.report_json).ok())
                    .filter_map(|v| v["mean_rate"].as_f64())
                    .collect();
                println!("mean mistake rate over {} seeds: {:.4}", rates.len(), rates.iter().sum::<f64>() / rates.len() as f64);
            }
            write_outputs(&cfg, &outcome)?;
            if common.deterministic_hash {
                println!("deterministic-hash {}", outcome.digest);
            }
        }
        Some(grid) => {
            let axes = grid.iter().map(|g| parse_grid(g)).collect::<CliResult<Vec<_>>>()?;
            let outcome = sweep(&cfg, &axes)?;
            for (cell, run) in &outcome.cells {
                let label: Vec<String> = cell.iter().map(|(k, v)| format!("{k}={v}")).collect();
                for r in &run.results {
                    println!("[{}] {}", label.join(" "), r.line);
                }
            }
            write_sweep(&cfg, &outcome)?;
            if common.deterministic_hash {
                println!("deterministic-hash {}", outcome.digest);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_specs() {
        assert_eq!(parse_seeds("0..9").unwrap().len(), 10);
        assert_eq!(parse_seeds("3").unwrap(), vec![3]);
        assert_eq!(parse_seeds("1,4,7").unwrap(), vec![1, 4, 7]);
        assert!(parse_seeds("5..2").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn set_overrides_and_rejects_unknown_keys() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("T", "123").unwrap();
        cfg.set("schedule.eta", "0.5").unwrap();
        cfg.set("seeds", "0..2").unwrap();
        cfg.set("learner", "ftl").unwrap();
        assert_eq!(cfg.horizon, Some(123));
        assert_eq!(cfg.schedule.eta, Some(0.5));
        assert_eq!(cfg.seeds, vec![0, 1, 2]);
        assert_eq!(cfg.learner, "ftl");
        assert!(matches!(cfg.set("bogus", "1"), Err(CliError::Config(_))));
        assert!(matches!(cfg.set("schedule.bogus", "1"), Err(CliError::Config(_))));
    }

    #[test]
    fn unknown_keys_in_file_are_rejected() {
        let err = serde_json::from_str::<ExperimentConfig>(r#"{"mode":"regress","nope":1}"#);
        assert!(err.is_err());
        let ok: ExperimentConfig = serde_json::from_str(r#"{"mode":"hard-id","T":7}"#).unwrap();
        assert_eq!(ok.horizon(), 7);
    }

    #[test]
    fn grid_cardinality() {
        assert_eq!(grid_cells(&[], 8).unwrap(), vec![Vec::new()]);
        let axes = vec![parse_grid("a=1,2").unwrap(), parse_grid("b=x,y").unwrap()];
        let cells = grid_cells(&axes, 8).unwrap();
        assert_eq!(cells.len(), 4);
        assert_eq!(cells[1], vec![("a".into(), "1".into()), ("b".into(), "y".into())]);
        assert!(grid_cells(&axes, 3).is_err());
        assert!(parse_grid("a=").is_err());
    }

    #[test]
    fn error_exit_codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::from(smoothpwa::Error::NonFinite("y")).exit_code(), 3);
        assert_eq!(CliError::Run("z".into()).exit_code(), 1);
    }

    #[test]
    fn preset_validation() {
        let cfg = ExperimentConfig {
            preset: "nope".into(),
            ..ExperimentConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    }
}
