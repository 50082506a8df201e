//! Staged, on-disk pipeline driven by a flat `key = value` config.
//!
//! Every stage reads the artifacts of earlier stages from the output
//! directory and writes its own; `manifest.json` records, per artifact, the
//! stage, config hash, seed and content digest.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::Weekday;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval_metrics::{ks_normality_test, summarize, summary_csv, KsResult, KsThreshold, MetricReport, MetricSummary, DEFAULT_MAPE_FLOOR};
use crate::frontier::{sweep, FrontierPoint, Sweep, SweepSettings, DEFAULT_LAMBDAS, DEFAULT_THETAS};
use crate::ga_solver::{evolve, GaConfig, GaResult, GA_KEYS};
use crate::market_data::{align_universe, compute_returns, load_prices_file, AssetUniverse};
use crate::objective::{Bounds, ObjectiveParams, SkewMode};
use crate::predictor::{fit_universe, PredictionRecord, PredictorConfig, SplitLabel, TrainedPredictor};
use crate::risk_model::{build_risk_model, min_eigenvalue, MuMode, RiskModel, RiskOptions};
use crate::seed;
use crate::taguchi_tuner::{analyze_means, build_array, FactorGrid, GaStudy, ResponseMode, TuneResult};

pub const UNIVERSE: &str = "universe.json";
pub const RETURNS: &str = "returns.csv";
pub const ALIGNMENT: &str = "alignment_report.txt";
pub const PREDICTORS: &str = "predictors.json";
pub const PREDICTIONS: &str = "predictions.json";
pub const RISK_MODEL: &str = "risk_model.json";
pub const METRICS: &str = "metrics.json";
pub const METRICS_SUMMARY: &str = "metrics_summary.csv";
pub const TUNE_RUNS: &str = "tune_runs.csv";
pub const TUNE_RESPONSE: &str = "tune_response.csv";
pub const TUNE_RESULT: &str = "tune_result.json";
pub const TUNED_GA: &str = "ga_tuned.conf";
pub const PORTFOLIO: &str = "portfolio.json";
pub const GA_TRACE: &str = "ga_trace.csv";
pub const FRONTIER_TABLE: &str = "frontier.csv";
pub const FRONTIER_CURVE: &str = "frontier_curve.csv";
pub const FRONTIER_JSON: &str = "frontier.json";
pub const REPORT: &str = "report.json";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub prices: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub weekday: Weekday,
    pub min_length: Option<usize>,
    pub predictor: PredictorConfig,
    pub risk: RiskOptions,
    pub mape_floor: f64,
    pub ks_alpha: f64,
    pub ks_method: KsThreshold,
    pub epsilon: f64,
    pub delta: f64,
    pub k: usize,
    pub lambda: f64,
    pub theta: f64,
    pub lambdas: Vec<f64>,
    pub thetas: Vec<f64>,
    pub skew_mode: SkewMode,
    pub ga: GaConfig,
    pub use_tuned: bool,
    pub tune_replicates: usize,
    pub tune_lambda: f64,
    pub tune_theta: f64,
    pub tune_response: ResponseMode,
    pub repeats: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            prices: None,
            out: PathBuf::from("out"),
            seed: 0,
            weekday: Weekday::Mon,
            min_length: None,
            predictor: PredictorConfig::default(),
            risk: RiskOptions::default(),
            mape_floor: DEFAULT_MAPE_FLOOR,
            ks_alpha: 0.05,
            ks_method: KsThreshold::default(),
            epsilon: 0.1,
            delta: 0.3,
            k: 5,
            lambda: 0.8,
            theta: 0.2,
            lambdas: DEFAULT_LAMBDAS.to_vec(),
            thetas: DEFAULT_THETAS.to_vec(),
            skew_mode: SkewMode::Weighted,
            ga: GaConfig::default(),
            use_tuned: true,
            tune_replicates: 3,
            tune_lambda: 0.8,
            tune_theta: 0.2,
            tune_response: ResponseMode::Mean,
            repeats: 3,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn weekday_name(d: Weekday) -> &'static str {
    match d {
        Weekday::Mon => "mon",
        Weekday::Tue => "tue",
        Weekday::Wed => "wed",
        Weekday::Thu => "thu",
        Weekday::Fri => "fri",
        Weekday::Sat => "sat",
        Weekday::Sun => "sun",
    }
}

fn mu_mode_name(m: MuMode) -> &'static str {
    match m {
        MuMode::OneStep => "one-step",
        MuMode::MeanOfPredictions => "mean",
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                message: format!("expected `key = value`, found `{line}`"),
            })?;
            cfg.set(key.trim(), value.trim()).map_err(|e| Error::Parse {
                line: n + 1,
                message: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Sets one key; unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let p = &mut self.predictor;
        match key {
            "prices" => self.prices = Some(PathBuf::from(value)),
            "out" => self.out = PathBuf::from(value),
            "seed" => self.seed = parse(key, value)?,
            "weekday" => self.weekday = parse(key, value)?,
            "min_length" => {
                self.min_length = if value == "none" { None } else { Some(parse(key, value)?) }
            }
            "delay" => p.delay = parse(key, value)?,
            "hidden_units" => p.hidden_units = parse(key, value)?,
            "max_epochs" => p.max_epochs = parse(key, value)?,
            "train_frac" => p.train_frac = parse(key, value)?,
            "val_frac" => p.val_frac = parse(key, value)?,
            "test_frac" => p.test_frac = parse(key, value)?,
            "lm_initial_damping" => p.lm_initial_damping = parse(key, value)?,
            "lm_damping_factor" => p.lm_damping_factor = parse(key, value)?,
            "lm_max_damping" => p.lm_max_damping = parse(key, value)?,
            "max_val_fail" => p.max_val_fail = parse(key, value)?,
            "mu_mode" => self.risk.mu_mode = value.parse()?,
            "centered" => self.risk.centered = parse(key, value)?,
            "mape_floor" => self.mape_floor = parse(key, value)?,
            "ks_alpha" => self.ks_alpha = parse(key, value)?,
            "ks_method" => self.ks_method = value.parse()?,
            "epsilon" => self.epsilon = parse(key, value)?,
            "delta" => self.delta = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "theta" => self.theta = parse(key, value)?,
            "lambdas" => self.lambdas = parse_list(key, value)?,
            "thetas" => self.thetas = parse_list(key, value)?,
            "skew_mode" => self.skew_mode = value.parse()?,
            "use_tuned" => self.use_tuned = parse(key, value)?,
            "tune_replicates" => self.tune_replicates = parse(key, value)?,
            "tune_lambda" => self.tune_lambda = parse(key, value)?,
            "tune_theta" => self.tune_theta = parse(key, value)?,
            "tune_response" => self.tune_response = value.parse()?,
            "repeats" => self.repeats = parse(key, value)?,
            _ => {
                if !self.ga.set(key, value)? {
                    return Err(Error::Config(format!("unknown config key `{key}`")));
                }
            }
        }
        Ok(())
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let p = &self.predictor;
        let e: Vec<(&str, String)> = vec![
            ("prices", self.prices.as_ref().map_or(String::new(), |p| p.display().to_string())),
            ("out", self.out.display().to_string()),
            ("seed", self.seed.to_string()),
            ("weekday", weekday_name(self.weekday).to_string()),
            ("min_length", self.min_length.map_or("none".into(), |m| m.to_string())),
            ("delay", p.delay.to_string()),
            ("hidden_units", p.hidden_units.to_string()),
            ("max_epochs", p.max_epochs.to_string()),
            ("train_frac", p.train_frac.to_string()),
            ("val_frac", p.val_frac.to_string()),
            ("test_frac", p.test_frac.to_string()),
            ("lm_initial_damping", p.lm_initial_damping.to_string()),
            ("lm_damping_factor", p.lm_damping_factor.to_string()),
            ("lm_max_damping", p.lm_max_damping.to_string()),
            ("max_val_fail", p.max_val_fail.to_string()),
            ("mu_mode", mu_mode_name(self.risk.mu_mode).to_string()),
            ("centered", self.risk.centered.to_string()),
            ("mape_floor", self.mape_floor.to_string()),
            ("ks_alpha", self.ks_alpha.to_string()),
            (
                "ks_method",
                match self.ks_method {
                    KsThreshold::Lilliefors => "lilliefors",
                    KsThreshold::Asymptotic => "asymptotic",
                }
                .to_string(),
            ),
            ("epsilon", self.epsilon.to_string()),
            ("delta", self.delta.to_string()),
            ("k", self.k.to_string()),
            ("lambda", self.lambda.to_string()),
            ("theta", self.theta.to_string()),
            ("lambdas", join(&self.lambdas)),
            ("thetas", join(&self.thetas)),
            (
                "skew_mode",
                match self.skew_mode {
                    SkewMode::Weighted => "weighted",
                    SkewMode::Literal => "literal",
                }
                .to_string(),
            ),
            ("use_tuned", self.use_tuned.to_string()),
            ("tune_replicates", self.tune_replicates.to_string()),
            ("tune_lambda", self.tune_lambda.to_string()),
            ("tune_theta", self.tune_theta.to_string()),
            (
                "tune_response",
                match self.tune_response {
                    ResponseMode::Mean => "mean",
                    ResponseMode::SignalToNoise => "sn",
                }
                .to_string(),
            ),
            ("repeats", self.repeats.to_string()),
        ];
        let ga_text = self.ga.to_config_text();
        let ga_lines: Vec<(String, String)> = ga_text
            .lines()
            .filter_map(|l| l.split_once(" = "))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        debug_assert_eq!(ga_lines.len(), GA_KEYS.len());
        let mut out: Vec<(String, String)> = e.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        out.extend(ga_lines);
        out
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .filter(|(k, v)| !(k == "prices" && v.is_empty()))
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// SHA-256 over every key except the output directory.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if k != "out" {
                h.update(format!("{k}={v}\n").as_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn validate(&self) -> Result<()> {
        self.predictor.validate()?;
        self.ga.validate()?;
        ObjectiveParams::new(self.lambda, self.theta).validate()?;
        ObjectiveParams::new(self.tune_lambda, self.tune_theta).validate()?;
        if self.lambdas.is_empty() || self.thetas.is_empty() {
            return Err(Error::Config("lambdas and thetas must be nonempty".into()));
        }
        if self.repeats == 0 || self.tune_replicates == 0 {
            return Err(Error::Config("repeats and tune_replicates must be at least 1".into()));
        }
        if !(self.ks_alpha > 0.0 && self.ks_alpha < 1.0) {
            return Err(Error::Config("ks_alpha must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Predict,
    Risk,
    Metrics,
    Tune,
    Optimize,
    Frontier,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Ingest,
        Stage::Predict,
        Stage::Risk,
        Stage::Metrics,
        Stage::Tune,
        Stage::Optimize,
        Stage::Frontier,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Predict => "predict",
            Stage::Risk => "risk",
            Stage::Metrics => "metrics",
            Stage::Tune => "tune",
            Stage::Optimize => "optimize",
            Stage::Frontier => "frontier",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetMetrics {
    pub asset: String,
    pub train: MetricReport,
    pub validation: MetricReport,
    pub test: MetricReport,
    pub all: MetricReport,
    pub ks: Option<KsResult>,
    pub ks_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsArtifact {
    pub assets: Vec<AssetMetrics>,
    /// Cross-asset summary of the test split.
    pub test_summary: Vec<MetricSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioArtifact {
    pub assets: Vec<String>,
    pub weights: BTreeMap<String, f64>,
    pub tuned: bool,
    pub result: GaResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierArtifact {
    pub tuned: bool,
    pub sweep: Sweep,
    pub frontier: Vec<FrontierPoint>,
}

/// Stage seeds are derived from the master seed so stages stay independent.
fn stage_seed(master: u64, stage: Stage) -> u64 {
    seed::derive(master, stage as u64)
}

pub struct Pipeline {
    pub config: RunConfig,
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn out_dir(&self) -> &Path {
        &self.config.out
    }

    fn path(&self, name: &str) -> PathBuf {
        self.config.out.join(name)
    }

    fn require(&self, name: &str, stage: Stage) -> Result<PathBuf> {
        let p = self.path(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(Error::MissingStage {
                stage: stage.name(),
                path: p,
            })
        }
    }

    fn read_text(&self, name: &str, stage: Stage) -> Result<String> {
        let p = self.require(name, stage)?;
        fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
    }

    fn read_json<T: DeserializeOwned>(&self, name: &str, stage: Stage) -> Result<T> {
        Ok(serde_json::from_str(&self.read_text(name, stage)?)?)
    }

    fn write_all(&self, stage: Stage, files: &[(&str, String)]) -> Result<()> {
        let out = &self.config.out;
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let manifest_path = self.path(MANIFEST);
        let mut manifest: BTreeMap<String, ManifestEntry> = if manifest_path.is_file() {
            let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
            serde_json::from_str(&text)?
        } else {
            BTreeMap::new()
        };
        for (name, content) in files {
            let p = self.path(name);
            fs::write(&p, content).map_err(|e| Error::io(&p, e))?;
            manifest.insert(
                name.to_string(),
                ManifestEntry {
                    stage: stage.name().to_string(),
                    config_hash: self.config.hash(),
                    seed: self.config.seed,
                    sha256: hex::encode(Sha256::digest(content.as_bytes())),
                },
            );
        }
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))
    }

    pub fn run(&self, stage: Stage) -> Result<String> {
        match stage {
            Stage::Ingest => self.ingest(),
            Stage::Predict => self.predict(),
            Stage::Risk => self.risk(),
            Stage::Metrics => self.metrics(),
            Stage::Tune => self.tune(),
            Stage::Optimize => self.optimize(),
            Stage::Frontier => self.frontier(),
            Stage::Report => self.report(),
        }
    }

    pub fn ingest(&self) -> Result<String> {
        let prices = self
            .config
            .prices
            .as_ref()
            .ok_or_else(|| Error::Config("no `prices` file configured".into()))?;
        let loaded = load_prices_file(prices, self.config.weekday)?;
        let series = loaded
            .assets
            .iter()
            .map(|a| compute_returns(&a.points))
            .collect::<Result<Vec<_>>>()?;
        let (universe, report) = align_universe(series, self.config.min_length)?;

        let mut csv = format!("date,{}\n", universe.assets.join(","));
        let dates: Vec<_> = universe.series[0].dates().collect();
        for (t, d) in dates.iter().enumerate() {
            let row: Vec<String> = universe.series.iter().map(|s| s.returns[t].to_string()).collect();
            csv.push_str(&format!("{d},{}\n", row.join(",")));
        }
        self.write_all(
            Stage::Ingest,
            &[
                (UNIVERSE, serde_json::to_string_pretty(&universe)? + "\n"),
                (RETURNS, csv),
                (ALIGNMENT, report.to_text()),
            ],
        )?;
        let mut msg = format!(
            "{} assets, {} weeks ({} to {})",
            universe.len(),
            universe.window(),
            report.window_start,
            report.window_end
        );
        if !loaded.excluded.is_empty() || !report.dropped.is_empty() {
            msg.push_str(&format!(
                "; {} excluded, {} dropped as short",
                loaded.excluded.len(),
                report.dropped.len()
            ));
        }
        Ok(msg)
    }

    fn universe(&self) -> Result<AssetUniverse> {
        self.read_json(UNIVERSE, Stage::Ingest)
    }

    pub fn predict(&self) -> Result<String> {
        let universe = self.universe()?;
        let cfg = PredictorConfig {
            seed: stage_seed(self.config.seed, Stage::Predict),
            ..self.config.predictor.clone()
        };
        let series: Vec<(String, Vec<f64>)> = universe
            .series
            .iter()
            .map(|s| (s.asset.clone(), s.returns.clone()))
            .collect();
        let fitted = fit_universe(&series, &cfg)?;
        let (predictors, records): (Vec<TrainedPredictor>, Vec<PredictionRecord>) = fitted.into_iter().unzip();
        self.write_all(
            Stage::Predict,
            &[
                (PREDICTORS, serde_json::to_string_pretty(&predictors)? + "\n"),
                (PREDICTIONS, serde_json::to_string_pretty(&records)? + "\n"),
            ],
        )?;
        let epochs: usize = predictors.iter().map(|p| p.epochs_run).sum();
        Ok(format!(
            "trained {} predictors (delay {}, {} epochs in total), {} predictions each",
            predictors.len(),
            cfg.delay,
            epochs,
            records.first().map_or(0, PredictionRecord::len)
        ))
    }

    fn predictions(&self) -> Result<Vec<PredictionRecord>> {
        self.read_json(PREDICTIONS, Stage::Predict)
    }

    pub fn risk(&self) -> Result<String> {
        let universe = self.universe()?;
        let records = self.predictions()?;
        let returns: Vec<&[f64]> = records
            .iter()
            .map(|r| {
                universe
                    .series
                    .iter()
                    .find(|s| s.asset == r.asset)
                    .map(|s| s.returns.as_slice())
                    .ok_or_else(|| Error::Estimation(format!("asset `{}` missing from universe", r.asset)))
            })
            .collect::<Result<_>>()?;
        let model = build_risk_model(&records, &returns, self.config.risk)?;
        self.write_all(Stage::Risk, &[(RISK_MODEL, model.to_json()? + "\n")])?;
        Ok(format!(
            "risk model for {} assets from {} errors each; min eigenvalue {:.3e}",
            model.len(),
            model.estimation_window,
            min_eigenvalue(&model.sigma)
        ))
    }

    fn risk_model(&self) -> Result<RiskModel> {
        RiskModel::from_json(&self.read_text(RISK_MODEL, Stage::Risk)?)
    }

    pub fn metrics(&self) -> Result<String> {
        let records = self.predictions()?;
        let floor = self.config.mape_floor;
        let mut assets = Vec::with_capacity(records.len());
        for r in &records {
            let split = |label| -> Result<MetricReport> {
                let (real, pred) = r.part(label);
                MetricReport::compute(&real, &pred, floor)
            };
            let (ks, ks_error) = match ks_normality_test(&r.errors, self.config.ks_alpha, self.config.ks_method) {
                Ok(k) => (Some(k), None),
                Err(e) => (None, Some(e.to_string())),
            };
            assets.push(AssetMetrics {
                asset: r.asset.clone(),
                train: split(SplitLabel::Train)?,
                validation: split(SplitLabel::Validation)?,
                test: split(SplitLabel::Test)?,
                all: MetricReport::compute(&r.real, &r.predicted, floor)?,
                ks,
                ks_error,
            });
        }
        let tests: Vec<MetricReport> = assets.iter().map(|a| a.test.clone()).collect();
        let test_summary = summarize(&tests);
        let accepted = assets.iter().filter(|a| a.ks.is_some_and(|k| k.accepted)).count();
        let artifact = MetricsArtifact { assets, test_summary };
        self.write_all(
            Stage::Metrics,
            &[
                (METRICS, serde_json::to_string_pretty(&artifact)? + "\n"),
                (METRICS_SUMMARY, summary_csv(&artifact.test_summary)?),
            ],
        )?;
        Ok(format!(
            "metrics for {} assets; normality accepted for {accepted}",
            artifact.assets.len()
        ))
    }

    fn bounds(&self, assets: usize) -> Result<Bounds> {
        Bounds::uniform(assets, self.config.epsilon, self.config.delta, self.config.k)
    }

    /// GA settings after applying any tuned levels.
    pub fn effective_ga(&self) -> Result<(GaConfig, bool)> {
        let mut ga = self.config.ga.clone();
        let tuned = self.path(TUNED_GA);
        if !(self.config.use_tuned && tuned.is_file()) {
            return Ok((ga, false));
        }
        let text = fs::read_to_string(&tuned).map_err(|e| Error::io(&tuned, e))?;
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                ga.set(k.trim(), v.trim())?;
            }
        }
        ga.validate()?;
        Ok((ga, true))
    }

    pub fn tune(&self) -> Result<String> {
        let model = self.risk_model()?;
        let bounds = self.bounds(model.len())?;
        let grid = FactorGrid::default();
        let array = build_array(&grid)?;
        let params = ObjectiveParams {
            lambda: self.config.tune_lambda,
            theta: self.config.tune_theta,
            skew_mode: self.config.skew_mode,
        };
        let study = GaStudy {
            grid: &grid,
            model: &model,
            params,
            bounds: &bounds,
            base: &self.config.ga,
        };
        let runs = study.run(&array, self.config.tune_replicates, stage_seed(self.config.seed, Stage::Tune))?;
        let result: TuneResult = analyze_means(&runs, &grid, self.config.tune_response)?;
        result.apply(&grid, &self.config.ga)?;
        let mut tuned_text = String::new();
        for (name, value) in grid.factors.iter().map(|f| f.name.as_str()).zip(&result.best_values) {
            tuned_text.push_str(&format!("{name} = {value}\n"));
        }
        self.write_all(
            Stage::Tune,
            &[
                (TUNE_RUNS, result.runs_csv()),
                (TUNE_RESPONSE, result.response_csv(&grid)),
                (TUNE_RESULT, serde_json::to_string_pretty(&result)? + "\n"),
                (TUNED_GA, tuned_text),
            ],
        )?;
        let chosen: Vec<String> = result
            .factor_names
            .iter()
            .zip(&result.best_values)
            .map(|(n, v)| format!("{n}={v}"))
            .collect();
        Ok(format!("tuned levels: {}", chosen.join(", ")))
    }

    pub fn optimize(&self) -> Result<String> {
        let model = self.risk_model()?;
        let bounds = self.bounds(model.len())?;
        let (ga, tuned) = self.effective_ga()?;
        let ga = GaConfig {
            seed: stage_seed(self.config.seed, Stage::Optimize),
            ..ga
        };
        let params = ObjectiveParams {
            lambda: self.config.lambda,
            theta: self.config.theta,
            skew_mode: self.config.skew_mode,
        };
        let result = evolve(&model, &params, &bounds, &ga)?;
        let weights: BTreeMap<String, f64> = result
            .best
            .selection
            .iter()
            .map(|&i| (model.assets[i].clone(), result.best.weights[i]))
            .collect();
        let artifact = PortfolioArtifact {
            assets: model.assets.clone(),
            weights,
            tuned,
            result,
        };
        self.write_all(
            Stage::Optimize,
            &[
                (PORTFOLIO, serde_json::to_string_pretty(&artifact)? + "\n"),
                (GA_TRACE, artifact.result.trace_csv()),
            ],
        )?;
        let r = &artifact.result;
        Ok(format!(
            "portfolio of {} assets: mu_p {:.6}, sigma_p {:.6}, cost {:.6} after {} generations ({})",
            r.best.selection.len(),
            r.best.mu_p,
            r.best.sigma_p,
            r.best_cost,
            r.generations,
            r.stop_reason
        ))
    }

    pub fn frontier(&self) -> Result<String> {
        let model = self.risk_model()?;
        let bounds = self.bounds(model.len())?;
        let (ga, tuned) = self.effective_ga()?;
        let settings = SweepSettings {
            lambdas: self.config.lambdas.clone(),
            thetas: self.config.thetas.clone(),
            repeats: self.config.repeats,
            skew_mode: self.config.skew_mode,
            seed: stage_seed(self.config.seed, Stage::Frontier),
        };
        let result = sweep(&model, &bounds, &ga, &settings)?;
        let artifact = FrontierArtifact {
            tuned,
            frontier: result.frontier(),
            sweep: result,
        };
        self.write_all(
            Stage::Frontier,
            &[
                (FRONTIER_TABLE, artifact.sweep.table_csv()),
                (FRONTIER_CURVE, artifact.sweep.curve_csv()),
                (FRONTIER_JSON, serde_json::to_string_pretty(&artifact)? + "\n"),
            ],
        )?;
        let failed = artifact.sweep.failures.len();
        if failed > 0 {
            return Err(Error::PartialFailure {
                failed,
                total: failed + artifact.sweep.points.len(),
            });
        }
        Ok(format!(
            "{} sweep points, {} on the efficient frontier",
            artifact.sweep.points.len(),
            artifact.frontier.len()
        ))
    }

    fn optional<T: DeserializeOwned>(&self, name: &str) -> Result<Option<T>> {
        let p = self.path(name);
        if !p.is_file() {
            return Ok(None);
        }
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        Ok(Some(serde_json::from_str(&text)?))
    }

    /// One JSON document summarizing every artifact present.
    pub fn report(&self) -> Result<String> {
        use serde_json::{json, Value};
        let mut doc: BTreeMap<&str, Value> = BTreeMap::new();
        doc.insert("config_hash", json!(self.config.hash()));
        doc.insert("seed", json!(self.config.seed));
        if let Some(u) = self.optional::<AssetUniverse>(UNIVERSE)? {
            doc.insert("universe", json!({ "assets": u.assets, "weeks": u.window() }));
        }
        if let Some(m) = self.optional::<MetricsArtifact>(METRICS)? {
            let ks_accepted = m.assets.iter().filter(|a| a.ks.is_some_and(|k| k.accepted)).count();
            doc.insert("metrics", json!({ "test_summary": m.test_summary, "ks_accepted": ks_accepted, "assets": m.assets.len() }));
        }
        if let Some(r) = self.optional::<RiskModel>(RISK_MODEL)? {
            doc.insert("risk_model", json!({ "assets": r.assets, "mu": r.mu, "skew": r.skew, "diagonal_shift": r.diagonal_shift }));
        }
        if let Some(t) = self.optional::<TuneResult>(TUNE_RESULT)? {
            let chosen: BTreeMap<&String, &String> = t.factor_names.iter().zip(&t.best_values).collect();
            doc.insert("tune", json!({ "best": chosen, "tied": t.tied }));
        }
        if let Some(p) = self.optional::<PortfolioArtifact>(PORTFOLIO)? {
            doc.insert(
                "portfolio",
                json!({
                    "weights": p.weights,
                    "mu_p": p.result.best.mu_p,
                    "sigma_p": p.result.best.sigma_p,
                    "cost": p.result.best_cost,
                    "lambda": p.result.params.lambda,
                    "theta": p.result.params.theta,
                    "stop_reason": p.result.stop_reason,
                    "tuned": p.tuned,
                }),
            );
        }
        if let Some(f) = self.optional::<FrontierArtifact>(FRONTIER_JSON)? {
            let curve: Vec<[f64; 2]> = f.frontier.iter().map(|p| [p.sigma_p, p.mu_p]).collect();
            doc.insert(
                "frontier",
                json!({ "points": f.sweep.points.len(), "failures": f.sweep.failures, "curve": curve, "tuned": f.tuned }),
            );
        }
        let text = serde_json::to_string_pretty(&doc)? + "\n";
        self.write_all(Stage::Report, &[(REPORT, text.clone())])?;
        Ok(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.set("lambdas", "1, 0.5,0").unwrap();
        cfg.set("crossover_kind", "two-point").unwrap();
        cfg.set("min_length", "100").unwrap();
        cfg.set("prices", "data/p.csv").unwrap();
        cfg.set("mu_mode", "mean").unwrap();
        cfg.set("ks_method", "asymptotic").unwrap();
        cfg.set("skew_mode", "literal").unwrap();
        cfg.set("tune_response", "sn").unwrap();
        let back = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn parse_errors_carry_line() {
        let err = RunConfig::parse("seed = 1\n# note\nbogus = 3\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        assert!(matches!(RunConfig::parse("seed 1"), Err(Error::Parse { line: 1, .. })));
        assert!(RunConfig::parse("k = five").is_err());
    }

    #[test]
    fn hash_ignores_out_dir() {
        let a = RunConfig::default();
        let b = RunConfig { out: "elsewhere".into(), ..RunConfig::default() };
        let c = RunConfig { seed: 1, ..RunConfig::default() };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!("plot".parse::<Stage>().is_err());
    }

    #[test]
    fn missing_prerequisite_names_stage() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig { out: dir.path().to_path_buf(), ..RunConfig::default() };
        let p = Pipeline::new(cfg).unwrap();
        match p.run(Stage::Optimize).unwrap_err() {
            Error::MissingStage { stage, .. } => assert_eq!(stage, "risk"),
            e => panic!("{e}"),
        }
        match p.run(Stage::Risk).unwrap_err() {
            Error::MissingStage { stage, .. } => assert_eq!(stage, "ingest"),
            e => panic!("{e}"),
        }
        assert!(matches!(p.run(Stage::Ingest), Err(Error::Config(_))));
    }
}
