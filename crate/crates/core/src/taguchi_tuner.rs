//! Taguchi L27 design over five three-level GA factors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ga_solver::{evolve, GaConfig};
use crate::objective::{Bounds, ObjectiveParams};
use crate::risk_model::RiskModel;
use crate::seed;

pub const RUNS: usize = 27;
pub const FACTORS: usize = 5;
pub const LEVELS: usize = 3;
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Factor {
    /// A [`GaConfig`] key.
    pub name: String,
    pub levels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorGrid {
    pub factors: Vec<Factor>,
}

impl Default for FactorGrid {
    fn default() -> Self {
        let f = |name: &str, levels: [&str; 3]| Factor {
            name: name.to_string(),
            levels: levels.iter().map(|s| s.to_string()).collect(),
        };
        Self {
            factors: vec![
                f("population_size", ["50", "100", "200"]),
                f("selection_kind", ["uniform", "roulette", "tournament"]),
                f("crossover_fraction", ["0.9", "0.6", "0.8"]),
                f("crossover_kind", ["scattered", "single-point", "two-point"]),
                f("penalty_factor", ["10", "50", "100"]),
            ],
        }
    }
}

impl FactorGrid {
    pub fn validate(&self) -> Result<()> {
        if self.factors.len() != FACTORS {
            return Err(Error::Config(format!(
                "expected {FACTORS} factors, got {}",
                self.factors.len()
            )));
        }
        for f in &self.factors {
            if f.levels.len() != LEVELS {
                return Err(Error::Config(format!(
                    "factor `{}` needs {LEVELS} levels, got {}",
                    f.name,
                    f.levels.len()
                )));
            }
        }
        Ok(())
    }

    /// GA configuration for one row of the array.
    pub fn configure(&self, base: &GaConfig, levels: &[usize]) -> Result<GaConfig> {
        let mut cfg = base.clone();
        for (f, &l) in self.factors.iter().zip(levels) {
            let value = f.levels.get(l).ok_or_else(|| {
                Error::Config(format!("level {l} out of range for `{}`", f.name))
            })?;
            if !cfg.set(&f.name, value)? {
                return Err(Error::Config(format!("`{}` is not a GA setting", f.name)));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Level indices per run (rows) and factor (columns).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrthogonalArray {
    pub rows: Vec<[usize; FACTORS]>,
}

/// First five balanced columns of L27(3^13): A, B, A+B, A+2B, C (mod 3).
pub fn build_array(grid: &FactorGrid) -> Result<OrthogonalArray> {
    grid.validate()?;
    let rows = (0..RUNS)
        .map(|r| {
            let (a, b, c) = (r / 9, (r / 3) % 3, r % 3);
            [a, b, (a + b) % 3, (a + 2 * b) % 3, c]
        })
        .collect();
    Ok(OrthogonalArray { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub row: usize,
    pub levels: [usize; FACTORS],
    pub seeds: Vec<u64>,
    pub costs: Vec<f64>,
}

/// Runs every row `replicates` times; `evaluate(levels, seed)` returns a cost.
pub fn run_experiments<F>(array: &OrthogonalArray, replicates: usize, master_seed: u64, evaluate: F) -> Result<Vec<RunRecord>>
where
    F: Fn(&[usize; FACTORS], u64) -> Result<f64> + Sync,
{
    if replicates == 0 {
        return Err(Error::Config("replicates must be at least 1".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..array.rows.len())
        .flat_map(|r| (0..replicates).map(move |k| (r, k)))
        .collect();
    let costs: Vec<Result<(u64, f64)>> = jobs
        .par_iter()
        .map(|&(r, k)| {
            let s = seed::derive(master_seed, (r * replicates + k) as u64);
            evaluate(&array.rows[r], s)
                .map(|c| (s, c))
                .map_err(|e| Error::Experiment {
                    row: r,
                    source: Box::new(e),
                })
        })
        .collect();
    let mut runs: Vec<RunRecord> = array
        .rows
        .iter()
        .enumerate()
        .map(|(row, &levels)| RunRecord {
            row,
            levels,
            seeds: Vec::with_capacity(replicates),
            costs: Vec::with_capacity(replicates),
        })
        .collect();
    for (&(r, _), res) in jobs.iter().zip(costs) {
        let (s, c) = res?;
        runs[r].seeds.push(s);
        runs[r].costs.push(c);
    }
    Ok(runs)
}

/// GA inputs shared by every row of a tuning study.
pub struct GaStudy<'a> {
    pub grid: &'a FactorGrid,
    pub model: &'a RiskModel,
    pub params: ObjectiveParams,
    pub bounds: &'a Bounds,
    pub base: &'a GaConfig,
}

impl GaStudy<'_> {
    /// Runs the GA for each row at the study's fixed objective parameters.
    pub fn run(&self, array: &OrthogonalArray, replicates: usize, master_seed: u64) -> Result<Vec<RunRecord>> {
        run_experiments(array, replicates, master_seed, |levels, s| {
            let cfg = GaConfig {
                seed: s,
                ..self.grid.configure(self.base, levels)?
            };
            Ok(evolve(self.model, &self.params, self.bounds, &cfg)?.best_cost)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResponseMode {
    /// Mean cost, smaller is better.
    #[default]
    Mean,
    /// `-10 log10(mean cost²)`, larger is better; positive costs only.
    SignalToNoise,
}

impl std::str::FromStr for ResponseMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "sn" | "signal-to-noise" => Ok(Self::SignalToNoise),
            other => Err(Error::Config(format!("unknown response mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub mode: ResponseMode,
    pub factor_names: Vec<String>,
    pub best_levels: Vec<usize>,
    pub best_values: Vec<String>,
    /// `response_table[factor][level]`.
    pub response_table: Vec<Vec<f64>>,
    pub tied: Vec<bool>,
    pub runs: Vec<RunRecord>,
}

pub fn analyze_means(runs: &[RunRecord], grid: &FactorGrid, mode: ResponseMode) -> Result<TuneResult> {
    grid.validate()?;
    let mut sorted = runs.to_vec();
    sorted.sort_by_key(|r| r.row);
    let complete = sorted.len() == RUNS && sorted.iter().enumerate().all(|(i, r)| r.row == i && !r.costs.is_empty());
    if !complete {
        return Err(Error::Config(format!(
            "run table incomplete: need {RUNS} distinct rows with at least one cost"
        )));
    }
    if sorted.iter().flat_map(|r| &r.costs).any(|c| !c.is_finite()) {
        return Err(Error::DegenerateInput("run costs must be finite".into()));
    }
    let response = |r: &RunRecord| -> Result<f64> {
        let n = r.costs.len() as f64;
        match mode {
            ResponseMode::Mean => Ok(r.costs.iter().sum::<f64>() / n),
            ResponseMode::SignalToNoise => {
                if r.costs.iter().any(|&c| c <= 0.0) {
                    return Err(Error::DegenerateInput(
                        "signal-to-noise response needs strictly positive costs".into(),
                    ));
                }
                Ok(-10.0 * (r.costs.iter().map(|c| c * c).sum::<f64>() / n).log10())
            }
        }
    };
    let per_run: Vec<f64> = sorted.iter().map(response).collect::<Result<_>>()?;

    let mut table = vec![vec![0.0; LEVELS]; FACTORS];
    let mut counts = [[0usize; LEVELS]; FACTORS];
    for (r, v) in sorted.iter().zip(&per_run) {
        for f in 0..FACTORS {
            table[f][r.levels[f]] += v;
            counts[f][r.levels[f]] += 1;
        }
    }
    for f in 0..FACTORS {
        for l in 0..LEVELS {
            if counts[f][l] == 0 {
                return Err(Error::Config(format!("factor {f} level {l} never run")));
            }
            table[f][l] /= counts[f][l] as f64;
        }
    }

    let mut best_levels = Vec::with_capacity(FACTORS);
    let mut tied = Vec::with_capacity(FACTORS);
    for row in &table {
        let score = |v: f64| if mode == ResponseMode::Mean { v } else { -v };
        let best = row.iter().map(|&v| score(v)).fold(f64::INFINITY, f64::min);
        let tol = TIE_TOLERANCE * best.abs().max(1.0);
        let winners: Vec<usize> = (0..LEVELS).filter(|&l| score(row[l]) - best <= tol).collect();
        best_levels.push(winners[0]);
        tied.push(winners.len() > 1);
    }
    Ok(TuneResult {
        mode,
        factor_names: grid.factors.iter().map(|f| f.name.clone()).collect(),
        best_values: grid
            .factors
            .iter()
            .zip(&best_levels)
            .map(|(f, &l)| f.levels[l].clone())
            .collect(),
        best_levels,
        response_table: table,
        tied,
        runs: sorted,
    })
}

impl TuneResult {
    /// `base` with the chosen level written into each factor.
    pub fn apply(&self, grid: &FactorGrid, base: &GaConfig) -> Result<GaConfig> {
        grid.configure(base, &self.best_levels)
    }

    pub fn runs_csv(&self) -> String {
        let mut out = format!("row,{},replicate,seed,cost\n", self.factor_names.join(","));
        for r in &self.runs {
            for (k, (s, c)) in r.seeds.iter().zip(&r.costs).enumerate() {
                let levels: Vec<String> = r.levels.iter().map(|l| l.to_string()).collect();
                out.push_str(&format!("{},{},{k},{s},{c}\n", r.row, levels.join(",")));
            }
        }
        out
    }

    pub fn response_csv(&self, grid: &FactorGrid) -> String {
        let mut out = String::from("factor,level,value,response,best\n");
        for (f, row) in self.response_table.iter().enumerate() {
            for (l, v) in row.iter().enumerate() {
                out.push_str(&format!(
                    "{},{l},{},{v},{}\n",
                    self.factor_names[f],
                    grid.factors[f].levels[l],
                    self.best_levels[f] == l
                ));
            }
        }
        out
    }
}
