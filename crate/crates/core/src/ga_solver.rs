//! Steady-state genetic algorithm over (subset, raw allocation) chromosomes.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{penalized_cost, Bounds, ObjectiveParams, Portfolio};
use crate::risk_model::RiskModel;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chromosome {
    pub selection: Vec<usize>,
    pub raw: Vec<f64>,
    pub fitness: Option<f64>,
}

impl Chromosome {
    pub fn new(selection: Vec<usize>, raw: Vec<f64>) -> Self {
        Self {
            selection,
            raw,
            fitness: None,
        }
    }

    pub fn random<R: Rng>(assets: usize, k: usize, rng: &mut R) -> Self {
        let selection = sample(rng, assets, k).into_vec();
        let raw = (0..k).map(|_| rng.random::<f64>()).collect();
        Self::new(selection, raw)
    }

    pub fn k(&self) -> usize {
        self.selection.len()
    }

    /// `(asset, s)` pairs sorted by asset index.
    pub fn genes(&self) -> Vec<(usize, f64)> {
        let mut g: Vec<(usize, f64)> = self.selection.iter().copied().zip(self.raw.iter().copied()).collect();
        g.sort_by_key(|p| p.0);
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrossoverKind {
    Scattered,
    #[default]
    SinglePoint,
    TwoPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionKind {
    Uniform,
    #[default]
    Roulette,
    Tournament,
}

impl FromStr for CrossoverKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scattered" => Ok(Self::Scattered),
            "single-point" => Ok(Self::SinglePoint),
            "two-point" => Ok(Self::TwoPoint),
            other => Err(Error::Config(format!("unknown crossover kind `{other}`"))),
        }
    }
}

impl FromStr for SelectionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "roulette" => Ok(Self::Roulette),
            "tournament" => Ok(Self::Tournament),
            other => Err(Error::Config(format!("unknown selection kind `{other}`"))),
        }
    }
}

impl fmt::Display for CrossoverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Scattered => "scattered",
            Self::SinglePoint => "single-point",
            Self::TwoPoint => "two-point",
        })
    }
}

impl fmt::Display for SelectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Uniform => "uniform",
            Self::Roulette => "roulette",
            Self::Tournament => "tournament",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub population_size: usize,
    pub crossover_fraction: f64,
    pub crossover_kind: CrossoverKind,
    pub selection_kind: SelectionKind,
    pub tournament_size: usize,
    pub penalty_factor: f64,
    pub stall_generations: usize,
    pub function_tolerance: f64,
    pub time_limit_seconds: f64,
    pub max_generations: usize,
    pub mutation_swap_rate: f64,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population_size: 200,
            crossover_fraction: 0.8,
            crossover_kind: CrossoverKind::SinglePoint,
            selection_kind: SelectionKind::Roulette,
            tournament_size: 4,
            penalty_factor: 10.0,
            stall_generations: 50,
            function_tolerance: 1e-6,
            time_limit_seconds: 1000.0,
            max_generations: 500,
            mutation_swap_rate: 0.1,
            seed: 0,
        }
    }
}

/// Keys accepted by [`GaConfig::set`], in output order.
pub const GA_KEYS: [&str; 11] = [
    "population_size",
    "crossover_fraction",
    "crossover_kind",
    "selection_kind",
    "tournament_size",
    "penalty_factor",
    "stall_generations",
    "function_tolerance",
    "time_limit",
    "max_generations",
    "mutation_swap_rate",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size < 2 {
            return Err(Error::Config("population_size must be at least 2".into()));
        }
        for (name, v) in [
            ("crossover_fraction", self.crossover_fraction),
            ("mutation_swap_rate", self.mutation_swap_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.function_tolerance > 0.0) {
            return Err(Error::Config("function_tolerance must be > 0".into()));
        }
        if !(self.time_limit_seconds > 0.0) {
            return Err(Error::Config("time_limit must be > 0".into()));
        }
        if !(self.penalty_factor >= 0.0 && self.penalty_factor.is_finite()) {
            return Err(Error::Config("penalty_factor must be >= 0".into()));
        }
        if self.stall_generations == 0 || self.max_generations == 0 || self.tournament_size == 0 {
            return Err(Error::Config(
                "stall_generations, max_generations and tournament_size must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Children created per generation.
    pub fn children_per_generation(&self) -> usize {
        ((self.crossover_fraction * self.population_size as f64).round() as usize).max(1)
    }

    /// Sets one field by its config key. Returns false for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "population_size" => self.population_size = parse(key, value)?,
            "crossover_fraction" => self.crossover_fraction = parse(key, value)?,
            "crossover_kind" => self.crossover_kind = value.trim().parse()?,
            "selection_kind" => self.selection_kind = value.trim().parse()?,
            "tournament_size" => self.tournament_size = parse(key, value)?,
            "penalty_factor" => self.penalty_factor = parse(key, value)?,
            "stall_generations" => self.stall_generations = parse(key, value)?,
            "function_tolerance" => self.function_tolerance = parse(key, value)?,
            "time_limit" => self.time_limit_seconds = parse(key, value)?,
            "max_generations" => self.max_generations = parse(key, value)?,
            "mutation_swap_rate" => self.mutation_swap_rate = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// `key = value` lines readable by [`GaConfig::set`].
    pub fn to_config_text(&self) -> String {
        let values = [
            self.population_size.to_string(),
            self.crossover_fraction.to_string(),
            self.crossover_kind.to_string(),
            self.selection_kind.to_string(),
            self.tournament_size.to_string(),
            self.penalty_factor.to_string(),
            self.stall_generations.to_string(),
            self.function_tolerance.to_string(),
            self.time_limit_seconds.to_string(),
            self.max_generations.to_string(),
            self.mutation_swap_rate.to_string(),
        ];
        GA_KEYS
            .iter()
            .zip(values)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

pub fn init_population<R: Rng>(assets: usize, k: usize, size: usize, rng: &mut R) -> Result<Vec<Chromosome>> {
    if k == 0 || k > assets {
        return Err(Error::Config(format!("cardinality {k} must lie in 1..={assets}")));
    }
    Ok((0..size).map(|_| Chromosome::random(assets, k, rng)).collect())
}

/// Parent sampler built once per generation from the population's fitness.
#[derive(Debug, Clone)]
pub struct ParentSampler {
    kind: SelectionKind,
    fitness: Vec<f64>,
    cumulative: Vec<f64>,
    tournament_size: usize,
}

/// Linear rank weights: best gets `n`, worst gets 1, ties share the average.
pub fn rank_weights(fitness: &[f64]) -> Vec<f64> {
    let n = fitness.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| fitness[a].total_cmp(&fitness[b]));
    let mut weights = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && fitness[order[end]] == fitness[order[start]] {
            end += 1;
        }
        // ranks start..end map to weights n-start ..= n-end+1
        let avg = (2 * n - start - end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            weights[i] = avg;
        }
        start = end;
    }
    weights
}

impl ParentSampler {
    pub fn new(fitness: &[f64], kind: SelectionKind, tournament_size: usize) -> Result<Self> {
        if fitness.is_empty() {
            return Err(Error::Config("cannot select from an empty population".into()));
        }
        if fitness.iter().any(|f| !f.is_finite()) {
            return Err(Error::DegenerateInput("population fitness must be finite".into()));
        }
        let cumulative = if kind == SelectionKind::Roulette {
            rank_weights(fitness)
                .iter()
                .scan(0.0, |acc, w| {
                    *acc += w;
                    Some(*acc)
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            kind,
            fitness: fitness.to_vec(),
            cumulative,
            tournament_size,
        })
    }

    pub fn pick<R: Rng>(&self, rng: &mut R) -> usize {
        let n = self.fitness.len();
        match self.kind {
            SelectionKind::Uniform => rng.random_range(0..n),
            SelectionKind::Roulette => {
                let total = *self.cumulative.last().expect("nonempty");
                let x = rng.random::<f64>() * total;
                self.cumulative.partition_point(|&c| c <= x).min(n - 1)
            }
            SelectionKind::Tournament => {
                let mut best = rng.random_range(0..n);
                for _ in 1..self.tournament_size {
                    let c = rng.random_range(0..n);
                    if self.fitness[c] < self.fitness[best] {
                        best = c;
                    }
                }
                best
            }
        }
    }
}

/// Roulette-wheel pick over rank weights; returns the chosen index.
pub fn roulette_select<R: Rng>(population: &[Chromosome], rng: &mut R) -> Result<usize> {
    let fitness: Vec<f64> = population
        .iter()
        .map(|c| c.fitness.unwrap_or(f64::NAN))
        .collect();
    Ok(ParentSampler::new(&fitness, SelectionKind::Roulette, 1)?.pick(rng))
}

/// Parent B's genes reordered so assets shared with A sit at A's positions.
fn align_to(a: &Chromosome, b: &Chromosome) -> Vec<(usize, f64)> {
    let k = a.k();
    let mut out: Vec<Option<(usize, f64)>> = vec![None; k];
    let mut rest = Vec::new();
    for (&asset, &s) in b.selection.iter().zip(&b.raw) {
        match a.selection.iter().position(|&x| x == asset) {
            Some(p) => out[p] = Some((asset, s)),
            None => rest.push((asset, s)),
        }
    }
    let mut rest = rest.into_iter();
    out.into_iter()
        .map(|g| g.unwrap_or_else(|| rest.next().expect("equal cardinality")))
        .collect()
}

/// Positions taking parent B's gene for the given operator.
pub fn crossover_mask<R: Rng>(k: usize, kind: CrossoverKind, rng: &mut R) -> Vec<bool> {
    match kind {
        CrossoverKind::Scattered => (0..k).map(|_| rng.random::<bool>()).collect(),
        CrossoverKind::SinglePoint => {
            let cut = rng.random_range(0..=k);
            (0..k).map(|i| i >= cut).collect()
        }
        CrossoverKind::TwoPoint => {
            let mut m = rng.random_range(0..=k);
            let mut n = rng.random_range(0..=k);
            if m > n {
                std::mem::swap(&mut m, &mut n);
            }
            (0..k).map(|i| i >= m && i < n).collect()
        }
    }
}

/// Recombination with an explicit mask (`true` = gene from B).
///
/// Shared assets are aligned first, so the child always holds exactly K
/// distinct assets.
pub fn crossover_with_mask(a: &Chromosome, b: &Chromosome, mask: &[bool]) -> Result<Chromosome> {
    if a.k() != b.k() {
        return Err(Error::Dimension {
            context: "crossover parents",
            expected: a.k(),
            got: b.k(),
        });
    }
    if mask.len() != a.k() {
        return Err(Error::Dimension {
            context: "crossover mask",
            expected: a.k(),
            got: mask.len(),
        });
    }
    let aligned = align_to(a, b);
    let (selection, raw) = (0..a.k())
        .map(|i| if mask[i] { aligned[i] } else { (a.selection[i], a.raw[i]) })
        .unzip();
    Ok(Chromosome::new(selection, raw))
}

pub fn crossover<R: Rng>(a: &Chromosome, b: &Chromosome, kind: CrossoverKind, rng: &mut R) -> Result<Chromosome> {
    let mut mask = crossover_mask(a.k(), kind, rng);
    if rng.random::<bool>() {
        mask.iter_mut().for_each(|m| *m = !*m);
    }
    crossover_with_mask(a, b, &mask)
}

/// Adaptive mutation step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSize {
    pub value: f64,
    pub min: f64,
    pub max: f64,
}

impl Default for StepSize {
    fn default() -> Self {
        Self {
            value: 0.1,
            min: 1e-4,
            max: 0.5,
        }
    }
}

impl StepSize {
    pub fn update(&mut self, improved: bool) {
        let next = if improved { self.value * 2.0 } else { self.value / 2.0 };
        self.value = next.clamp(self.min, self.max);
    }
}

/// Moves `raw` along a random unit direction by `step`, clamping to [0, 1];
/// with probability `swap_rate` one member is exchanged for a non-member.
pub fn mutate<R: Rng>(ch: &Chromosome, step: f64, swap_rate: f64, assets: usize, rng: &mut R) -> Chromosome {
    let k = ch.k();
    let dir: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
    let raw = if step == 0.0 || norm == 0.0 {
        ch.raw.clone()
    } else {
        ch.raw
            .iter()
            .zip(&dir)
            .map(|(s, d)| (s + step * d / norm).clamp(0.0, 1.0))
            .collect()
    };
    let mut selection = ch.selection.clone();
    if assets > k && rng.random::<f64>() < swap_rate {
        let slot = rng.random_range(0..k);
        let outside: Vec<usize> = (0..assets).filter(|i| !selection.contains(i)).collect();
        selection[slot] = outside[rng.random_range(0..outside.len())];
    }
    Chromosome::new(selection, raw)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Stall,
    Time,
    GenerationLimit,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Stall => "stall",
            Self::Time => "time",
            Self::GenerationLimit => "generation-limit",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaResult {
    pub best: Portfolio,
    pub best_chromosome: Chromosome,
    pub best_cost: f64,
    pub generations: usize,
    /// Best cost after each generation, initial population first.
    pub cost_history: Vec<f64>,
    pub mean_history: Vec<f64>,
    pub stop_reason: StopReason,
    pub seed: u64,
    pub params: ObjectiveParams,
    pub config: GaConfig,
}

impl GaResult {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("generation,best_cost,mean_cost\n");
        for (g, (b, m)) in self.cost_history.iter().zip(&self.mean_history).enumerate() {
            out.push_str(&format!("{g},{b},{m}\n"));
        }
        out
    }
}

fn stalled(history: &[f64], window: usize, tol: f64) -> bool {
    let g = history.len() - 1;
    g >= window && (history[g - window] - history[g]) / (window as f64) < tol
}

fn best_and_mean(pop: &[Chromosome]) -> (usize, f64) {
    let mut best = 0;
    let mut sum = 0.0;
    for (i, c) in pop.iter().enumerate() {
        let f = c.fitness.expect("evaluated");
        sum += f;
        if f < pop[best].fitness.expect("evaluated") {
            best = i;
        }
    }
    (best, sum / pop.len() as f64)
}

pub fn evolve(model: &RiskModel, params: &ObjectiveParams, bounds: &Bounds, config: &GaConfig) -> Result<GaResult> {
    config.validate()?;
    params.validate()?;
    model.validate()?;
    bounds.validate()?;
    let m = model.len();
    if bounds.assets() != m {
        return Err(Error::Dimension {
            context: "bounds vs risk model",
            expected: m,
            got: bounds.assets(),
        });
    }
    let k = bounds.cardinality;
    let started = Instant::now();
    let limit = Duration::from_secs_f64(config.time_limit_seconds);
    let mut rng = seed::rng(config.seed);
    let cost = |c: &Chromosome| penalized_cost(&c.selection, &c.raw, model, params, bounds, config.penalty_factor);

    let mut pop = init_population(m, k, config.population_size, &mut rng)?;
    pop.par_iter_mut().for_each(|c| c.fitness = Some(cost(c)));

    let (b0, mean0) = best_and_mean(&pop);
    let mut cost_history = vec![pop[b0].fitness.expect("evaluated")];
    let mut mean_history = vec![mean0];
    let mut step = StepSize::default();
    let n_children = config.children_per_generation();

    let stop_reason = loop {
        let generation = cost_history.len() - 1;
        if generation >= config.max_generations {
            break StopReason::GenerationLimit;
        }
        if stalled(&cost_history, config.stall_generations, config.function_tolerance) {
            break StopReason::Stall;
        }
        if started.elapsed() >= limit {
            break StopReason::Time;
        }

        let fitness: Vec<f64> = pop.iter().map(|c| c.fitness.expect("evaluated")).collect();
        let sampler = ParentSampler::new(&fitness, config.selection_kind, config.tournament_size)?;
        let mut children: Vec<Chromosome> = (0..n_children)
            .map(|_| {
                let a = &pop[sampler.pick(&mut rng)];
                let b = &pop[sampler.pick(&mut rng)];
                let child = crossover(a, b, config.crossover_kind, &mut rng)?;
                Ok(mutate(&child, step.value, config.mutation_swap_rate, m, &mut rng))
            })
            .collect::<Result<_>>()?;
        children.par_iter_mut().for_each(|c| c.fitness = Some(cost(c)));

        for child in children {
            let worst = (0..pop.len())
                .max_by(|&i, &j| {
                    pop[i]
                        .fitness
                        .expect("evaluated")
                        .total_cmp(&pop[j].fitness.expect("evaluated"))
                        .then(j.cmp(&i))
                })
                .expect("nonempty");
            if child.fitness.expect("evaluated") < pop[worst].fitness.expect("evaluated") {
                pop[worst] = child;
            }
        }

        let (b, mean) = best_and_mean(&pop);
        let best = pop[b].fitness.expect("evaluated");
        step.update(best < *cost_history.last().expect("nonempty"));
        cost_history.push(best);
        mean_history.push(mean);
    };

    let (b, _) = best_and_mean(&pop);
    let best_chromosome = pop[b].clone();
    let best = Portfolio::decode(&best_chromosome.selection, &best_chromosome.raw, bounds, model)?;
    Ok(GaResult {
        best,
        best_cost: best_chromosome.fitness.expect("evaluated"),
        generations: cost_history.len() - 1,
        cost_history,
        mean_history,
        stop_reason,
        seed: config.seed,
        params: *params,
        config: config.clone(),
        best_chromosome,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::mvs_cost;
    use proptest::prelude::*;

    fn diag_model(var: &[f64], mu: &[f64]) -> RiskModel {
        let m = var.len();
        RiskModel::new(
            (0..m).map(|i| format!("A{i}")).collect(),
            mu.to_vec(),
            (0..m).map(|i| (0..m).map(|j| if i == j { var[i] } else { 0.0 }).collect()).collect(),
            vec![0.0; m],
        )
        .unwrap()
    }

    #[test]
    fn population_shape_and_determinism() {
        let mut r1 = seed::rng(3);
        let mut r2 = seed::rng(3);
        let p1 = init_population(5, 5, 200, &mut r1).unwrap();
        let p2 = init_population(5, 5, 200, &mut r2).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(p1.len(), GaConfig::default().population_size);
        for c in &p1 {
            let mut s = c.selection.clone();
            s.sort();
            assert_eq!(s, vec![0, 1, 2, 3, 4]);
            assert!(c.raw.iter().all(|x| (0.0..=1.0).contains(x)));
        }
        assert!(init_population(4, 5, 10, &mut r1).is_err());
    }

    #[test]
    fn rank_weights_with_ties() {
        assert_eq!(rank_weights(&[0.5, -1.0]), vec![1.0, 2.0]);
        assert_eq!(rank_weights(&[2.0, 2.0, 2.0]), vec![2.0, 2.0, 2.0]);
        assert_eq!(rank_weights(&[1.0, 0.0, 1.0, 3.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn roulette_frequencies() {
        let mut rng = seed::rng(11);
        let single = vec![Chromosome { fitness: Some(4.0), ..Chromosome::new(vec![0], vec![0.5]) }];
        for _ in 0..100 {
            assert_eq!(roulette_select(&single, &mut rng).unwrap(), 0);
        }
        assert!(roulette_select(&[], &mut rng).is_err());

        let sampler = ParentSampler::new(&[-0.3, 0.7], SelectionKind::Roulette, 1).unwrap();
        let n = 100_000;
        let hits = (0..n).filter(|_| sampler.pick(&mut rng) == 0).count();
        assert!((hits as f64 / n as f64 - 2.0 / 3.0).abs() < 0.01);

        let flat = ParentSampler::new(&[1.0; 4], SelectionKind::Roulette, 1).unwrap();
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[flat.pick(&mut rng)] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn tournament_prefers_best() {
        let mut rng = seed::rng(2);
        let s = ParentSampler::new(&[3.0, 1.0, 2.0, 0.0], SelectionKind::Tournament, 4).unwrap();
        let n = 20_000;
        let hits = (0..n).filter(|_| s.pick(&mut rng) == 3).count() as f64 / n as f64;
        // P(index 3 drawn at least once in 4 draws) = 1 - (3/4)^4
        assert!((hits - (1.0 - 0.75f64.powi(4))).abs() < 0.015);
    }

    #[test]
    fn crossover_fixed_point_and_boundaries() {
        let mut rng = seed::rng(5);
        let a = Chromosome::new(vec![4, 1, 7], vec![0.1, 0.2, 0.3]);
        for kind in [CrossoverKind::Scattered, CrossoverKind::SinglePoint, CrossoverKind::TwoPoint] {
            for _ in 0..50 {
                let c = crossover(&a, &a, kind, &mut rng).unwrap();
                assert_eq!(c.genes(), a.genes());
                assert_eq!(c.fitness, None);
            }
        }
        let b = Chromosome::new(vec![2, 4, 9], vec![0.9, 0.8, 0.7]);
        let all_b = crossover_with_mask(&a, &b, &[true; 3]).unwrap();
        assert_eq!(all_b.genes(), b.genes());
        let all_a = crossover_with_mask(&a, &b, &[false; 3]).unwrap();
        assert_eq!(all_a, a.clone());
        let short = Chromosome::new(vec![1], vec![0.5]);
        assert!(crossover(&a, &short, CrossoverKind::TwoPoint, &mut rng).is_err());
    }

    #[test]
    fn crossover_inheritance_rates() {
        let mut rng = seed::rng(8);
        let a = Chromosome::new(vec![0, 1, 2, 3], vec![0.1, 0.2, 0.3, 0.4]);
        let b = Chromosome::new(vec![5, 2, 6, 0], vec![0.9, 0.8, 0.7, 0.6]);
        let trials = 10_000;
        let (mut from_a, mut unique_a) = (0usize, 0usize);
        for _ in 0..trials {
            let c = crossover(&a, &b, CrossoverKind::TwoPoint, &mut rng).unwrap();
            assert_eq!(c.k(), 4);
            let mut sel = c.selection.clone();
            sel.sort();
            sel.dedup();
            assert_eq!(sel.len(), 4);
            let s2 = c.raw[c.selection.iter().position(|&x| x == 2).unwrap()];
            assert!(s2 == 0.3 || s2 == 0.8);
            if s2 == 0.3 {
                from_a += 1;
            }
            if c.selection.contains(&1) {
                unique_a += 1;
            }
        }
        assert!((from_a as f64 / trials as f64 - 0.5).abs() < 0.02);
        assert!((unique_a as f64 / trials as f64 - 0.5).abs() < 0.02);
    }

    #[test]
    fn step_schedule() {
        let mut s = StepSize::default();
        s.update(true);
        assert_eq!(s.value, 0.2);
        s.update(false);
        s.update(false);
        assert_eq!(s.value, 0.05);
        for _ in 0..40 {
            s.update(false);
        }
        assert_eq!(s.value, 1e-4);
        for _ in 0..40 {
            s.update(true);
        }
        assert_eq!(s.value, 0.5);
    }

    #[test]
    fn zero_step_keeps_raw() {
        let mut rng = seed::rng(1);
        let c = Chromosome::new(vec![0, 2], vec![0.25, 0.75]);
        let m = mutate(&c, 0.0, 0.0, 5, &mut rng);
        assert_eq!(m.raw, c.raw);
        assert_eq!(m.selection, c.selection);
    }

    #[test]
    fn inverse_variance_solution() {
        let model = diag_model(&[0.01, 0.04, 0.09], &[0.0; 3]);
        let bounds = Bounds::uniform(3, 0.0, 1.0, 3).unwrap();
        let cfg = GaConfig { seed: 17, ..GaConfig::default() };
        let res = evolve(&model, &ObjectiveParams::new(1.0, 0.0), &bounds, &cfg).unwrap();
        let inv: f64 = [100.0, 25.0, 1.0 / 0.09].iter().sum();
        let optimum = 1.0 / inv;
        assert!(res.best.sigma_p <= optimum * 1.02, "{} vs {optimum}", res.best.sigma_p);
        let expect = [100.0 / inv, 25.0 / inv, (1.0 / 0.09) / inv];
        for (w, e) in res.best.weights.iter().zip(expect) {
            assert!((w - e).abs() < 0.05, "{:?}", res.best.weights);
        }
    }

    #[test]
    fn return_maximizer_hits_vertex() {
        let mu = [0.01, 0.05, 0.02, 0.04, 0.03, 0.0, 0.015];
        let model = diag_model(&[0.01; 7], &mu);
        let bounds = Bounds::uniform(7, 0.1, 0.3, 5).unwrap();
        let cfg = GaConfig { seed: 4, ..GaConfig::default() };
        let res = evolve(&model, &ObjectiveParams::new(0.0, 0.0), &bounds, &cfg).unwrap();
        // vertex oracle: 0.3 on the two best, 0.1 floors + remaining 0.1 to the third
        let best_vertex = 0.3 * 0.05 + 0.3 * 0.04 + 0.2 * 0.03 + 0.1 * 0.02 + 0.1 * 0.015;
        assert!((res.best.mu_p - best_vertex).abs() < 1e-4, "{} vs {best_vertex}", res.best.mu_p);
        assert!((res.best.weights[1] - 0.3).abs() < 1e-3);
    }

    #[test]
    fn evolve_is_deterministic_and_monotone() {
        let model = diag_model(&[0.02, 0.03, 0.05, 0.01], &[0.01, 0.02, 0.03, 0.0]);
        let bounds = Bounds::uniform(4, 0.05, 0.6, 3).unwrap();
        let cfg = GaConfig { seed: 99, population_size: 40, ..GaConfig::default() };
        let params = ObjectiveParams::new(0.5, 0.0);
        let a = evolve(&model, &params, &bounds, &cfg).unwrap();
        let b = evolve(&model, &params, &bounds, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.cost_history.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(a.best.weights.len(), 4);
        let c = mvs_cost(&a.best.selection, &a.best.weights, &model, &params).unwrap();
        assert_eq!(c, a.best_cost);
        assert!(a.trace_csv().starts_with("generation,best_cost,mean_cost\n0,"));
    }

    #[test]
    fn time_limit_stops() {
        let m = 60;
        let model = diag_model(&vec![0.02; m], &(0..m).map(|i| i as f64 * 1e-4).collect::<Vec<_>>());
        let bounds = Bounds::uniform(m, 0.01, 0.2, 20).unwrap();
        let cfg = GaConfig {
            time_limit_seconds: 0.05,
            max_generations: 1_000_000,
            stall_generations: 1_000_000,
            ..GaConfig::default()
        };
        let res = evolve(&model, &ObjectiveParams::new(0.5, 0.2), &bounds, &cfg).unwrap();
        assert_eq!(res.stop_reason, StopReason::Time);
        let sum: f64 = res.best.weights.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_config_rejected() {
        let model = diag_model(&[0.01; 4], &[0.0; 4]);
        let bounds = Bounds { epsilon: vec![0.3; 4], delta: vec![0.5; 4], cardinality: 4 };
        assert!(matches!(
            evolve(&model, &ObjectiveParams::new(1.0, 0.0), &bounds, &GaConfig::default()),
            Err(Error::Infeasible(_))
        ));
        let ok = Bounds::uniform(4, 0.0, 1.0, 2).unwrap();
        let bad = GaConfig { population_size: 1, ..GaConfig::default() };
        assert!(evolve(&model, &ObjectiveParams::new(1.0, 0.0), &ok, &bad).is_err());
    }

    #[test]
    fn config_text_round_trip() {
        let cfg = GaConfig {
            population_size: 50,
            crossover_kind: CrossoverKind::Scattered,
            selection_kind: SelectionKind::Tournament,
            penalty_factor: 100.0,
            crossover_fraction: 0.9,
            ..GaConfig::default()
        };
        let mut back = GaConfig::default();
        for line in cfg.to_config_text().lines() {
            let (k, v) = line.split_once('=').unwrap();
            assert!(back.set(k.trim(), v).unwrap());
        }
        assert_eq!(back, cfg);
        assert!(!back.set("nope", "1").unwrap());
        assert!(back.set("population_size", "x").is_err());
    }

    proptest! {
        #[test]
        fn mutation_stays_in_unit_box(seed_val in any::<u64>(), step in 0.0f64..0.5) {
            let mut rng = seed::rng(seed_val);
            let c = Chromosome::random(9, 4, &mut rng);
            for _ in 0..50 {
                let m = mutate(&c, step, 0.5, 9, &mut rng);
                prop_assert!(m.raw.iter().all(|x| (0.0..=1.0).contains(x)));
                let mut s = m.selection.clone();
                s.sort();
                s.dedup();
                prop_assert_eq!(s.len(), 4);
                prop_assert!(m.selection.iter().all(|&i| i < 9));
            }
        }

        #[test]
        fn crossover_keeps_distinct_k(seed_val in any::<u64>()) {
            let mut rng = seed::rng(seed_val);
            let a = Chromosome::random(8, 5, &mut rng);
            let b = Chromosome::random(8, 5, &mut rng);
            for kind in [CrossoverKind::Scattered, CrossoverKind::SinglePoint, CrossoverKind::TwoPoint] {
                let c = crossover(&a, &b, kind, &mut rng).unwrap();
                let mut s = c.selection.clone();
                s.sort();
                s.dedup();
                prop_assert_eq!(s.len(), 5);
                for (asset, v) in c.genes() {
                    let in_a = a.genes().contains(&(asset, v));
                    let in_b = b.genes().contains(&(asset, v));
                    prop_assert!(in_a || in_b);
                }
            }
        }
    }
}
