//! (λ, θ) sweeps and the efficient frontier.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ga_solver::{evolve, GaConfig, StopReason};
use crate::objective::{Bounds, ObjectiveParams, Portfolio, SkewMode};
use crate::risk_model::RiskModel;
use crate::seed;

pub const DEFAULT_LAMBDAS: [f64; 4] = [1.0, 0.8, 0.2, 0.0];
pub const DEFAULT_THETAS: [f64; 3] = [0.0, 0.2, 0.8];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub lambda: f64,
    pub theta: f64,
    pub portfolio: Portfolio,
    pub mu_p: f64,
    pub sigma_p: f64,
    pub cost: f64,
    pub seed: u64,
    pub stop_reason: StopReason,
    pub generations: usize,
    /// Worst minus best cost across repeats.
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointFailure {
    pub lambda: f64,
    pub theta: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub lambdas: Vec<f64>,
    pub thetas: Vec<f64>,
    pub repeats: usize,
    pub skew_mode: SkewMode,
    pub seed: u64,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            lambdas: DEFAULT_LAMBDAS.to_vec(),
            thetas: DEFAULT_THETAS.to_vec(),
            repeats: 3,
            skew_mode: SkewMode::Weighted,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub assets: Vec<String>,
    pub settings: SweepSettings,
    pub ga_config: GaConfig,
    pub bounds: Bounds,
    /// Successful points in grid order (λ outer, θ inner).
    pub points: Vec<FrontierPoint>,
    pub failures: Vec<PointFailure>,
}

fn run_point(
    model: &RiskModel,
    params: &ObjectiveParams,
    bounds: &Bounds,
    ga: &GaConfig,
    repeats: usize,
    master: u64,
    index: usize,
) -> Result<FrontierPoint> {
    let mut best: Option<(crate::ga_solver::GaResult, u64)> = None;
    let mut worst_cost = f64::NEG_INFINITY;
    for r in 0..repeats {
        let s = seed::derive(master, (index * repeats + r) as u64);
        let res = evolve(model, params, bounds, &GaConfig { seed: s, ..ga.clone() })?;
        worst_cost = worst_cost.max(res.best_cost);
        if best.as_ref().is_none_or(|(b, _)| res.best_cost < b.best_cost) {
            best = Some((res, s));
        }
    }
    let (res, s) = best.expect("repeats >= 1");
    Ok(FrontierPoint {
        lambda: params.lambda,
        theta: params.theta,
        mu_p: res.best.mu_p,
        sigma_p: res.best.sigma_p,
        cost: res.best_cost,
        seed: s,
        stop_reason: res.stop_reason,
        generations: res.generations,
        spread: worst_cost - res.best_cost,
        portfolio: res.best,
    })
}

/// One GA-optimized portfolio per (λ, θ); failing points are recorded, not fatal.
pub fn sweep(model: &RiskModel, bounds: &Bounds, ga: &GaConfig, settings: &SweepSettings) -> Result<Sweep> {
    if settings.lambdas.is_empty() || settings.thetas.is_empty() {
        return Err(Error::Config("lambda and theta grids must be nonempty".into()));
    }
    if settings.repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    model.validate()?;
    bounds.validate()?;
    ga.validate()?;
    let grid: Vec<ObjectiveParams> = settings
        .lambdas
        .iter()
        .flat_map(|&lambda| {
            settings.thetas.iter().map(move |&theta| ObjectiveParams {
                lambda,
                theta,
                skew_mode: settings.skew_mode,
            })
        })
        .collect();
    let outcomes: Vec<Result<FrontierPoint>> = grid
        .par_iter()
        .enumerate()
        .map(|(i, p)| run_point(model, p, bounds, ga, settings.repeats, settings.seed, i))
        .collect();
    let mut points = Vec::new();
    let mut failures = Vec::new();
    for (p, out) in grid.iter().zip(outcomes) {
        match out {
            Ok(pt) => points.push(pt),
            Err(e) => failures.push(PointFailure {
                lambda: p.lambda,
                theta: p.theta,
                message: e.to_string(),
            }),
        }
    }
    Ok(Sweep {
        assets: model.assets.clone(),
        settings: settings.clone(),
        ga_config: ga.clone(),
        bounds: bounds.clone(),
        points,
        failures,
    })
}

/// Indices of non-dominated `(sigma, mu)` pairs, sorted by sigma then index.
pub fn efficient_indices(pairs: &[(f64, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| {
        pairs[a]
            .0
            .total_cmp(&pairs[b].0)
            .then(pairs[b].1.total_cmp(&pairs[a].1))
            .then(a.cmp(&b))
    });
    let mut keep = Vec::new();
    let mut running = f64::NEG_INFINITY;
    let mut i = 0;
    while i < order.len() {
        let sigma = pairs[order[i]].0;
        let top = pairs[order[i]].1;
        let mut j = i;
        while j < order.len() && pairs[order[j]].0 == sigma {
            if pairs[order[j]].1 == top && top > running {
                keep.push(order[j]);
            }
            j += 1;
        }
        running = running.max(top);
        i = j;
    }
    keep
}

/// Non-dominated points, sorted by sigma.
pub fn efficient_filter(points: &[FrontierPoint]) -> Vec<FrontierPoint> {
    let pairs: Vec<(f64, f64)> = points.iter().map(|p| (p.sigma_p, p.mu_p)).collect();
    efficient_indices(&pairs).into_iter().map(|i| points[i].clone()).collect()
}

impl Sweep {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }

    /// Efficient frontier of the θ = 0 points.
    pub fn frontier(&self) -> Vec<FrontierPoint> {
        let base: Vec<FrontierPoint> = self.points.iter().filter(|p| p.theta == 0.0).cloned().collect();
        efficient_filter(&base)
    }

    pub fn table_csv(&self) -> String {
        let mut out = format!("lambda,theta,{},mu_p,sigma_p,cost,stop_reason,seed\n", self.assets.join(","));
        for p in &self.points {
            let w: Vec<String> = p.portfolio.weights.iter().map(|x| x.to_string()).collect();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                p.lambda,
                p.theta,
                w.join(","),
                p.mu_p,
                p.sigma_p,
                p.cost,
                p.stop_reason,
                p.seed
            ));
        }
        out
    }

    pub fn curve_csv(&self) -> String {
        let mut out = String::from("sigma_p,mu_p\n");
        for p in self.frontier() {
            out.push_str(&format!("{},{}\n", p.sigma_p, p.mu_p));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{portfolio_return, portfolio_risk};
    use proptest::prelude::*;

    fn dominates(a: (f64, f64), b: (f64, f64)) -> bool {
        a.0 <= b.0 && a.1 >= b.1 && (a.0 < b.0 || a.1 > b.1)
    }

    fn brute(pairs: &[(f64, f64)]) -> Vec<usize> {
        let mut keep: Vec<usize> = (0..pairs.len())
            .filter(|&i| !pairs.iter().any(|&q| dominates(q, pairs[i])))
            .collect();
        keep.sort_by(|&a, &b| pairs[a].0.total_cmp(&pairs[b].0).then(a.cmp(&b)));
        keep
    }

    fn model() -> RiskModel {
        RiskModel::new(
            (0..5).map(|i| format!("I{i}")).collect(),
            vec![0.004, 0.006, 0.008, 0.003, 0.005],
            vec![
                vec![0.0010, 0.0002, 0.0001, 0.0, 0.0001],
                vec![0.0002, 0.0020, 0.0003, 0.0001, 0.0],
                vec![0.0001, 0.0003, 0.0040, 0.0002, 0.0001],
                vec![0.0, 0.0001, 0.0002, 0.0008, 0.0],
                vec![0.0001, 0.0, 0.0001, 0.0, 0.0015],
            ],
            vec![0.2, -0.1, 0.5, 0.0, 0.3],
        )
        .unwrap()
    }

    #[test]
    fn filter_examples() {
        assert_eq!(efficient_indices(&[(1.0, 1.0)]), vec![0]);
        assert_eq!(efficient_indices(&[(1.0, 1.0), (2.0, 0.5)]), vec![0]);
        assert_eq!(efficient_indices(&[(2.0, 2.0), (1.0, 1.0)]), vec![1, 0]);
        assert_eq!(efficient_indices(&[(1.0, 1.0), (1.0, 1.0), (1.0, 0.5)]), vec![0, 1]);
        assert_eq!(efficient_indices(&[(1.0, 1.0), (2.0, 1.0)]), vec![0]);
        assert!(efficient_indices(&[]).is_empty());
    }

    #[test]
    fn default_sweep_shape_and_extremes() {
        let m = model();
        let bounds = Bounds::uniform(5, 0.0, 1.0, 5).unwrap();
        let ga = GaConfig { population_size: 60, max_generations: 150, ..GaConfig::default() };
        let s = sweep(&m, &bounds, &ga, &SweepSettings { repeats: 1, ..SweepSettings::default() }).unwrap();
        assert_eq!(s.points.len(), 12);
        assert!(s.is_complete());
        for p in &s.points {
            assert_eq!(portfolio_return(&p.portfolio.weights, &m.mu).unwrap(), p.mu_p);
            assert_eq!(portfolio_risk(&p.portfolio.weights, &m.sigma).unwrap(), p.sigma_p);
        }
        let base: Vec<&FrontierPoint> = s.points.iter().filter(|p| p.theta == 0.0).collect();
        let min_sigma = base.iter().map(|p| p.sigma_p).fold(f64::INFINITY, f64::min);
        let max_mu = base.iter().map(|p| p.mu_p).fold(f64::NEG_INFINITY, f64::max);
        let at = |l: f64| base.iter().find(|p| p.lambda == l).unwrap();
        assert!(at(1.0).sigma_p <= min_sigma + 1e-6);
        assert!(at(0.0).mu_p >= max_mu - 1e-6);
        assert_eq!(s.table_csv().lines().count(), 13);
        assert!(s.table_csv().starts_with("lambda,theta,I0,I1,I2,I3,I4,mu_p,sigma_p,cost,stop_reason,seed\n"));
        assert!(s.curve_csv().starts_with("sigma_p,mu_p\n"));
    }

    #[test]
    fn single_point_sweep_and_repeats() {
        let m = model();
        let bounds = Bounds::uniform(5, 0.05, 0.5, 4).unwrap();
        let ga = GaConfig { population_size: 40, max_generations: 60, ..GaConfig::default() };
        let settings = SweepSettings { lambdas: vec![1.0], thetas: vec![0.0], repeats: 3, ..SweepSettings::default() };
        let a = sweep(&m, &bounds, &ga, &settings).unwrap();
        let b = sweep(&m, &bounds, &ga, &settings).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.points.len(), 1);
        assert!(a.points[0].spread >= 0.0);
        assert_eq!(a.frontier().len(), 1);
        assert!(sweep(&m, &bounds, &ga, &SweepSettings { lambdas: vec![], ..settings.clone() }).is_err());
    }

    #[test]
    fn failures_are_recorded() {
        let m = model();
        let bounds = Bounds::uniform(5, 0.0, 1.0, 5).unwrap();
        let ga = GaConfig { population_size: 20, max_generations: 5, ..GaConfig::default() };
        let settings = SweepSettings { lambdas: vec![1.0, 1.5], thetas: vec![0.0], repeats: 1, ..SweepSettings::default() };
        let s = sweep(&m, &bounds, &ga, &settings).unwrap();
        assert_eq!(s.points.len(), 1);
        assert_eq!(s.failures.len(), 1);
        assert_eq!(s.failures[0].lambda, 1.5);
        assert!(!s.is_complete());
    }

    proptest! {
        #[test]
        fn filter_matches_brute_force(pts in prop::collection::vec((0u8..12, 0u8..12), 0..40)) {
            // coarse integer grid forces plenty of ties
            let pairs: Vec<(f64, f64)> = pts.iter().map(|&(a, b)| (a as f64 * 0.1, b as f64 * 0.1)).collect();
            prop_assert_eq!(efficient_indices(&pairs), brute(&pairs));
        }

        #[test]
        fn filter_output_mutually_nondominated(pts in prop::collection::vec((0.0f64..1.0, -1.0f64..1.0), 1..60)) {
            let keep = efficient_indices(&pts);
            for &i in &keep {
                for &j in &keep {
                    prop_assert!(!dominates(pts[i], pts[j]));
                }
            }
            prop_assert!(keep.windows(2).all(|w| pts[w[0]].0 <= pts[w[1]].0));
        }
    }
}
