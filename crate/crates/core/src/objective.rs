//! Weight decoding and the Mean-Variance-Skewness cost.
//!
//! A chromosome holds a subset `Q` of `K` asset indices and one raw number
//! `s_i` per selected asset. Decoding gives every selected asset its lower
//! bound `ε_i` and splits the remaining `1 - Σε` in proportion to `s`; any
//! weight above its upper bound `δ_i` is clipped and the excess is handed to
//! the unclipped assets, again in proportion to `s`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::risk_model::RiskModel;

const SUM_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    /// Per-asset lower weight limit when selected.
    pub epsilon: Vec<f64>,
    /// Per-asset upper weight limit when selected.
    pub delta: Vec<f64>,
    /// Number of assets held.
    pub cardinality: usize,
}

impl Bounds {
    pub fn uniform(assets: usize, epsilon: f64, delta: f64, cardinality: usize) -> Result<Self> {
        let b = Self {
            epsilon: vec![epsilon; assets],
            delta: vec![delta; assets],
            cardinality,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn assets(&self) -> usize {
        self.epsilon.len()
    }

    /// Checks per-asset limits and that at least one selection of size K is feasible.
    pub fn validate(&self) -> Result<()> {
        let m = self.epsilon.len();
        if self.delta.len() != m {
            return Err(Error::Dimension {
                context: "upper bounds",
                expected: m,
                got: self.delta.len(),
            });
        }
        if self.cardinality == 0 || self.cardinality > m {
            return Err(Error::Config(format!(
                "cardinality {} must lie in 1..={m}",
                self.cardinality
            )));
        }
        for (i, (&lo, &hi)) in self.epsilon.iter().zip(&self.delta).enumerate() {
            if !(0.0..1.0).contains(&lo) || !(hi > 0.0 && hi <= 1.0) || lo >= hi {
                return Err(Error::Config(format!(
                    "asset {i}: need 0 <= epsilon < delta <= 1, got [{lo}, {hi}]"
                )));
            }
        }
        let k = self.cardinality;
        let mut lo = self.epsilon.clone();
        lo.sort_by(f64::total_cmp);
        let mut hi = self.delta.clone();
        hi.sort_by(|a, b| b.total_cmp(a));
        let min_eps: f64 = lo[..k].iter().sum();
        let max_delta: f64 = hi[..k].iter().sum();
        if min_eps > 1.0 + SUM_SLACK {
            return Err(Error::Infeasible(format!(
                "any {k} lower bounds sum to at least {min_eps} > 1"
            )));
        }
        if max_delta < 1.0 - SUM_SLACK {
            return Err(Error::Infeasible(format!(
                "any {k} upper bounds sum to at most {max_delta} < 1"
            )));
        }
        Ok(())
    }

    fn selection_sums(&self, selection: &[usize]) -> (f64, f64) {
        selection
            .iter()
            .fold((0.0, 0.0), |(e, d), &i| (e + self.epsilon[i], d + self.delta[i]))
    }

    /// Amount by which the selection's bounds miss the unit budget.
    pub fn violation(&self, selection: &[usize]) -> f64 {
        let (eps, delta) = self.selection_sums(selection);
        (eps - 1.0).max(0.0) + (1.0 - delta).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkewMode {
    /// `Σ_{i∈Q} w_i Skew(i)`
    #[default]
    Weighted,
    /// `Σ_{i∈Q} Skew(i)`, independent of the weights.
    Literal,
}

impl std::str::FromStr for SkewMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weighted" => Ok(SkewMode::Weighted),
            "literal" => Ok(SkewMode::Literal),
            other => Err(Error::Config(format!("unknown skew mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveParams {
    pub lambda: f64,
    pub theta: f64,
    pub skew_mode: SkewMode,
}

impl ObjectiveParams {
    pub fn new(lambda: f64, theta: f64) -> Self {
        Self {
            lambda,
            theta,
            skew_mode: SkewMode::Weighted,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return Err(Error::Config(format!("theta must be >= 0, got {}", self.theta)));
        }
        Ok(())
    }
}

fn check_selection(selection: &[usize], assets: usize) -> Result<()> {
    for (n, &i) in selection.iter().enumerate() {
        if i >= assets {
            return Err(Error::Config(format!("asset index {i} out of range 0..{assets}")));
        }
        if selection[..n].contains(&i) {
            return Err(Error::Config(format!("asset index {i} selected twice")));
        }
    }
    Ok(())
}

/// Weights for the selected assets, aligned with `selection`.
pub fn decode_weights(selection: &[usize], raw: &[f64], bounds: &Bounds) -> Result<Vec<f64>> {
    let k = selection.len();
    if raw.len() != k {
        return Err(Error::Dimension {
            context: "raw allocation",
            expected: k,
            got: raw.len(),
        });
    }
    if k != bounds.cardinality {
        return Err(Error::Dimension {
            context: "selection cardinality",
            expected: bounds.cardinality,
            got: k,
        });
    }
    check_selection(selection, bounds.assets())?;

    let (sum_eps, sum_delta) = bounds.selection_sums(selection);
    if sum_eps > 1.0 + SUM_SLACK {
        return Err(Error::Infeasible(format!("selected lower bounds sum to {sum_eps} > 1")));
    }
    if sum_delta < 1.0 - SUM_SLACK {
        return Err(Error::Infeasible(format!("selected upper bounds sum to {sum_delta} < 1")));
    }

    let mut s: Vec<f64> = raw.iter().map(|&x| if x.is_finite() && x > 0.0 { x } else { 0.0 }).collect();
    let total: f64 = s.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        s.iter_mut().for_each(|x| *x = 1.0);
    }
    let total: f64 = s.iter().sum();

    let lower: Vec<f64> = selection.iter().map(|&i| bounds.epsilon[i]).collect();
    let upper: Vec<f64> = selection.iter().map(|&i| bounds.delta[i]).collect();
    let free = (1.0 - sum_eps).max(0.0);
    let mut w: Vec<f64> = lower.iter().zip(&s).map(|(e, si)| e + si / total * free).collect();

    let mut clipped = vec![false; k];
    for _ in 0..k {
        let mut excess = 0.0;
        for i in 0..k {
            if !clipped[i] && w[i] > upper[i] {
                excess += w[i] - upper[i];
                w[i] = upper[i];
                clipped[i] = true;
            }
        }
        if excess == 0.0 {
            break;
        }
        let open: Vec<usize> = (0..k).filter(|&i| !clipped[i]).collect();
        if open.is_empty() {
            break;
        }
        let share: f64 = open.iter().map(|&i| s[i]).sum();
        for &i in &open {
            let part = if share > 0.0 { s[i] / share } else { 1.0 / open.len() as f64 };
            w[i] += excess * part;
        }
    }
    Ok(w)
}

/// Spreads selection-aligned weights into a length-`assets` vector.
pub fn expand_weights(selection: &[usize], weights: &[f64], assets: usize) -> Vec<f64> {
    let mut full = vec![0.0; assets];
    for (&i, &w) in selection.iter().zip(weights) {
        full[i] = w;
    }
    full
}

pub fn portfolio_return(weights: &[f64], mu: &[f64]) -> Result<f64> {
    if weights.len() != mu.len() {
        return Err(Error::Dimension {
            context: "portfolio return",
            expected: mu.len(),
            got: weights.len(),
        });
    }
    Ok(weights.iter().zip(mu).map(|(w, m)| w * m).sum())
}

/// `Σ_i Σ_j w_i w_j σ_ij` (variance scale).
pub fn portfolio_risk(weights: &[f64], sigma: &[Vec<f64>]) -> Result<f64> {
    let m = weights.len();
    if sigma.len() != m || sigma.iter().any(|row| row.len() != m) {
        return Err(Error::Dimension {
            context: "portfolio risk",
            expected: m,
            got: sigma.len(),
        });
    }
    let mut total = 0.0;
    for (i, row) in sigma.iter().enumerate() {
        if weights[i] == 0.0 {
            continue;
        }
        let inner: f64 = row.iter().zip(weights).map(|(s, w)| s * w).sum();
        total += weights[i] * inner;
    }
    Ok(total)
}

pub fn skew_term(selection: &[usize], weights: &[f64], skew: &[f64], mode: SkewMode) -> f64 {
    match mode {
        SkewMode::Weighted => selection.iter().map(|&i| weights[i] * skew[i]).sum(),
        SkewMode::Literal => selection.iter().map(|&i| skew[i]).sum(),
    }
}

/// `λ·risk − (1−λ)·return − θ·S(Q)` for full-length `weights`.
pub fn mvs_cost(selection: &[usize], weights: &[f64], model: &RiskModel, params: &ObjectiveParams) -> Result<f64> {
    let m = model.len();
    if weights.len() != m {
        return Err(Error::Dimension {
            context: "cost weights",
            expected: m,
            got: weights.len(),
        });
    }
    check_selection(selection, m)?;
    let risk = portfolio_risk(weights, &model.sigma)?;
    let ret = portfolio_return(weights, &model.mu)?;
    let skew = skew_term(selection, weights, &model.skew, params.skew_mode);
    Ok(params.lambda * risk - (1.0 - params.lambda) * ret - params.theta * skew)
}

/// Fitness of any chromosome; never fails for a valid selection.
///
/// Infeasible selections are scored at the bound-proportional projection onto
/// the budget plus `penalty_factor` times the budget violation.
pub fn penalized_cost(
    selection: &[usize],
    raw: &[f64],
    model: &RiskModel,
    params: &ObjectiveParams,
    bounds: &Bounds,
    penalty_factor: f64,
) -> f64 {
    let m = model.len();
    match decode_weights(selection, raw, bounds) {
        Ok(w) => {
            let full = expand_weights(selection, &w, m);
            mvs_cost(selection, &full, model, params).unwrap_or(f64::MAX)
        }
        Err(Error::Infeasible(_)) => {
            let (sum_eps, _) = bounds.selection_sums(selection);
            let projected: Vec<f64> = if sum_eps > 1.0 {
                selection.iter().map(|&i| bounds.epsilon[i] / sum_eps).collect()
            } else {
                let sum_delta: f64 = selection.iter().map(|&i| bounds.delta[i]).sum();
                selection.iter().map(|&i| bounds.delta[i] / sum_delta).collect()
            };
            let full = expand_weights(selection, &projected, m);
            let base = mvs_cost(selection, &full, model, params).unwrap_or(f64::MAX);
            base + penalty_factor * bounds.violation(selection)
        }
        Err(_) => f64::MAX,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Portfolio {
    pub selection: Vec<usize>,
    /// Full-length weight vector, zero outside the selection.
    pub weights: Vec<f64>,
    pub mu_p: f64,
    /// Risk on the variance scale.
    pub sigma_p: f64,
}

impl Portfolio {
    pub fn evaluate(selection: Vec<usize>, weights: Vec<f64>, model: &RiskModel) -> Result<Self> {
        let mu_p = portfolio_return(&weights, &model.mu)?;
        let sigma_p = portfolio_risk(&weights, &model.sigma)?;
        Ok(Self {
            selection,
            weights,
            mu_p,
            sigma_p,
        })
    }

    pub fn decode(selection: &[usize], raw: &[f64], bounds: &Bounds, model: &RiskModel) -> Result<Self> {
        let w = decode_weights(selection, raw, bounds)?;
        Self::evaluate(selection.to_vec(), expand_weights(selection, &w, model.len()), model)
    }
}
