//! Expected returns, prediction-error covariance and per-asset skewness.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::PredictionRecord;

/// Eigenvalues above this (negative) tolerance count as positive semidefinite.
pub const PSD_TOLERANCE: f64 = -1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MuMode {
    /// Final one-step-ahead prediction.
    #[default]
    OneStep,
    /// Mean of the predictions over the estimation window.
    MeanOfPredictions,
}

impl std::str::FromStr for MuMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one-step" => Ok(MuMode::OneStep),
            "mean" | "mean-of-predictions" => Ok(MuMode::MeanOfPredictions),
            other => Err(Error::Config(format!("unknown mu mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RiskOptions {
    pub mu_mode: MuMode,
    /// Subtract the error means before forming cross products.
    pub centered: bool,
}

/// `(1/(N-1)) Σ a_t b_t`. Raw cross products unless `centered`.
pub fn error_covariance(a: &[f64], b: &[f64], centered: bool) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Estimation(format!(
            "error series lengths differ ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Estimation(format!("covariance needs N >= 2, got {n}")));
    }
    let (ma, mb) = if centered {
        (mean(a), mean(b))
    } else {
        (0.0, 0.0)
    };
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    Ok(sum / (n - 1) as f64)
}

pub fn error_variance(record: &PredictionRecord) -> Result<f64> {
    error_covariance(&record.errors, &record.errors, false)
}

pub fn expected_return(record: &PredictionRecord, mode: MuMode) -> Result<f64> {
    if record.predicted.is_empty() {
        return Err(Error::Estimation(format!("{}: empty prediction record", record.asset)));
    }
    Ok(match mode {
        MuMode::OneStep => *record.predicted.last().expect("nonempty"),
        MuMode::MeanOfPredictions => mean(&record.predicted),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Skewness {
    pub value: f64,
    /// Set when the series has zero variance and the value was forced to 0.
    pub degenerate: bool,
}

/// Sample skewness `g1 = m3 / m2^{3/2}` with population (1/N) central moments.
pub fn asset_skewness(returns: &[f64]) -> Result<Skewness> {
    if returns.len() < 3 {
        return Err(Error::Estimation(format!(
            "skewness needs at least 3 observations, got {}",
            returns.len()
        )));
    }
    let n = returns.len() as f64;
    let m = mean(returns);
    let m2 = returns.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m3 = returns.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
    // relative guard: rounding in the mean leaves tiny m2 for constant series
    let scale = returns.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if m2 <= (f64::EPSILON * scale).powi(2) * n {
        return Ok(Skewness {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Skewness {
        value: m3 / m2.powf(1.5),
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskModel {
    pub assets: Vec<String>,
    pub mu: Vec<f64>,
    /// Row-major, `assets.len()` rows.
    pub sigma: Vec<Vec<f64>>,
    pub skew: Vec<f64>,
    #[serde(default)]
    pub skew_degenerate: Vec<bool>,
    pub estimation_window: usize,
    /// Amount added to the diagonal to restore positive semidefiniteness.
    #[serde(default)]
    pub diagonal_shift: f64,
}

impl RiskModel {
    /// Builds a model from already-estimated inputs and checks its invariants.
    pub fn new(assets: Vec<String>, mu: Vec<f64>, sigma: Vec<Vec<f64>>, skew: Vec<f64>) -> Result<Self> {
        let m = assets.len();
        let model = Self {
            skew_degenerate: vec![false; skew.len()],
            assets,
            mu,
            sigma,
            skew,
            estimation_window: 0,
            diagonal_shift: 0.0,
        };
        model.validate()?;
        debug_assert_eq!(model.len(), m);
        Ok(model)
    }

    pub fn len(&self) -> usize {
        self.assets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assets.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.assets.len();
        if m == 0 {
            return Err(Error::Estimation("risk model has no assets".into()));
        }
        for (context, len) in [
            ("mu vector", self.mu.len()),
            ("skew vector", self.skew.len()),
            ("sigma rows", self.sigma.len()),
        ] {
            if len != m {
                return Err(Error::Dimension {
                    context,
                    expected: m,
                    got: len,
                });
            }
        }
        for row in &self.sigma {
            if row.len() != m {
                return Err(Error::Dimension {
                    context: "sigma row",
                    expected: m,
                    got: row.len(),
                });
            }
        }
        let finite = self.mu.iter().chain(&self.skew).chain(self.sigma.iter().flatten()).all(|x| x.is_finite());
        if !finite {
            return Err(Error::Estimation("risk model contains non-finite values".into()));
        }
        for i in 0..m {
            if self.sigma[i][i] < 0.0 {
                return Err(Error::Estimation(format!("negative variance for {}", self.assets[i])));
            }
            for j in 0..i {
                let (a, b) = (self.sigma[i][j], self.sigma[j][i]);
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::Estimation(format!("sigma is not symmetric at ({i}, {j})")));
                }
            }
        }
        let min_eig = min_eigenvalue(&self.sigma);
        if min_eig < PSD_TOLERANCE {
            return Err(Error::Estimation(format!(
                "sigma is not positive semidefinite (min eigenvalue {min_eig:e})"
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut model: Self = serde_json::from_str(text)?;
        if model.skew_degenerate.len() != model.skew.len() {
            model.skew_degenerate = vec![false; model.skew.len()];
        }
        model.validate()?;
        Ok(model)
    }
}

pub fn min_eigenvalue(sigma: &[Vec<f64>]) -> f64 {
    let m = sigma.len();
    if m == 0 {
        return 0.0;
    }
    let mat = DMatrix::from_fn(m, m, |i, j| sigma[i][j]);
    mat.symmetric_eigenvalues().min()
}

/// Assembles μ, Σ and skewness from per-asset prediction records and the
/// assets' historical returns (`returns[i]` belongs to `records[i]`).
pub fn build_risk_model(records: &[PredictionRecord], returns: &[&[f64]], options: RiskOptions) -> Result<RiskModel> {
    let m = records.len();
    if m == 0 {
        return Err(Error::Estimation("no prediction records".into()));
    }
    if returns.len() != m {
        return Err(Error::Dimension {
            context: "return series per record",
            expected: m,
            got: returns.len(),
        });
    }
    let n = records[0].errors.len();
    if let Some(r) = records.iter().find(|r| r.errors.len() != n) {
        return Err(Error::Estimation(format!(
            "{} has {} errors, expected {n}",
            r.asset,
            r.errors.len()
        )));
    }

    let mu = records
        .iter()
        .map(|r| expected_return(r, options.mu_mode))
        .collect::<Result<Vec<_>>>()?;

    let mut sigma = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in i..m {
            let c = error_covariance(&records[i].errors, &records[j].errors, options.centered)?;
            sigma[i][j] = c;
            sigma[j][i] = c;
        }
    }

    let mut diagonal_shift = 0.0;
    let min_eig = min_eigenvalue(&sigma);
    if min_eig < PSD_TOLERANCE {
        diagonal_shift = -min_eig;
        for (i, row) in sigma.iter_mut().enumerate() {
            row[i] += diagonal_shift;
        }
    }

    let skews = returns.iter().map(|r| asset_skewness(r)).collect::<Result<Vec<_>>>()?;

    let model = RiskModel {
        assets: records.iter().map(|r| r.asset.clone()).collect(),
        mu,
        sigma,
        skew: skews.iter().map(|s| s.value).collect(),
        skew_degenerate: skews.iter().map(|s| s.degenerate).collect(),
        estimation_window: n,
        diagonal_shift,
    };
    model.validate()?;
    Ok(model)
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::SplitLabel;
    use crate::seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn record(asset: &str, real: Vec<f64>, predicted: Vec<f64>) -> PredictionRecord {
        let n = real.len();
        PredictionRecord::from_parts(asset, real, predicted, vec![SplitLabel::Test; n]).unwrap()
    }

    fn from_errors(asset: &str, errors: &[f64]) -> PredictionRecord {
        record(asset, errors.to_vec(), vec![0.0; errors.len()])
    }

    #[test]
    fn covariance_examples() {
        assert_eq!(error_covariance(&[1.0, -1.0], &[1.0, -1.0], false).unwrap(), 2.0);
        assert_eq!(error_covariance(&[1.0, -1.0], &[1.0, 1.0], false).unwrap(), 0.0);
        assert_eq!(error_covariance(&[0.3, -0.7, 0.1], &[0.0; 3], false).unwrap(), 0.0);
        assert!(error_covariance(&[1.0], &[1.0], false).is_err());
        assert!(error_covariance(&[1.0, 2.0], &[1.0], false).is_err());
    }

    #[test]
    fn centered_covariance_subtracts_means() {
        let c = error_covariance(&[1.0, 3.0], &[1.0, 3.0], true).unwrap();
        assert_eq!(c, 2.0);
        assert_eq!(error_covariance(&[1.0, 3.0], &[1.0, 3.0], false).unwrap(), 10.0);
    }

    #[test]
    fn variance_examples() {
        assert_eq!(error_variance(&from_errors("A", &[0.0, 0.0, 0.0])).unwrap(), 0.0);
        let v = error_variance(&from_errors("A", &[0.03, -0.04])).unwrap();
        assert!((v - 0.0025).abs() < 1e-15);
        assert!(error_variance(&from_errors("A", &[0.1])).is_err());
    }

    #[test]
    fn replayed_error_series_keeps_recorded_variance() {
        // a series constructed so that (1/(N-1)) Σ e² = 0.002834
        let n = 180usize;
        let level = (0.002834f64 * (n - 1) as f64 / n as f64).sqrt();
        let errors: Vec<f64> = (0..n).map(|t| if t % 2 == 0 { level } else { -level }).collect();
        let v = error_variance(&from_errors("Bank", &errors)).unwrap();
        assert!((v - 0.002834).abs() < 1e-12);
    }

    #[test]
    fn expected_return_modes() {
        let rec = record("A", vec![0.0, 0.0], vec![0.01, 0.03]);
        assert!((expected_return(&rec, MuMode::MeanOfPredictions).unwrap() - 0.02).abs() < 1e-15);
        assert_eq!(expected_return(&rec, MuMode::OneStep).unwrap(), 0.03);
        let c = record("C", vec![0.004; 5], vec![0.004; 5]);
        assert_eq!(expected_return(&c, MuMode::OneStep).unwrap(), 0.004);
        assert_eq!(expected_return(&c, MuMode::MeanOfPredictions).unwrap(), 0.004);
        let empty = record("E", vec![], vec![]);
        assert!(expected_return(&empty, MuMode::OneStep).is_err());
    }

    #[test]
    fn skewness_examples() {
        assert_eq!(asset_skewness(&[-1.0, 0.0, 1.0]).unwrap().value, 0.0);
        let s = asset_skewness(&[1.0, 2.0, 9.0]).unwrap();
        let expected = 30.0 / (38.0f64 / 3.0).powf(1.5);
        assert!((s.value - expected).abs() < 1e-12);
        assert!((s.value - 0.66547).abs() < 1e-5);
        let c = asset_skewness(&[0.01; 6]).unwrap();
        assert_eq!(c, Skewness {
            value: 0.0,
            degenerate: true
        });
        assert!(asset_skewness(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn single_asset_model() {
        let rec = from_errors("A", &[0.03, -0.04, 0.01]);
        let model = build_risk_model(std::slice::from_ref(&rec), &[&[0.01, 0.02, -0.01]], RiskOptions::default()).unwrap();
        assert_eq!(model.sigma, vec![vec![error_variance(&rec).unwrap()]]);
        assert_eq!(model.estimation_window, 3);
    }

    #[test]
    fn identical_errors_give_flat_sigma() {
        let e = [0.01, -0.02, 0.03, 0.0];
        let recs = vec![from_errors("A", &e), from_errors("B", &e)];
        let r: &[f64] = &[0.01, 0.02, -0.03, 0.0];
        let model = build_risk_model(&recs, &[r, r], RiskOptions::default()).unwrap();
        let v = model.sigma[0][0];
        assert!(model.sigma.iter().flatten().all(|x| *x == v));
    }

    #[test]
    fn mismatched_window_is_error() {
        let recs = vec![from_errors("A", &[0.1, 0.2, 0.3]), from_errors("B", &[0.1, 0.2])];
        let r: &[f64] = &[0.1, 0.2, 0.3];
        assert!(matches!(
            build_risk_model(&recs, &[r, r], RiskOptions::default()),
            Err(Error::Estimation(_))
        ));
    }

    #[test]
    fn matches_double_loop_oracle() {
        let mut rng = seed::rng(42);
        let n = 40;
        let errors: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..n).map(|_| rng.random_range(-0.05..0.05)).collect())
            .collect();
        let recs: Vec<PredictionRecord> = errors
            .iter()
            .enumerate()
            .map(|(i, e)| from_errors(&format!("S{i}"), e))
            .collect();
        let rets: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..n).map(|_| rng.random_range(-0.05..0.05)).collect())
            .collect();
        let ret_refs: Vec<&[f64]> = rets.iter().map(Vec::as_slice).collect();
        let model = build_risk_model(&recs, &ret_refs, RiskOptions::default()).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let mut acc = 0.0;
                for t in 0..n {
                    acc += errors[i][t] * errors[j][t];
                }
                let oracle = acc / (n - 1) as f64;
                assert!((model.sigma[i][j] - oracle).abs() < 1e-12);
            }
        }
        assert_eq!(model.diagonal_shift, 0.0);
    }

    #[test]
    fn json_round_trip() {
        let model = RiskModel::new(
            vec!["A".into(), "B".into()],
            vec![0.01, 0.02],
            vec![vec![0.04, 0.01], vec![0.01, 0.09]],
            vec![0.1, -0.2],
        )
        .unwrap();
        let back = RiskModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn rejects_indefinite_sigma() {
        let bad = RiskModel::new(
            vec!["A".into(), "B".into()],
            vec![0.0, 0.0],
            vec![vec![1.0, 2.0], vec![2.0, 1.0]],
            vec![0.0, 0.0],
        );
        assert!(bad.is_err());
    }

    proptest! {
        #[test]
        fn covariance_properties(
            errors in prop::collection::vec(prop::collection::vec(-0.1f64..0.1, 12), 2..6),
            weights in prop::collection::vec(-1.0f64..1.0, 6),
            scale_pow in -3i32..4,
        ) {
            let recs: Vec<PredictionRecord> = errors
                .iter()
                .enumerate()
                .map(|(i, e)| from_errors(&format!("S{i}"), e))
                .collect();
            let flat: Vec<f64> = (0..12).map(|t| (t as f64 - 5.5) * 0.01).collect();
            let refs: Vec<&[f64]> = vec![flat.as_slice(); recs.len()];
            let model = build_risk_model(&recs, &refs, RiskOptions::default()).unwrap();
            let m = recs.len();
            for i in 0..m {
                prop_assert_eq!(error_variance(&recs[i]).unwrap(), error_covariance(&recs[i].errors, &recs[i].errors, false).unwrap());
                for j in 0..m {
                    prop_assert_eq!(model.sigma[i][j], model.sigma[j][i]);
                }
            }
            let q: f64 = (0..m).flat_map(|i| (0..m).map(move |j| (i, j)))
                .map(|(i, j)| weights[i] * weights[j] * model.sigma[i][j])
                .sum();
            prop_assert!(q >= -1e-9);

            let c = 2f64.powi(scale_pow);
            let scaled: Vec<PredictionRecord> = errors
                .iter()
                .enumerate()
                .map(|(i, e)| from_errors(&format!("S{i}"), &e.iter().map(|x| x * c).collect::<Vec<_>>()))
                .collect();
            let scaled_model = build_risk_model(&scaled, &refs, RiskOptions::default()).unwrap();
            for i in 0..m {
                for j in 0..m {
                    prop_assert_eq!(scaled_model.sigma[i][j], c * c * model.sigma[i][j]);
                }
            }
        }
    }
}
