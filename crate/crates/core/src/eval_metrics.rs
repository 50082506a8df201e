//! Forecast accuracy metrics and a normality test for prediction errors.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

pub const DEFAULT_MAPE_FLOOR: f64 = 1e-12;

fn check_lengths(real: &[f64], predicted: &[f64]) -> Result<()> {
    if real.len() != predicted.len() {
        return Err(Error::Metric(format!(
            "series lengths differ ({} vs {})",
            real.len(),
            predicted.len()
        )));
    }
    if real.is_empty() {
        return Err(Error::Metric("empty series".into()));
    }
    Ok(())
}

/// Mean absolute difference `(1/n) Σ |R_t - R̂_t|`.
pub fn mean_error(real: &[f64], predicted: &[f64]) -> Result<f64> {
    check_lengths(real, predicted)?;
    Ok(real.iter().zip(predicted).map(|(r, p)| (r - p).abs()).sum::<f64>() / real.len() as f64)
}

/// Signed mean of `R_t - R̂_t`; zero for unbiased predictions.
pub fn signed_mean_error(real: &[f64], predicted: &[f64]) -> Result<f64> {
    check_lengths(real, predicted)?;
    Ok(real.iter().zip(predicted).map(|(r, p)| r - p).sum::<f64>() / real.len() as f64)
}

pub fn rmse(real: &[f64], predicted: &[f64]) -> Result<f64> {
    check_lengths(real, predicted)?;
    let mse = real.iter().zip(predicted).map(|(r, p)| (r - p).powi(2)).sum::<f64>() / real.len() as f64;
    Ok(mse.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mape {
    /// `None` when every term was skipped.
    pub value: Option<f64>,
    pub skipped: usize,
}

/// Mean absolute percentage error over terms with `|R_t| >= floor`.
pub fn mape(real: &[f64], predicted: &[f64], floor: f64) -> Result<Mape> {
    check_lengths(real, predicted)?;
    let mut sum = 0.0;
    let mut used = 0usize;
    for (r, p) in real.iter().zip(predicted) {
        if r.abs() < floor {
            continue;
        }
        sum += (r - p).abs() / r.abs();
        used += 1;
    }
    Ok(Mape {
        value: (used > 0).then(|| sum / used as f64),
        skipped: real.len() - used,
    })
}

/// Sign agreement rates; `None` marks a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HitRates {
    pub hr: Option<f64>,
    pub hr_plus: Option<f64>,
    pub hr_minus: Option<f64>,
}

pub fn hit_rates(real: &[f64], predicted: &[f64]) -> Result<HitRates> {
    check_lengths(real, predicted)?;
    let mut same = 0usize;
    let mut nonzero = 0usize;
    let mut both_up = 0usize;
    let mut pred_up = 0usize;
    let mut both_down = 0usize;
    let mut pred_down = 0usize;
    for (&r, &p) in real.iter().zip(predicted) {
        let prod = r * p;
        if prod != 0.0 {
            nonzero += 1;
            if prod > 0.0 {
                same += 1;
            }
        }
        if p > 0.0 {
            pred_up += 1;
            if r > 0.0 {
                both_up += 1;
            }
        }
        if p < 0.0 {
            pred_down += 1;
            if r < 0.0 {
                both_down += 1;
            }
        }
    }
    let rate = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    Ok(HitRates {
        hr: rate(same, nonzero),
        hr_plus: rate(both_up, pred_up),
        hr_minus: rate(both_down, pred_down),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    pub me: f64,
    pub signed_me: f64,
    pub rmse: f64,
    pub mape: Option<f64>,
    pub mape_skipped: usize,
    pub hr: Option<f64>,
    pub hr_plus: Option<f64>,
    pub hr_minus: Option<f64>,
}

impl MetricReport {
    pub fn compute(real: &[f64], predicted: &[f64], mape_floor: f64) -> Result<Self> {
        let m = mape(real, predicted, mape_floor)?;
        let h = hit_rates(real, predicted)?;
        Ok(Self {
            n: real.len(),
            me: mean_error(real, predicted)?,
            signed_me: signed_mean_error(real, predicted)?,
            rmse: rmse(real, predicted)?,
            mape: m.value,
            mape_skipped: m.skipped,
            hr: h.hr,
            hr_plus: h.hr_plus,
            hr_minus: h.hr_minus,
        })
    }
}

/// Cross-asset mean, sample variance and standard deviation of one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub mean: f64,
    pub variance: f64,
    pub std_dev: f64,
    /// Assets for which the metric was defined.
    pub count: usize,
}

pub fn summarize(reports: &[MetricReport]) -> Vec<MetricSummary> {
    type Getter = fn(&MetricReport) -> Option<f64>;
    let columns: [(&str, Getter); 6] = [
        ("ME", |r| Some(r.me)),
        ("RMSE", |r| Some(r.rmse)),
        ("MAPE", |r| r.mape),
        ("H_R", |r| r.hr),
        ("H_R+", |r| r.hr_plus),
        ("H_R-", |r| r.hr_minus),
    ];
    columns
        .iter()
        .map(|(name, get)| {
            let values: Vec<f64> = reports.iter().filter_map(get).collect();
            let n = values.len();
            let mean = if n > 0 { values.iter().sum::<f64>() / n as f64 } else { f64::NAN };
            let variance = if n > 1 {
                values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
            } else {
                0.0
            };
            MetricSummary {
                metric: name.to_string(),
                mean,
                variance,
                std_dev: variance.sqrt(),
                count: n,
            }
        })
        .collect()
}

/// CSV with columns `metric,mean,variance,std_dev`.
pub fn summary_csv(summary: &[MetricSummary]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["metric", "mean", "variance", "std_dev"])?;
    for s in summary {
        w.write_record([
            s.metric.clone(),
            s.mean.to_string(),
            s.variance.to_string(),
            s.std_dev.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Metric(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KsThreshold {
    /// Critical values for a normal with estimated mean and variance.
    #[default]
    Lilliefors,
    /// `c(α)/√n` with `c(α) = sqrt(-ln(α/2)/2)`, for a fully specified null.
    Asymptotic,
}

impl std::str::FromStr for KsThreshold {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lilliefors" => Ok(KsThreshold::Lilliefors),
            "asymptotic" => Ok(KsThreshold::Asymptotic),
            other => Err(Error::Config(format!("unknown KS threshold `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d_statistic: f64,
    pub threshold: f64,
    pub accepted: bool,
    pub alpha: f64,
    pub n: usize,
    pub method: KsThreshold,
}

pub fn asymptotic_coefficient(alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt()
}

// Large-sample Lilliefors coefficients (critical D ≈ coefficient / √n).
const LILLIEFORS: [(f64, f64); 5] = [(0.01, 1.031), (0.05, 0.886), (0.10, 0.805), (0.15, 0.768), (0.20, 0.736)];

pub fn lilliefors_coefficient(alpha: f64) -> Result<f64> {
    let (lo, hi) = (LILLIEFORS[0].0, LILLIEFORS[LILLIEFORS.len() - 1].0);
    if !(lo..=hi).contains(&alpha) {
        return Err(Error::Config(format!(
            "Lilliefors threshold is tabulated for alpha in [{lo}, {hi}], got {alpha}"
        )));
    }
    for w in LILLIEFORS.windows(2) {
        let ((a0, c0), (a1, c1)) = (w[0], w[1]);
        if alpha <= a1 {
            let t = (alpha.ln() - a0.ln()) / (a1.ln() - a0.ln());
            return Ok(c0 + t * (c1 - c0));
        }
    }
    Ok(LILLIEFORS[LILLIEFORS.len() - 1].1)
}

fn standard_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `sup_x |F_n(x) - Φ((x - m)/s)|` with `m`, `s` the sample mean and standard deviation.
pub fn ks_statistic(samples: &[f64]) -> Result<f64> {
    let mut x = samples.to_vec();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateInput("non-finite sample".into()));
    }
    x.sort_by(f64::total_cmp);
    let distinct = 1 + x.windows(2).filter(|w| w[0] != w[1]).count();
    if distinct < 3 {
        return Err(Error::DegenerateInput(format!(
            "sample has {distinct} distinct value(s); a continuous fit is undefined"
        )));
    }
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    if !(var > 0.0) {
        return Err(Error::DegenerateInput("zero sample variance".into()));
    }
    let s = var.sqrt();
    let mut d: f64 = 0.0;
    for (i, v) in x.iter().enumerate() {
        let f = standard_normal_cdf((v - m) / s);
        let above = (i + 1) as f64 / n - f;
        let below = f - i as f64 / n;
        d = d.max(above).max(below);
    }
    Ok(d.clamp(0.0, 1.0))
}

pub fn ks_normality_test(samples: &[f64], alpha: f64, method: KsThreshold) -> Result<KsResult> {
    if samples.len() < 8 {
        return Err(Error::InsufficientData(format!(
            "normality test needs at least 8 samples, got {}",
            samples.len()
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let coefficient = match method {
        KsThreshold::Lilliefors => lilliefors_coefficient(alpha)?,
        KsThreshold::Asymptotic => asymptotic_coefficient(alpha),
    };
    let d = ks_statistic(samples)?;
    let threshold = coefficient / (samples.len() as f64).sqrt();
    Ok(KsResult {
        d_statistic: d,
        threshold,
        accepted: d <= threshold,
        alpha,
        n: samples.len(),
        method,
    })
}
