//! Nonlinear autoregressive (NAR) return predictor.
//!
//! A tapped delay line of `delay` past returns feeds one tanh hidden layer and
//! a linear output unit. Each asset gets its own network, fitted with
//! Levenberg-Marquardt on the training split and checkpointed on the
//! validation split.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const DUMP_FORMAT: &str = "mvs-nar-predictor";
pub const DUMP_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub delay: usize,
    pub hidden_units: usize,
    pub max_epochs: usize,
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub lm_initial_damping: f64,
    pub lm_damping_factor: f64,
    /// Training stops once damping exceeds this value without an accepted step.
    pub lm_max_damping: f64,
    /// Consecutive epochs without a new best validation loss before stopping; 0 disables.
    pub max_val_fail: usize,
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            delay: 41,
            hidden_units: 5,
            max_epochs: 1000,
            train_frac: 0.70,
            val_frac: 0.15,
            test_frac: 0.15,
            lm_initial_damping: 1e-3,
            lm_damping_factor: 10.0,
            lm_max_damping: 1e10,
            max_val_fail: 6,
            seed: 0,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delay == 0 {
            return Err(Error::Config("delay must be at least 1".into()));
        }
        if self.hidden_units == 0 {
            return Err(Error::Config("hidden_units must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        for (name, f) in [
            ("train_frac", self.train_frac),
            ("val_frac", self.val_frac),
            ("test_frac", self.test_frac),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {f}")));
            }
        }
        let total = self.train_frac + self.val_frac + self.test_frac;
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions sum to {total}, not 1")));
        }
        if !(self.lm_initial_damping > 0.0) {
            return Err(Error::Config("lm_initial_damping must be positive".into()));
        }
        if !(self.lm_damping_factor > 1.0) {
            return Err(Error::Config("lm_damping_factor must exceed 1".into()));
        }
        if !(self.lm_max_damping > self.lm_initial_damping) {
            return Err(Error::Config("lm_max_damping must exceed the initial damping".into()));
        }
        Ok(())
    }

    fn fractions(&self) -> SplitFractions {
        SplitFractions {
            train: self.train_frac,
            val: self.val_frac,
            test: self.test_frac,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitLabel {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

/// Chronological split sizes for `n` samples; every part gets at least one sample.
pub fn split_counts(n: usize, fractions: SplitFractions) -> Result<(usize, usize, usize)> {
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "{n} supervised samples cannot be split into train/validation/test"
        )));
    }
    let val = ((fractions.val * n as f64).round() as usize).max(1);
    let test = ((fractions.test * n as f64).round() as usize).max(1);
    let train = n.saturating_sub(val + test);
    if train == 0 {
        // only reachable for tiny n with large holdout fractions
        let train = 1;
        let val = 1;
        return Ok((train, val, n - train - val));
    }
    Ok((train, val, test))
}

pub fn split_labels(n: usize, fractions: SplitFractions) -> Result<Vec<SplitLabel>> {
    let (train, val, test) = split_counts(n, fractions)?;
    let mut labels = Vec::with_capacity(n);
    labels.extend(std::iter::repeat_n(SplitLabel::Train, train));
    labels.extend(std::iter::repeat_n(SplitLabel::Validation, val));
    labels.extend(std::iter::repeat_n(SplitLabel::Test, test));
    Ok(labels)
}

/// Lag windows and their next-step targets, labelled chronologically.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedSet {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub labels: Vec<SplitLabel>,
}

impl SupervisedSet {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn part(&self, label: SplitLabel) -> (Vec<&[f64]>, Vec<f64>) {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == label)
            .map(|(i, _)| (self.inputs[i].as_slice(), self.targets[i]))
            .unzip()
    }
}

/// Builds `(returns[t-d..t] -> returns[t])` samples for `t = d..len`.
pub fn split_series(returns: &[f64], config: &PredictorConfig) -> Result<SupervisedSet> {
    let d = config.delay;
    if d == 0 {
        return Err(Error::Config("delay must be at least 1".into()));
    }
    if returns.len() < d + 3 {
        return Err(Error::InsufficientData(format!(
            "series of length {} is too short for delay {d} (need at least {})",
            returns.len(),
            d + 3
        )));
    }
    let (inputs, targets): (Vec<Vec<f64>>, Vec<f64>) = (d..returns.len())
        .map(|t| (returns[t - d..t].to_vec(), returns[t]))
        .unzip();
    let labels = split_labels(targets.len(), config.fractions())?;
    Ok(SupervisedSet {
        inputs,
        targets,
        labels,
    })
}

/// Parameters are stored flat: input weights (hidden-major, `hidden × delay`),
/// hidden biases, output weights, output bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub delay: usize,
    pub hidden_units: usize,
    pub params: Vec<f64>,
}

impl Network {
    pub fn param_count(delay: usize, hidden: usize) -> usize {
        hidden * delay + 2 * hidden + 1
    }

    pub fn zeros(delay: usize, hidden: usize) -> Self {
        Self {
            delay,
            hidden_units: hidden,
            params: vec![0.0; Self::param_count(delay, hidden)],
        }
    }

    pub fn from_params(delay: usize, hidden: usize, params: Vec<f64>) -> Result<Self> {
        let expected = Self::param_count(delay, hidden);
        if params.len() != expected {
            return Err(Error::Dimension {
                context: "network parameters",
                expected,
                got: params.len(),
            });
        }
        Ok(Self {
            delay,
            hidden_units: hidden,
            params,
        })
    }

    /// Uniform in [-0.5, 0.5] scaled by 1/sqrt(fan-in).
    pub fn random<R: Rng + ?Sized>(delay: usize, hidden: usize, rng: &mut R) -> Self {
        let mut net = Self::zeros(delay, hidden);
        let in_scale = 1.0 / (delay as f64).sqrt();
        let out_scale = 1.0 / (hidden as f64).sqrt();
        let first_layer = hidden * delay + hidden;
        for (i, p) in net.params.iter_mut().enumerate() {
            let scale = if i < first_layer { in_scale } else { out_scale };
            *p = rng.random_range(-0.5..=0.5) * scale;
        }
        net
    }

    fn hidden_bias_offset(&self) -> usize {
        self.hidden_units * self.delay
    }

    fn output_weight_offset(&self) -> usize {
        self.hidden_units * (self.delay + 1)
    }

    fn output_bias_index(&self) -> usize {
        self.hidden_units * (self.delay + 2)
    }

    pub fn input_weight(&self, hidden: usize, lag: usize) -> f64 {
        self.params[hidden * self.delay + lag]
    }

    pub fn set_input_weight(&mut self, hidden: usize, lag: usize, value: f64) {
        self.params[hidden * self.delay + lag] = value;
    }

    pub fn set_hidden_bias(&mut self, hidden: usize, value: f64) {
        let o = self.hidden_bias_offset();
        self.params[o + hidden] = value;
    }

    pub fn set_output_weight(&mut self, hidden: usize, value: f64) {
        let o = self.output_weight_offset();
        self.params[o + hidden] = value;
    }

    pub fn set_output_bias(&mut self, value: f64) {
        let o = self.output_bias_index();
        self.params[o] = value;
    }

    pub fn output_bias(&self) -> f64 {
        self.params[self.output_bias_index()]
    }

    fn activations(&self, lags: &[f64], hidden: &mut [f64]) {
        let hb = self.hidden_bias_offset();
        for (j, h) in hidden.iter_mut().enumerate() {
            let row = &self.params[j * self.delay..(j + 1) * self.delay];
            let a = self.params[hb + j] + row.iter().zip(lags).map(|(w, x)| w * x).sum::<f64>();
            *h = a.tanh();
        }
    }

    fn output_from_hidden(&self, hidden: &[f64]) -> f64 {
        let ow = self.output_weight_offset();
        self.params[self.output_bias_index()]
            + hidden
                .iter()
                .zip(&self.params[ow..ow + self.hidden_units])
                .map(|(h, w)| h * w)
                .sum::<f64>()
    }

    pub fn forward(&self, lags: &[f64]) -> Result<f64> {
        if lags.len() != self.delay {
            return Err(Error::Dimension {
                context: "forward lags",
                expected: self.delay,
                got: lags.len(),
            });
        }
        if lags.iter().any(|x| !x.is_finite()) {
            return Err(Error::DegenerateInput("non-finite lag value".into()));
        }
        Ok(self.forward_unchecked(lags))
    }

    fn forward_unchecked(&self, lags: &[f64]) -> f64 {
        let mut hidden = vec![0.0; self.hidden_units];
        self.activations(lags, &mut hidden);
        self.output_from_hidden(&hidden)
    }

    fn mse(&self, inputs: &[&[f64]], targets: &[f64]) -> f64 {
        let sse: f64 = inputs
            .iter()
            .zip(targets)
            .map(|(x, t)| {
                let r = self.forward_unchecked(x) - t;
                r * r
            })
            .sum();
        sse / targets.len() as f64
    }
}

/// Jacobian of the training residuals `output - target` with respect to every
/// network parameter; one row per sample. Residuals are returned alongside.
pub fn jacobian(net: &Network, inputs: &[&[f64]], targets: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let p = net.params.len();
    let n = inputs.len();
    let mut jac = DMatrix::zeros(n, p);
    let mut residuals = DVector::zeros(n);
    let mut hidden = vec![0.0; net.hidden_units];
    let hb = net.hidden_bias_offset();
    let ow = net.output_weight_offset();
    let ob = net.output_bias_index();
    for (row, (x, t)) in inputs.iter().zip(targets).enumerate() {
        net.activations(x, &mut hidden);
        residuals[row] = net.output_from_hidden(&hidden) - t;
        for (j, h) in hidden.iter().enumerate() {
            let back = net.params[ow + j] * (1.0 - h * h);
            for (k, xk) in x.iter().enumerate() {
                jac[(row, j * net.delay + k)] = back * xk;
            }
            jac[(row, hb + j)] = back;
            jac[(row, ow + j)] = *h;
        }
        jac[(row, ob)] = 1.0;
    }
    (jac, residuals)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedPredictor {
    pub format: String,
    pub version: u32,
    pub asset: String,
    pub network: Network,
    pub split: SplitFractions,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// Training MSE after initialization and after every accepted step.
    pub train_loss_history: Vec<f64>,
    /// Validation MSE recorded alongside `train_loss_history`.
    pub val_loss_history: Vec<f64>,
}

impl TrainedPredictor {
    pub fn delay(&self) -> usize {
        self.network.delay
    }

    pub fn forward(&self, lags: &[f64]) -> Result<f64> {
        self.network.forward(lags)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let pred: Self = serde_json::from_str(text)?;
        if pred.format != DUMP_FORMAT || pred.version != DUMP_VERSION {
            return Err(Error::Config(format!(
                "unsupported predictor dump {} v{}",
                pred.format, pred.version
            )));
        }
        let n = &pred.network;
        Network::from_params(n.delay, n.hidden_units, n.params.clone())?;
        Ok(pred)
    }
}

/// Levenberg-Marquardt fit of a fresh network on the training part of `samples`.
///
/// Each epoch solves `(JᵀJ + μI)δ = Jᵀe` and retries with larger damping until
/// the training loss strictly decreases. The returned parameters are those with
/// the lowest validation loss seen.
pub fn train_arnn(asset: &str, samples: &SupervisedSet, config: &PredictorConfig) -> Result<TrainedPredictor> {
    config.validate()?;
    let (train_x, train_y) = samples.part(SplitLabel::Train);
    let (val_x, val_y) = samples.part(SplitLabel::Validation);
    if train_y.is_empty() || val_y.is_empty() {
        return Err(Error::InsufficientData(
            "training needs at least one training and one validation sample".into(),
        ));
    }
    if let Some(x) = samples.inputs.first() {
        if x.len() != config.delay {
            return Err(Error::Dimension {
                context: "training inputs",
                expected: config.delay,
                got: x.len(),
            });
        }
    }

    let mut rng = seed::rng(config.seed);
    let mut net = Network::random(config.delay, config.hidden_units, &mut rng);
    let p = net.params.len();

    let mut train_loss = net.mse(&train_x, &train_y);
    if !train_loss.is_finite() {
        return Err(Error::Training {
            epoch: 0,
            message: format!("initial training loss is {train_loss}"),
        });
    }
    let mut val_loss = net.mse(&val_x, &val_y);
    let mut best_val = val_loss;
    let mut best_params = net.params.clone();
    let mut best_epoch = 0;
    let mut train_hist = vec![train_loss];
    let mut val_hist = vec![val_loss];

    let mut damping = config.lm_initial_damping;
    let mut fails = 0usize;
    let mut epochs_run = 0usize;

    'epochs: for epoch in 1..=config.max_epochs {
        if train_loss == 0.0 {
            break;
        }
        let (jac, residuals) = jacobian(&net, &train_x, &train_y);
        let gradient = jac.tr_mul(&residuals);
        if gradient.amax() < 1e-14 {
            break;
        }
        let normal = jac.tr_mul(&jac);

        loop {
            let mut damped = normal.clone();
            for i in 0..p {
                damped[(i, i)] += damping;
            }
            if let Some(chol) = damped.cholesky() {
                let step = chol.solve(&gradient);
                let candidate = Network {
                    params: net.params.iter().zip(step.iter()).map(|(w, s)| w - s).collect(),
                    ..net.clone()
                };
                let loss = candidate.mse(&train_x, &train_y);
                if !loss.is_finite() {
                    return Err(Error::Training {
                        epoch,
                        message: format!("training loss became {loss}"),
                    });
                }
                if loss < train_loss {
                    net = candidate;
                    train_loss = loss;
                    damping = (damping / config.lm_damping_factor).max(1e-20);
                    break;
                }
            }
            damping *= config.lm_damping_factor;
            if damping > config.lm_max_damping {
                break 'epochs;
            }
        }

        epochs_run = epoch;
        val_loss = net.mse(&val_x, &val_y);
        train_hist.push(train_loss);
        val_hist.push(val_loss);
        if val_loss < best_val {
            best_val = val_loss;
            best_params.clone_from(&net.params);
            best_epoch = epoch;
            fails = 0;
        } else {
            fails += 1;
            if config.max_val_fail > 0 && fails >= config.max_val_fail {
                break;
            }
        }
    }

    net.params = best_params;
    Ok(TrainedPredictor {
        format: DUMP_FORMAT.into(),
        version: DUMP_VERSION,
        asset: asset.to_string(),
        network: net,
        split: config.fractions(),
        best_val_loss: best_val,
        best_epoch,
        epochs_run,
        train_loss_history: train_hist,
        val_loss_history: val_hist,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub asset: String,
    pub real: Vec<f64>,
    pub predicted: Vec<f64>,
    pub errors: Vec<f64>,
    pub split_labels: Vec<SplitLabel>,
}

impl PredictionRecord {
    pub fn len(&self) -> usize {
        self.real.len()
    }

    pub fn is_empty(&self) -> bool {
        self.real.is_empty()
    }

    /// Builds a record with `errors[t] = real[t] - predicted[t]`.
    pub fn from_parts(
        asset: impl Into<String>,
        real: Vec<f64>,
        predicted: Vec<f64>,
        split_labels: Vec<SplitLabel>,
    ) -> Result<Self> {
        if real.len() != predicted.len() || real.len() != split_labels.len() {
            return Err(Error::Dimension {
                context: "prediction record",
                expected: real.len(),
                got: predicted.len().min(split_labels.len()),
            });
        }
        let errors = real.iter().zip(&predicted).map(|(r, p)| r - p).collect();
        Ok(Self {
            asset: asset.into(),
            real,
            predicted,
            errors,
            split_labels,
        })
    }

    pub fn part(&self, label: SplitLabel) -> (Vec<f64>, Vec<f64>) {
        self.split_labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == label)
            .map(|(i, _)| (self.real[i], self.predicted[i]))
            .unzip()
    }
}

/// One-step-ahead predictions from the true preceding `delay` returns.
pub fn rolling_predict(predictor: &TrainedPredictor, returns: &[f64], delay: usize) -> Result<PredictionRecord> {
    if delay != predictor.delay() {
        return Err(Error::Dimension {
            context: "rolling prediction delay",
            expected: predictor.delay(),
            got: delay,
        });
    }
    if returns.len() <= delay {
        return Err(Error::InsufficientData(format!(
            "series of length {} leaves no samples after delay {delay}",
            returns.len()
        )));
    }
    let n = returns.len() - delay;
    let labels = match split_labels(n, predictor.split) {
        Ok(l) => l,
        Err(_) => vec![SplitLabel::Test; n],
    };
    let predicted = (delay..returns.len())
        .map(|t| predictor.forward(&returns[t - delay..t]))
        .collect::<Result<Vec<_>>>()?;
    PredictionRecord::from_parts(predictor.asset.clone(), returns[delay..].to_vec(), predicted, labels)
}

/// Trains and predicts every series independently (in parallel), with a seed
/// derived from `config.seed` and the series position.
pub fn fit_universe(
    series: &[(String, Vec<f64>)],
    config: &PredictorConfig,
) -> Result<Vec<(TrainedPredictor, PredictionRecord)>> {
    use rayon::prelude::*;
    series
        .par_iter()
        .enumerate()
        .map(|(i, (asset, returns))| {
            let cfg = PredictorConfig {
                seed: seed::derive(config.seed, i as u64),
                ..config.clone()
            };
            let samples = split_series(returns, &cfg)?;
            let trained = train_arnn(asset, &samples, &cfg)?;
            let record = rolling_predict(&trained, returns, cfg.delay)?;
            Ok((trained, record))
        })
        .collect()
}
