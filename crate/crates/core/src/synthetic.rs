//! Seeded synthetic data for tests, demos and the `synth` command.

use std::io::Write;

use chrono::{Duration, NaiveDate};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::market_data::PricePoint;
use crate::seed;

/// `x_t = coef · x_{t-1} + N(0, noise_sd²)` started from its stationary law.
pub fn ar1_series(coef: f64, noise_sd: f64, len: usize, seed_val: u64) -> Result<Vec<f64>> {
    if !(coef.abs() < 1.0) || !(noise_sd > 0.0) {
        return Err(Error::Config("ar1 needs |coef| < 1 and noise_sd > 0".into()));
    }
    let mut rng = seed::rng(seed_val);
    let noise = Normal::new(0.0, noise_sd).expect("positive sd");
    let stationary = Normal::new(0.0, noise_sd / (1.0 - coef * coef).sqrt()).expect("positive sd");
    let mut x = stationary.sample(&mut rng);
    Ok((0..len)
        .map(|_| {
            let out = x;
            x = coef * x + noise.sample(&mut rng);
            out
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticMarket {
    pub assets: usize,
    /// Weekly returns per asset; one more price than this is written.
    pub weeks: usize,
    pub start: NaiveDate,
    /// Probability that an interior weekly quote is missing.
    pub missing_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticMarket {
    fn default() -> Self {
        Self {
            assets: 5,
            weeks: 221,
            start: NaiveDate::from_ymd_opt(2010, 1, 4).expect("valid date"),
            missing_rate: 0.02,
            seed: 0,
        }
    }
}

impl SyntheticMarket {
    /// Price rows in date-major order. Returns follow an AR(1) with a shared
    /// market factor; each asset has its own drift, persistence and volatility.
    pub fn prices(&self) -> Result<Vec<PricePoint>> {
        if self.assets == 0 || self.weeks < 2 {
            return Err(Error::Config("need at least one asset and two weeks".into()));
        }
        let mut rng = seed::rng(self.seed);
        let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
        let specs: Vec<(f64, f64, f64, f64)> = (0..self.assets)
            .map(|_| {
                (
                    rng.random_range(-0.002..0.008),
                    rng.random_range(0.0..0.6),
                    rng.random_range(0.2..1.2),
                    rng.random_range(0.01..0.05),
                )
            })
            .collect();
        let mut closes: Vec<f64> = (0..self.assets).map(|_| rng.random_range(50.0..500.0)).collect();
        let mut last = vec![0.0; self.assets];
        let mut rows = Vec::with_capacity(self.assets * (self.weeks + 1));
        for t in 0..=self.weeks {
            let date = self.start + Duration::weeks(t as i64);
            let factor = 0.01 * std_normal.sample(&mut rng);
            for i in 0..self.assets {
                if t > 0 {
                    let (drift, phi, beta, vol) = specs[i];
                    let r = (drift * (1.0 - phi) + phi * last[i] + beta * factor + vol * std_normal.sample(&mut rng))
                        .max(-0.5);
                    closes[i] *= 1.0 + r;
                    last[i] = r;
                }
                let interior = t > 0 && t < self.weeks;
                if interior && rng.random::<f64>() < self.missing_rate {
                    continue;
                }
                rows.push(PricePoint {
                    date,
                    asset: format!("S{:03}", i + 1),
                    close: closes[i],
                });
            }
        }
        Ok(rows)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let rows = self.prices()?;
        let mut text = String::from("date,asset,close\n");
        for p in rows {
            text.push_str(&format!("{},{},{}\n", p.date, p.asset, p.close));
        }
        out.write_all(text.as_bytes())
            .map_err(|e| Error::io(std::path::Path::new("<output>"), e))
    }
}
