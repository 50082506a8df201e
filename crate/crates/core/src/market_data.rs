//! Price ingestion, weekly sampling and return alignment.
//!
//! Prices arrive as `date,asset,close` rows. Each asset is sampled once per
//! week on a configured weekday; when that day has no quote the most recent
//! earlier close is carried forward. Returns are simple returns on the
//! weekly grid.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const WEEK: i64 = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricePoint {
    pub date: NaiveDate,
    pub asset: String,
    pub close: f64,
}

/// Weekly simple returns of one asset. `returns[k]` is dated `start_date + 7k days`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    pub asset: String,
    pub start_date: NaiveDate,
    pub returns: Vec<f64>,
}

impl ReturnSeries {
    pub fn new(asset: impl Into<String>, start_date: NaiveDate, returns: Vec<f64>) -> Result<Self> {
        let asset = asset.into();
        if returns.is_empty() {
            return Err(Error::InsufficientData(format!("{asset}: empty return series")));
        }
        if let Some(bad) = returns.iter().find(|r| !r.is_finite() || **r <= -1.0) {
            return Err(Error::Estimation(format!(
                "{asset}: return {bad} is not a valid simple return"
            )));
        }
        Ok(Self {
            asset,
            start_date,
            returns,
        })
    }

    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }

    pub fn end_date(&self) -> NaiveDate {
        self.start_date + Duration::days(WEEK * (self.returns.len() as i64 - 1))
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        (0..self.returns.len()).map(|k| self.start_date + Duration::days(WEEK * k as i64))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetUniverse {
    pub assets: Vec<String>,
    pub series: Vec<ReturnSeries>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index_membership: Option<BTreeMap<String, String>>,
}

impl AssetUniverse {
    pub fn len(&self) -> usize {
        self.assets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assets.is_empty()
    }

    /// Number of weekly returns shared by every asset.
    pub fn window(&self) -> usize {
        self.series.first().map_or(0, ReturnSeries::len)
    }
}

/// Sampled prices of one asset.
#[derive(Debug, Clone, PartialEq)]
pub struct AssetPrices {
    pub asset: String,
    pub points: Vec<PricePoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedPrices {
    /// Assets in order of first appearance in the file.
    pub assets: Vec<AssetPrices>,
    /// Assets with no price inside the sampled window.
    pub excluded: Vec<String>,
}

pub fn load_prices_file(path: &Path, sampling_weekday: Weekday) -> Result<LoadedPrices> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_prices(file, sampling_weekday)
}

/// Parses a `date,asset,close` table and samples every asset on `sampling_weekday`.
///
/// The week grid starts on the first `sampling_weekday` on or after the first
/// observation of the first asset in the file and runs to the last observed
/// date. An asset is sampled from its first grid date with a prior quote to
/// the last grid date within a week of its final quote.
pub fn load_prices<R: Read>(reader: R, sampling_weekday: Weekday) -> Result<LoadedPrices> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);

    let headers = rdr.headers().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    let names: Vec<String> = headers.iter().map(|h| h.to_ascii_lowercase()).collect();
    if names != ["date", "asset", "close"] {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `date,asset,close`, found `{}`", names.join(",")),
        });
    }

    let mut order: Vec<String> = Vec::new();
    let mut raw: HashMap<String, Vec<(NaiveDate, f64, usize)>> = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 3 {
            return Err(Error::Parse {
                line,
                message: format!("expected 3 fields, found {}", record.len()),
            });
        }
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d").map_err(|e| Error::Parse {
            line,
            message: format!("bad date `{}`: {e}", &record[0]),
        })?;
        let asset = record[1].to_string();
        if asset.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty asset identifier".into(),
            });
        }
        let close: f64 = record[2].parse().map_err(|_| Error::Parse {
            line,
            message: format!("non-numeric close `{}`", &record[2]),
        })?;
        if !close.is_finite() || close <= 0.0 {
            return Err(Error::Parse {
                line,
                message: format!("close must be positive, found {close}"),
            });
        }
        raw.entry(asset.clone())
            .or_insert_with(|| {
                order.push(asset);
                Vec::new()
            })
            .push((date, close, line));
    }

    if order.is_empty() {
        return Ok(LoadedPrices {
            assets: Vec::new(),
            excluded: Vec::new(),
        });
    }

    for obs in raw.values_mut() {
        obs.sort_by_key(|(d, _, _)| *d);
        if let Some(w) = obs.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::Parse {
                line: w[1].2.max(w[0].2),
                message: format!("duplicate quote on {}", w[1].0),
            });
        }
    }

    let first_obs = raw[&order[0]][0].0;
    let ahead = (sampling_weekday.num_days_from_monday() as i64
        - first_obs.weekday().num_days_from_monday() as i64)
        .rem_euclid(WEEK);
    let anchor = first_obs + Duration::days(ahead);
    let last_obs = raw
        .values()
        .filter_map(|obs| obs.last().map(|o| o.0))
        .max()
        .unwrap_or(anchor);

    let mut grid = Vec::new();
    let mut g = anchor;
    while g <= last_obs {
        grid.push(g);
        g += Duration::days(WEEK);
    }

    let mut assets = Vec::new();
    let mut excluded = Vec::new();
    for asset in order {
        let obs = &raw[&asset];
        let asset_last = obs.last().map(|o| o.0).unwrap_or(anchor);
        let mut points = Vec::new();
        let mut idx = 0usize;
        let mut current: Option<f64> = None;
        for &day in &grid {
            while idx < obs.len() && obs[idx].0 <= day {
                current = Some(obs[idx].1);
                idx += 1;
            }
            if (day - asset_last).num_days() >= WEEK {
                break;
            }
            if let Some(close) = current {
                points.push(PricePoint {
                    date: day,
                    asset: asset.clone(),
                    close,
                });
            }
        }
        if points.is_empty() {
            excluded.push(asset);
        } else {
            assets.push(AssetPrices { asset, points });
        }
    }

    Ok(LoadedPrices { assets, excluded })
}

/// Simple returns `(P[t+1] - P[t]) / P[t]` over consecutive price points.
pub fn compute_returns(prices: &[PricePoint]) -> Result<ReturnSeries> {
    if prices.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 prices to form a return, got {}",
            prices.len()
        )));
    }
    if let Some(p) = prices.iter().find(|p| !(p.close > 0.0) || !p.close.is_finite()) {
        return Err(Error::Estimation(format!(
            "{}: non-positive close {} on {}",
            p.asset, p.close, p.date
        )));
    }
    let returns = prices
        .windows(2)
        .map(|w| (w[1].close - w[0].close) / w[0].close)
        .collect();
    ReturnSeries::new(prices[0].asset.clone(), prices[1].date, returns)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedAsset {
    pub asset: String,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub kept: usize,
    pub window_start: NaiveDate,
    pub window_end: NaiveDate,
    pub window_len: usize,
    pub min_length: Option<usize>,
    pub dropped: Vec<DroppedAsset>,
}

impl AlignmentReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "kept {} assets over {} weekly returns ({} .. {})",
            self.kept, self.window_len, self.window_start, self.window_end
        );
        match self.min_length {
            Some(m) => {
                let _ = writeln!(out, "minimum coverage: {m} returns");
            }
            None => {
                let _ = writeln!(out, "minimum coverage: common window");
            }
        }
        if self.dropped.is_empty() {
            out.push_str("dropped: none\n");
        } else {
            for d in &self.dropped {
                let _ = writeln!(out, "dropped: {} ({} returns)", d.asset, d.length);
            }
        }
        out
    }
}

/// Intersects return series onto their common weekly window.
///
/// Series shorter than `min_length` are dropped first and listed in the report.
/// With `min_length = None` nothing is dropped and every series is truncated to
/// the intersection.
pub fn align_universe(
    series: Vec<ReturnSeries>,
    min_length: Option<usize>,
) -> Result<(AssetUniverse, AlignmentReport)> {
    if series.is_empty() {
        return Err(Error::Alignment("no series to align".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for s in &series {
        if !seen.insert(s.asset.as_str()) {
            return Err(Error::Alignment(format!("duplicate asset `{}`", s.asset)));
        }
    }

    let threshold = min_length.unwrap_or(0);
    let (kept, short): (Vec<_>, Vec<_>) = series.into_iter().partition(|s| s.len() >= threshold);
    let mut dropped: Vec<DroppedAsset> = short
        .into_iter()
        .map(|s| DroppedAsset {
            length: s.len(),
            asset: s.asset,
        })
        .collect();
    dropped.sort_by(|a, b| a.asset.cmp(&b.asset));

    if kept.is_empty() {
        return Err(Error::Alignment(format!(
            "every series is shorter than the minimum length {threshold}"
        )));
    }

    let start = kept.iter().map(|s| s.start_date).max().expect("nonempty");
    let end = kept.iter().map(ReturnSeries::end_date).min().expect("nonempty");
    if let Some(s) = kept
        .iter()
        .find(|s| (s.start_date - start).num_days().rem_euclid(WEEK) != 0)
    {
        return Err(Error::Alignment(format!(
            "`{}` is not on the common weekly grid",
            s.asset
        )));
    }
    if start > end {
        return Err(Error::Alignment(format!(
            "series do not overlap (latest start {start}, earliest end {end})"
        )));
    }
    let window_len = ((end - start).num_days() / WEEK) as usize + 1;
    if window_len < threshold.max(2) {
        return Err(Error::Alignment(format!(
            "common window of {window_len} returns is shorter than required {}",
            threshold.max(2)
        )));
    }

    let series: Vec<ReturnSeries> = kept
        .into_iter()
        .map(|s| {
            let offset = ((start - s.start_date).num_days() / WEEK) as usize;
            ReturnSeries {
                returns: s.returns[offset..offset + window_len].to_vec(),
                start_date: start,
                asset: s.asset,
            }
        })
        .collect();

    let report = AlignmentReport {
        kept: series.len(),
        window_start: start,
        window_end: end,
        window_len,
        min_length,
        dropped,
    };
    let universe = AssetUniverse {
        assets: series.iter().map(|s| s.asset.clone()).collect(),
        series,
        index_membership: None,
    };
    Ok((universe, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn day(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn points(closes: &[f64]) -> Vec<PricePoint> {
        closes
            .iter()
            .enumerate()
            .map(|(i, &c)| PricePoint {
                date: day("2012-01-02") + Duration::days(7 * i as i64),
                asset: "A".into(),
                close: c,
            })
            .collect()
    }

    #[test]
    fn monday_closes_pass_through() {
        let csv = "date,asset,close\n2012-01-02,A,100\n2012-01-09,A,110\n2012-01-16,A,99\n";
        let loaded = load_prices(csv.as_bytes(), Weekday::Mon).unwrap();
        assert_eq!(loaded.assets.len(), 1);
        let closes: Vec<f64> = loaded.assets[0].points.iter().map(|p| p.close).collect();
        assert_eq!(closes, vec![100.0, 110.0, 99.0]);
        assert!(loaded.assets[0].points.windows(2).all(|w| w[0].date < w[1].date));
    }

    #[test]
    fn missing_monday_takes_prior_close() {
        // 2012-01-06 is a Friday; the following Monday is absent.
        let csv = "date,asset,close\n\
                   2012-01-02,A,100\n\
                   2012-01-06,A,105\n\
                   2012-01-16,A,107\n";
        let loaded = load_prices(csv.as_bytes(), Weekday::Mon).unwrap();
        let pts = &loaded.assets[0].points;
        assert_eq!(pts.len(), 3);
        assert_eq!(pts[1].date, day("2012-01-09"));
        assert_eq!(pts[1].close, 105.0);
    }

    #[test]
    fn non_numeric_close_names_line() {
        let csv = "date,asset,close\n2012-01-02,A,100\n2012-01-09,A,abc\n";
        match load_prices(csv.as_bytes(), Weekday::Mon) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("abc"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn bad_header_rejected() {
        let csv = "day,ticker,price\n2012-01-02,A,100\n";
        assert!(matches!(
            load_prices(csv.as_bytes(), Weekday::Mon),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn asset_outside_window_is_excluded() {
        // B trades only before the grid anchor set by A.
        let csv = "date,asset,close\n\
                   2012-02-06,A,10\n\
                   2012-02-13,A,11\n\
                   2012-01-02,B,5\n";
        let loaded = load_prices(csv.as_bytes(), Weekday::Mon).unwrap();
        assert_eq!(loaded.assets.len(), 1);
        assert_eq!(loaded.excluded, vec!["B".to_string()]);
    }

    #[test]
    fn grid_stops_after_last_quote() {
        let csv = "date,asset,close\n\
                   2012-01-02,A,10\n\
                   2012-01-09,A,11\n\
                   2012-01-16,A,12\n\
                   2012-01-23,A,13\n\
                   2012-01-02,B,5\n\
                   2012-01-09,B,6\n";
        let loaded = load_prices(csv.as_bytes(), Weekday::Mon).unwrap();
        assert_eq!(loaded.assets[0].points.len(), 4);
        assert_eq!(loaded.assets[1].points.len(), 2);
    }

    #[test]
    fn returns_examples() {
        assert_eq!(compute_returns(&points(&[100.0, 110.0])).unwrap().returns, vec![
            (110.0 - 100.0) / 100.0
        ]);
        assert_eq!(
            compute_returns(&points(&[100.0, 100.0, 100.0])).unwrap().returns,
            vec![0.0, 0.0]
        );
        let r = compute_returns(&points(&[100.0, 90.0, 99.0])).unwrap().returns;
        assert!((r[0] + 0.10).abs() < 1e-15);
        assert!((r[1] - 0.10).abs() < 1e-15);
    }

    #[test]
    fn returns_need_two_prices() {
        assert!(matches!(
            compute_returns(&points(&[100.0])),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn identical_grids_align_untouched() {
        let a = ReturnSeries::new("A", day("2012-01-09"), vec![0.1, 0.2, 0.3]).unwrap();
        let b = ReturnSeries::new("B", day("2012-01-09"), vec![0.0, -0.1, 0.1]).unwrap();
        let (u, report) = align_universe(vec![a.clone(), b.clone()], None).unwrap();
        assert_eq!(u.series, vec![a, b]);
        assert!(report.dropped.is_empty());
    }

    #[test]
    fn short_series_dropped_and_reported() {
        let a = ReturnSeries::new("A", day("2012-01-09"), vec![0.01; 221]).unwrap();
        let b = ReturnSeries::new("B", day("2012-01-09"), vec![0.01; 100]).unwrap();
        let (u, report) = align_universe(vec![a, b], Some(180)).unwrap();
        assert_eq!(u.assets, vec!["A".to_string()]);
        assert_eq!(u.window(), 221);
        assert_eq!(report.dropped, vec![DroppedAsset {
            asset: "B".into(),
            length: 100
        }]);
        assert!(report.to_text().contains("dropped: B"));
    }

    #[test]
    fn all_short_is_error() {
        let a = ReturnSeries::new("A", day("2012-01-09"), vec![0.01; 10]).unwrap();
        let b = ReturnSeries::new("B", day("2012-01-09"), vec![0.01; 20]).unwrap();
        assert!(matches!(
            align_universe(vec![a, b], Some(180)),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn disjoint_series_is_error() {
        let a = ReturnSeries::new("A", day("2012-01-09"), vec![0.01; 3]).unwrap();
        let b = ReturnSeries::new("B", day("2013-01-07"), vec![0.01; 3]).unwrap();
        assert!(matches!(align_universe(vec![a, b], None), Err(Error::Alignment(_))));
        assert!(matches!(align_universe(vec![], None), Err(Error::Alignment(_))));
    }

    #[test]
    fn offset_series_intersect() {
        let a = ReturnSeries::new("A", day("2012-01-02"), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = ReturnSeries::new("B", day("2012-01-16"), vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let (u, report) = align_universe(vec![a, b], None).unwrap();
        assert_eq!(u.series[0].returns, vec![3.0, 4.0]);
        assert_eq!(u.series[1].returns, vec![5.0, 6.0]);
        assert_eq!(report.window_start, day("2012-01-16"));
    }

    proptest! {
        #[test]
        fn prices_round_trip(first in 1.0f64..1000.0, rets in prop::collection::vec(-0.5f64..0.5, 1..60)) {
            let mut closes = vec![first];
            for r in &rets {
                let last = *closes.last().unwrap();
                closes.push(last * (1.0 + r));
            }
            let series = compute_returns(&points(&closes)).unwrap();
            for (got, want) in series.returns.iter().zip(&rets) {
                prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
            }
        }

        #[test]
        fn forward_fill_only_uses_observed_closes(
            gaps in prop::collection::vec(1i64..12, 2..40),
            seed_close in 1.0f64..100.0,
        ) {
            let mut csv = String::from("date,asset,close\n");
            let mut date = day("2012-01-04");
            let mut observed = Vec::new();
            for (i, g) in gaps.iter().enumerate() {
                let close = seed_close + i as f64;
                observed.push(close);
                csv.push_str(&format!("{date},A,{close}\n"));
                date += Duration::days(*g);
            }
            let loaded = load_prices(csv.as_bytes(), Weekday::Mon).unwrap();
            for asset in &loaded.assets {
                for p in &asset.points {
                    prop_assert!(observed.contains(&p.close));
                    prop_assert_eq!(p.date.weekday(), Weekday::Mon);
                }
            }
        }

        #[test]
        fn alignment_ignores_input_order(
            starts in prop::collection::vec(0i64..6, 2..6),
            lens in prop::collection::vec(8usize..20, 6),
            rot in 0usize..6,
        ) {
            let series: Vec<ReturnSeries> = starts
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let len = lens[i];
                    ReturnSeries::new(
                        format!("S{i}"),
                        day("2012-01-02") + Duration::days(7 * s),
                        (0..len).map(|k| (k as f64 + i as f64) * 1e-3).collect(),
                    )
                    .unwrap()
                })
                .collect();
            let mut rotated = series.clone();
            let r = rot % rotated.len();
            rotated.rotate_left(r);
            let a = align_universe(series, Some(3));
            let b = align_universe(rotated, Some(3));
            match (a, b) {
                (Ok((ua, ra)), Ok((ub, rb))) => {
                    let mut sa = ua.series.clone();
                    let mut sb = ub.series.clone();
                    sa.sort_by(|x, y| x.asset.cmp(&y.asset));
                    sb.sort_by(|x, y| x.asset.cmp(&y.asset));
                    prop_assert_eq!(sa, sb);
                    prop_assert_eq!(ra, rb);
                }
                (Err(_), Err(_)) => {}
                (a, b) => prop_assert!(false, "order changed outcome: {:?} vs {:?}", a.is_ok(), b.is_ok()),
            }
        }
    }
}
