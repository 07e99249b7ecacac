//! Cumulative intraday return (CIDR) construction from raw price records.
//!
//! Each (asset, day) series of prices becomes one curve
//! `X(u) = 100 * (ln P(u) - ln P(u_first))`, linearly interpolated onto a
//! common grid over the trading session. Days not covered by every asset are
//! dropped so the panel stays rectangular.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::Array2;

use funcov::error::{Error, Result};
use funcov::panel::{FunctionalPanel, Grid};

/// Default grid size: one point per five-minute bar in a 6.5-hour session.
pub const DEFAULT_CIDR_GRID: usize = 78;

/// One raw price observation.
#[derive(Debug, Clone)]
pub struct CidrRecord {
    /// Asset identifier.
    pub asset: String,
    /// Trading day (any consistent label, e.g. `2020-01-02`).
    pub date: String,
    /// Fraction of the trading session elapsed, in `[0, 1]`.
    pub session_time: f64,
    /// Price, strictly positive.
    pub price: f64,
}

/// Minutes in the 09:30-16:00 cash session.
const SESSION_MINUTES: f64 = 390.0;

/// Parses `HH:MM` or `HH:MM:SS` into the session fraction, rejecting times
/// outside 09:30-16:00.
pub fn parse_session_time(text: &str) -> Result<f64> {
    let parts: Vec<&str> = text.trim().split(':').collect();
    if parts.len() < 2 || parts.len() > 3 {
        return Err(Error::MalformedInput(format!("bad time '{text}'")));
    }
    let num = |s: &str| {
        s.parse::<u32>()
            .map_err(|_| Error::MalformedInput(format!("bad time '{text}'")))
    };
    let (h, m) = (num(parts[0])?, num(parts[1])?);
    let s = if parts.len() == 3 { num(parts[2])? } else { 0 };
    if m >= 60 || s >= 60 {
        return Err(Error::MalformedInput(format!("bad time '{text}'")));
    }
    let minutes = (h as f64) * 60.0 + m as f64 + (s as f64) / 60.0 - 570.0;
    if !(0.0..=SESSION_MINUTES).contains(&minutes) {
        return Err(Error::MalformedInput(format!(
            "time '{text}' outside the 09:30-16:00 session"
        )));
    }
    Ok(minutes / SESSION_MINUTES)
}

/// Reads a `asset,date,time,price` CSV into records.
pub fn read_price_csv(path: &Path) -> Result<Vec<CidrRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers != ["asset", "date", "time", "price"] {
        return Err(Error::MalformedInput(format!(
            "bad price header {headers:?}, expected [asset, date, time, price]"
        )));
    }
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        if row.len() != 4 {
            return Err(Error::MalformedInput(format!(
                "expected 4 fields, found {}",
                row.len()
            )));
        }
        let price: f64 = row[3]
            .trim()
            .parse()
            .map_err(|_| Error::MalformedInput(format!("bad price '{}'", &row[3])))?;
        if !(price > 0.0 && price.is_finite()) {
            return Err(Error::MalformedInput(format!(
                "non-positive price {price} for {} on {}",
                &row[0], &row[1]
            )));
        }
        records.push(CidrRecord {
            asset: row[0].trim().to_string(),
            date: row[1].trim().to_string(),
            session_time: parse_session_time(&row[2])?,
            price,
        });
    }
    Ok(records)
}

/// Builds the CIDR panel: subjects are assets (in sorted order), time points
/// are the days every asset covers (sorted), curves are interpolated onto
/// `grid`. Returns the panel and the list of dropped days.
pub fn build_cidr(
    records: &[CidrRecord],
    grid: &Grid,
) -> Result<(FunctionalPanel, Vec<String>)> {
    if records.is_empty() {
        return Err(Error::MalformedInput("no price records".into()));
    }
    // (asset, date) -> (time, price) series.
    let mut series: BTreeMap<(String, String), Vec<(f64, f64)>> = BTreeMap::new();
    for r in records {
        series
            .entry((r.asset.clone(), r.date.clone()))
            .or_default()
            .push((r.session_time, r.price));
    }
    let assets: BTreeSet<String> = records.iter().map(|r| r.asset.clone()).collect();
    let all_days: BTreeSet<String> = records.iter().map(|r| r.date.clone()).collect();
    let mut kept_days = Vec::new();
    let mut dropped = Vec::new();
    for day in &all_days {
        let complete = assets
            .iter()
            .all(|a| series.contains_key(&(a.clone(), day.clone())));
        if complete {
            kept_days.push(day.clone());
        } else {
            dropped.push(day.clone());
        }
    }
    if kept_days.is_empty() {
        return Err(Error::MalformedInput(
            "no trading day is covered by every asset".into(),
        ));
    }
    let g = grid.len();
    let mut values: Vec<Array2<f64>> = vec![Array2::zeros((kept_days.len(), g)); assets.len()];
    for (i, asset) in assets.iter().enumerate() {
        for (t, day) in kept_days.iter().enumerate() {
            let obs = series
                .get_mut(&(asset.clone(), day.clone()))
                .expect("kept day is complete");
            obs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            if obs.len() < 2 {
                return Err(Error::MalformedInput(format!(
                    "asset {asset} on {day}: need at least 2 prices, found {}",
                    obs.len()
                )));
            }
            if obs.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::MalformedInput(format!(
                    "asset {asset} on {day}: duplicate timestamps"
                )));
            }
            let base = obs[0].1.ln();
            let curve: Vec<(f64, f64)> = obs
                .iter()
                .map(|&(u, p)| (u, 100.0 * (p.ln() - base)))
                .collect();
            for (col, &u) in grid.points.iter().enumerate() {
                values[i][[t, col]] = interpolate(&curve, u);
            }
        }
    }
    let panel = FunctionalPanel::new(vec![grid.clone(); assets.len()], values, false)?;
    Ok((panel, dropped))
}

/// Piecewise-linear interpolation with flat extrapolation at the ends.
fn interpolate(curve: &[(f64, f64)], u: f64) -> f64 {
    if u <= curve[0].0 {
        return curve[0].1;
    }
    if u >= curve[curve.len() - 1].0 {
        return curve[curve.len() - 1].1;
    }
    let idx = curve.partition_point(|&(x, _)| x <= u);
    let (x0, y0) = curve[idx - 1];
    let (x1, y1) = curve[idx];
    y0 + (y1 - y0) * (u - x0) / (x1 - x0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rec(asset: &str, date: &str, frac: f64, price: f64) -> CidrRecord {
        CidrRecord {
            asset: asset.into(),
            date: date.into(),
            session_time: frac,
            price,
        }
    }

    #[test]
    fn session_time_parsing() {
        assert_abs_diff_eq!(parse_session_time("09:30").unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(parse_session_time("16:00").unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            parse_session_time("12:45").unwrap(),
            195.0 / 390.0,
            epsilon = 1e-12
        );
        assert!(parse_session_time("09:29").is_err());
        assert!(parse_session_time("16:01").is_err());
        assert!(parse_session_time("noon").is_err());
    }

    #[test]
    fn constant_prices_give_zero_curves() {
        let records = vec![
            rec("A", "d1", 0.0, 50.0),
            rec("A", "d1", 0.5, 50.0),
            rec("A", "d1", 1.0, 50.0),
        ];
        let grid = Grid::uniform(0.0, 1.0, 10).unwrap();
        let (panel, dropped) = build_cidr(&records, &grid).unwrap();
        assert!(dropped.is_empty());
        assert!(panel.values(0).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn curves_start_at_zero_exactly() {
        let records = vec![
            rec("A", "d1", 0.0, 100.0),
            rec("A", "d1", 1.0, 103.0),
            rec("B", "d1", 0.0, 20.0),
            rec("B", "d1", 1.0, 19.0),
        ];
        let grid = Grid::uniform(0.0, 1.0, 78).unwrap();
        let (panel, _) = build_cidr(&records, &grid).unwrap();
        for i in 0..2 {
            assert_eq!(panel.values(i)[[0, 0]], 0.0);
        }
    }

    #[test]
    fn endpoint_log_return_value() {
        let records = vec![rec("A", "d1", 0.0, 100.0), rec("A", "d1", 1.0, 101.0)];
        let grid = Grid::uniform(0.0, 1.0, 78).unwrap();
        let (panel, _) = build_cidr(&records, &grid).unwrap();
        let last = panel.values(0)[[0, 77]];
        assert_abs_diff_eq!(last, 100.0 * (1.01f64).ln(), epsilon = 1e-5);
    }

    #[test]
    fn grid_aligned_samples_interpolate_identically() {
        let grid = Grid::uniform(0.0, 1.0, 5).unwrap();
        let prices = [100.0, 101.0, 99.5, 102.0, 100.5];
        let records: Vec<CidrRecord> = grid
            .points
            .iter()
            .zip(prices.iter())
            .map(|(&u, &p)| rec("A", "d1", u, p))
            .collect();
        let (panel, _) = build_cidr(&records, &grid).unwrap();
        for (col, &p) in prices.iter().enumerate() {
            let want = 100.0 * (p.ln() - prices[0].ln());
            assert_abs_diff_eq!(panel.values(0)[[0, col]], want, epsilon = 1e-12);
        }
    }

    #[test]
    fn incomplete_days_are_dropped() {
        let records = vec![
            rec("A", "d1", 0.0, 10.0),
            rec("A", "d1", 1.0, 11.0),
            rec("B", "d1", 0.0, 10.0),
            rec("B", "d1", 1.0, 9.0),
            rec("A", "d2", 0.0, 10.0),
            rec("A", "d2", 1.0, 10.5),
        ];
        let grid = Grid::uniform(0.0, 1.0, 4).unwrap();
        let (panel, dropped) = build_cidr(&records, &grid).unwrap();
        assert_eq!(panel.n_times(), 1);
        assert_eq!(dropped, vec!["d2".to_string()]);
    }

    #[test]
    fn single_point_series_rejected() {
        let records = vec![rec("A", "d1", 0.5, 10.0)];
        let grid = Grid::uniform(0.0, 1.0, 4).unwrap();
        assert!(build_cidr(&records, &grid).is_err());
    }

    #[test]
    fn no_common_day_rejected() {
        let records = vec![
            rec("A", "d1", 0.0, 10.0),
            rec("A", "d1", 1.0, 11.0),
            rec("B", "d2", 0.0, 10.0),
            rec("B", "d2", 1.0, 9.0),
        ];
        let grid = Grid::uniform(0.0, 1.0, 4).unwrap();
        assert!(build_cidr(&records, &grid).is_err());
    }
}
