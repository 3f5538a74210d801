//! Return panels: loading, imputation, subsampling, diagnostics and lagged pairs.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Months, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{check_probability, Error, Result};
use crate::margins::BalancedSeries;
use crate::quantile::quantile;

/// Row key of a panel: an integer index or a calendar time, never mixed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Timestamp {
    Index(i64),
    Time(NaiveDateTime),
}

const TIME_FORMATS: [&str; 2] = ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"];

impl Timestamp {
    pub fn parse(s: &str) -> Option<Timestamp> {
        let s = s.trim();
        if let Ok(i) = s.parse::<i64>() {
            return Some(Timestamp::Index(i));
        }
        for f in TIME_FORMATS {
            if let Ok(t) = NaiveDateTime::parse_from_str(s, f) {
                return Some(Timestamp::Time(t));
            }
        }
        NaiveDate::parse_from_str(s, "%Y-%m-%d").ok().and_then(|d| d.and_hms_opt(0, 0, 0)).map(Timestamp::Time)
    }

    fn same_kind(&self, other: &Timestamp) -> bool {
        matches!((self, other), (Timestamp::Index(_), Timestamp::Index(_)) | (Timestamp::Time(_), Timestamp::Time(_)))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Timestamp::Index(i) => write!(f, "{i}"),
            Timestamp::Time(t) => write!(f, "{}", t.format("%Y-%m-%dT%H:%M:%S%.f")),
        }
    }
}

impl std::str::FromStr for Timestamp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Timestamp::parse(s).ok_or_else(|| Error::Parse { line: 0, message: format!("bad timestamp {s:?}") })
    }
}

/// Returns per asset on a common, strictly increasing time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ReturnPanel {
    assets: Vec<String>,
    timestamps: Vec<Timestamp>,
    // one column per asset; missing cells hold NaN until imputed
    columns: Vec<Vec<f64>>,
    missing: Vec<Vec<bool>>,
    /// Cumulative subsampling applied to the source rows.
    pub stride: usize,
    pub offset: usize,
}

impl ReturnPanel {
    /// Builds a panel from columns; `None` marks a missing cell.
    pub fn new(assets: Vec<String>, timestamps: Vec<Timestamp>, columns: Vec<Vec<Option<f64>>>) -> Result<Self> {
        if assets.len() != columns.len() {
            return Err(Error::LengthMismatch { left: assets.len(), right: columns.len() });
        }
        if let Some(k) = timestamps.windows(2).position(|w| !(w[0] < w[1]) || !w[0].same_kind(&w[1])) {
            return Err(Error::NonMonotoneTimestamps { line: k as u64 + 2 });
        }
        let t = timestamps.len();
        let mut values = Vec::with_capacity(columns.len());
        let mut missing = Vec::with_capacity(columns.len());
        for col in columns {
            if col.len() != t {
                return Err(Error::LengthMismatch { left: t, right: col.len() });
            }
            if let Some(i) = col.iter().position(|v| matches!(v, Some(x) if !x.is_finite())) {
                return Err(Error::NonFinite { index: i });
            }
            missing.push(col.iter().map(Option::is_none).collect());
            values.push(col.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect());
        }
        Ok(Self { assets, timestamps, columns: values, missing, stride: 1, offset: 0 })
    }

    /// Panel without missing cells.
    pub fn from_columns(assets: Vec<String>, timestamps: Vec<Timestamp>, columns: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(assets, timestamps, columns.into_iter().map(|c| c.into_iter().map(Some).collect()).collect())
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn timestamps(&self) -> &[Timestamp] {
        &self.timestamps
    }

    pub fn n_rows(&self) -> usize {
        self.timestamps.len()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    /// Column of asset `i`; missing cells are NaN unless imputed.
    pub fn column(&self, i: usize) -> &[f64] {
        &self.columns[i]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn is_missing(&self, row: usize, asset: usize) -> bool {
        self.missing[asset][row]
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().map(|m| m.iter().filter(|&&b| b).count()).sum()
    }

    /// Missing cells replaced by 0.0; the mask is kept.
    pub fn impute_zero(&self) -> ReturnPanel {
        let mut out = self.clone();
        for (col, mask) in out.columns.iter_mut().zip(&out.missing) {
            for (v, &m) in col.iter_mut().zip(mask) {
                if m {
                    *v = 0.0;
                }
            }
        }
        out
    }

    /// Rows in `range`, keeping subsampling metadata.
    pub fn slice_rows(&self, range: std::ops::Range<usize>) -> ReturnPanel {
        ReturnPanel {
            assets: self.assets.clone(),
            timestamps: self.timestamps[range.clone()].to_vec(),
            columns: self.columns.iter().map(|c| c[range.clone()].to_vec()).collect(),
            missing: self.missing.iter().map(|m| m[range.clone()].to_vec()).collect(),
            stride: self.stride,
            offset: self.offset,
        }
    }

    fn select_rows(&self, rows: &[usize]) -> ReturnPanel {
        ReturnPanel {
            assets: self.assets.clone(),
            timestamps: rows.iter().map(|&r| self.timestamps[r]).collect(),
            columns: self.columns.iter().map(|c| rows.iter().map(|&r| c[r]).collect()).collect(),
            missing: self.missing.iter().map(|m| rows.iter().map(|&r| m[r]).collect()).collect(),
            stride: self.stride,
            offset: self.offset,
        }
    }

    /// Writes the panel in wide format; missing cells are left empty.
    pub fn write_wide<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["timestamp".to_string()];
        header.extend(self.assets.iter().cloned());
        w.write_record(&header)?;
        for (r, ts) in self.timestamps.iter().enumerate() {
            let mut rec = vec![ts.to_string()];
            for (col, mask) in self.columns.iter().zip(&self.missing) {
                rec.push(if mask[r] { String::new() } else { col[r].to_string() });
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PanelFormat {
    /// Long if the header is `timestamp,asset,return`, wide otherwise.
    #[default]
    Auto,
    Long,
    Wide,
}

impl std::str::FromStr for PanelFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(PanelFormat::Auto),
            "long" => Ok(PanelFormat::Long),
            "wide" => Ok(PanelFormat::Wide),
            other => Err(Error::InvalidParameter(format!("unknown panel format {other:?}"))),
        }
    }
}

/// Reads a long or wide CSV panel from `path`.
pub fn load_panel(path: impl AsRef<Path>, format: PanelFormat) -> Result<ReturnPanel> {
    read_panel(std::fs::File::open(path)?, format)
}

/// Reads a long or wide CSV panel.
pub fn read_panel<R: Read>(input: R, format: PanelFormat) -> Result<ReturnPanel> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.first().map(String::as_str) != Some("timestamp") {
        return Err(Error::Parse { line: 1, message: "first column must be `timestamp`".into() });
    }
    let long = match format {
        PanelFormat::Long => true,
        PanelFormat::Wide => false,
        PanelFormat::Auto => header == ["timestamp", "asset", "return"],
    };
    if long {
        read_long(rdr, &header)
    } else {
        read_wide(rdr, header)
    }
}

fn parse_timestamp(s: &str, line: u64, kind: &mut Option<Timestamp>) -> Result<Timestamp> {
    let ts = Timestamp::parse(s).ok_or_else(|| Error::Parse { line, message: format!("bad timestamp {s:?}") })?;
    match kind {
        Some(k) if !k.same_kind(&ts) => Err(Error::Parse { line, message: "timestamps mix integer and calendar forms".into() }),
        Some(_) => Ok(ts),
        None => {
            *kind = Some(ts);
            Ok(ts)
        }
    }
}

fn parse_return(s: &str, line: u64) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(Error::Parse { line, message: format!("bad return {s:?}") }),
    }
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn read_long<R: Read>(mut rdr: csv::Reader<R>, header: &[String]) -> Result<ReturnPanel> {
    if header != ["timestamp", "asset", "return"] {
        return Err(Error::Parse { line: 1, message: "long format needs header `timestamp,asset,return`".into() });
    }
    let mut kind = None;
    let mut assets: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut cells: Vec<Vec<(Timestamp, Option<f64>)>> = Vec::new();
    let mut all = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        if rec.len() != 3 {
            return Err(Error::Parse { line, message: format!("expected 3 fields, found {}", rec.len()) });
        }
        let ts = parse_timestamp(&rec[0], line, &mut kind)?;
        let asset = &rec[1];
        if asset.is_empty() {
            return Err(Error::Parse { line, message: "empty asset code".into() });
        }
        let value = parse_return(&rec[2], line)?;
        let a = *index.entry(asset.to_string()).or_insert_with(|| {
            assets.push(asset.to_string());
            cells.push(Vec::new());
            assets.len() - 1
        });
        if let Some(&(prev, _)) = cells[a].last() {
            if prev == ts {
                return Err(Error::DuplicateCell { asset: asset.to_string(), timestamp: ts.to_string(), line });
            }
            if prev > ts {
                return Err(Error::NonMonotoneTimestamps { line });
            }
        }
        cells[a].push((ts, value));
        all.insert(ts);
    }
    let timestamps: Vec<Timestamp> = all.into_iter().collect();
    let columns = cells
        .into_iter()
        .map(|c| {
            let mut col = vec![None; timestamps.len()];
            let mut r = 0;
            for (ts, v) in c {
                while timestamps[r] < ts {
                    r += 1;
                }
                col[r] = v;
            }
            col
        })
        .collect();
    ReturnPanel::new(assets, timestamps, columns)
}

fn read_wide<R: Read>(mut rdr: csv::Reader<R>, header: Vec<String>) -> Result<ReturnPanel> {
    let assets: Vec<String> = header[1..].to_vec();
    if assets.is_empty() || assets.iter().any(String::is_empty) {
        return Err(Error::Parse { line: 1, message: "wide format needs non-empty asset columns".into() });
    }
    let mut kind = None;
    let mut timestamps: Vec<Timestamp> = Vec::new();
    let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::new(); assets.len()];
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        if rec.len() != header.len() {
            return Err(Error::Parse { line, message: format!("expected {} fields, found {}", header.len(), rec.len()) });
        }
        let ts = parse_timestamp(&rec[0], line, &mut kind)?;
        if let Some(&prev) = timestamps.last() {
            if prev == ts {
                return Err(Error::DuplicateCell { asset: assets[0].clone(), timestamp: ts.to_string(), line });
            }
            if prev > ts {
                return Err(Error::NonMonotoneTimestamps { line });
            }
        }
        timestamps.push(ts);
        for (col, field) in columns.iter_mut().zip(rec.iter().skip(1)) {
            col.push(parse_return(field, line)?);
        }
    }
    ReturnPanel::new(assets, timestamps, columns)
}

/// Keeps rows `offset, offset + stride, …`.
pub fn subsample(panel: &ReturnPanel, stride: usize, offset: usize) -> Result<ReturnPanel> {
    if stride == 0 || offset >= stride {
        return Err(Error::InvalidParameter(format!("need stride >= 1 and offset < stride, got {stride}, {offset}")));
    }
    let rows: Vec<usize> = (offset..panel.n_rows()).step_by(stride).collect();
    if rows.is_empty() {
        return Err(Error::EmptyResult);
    }
    let mut out = panel.select_rows(&rows);
    out.offset = panel.offset + panel.stride * offset;
    out.stride = panel.stride * stride;
    Ok(out)
}

/// Sample autocorrelation at lags `1..=max_lag` (biased covariance estimator).
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if n <= max_lag + 1 {
        return Err(Error::InsufficientData { needed: max_lag + 2, have: n });
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let c0: f64 = series.iter().map(|v| (v - mean).powi(2)).sum();
    if !(c0 > 0.0) {
        return Err(Error::ZeroVariance);
    }
    Ok((1..=max_lag)
        .map(|h| {
            let c: f64 = series.iter().zip(&series[h..]).map(|(a, b)| (a - mean) * (b - mean)).sum();
            c / c0
        })
        .collect())
}

/// Probability that `|r_{t+h}|` exceeds the `u_quantile` of `|r|` given that
/// `|r_t|` does, for `h = 1..=max_lag`.
pub fn extremogram(series: &[f64], max_lag: usize, u_quantile: f64) -> Result<Vec<f64>> {
    check_probability("u_quantile", u_quantile)?;
    if series.len() <= max_lag {
        return Err(Error::InsufficientData { needed: max_lag + 1, have: series.len() });
    }
    let abs: Vec<f64> = series.iter().map(|v| v.abs()).collect();
    let u = quantile(&abs, u_quantile);
    let hit: Vec<bool> = abs.iter().map(|&a| a > u).collect();
    (1..=max_lag)
        .map(|h| {
            let base = hit[..hit.len() - h].iter().filter(|&&b| b).count();
            if base == 0 {
                return Err(Error::NoExceedances { threshold: u });
            }
            let joint = hit.iter().zip(&hit[h..]).filter(|(&a, &b)| a && b).count();
            Ok(joint as f64 / base as f64)
        })
        .collect()
}

/// An explanatory column: an asset or its negation, truncated to `T - lag` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ExplanatoryColumn {
    pub asset: String,
    pub negated: bool,
    pub values: Vec<f64>,
}

/// Explanatory rows `0..T-lag` aligned with target rows `lag..T`.
#[derive(Clone, Debug, PartialEq)]
pub struct LaggedPairSet {
    pub lag: usize,
    /// All assets, then all negated assets.
    pub explanatory: Vec<ExplanatoryColumn>,
    pub targets: Vec<(String, Vec<f64>)>,
}

impl LaggedPairSet {
    pub fn n_pairs(&self) -> usize {
        self.explanatory.len() * self.targets.len()
    }
}

pub fn build_lagged_pairs(panel: &[BalancedSeries], lag: usize) -> Result<LaggedPairSet> {
    if lag == 0 {
        return Err(Error::InvalidParameter("lag must be at least 1".into()));
    }
    let t = panel.first().map_or(0, |s| s.values.len());
    if let Some(bad) = panel.iter().find(|s| s.values.len() != t) {
        return Err(Error::LengthMismatch { left: t, right: bad.values.len() });
    }
    if panel.is_empty() || lag >= t {
        return Err(Error::EmptyResult);
    }
    let mut explanatory = Vec::with_capacity(2 * panel.len());
    for negated in [false, true] {
        for s in panel {
            let values = s.values[..t - lag].iter().map(|&v| if negated { -v } else { v }).collect();
            explanatory.push(ExplanatoryColumn { asset: s.source_asset.clone(), negated, values });
        }
    }
    let targets = panel.iter().map(|s| (s.source_asset.clone(), s.values[lag..].to_vec())).collect();
    Ok(LaggedPairSet { lag, explanatory, targets })
}

/// How to cut a panel into a training and a test window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplitRule {
    /// Test window starts at this timestamp.
    AtTimestamp(Timestamp),
    /// Test window covers the final calendar months.
    LastMonths(u32),
    /// Test window is this fraction of the final rows.
    TestFraction(f64),
    None,
}

impl SplitRule {
    /// Two final months for calendar panels, the final 20% of rows otherwise.
    pub fn default_for(panel: &ReturnPanel) -> SplitRule {
        match panel.timestamps().first() {
            Some(Timestamp::Time(_)) => SplitRule::LastMonths(2),
            _ => SplitRule::TestFraction(0.2),
        }
    }
}

/// Train rows and, unless the rule is `None`, test rows.
pub fn split_panel(panel: &ReturnPanel, rule: SplitRule) -> Result<(ReturnPanel, Option<ReturnPanel>)> {
    let t = panel.n_rows();
    let cut = match rule {
        SplitRule::None => return Ok((panel.clone(), None)),
        SplitRule::AtTimestamp(ts) => panel.timestamps().partition_point(|x| *x < ts),
        SplitRule::LastMonths(m) => {
            let last = match panel.timestamps().last() {
                Some(Timestamp::Time(last)) => *last,
                _ => return Err(Error::InvalidParameter("month-based split needs calendar timestamps".into())),
            };
            let start = last
                .checked_sub_months(Months::new(m))
                .ok_or_else(|| Error::InvalidParameter("split date out of range".into()))?;
            panel.timestamps().partition_point(|x| *x <= Timestamp::Time(start))
        }
        SplitRule::TestFraction(f) => {
            check_probability("test fraction", f)?;
            t - (t as f64 * f).round() as usize
        }
    };
    if cut == 0 || cut >= t {
        return Err(Error::EmptyResult);
    }
    Ok((panel.slice_rows(0..cut), Some(panel.slice_rows(cut..t))))
}

#[cfg(test)]
mod tests {
    use super::*;

    const LONG: &str = "timestamp,asset,return\n0,a,0.01\n0,b,-0.02\n1,a,0.03\n2,a,\n2,b,0.05\n";

    #[test]
    fn long_panel_with_absent_and_empty_cells() {
        let p = read_panel(LONG.as_bytes(), PanelFormat::Auto).unwrap();
        assert_eq!(p.assets(), ["a", "b"]);
        assert_eq!(p.n_rows(), 3);
        assert!(p.is_missing(2, 0));
        assert!(p.is_missing(1, 1));
        assert_eq!(p.missing_count(), 2);
        let z = p.impute_zero();
        assert_eq!(z.column(1), [-0.02, 0.0, 0.05]);
    }

    #[test]
    fn long_panel_contract_violations() {
        let dup = "timestamp,asset,return\n0,a,0.1\n0,a,0.2\n";
        assert!(matches!(read_panel(dup.as_bytes(), PanelFormat::Auto), Err(Error::DuplicateCell { line: 3, .. })));
        let back = "timestamp,asset,return\n1,a,0.1\n0,a,0.2\n";
        assert!(matches!(read_panel(back.as_bytes(), PanelFormat::Auto), Err(Error::NonMonotoneTimestamps { line: 3 })));
        let bad = "timestamp,asset,return\n0,a,x\n";
        assert!(matches!(read_panel(bad.as_bytes(), PanelFormat::Auto), Err(Error::Parse { line: 2, .. })));
        let mixed = "timestamp,asset,return\n0,a,0.1\n2024-01-01,a,0.2\n";
        assert!(matches!(read_panel(mixed.as_bytes(), PanelFormat::Auto), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn wide_panel_round_trip() {
        let src = "timestamp,x,y\n2024-01-02T09:00:00,0.5,-1\n2024-01-02T09:00:30,,2\n";
        let p = read_panel(src.as_bytes(), PanelFormat::Auto).unwrap();
        assert!(p.is_missing(1, 0));
        let mut buf = Vec::new();
        p.write_wide(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), src);
    }

    #[test]
    fn subsample_counts() {
        let n = 110_985;
        let p = ReturnPanel::from_columns(vec!["a".into()], (0..n).map(Timestamp::Index).collect(), vec![vec![0.0; n as usize]])
            .unwrap();
        for offset in [0, 3, 9] {
            assert_eq!(subsample(&p, 10, offset).unwrap().n_rows(), (n as usize - offset).div_ceil(10));
        }
        assert_eq!(subsample(&p, 1, 0).unwrap(), p);
        let small = p.slice_rows(0..5);
        assert!(matches!(subsample(&small, 10, 7), Err(Error::EmptyResult)));
    }

    #[test]
    fn autocorrelation_of_alternating_series() {
        let s: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let r = autocorrelation(&s, 2).unwrap();
        assert!((r[0] + 0.99).abs() < 1e-12);
        assert!((r[1] - 0.98).abs() < 1e-12);
        assert!(matches!(autocorrelation(&[1.0; 10], 2), Err(Error::ZeroVariance)));
    }

    #[test]
    fn extremogram_persistent_block() {
        let mut s = vec![0.1; 100];
        for v in &mut s[95..] {
            *v = 5.0;
        }
        assert_eq!(extremogram(&s, 1, 0.9).unwrap(), vec![1.0]);
        assert!(matches!(extremogram(&[1.0; 20], 1, 0.9), Err(Error::NoExceedances { .. })));
    }

    #[test]
    fn split_rules() {
        let ts: Vec<Timestamp> = (1..=4)
            .map(|m| Timestamp::Time(NaiveDate::from_ymd_opt(2024, m, 15).unwrap().and_hms_opt(0, 0, 0).unwrap()))
            .collect();
        let p = ReturnPanel::from_columns(vec!["a".into()], ts, vec![vec![0.0; 4]]).unwrap();
        let (train, test) = split_panel(&p, SplitRule::default_for(&p)).unwrap();
        assert_eq!(train.n_rows(), 2);
        assert_eq!(test.unwrap().n_rows(), 2);
        let (train, _) = split_panel(&p, SplitRule::TestFraction(0.25)).unwrap();
        assert_eq!(train.n_rows(), 3);
        assert!(matches!(split_panel(&p, SplitRule::LastMonths(12)), Err(Error::EmptyResult)));
    }
}
