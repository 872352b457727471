//! Active-infection prevalence from reported case counts.
//!
//! Reported cases are assumed to capture between a third and a tenth of all
//! infections. Summing the trailing window of reported cases and dividing by
//! each detection rate gives the low, mid and high prevalence bounds.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::{csv_records, field, write_text};

pub const CASES_HEADER: [&str; 3] = ["fips", "date", "new_cases"];
pub const ESTIMATE_HEADER: [&str; 5] = ["fips", "as_of", "per10k_low", "per10k_mid", "per10k_high"];

pub const DEFAULT_WINDOW_DAYS: u32 = 10;

const PER: f64 = 10_000.0;

/// Fraction of true infections that show up as reported cases. The low
/// prevalence bound uses the highest detection rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionBounds {
    pub low: f64,
    pub mid: f64,
    pub high: f64,
}

impl Default for DetectionBounds {
    fn default() -> Self {
        DetectionBounds {
            low: 1.0 / 3.0,
            mid: 1.0 / 5.0,
            high: 1.0 / 10.0,
        }
    }
}

impl DetectionBounds {
    pub fn validate(&self) -> Result<()> {
        for d in [self.low, self.mid, self.high] {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Error::Domain(format!("detection rate {d} outside (0, 1]")));
            }
        }
        if !(self.low >= self.mid && self.mid >= self.high) {
            return Err(Error::Domain(format!(
                "detection rates must satisfy low >= mid >= high, got {} / {} / {}",
                self.low, self.mid, self.high
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceEstimate {
    pub county_fips: String,
    pub as_of: NaiveDate,
    pub per10k_low: f64,
    pub per10k_mid: f64,
    pub per10k_high: f64,
}

impl PrevalenceEstimate {
    pub fn validate(&self) -> Result<()> {
        let (l, m, h) = (self.per10k_low, self.per10k_mid, self.per10k_high);
        if !(l.is_finite() && m.is_finite() && h.is_finite()) || l < 0.0 {
            return Err(Error::Validation(format!("county {}: invalid prevalence bounds", self.county_fips)));
        }
        if l > m || m > h {
            return Err(Error::Validation(format!(
                "county {}: prevalence bounds out of order ({l} / {m} / {h})",
                self.county_fips
            )));
        }
        if h > PER {
            return Err(Error::Validation(format!(
                "county {}: prevalence {h} exceeds 10,000 per 10,000",
                self.county_fips
            )));
        }
        Ok(())
    }
}

/// Daily reported cases per county.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CaseTable {
    series: BTreeMap<String, BTreeMap<NaiveDate, u64>>,
}

impl CaseTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, fips: impl Into<String>, date: NaiveDate, new_cases: u64) {
        *self.series.entry(fips.into()).or_default().entry(date).or_insert(0) += new_cases;
    }

    pub fn counties(&self) -> impl Iterator<Item = &str> {
        self.series.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn date_range(&self) -> Option<(NaiveDate, NaiveDate)> {
        let mut dates = self.series.values().flat_map(|s| s.keys().copied());
        let first = dates.next()?;
        Some(dates.fold((first, first), |(lo, hi), d| (lo.min(d), hi.max(d))))
    }

    /// Reports in the `window_days` days ending at `as_of` (inclusive).
    /// Days absent from a county's series count as zero reports.
    pub fn window_sum(&self, fips: &str, as_of: NaiveDate, window_days: u32) -> Result<u64> {
        let series = self.series.get(fips).ok_or_else(|| Error::MissingCases(fips.to_string()))?;
        let start = as_of - Duration::days(i64::from(window_days) - 1);
        Ok(series.range(start..=as_of).map(|(_, &n)| n).sum())
    }

    /// Every count multiplied by `c`; used by homogeneity checks.
    pub fn scaled(&self, c: u64) -> CaseTable {
        CaseTable {
            series: self
                .series
                .iter()
                .map(|(f, s)| (f.clone(), s.iter().map(|(d, n)| (*d, n * c)).collect()))
                .collect(),
        }
    }
}

pub fn load_cases(path: impl AsRef<Path>) -> Result<CaseTable> {
    let path = path.as_ref();
    let mut table = CaseTable::new();
    for rec in csv_records(path, &CASES_HEADER)? {
        let (line, r) = rec?;
        let date: NaiveDate = field(path, line, &r, 1, "date")?;
        let n: u64 = field(path, line, &r, 2, "new_cases")?;
        table.insert(r[0].trim(), date, n);
    }
    Ok(table)
}

/// Per-county prevalence bounds per 10,000 residents.
///
/// `populations` lists the counties to estimate; every one of them must have
/// a case series.
pub fn estimate_prevalence<'a>(
    cases: &CaseTable,
    populations: impl IntoIterator<Item = (&'a str, u64)>,
    as_of: NaiveDate,
    window_days: u32,
    detection: &DetectionBounds,
) -> Result<Vec<PrevalenceEstimate>> {
    if window_days == 0 {
        return Err(Error::Domain("prevalence window must be at least one day".into()));
    }
    detection.validate()?;
    populations
        .into_iter()
        .map(|(fips, population)| {
            if population == 0 {
                return Err(Error::Domain(format!("county {fips} has zero population")));
            }
            let reported = cases.window_sum(fips, as_of, window_days)? as f64;
            let bound = |d: f64| (reported / d / population as f64 * PER).min(PER);
            Ok(PrevalenceEstimate {
                county_fips: fips.to_string(),
                as_of,
                per10k_low: bound(detection.low),
                per10k_mid: bound(detection.mid),
                per10k_high: bound(detection.high),
            })
        })
        .collect()
}

pub fn load_precomputed(path: impl AsRef<Path>) -> Result<Vec<PrevalenceEstimate>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for rec in csv_records(path, &ESTIMATE_HEADER)? {
        let (line, r) = rec?;
        let est = PrevalenceEstimate {
            county_fips: r[0].trim().to_string(),
            as_of: field(path, line, &r, 1, "as_of")?,
            per10k_low: field(path, line, &r, 2, "per10k_low")?,
            per10k_mid: field(path, line, &r, 3, "per10k_mid")?,
            per10k_high: field(path, line, &r, 4, "per10k_high")?,
        };
        est.validate()
            .map_err(|e| Error::Validation(format!("{}: line {line}: {e}", path.display())))?;
        out.push(est);
    }
    Ok(out)
}

pub fn write_estimates(path: impl AsRef<Path>, estimates: &[PrevalenceEstimate]) -> Result<()> {
    let mut text = ESTIMATE_HEADER.join(",");
    text.push('\n');
    for e in estimates {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            e.county_fips, e.as_of, e.per10k_low, e.per10k_mid, e.per10k_high
        ));
    }
    write_text(path.as_ref(), &text)
}

/// Population-weighted mean of (low, mid, high) over the given counties.
pub fn population_weighted<'a>(
    estimates: &[PrevalenceEstimate],
    populations: impl IntoIterator<Item = (&'a str, u64)>,
) -> Result<(f64, f64, f64)> {
    let by_fips: BTreeMap<&str, &PrevalenceEstimate> =
        estimates.iter().map(|e| (e.county_fips.as_str(), e)).collect();
    let (mut w, mut l, mut m, mut h) = (0.0, 0.0, 0.0, 0.0);
    for (fips, pop) in populations {
        let e = by_fips.get(fips).ok_or_else(|| Error::MissingPrevalence(fips.to_string()))?;
        let p = pop as f64;
        w += p;
        l += p * e.per10k_low;
        m += p * e.per10k_mid;
        h += p * e.per10k_high;
    }
    if w == 0.0 {
        return Err(Error::Domain("no population to weight prevalence by".into()));
    }
    Ok((l / w, m / w, h / w))
}
