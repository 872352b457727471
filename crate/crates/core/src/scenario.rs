//! End-to-end scenario evaluation.
//!
//! Each Monte-Carlo replicate draws an evacuation rate for every block group
//! under an order, sums evacuees per origin county, converts them to
//! exportations with the county's prevalence, and disperses both through the
//! blended origin-destination matrix. Origin-destination probabilities are
//! deterministic, so all uncertainty comes from the rate draws and from the
//! three prevalence detection branches.
//!
//! Interval conventions:
//! - county evacuees: nearest-rank 5th / 50th / 95th percentile over replicates;
//! - exportations: 5th percentile under the low prevalence bound, median under
//!   the mid bound, 95th percentile under the high bound;
//! - receptions and importations: percentiles of the per-replicate flows, with
//!   the mid value pushed through the matrix from the origin mids so that flows
//!   are conserved exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evacmodel::{BetaEvacModel, LEVELS};
use crate::geodata::{CensusBlockGroup, ForecastTrack, Geography};
use crate::odchoice::{blended_matrix, AccommodationSplit, CoefficientSet, ODMatrix};
use crate::prevalence::{
    estimate_prevalence, load_cases, load_precomputed, CaseTable, DetectionBounds, PrevalenceEstimate,
    DEFAULT_WINDOW_DAYS,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_MC_SAMPLES: usize = 2_000;
pub const CREDIBLE_LEVEL: f64 = 0.90;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OrderStatus {
    #[default]
    None,
    Voluntary,
    Mandatory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum PrevalenceSource {
    Computed {
        as_of: NaiveDate,
        #[serde(default = "default_window")]
        window_days: u32,
        #[serde(default)]
        detection: DetectionBounds,
    },
    /// CSV of precomputed bounds; relative paths resolve against the data
    /// directory.
    Precomputed { path: PathBuf },
}

fn default_window() -> u32 {
    DEFAULT_WINDOW_DAYS
}

/// Whether replicate rates vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RateUncertainty {
    #[default]
    Sampled,
    /// Every block group evacuates at its predicted mean rate.
    Point,
}

/// Granularity of the rate draws within a replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RateDraw {
    /// Independent draw for every block group.
    #[default]
    PerBlockGroup,
    /// One draw per (zone, intensity) cell, shared by its block groups.
    PerCell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "ScenarioFile", into = "ScenarioFile")]
pub struct Scenario {
    pub name: String,
    pub track: ForecastTrack,
    pub mandatory_fips: BTreeSet<String>,
    pub voluntary_fips: BTreeSet<String>,
    pub prevalence_source: PrevalenceSource,
    pub split: AccommodationSplit,
    pub mc_samples: usize,
    pub seed: u64,
    pub rate_uncertainty: RateUncertainty,
    pub rate_draw: RateDraw,
}

/// On-disk scenario layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScenarioFile {
    name: String,
    category: u8,
    #[serde(default)]
    warned: BTreeSet<String>,
    #[serde(default)]
    mandatory: BTreeSet<String>,
    #[serde(default)]
    voluntary: BTreeSet<String>,
    #[serde(default)]
    split: AccommodationSplit,
    prevalence: PrevalenceSource,
    #[serde(default = "default_samples")]
    mc_samples: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    rate_uncertainty: RateUncertainty,
    #[serde(default)]
    rate_draw: RateDraw,
}

fn default_samples() -> usize {
    DEFAULT_MC_SAMPLES
}

impl From<ScenarioFile> for Scenario {
    fn from(f: ScenarioFile) -> Self {
        Scenario {
            track: ForecastTrack {
                hurricane_name: f.name.clone(),
                category_at_landfall: f.category,
                warned_county_fips: f.warned,
            },
            name: f.name,
            mandatory_fips: f.mandatory,
            voluntary_fips: f.voluntary,
            prevalence_source: f.prevalence,
            split: f.split,
            mc_samples: f.mc_samples,
            seed: f.seed,
            rate_uncertainty: f.rate_uncertainty,
            rate_draw: f.rate_draw,
        }
    }
}

impl From<Scenario> for ScenarioFile {
    fn from(s: Scenario) -> Self {
        ScenarioFile {
            name: s.name,
            category: s.track.category_at_landfall,
            warned: s.track.warned_county_fips,
            mandatory: s.mandatory_fips,
            voluntary: s.voluntary_fips,
            split: s.split,
            prevalence: s.prevalence_source,
            mc_samples: s.mc_samples,
            seed: s.seed,
            rate_uncertainty: s.rate_uncertainty,
            rate_draw: s.rate_draw,
        }
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Checks that need no data. Returns soft warnings.
    pub fn validate_shape(&self) -> Result<Vec<String>> {
        if self.track.category_at_landfall > 5 {
            return Err(Error::Validation(format!(
                "hurricane category {} outside 0..=5",
                self.track.category_at_landfall
            )));
        }
        if self.mc_samples == 0 {
            return Err(Error::Validation("mc_samples must be positive".into()));
        }
        let both: Vec<&String> = self.mandatory_fips.intersection(&self.voluntary_fips).collect();
        if !both.is_empty() {
            return Err(Error::Validation(format!(
                "counties under both mandatory and voluntary orders: {}",
                both.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
            )));
        }
        self.split.validate()?;
        if let PrevalenceSource::Computed { detection, window_days, .. } = &self.prevalence_source {
            detection.validate()?;
            if *window_days == 0 {
                return Err(Error::Validation("prevalence window must be at least one day".into()));
            }
        }
        let outside: Vec<&String> = self
            .mandatory_fips
            .union(&self.voluntary_fips)
            .filter(|f| !self.track.warned_county_fips.contains(*f))
            .collect();
        Ok(if outside.is_empty() {
            vec![]
        } else {
            vec![format!(
                "orders issued outside the warned area: {}",
                outside.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
            )]
        })
    }

    /// Full validation against a geography. Returns soft warnings.
    pub fn validate(&self, geography: &Geography) -> Result<Vec<String>> {
        let warnings = self.validate_shape()?;
        let unknown: BTreeSet<String> = self
            .mandatory_fips
            .iter()
            .chain(&self.voluntary_fips)
            .chain(&self.track.warned_county_fips)
            .filter(|f| geography.county(f).is_none())
            .cloned()
            .collect();
        if !unknown.is_empty() {
            return Err(Error::UnknownCounty(unknown.into_iter().collect()));
        }
        Ok(warnings)
    }

    pub fn order_status(&self, fips: &str) -> OrderStatus {
        if self.mandatory_fips.contains(fips) {
            OrderStatus::Mandatory
        } else if self.voluntary_fips.contains(fips) {
            OrderStatus::Voluntary
        } else {
            OrderStatus::None
        }
    }
}

/// Hurricane category used to predict a block group's rate: the track
/// category under a mandatory order, 0 under a voluntary order, and `None`
/// (no evacuation) without an order or outside every surge zone.
pub fn effective_category(cbg: &CensusBlockGroup, scenario: &Scenario) -> Option<u8> {
    cbg.risk_zone?;
    match scenario.order_status(&cbg.county_fips) {
        OrderStatus::Mandatory => Some(scenario.track.category_at_landfall),
        OrderStatus::Voluntary => Some(0),
        OrderStatus::None => None,
    }
}

/// Inputs shared by every scenario run.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub geography: Geography,
    pub cases: Option<CaseTable>,
    pub data_dir: Option<PathBuf>,
}

impl Datasets {
    /// Geography plus `cases.csv` when present.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let geography = Geography::load_dir(dir)?;
        let cases_path = dir.join("cases.csv");
        let cases = if cases_path.exists() {
            Some(load_cases(&cases_path)?)
        } else {
            None
        };
        Ok(Datasets {
            geography,
            cases,
            data_dir: Some(dir.to_path_buf()),
        })
    }

    /// Prevalence bounds for the requested counties.
    pub fn prevalence_for(&self, source: &PrevalenceSource, fips: &[String]) -> Result<BTreeMap<String, PrevalenceEstimate>> {
        let estimates = match source {
            PrevalenceSource::Computed {
                as_of,
                window_days,
                detection,
            } => {
                let cases = self
                    .cases
                    .as_ref()
                    .ok_or_else(|| Error::Validation("computed prevalence requested but no case data loaded".into()))?;
                let pops = fips
                    .iter()
                    .map(|f| {
                        let c = self
                            .geography
                            .county(f)
                            .ok_or_else(|| Error::UnknownCounty(vec![f.clone()]))?;
                        Ok((f.as_str(), c.population))
                    })
                    .collect::<Result<Vec<_>>>()?;
                estimate_prevalence(cases, pops, *as_of, *window_days, detection).map_err(|e| match e {
                    Error::MissingCases(f) => Error::MissingPrevalence(f),
                    other => other,
                })?
            }
            PrevalenceSource::Precomputed { path } => {
                let resolved = match (&self.data_dir, path.is_relative()) {
                    (Some(dir), true) => dir.join(path),
                    _ => path.clone(),
                };
                load_precomputed(resolved)?
            }
        };
        let by_fips: BTreeMap<String, PrevalenceEstimate> =
            estimates.into_iter().map(|e| (e.county_fips.clone(), e)).collect();
        fips.iter()
            .map(|f| {
                by_fips
                    .get(f)
                    .cloned()
                    .map(|e| (f.clone(), e))
                    .ok_or_else(|| Error::MissingPrevalence(f.clone()))
            })
            .collect()
    }
}

/// Nearest-rank percentile of an ascending sample, `p` in (0, 1].
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty sample");
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CredibleInterval {
    pub low: f64,
    pub mid: f64,
    pub high: f64,
    pub level: f64,
}

impl CredibleInterval {
    /// Widens the bounds if float noise leaves `mid` outside them.
    pub fn new(low: f64, mid: f64, high: f64) -> Self {
        CredibleInterval {
            low: low.min(mid),
            mid,
            high: high.max(mid),
            level: CREDIBLE_LEVEL,
        }
    }

    pub fn point(x: f64) -> Self {
        Self::new(x, x, x)
    }

    pub fn zero() -> Self {
        Self::point(0.0)
    }

    pub fn scale(&self, c: f64) -> Self {
        CredibleInterval {
            low: self.low * c,
            mid: self.mid * c,
            high: self.high * c,
            level: self.level,
        }
    }

    fn add(&self, other: &Self) -> Self {
        CredibleInterval {
            low: self.low + other.low,
            mid: self.mid + other.mid,
            high: self.high + other.high,
            level: self.level,
        }
    }

    fn from_sorted(sorted: &[f64], mid: f64) -> Self {
        let tail = (1.0 - CREDIBLE_LEVEL) / 2.0;
        Self::new(nearest_rank(sorted, tail), mid, nearest_rank(sorted, 1.0 - tail))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountyOutcome {
    pub fips: String,
    pub name: String,
    pub district_id: String,
    pub population: u64,
    pub order: OrderStatus,
    pub evac_rate: CredibleInterval,
    pub evacuees: CredibleInterval,
    pub exportations: CredibleInterval,
    pub receptions: CredibleInterval,
    pub importations: CredibleInterval,
    pub importations_per10k: CredibleInterval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistrictOutcome {
    pub district_id: String,
    pub population: u64,
    pub counties: usize,
    pub evacuees: CredibleInterval,
    pub exportations: CredibleInterval,
    pub receptions: CredibleInterval,
    pub importations: CredibleInterval,
    /// Receptions as a fraction of district population.
    pub receptions_share: CredibleInterval,
    pub importations_per10k: CredibleInterval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub evacuees: CredibleInterval,
    pub exportations: CredibleInterval,
    pub receptions: CredibleInterval,
    pub importations: CredibleInterval,
    pub warned_population: u64,
    pub mandatory_zone_population: u64,
    pub voluntary_zone_population: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub mc_samples: usize,
    pub counties: Vec<CountyOutcome>,
    pub districts: Vec<DistrictOutcome>,
    pub totals: Totals,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl ScenarioResult {
    pub fn county(&self, fips: &str) -> Option<&CountyOutcome> {
        self.counties.iter().find(|c| c.fips == fips)
    }

    pub fn district(&self, id: &str) -> Option<&DistrictOutcome> {
        self.districts.iter().find(|d| d.district_id == id)
    }
}

/// Evacuee-eligible block group, reduced to what a replicate needs.
#[derive(Debug, Clone, Copy)]
struct Eligible {
    origin: usize,
    cell: usize,
    population: f64,
}

/// Flows of a single replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct Replicate {
    /// Per origin county, in [`PreparedScenario::origins`] order.
    pub evacuees: Vec<f64>,
    /// Per destination county, in geography order.
    pub receptions: Vec<f64>,
    /// Exportations under the mid prevalence bound, per origin.
    pub exportations: Vec<f64>,
    /// Importations under the mid prevalence bound, per destination.
    pub importations: Vec<f64>,
}

/// A validated scenario with its origin-destination matrix and prevalence
/// resolved; replicates can be drawn from it independently.
#[derive(Debug, Clone)]
pub struct PreparedScenario {
    scenario: Scenario,
    geography: Geography,
    origins: Vec<String>,
    od: ODMatrix,
    eligible: Vec<Eligible>,
    cells: Vec<(u8, u8)>,
    cell_mean: Vec<f64>,
    cell_dist: Vec<Beta<f64>>,
    /// Per origin, per 10,000 → per person: (low, mid, high).
    prevalence: Vec<(f64, f64, f64)>,
    warnings: Vec<String>,
}

impl PreparedScenario {
    pub fn new(
        scenario: &Scenario,
        datasets: &Datasets,
        model: &BetaEvacModel,
        coeffs: &CoefficientSet,
    ) -> Result<Self> {
        model
            .validate()
            .map_err(|e| Error::Validation(format!("evacuation model is not fitted: {e}")))?;
        let mut warnings = scenario.validate(&datasets.geography)?;
        warnings.extend(datasets.geography.warnings().iter().cloned());
        let geography = datasets.geography.with_track(&scenario.track)?;

        // origins: ordered counties, fips order
        let origins: Vec<String> = scenario
            .mandatory_fips
            .iter()
            .chain(&scenario.voluntary_fips)
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let origin_index: BTreeMap<&str, usize> =
            origins.iter().enumerate().map(|(i, f)| (f.as_str(), i)).collect();

        let mut cell_index: BTreeMap<(u8, u8), usize> = BTreeMap::new();
        let mut eligible = Vec::new();
        for b in geography.block_groups() {
            if let (Some(h), Some(z)) = (effective_category(b, scenario), b.risk_zone) {
                let next = cell_index.len();
                let cell = *cell_index.entry((z.get(), h)).or_insert(next);
                eligible.push(Eligible {
                    origin: origin_index[b.county_fips.as_str()],
                    cell,
                    population: b.population as f64,
                });
            }
        }
        let mut cells = vec![(0, 0); cell_index.len()];
        for (&k, &i) in &cell_index {
            cells[i] = k;
        }
        let cell_mean = cells
            .iter()
            .map(|&(z, h)| model.predict_rate(z, h))
            .collect::<Result<Vec<_>>>()?;
        let cell_dist = cells
            .iter()
            .map(|&(z, h)| model.rate_distribution(z, h))
            .collect::<Result<Vec<_>>>()?;

        let prevalence = if origins.is_empty() {
            vec![]
        } else {
            let est = datasets.prevalence_for(&scenario.prevalence_source, &origins)?;
            origins
                .iter()
                .map(|f| {
                    let e = &est[f];
                    (e.per10k_low / 1e4, e.per10k_mid / 1e4, e.per10k_high / 1e4)
                })
                .collect()
        };

        let origin_counties: Vec<_> = origins
            .iter()
            .map(|f| geography.county(f).cloned().expect("validated"))
            .collect();
        let od = if origins.is_empty() {
            ODMatrix::from_rows(
                vec![],
                geography.counties().iter().map(|c| c.fips.clone()).collect(),
                vec![],
            )?
        } else {
            blended_matrix(&origin_counties, geography.counties(), coeffs, &scenario.split)?
        };

        Ok(PreparedScenario {
            scenario: scenario.clone(),
            geography,
            origins,
            od,
            eligible,
            cells,
            cell_mean,
            cell_dist,
            prevalence,
            warnings,
        })
    }

    pub fn origins(&self) -> &[String] {
        &self.origins
    }

    pub fn od_matrix(&self) -> &ODMatrix {
        &self.od
    }

    /// (zone, intensity) cells that at least one block group falls in.
    pub fn cells(&self) -> &[(u8, u8)] {
        &self.cells
    }

    pub fn geography(&self) -> &Geography {
        &self.geography
    }

    /// Prevalence per person (low, mid, high) for each origin.
    pub fn prevalence(&self) -> &[(f64, f64, f64)] {
        &self.prevalence
    }

    fn replicate_count(&self) -> usize {
        match self.scenario.rate_uncertainty {
            RateUncertainty::Point => 1,
            RateUncertainty::Sampled => self.scenario.mc_samples,
        }
    }

    /// Evacuees per origin for replicate `index`. Each replicate owns the
    /// ChaCha stream `(seed, index)`, so results do not depend on the order
    /// or thread replicates run on.
    pub fn replicate_evacuees(&self, index: u64) -> Vec<f64> {
        let mut evac = vec![0.0; self.origins.len()];
        match self.scenario.rate_uncertainty {
            RateUncertainty::Point => {
                for e in &self.eligible {
                    evac[e.origin] += e.population * self.cell_mean[e.cell];
                }
            }
            RateUncertainty::Sampled => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.scenario.seed);
                rng.set_stream(index);
                match self.scenario.rate_draw {
                    RateDraw::PerBlockGroup => {
                        for e in &self.eligible {
                            evac[e.origin] += e.population * self.cell_dist[e.cell].sample(&mut rng);
                        }
                    }
                    RateDraw::PerCell => {
                        let rates: Vec<f64> = self.cell_dist.iter().map(|d| d.sample(&mut rng)).collect();
                        for e in &self.eligible {
                            evac[e.origin] += e.population * rates[e.cell];
                        }
                    }
                }
            }
        }
        evac
    }

    fn disperse(&self, per_origin: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.od.destinations.len()];
        for (i, &x) in per_origin.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (o, p) in out.iter_mut().zip(self.od.row(i)) {
                *o += x * p;
            }
        }
        out
    }

    pub fn replicate(&self, index: u64) -> Replicate {
        let evacuees = self.replicate_evacuees(index);
        let exportations: Vec<f64> = evacuees.iter().zip(&self.prevalence).map(|(e, p)| e * p.1).collect();
        Replicate {
            receptions: self.disperse(&evacuees),
            importations: self.disperse(&exportations),
            evacuees,
            exportations,
        }
    }

    pub fn run(&self) -> Result<ScenarioResult> {
        let n = self.replicate_count();
        let samples: Vec<Vec<f64>> = (0..n as u64).into_par_iter().map(|s| self.replicate_evacuees(s)).collect();
        Ok(self.summarize(&samples))
    }

    fn summarize(&self, samples: &[Vec<f64>]) -> ScenarioResult {
        let geo = &self.geography;
        let n_origin = self.origins.len();
        let n_dest = self.od.destinations.len();
        let scaled = |branch: fn(&(f64, f64, f64)) -> f64, e: &[f64]| -> Vec<f64> {
            e.iter().zip(&self.prevalence).map(|(x, p)| x * branch(p)).collect()
        };
        let low = |p: &(f64, f64, f64)| p.0;
        let mid = |p: &(f64, f64, f64)| p.1;
        let high = |p: &(f64, f64, f64)| p.2;

        let sorted = |mut v: Vec<f64>| {
            v.sort_by(f64::total_cmp);
            v
        };
        let column = |rows: &[Vec<f64>], j: usize| sorted(rows.iter().map(|r| r[j]).collect());

        // origin-level intervals
        let mut evac_ci = Vec::with_capacity(n_origin);
        let mut export_ci = Vec::with_capacity(n_origin);
        for i in 0..n_origin {
            let col = column(samples, i);
            let med = nearest_rank(&col, 0.5);
            evac_ci.push(CredibleInterval::from_sorted(&col, med));
            let (pl, pm, ph) = self.prevalence[i];
            let tail = (1.0 - CREDIBLE_LEVEL) / 2.0;
            export_ci.push(CredibleInterval::new(
                nearest_rank(&col, tail) * pl,
                med * pm,
                nearest_rank(&col, 1.0 - tail) * ph,
            ));
        }

        // destination-level intervals
        let recv: Vec<Vec<f64>> = samples.iter().map(|e| self.disperse(e)).collect();
        let imp_low: Vec<Vec<f64>> = samples.iter().map(|e| self.disperse(&scaled(low, e))).collect();
        let imp_high: Vec<Vec<f64>> = samples.iter().map(|e| self.disperse(&scaled(high, e))).collect();
        let recv_mid = self.disperse(&evac_ci.iter().map(|c| c.mid).collect::<Vec<_>>());
        let imp_mid = self.disperse(&export_ci.iter().map(|c| c.mid).collect::<Vec<_>>());
        let tail = (1.0 - CREDIBLE_LEVEL) / 2.0;
        let recv_ci: Vec<CredibleInterval> = (0..n_dest)
            .map(|j| CredibleInterval::from_sorted(&column(&recv, j), recv_mid[j]))
            .collect();
        let imp_ci: Vec<CredibleInterval> = (0..n_dest)
            .map(|j| {
                CredibleInterval::new(
                    nearest_rank(&column(&imp_low, j), tail),
                    imp_mid[j],
                    nearest_rank(&column(&imp_high, j), 1.0 - tail),
                )
            })
            .collect();

        let origin_pos: BTreeMap<&str, usize> =
            self.origins.iter().enumerate().map(|(i, f)| (f.as_str(), i)).collect();
        let counties: Vec<CountyOutcome> = geo
            .counties()
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let (evacuees, exportations) = match origin_pos.get(c.fips.as_str()) {
                    Some(&i) => (evac_ci[i], export_ci[i]),
                    None => (CredibleInterval::zero(), CredibleInterval::zero()),
                };
                let pop = c.population as f64;
                let per_person = if pop > 0.0 { 1.0 / pop } else { 0.0 };
                CountyOutcome {
                    fips: c.fips.clone(),
                    name: c.name.clone(),
                    district_id: c.district_id.clone(),
                    population: c.population,
                    order: self.scenario.order_status(&c.fips),
                    evac_rate: evacuees.scale(per_person),
                    evacuees,
                    exportations,
                    receptions: recv_ci[j],
                    importations: imp_ci[j],
                    importations_per10k: imp_ci[j].scale(per_person * 1e4),
                }
            })
            .collect();

        // totals from per-replicate sums
        let total_of = |rows: &[Vec<f64>]| sorted(rows.iter().map(|r| r.iter().sum::<f64>()).collect());
        let evac_tot = total_of(samples);
        let exp_low_tot = total_of(&samples.iter().map(|e| scaled(low, e)).collect::<Vec<_>>());
        let exp_mid_tot = total_of(&samples.iter().map(|e| scaled(mid, e)).collect::<Vec<_>>());
        let exp_high_tot = total_of(&samples.iter().map(|e| scaled(high, e)).collect::<Vec<_>>());
        let evac_total = if n_origin == 0 {
            CredibleInterval::zero()
        } else {
            CredibleInterval::from_sorted(&evac_tot, nearest_rank(&evac_tot, 0.5))
        };
        let export_total = if n_origin == 0 {
            CredibleInterval::zero()
        } else {
            CredibleInterval::new(
                nearest_rank(&exp_low_tot, tail),
                nearest_rank(&exp_mid_tot, 0.5),
                nearest_rank(&exp_high_tot, 1.0 - tail),
            )
        };

        let mut zone_pop = (0u64, 0u64);
        for b in geo.block_groups() {
            if b.risk_zone.is_some() {
                match self.scenario.order_status(&b.county_fips) {
                    OrderStatus::Mandatory => zone_pop.0 += b.population,
                    OrderStatus::Voluntary => zone_pop.1 += b.population,
                    OrderStatus::None => {}
                }
            }
        }
        let warned_population = geo.counties().iter().filter(|c| c.threatened_flag).map(|c| c.population).sum();

        let mut result = ScenarioResult {
            schema_version: SCHEMA_VERSION,
            scenario: self.scenario.name.clone(),
            seed: self.scenario.seed,
            mc_samples: self.scenario.mc_samples,
            counties,
            districts: vec![],
            totals: Totals {
                evacuees: evac_total,
                exportations: export_total,
                receptions: evac_total,
                importations: export_total,
                warned_population,
                mandatory_zone_population: zone_pop.0,
                voluntary_zone_population: zone_pop.1,
            },
            warnings: self.warnings.clone(),
        };
        result.districts = aggregate_district(&result, geo.districts()).expect("geography districts are complete");
        result
    }
}

/// Runs a scenario end to end.
pub fn run_scenario(
    scenario: &Scenario,
    datasets: &Datasets,
    model: &BetaEvacModel,
    coeffs: &CoefficientSet,
) -> Result<ScenarioResult> {
    PreparedScenario::new(scenario, datasets, model, coeffs)?.run()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountyRate {
    pub rate: f64,
    pub zero_population: bool,
}

/// County evacuation rate: predicted evacuees over county population, so
/// block groups without an order or outside the surge zones weigh in at 0.
pub fn aggregate_county_rate(result: &ScenarioResult, fips: &str) -> Result<CountyRate> {
    let c = result
        .county(fips)
        .ok_or_else(|| Error::UnknownCounty(vec![fips.to_string()]))?;
    if c.population == 0 {
        return Ok(CountyRate {
            rate: 0.0,
            zero_population: true,
        });
    }
    Ok(CountyRate {
        rate: c.evacuees.mid / c.population as f64,
        zero_population: false,
    })
}

/// Rolls county outcomes up to districts. Mid values are exact sums; the
/// low and high bounds are sums of county bounds.
pub fn aggregate_district(result: &ScenarioResult, districts: &BTreeMap<String, String>) -> Result<Vec<DistrictOutcome>> {
    let mut acc: BTreeMap<&str, DistrictOutcome> = BTreeMap::new();
    for c in &result.counties {
        let d = districts
            .get(&c.fips)
            .ok_or_else(|| Error::UnmappedCounty(c.fips.clone()))?;
        let entry = acc.entry(d.as_str()).or_insert_with(|| DistrictOutcome {
            district_id: d.clone(),
            population: 0,
            counties: 0,
            evacuees: CredibleInterval::zero(),
            exportations: CredibleInterval::zero(),
            receptions: CredibleInterval::zero(),
            importations: CredibleInterval::zero(),
            receptions_share: CredibleInterval::zero(),
            importations_per10k: CredibleInterval::zero(),
        });
        entry.population += c.population;
        entry.counties += 1;
        entry.evacuees = entry.evacuees.add(&c.evacuees);
        entry.exportations = entry.exportations.add(&c.exportations);
        entry.receptions = entry.receptions.add(&c.receptions);
        entry.importations = entry.importations.add(&c.importations);
    }
    Ok(acc
        .into_values()
        .map(|mut d| {
            let per_person = if d.population > 0 { 1.0 / d.population as f64 } else { 0.0 };
            d.receptions_share = d.receptions.scale(per_person);
            d.importations_per10k = d.importations.scale(per_person * 1e4);
            d
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub key: String,
    pub a: CredibleInterval,
    pub b: CredibleInterval,
    /// `b.mid - a.mid`.
    pub mid_delta: f64,
}

impl Delta {
    fn new(key: &str, a: CredibleInterval, b: CredibleInterval) -> Self {
        Delta {
            key: key.to_string(),
            a,
            b,
            mid_delta: b.mid - a.mid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountyDelta {
    pub fips: String,
    pub evacuees: Delta,
    pub exportations: Delta,
    pub receptions: Delta,
    pub importations: Delta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistrictDelta {
    pub district_id: String,
    pub receptions: Delta,
    pub importations: Delta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioComparison {
    pub a: String,
    pub b: String,
    pub counties: Vec<CountyDelta>,
    pub districts: Vec<DistrictDelta>,
    pub totals: Vec<Delta>,
}

/// Mid-value differences `b - a`, intervals side by side.
pub fn compare_scenarios(a: &ScenarioResult, b: &ScenarioResult) -> Result<ScenarioComparison> {
    let fa: Vec<&str> = a.counties.iter().map(|c| c.fips.as_str()).collect();
    let fb: Vec<&str> = b.counties.iter().map(|c| c.fips.as_str()).collect();
    if fa != fb {
        return Err(Error::DimensionMismatch("scenario results cover different county universes".into()));
    }
    let da: Vec<&str> = a.districts.iter().map(|d| d.district_id.as_str()).collect();
    let db: Vec<&str> = b.districts.iter().map(|d| d.district_id.as_str()).collect();
    if da != db {
        return Err(Error::DimensionMismatch("scenario results cover different districts".into()));
    }
    let counties = a
        .counties
        .iter()
        .zip(&b.counties)
        .map(|(x, y)| CountyDelta {
            fips: x.fips.clone(),
            evacuees: Delta::new("evacuees", x.evacuees, y.evacuees),
            exportations: Delta::new("exportations", x.exportations, y.exportations),
            receptions: Delta::new("receptions", x.receptions, y.receptions),
            importations: Delta::new("importations", x.importations, y.importations),
        })
        .collect();
    let districts = a
        .districts
        .iter()
        .zip(&b.districts)
        .map(|(x, y)| DistrictDelta {
            district_id: x.district_id.clone(),
            receptions: Delta::new("receptions", x.receptions, y.receptions),
            importations: Delta::new("importations", x.importations, y.importations),
        })
        .collect();
    let totals = vec![
        Delta::new("evacuees", a.totals.evacuees, b.totals.evacuees),
        Delta::new("exportations", a.totals.exportations, b.totals.exportations),
        Delta::new("receptions", a.totals.receptions, b.totals.receptions),
        Delta::new("importations", a.totals.importations, b.totals.importations),
    ];
    Ok(ScenarioComparison {
        a: a.scenario.clone(),
        b: b.scenario.clone(),
        counties,
        districts,
        totals,
    })
}

/// Zone/intensity cells with a fitted mean, for reporting.
pub fn cell_table(model: &BetaEvacModel) -> Vec<(u8, u8, f64)> {
    let mut out = Vec::with_capacity(LEVELS * LEVELS);
    for z in 0..LEVELS as u8 {
        for h in 0..LEVELS as u8 {
            out.push((z, h, model.predict_rate(z, h).expect("levels in range")));
        }
    }
    out
}
