//! Shared fixtures: a three-county world small enough to recompute by hand.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use chrono::NaiveDate;
use stormflux_core::odchoice::AccommodationSplit;
use stormflux_core::scenario::{PrevalenceSource, RateDraw, RateUncertainty};
use stormflux_core::{
    BetaEvacModel, CaseTable, CensusBlockGroup, CoefficientSet, County, Datasets, DetectionBounds, ForecastTrack,
    Geography, LatLon, RiskZone, Scenario,
};

pub const AS_OF: &str = "2020-08-26";

pub fn snapshot_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn as_of() -> NaiveDate {
    AS_OF.parse().unwrap()
}

pub struct ToyCounty {
    pub fips: &'static str,
    pub population: u64,
    pub lat: f64,
    pub lon: f64,
    pub hotels: u64,
    pub msa: bool,
    pub interstate: bool,
    pub pct_white: f64,
    /// (population, zone) per block group; zone `None` is outside the surge area.
    pub block_groups: &'static [(u64, Option<u8>)],
    /// Reports inside the prevalence window.
    pub window_cases: u64,
}

pub const TOY: [ToyCounty; 3] = [
    ToyCounty {
        fips: "T01",
        population: 10_000,
        lat: 29.3,
        lon: -94.8,
        hotels: 40,
        msa: true,
        interstate: true,
        pct_white: 0.55,
        block_groups: &[(3_000, Some(1)), (2_500, Some(3)), (4_500, None)],
        window_cases: 37,
    },
    ToyCounty {
        fips: "T02",
        population: 8_000,
        lat: 30.1,
        lon: -94.1,
        hotels: 12,
        msa: false,
        interstate: true,
        pct_white: 0.7,
        block_groups: &[(1_000, Some(1)), (2_000, Some(2)), (5_000, Some(5))],
        window_cases: 11,
    },
    ToyCounty {
        fips: "T03",
        population: 50_000,
        lat: 30.27,
        lon: -97.74,
        hotels: 300,
        msa: true,
        interstate: false,
        pct_white: 0.62,
        block_groups: &[(50_000, None)],
        window_cases: 90,
    },
];

pub fn toy_counties() -> Vec<County> {
    TOY.iter()
        .map(|t| County {
            fips: t.fips.into(),
            name: format!("Toy {}", t.fips),
            district_id: if t.fips == "T03" { "INLAND".into() } else { "COAST".into() },
            population: t.population,
            centroid: LatLon { lat: t.lat, lon: t.lon },
            hotel_count: t.hotels,
            msa_flag: t.msa,
            interstate_flag: t.interstate,
            pct_white: t.pct_white,
            threatened_flag: false,
        })
        .collect()
}

pub fn toy_geography() -> Geography {
    let counties = toy_counties();
    let mut cbgs = Vec::new();
    for t in &TOY {
        for (k, &(pop, zone)) in t.block_groups.iter().enumerate() {
            cbgs.push(CensusBlockGroup {
                id: format!("{}-{k}", t.fips),
                county_fips: t.fips.into(),
                population: pop,
                centroid: LatLon { lat: t.lat, lon: t.lon },
                risk_zone: zone.map(|z| RiskZone::new(z).unwrap()),
            });
        }
    }
    let districts: BTreeMap<String, String> = counties.iter().map(|c| (c.fips.clone(), c.district_id.clone())).collect();
    Geography::new(counties, cbgs, districts).unwrap()
}

/// Window reports land on three days inside the window, plus noise outside it.
pub fn toy_cases() -> CaseTable {
    let mut t = CaseTable::new();
    let day = |s: &str| s.parse::<NaiveDate>().unwrap();
    for c in &TOY {
        let a = c.window_cases / 3;
        t.insert(c.fips, day("2020-08-17"), a);
        t.insert(c.fips, day("2020-08-21"), a);
        t.insert(c.fips, day("2020-08-26"), c.window_cases - 2 * a);
        t.insert(c.fips, day("2020-08-16"), 500);
        t.insert(c.fips, day("2020-08-27"), 500);
    }
    t
}

pub fn toy_datasets() -> Datasets {
    Datasets {
        geography: toy_geography(),
        cases: Some(toy_cases()),
        data_dir: None,
    }
}

pub fn toy_model() -> BetaEvacModel {
    BetaEvacModel::new(
        -1.1,
        [0.0, -0.35, -1.1, -1.65, -2.1, -2.4],
        [0.0, 0.6, 1.5, 2.6, 4.3, 4.9],
        30.0,
    )
    .unwrap()
}

pub fn toy_coefficients() -> CoefficientSet {
    CoefficientSet::from_json(
        r#"{
          "friends": {"distance": -0.004, "log_population": 0.8, "threatened": -2.0, "msa": 0.5, "pct_white": 0.4},
          "hotel": {"distance": -0.006, "log_hotels": 0.9, "threatened": -1.5, "interstate": 0.3, "pct_white": 0.2}
        }"#,
    )
    .unwrap()
}

/// T01 under a mandatory order, T02 voluntary, everything warned except T03.
pub fn toy_scenario(category: u8, uncertainty: RateUncertainty) -> Scenario {
    let set = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
    Scenario {
        name: "toy".into(),
        track: ForecastTrack {
            hurricane_name: "toy".into(),
            category_at_landfall: category,
            warned_county_fips: set(&["T01", "T02"]),
        },
        mandatory_fips: set(&["T01"]),
        voluntary_fips: set(&["T02"]),
        prevalence_source: PrevalenceSource::Computed {
            as_of: as_of(),
            window_days: 10,
            detection: DetectionBounds::default(),
        },
        split: AccommodationSplit::default(),
        mc_samples: 400,
        seed: 7,
        rate_uncertainty: uncertainty,
        rate_draw: RateDraw::PerBlockGroup,
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}
