//! Geographic, demographic and infrastructure inputs.
//!
//! Everything downstream reads from a [`Geography`]: the county table, the
//! census block groups that carry surge risk zones, and the planning-district
//! map. Loaders validate on the way in, so a `Geography` that exists is
//! referentially intact and can be shared read-only across scenario runs.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius in statute miles.
pub const EARTH_RADIUS_MILES: f64 = 3958.8;

/// Relative county-vs-block-group population mismatch tolerated as a warning.
pub const POPULATION_TOLERANCE: f64 = 0.01;

pub const BLOCK_GROUP_HEADER: [&str; 6] = ["geoid", "county_fips", "population", "lat", "lon", "risk_zone"];
pub const COUNTY_HEADER: [&str; 10] = [
    "fips",
    "name",
    "district_id",
    "population",
    "lat",
    "lon",
    "hotel_count",
    "msa_flag",
    "interstate_flag",
    "pct_white",
];
pub const DISTRICT_HEADER: [&str; 2] = ["fips", "district_id"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        let p = LatLon { lat, lon };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lat.is_finite() && (-90.0..=90.0).contains(&self.lat)) {
            return Err(Error::Domain(format!("latitude {} outside [-90, 90]", self.lat)));
        }
        if !(self.lon.is_finite() && (-180.0..=180.0).contains(&self.lon)) {
            return Err(Error::Domain(format!("longitude {} outside [-180, 180]", self.lon)));
        }
        Ok(())
    }
}

/// Haversine distance on a sphere of radius [`EARTH_RADIUS_MILES`].
pub fn great_circle_miles(a: LatLon, b: LatLon) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(haversine_unchecked(a, b))
}

pub(crate) fn haversine_unchecked(a: LatLon, b: LatLon) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    // h can drift a hair above 1 for antipodes
    2.0 * EARTH_RADIUS_MILES * h.sqrt().min(1.0).asin()
}

/// Storm-surge risk zone. Zone `k` floods under hurricanes of category `k`
/// and above.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct RiskZone(u8);

impl RiskZone {
    pub fn new(zone: u8) -> Result<Self> {
        if (1..=5).contains(&zone) {
            Ok(RiskZone(zone))
        } else {
            Err(Error::Domain(format!("risk zone {zone} outside 1..=5")))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn floods_under(self, category: u8) -> bool {
        category >= self.0
    }
}

impl TryFrom<u8> for RiskZone {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        RiskZone::new(v)
    }
}

impl From<RiskZone> for u8 {
    fn from(z: RiskZone) -> u8 {
        z.0
    }
}

impl fmt::Display for RiskZone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusBlockGroup {
    pub id: String,
    pub county_fips: String,
    pub population: u64,
    pub centroid: LatLon,
    pub risk_zone: Option<RiskZone>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct County {
    pub fips: String,
    pub name: String,
    pub district_id: String,
    pub population: u64,
    pub centroid: LatLon,
    pub hotel_count: u64,
    pub msa_flag: bool,
    pub interstate_flag: bool,
    pub pct_white: f64,
    #[serde(default)]
    pub threatened_flag: bool,
}

impl County {
    fn validate(&self) -> Result<()> {
        if self.fips.trim().is_empty() {
            return Err(Error::Validation("county with empty fips".into()));
        }
        if self.district_id.trim().is_empty() {
            return Err(Error::Validation(format!("county {} has no district_id", self.fips)));
        }
        if !(0.0..=1.0).contains(&self.pct_white) {
            return Err(Error::Validation(format!(
                "county {}: pct_white {} outside [0, 1]",
                self.fips, self.pct_white
            )));
        }
        self.centroid.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForecastTrack {
    pub hurricane_name: String,
    pub category_at_landfall: u8,
    pub warned_county_fips: BTreeSet<String>,
}

impl ForecastTrack {
    pub fn validate(&self, counties: &[County]) -> Result<()> {
        if self.category_at_landfall > 5 {
            return Err(Error::Domain(format!(
                "hurricane category {} outside 0..=5",
                self.category_at_landfall
            )));
        }
        let known: BTreeSet<&str> = counties.iter().map(|c| c.fips.as_str()).collect();
        let unknown: Vec<String> = self
            .warned_county_fips
            .iter()
            .filter(|f| !known.contains(f.as_str()))
            .cloned()
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::UnknownCounty(unknown))
        }
    }
}

/// Sets `threatened_flag` exactly for the warned counties.
pub fn apply_track(counties: &[County], track: &ForecastTrack) -> Result<Vec<County>> {
    track.validate(counties)?;
    Ok(counties
        .iter()
        .map(|c| County {
            threatened_flag: track.warned_county_fips.contains(&c.fips),
            ..c.clone()
        })
        .collect())
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "t" | "yes" | "y" => Some(true),
        "0" | "false" | "f" | "no" | "n" => Some(false),
        _ => None,
    }
}

fn open_csv(path: &Path, header: &[&str]) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(file);
    let got = rdr
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .iter()
        .map(|h| h.trim().trim_start_matches('\u{feff}').to_string())
        .collect::<Vec<_>>();
    if got != header {
        return Err(Error::parse(
            path,
            1,
            format!("expected header `{}`, found `{}`", header.join(","), got.join(",")),
        ));
    }
    Ok(rdr)
}

/// Iterate over records, attaching the 1-based file line number.
pub(crate) fn csv_records(
    path: &Path,
    header: &[&str],
) -> Result<impl Iterator<Item = Result<(u64, csv::StringRecord)>>> {
    let rdr = open_csv(path, header)?;
    let owned = path.to_path_buf();
    Ok(rdr.into_records().map(move |rec| {
        rec.map(|r| (r.position().map(|p| p.line()).unwrap_or(0), r))
            .map_err(|e| {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                Error::parse(&owned, line, e.to_string())
            })
    }))
}

pub(crate) fn field<T: std::str::FromStr>(
    path: &Path,
    line: u64,
    rec: &csv::StringRecord,
    idx: usize,
    name: &str,
) -> Result<T>
where
    T::Err: fmt::Display,
{
    let raw = rec.get(idx).unwrap_or("").trim();
    raw.parse::<T>()
        .map_err(|e| Error::parse(path, line, format!("field `{name}` = {raw:?}: {e}")))
}

/// Load the county table. `.geojson`/`.json` files are read as a
/// FeatureCollection whose properties carry the CSV field names.
pub fn load_counties(path: impl AsRef<Path>) -> Result<Vec<County>> {
    let path = path.as_ref();
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let counties = if ext == "geojson" || ext == "json" {
        load_counties_geojson(path)?
    } else {
        load_counties_csv(path)?
    };
    let mut seen = BTreeSet::new();
    for c in &counties {
        if !seen.insert(c.fips.clone()) {
            return Err(Error::Validation(format!("duplicate county fips {}", c.fips)));
        }
    }
    Ok(counties)
}

fn load_counties_csv(path: &Path) -> Result<Vec<County>> {
    let mut out = Vec::new();
    for rec in csv_records(path, &COUNTY_HEADER)? {
        let (line, r) = rec?;
        let flag = |idx: usize, name: &str| {
            let raw = r.get(idx).unwrap_or("");
            parse_bool(raw).ok_or_else(|| Error::parse(path, line, format!("field `{name}` = {raw:?}: not a boolean")))
        };
        let lat: f64 = field(path, line, &r, 4, "lat")?;
        let lon: f64 = field(path, line, &r, 5, "lon")?;
        let county = County {
            fips: r[0].trim().to_string(),
            name: r[1].trim().to_string(),
            district_id: r[2].trim().to_string(),
            population: field(path, line, &r, 3, "population")?,
            centroid: LatLon::new(lat, lon).map_err(|e| Error::parse(path, line, e.to_string()))?,
            hotel_count: field(path, line, &r, 6, "hotel_count")?,
            msa_flag: flag(7, "msa_flag")?,
            interstate_flag: flag(8, "interstate_flag")?,
            pct_white: field(path, line, &r, 9, "pct_white")?,
            threatened_flag: false,
        };
        county.validate().map_err(|e| match e {
            Error::Validation(m) => Error::Validation(format!("{}: line {line}: {m}", path.display())),
            other => Error::parse(path, line, other.to_string()),
        })?;
        out.push(county);
    }
    Ok(out)
}

#[derive(Deserialize)]
struct FeatureCollection {
    features: Vec<Feature>,
}

#[derive(Deserialize)]
struct Feature {
    properties: CountyProperties,
}

#[derive(Deserialize)]
struct CountyProperties {
    fips: String,
    name: String,
    district_id: String,
    population: u64,
    lat: f64,
    lon: f64,
    hotel_count: u64,
    #[serde(deserialize_with = "bool_or_int")]
    msa_flag: bool,
    #[serde(deserialize_with = "bool_or_int")]
    interstate_flag: bool,
    pct_white: f64,
}

fn bool_or_int<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<bool, D::Error> {
    use serde::de::Error as _;
    match serde_json::Value::deserialize(d)? {
        serde_json::Value::Bool(b) => Ok(b),
        serde_json::Value::Number(n) if n.as_u64() == Some(0) => Ok(false),
        serde_json::Value::Number(n) if n.as_u64() == Some(1) => Ok(true),
        serde_json::Value::String(s) => parse_bool(&s).ok_or_else(|| D::Error::custom("not a boolean")),
        other => Err(D::Error::custom(format!("not a boolean: {other}"))),
    }
}

fn load_counties_geojson(path: &Path) -> Result<Vec<County>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let fc: FeatureCollection =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line() as u64, e.to_string()))?;
    fc.features
        .into_iter()
        .enumerate()
        .map(|(i, f)| {
            let p = f.properties;
            let county = County {
                fips: p.fips,
                name: p.name,
                district_id: p.district_id,
                population: p.population,
                centroid: LatLon::new(p.lat, p.lon)?,
                hotel_count: p.hotel_count,
                msa_flag: p.msa_flag,
                interstate_flag: p.interstate_flag,
                pct_white: p.pct_white,
                threatened_flag: false,
            };
            county
                .validate()
                .map_err(|e| Error::Validation(format!("{}: feature {i}: {e}", path.display())))?;
            Ok(county)
        })
        .collect()
}

/// Load block groups, checking each against the county table.
pub fn load_block_groups(path: impl AsRef<Path>, counties: &[County]) -> Result<Vec<CensusBlockGroup>> {
    let path = path.as_ref();
    let known: BTreeSet<&str> = counties.iter().map(|c| c.fips.as_str()).collect();
    let mut seen = BTreeSet::new();
    let mut unknown = BTreeSet::new();
    let mut out = Vec::new();
    for rec in csv_records(path, &BLOCK_GROUP_HEADER)? {
        let (line, r) = rec?;
        let id = r[0].trim().to_string();
        if id.is_empty() {
            return Err(Error::parse(path, line, "empty geoid"));
        }
        if !seen.insert(id.clone()) {
            return Err(Error::parse(path, line, format!("duplicate geoid {id}")));
        }
        let county_fips = r[1].trim().to_string();
        let lat: f64 = field(path, line, &r, 3, "lat")?;
        let lon: f64 = field(path, line, &r, 4, "lon")?;
        let zone_raw = r[5].trim();
        let risk_zone = if zone_raw.is_empty() {
            None
        } else {
            let z: u8 = field(path, line, &r, 5, "risk_zone")?;
            Some(RiskZone::new(z).map_err(|e| Error::parse(path, line, e.to_string()))?)
        };
        if !known.contains(county_fips.as_str()) {
            unknown.insert(county_fips.clone());
        }
        out.push(CensusBlockGroup {
            id,
            county_fips,
            population: field(path, line, &r, 2, "population")?,
            centroid: LatLon::new(lat, lon).map_err(|e| Error::parse(path, line, e.to_string()))?,
            risk_zone,
        });
    }
    if !unknown.is_empty() {
        return Err(Error::UnknownCounty(unknown.into_iter().collect()));
    }
    Ok(out)
}

pub type DistrictMap = BTreeMap<String, String>;

pub fn load_districts(path: impl AsRef<Path>) -> Result<DistrictMap> {
    let path = path.as_ref();
    let mut out = DistrictMap::new();
    for rec in csv_records(path, &DISTRICT_HEADER)? {
        let (line, r) = rec?;
        let fips = r[0].trim().to_string();
        let district = r[1].trim().to_string();
        if district.is_empty() {
            return Err(Error::parse(path, line, format!("county {fips} has empty district_id")));
        }
        if out.insert(fips.clone(), district).is_some() {
            return Err(Error::parse(path, line, format!("county {fips} mapped to more than one district")));
        }
    }
    Ok(out)
}

fn fmt_f64(x: f64) -> String {
    // shortest round-trip representation
    let s = format!("{x}");
    if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

fn write_rows(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file);
    let io = |e: csv::Error| Error::io(path, std::io::Error::other(e.to_string()));
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Canonical CSV form: rows sorted by fips, fixed float formatting.
pub fn write_counties_csv(path: impl AsRef<Path>, counties: &[County]) -> Result<()> {
    let mut sorted: Vec<&County> = counties.iter().collect();
    sorted.sort_by(|a, b| a.fips.cmp(&b.fips));
    write_rows(
        path.as_ref(),
        &COUNTY_HEADER,
        sorted.into_iter().map(|c| {
            vec![
                c.fips.clone(),
                c.name.clone(),
                c.district_id.clone(),
                c.population.to_string(),
                fmt_f64(c.centroid.lat),
                fmt_f64(c.centroid.lon),
                c.hotel_count.to_string(),
                u8::from(c.msa_flag).to_string(),
                u8::from(c.interstate_flag).to_string(),
                fmt_f64(c.pct_white),
            ]
        }),
    )
}

pub fn write_block_groups_csv(path: impl AsRef<Path>, cbgs: &[CensusBlockGroup]) -> Result<()> {
    let mut sorted: Vec<&CensusBlockGroup> = cbgs.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    write_rows(
        path.as_ref(),
        &BLOCK_GROUP_HEADER,
        sorted.into_iter().map(|b| {
            vec![
                b.id.clone(),
                b.county_fips.clone(),
                b.population.to_string(),
                fmt_f64(b.centroid.lat),
                fmt_f64(b.centroid.lon),
                b.risk_zone.map(|z| z.to_string()).unwrap_or_default(),
            ]
        }),
    )
}

pub fn write_districts_csv(path: impl AsRef<Path>, districts: &DistrictMap) -> Result<()> {
    write_rows(
        path.as_ref(),
        &DISTRICT_HEADER,
        districts.iter().map(|(f, d)| vec![f.clone(), d.clone()]),
    )
}

/// Validated, immutable bundle of the region's geography.
#[derive(Debug, Clone)]
pub struct Geography {
    counties: Vec<County>,
    block_groups: Vec<CensusBlockGroup>,
    districts: DistrictMap,
    county_index: HashMap<String, usize>,
    warnings: Vec<String>,
}

impl Geography {
    /// Cross-validates the tables and replaces county centroids with the
    /// population-weighted block-group centroid wherever a county has
    /// populated block groups.
    pub fn new(
        mut counties: Vec<County>,
        block_groups: Vec<CensusBlockGroup>,
        districts: DistrictMap,
    ) -> Result<Self> {
        let mut warnings = Vec::new();
        let county_index: HashMap<String, usize> =
            counties.iter().enumerate().map(|(i, c)| (c.fips.clone(), i)).collect();
        if county_index.len() != counties.len() {
            return Err(Error::Validation("duplicate county fips".into()));
        }

        let unknown: BTreeSet<String> = block_groups
            .iter()
            .filter(|b| !county_index.contains_key(&b.county_fips))
            .map(|b| b.county_fips.clone())
            .collect();
        if !unknown.is_empty() {
            return Err(Error::UnknownCounty(unknown.into_iter().collect()));
        }

        for c in &counties {
            match districts.get(&c.fips) {
                None => return Err(Error::UnmappedCounty(c.fips.clone())),
                Some(d) if *d != c.district_id => {
                    return Err(Error::Validation(format!(
                        "county {} has district {} in the county table but {} in the district map",
                        c.fips, c.district_id, d
                    )))
                }
                Some(_) => {}
            }
        }
        let extra: Vec<&String> = districts.keys().filter(|f| !county_index.contains_key(*f)).collect();
        if !extra.is_empty() {
            warnings.push(format!("district map lists {} counties absent from the county table", extra.len()));
        }

        // (population, Σ pop·lat, Σ pop·lon)
        let mut sums: Vec<(u64, f64, f64)> = vec![(0, 0.0, 0.0); counties.len()];
        for b in &block_groups {
            let s = &mut sums[county_index[&b.county_fips]];
            s.0 += b.population;
            s.1 += b.population as f64 * b.centroid.lat;
            s.2 += b.population as f64 * b.centroid.lon;
        }
        if !block_groups.is_empty() {
            for (c, &(pop, slat, slon)) in counties.iter_mut().zip(&sums) {
                if pop != c.population {
                    let rel = if c.population == 0 {
                        f64::INFINITY
                    } else {
                        (pop as f64 - c.population as f64).abs() / c.population as f64
                    };
                    if rel > POPULATION_TOLERANCE {
                        return Err(Error::Validation(format!(
                            "county {} population {} differs from its block-group total {} by {:.2}%",
                            c.fips,
                            c.population,
                            pop,
                            rel * 100.0
                        )));
                    }
                    warnings.push(format!(
                        "county {} population {} vs block-group total {} ({:.3}% mismatch)",
                        c.fips,
                        c.population,
                        pop,
                        rel * 100.0
                    ));
                }
                if pop > 0 {
                    c.centroid = LatLon {
                        lat: slat / pop as f64,
                        lon: slon / pop as f64,
                    };
                }
            }
        }

        Ok(Geography {
            counties,
            block_groups,
            districts,
            county_index,
            warnings,
        })
    }

    /// Loads `cbg.csv`, `counties.csv` and `districts.csv` from a snapshot
    /// directory. `counties.geojson` is used when the CSV is absent.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let csv_path = dir.join("counties.csv");
        let counties = if csv_path.exists() {
            load_counties(&csv_path)?
        } else {
            load_counties(dir.join("counties.geojson"))?
        };
        let block_groups = load_block_groups(dir.join("cbg.csv"), &counties)?;
        let districts = load_districts(dir.join("districts.csv"))?;
        Geography::new(counties, block_groups, districts)
    }

    pub fn counties(&self) -> &[County] {
        &self.counties
    }

    pub fn block_groups(&self) -> &[CensusBlockGroup] {
        &self.block_groups
    }

    pub fn districts(&self) -> &DistrictMap {
        &self.districts
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn county(&self, fips: &str) -> Option<&County> {
        self.county_index.get(fips).map(|&i| &self.counties[i])
    }

    pub fn county_position(&self, fips: &str) -> Option<usize> {
        self.county_index.get(fips).copied()
    }

    /// Copy of the geography with threatened flags set from `track`.
    pub fn with_track(&self, track: &ForecastTrack) -> Result<Self> {
        Ok(Geography {
            counties: apply_track(&self.counties, track)?,
            ..self.clone()
        })
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
