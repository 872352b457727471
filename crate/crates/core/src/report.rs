//! Tabular and map exports of a scenario result.

use std::path::Path;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::geodata::{write_text, Geography};
use crate::scenario::{CredibleInterval, ScenarioResult};

const COUNTY_METRICS: [&str; 6] = [
    "evac_rate",
    "evacuees",
    "exportations",
    "receptions",
    "importations",
    "importations_per10k",
];

const DISTRICT_METRICS: [&str; 6] = [
    "evacuees",
    "exportations",
    "receptions",
    "importations",
    "receptions_share",
    "importations_per10k",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    GeoJson,
    Both,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "geojson" => Ok(OutputFormat::GeoJson),
            "both" => Ok(OutputFormat::Both),
            other => Err(Error::Validation(format!("unknown output format {other:?}"))),
        }
    }
}

fn metric_header(metrics: &[&str]) -> Vec<String> {
    metrics
        .iter()
        .flat_map(|m| ["low", "mid", "high"].map(|b| format!("{m}_{b}")))
        .collect()
}

fn push_ci(row: &mut Vec<String>, ci: &CredibleInterval) {
    row.extend([ci.low, ci.mid, ci.high].map(|x| x.to_string()));
}

fn to_csv(header: Vec<String>, rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Validation(format!("csv export: {e}"));
    w.write_record(&header).map_err(io)?;
    for r in rows {
        w.write_record(&r).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Validation(format!("csv export: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn counties_csv(result: &ScenarioResult) -> Result<String> {
    let mut header: Vec<String> = ["fips", "name", "district_id", "population", "order"]
        .map(String::from)
        .to_vec();
    header.extend(metric_header(&COUNTY_METRICS));
    let rows = result
        .counties
        .iter()
        .map(|c| {
            let mut row = vec![
                c.fips.clone(),
                c.name.clone(),
                c.district_id.clone(),
                c.population.to_string(),
                serde_json::to_value(c.order).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
            ];
            for ci in [
                &c.evac_rate,
                &c.evacuees,
                &c.exportations,
                &c.receptions,
                &c.importations,
                &c.importations_per10k,
            ] {
                push_ci(&mut row, ci);
            }
            row
        })
        .collect();
    to_csv(header, rows)
}

pub fn districts_csv(result: &ScenarioResult) -> Result<String> {
    let mut header: Vec<String> = ["district_id", "population", "counties"].map(String::from).to_vec();
    header.extend(metric_header(&DISTRICT_METRICS));
    let rows = result
        .districts
        .iter()
        .map(|d| {
            let mut row = vec![d.district_id.clone(), d.population.to_string(), d.counties.to_string()];
            for ci in [
                &d.evacuees,
                &d.exportations,
                &d.receptions,
                &d.importations,
                &d.receptions_share,
                &d.importations_per10k,
            ] {
                push_ci(&mut row, ci);
            }
            row
        })
        .collect();
    to_csv(header, rows)
}

fn flat_ci(props: &mut Map<String, Value>, name: &str, ci: &CredibleInterval) {
    props.insert(format!("{name}_low"), json!(ci.low));
    props.insert(format!("{name}_mid"), json!(ci.mid));
    props.insert(format!("{name}_high"), json!(ci.high));
}

/// One Point feature per county at its population-weighted centroid.
pub fn counties_geojson(result: &ScenarioResult, geography: &Geography) -> Result<Value> {
    let features = result
        .counties
        .iter()
        .map(|c| {
            let county = geography
                .county(&c.fips)
                .ok_or_else(|| Error::UnknownCounty(vec![c.fips.clone()]))?;
            let mut props = Map::new();
            props.insert("fips".into(), json!(c.fips));
            props.insert("name".into(), json!(c.name));
            props.insert("district_id".into(), json!(c.district_id));
            props.insert("population".into(), json!(c.population));
            props.insert("order".into(), serde_json::to_value(c.order)?);
            for (name, ci) in COUNTY_METRICS.iter().zip([
                &c.evac_rate,
                &c.evacuees,
                &c.exportations,
                &c.receptions,
                &c.importations,
                &c.importations_per10k,
            ]) {
                flat_ci(&mut props, name, ci);
            }
            Ok(json!({
                "type": "Feature",
                "geometry": {
                    "type": "Point",
                    "coordinates": [county.centroid.lon, county.centroid.lat],
                },
                "properties": props,
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(json!({
        "type": "FeatureCollection",
        "features": features,
    }))
}

pub fn summary(result: &ScenarioResult) -> Value {
    json!({
        "schema_version": result.schema_version,
        "scenario": result.scenario,
        "seed": result.seed,
        "mc_samples": result.mc_samples,
        "totals": result.totals,
        "warnings": result.warnings,
    })
}

/// Writes `counties.csv`, `districts.csv`, `result.geojson` and
/// `summary.json` into `dir` according to `format`. Returns the files written.
pub fn write_outputs(
    result: &ScenarioResult,
    geography: &Geography,
    dir: impl AsRef<Path>,
    format: OutputFormat,
) -> Result<Vec<std::path::PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: &str, text: String| -> Result<()> {
        let p = dir.join(name);
        write_text(&p, &text)?;
        written.push(p);
        Ok(())
    };
    if matches!(format, OutputFormat::Csv | OutputFormat::Both) {
        put("counties.csv", counties_csv(result)?)?;
        put("districts.csv", districts_csv(result)?)?;
    }
    if matches!(format, OutputFormat::GeoJson | OutputFormat::Both) {
        put(
            "result.geojson",
            serde_json::to_string_pretty(&counties_geojson(result, geography)?)?,
        )?;
    }
    put("summary.json", serde_json::to_string_pretty(&summary(result))?)?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{CountyOutcome, DistrictOutcome, OrderStatus, Totals, SCHEMA_VERSION};

    fn result() -> ScenarioResult {
        let ci = CredibleInterval::new(1.0, 2.0, 4.0);
        ScenarioResult {
            schema_version: SCHEMA_VERSION,
            scenario: "s".into(),
            seed: 3,
            mc_samples: 10,
            counties: vec![CountyOutcome {
                fips: "48001".into(),
                name: "Anderson".into(),
                district_id: "TYL".into(),
                population: 100,
                order: OrderStatus::Mandatory,
                evac_rate: ci.scale(0.01),
                evacuees: ci,
                exportations: ci,
                receptions: ci,
                importations: ci,
                importations_per10k: ci,
            }],
            districts: vec![DistrictOutcome {
                district_id: "TYL".into(),
                population: 100,
                counties: 1,
                evacuees: ci,
                exportations: ci,
                receptions: ci,
                importations: ci,
                receptions_share: ci,
                importations_per10k: ci,
            }],
            totals: Totals {
                evacuees: ci,
                exportations: ci,
                receptions: ci,
                importations: ci,
                warned_population: 100,
                mandatory_zone_population: 50,
                voluntary_zone_population: 0,
            },
            warnings: vec![],
        }
    }

    #[test]
    fn county_csv_has_three_columns_per_metric() {
        let text = counties_csv(&result()).unwrap();
        let mut rows = csv::Reader::from_reader(text.as_bytes());
        let header = rows.headers().unwrap().clone();
        assert_eq!(header.len(), 5 + 3 * COUNTY_METRICS.len());
        assert_eq!(&header[5], "evac_rate_low");
        let row = rows.records().next().unwrap().unwrap();
        let col = header.iter().position(|h| h == "exportations_high").unwrap();
        assert_eq!(row[col].parse::<f64>().unwrap(), 4.0);
        assert!(districts_csv(&result()).unwrap().starts_with("district_id,population,counties,evacuees_low"));
    }

    #[test]
    fn summary_carries_schema_and_totals() {
        let s = summary(&result());
        assert_eq!(s["schema_version"], SCHEMA_VERSION);
        assert_eq!(s["totals"]["evacuees"]["mid"], 2.0);
        assert_eq!(s["totals"]["evacuees"]["level"], 0.9);
    }

    #[test]
    fn format_names() {
        assert_eq!("GeoJSON".parse::<OutputFormat>().unwrap(), OutputFormat::GeoJson);
        assert!("xml".parse::<OutputFormat>().is_err());
    }
}
