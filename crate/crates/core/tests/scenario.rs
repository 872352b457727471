mod common;

use std::collections::BTreeMap;

use common::{rel_err, toy_coefficients, toy_datasets, toy_model, toy_scenario, TOY};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use stormflux_core::scenario::{
    aggregate_district, compare_scenarios, nearest_rank, PreparedScenario, RateDraw, RateUncertainty,
};
use stormflux_core::{run_scenario, Error, Scenario, ScenarioResult};

const FRIENDS_SHARE: f64 = 0.6;

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn haversine(a: (f64, f64), b: (f64, f64)) -> f64 {
    let r = 3958.8;
    let (p1, p2) = (a.0.to_radians(), b.0.to_radians());
    let h = ((p2 - p1) / 2.0).sin().powi(2) + p1.cos() * p2.cos() * ((b.1 - a.1).to_radians() / 2.0).sin().powi(2);
    2.0 * r * h.sqrt().asin()
}

/// Hand computation of the toy world: county order, rates, OD rows and
/// prevalence all re-derived from the fixture constants.
struct Oracle {
    /// Per-county rate of every block group under an order, `None` otherwise.
    cbg_rates: Vec<Vec<Option<f64>>>,
    prevalence: [(f64, f64, f64); 3],
    od: [[f64; 3]; 3],
}

fn oracle(category: u8) -> Oracle {
    let m = toy_model();
    let warned = [true, true, false];
    let order_category = [Some(category), Some(0), None];
    let cbg_rates = TOY
        .iter()
        .zip(order_category)
        .map(|(t, h)| {
            t.block_groups
                .iter()
                .map(|&(_, z)| match (z, h) {
                    (Some(z), Some(h)) => {
                        Some(logistic(m.alpha + m.beta_zone[z as usize] + m.beta_intensity[h as usize]))
                    }
                    _ => None,
                })
                .collect()
        })
        .collect();
    let prevalence = std::array::from_fn(|i| {
        let p = TOY[i].window_cases as f64 / TOY[i].population as f64;
        (p * 3.0, p * 5.0, p * 10.0)
    });

    let c = toy_coefficients();
    let mut od = [[0.0; 3]; 3];
    for i in 0..3 {
        let mut uf = [f64::NEG_INFINITY; 3];
        let mut uh = [f64::NEG_INFINITY; 3];
        for j in 0..3 {
            if i == j {
                continue;
            }
            let (o, d) = (&TOY[i], &TOY[j]);
            let miles = haversine((o.lat, o.lon), (d.lat, d.lon));
            let thr = if warned[j] { 1.0 } else { 0.0 };
            let flag = |b: bool| if b { 1.0 } else { 0.0 };
            uf[j] = c.friends["distance"] * miles
                + c.friends["log_population"] * (1.0 + d.population as f64).ln()
                + c.friends["threatened"] * thr
                + c.friends["msa"] * flag(d.msa)
                + c.friends["pct_white"] * d.pct_white;
            uh[j] = c.hotel["distance"] * miles
                + c.hotel["log_hotels"] * (1.0 + d.hotels as f64).ln()
                + c.hotel["threatened"] * thr
                + c.hotel["interstate"] * flag(d.interstate)
                + c.hotel["pct_white"] * d.pct_white;
        }
        let sf: f64 = uf.iter().map(|u| u.exp()).sum();
        let sh: f64 = uh.iter().map(|u| u.exp()).sum();
        for j in 0..3 {
            od[i][j] = FRIENDS_SHARE * uf[j].exp() / sf + (1.0 - FRIENDS_SHARE) * uh[j].exp() / sh;
        }
    }
    Oracle {
        cbg_rates,
        prevalence,
        od,
    }
}

impl Oracle {
    fn point_evacuees(&self) -> [f64; 3] {
        std::array::from_fn(|i| {
            TOY[i]
                .block_groups
                .iter()
                .zip(&self.cbg_rates[i])
                .map(|(&(pop, _), r)| r.map_or(0.0, |r| pop as f64 * r))
                .sum()
        })
    }

    fn push(&self, origin: &[f64; 3]) -> [f64; 3] {
        std::array::from_fn(|j| (0..3).map(|i| origin[i] * self.od[i][j]).sum())
    }

    /// Replays the per-replicate streams block group by block group.
    fn sampled_evacuees(&self, seed: u64, replicates: u64, lambda: f64) -> Vec<[f64; 3]> {
        (0..replicates)
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(r);
                let mut e = [0.0; 3];
                for i in 0..3 {
                    for (&(pop, _), rate) in TOY[i].block_groups.iter().zip(&self.cbg_rates[i]) {
                        if let Some(mu) = rate {
                            let x = Beta::new(mu * lambda, (1.0 - mu) * lambda).unwrap().sample(&mut rng);
                            e[i] += pop as f64 * x;
                        }
                    }
                }
                e
            })
            .collect()
    }
}

fn assert_close(what: &str, got: f64, want: f64, tol: f64) {
    assert!(rel_err(got, want) <= tol, "{what}: got {got}, want {want}");
}

fn mids(r: &ScenarioResult, f: impl Fn(&stormflux_core::scenario::CountyOutcome) -> f64) -> [f64; 3] {
    std::array::from_fn(|i| f(r.county(TOY[i].fips).unwrap()))
}

#[test]
fn point_run_matches_brute_force() {
    let o = oracle(4);
    let r = run_scenario(&toy_scenario(4, RateUncertainty::Point), &toy_datasets(), &toy_model(), &toy_coefficients())
        .unwrap();
    let evac = o.point_evacuees();
    let exp: [f64; 3] = std::array::from_fn(|i| evac[i] * o.prevalence[i].1);
    let recv = o.push(&evac);
    let imp = o.push(&exp);
    for (what, got, want) in [
        ("evacuees", mids(&r, |c| c.evacuees.mid), evac),
        ("exportations", mids(&r, |c| c.exportations.mid), exp),
        ("receptions", mids(&r, |c| c.receptions.mid), recv),
        ("importations", mids(&r, |c| c.importations.mid), imp),
    ] {
        for i in 0..3 {
            assert_close(&format!("{what} {}", TOY[i].fips), got[i], want[i], 1e-9);
        }
    }
    assert_close("total evacuees", r.totals.evacuees.mid, evac.iter().sum(), 1e-9);
    assert_close("total exportations", r.totals.exportations.mid, exp.iter().sum(), 1e-9);
    assert_eq!(r.county("T03").unwrap().evacuees.mid, 0.0);
    assert_eq!(r.totals.mandatory_zone_population, 5_500);
    assert_eq!(r.totals.voluntary_zone_population, 8_000);
    assert_eq!(r.totals.warned_population, 18_000);
}

#[test]
fn sampled_run_matches_replayed_streams() {
    let o = oracle(3);
    let scenario = toy_scenario(3, RateUncertainty::Sampled);
    let r = run_scenario(&scenario, &toy_datasets(), &toy_model(), &toy_coefficients()).unwrap();
    let reps = o.sampled_evacuees(scenario.seed, scenario.mc_samples as u64, toy_model().lambda);

    let sorted = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v
    };
    let mut evac_mid = [0.0; 3];
    for i in 0..2 {
        let col = sorted(reps.iter().map(|e| e[i]).collect());
        evac_mid[i] = nearest_rank(&col, 0.5);
        let c = r.county(TOY[i].fips).unwrap();
        assert_close("evacuee mid", c.evacuees.mid, evac_mid[i], 1e-12);
        assert_close("evacuee low", c.evacuees.low, nearest_rank(&col, 0.05), 1e-12);
        assert_close("evacuee high", c.evacuees.high, nearest_rank(&col, 0.95), 1e-12);
        assert_close("export low", c.exportations.low, nearest_rank(&col, 0.05) * o.prevalence[i].0, 1e-9);
        assert_close("export mid", c.exportations.mid, evac_mid[i] * o.prevalence[i].1, 1e-9);
        assert_close("export high", c.exportations.high, nearest_rank(&col, 0.95) * o.prevalence[i].2, 1e-9);
    }
    let recv = o.push(&evac_mid);
    for j in 0..3 {
        assert_close("reception mid", r.county(TOY[j].fips).unwrap().receptions.mid, recv[j], 1e-9);
    }
    let totals = sorted(reps.iter().map(|e| e.iter().sum()).collect());
    assert_close("total mid", r.totals.evacuees.mid, nearest_rank(&totals, 0.5), 1e-12);
    assert_close("total low", r.totals.evacuees.low, nearest_rank(&totals, 0.05), 1e-12);
    assert_close("total high", r.totals.evacuees.high, nearest_rank(&totals, 0.95), 1e-12);
    let exp_high = sorted(reps.iter().map(|e| (0..3).map(|i| e[i] * o.prevalence[i].2).sum()).collect());
    assert_close("export total high", r.totals.exportations.high, nearest_rank(&exp_high, 0.95), 1e-9);
}

#[test]
fn detection_bounds_scale_exportations_exactly() {
    let r = run_scenario(&toy_scenario(4, RateUncertainty::Point), &toy_datasets(), &toy_model(), &toy_coefficients())
        .unwrap();
    let t = &r.totals.exportations;
    assert!((t.high / t.mid - 2.0).abs() < 1e-12, "{}", t.high / t.mid);
    assert!((t.low / t.mid - 0.6).abs() < 1e-12, "{}", t.low / t.mid);
    for c in r.counties.iter().filter(|c| c.exportations.mid > 0.0) {
        assert!((c.exportations.high / c.exportations.mid - 2.0).abs() < 1e-12);
        assert!((c.exportations.low / c.exportations.mid - 0.6).abs() < 1e-12);
        assert!((c.importations.high / c.importations.mid - 2.0).abs() < 1e-12);
    }
}

#[test]
fn flows_are_conserved() {
    for draw in [RateDraw::PerBlockGroup, RateDraw::PerCell] {
        let mut s = toy_scenario(5, RateUncertainty::Sampled);
        s.rate_draw = draw;
        let p = PreparedScenario::new(&s, &toy_datasets(), &toy_model(), &toy_coefficients()).unwrap();
        for k in 0..50 {
            let rep = p.replicate(k);
            let (e, rc): (f64, f64) = (rep.evacuees.iter().sum(), rep.receptions.iter().sum());
            let (x, im): (f64, f64) = (rep.exportations.iter().sum(), rep.importations.iter().sum());
            assert!(rel_err(e, rc) < 1e-12, "replicate {k}: {e} vs {rc}");
            assert!(rel_err(x, im) < 1e-12, "replicate {k}: {x} vs {im}");
        }
        let r = p.run().unwrap();
        let sum = |f: fn(&stormflux_core::scenario::CountyOutcome) -> f64| r.counties.iter().map(f).sum::<f64>();
        assert!(rel_err(sum(|c| c.evacuees.mid), sum(|c| c.receptions.mid)) < 1e-12);
        assert!(rel_err(sum(|c| c.exportations.mid), sum(|c| c.importations.mid)) < 1e-12);
    }
}

#[test]
fn same_seed_same_bytes_regardless_of_threads() {
    let s = toy_scenario(4, RateUncertainty::Sampled);
    let run = || {
        serde_json::to_string(&run_scenario(&s, &toy_datasets(), &toy_model(), &toy_coefficients()).unwrap()).unwrap()
    };
    let a = run();
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = single.install(run);
    assert_eq!(a, b);
    let mut other = s.clone();
    other.seed += 1;
    let c = run_scenario(&other, &toy_datasets(), &toy_model(), &toy_coefficients()).unwrap();
    assert_ne!(serde_json::to_string(&c).unwrap(), a);
}

#[test]
fn evacuees_never_fall_with_category() {
    let mut last = 0.0;
    for h in 0..=5 {
        let r = run_scenario(&toy_scenario(h, RateUncertainty::Point), &toy_datasets(), &toy_model(), &toy_coefficients())
            .unwrap();
        assert!(r.totals.evacuees.mid >= last, "category {h}");
        last = r.totals.evacuees.mid;
    }
}

#[test]
fn no_orders_means_no_flows() {
    let mut s = toy_scenario(4, RateUncertainty::Sampled);
    s.mandatory_fips.clear();
    s.voluntary_fips.clear();
    let r = run_scenario(&s, &toy_datasets(), &toy_model(), &toy_coefficients()).unwrap();
    assert!(r.counties.iter().all(|c| c.evacuees.high == 0.0 && c.receptions.high == 0.0));
    assert_eq!(r.totals.evacuees.mid, 0.0);
}

#[test]
fn overlapping_orders_rejected() {
    let mut s = toy_scenario(4, RateUncertainty::Point);
    s.voluntary_fips.insert("T01".into());
    let err = run_scenario(&s, &toy_datasets(), &toy_model(), &toy_coefficients()).unwrap_err();
    assert!(matches!(err, Error::Validation(_)) && err.to_string().contains("T01"));
}

#[test]
fn unknown_county_is_named() {
    let mut s = toy_scenario(4, RateUncertainty::Point);
    s.mandatory_fips.insert("99999".into());
    match run_scenario(&s, &toy_datasets(), &toy_model(), &toy_coefficients()) {
        Err(Error::UnknownCounty(f)) => assert_eq!(f, vec!["99999".to_string()]),
        other => panic!("expected unknown county, got {other:?}"),
    }
}

#[test]
fn missing_prevalence_is_explicit() {
    let mut d = toy_datasets();
    d.cases = Some(stormflux_core::CaseTable::new());
    let err = run_scenario(&toy_scenario(4, RateUncertainty::Point), &d, &toy_model(), &toy_coefficients()).unwrap_err();
    assert!(matches!(err, Error::MissingPrevalence(_)));
}

#[test]
fn comparing_a_run_with_itself_gives_zero() {
    let r = run_scenario(&toy_scenario(4, RateUncertainty::Sampled), &toy_datasets(), &toy_model(), &toy_coefficients())
        .unwrap();
    let cmp = compare_scenarios(&r, &r).unwrap();
    assert!(cmp.totals.iter().all(|d| d.mid_delta == 0.0));
    assert!(cmp.counties.iter().all(|c| c.evacuees.mid_delta == 0.0 && c.importations.mid_delta == 0.0));

    let stronger = run_scenario(&toy_scenario(5, RateUncertainty::Sampled), &toy_datasets(), &toy_model(), &toy_coefficients())
        .unwrap();
    let cmp = compare_scenarios(&r, &stronger).unwrap();
    assert_eq!(cmp.totals[0].mid_delta, stronger.totals.evacuees.mid - r.totals.evacuees.mid);

    let mut fewer = r.clone();
    fewer.counties.pop();
    assert!(matches!(compare_scenarios(&r, &fewer), Err(Error::DimensionMismatch(_))));
}

#[test]
fn district_rollup_sums_counties() {
    let r = run_scenario(&toy_scenario(4, RateUncertainty::Sampled), &toy_datasets(), &toy_model(), &toy_coefficients())
        .unwrap();
    let coast = r.district("COAST").unwrap();
    let want: f64 = ["T01", "T02"].iter().map(|f| r.county(f).unwrap().receptions.mid).sum();
    assert!(rel_err(coast.receptions.mid, want) < 1e-12);
    assert_eq!(coast.population, 18_000);

    let mut partial: BTreeMap<String, String> = BTreeMap::new();
    partial.insert("T01".into(), "COAST".into());
    assert!(matches!(aggregate_district(&r, &partial), Err(Error::UnmappedCounty(_))));
}

#[test]
fn scenario_file_round_trip() {
    let s = toy_scenario(2, RateUncertainty::Sampled);
    let back = Scenario::from_json(&s.to_json().unwrap()).unwrap();
    assert_eq!(back, s);
    let v: serde_json::Value = serde_json::from_str(&s.to_json().unwrap()).unwrap();
    for key in ["name", "category", "warned", "mandatory", "voluntary", "split", "prevalence", "mc_samples", "seed"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn presets_parse_with_expected_order_sets() {
    let laura = Scenario::load(common::repo_root().join("scenarios/laura.json")).unwrap();
    assert_eq!(laura.mandatory_fips.len(), 11);
    assert_eq!(laura.voluntary_fips.len(), 3);
    assert_eq!(laura.track.category_at_landfall, 4);
    let rita = Scenario::load(common::repo_root().join("scenarios/rita_counterfactual.json")).unwrap();
    assert_eq!(rita.track.category_at_landfall, 5);
    assert!(laura.mandatory_fips.is_subset(&rita.mandatory_fips));
    assert!(laura.voluntary_fips.is_subset(&rita.mandatory_fips));
}
