//! Acceptance checks. One PASS/FAIL line per criterion; exits nonzero when
//! any criterion fails. Tolerances are fixed here and never loosened to pass.

mod common;

use std::collections::BTreeMap;
use std::time::Instant;

use common::{rel_err, toy_coefficients, toy_datasets, toy_model, toy_scenario, TOY};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use stormflux_core::evacmodel::{load_observations, log_likelihood, log_likelihood_gradient, DEFAULT_INTENDED_WEIGHT, LEVELS, PARAMS};
use stormflux_core::odchoice::{feature_vector, od_probabilities, softmax_row, Accommodation, ChoiceCoefficients, Transforms};
use stormflux_core::scenario::{PreparedScenario, RateUncertainty};
use stormflux_core::{
    fit, BetaEvacModel, CoefficientSet, County, Datasets, EvacObservation, FitOptions, LatLon, Scenario,
    ScenarioResult, SourceKind,
};

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn bundled_observations() -> Vec<EvacObservation> {
    load_observations(common::snapshot_dir().join("evac_observations.csv"), DEFAULT_INTENDED_WEIGHT).unwrap()
}

fn gradient_correctness() -> Outcome {
    let obs = bundled_observations();
    ensure(obs.len() == 45, || format!("expected 45 observations, found {}", obs.len()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let f = |p: &[f64; PARAMS]| log_likelihood(&BetaEvacModel::from_params(p), &obs).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let p: [f64; PARAMS] =
            std::array::from_fn(|k| if k == PARAMS - 1 { rng.random_range(0.5..5.0) } else { rng.random_range(-2.5..2.5) });
        let g = log_likelihood_gradient(&BetaEvacModel::from_params(&p), &obs).unwrap();
        for k in 0..PARAMS {
            let (mut up, mut down) = (p, p);
            up[k] += 1e-5;
            down[k] -= 1e-5;
            let fd = (f(&up) - f(&down)) / 2e-5;
            worst = worst.max((g[k] - fd).abs() / g[k].abs().max(fd.abs()).max(1.0));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst < 1e-5, || format!("max relative error {worst:.2e}"))?;
    ensure(secs < 1.0, || format!("took {secs:.2} s"))?;
    Ok(format!("max relative error {worst:.2e} in {secs:.3} s"))
}

fn generate_and_refit() -> Outcome {
    let truth = BetaEvacModel::new(-0.8, [0.0, -0.4, -1.0, -1.5, -2.2, -2.6], [0.0, 0.5, 1.4, 2.5, 3.9, 4.6], 25.0)
        .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let start = Instant::now();
    let obs: Vec<EvacObservation> = (0..10_000)
        .map(|_| {
            let (z, h) = (rng.random_range(0..LEVELS as u8), rng.random_range(0..LEVELS as u8));
            let y = truth.rate_distribution(z, h).unwrap().sample(&mut rng);
            EvacObservation::new(y, z, h, SourceKind::Observed).unwrap()
        })
        .collect();
    let fitted = fit(&obs, &FitOptions::default()).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let mut worst: f64 = 0.0;
    for z in 0..LEVELS as u8 {
        for h in 0..LEVELS as u8 {
            worst = worst.max((fitted.model.predict_rate(z, h).unwrap() - truth.predict_rate(z, h).unwrap()).abs());
        }
    }
    ensure(worst <= 0.02, || format!("worst cell mean error {worst:.4}"))?;
    ensure(secs < 10.0, || format!("took {secs:.2} s"))?;
    Ok(format!("worst cell mean error {worst:.4} in {secs:.2} s"))
}

fn trend_reproduction() -> Outcome {
    let fitted = fit(&bundled_observations(), &FitOptions::default()).map_err(|e| e.to_string())?;
    let m = &fitted.model;
    let r = |z: u8, h: u8| m.predict_rate(z, h).unwrap();
    for z in 0..LEVELS as u8 {
        for h in 0..LEVELS as u8 {
            if z + 1 < LEVELS as u8 {
                ensure(r(z + 1, h) <= r(z, h), || format!("rate rises from zone {z} to {} at category {h}", z + 1))?;
            }
            if h + 1 < LEVELS as u8 {
                ensure(r(z, h + 1) >= r(z, h), || format!("rate falls from category {h} to {} in zone {z}", h + 1))?;
            }
        }
    }
    Ok(format!(
        "36 cells ordered; zone 1 rate {:.3} (cat 0) to {:.3} (cat 5), lambda {:.1}",
        r(1, 0),
        r(1, 5),
        m.lambda
    ))
}

fn random_county(rng: &mut ChaCha8Rng, fips: String) -> County {
    County {
        fips,
        name: String::new(),
        district_id: "D".into(),
        population: rng.random_range(500..2_000_000),
        centroid: LatLon {
            lat: rng.random_range(26.0..36.5),
            lon: rng.random_range(-106.0..-93.5),
        },
        hotel_count: rng.random_range(0..2_000),
        msa_flag: rng.random_bool(0.4),
        interstate_flag: rng.random_bool(0.5),
        pct_white: rng.random_range(0.2..0.95),
        threatened_flag: rng.random_bool(0.2),
    }
}

fn od_properties() -> Outcome {
    let start = Instant::now();
    let t = Transforms::default();
    let instances = 200;
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(1_000 + seed);
        let acc = if seed.is_multiple_of(2) { Accommodation::FriendsRelatives } else { Accommodation::Hotel };
        let origins: Vec<County> = (0..5).map(|i| random_county(&mut rng, format!("o{i}"))).collect();
        let dests: Vec<County> = (0..5).map(|i| random_county(&mut rng, format!("d{i}"))).collect();
        let weights: BTreeMap<String, f64> = acc
            .covariates()
            .iter()
            .map(|n| (n.to_string(), if *n == "distance" { rng.random_range(-0.02..0.0) } else { rng.random_range(-3.0..3.0) }))
            .collect();
        let coeffs = ChoiceCoefficients::new(acc, weights.clone()).unwrap();
        let m = od_probabilities(&origins, &dests, &coeffs, &t).map_err(|e| e.to_string())?;
        for (i, o) in origins.iter().enumerate() {
            let row = m.row(i);
            ensure((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9, || format!("instance {seed} row {i} not stochastic"))?;

            let u: Vec<f64> = dests
                .iter()
                .map(|d| {
                    let x = feature_vector(o, d, acc, &t).unwrap();
                    acc.covariates().iter().map(|n| weights[*n] * x.get(n).unwrap()).sum()
                })
                .collect();
            let z: f64 = u.iter().map(|v| v.exp()).sum();
            for j in 0..5 {
                ensure((row[j] - u[j].exp() / z).abs() <= 1e-12, || format!("instance {seed} ({i}, {j}) differs from softmax oracle"))?;
            }

            let c = rng.random_range(-50.0..50.0);
            let shifted = softmax_row(&u.iter().map(|v| v + c).collect::<Vec<_>>()).unwrap();
            let plain = softmax_row(&u).unwrap();
            for j in 0..5 {
                ensure((shifted[j] - plain[j]).abs() <= 1e-12, || format!("instance {seed} row {i} not shift invariant"))?;
            }

            let drop = (seed as usize + i) % 5;
            let kept: Vec<County> = dests.iter().enumerate().filter(|(j, _)| *j != drop).map(|(_, c)| c.clone()).collect();
            let sub = od_probabilities(std::slice::from_ref(o), &kept, &coeffs, &t).map_err(|e| e.to_string())?;
            let rest = 1.0 - row[drop];
            for (k, j) in (0..5).filter(|j| *j != drop).enumerate() {
                ensure((sub.get(0, k) - row[j] / rest).abs() <= 1e-12, || format!("instance {seed} row {i} violates IIA"))?;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 1.0, || format!("took {secs:.2} s"))?;
    Ok(format!("{instances} random 5x5 instances in {secs:.3} s"))
}

fn toy_world_oracle() -> Outcome {
    let m = toy_model();
    let c = toy_coefficients();
    let logistic = |x: f64| 1.0 / (1.0 + (-x).exp());
    let category = 4;
    let order = [Some(category), Some(0), None];
    let warned = [1.0, 1.0, 0.0];
    let evac: [f64; 3] = std::array::from_fn(|i| {
        TOY[i]
            .block_groups
            .iter()
            .map(|&(pop, z)| match (z, order[i]) {
                (Some(z), Some(h)) => pop as f64 * logistic(m.alpha + m.beta_zone[z as usize] + m.beta_intensity[h as usize]),
                _ => 0.0,
            })
            .sum()
    });
    let prev_mid: [f64; 3] = std::array::from_fn(|i| TOY[i].window_cases as f64 * 5.0 / TOY[i].population as f64);
    let miles = |a: usize, b: usize| {
        let (p1, p2) = (TOY[a].lat.to_radians(), TOY[b].lat.to_radians());
        let h = ((p2 - p1) / 2.0).sin().powi(2)
            + p1.cos() * p2.cos() * ((TOY[b].lon - TOY[a].lon).to_radians() / 2.0).sin().powi(2);
        2.0 * 3958.8 * h.sqrt().asin()
    };
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    let od: [[f64; 3]; 3] = std::array::from_fn(|i| {
        let uf: [f64; 3] = std::array::from_fn(|j| {
            let d = &TOY[j];
            if i == j {
                return f64::NEG_INFINITY;
            }
            c.friends["distance"] * miles(i, j)
                + c.friends["log_population"] * (d.population as f64).ln_1p()
                + c.friends["threatened"] * warned[j]
                + c.friends["msa"] * flag(d.msa)
                + c.friends["pct_white"] * d.pct_white
        });
        let uh: [f64; 3] = std::array::from_fn(|j| {
            let d = &TOY[j];
            if i == j {
                return f64::NEG_INFINITY;
            }
            c.hotel["distance"] * miles(i, j)
                + c.hotel["log_hotels"] * (d.hotels as f64).ln_1p()
                + c.hotel["threatened"] * warned[j]
                + c.hotel["interstate"] * flag(d.interstate)
                + c.hotel["pct_white"] * d.pct_white
        });
        let (sf, sh): (f64, f64) = (uf.iter().map(|u| u.exp()).sum(), uh.iter().map(|u| u.exp()).sum());
        std::array::from_fn(|j| 0.6 * uf[j].exp() / sf + 0.4 * uh[j].exp() / sh)
    });
    let export: [f64; 3] = std::array::from_fn(|i| evac[i] * prev_mid[i]);
    let push = |x: &[f64; 3]| -> [f64; 3] { std::array::from_fn(|j| (0..3).map(|i| x[i] * od[i][j]).sum()) };
    let (recv, imp) = (push(&evac), push(&export));

    let r = stormflux_core::run_scenario(&toy_scenario(category, RateUncertainty::Point), &toy_datasets(), &m, &c)
        .map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        let got = r.county(TOY[i].fips).unwrap();
        for (g, w) in [
            (got.evacuees.mid, evac[i]),
            (got.exportations.mid, export[i]),
            (got.receptions.mid, recv[i]),
            (got.importations.mid, imp[i]),
        ] {
            worst = worst.max(rel_err(g, w));
        }
    }
    ensure(worst <= 1e-9, || format!("max relative error {worst:.2e}"))?;
    Ok(format!("max relative error {worst:.2e} over 12 county flows"))
}

fn detection_ratios() -> Outcome {
    let r = stormflux_core::run_scenario(&toy_scenario(4, RateUncertainty::Point), &toy_datasets(), &toy_model(), &toy_coefficients())
        .map_err(|e| e.to_string())?;
    let t = &r.totals.exportations;
    let (hi, lo) = (t.high / t.mid, t.low / t.mid);
    ensure(format!("{hi:.3}") == "2.000" && (hi - 2.0).abs() < 1e-12, || format!("high/mid = {hi}"))?;
    ensure(format!("{lo:.3}") == "0.600" && (lo - 0.6).abs() < 1e-12, || format!("low/mid = {lo}"))?;
    Ok(format!("high/mid = {hi:.3}, low/mid = {lo:.3}"))
}

struct Snapshot {
    datasets: Datasets,
    model: BetaEvacModel,
    coeffs: CoefficientSet,
}

fn load_snapshot() -> Result<Snapshot, String> {
    let root = common::repo_root();
    let fitted = fit(&bundled_observations(), &FitOptions::default()).map_err(|e| e.to_string())?;
    Ok(Snapshot {
        datasets: Datasets::load_dir(common::snapshot_dir()).map_err(|e| e.to_string())?,
        model: fitted.model,
        coeffs: CoefficientSet::load(root.join("config/od_coefficients.json")).map_err(|e| e.to_string())?,
    })
}

fn preset(name: &str) -> Result<Scenario, String> {
    Scenario::load(common::repo_root().join("scenarios").join(name)).map_err(|e| e.to_string())
}

/// Conservation on every replicate plus byte-identical reruns.
fn conserved_and_deterministic(label: &str, s: &Scenario, d: &Datasets, m: &BetaEvacModel, c: &CoefficientSet) -> Result<ScenarioResult, String> {
    let p = PreparedScenario::new(s, d, m, c).map_err(|e| e.to_string())?;
    let n = match s.rate_uncertainty {
        RateUncertainty::Point => 1,
        RateUncertainty::Sampled => s.mc_samples as u64,
    };
    for k in 0..n {
        let rep = p.replicate(k);
        let sum = |v: &[f64]| v.iter().sum::<f64>();
        ensure(rel_err(sum(&rep.evacuees), sum(&rep.receptions)) <= 1e-6, || format!("{label} replicate {k}: receptions differ from evacuees"))?;
        ensure(rel_err(sum(&rep.exportations), sum(&rep.importations)) <= 1e-6, || format!("{label} replicate {k}: importations differ from exportations"))?;
    }
    let a = p.run().map_err(|e| e.to_string())?;
    let b = PreparedScenario::new(s, d, m, c).and_then(|p| p.run()).map_err(|e| e.to_string())?;
    let bytes = |r: &ScenarioResult| serde_json::to_string(r).unwrap();
    ensure(bytes(&a) == bytes(&b), || format!("{label}: reruns differ"))?;
    let sum = |f: fn(&stormflux_core::scenario::CountyOutcome) -> f64| a.counties.iter().map(f).sum::<f64>();
    ensure(rel_err(sum(|c| c.evacuees.mid), sum(|c| c.receptions.mid)) <= 1e-6, || format!("{label}: county mids not conserved"))?;
    ensure(rel_err(sum(|c| c.exportations.mid), sum(|c| c.importations.mid)) <= 1e-6, || format!("{label}: county mids not conserved"))?;
    Ok(a)
}

fn flow_conservation_and_determinism(snapshot: &Result<Snapshot, String>) -> Outcome {
    let mut runs = 0;
    for h in 0..=5 {
        for u in [RateUncertainty::Point, RateUncertainty::Sampled] {
            conserved_and_deterministic("toy", &toy_scenario(h, u), &toy_datasets(), &toy_model(), &toy_coefficients())?;
            runs += 1;
        }
    }
    let snap = snapshot.as_ref().map_err(|e| format!("snapshot unavailable: {e}"))?;
    for name in ["laura.json", "rita_counterfactual.json"] {
        conserved_and_deterministic(name, &preset(name)?, &snap.datasets, &snap.model, &snap.coeffs)?;
        runs += 1;
    }
    Ok(format!("{runs} scenario runs, every replicate conserved, reruns byte-identical"))
}

fn share_of(r: &ScenarioResult, districts: &[&str]) -> f64 {
    let total: f64 = r.counties.iter().map(|c| c.receptions.mid).sum();
    districts.iter().filter_map(|d| r.district(d)).map(|d| d.receptions.mid).sum::<f64>() / total
}

fn snapshot_regression(snapshot: &Result<Snapshot, String>) -> Outcome {
    let snap = snapshot.as_ref().map_err(|e| format!("snapshot unavailable: {e}"))?;
    let start = Instant::now();
    let laura = stormflux_core::run_scenario(&preset("laura.json")?, &snap.datasets, &snap.model, &snap.coeffs)
        .map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let rita = stormflux_core::run_scenario(&preset("rita_counterfactual.json")?, &snap.datasets, &snap.model, &snap.coeffs)
        .map_err(|e| e.to_string())?;

    let mut failures = vec![];
    let mut check = |ok: bool, what: String| {
        if !ok {
            failures.push(what.clone());
        }
        what
    };
    let ev = laura.totals.evacuees.mid;
    let ex = laura.totals.exportations.mid;
    let recv_total: f64 = laura.counties.iter().map(|c| c.receptions.mid).sum();
    let top = laura
        .counties
        .iter()
        .max_by(|a, b| a.receptions.mid.total_cmp(&b.receptions.mid))
        .unwrap();
    let max_share = top.receptions.mid / recv_total;
    let max_rate = laura
        .counties
        .iter()
        .max_by(|a, b| a.evac_rate.mid.total_cmp(&b.evac_rate.mid))
        .unwrap();
    let rita_ev = rita.totals.evacuees.mid;
    let big = share_of(&rita, &["AUS", "SAT", "DAL", "FTW"]);

    let lines = [
        check((ev - 499_500.0).abs() <= 0.10 * 499_500.0, format!("Laura evacuees {ev:.0}")),
        check((ex - 2_900.0).abs() <= 0.20 * 2_900.0, format!("exportations {ex:.0}")),
        check(max_share <= 0.030, format!("max destination share {:.2}% ({})", max_share * 100.0, top.name)),
        check(
            max_rate.name == "Orange" && (max_rate.evac_rate.mid - 0.80).abs() <= 0.05,
            format!("max-rate county {} at {:.3}", max_rate.name, max_rate.evac_rate.mid),
        ),
        check((rita_ev - 1_054_500.0).abs() <= 0.10 * 1_054_500.0, format!("Rita evacuees {rita_ev:.0}")),
        check((big - 0.30).abs() <= 0.05, format!("Rita AUS+SAT+DAL+FTW share {:.1}%", big * 100.0)),
        check(secs < 60.0, format!("Laura run {secs:.2} s")),
    ];
    let detail = lines.join("; ");
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail} -- failing: {}", failures.join(", ")))
    }
}

fn main() {
    let snapshot = load_snapshot();
    let criteria: Vec<Criterion> = vec![
        ("gradient correctness", Box::new(gradient_correctness)),
        ("generate-and-refit", Box::new(generate_and_refit)),
        ("trend reproduction", Box::new(trend_reproduction)),
        ("OD properties", Box::new(od_properties)),
        ("toy-world oracle", Box::new(toy_world_oracle)),
        ("detection-bound ratios", Box::new(detection_ratios)),
        ("flow conservation and seed determinism", Box::new(|| flow_conservation_and_determinism(&snapshot))),
        ("snapshot regression (Laura and Rita presets)", Box::new(|| snapshot_regression(&snapshot))),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
