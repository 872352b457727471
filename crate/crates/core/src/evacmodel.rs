//! Weighted Beta regression of evacuation rates on surge risk zone and
//! hurricane intensity.
//!
//! Rates follow `Beta(μλ, (1-μ)λ)` with
//! `logit μ = α + β_zone[z] + β_intensity[h]`, so `E[y] = μ` and
//! `Var[y] = μ(1-μ)/(λ+1)`. Level 0 of each factor is the reference and its
//! coefficient is pinned at zero. Observations carry a confidence weight:
//! observed compliance counts fully, stated intentions count half.
//!
//! The fit maximizes the weighted log-likelihood over
//! `(α, β_zone[1..], β_intensity[1..], ln λ)` with BFGS. The objective is
//! evaluated through per-cell sufficient statistics, which makes it cheap
//! and independent of observation order.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::geodata::{csv_records, field};

pub const LEVELS: usize = 6;

/// Boundary continuity correction applied to observed rates of exactly 0 or 1.
pub const RATE_CLAMP: f64 = 1e-3;

pub const DEFAULT_INTENDED_WEIGHT: f64 = 0.5;

pub const OBSERVATION_HEADER: [&str; 5] = ["study", "rate", "zone", "category", "source_kind"];

/// Number of free parameters when every level is observed.
pub const PARAMS: usize = 1 + 2 * (LEVELS - 1) + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Observed,
    Intended,
}

impl std::str::FromStr for SourceKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "observed" => Ok(SourceKind::Observed),
            "intended" => Ok(SourceKind::Intended),
            other => Err(format!("unknown source kind {other:?} (expected observed|intended)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvacObservation {
    pub rate: f64,
    pub zone: u8,
    pub intensity: u8,
    pub source_kind: SourceKind,
    pub weight: f64,
    /// True when `rate` was moved off a 0/1 boundary.
    #[serde(default)]
    pub clamped: bool,
}

impl EvacObservation {
    /// Builds an observation with the default confidence weight for its kind.
    pub fn new(rate: f64, zone: u8, intensity: u8, source_kind: SourceKind) -> Result<Self> {
        Self::with_intended_weight(rate, zone, intensity, source_kind, DEFAULT_INTENDED_WEIGHT)
    }

    pub fn with_intended_weight(
        rate: f64,
        zone: u8,
        intensity: u8,
        source_kind: SourceKind,
        intended_weight: f64,
    ) -> Result<Self> {
        let weight = match source_kind {
            SourceKind::Observed => 1.0,
            SourceKind::Intended => intended_weight,
        };
        Self::weighted(rate, zone, intensity, source_kind, weight)
    }

    /// Explicit weight, for sensitivity runs.
    pub fn weighted(rate: f64, zone: u8, intensity: u8, source_kind: SourceKind, weight: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::Domain(format!("evacuation rate {rate} outside [0, 1]")));
        }
        check_level("zone", zone)?;
        check_level("intensity", intensity)?;
        if !(weight.is_finite() && weight > 0.0) {
            return Err(Error::Domain(format!("observation weight {weight} must be positive")));
        }
        let clamped_rate = rate.clamp(RATE_CLAMP, 1.0 - RATE_CLAMP);
        Ok(EvacObservation {
            rate: clamped_rate,
            zone,
            intensity,
            source_kind,
            weight,
            clamped: clamped_rate != rate,
        })
    }
}

fn check_level(what: &str, level: u8) -> Result<()> {
    if (level as usize) < LEVELS {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} {level} outside 0..={}", LEVELS - 1)))
    }
}

/// Reads `study,rate,zone,category,source_kind`; weights are derived from
/// the source kind.
pub fn load_observations(path: impl AsRef<Path>, intended_weight: f64) -> Result<Vec<EvacObservation>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for rec in csv_records(path, &OBSERVATION_HEADER)? {
        let (line, r) = rec?;
        let rate: f64 = field(path, line, &r, 1, "rate")?;
        let zone: u8 = field(path, line, &r, 2, "zone")?;
        let category: u8 = field(path, line, &r, 3, "category")?;
        let kind: SourceKind = field(path, line, &r, 4, "source_kind")?;
        out.push(
            EvacObservation::with_intended_weight(rate, zone, category, kind, intended_weight)
                .map_err(|e| Error::parse(path, line, e.to_string()))?,
        );
    }
    Ok(out)
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaEvacModel {
    pub alpha: f64,
    pub beta_zone: [f64; LEVELS],
    pub beta_intensity: [f64; LEVELS],
    pub lambda: f64,
}

impl BetaEvacModel {
    pub fn new(alpha: f64, beta_zone: [f64; LEVELS], beta_intensity: [f64; LEVELS], lambda: f64) -> Result<Self> {
        let m = BetaEvacModel {
            alpha,
            beta_zone,
            beta_intensity,
            lambda,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::Domain(format!("precision lambda {} must be positive", self.lambda)));
        }
        if self.beta_zone[0] != 0.0 || self.beta_intensity[0] != 0.0 {
            return Err(Error::Domain("reference level coefficients must be exactly 0".into()));
        }
        let finite = std::iter::once(self.alpha)
            .chain(self.beta_zone)
            .chain(self.beta_intensity)
            .all(f64::is_finite);
        if !finite {
            return Err(Error::Domain("non-finite model coefficient".into()));
        }
        Ok(())
    }

    fn eta(&self, zone: u8, intensity: u8) -> f64 {
        self.alpha + self.beta_zone[zone as usize] + self.beta_intensity[intensity as usize]
    }

    /// Mean evacuation rate for a (zone, intensity) cell.
    pub fn predict_rate(&self, zone: u8, intensity: u8) -> Result<f64> {
        check_level("zone", zone)?;
        check_level("intensity", intensity)?;
        Ok(logistic(self.eta(zone, intensity)))
    }

    pub fn rate_variance(&self, zone: u8, intensity: u8) -> Result<f64> {
        let mu = self.predict_rate(zone, intensity)?;
        Ok(mu * (1.0 - mu) / (self.lambda + 1.0))
    }

    /// Predictive distribution of the rate in one cell.
    pub fn rate_distribution(&self, zone: u8, intensity: u8) -> Result<Beta<f64>> {
        let mu = self.predict_rate(zone, intensity)?;
        Beta::new(mu * self.lambda, (1.0 - mu) * self.lambda)
            .map_err(|e| Error::Domain(format!("beta shape for cell ({zone}, {intensity}): {e}")))
    }

    pub fn sample_rate<R: Rng + ?Sized>(&self, zone: u8, intensity: u8, rng: &mut R) -> Result<f64> {
        Ok(self.rate_distribution(zone, intensity)?.sample(rng))
    }

    /// Draws `n` rates from a fresh stream seeded with `seed`.
    pub fn sample_rates_seeded(&self, zone: u8, intensity: u8, seed: u64, n: usize) -> Result<Vec<f64>> {
        let dist = self.rate_distribution(zone, intensity)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..n).map(|_| dist.sample(&mut rng)).collect())
    }

    /// Packs the free parameters as `[α, β_zone[1..6], β_intensity[1..6], ln λ]`.
    pub fn to_params(&self) -> [f64; PARAMS] {
        let mut p = [0.0; PARAMS];
        p[0] = self.alpha;
        p[1..LEVELS].copy_from_slice(&self.beta_zone[1..]);
        p[LEVELS..2 * LEVELS - 1].copy_from_slice(&self.beta_intensity[1..]);
        p[PARAMS - 1] = self.lambda.ln();
        p
    }

    pub fn from_params(p: &[f64; PARAMS]) -> Self {
        let mut beta_zone = [0.0; LEVELS];
        let mut beta_intensity = [0.0; LEVELS];
        beta_zone[1..].copy_from_slice(&p[1..LEVELS]);
        beta_intensity[1..].copy_from_slice(&p[LEVELS..2 * LEVELS - 1]);
        BetaEvacModel {
            alpha: p[0],
            beta_zone,
            beta_intensity,
            lambda: p[PARAMS - 1].exp(),
        }
    }
}

fn beta_ln_pdf(y: f64, a: f64, b: f64) -> f64 {
    ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + (a - 1.0) * y.ln() + (b - 1.0) * (1.0 - y).ln()
}

/// `Σ ω_i · ln BetaPDF(y_i; μ_i λ, (1-μ_i) λ)`.
pub fn log_likelihood(model: &BetaEvacModel, obs: &[EvacObservation]) -> Result<f64> {
    model.validate()?;
    let mut total = 0.0;
    for o in obs {
        check_level("zone", o.zone)?;
        check_level("intensity", o.intensity)?;
        let mu = logistic(model.eta(o.zone, o.intensity));
        total += o.weight * beta_ln_pdf(o.rate, mu * model.lambda, (1.0 - mu) * model.lambda);
    }
    Ok(total)
}

/// Weighted sufficient statistics of one (zone, intensity) cell.
#[derive(Debug, Clone, Copy, Default)]
struct CellStats {
    weight: f64,
    sum_ln_y: f64,
    sum_ln_1my: f64,
}

/// Observations reduced to per-cell sufficient statistics, summed in a
/// canonical order so the objective does not depend on input order.
#[derive(Debug, Clone)]
struct Objective {
    cells: BTreeMap<(u8, u8), CellStats>,
}

impl Objective {
    fn new(obs: &[EvacObservation]) -> Self {
        let mut sorted: Vec<&EvacObservation> = obs.iter().collect();
        sorted.sort_by(|a, b| {
            (a.zone, a.intensity)
                .cmp(&(b.zone, b.intensity))
                .then(a.rate.total_cmp(&b.rate))
                .then(a.weight.total_cmp(&b.weight))
        });
        let mut cells: BTreeMap<(u8, u8), CellStats> = BTreeMap::new();
        for o in sorted {
            let c = cells.entry((o.zone, o.intensity)).or_default();
            c.weight += o.weight;
            c.sum_ln_y += o.weight * o.rate.ln();
            c.sum_ln_1my += o.weight * (1.0 - o.rate).ln();
        }
        Objective { cells }
    }

    /// Log-likelihood and its gradient with respect to the packed parameters.
    fn value_and_gradient(&self, p: &[f64; PARAMS]) -> (f64, [f64; PARAMS]) {
        let model = BetaEvacModel::from_params(p);
        let lambda = model.lambda;
        let (lg_lambda, dg_lambda) = (ln_gamma(lambda), digamma(lambda));
        let mut value = 0.0;
        let mut grad = [0.0; PARAMS];
        for (&(z, h), c) in &self.cells {
            let mu = logistic(model.eta(z, h));
            let (a, b) = (mu * lambda, (1.0 - mu) * lambda);
            value += c.weight * (lg_lambda - ln_gamma(a) - ln_gamma(b)) + (a - 1.0) * c.sum_ln_y
                + (b - 1.0) * c.sum_ln_1my;

            let (dga, dgb) = (digamma(a), digamma(b));
            // d/dμ, chained through dμ/dη = μ(1-μ)
            let d_mu = lambda * (c.weight * (dgb - dga) + c.sum_ln_y - c.sum_ln_1my);
            let d_eta = d_mu * mu * (1.0 - mu);
            grad[0] += d_eta;
            if z > 0 {
                grad[z as usize] += d_eta;
            }
            if h > 0 {
                grad[LEVELS - 1 + h as usize] += d_eta;
            }
            // d/d ln λ = λ · d/dλ
            grad[PARAMS - 1] += lambda
                * (c.weight * (dg_lambda - mu * dga - (1.0 - mu) * dgb)
                    + mu * c.sum_ln_y
                    + (1.0 - mu) * c.sum_ln_1my);
        }
        (value, grad)
    }
}

/// Analytic gradient of [`log_likelihood`] with respect to
/// [`BetaEvacModel::to_params`].
pub fn log_likelihood_gradient(model: &BetaEvacModel, obs: &[EvacObservation]) -> Result<[f64; PARAMS]> {
    model.validate()?;
    for o in obs {
        check_level("zone", o.zone)?;
        check_level("intensity", o.intensity)?;
    }
    Ok(Objective::new(obs).value_and_gradient(&model.to_params()).1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tol: 1e-8,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub tol: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub observations: usize,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// A fitted model plus convergence diagnostics. Serializes to the model file
/// format (`alpha`, `beta_zone`, `beta_intensity`, `lambda`, `fit_meta`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    #[serde(flatten)]
    pub model: BetaEvacModel,
    pub fit_meta: FitMeta,
}

impl FittedModel {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let fitted: FittedModel = serde_json::from_str(text)?;
        fitted.model.validate()?;
        Ok(fitted)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::geodata::write_text(path.as_ref(), &self.to_json()?)
    }
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Weighted maximum-likelihood fit.
///
/// Levels without any observation keep a zero coefficient and are reported
/// in the warnings; the reference level of each factor must be observed.
pub fn fit(obs: &[EvacObservation], opts: &FitOptions) -> Result<FittedModel> {
    if obs.is_empty() {
        return Err(Error::Validation("no observations".into()));
    }
    if opts.tol.is_nan() || opts.tol <= 0.0 {
        return Err(Error::Domain(format!("tolerance {} must be positive", opts.tol)));
    }
    for o in obs {
        check_level("zone", o.zone)?;
        check_level("intensity", o.intensity)?;
        if !(o.rate > 0.0 && o.rate < 1.0) {
            return Err(Error::Domain(format!("rate {} not strictly inside (0, 1)", o.rate)));
        }
    }

    let mut warnings = Vec::new();
    let mut zone_seen = [false; LEVELS];
    let mut intensity_seen = [false; LEVELS];
    for o in obs {
        zone_seen[o.zone as usize] = true;
        intensity_seen[o.intensity as usize] = true;
    }
    if !zone_seen[0] || !intensity_seen[0] {
        return Err(Error::Validation(
            "reference level (zone 0 and intensity 0) needs at least one observation".into(),
        ));
    }
    // mask of free parameters
    let mut free = [true; PARAMS];
    for k in 1..LEVELS {
        if !zone_seen[k] {
            free[k] = false;
            warnings.push(format!("zone {k} has no observations; coefficient pinned at 0"));
        }
        if !intensity_seen[k] {
            free[LEVELS - 1 + k] = false;
            warnings.push(format!("intensity {k} has no observations; coefficient pinned at 0"));
        }
    }
    warnings.extend(separation_warnings(obs));

    let objective = Objective::new(obs);
    let total_w: f64 = obs.iter().map(|o| o.weight).sum();
    let mean_rate = obs.iter().map(|o| o.weight * o.rate).sum::<f64>() / total_w;
    let mut x = [0.0; PARAMS];
    x[0] = logit(mean_rate);
    x[PARAMS - 1] = 10f64.ln();

    // minimize f = -loglik
    let eval = |p: &[f64; PARAMS]| {
        let (v, mut g) = objective.value_and_gradient(p);
        for (gi, &fr) in g.iter_mut().zip(&free) {
            *gi = if fr { -*gi } else { 0.0 };
        }
        (-v, g)
    };

    let (mut f, mut g) = eval(&x);
    let mut h_inv = identity();
    let mut first_update = true;
    let mut iterations = 0;
    while max_norm(&g) > opts.tol {
        if iterations >= opts.max_iter {
            return Err(Error::NonConvergence {
                iterations,
                gradient_norm: max_norm(&g),
                last: Box::new(BetaEvacModel::from_params(&x)),
            });
        }
        iterations += 1;

        let mut dir = mat_vec(&h_inv, &g).map(|v| -v);
        let mut slope = dot(&dir, &g);
        if slope.is_nan() || slope >= 0.0 {
            // lost descent; restart from steepest descent
            h_inv = identity();
            first_update = true;
            dir = g.map(|v| -v);
            slope = dot(&dir, &g);
        }
        // keep the trial step bounded
        let dnorm = max_norm(&dir);
        let mut step = if dnorm > 5.0 { 5.0 / dnorm } else { 1.0 };

        let (x_new, f_new, g_new) = loop {
            let trial = add_scaled(&x, &dir, step);
            let (ft, gt) = eval(&trial);
            if ft.is_finite() && ft <= f + 1e-4 * step * slope {
                break (trial, ft, gt);
            }
            // Near the optimum the decrease drops below the resolution of f;
            // there a shrinking gradient is the only usable signal.
            if ft.is_finite() && (ft - f).abs() <= 1e-10 * (1.0 + f.abs()) && max_norm(&gt) < max_norm(&g) {
                break (trial, ft, gt);
            }
            step *= 0.5;
            if step < 1e-20 {
                // no further progress is representable at this point
                return Err(Error::NonConvergence {
                    iterations,
                    gradient_norm: max_norm(&g),
                    last: Box::new(BetaEvacModel::from_params(&x)),
                });
            }
        };

        let s: [f64; PARAMS] = std::array::from_fn(|i| x_new[i] - x[i]);
        let y: [f64; PARAMS] = std::array::from_fn(|i| g_new[i] - g[i]);
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if first_update {
                let scale = sy / dot(&y, &y);
                h_inv = identity();
                for (i, row) in h_inv.iter_mut().enumerate() {
                    row[i] = scale;
                }
                first_update = false;
            }
            bfgs_update(&mut h_inv, &s, &y, sy);
        }
        x = x_new;
        f = f_new;
        g = g_new;
    }

    let model = BetaEvacModel::from_params(&x);
    model.validate()?;
    Ok(FittedModel {
        model,
        fit_meta: FitMeta {
            tol: opts.tol,
            iterations,
            gradient_norm: max_norm(&g),
            observations: obs.len(),
            warnings,
        },
    })
}

/// A factor level whose every rate sits on the same clamped boundary pushes
/// its coefficient toward infinity.
fn separation_warnings(obs: &[EvacObservation]) -> Vec<String> {
    let mut out = Vec::new();
    for (name, key) in [("zone", 0usize), ("intensity", 1usize)] {
        let mut by_level: BTreeMap<u8, Vec<&EvacObservation>> = BTreeMap::new();
        for o in obs {
            by_level.entry(if key == 0 { o.zone } else { o.intensity }).or_default().push(o);
        }
        for (level, group) in by_level {
            let all_low = group.iter().all(|o| o.clamped && o.rate < 0.5);
            let all_high = group.iter().all(|o| o.clamped && o.rate > 0.5);
            if all_low || all_high {
                out.push(format!(
                    "{name} {level}: every rate is clamped at the {} boundary; coefficient is weakly identified",
                    if all_low { "lower" } else { "upper" }
                ));
            }
        }
    }
    out
}

type Mat = [[f64; PARAMS]; PARAMS];

fn identity() -> Mat {
    let mut m = [[0.0; PARAMS]; PARAMS];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

fn dot(a: &[f64; PARAMS], b: &[f64; PARAMS]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn mat_vec(m: &Mat, v: &[f64; PARAMS]) -> [f64; PARAMS] {
    std::array::from_fn(|i| dot(&m[i], v))
}

fn add_scaled(x: &[f64; PARAMS], d: &[f64; PARAMS], t: f64) -> [f64; PARAMS] {
    std::array::from_fn(|i| x[i] + t * d[i])
}

/// Inverse-Hessian update `H ← (I - ρsyᵀ) H (I - ρysᵀ) + ρssᵀ`.
fn bfgs_update(h: &mut Mat, s: &[f64; PARAMS], y: &[f64; PARAMS], sy: f64) {
    let rho = 1.0 / sy;
    let hy = mat_vec(h, y);
    let yhy = dot(y, &hy);
    for i in 0..PARAMS {
        for j in 0..PARAMS {
            h[i][j] += -rho * (s[i] * hy[j] + hy[i] * s[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}
