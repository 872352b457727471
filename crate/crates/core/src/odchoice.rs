//! Destination choice: one multinomial logit per accommodation type, turned
//! into origin-destination probability matrices and blended by the
//! accommodation split.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::{haversine_unchecked, write_text, County};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accommodation {
    FriendsRelatives,
    Hotel,
}

impl Accommodation {
    /// Covariate names, in feature-vector order.
    pub fn covariates(self) -> &'static [&'static str; 5] {
        match self {
            Accommodation::FriendsRelatives => &["distance", "log_population", "threatened", "msa", "pct_white"],
            Accommodation::Hotel => &["distance", "log_hotels", "threatened", "interstate", "pct_white"],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    #[default]
    Identity,
    Log1p,
    Ln,
}

impl Transform {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::Log1p => x.ln_1p(),
            Transform::Ln => x.ln(),
        }
    }
}

/// How raw covariates enter the utility. Travels with the coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transforms {
    #[serde(default)]
    pub distance: Transform,
    #[serde(default = "log1p")]
    pub population: Transform,
    #[serde(default = "log1p")]
    pub hotels: Transform,
}

fn log1p() -> Transform {
    Transform::Log1p
}

impl Default for Transforms {
    fn default() -> Self {
        Transforms {
            distance: Transform::Identity,
            population: Transform::Log1p,
            hotels: Transform::Log1p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceCoefficients {
    pub accommodation: Accommodation,
    pub weights: BTreeMap<String, f64>,
}

impl ChoiceCoefficients {
    pub fn new(accommodation: Accommodation, weights: BTreeMap<String, f64>) -> Result<Self> {
        let c = ChoiceCoefficients { accommodation, weights };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let expected = self.accommodation.covariates();
        let mut names: Vec<&str> = self.weights.keys().map(String::as_str).collect();
        names.sort_unstable();
        let mut want: Vec<&str> = expected.to_vec();
        want.sort_unstable();
        if names != want {
            return Err(Error::Validation(format!(
                "{:?} coefficients must name exactly {:?}, got {:?}",
                self.accommodation, expected, names
            )));
        }
        if let Some((k, v)) = self.weights.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Validation(format!("coefficient {k} = {v} is not finite")));
        }
        Ok(())
    }

    /// Weights in feature-vector order.
    fn ordered(&self) -> [f64; 5] {
        let names = self.accommodation.covariates();
        std::array::from_fn(|i| self.weights[names[i]])
    }

    pub fn utility(&self, x: &FeatureVector) -> Result<f64> {
        if x.accommodation != self.accommodation {
            return Err(Error::Validation(format!(
                "feature vector for {:?} scored with {:?} coefficients",
                x.accommodation, self.accommodation
            )));
        }
        Ok(self.ordered().iter().zip(&x.values).map(|(b, v)| b * v).sum())
    }
}

/// The coefficient configuration file: both logits plus the transforms
/// their covariates expect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    pub friends: BTreeMap<String, f64>,
    pub hotel: BTreeMap<String, f64>,
    #[serde(default)]
    pub transforms: Transforms,
    /// Free-form provenance note.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl CoefficientSet {
    pub fn from_json(text: &str) -> Result<Self> {
        let set: CoefficientSet = serde_json::from_str(text)?;
        set.friends_coefficients()?;
        set.hotel_coefficients()?;
        Ok(set)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn friends_coefficients(&self) -> Result<ChoiceCoefficients> {
        ChoiceCoefficients::new(Accommodation::FriendsRelatives, self.friends.clone())
    }

    pub fn hotel_coefficients(&self) -> Result<ChoiceCoefficients> {
        ChoiceCoefficients::new(Accommodation::Hotel, self.hotel.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub accommodation: Accommodation,
    pub values: [f64; 5],
}

impl FeatureVector {
    pub fn names(&self) -> &'static [&'static str; 5] {
        self.accommodation.covariates()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names().iter().position(|n| *n == name).map(|i| self.values[i])
    }
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Covariates describing `dest` as seen from `origin`.
pub fn feature_vector(
    origin: &County,
    dest: &County,
    accommodation: Accommodation,
    transforms: &Transforms,
) -> Result<FeatureVector> {
    if origin.fips == dest.fips {
        return Err(Error::Validation(format!(
            "county {} is not a destination for itself",
            origin.fips
        )));
    }
    let miles = transforms.distance.apply(haversine_unchecked(origin.centroid, dest.centroid));
    let values = match accommodation {
        Accommodation::FriendsRelatives => [
            miles,
            transforms.population.apply(dest.population as f64),
            indicator(dest.threatened_flag),
            indicator(dest.msa_flag),
            dest.pct_white,
        ],
        Accommodation::Hotel => [
            miles,
            transforms.hotels.apply(dest.hotel_count as f64),
            indicator(dest.threatened_flag),
            indicator(dest.interstate_flag),
            dest.pct_white,
        ],
    };
    Ok(FeatureVector { accommodation, values })
}

/// Numerically stable softmax over one row. Entries equal to `-inf` are
/// unavailable alternatives and receive probability 0.
pub fn softmax_row(utilities: &[f64]) -> Option<Vec<f64>> {
    if utilities.iter().any(|u| u.is_nan() || *u == f64::INFINITY) {
        return None;
    }
    let max = utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let exps: Vec<f64> = utilities.iter().map(|u| (u - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Some(exps.into_iter().map(|e| e / total).collect())
}

/// Row-stochastic origin-destination probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ODMatrix {
    pub origins: Vec<String>,
    pub destinations: Vec<String>,
    /// Row-major, `origins.len() × destinations.len()`.
    probs: Vec<f64>,
}

impl ODMatrix {
    pub fn from_rows(origins: Vec<String>, destinations: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() != origins.len() || rows.iter().any(|r| r.len() != destinations.len()) {
            return Err(Error::DimensionMismatch(format!(
                "{} origins × {} destinations",
                origins.len(),
                destinations.len()
            )));
        }
        let m = ODMatrix {
            origins,
            destinations,
            probs: rows.into_iter().flatten().collect(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, o) in self.origins.iter().enumerate() {
            let row = self.row(i);
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Validation(format!("row {o} has an entry outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Validation(format!("row {o} sums to {sum}")));
            }
            if let Some(j) = self.destinations.iter().position(|d| d == o) {
                if row[j] != 0.0 {
                    return Err(Error::Validation(format!("origin {o} assigns itself probability {}", row[j])));
                }
            }
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.origins.len(), self.destinations.len())
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.destinations.len();
        &self.probs[i * n..(i + 1) * n]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i)[j]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("origin");
        for d in &self.destinations {
            s.push(',');
            s.push_str(d);
        }
        s.push('\n');
        for (i, o) in self.origins.iter().enumerate() {
            s.push_str(o);
            for p in self.row(i) {
                s.push(',');
                s.push_str(&p.to_string());
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.to_csv())
    }
}

/// `P[o, d] = exp(βᵀx_od) / Σ_k exp(βᵀx_ok)` over every destination other
/// than the origin itself.
pub fn od_probabilities(
    origins: &[County],
    destinations: &[County],
    coeffs: &ChoiceCoefficients,
    transforms: &Transforms,
) -> Result<ODMatrix> {
    coeffs.validate()?;
    let rows: Vec<Vec<f64>> = origins
        .par_iter()
        .map(|o| {
            let available = destinations.iter().filter(|d| d.fips != o.fips).count();
            if available < 2 {
                return Err(Error::Validation(format!(
                    "origin {} has {available} candidate destinations; at least 2 required",
                    o.fips
                )));
            }
            let utilities = destinations
                .iter()
                .map(|d| {
                    if d.fips == o.fips {
                        Ok(f64::NEG_INFINITY)
                    } else {
                        coeffs.utility(&feature_vector(o, d, coeffs.accommodation, transforms)?)
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            softmax_row(&utilities).ok_or_else(|| Error::DegenerateChoice(o.fips.clone()))
        })
        .collect::<Result<_>>()?;
    ODMatrix::from_rows(
        origins.iter().map(|c| c.fips.clone()).collect(),
        destinations.iter().map(|c| c.fips.clone()).collect(),
        rows,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccommodationSplit {
    pub friends_share: f64,
    pub hotel_share: f64,
}

impl AccommodationSplit {
    /// Sixty percent to friends and relatives, forty to hotels.
    pub const FRIENDS_MAJORITY: AccommodationSplit = AccommodationSplit {
        friends_share: 0.6,
        hotel_share: 0.4,
    };
    /// The reversed split: sixty percent to hotels.
    pub const HOTEL_MAJORITY: AccommodationSplit = AccommodationSplit {
        friends_share: 0.4,
        hotel_share: 0.6,
    };

    pub fn new(friends_share: f64, hotel_share: f64) -> Result<Self> {
        let s = AccommodationSplit {
            friends_share,
            hotel_share,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.friends_share >= 0.0 && self.hotel_share >= 0.0) {
            return Err(Error::Validation("accommodation shares must be non-negative".into()));
        }
        if (self.friends_share + self.hotel_share - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "accommodation shares sum to {}, expected 1",
                self.friends_share + self.hotel_share
            )));
        }
        Ok(())
    }
}

impl Default for AccommodationSplit {
    fn default() -> Self {
        Self::FRIENDS_MAJORITY
    }
}

pub fn blend(friends: &ODMatrix, hotel: &ODMatrix, split: &AccommodationSplit) -> Result<ODMatrix> {
    split.validate()?;
    if friends.origins != hotel.origins || friends.destinations != hotel.destinations {
        return Err(Error::DimensionMismatch(format!(
            "friends matrix {:?} vs hotel matrix {:?}",
            friends.shape(),
            hotel.shape()
        )));
    }
    let probs = friends
        .probs
        .iter()
        .zip(&hotel.probs)
        .map(|(f, h)| split.friends_share * f + split.hotel_share * h)
        .collect();
    let m = ODMatrix {
        origins: friends.origins.clone(),
        destinations: friends.destinations.clone(),
        probs,
    };
    m.validate()?;
    Ok(m)
}

/// Both logit matrices over the full county set, blended.
pub fn blended_matrix(
    origins: &[County],
    destinations: &[County],
    coeffs: &CoefficientSet,
    split: &AccommodationSplit,
) -> Result<ODMatrix> {
    let friends = od_probabilities(origins, destinations, &coeffs.friends_coefficients()?, &coeffs.transforms)?;
    let hotel = od_probabilities(origins, destinations, &coeffs.hotel_coefficients()?, &coeffs.transforms)?;
    blend(&friends, &hotel, split)
}
