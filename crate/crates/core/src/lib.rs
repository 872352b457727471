//! Hurricane evacuation and infection-exportation modeling.
//!
//! Evacuation rates per block group come from a beta regression on surge
//! zone and storm intensity. Evacuees are dispersed across destination
//! counties by a blend of two multinomial logit choice models, and carry
//! infections in proportion to their origin county's estimated prevalence.

pub mod error;
pub mod evacmodel;
pub mod geodata;
pub mod odchoice;
pub mod prevalence;
pub mod report;
pub mod scenario;

pub use error::{Error, Result};
pub use evacmodel::{fit, BetaEvacModel, EvacObservation, FitOptions, FittedModel, SourceKind};
pub use geodata::{CensusBlockGroup, County, ForecastTrack, Geography, LatLon, RiskZone};
pub use odchoice::{AccommodationSplit, CoefficientSet, ODMatrix};
pub use prevalence::{CaseTable, DetectionBounds, PrevalenceEstimate};
pub use scenario::{run_scenario, CredibleInterval, Datasets, Scenario, ScenarioResult};
