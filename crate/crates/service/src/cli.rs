//! `stormflux` command line.
//!
//! Exit codes: 0 on success, 2 when the input is rejected (the structured
//! error is printed to stderr as JSON), 1 for any other failure.

use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use stormflux_core::evacmodel::{load_observations, DEFAULT_INTENDED_WEIGHT};
use stormflux_core::report::{write_outputs, OutputFormat};
use stormflux_core::{fit, run_scenario, Error, FitOptions, Scenario};

use crate::api::{router, ServiceConfig};
use crate::store::Store;
use crate::{is_validation, ErrorBody, Inputs};

#[derive(Debug, Parser)]
#[command(name = "stormflux", version, about = "Hurricane evacuation and infection-exportation scenarios")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Geojson,
    Both,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Geojson => OutputFormat::GeoJson,
            Format::Both => OutputFormat::Both,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the evacuation-rate model and write it as JSON.
    Fit {
        #[arg(long, default_value = "data/evac_observations.csv")]
        observations: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 500)]
        max_iter: usize,
        /// Weight of intended (survey) responses relative to observed rates.
        #[arg(long, default_value_t = DEFAULT_INTENDED_WEIGHT)]
        intended_weight: f64,
    },
    /// Run a scenario file and write county, district and summary outputs.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, env = "STORMFLUX_DATA", default_value = "data")]
        data: PathBuf,
        /// Fitted model JSON; fitted from the data directory when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Destination-choice coefficients; defaults to config/od_coefficients.json beside the data directory.
        #[arg(long)]
        coeffs: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Both)]
        format: Format,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, env = "STORMFLUX_DATA", default_value = "data")]
        data: PathBuf,
        #[arg(long, env = "STORMFLUX_STORE", default_value = "store")]
        store: PathBuf,
        #[arg(long, env = "STORMFLUX_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        coeffs: Option<PathBuf>,
        /// Worker threads for scenario runs; defaults to available parallelism.
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, default_value_t = 64)]
        queue: usize,
    },
}

/// Failure of a command, classified for the exit code.
#[derive(Debug)]
pub struct Failure {
    pub exit_code: i32,
    pub body: ErrorBody,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            exit_code: if is_validation(&e) { 2 } else { 1 },
            body: ErrorBody::from(&e),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            exit_code: 1,
            body: ErrorBody::new("io", e.to_string()),
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Fit {
            observations,
            out,
            tol,
            max_iter,
            intended_weight,
        } => {
            let obs = load_observations(&observations, intended_weight)?;
            let fitted = fit(&obs, &FitOptions { tol, max_iter })?;
            fitted.save(&out)?;
            for w in &fitted.fit_meta.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "fitted {} observations in {} iterations (gradient max-norm {:.2e}) -> {}",
                fitted.fit_meta.observations,
                fitted.fit_meta.iterations,
                fitted.fit_meta.gradient_norm,
                out.display()
            );
            Ok(())
        }
        Command::Run {
            scenario,
            data,
            model,
            coeffs,
            out,
            format,
        } => {
            let scenario = Scenario::load(&scenario)?;
            scenario.validate_shape()?;
            let inputs = Inputs::load(&data, model.as_deref(), coeffs.as_deref())?;
            let result = run_scenario(&scenario, &inputs.datasets, &inputs.model.model, &inputs.coeffs)?;
            for w in &result.warnings {
                eprintln!("warning: {w}");
            }
            let written = write_outputs(&result, &inputs.datasets.geography, &out, format.into())?;
            let t = &result.totals;
            println!(
                "{}: evacuees {:.0} [{:.0}, {:.0}], exportations {:.0} [{:.0}, {:.0}]",
                result.scenario,
                t.evacuees.mid,
                t.evacuees.low,
                t.evacuees.high,
                t.exportations.mid,
                t.exportations.low,
                t.exportations.high
            );
            for p in written {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::Serve {
            data,
            store,
            port,
            model,
            coeffs,
            workers,
            queue,
        } => {
            let inputs = Arc::new(Inputs::load(&data, model.as_deref(), coeffs.as_deref())?);
            let store = Store::open(&store)?;
            let mut config = ServiceConfig {
                queue_capacity: queue,
                ..ServiceConfig::default()
            };
            if let Some(w) = workers {
                config.workers = w;
            }
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async move {
                let app = router(inputs, store, config);
                let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
                tracing::info!("listening on {}", listener.local_addr()?);
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await
            })?;
            Ok(())
        }
    }
}
