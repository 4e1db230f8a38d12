//! Multi-model online conformal prediction for streaming classification.
//!
//! Given, at every step, one probability vector per candidate model, the
//! library emits a prediction set that targets `1 - alpha` coverage under
//! distribution shift. Three online procedures are provided:
//!
//! - **gmocp**: each step samples a bipartite graph between selective nodes
//!   and models, picks one selective node and restricts model choice and
//!   updates to its neighbours;
//! - **mocp**: samples a model from the full pool and updates every model;
//! - **single**: one fixed model with an adaptive miscoverage level.
//!
//! ```no_run
//! use gmocp_core::data_io::{generate_stream, SyntheticSpec};
//! use gmocp_core::engine::{gmocp_run, RunConfig};
//!
//! let stream = generate_stream(&SyntheticSpec::default()).unwrap();
//! let report = gmocp_run(&stream, &RunConfig::default()).unwrap();
//! println!("coverage {:.3}, width {:.2}", report.coverage, report.avg_width);
//! ```

pub mod adaptation;
pub mod conformal;
pub mod data_io;
pub mod diagnostics;
pub mod engine;
pub mod graph;
pub mod rng;
pub mod runner;

pub use engine::{
    evaluate, gmocp_run, mocp_run, run, single_run, Method, RunConfig, RunReport, StepOutcome,
};
