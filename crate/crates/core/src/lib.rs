//! Edges dissolution approximation (EDA) for separable temporal ERGMs.
//!
//! Coefficient transforms and their error analysis, a discrete-time tergm
//! simulator, the infinitesimal-time chain R, exact small-state-space
//! oracles, and calibration of ergm coefficients to target statistics.

pub mod calibrate;
pub mod durations;
pub mod infsim;
pub mod error;
pub mod experiment;
pub mod mcstats;
pub mod net;
pub mod oracle;
pub mod record;
pub mod sampler;
pub mod simconfig;
pub mod stats;
pub mod tergm;
pub mod transforms;

pub use durations::DurationSpec;
pub use error::{Error, Result};
pub use net::{Constraint, Dyad, DyadTyper, Network};
pub use record::{RunOptions, SimulationRecord};
pub use stats::{Model, Term};
pub use transforms::Variant;
