//! Fault localization in optical fiber links from baseband subcarrier sweep
//! (BSS) measurements.
//!
//! A link's complex frequency response is fitted against an over-complete
//! dictionary of fault and reflection phasors with a weighted nonnegative
//! Lasso. Selections are then sharpened by penalty correction and cluster
//! treatment, and event magnitudes are recovered by a forward-model search.

pub mod bench;
pub mod dictionary;
pub mod error;
pub mod fiber;
pub mod io;
pub mod lasso;
pub mod metrics;
pub mod nnls;
pub mod pipeline;

pub use dictionary::{build_observation, Block, Dictionary, PositionGrid};
pub use error::{Error, Result};
pub use fiber::{
    coefficients_from_magnitudes, frequency_response_analytic, frequency_response_numeric,
    magnitudes_from_coefficients, time_domain_profile, uniform_frequencies, Event, FiberLink, FrequencyProfile,
    PhysicalConstants, SampledProfile, StepCoefficients,
};
pub use lasso::{LassoProblem, LassoSolution, SolverSettings};
pub use pipeline::{detect, reconstruct_magnitudes, DetectConfig, DetectionReport, EventEstimate, Mode};
