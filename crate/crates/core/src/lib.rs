//! Sensor selection for Bayesian estimation from noisy quadratic measurements, driven by
//! scalarizations of the Van Trees bound.

pub mod analysis;
pub mod bound;
pub mod criteria;
pub mod error;
pub mod linalg;
pub mod model;
pub mod output;
pub mod phase_retrieval;
pub mod select;
pub mod stats;
pub mod synth;
pub mod tracking;

pub use bound::{BoundState, Design, InfoAtom, Summary};
pub use criteria::{Criterion, GainMethod, GainReport};
pub use error::{Error, ErrorClass, Result};
pub use model::{PriorSpec, Problem, QuadraticObservation};
pub use select::{SelectionMethod, SelectionResult};
