//! Single-shot 3D imaging through scattering media.
//!
//! [`sim`] renders a speckle capture of a point scene, [`correlation`] turns a
//! capture into a 3D power-spectrum estimate through computational rescaling
//! and cross-correlation, [`retrieval`] recovers the object with HIO and ER,
//! and [`eval`] scores the result modulo shift and point reflection.
//! [`pipeline`] chains these behind the file formats in [`io`] and the
//! configuration format in [`config`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod correlation;
pub mod error;
pub mod eval;
pub mod grid;
pub mod io;
pub mod oracle;
pub mod pipeline;
pub mod retrieval;
pub mod sim;

pub use config::ExperimentConfig;
pub use correlation::{CorrelationStack, MemoryEffectReport, ScaleSeries};
pub use error::{Error, Result};
pub use eval::{EvaluationReport, SeedScore};
pub use grid::{ComplexVolume3D, Direction, Image2D, Interpolation, Volume3D};
pub use retrieval::{ConstraintSet, IntensityMax, RetrievalConfig, RetrievalOutcome};
pub use sim::{ImpulseResponse, ScatteringScene, ScenePoint};
