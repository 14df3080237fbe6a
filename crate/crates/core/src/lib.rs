//! Multi-modal drift concordance.
//!
//! Rolling detection windows over an exam stream are compared against a
//! reference set, metric by metric (chi-square for categorical metadata,
//! Kolmogorov-Smirnov for continuous metadata, latent dimensions and soft
//! predictions). Each bootstrapped statistic is standardized against the
//! reference windows and the sign-flipped values are averaged, optionally
//! weighted by how well each metric tracks AUROC on hard-mined windows.
//!
//! The crate also carries a deterministic stream simulator with the three
//! drift scenarios and a small fully-connected VAE for image latents.

pub mod concordance;
pub mod images;
pub mod model;
pub mod report;
pub mod scalar;
pub mod series;
pub mod sim;
pub mod stats;
pub mod vae;
pub mod window;

pub use concordance::{
    calibrate, run_series, Calibration, CalibrationOptions, ConcordanceError, MetricGroups,
    MetricSet, ReferenceSet, Scorer, SeriesOptions, WeightMode,
};
pub use model::{ExamRecord, FeatureSchema, MetricDescriptor, ModelError, WindowSpec};
pub use report::Report;
pub use scalar::Scalar;
pub use series::{ConcordanceSeries, SeriesRow};
pub use sim::{PopulationSpec, ScenarioKind, ScenarioSpec, SimError, Simulator};
pub use vae::{VaeConfig, VaeError};
pub use window::BootstrapSpec;

pub type Vae = vae::Vae<f64>;
pub type Vae32 = vae::Vae<f32>;
