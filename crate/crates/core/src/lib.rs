//! Deterministic multi-agent collaborative BEV perception at desk scale.
//!
//! A fleet of agents observes a synthetic world as bird's-eye-view feature
//! grids. Each collaborator transmits a sparse, half-precision token stream
//! selected by a saliency/dynamics mask; the ego agent reconstructs full
//! features from tokens plus pose-warped history, fuses every agent (and the
//! projected previous fusion, treated as one extra time-delayed agent) with
//! multi-agent deformable attention, and runs detection heads over the fused
//! grid. Everything is a pure function of (configuration, seed): two runs
//! with the same inputs produce byte-identical outputs.
//!
//! All numeric kernels are generic over the scalar type ([`scalar::Real`],
//! i.e. f32 or f64); concrete f64 aliases for the common types live at the
//! crate root. 16-bit floats appear only at the wire boundary.

pub mod detect;
pub mod error;
pub mod fusion;
pub mod grid;
pub mod harness;
pub mod memory;
pub mod scalar;
pub mod stt;
pub mod wire;
pub mod world;

pub use error::{Error, Result};
pub use scalar::Real;

/// Default-precision aliases. The CLI and the experiment harness run in f64.
pub type FeatureGrid64 = grid::FeatureGrid<f64>;
pub type ScalarGrid64 = grid::ScalarGrid<f64>;
pub type Pose64 = grid::Pose<f64>;
pub type LinearHead64 = grid::LinearHead<f64>;
pub type SttConfig64 = stt::SttConfig<f64>;
pub type ReconNet64 = stt::ReconNet<f64>;
pub type MemoryBank64 = memory::MemoryBank<f64>;

/// Single-precision aliases for the grid types.
pub type FeatureGrid32 = grid::FeatureGrid<f32>;
pub type ScalarGrid32 = grid::ScalarGrid<f32>;
pub type Pose32 = grid::Pose<f32>;
