//! Neuron-activation based selection of instruction-tuning data.
//!
//! The pipeline runs in four steps:
//!
//! 1. Read per-sample activation traces ([`natr`]).
//! 2. Turn in-domain traces into a per-layer capability direction ([`extract`]).
//! 3. Project candidate samples onto those directions ([`score`]).
//! 4. Choose a subset by score ([`select`]) and compare capabilities ([`analysis`]).
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`). The
//! aliases below fix the scalar type for common use.

pub mod analysis;
pub mod error;
pub mod extract;
pub mod fsio;
pub mod linalg;
pub mod natr;
pub mod profile;
pub mod rng;
pub mod scalar;
pub mod score;
pub mod select;
pub mod stats;
pub mod synth;
pub mod trace;

pub use analysis::{
    direction_similarity, overlap_report, transferability, AccuracyTable, GridValue, OverlapReport,
    SimilarityMatrix, TransferabilityMatrix,
};
pub use error::{NaitError, Result};
pub use extract::{
    aggregate_profiles, calibrate_sign, compute_deltas, extract_direction, extract_direction_with, extract_profile,
    extract_profile_with, profile_from_deltas,
    AggregateInputs, AggregateMode, DeltaSet, Direction, SolverRoute,
};
pub use natr::{read_traces, write_traces, ReadFormat, TraceFormat};
pub use profile::{CapabilityProfile, ExtractionConfig};
pub use rng::DetRng;
pub use scalar::Scalar;
pub use score::{score_all, score_all_with, score_multi, score_multi_with, ActivationMode, Parallelism, ScoreRecord, ScoreTable};
pub use select::{select, Budget, SelectMode, SelectionResult, SelectionSpec};
pub use trace::{ActivationTrace, LayerActivation, TraceSet, ValidationReport};

pub type Profile = CapabilityProfile<f64>;
pub type Profile32 = CapabilityProfile<f32>;
pub type Scores = ScoreTable<f64>;
pub type Scores32 = ScoreTable<f32>;
pub type Selection = SelectionResult<f64>;
pub type Deltas = DeltaSet<f64>;
pub type Similarity = SimilarityMatrix<f64>;
pub type Transfer = TransferabilityMatrix<f64>;
pub type ExactAccuracyTable = AccuracyTable<num_rational::Ratio<i64>>;
pub type ExactTransfer = TransferabilityMatrix<num_rational::Ratio<i64>>;
