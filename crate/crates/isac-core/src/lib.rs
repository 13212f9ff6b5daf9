//! Simulation library for a bistatic OFDM integrated sensing and
//! communication (ISAC) network.
//!
//! One base station (BS1, at the origin) transmits a joint
//! communication/sensing OFDM waveform and receives uplink traffic from a set
//! of mobile UEs, while a second base station (BS2) passively collects the
//! target echoes of both link directions. The library computes
//!
//! * Cramér–Rao bounds on the target parameters (angles, bistatic delays,
//!   velocity, complex gains) under three transmit-symbol-knowledge regimes —
//!   clairvoyant, fully unknown (symbols marginalized as nuisance parameters),
//!   and a hybrid that knows pilots and the dedicated sensing subcarriers —
//!   with structured clutter whitening;
//! * the uplink spectral efficiency achieved by a temporal-correlation-aware
//!   multi-pilot MMSE channel estimator, compared against block-fading
//!   estimation.
//!
//! Modules map onto the subsystems: [`numerics`] (shared kernels),
//! [`scenario`] (configuration, frame schedule, power split), [`comm_channel`]
//! (UE–BS1 channel statistics and sampling), [`sensing`] (target geometry,
//! echo means, analytic Jacobians), [`clutter`] (clutter covariances and
//! whitening), [`estimation`] (pilots, MMSE estimator, combiner/precoder,
//! spectral efficiency), [`fim`] (Fisher information assembly and CRB
//! extraction) and [`experiments`] (seeded sweep runners with CSV output).

pub mod clutter;
pub mod comm_channel;
pub mod estimation;
pub mod experiments;
pub mod fim;
pub mod numerics;
pub mod scenario;
pub mod sensing;

#[cfg(test)]
pub(crate) mod testutil;

pub use clutter::{ClutterConfig, PerBinClutterCov};
pub use estimation::{MmseEstimator, PilotBook, SeOutcome};
pub use fim::{ClutterMode, CrbReport, Regime, ScenarioRealization};
pub use numerics::{CMat, CVec, HermitianMatrix, RMat, RVec, C64};
pub use scenario::{BinKind, FrameSchedule, ScenarioConfig};
pub use sensing::{BinContext, BinSignal, TargetParams};

use thiserror::Error;

/// Deterministic derivation of independent RNG substreams from a master seed.
pub mod seeding {
    fn splitmix64(state: &mut u64) -> u64 {
        *state = state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = *state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Mixes a master seed with stream labels (realization index, bin
    /// coordinates, ...) into one substream seed. Order-sensitive.
    pub fn substream(master: u64, labels: &[u64]) -> u64 {
        let mut state = master;
        let mut out = splitmix64(&mut state);
        for &l in labels {
            state ^= l.wrapping_mul(0xd1342543de82ef95).rotate_left(17);
            out ^= splitmix64(&mut state);
        }
        out
    }
}

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum CoreError {
    /// Invalid configuration (file contents, infeasible frame layout, ...).
    #[error("config error: {0}")]
    Config(String),
    /// An argument outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A matrix that must be positive definite is (numerically) singular.
    #[error("singular matrix: {0}")]
    Singular(String),
    /// Inconsistent operand dimensions.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// Geometry degenerate (coincident nodes etc.).
    #[error("geometry error: {0}")]
    Geometry(String),
    /// File I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, CoreError>;
