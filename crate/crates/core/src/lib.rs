//! Simulation and analysis of a driven qubit dispersively coupled to a lossy
//! cavity: master-equation dynamics, emitted-photon spectra from two-time
//! correlators, in-silico calibrations and the qubit/photon energy ledger.

pub mod calibration;
pub mod correlation;
pub mod energetics;
pub mod error;
pub mod fitcore;
pub mod hilbert;
pub mod lindblad;
pub mod model;
pub mod spectrum;

pub use error::{Error, Result};
pub use hilbert::{DensityMatrix, HilbertSpec, Operator, QubitState, C64};
pub use lindblad::StateTrajectory;
pub use model::{PulseSchedule, SystemModel};
