//! Joint admission control and coordinated beamforming (JACoB) for the
//! multicell MISO downlink.
//!
//! The crate is organised bottom-up:
//!
//! * [`linalg`]: Hermitian matrices and the Jacobi eigensolver.
//! * [`model`]: scenarios, SINR, the affine constraint functions `f_q` and the
//!   prescreening matrices `Φ_q`.
//! * [`scenario`]: random multicell drops and the plain-text scenario format.
//! * [`conic`]: a small primal-dual interior-point solver for the
//!   trace/PSD/slack problem family every formulation here instantiates.
//! * [`jacob`]: the centralized ℓ1 and Huber relaxations, beamformer
//!   recovery and the CoBF feasibility test.
//! * [`bcd`]: per-BS block coordinate descent with a simulated backhaul.
//! * [`admission`]: prescreening and the deflation heuristic.
//! * [`experiments`]: Monte-Carlo sweeps and single-instance reports.

pub mod admission;
pub mod bcd;
pub mod conic;
pub mod error;
pub mod experiments;
pub mod jacob;
pub mod linalg;
pub mod model;
pub mod scenario;

pub use error::{JacobError, Result};
pub use linalg::{HermitianMatrix, C64, CVector};
pub use model::{BeamformerSet, Scenario, UserRecord};
