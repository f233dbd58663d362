//! Transient random walks in quenched random environment on a strip:
//! environment generation, matrix recursions and Lyapunov spectra, expected
//! occupation times, trajectory simulation, trap detection, and the
//! Poisson/stable limit statistics of hitting and occupation times.

pub mod algebra;
pub mod env;
pub mod error;
pub mod occupation;
pub mod rng;
pub mod stats;
pub mod traps;
pub mod walker;

pub use algebra::{ChainState, ContractionFit, Estimate, MomentCurve, StableIndex};
pub use env::{EnvironmentLaw, EnvironmentWindow, Site, Triple};
pub use error::{Error, Result};
pub use occupation::OccupationProfile;
pub use rng::CounterRng;
pub use stats::{TestMethod, TestReport};
pub use traps::{PointEntry, PointSample, TrapRecord};
pub use walker::TrajectorySummary;
