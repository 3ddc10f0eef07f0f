//! Rumor spreading under uniform communication noise.
//!
//! Interaction models (sequential, broadcast and parallel PULL, parallel PUSH), the
//! protocols that run on them, the adaptive coin-distinguishing framework behind the
//! lower bounds, and the experiment harness that measures convergence times.

pub mod acdt;
pub mod alphabet;
pub mod configuration;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod infotheory;
pub mod models;
pub mod noise;
pub mod protocols;
pub mod random;
pub mod reductions;

pub use alphabet::{Alphabet, Opinion, Symbol};
pub use configuration::{
    charge_configuration, epsilon_bound, AgentId, ChargedConfiguration, NeutralConfiguration,
    SourceStateSpec,
};
pub use error::{Error, Result};
pub use models::{ModelKind, Population, PopulationOptions};
pub use noise::{validate_noise_matrix, EllipticityReport, NoiseMatrix};
pub use random::SharedRandomness;
