//! Model-in-the-loop to vehicle-in-virtual-environment test pipeline:
//! single-track vehicle dynamics with combined-slip tires, a double DQN
//! emergency-braking agent, and the binary link that couples a controller
//! process to a virtual environment process.

pub mod agent;
pub mod config;
pub mod error;
pub mod link;
pub mod pipeline;
pub mod tire;
pub mod vehicle;
pub mod wheel;
pub mod sim;

pub use error::{CoreError, Result};
