use thiserror::Error;

use crate::vehicle::VehicleState;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("speed {v} m/s is below the regularization floor {v_eps} m/s")]
    Singularity { v: f64, v_eps: f64 },

    #[error("simulation fault at t={t:.3}s: {reason}")]
    SimulationFault {
        t: f64,
        reason: String,
        last_valid: Box<VehicleState>,
    },

    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("model incompatible: {0}")]
    ModelIncompatible(String),

    #[error(transparent)]
    Link(#[from] crate::link::LinkError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CoreError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CoreError::InvalidInput(msg.into())
    }

    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        CoreError::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}
