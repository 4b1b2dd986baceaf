//! Closed-loop scenarios: synthetic tracks, references, measurement noise,
//! simulation runs, metrics and controller comparisons. Everything here is
//! `f64`.

pub mod compare;
pub mod config;
pub mod noise;
pub mod reference;
pub mod scenario;
pub mod track;

use thiserror::Error;

use crate::flatness::FlatnessError;
use crate::mfc::ControlError;
use crate::plant::PlantError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("track: {0}")]
    Track(String),
    #[error("config: {0}")]
    Config(String),
    #[error("reference: {0}")]
    Reference(String),
    #[error("schema: {0}")]
    Schema(String),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Flatness(#[from] FlatnessError),
    #[error(transparent)]
    Control(#[from] ControlError),
}
