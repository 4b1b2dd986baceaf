//! Flatness-based and model-free control of a 3DoF two-wheel vehicle.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod estimation;
pub mod flatness;
pub mod integrate;
pub mod harness;
pub mod mfc;
pub mod plant;
pub mod scalar;

pub use plant::{
    ActuatorLimits, ControlInput, ForceSet, Plant, PlantError, VehicleParams, VehicleState, WheelAccels,
    WheelSpeedPolicy,
};
pub use scalar::Scalar;

pub type VehicleParams64 = VehicleParams<f64>;
pub type VehicleState64 = VehicleState<f64>;
pub type ControlInput64 = ControlInput<f64>;
pub type ActuatorLimits64 = ActuatorLimits<f64>;
