//! Semiclassical Monte Carlo simulation of collective-emission-induced cooling
//! of cesium atoms falling through a near-confocal optical resonator.
//!
//! The crate is organised bottom-up:
//!
//! * [`constants`] and [`model`]: physical scalars, drive and ensemble configuration.
//! * [`spectrum`]: transverse-mode spectrum of the resonator and the below-threshold
//!   emission ratio it implies.
//! * [`zeeman`]: optical pumping over the `F = 4` sublevels, light shifts and the
//!   collective-emission threshold.
//! * [`force`]: friction laws and recoil kicks.
//! * [`engine`]: the time-stepped particle integrator.
//! * [`detection`] and [`analysis`]: time-of-flight traces, peak fits, temperatures
//!   and the fits used to reduce run records to scalar metrics.
//! * [`scenario`] and [`output`]: configuration files, presets, sweeps, CSV bundles
//!   and expectation reports.
//!
//! Coordinates: `z` is vertical along the cavity axis (gravity along `-z`), `x` is
//! along the incident standing wave and `y` is transverse. All quantities are SI
//! internally; detunings are angular frequencies unless a name ends in `_hz`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod constants;
pub mod detection;
pub mod engine;
pub mod error;
pub mod force;
pub mod model;
pub mod output;
pub mod scenario;
pub mod spectrum;
pub mod units;
pub mod zeeman;

pub use constants::Constants;
pub use error::{ConfigError, Error, Result};
pub use nalgebra::Vector3;
