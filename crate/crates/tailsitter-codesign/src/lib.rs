//! Co-design of a tailsitter flying wing: geometry, aerodynamics,
//! differentially flat trajectories, flight control, Gaussian-process
//! surrogates and multi-objective Bayesian optimization.
//!
//! The geometric core ([`frames`], [`bspline`]) is generic over the scalar
//! type through [`scalar::Real`]; the rest of the pipeline runs on `f64`.

pub mod aero;
pub mod bo;
pub mod bspline;
pub mod codesign;
pub mod control;
pub mod error;
pub mod flatness;
pub mod frames;
pub mod geometry;
pub mod gp;
pub mod lowdisc;
pub mod optim;
pub mod scalar;
pub mod stats;
pub mod trajopt;

pub use error::{Error, Result};

pub type Vec3 = frames::Vec3T<f64>;
pub type Mat3 = frames::Mat3T<f64>;
pub type State = frames::StateT<f64>;
pub type EnvConstants = frames::EnvConstantsT<f64>;
pub type RigidBody = frames::RigidBodyT<f64>;
pub type BSpline = bspline::BSplineTraj<f64>;
