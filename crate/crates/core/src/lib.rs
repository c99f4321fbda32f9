pub mod covariance;
pub mod error;
pub mod evolution;
pub mod experiment;
pub mod inequalities;
pub mod io;
pub mod linalg;
pub mod mc;
pub mod measures;
pub mod mehler;
pub mod model;
pub mod quadrature;
pub mod rng;
pub mod spde;

pub use error::{Error, Result};
