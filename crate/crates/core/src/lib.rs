//! Online model checking for motion-compensated beam scheduling.
//!
//! The numeric core ([`motion`], [`fit`], [`smc`]) is generic over the
//! scalar type; the aliases below fix it to `f64`.

pub mod beam;
pub mod fit;
pub mod io;
mod linalg;
pub mod motion;
pub mod omc;
pub mod scalar;
pub mod service;
pub mod smc;
pub mod treatment;

pub type MotionModel = motion::MotionModel1D<f64>;
pub type Perturbation = motion::PerturbationConfig<f64>;
pub type Fit = fit::Fit<f64>;
pub type SampleWindow = fit::SampleWindow<f64>;
pub type InvariantQuery = smc::InvariantQuery<f64>;
pub type ReachBoxQuery = smc::ReachBoxQuery<f64>;
