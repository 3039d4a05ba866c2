//! Gradual domain adaptation with continuous normalizing flows.
//!
//! A flow is trained jointly over an indexed chain of domains so that the
//! ODE time axis lines up with the domain index. Samples drawn at
//! fractional times act as pseudo-intermediate domains, which densify the
//! chain used by gradual self-training. The interpolation interval is
//! chosen by a self-training cycle back to the labeled source.
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root pin the double-precision configuration used by
//! the command-line tool and the tests.

pub mod cnf;
pub mod data;
pub mod diffmath;
pub mod error;
pub mod eval;
pub mod interpolate;
pub mod rng;
pub mod scalar;
pub mod selftrain;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Mat = diffmath::Mat<f64>;
pub type Mat32 = diffmath::Mat<f32>;
pub type ParamVector = diffmath::ParamVector<f64>;
pub type Tape = diffmath::Tape<f64>;
pub type Tape32 = diffmath::Tape<f32>;
pub type FlowModel = cnf::FlowModel<f64>;
pub type FlowModel32 = cnf::FlowModel<f32>;
pub type Classifier = selftrain::Classifier<f64>;
pub type Classifier32 = selftrain::Classifier<f32>;
pub type LabeledDataset = data::LabeledDataset<f64>;
pub type UnlabeledDomain = data::UnlabeledDomain<f64>;
pub type DomainSequence = data::DomainSequence<f64>;
pub type TimeIndexSet = interpolate::TimeIndexSet<f64>;
pub type PseudoDomain = interpolate::PseudoDomain<f64>;
