pub mod cct;
pub mod cli;
pub mod equilibrium;
pub mod error;
pub mod lmi;
pub mod lyapunov;
pub mod netmodel;
pub mod sdp;
pub mod sim;

pub use error::{Error, Result};
