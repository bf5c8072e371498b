//! GAN training under dishonest discriminator feedback: loss classes, feedback
//! adversaries, exact discrete-distribution oracles, a small dense network
//! stack and the ring-of-Gaussians experiment.

pub mod adversary;
pub mod error;
pub mod losses;
pub mod nn;
pub mod optim;
pub mod oracle;
pub mod ring;
pub mod train;

pub use error::{Error, Result};
