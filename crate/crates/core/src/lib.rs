//! Latent transition learning over STRIPS planning domains.

pub mod pddl;
pub mod world;
pub mod dataset;
pub mod io;
pub mod embed;
pub mod model;
pub mod train;
pub mod protocols;
pub mod eval;
pub mod pipeline;
pub mod cli;
