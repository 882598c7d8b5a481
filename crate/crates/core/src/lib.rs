pub mod analysis;
pub mod cli;
pub mod datagen;
pub mod error;
pub mod featurize;
pub mod ga;
pub mod gbt;
pub mod microsim;
pub mod mitigation;
pub mod netmodel;
pub mod nn;
pub mod plot;
pub mod rng;
pub mod surrogate;
