//! Unsupervised joint modeling of conversation topics and discourse roles.

pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod downstream;
pub mod eval;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod seed;
pub mod synthetic;
pub mod trainer;
