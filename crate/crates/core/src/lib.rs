//! Average treatment effect estimation for heavy-tailed experiment data.

pub mod causal;
pub mod cli;
pub mod estimators;
pub mod linear_models;
pub mod sim;
pub mod stats;
pub mod tail_model;
