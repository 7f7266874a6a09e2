#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod checkpoint;
pub mod cidtm;
pub mod corpus;
pub mod dp_sim;
pub mod eval;
pub mod kalman;
pub mod meanfield;
pub mod ohdp;
pub mod prob;
pub mod synth;
