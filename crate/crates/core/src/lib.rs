#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments, clippy::needless_range_loop)]

pub mod calibration;
pub mod cli;
pub mod design;
pub mod dynamics;
pub mod error;
pub mod evaluate;
pub mod gp;
mod linalg;
pub mod lq_baseline;
pub mod objectives;
pub mod optim;
pub mod rng;
pub mod solver;
pub mod stats;
