#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod annotation;
pub mod audio;
pub mod dsp;
pub mod features;
pub mod ml;
pub mod rng;
pub mod stats;
pub mod table;
pub mod testkit;
