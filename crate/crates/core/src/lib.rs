// Validation uses `!(x >= 0.0)` on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod binio;
pub mod geom;
pub mod sim;
pub mod codec;
pub mod nn;
pub mod lwm;
pub mod policy;
pub mod eval;
pub mod train;
pub mod config;
pub mod pipeline;
