// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clustering;
pub mod encoder;
pub mod graph;
pub mod metrics;
pub mod pipeline;
pub mod reasoning;
pub mod roles;
pub mod semantics;
pub mod tensor;
