#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocation;
pub mod attention;
pub mod contract;
pub mod dataset;
pub mod exec;
pub mod experiment;
pub mod kpi;
pub mod meijer;
pub mod oracle;
pub mod qoe;
pub mod quadrature;
pub mod scenario;
pub mod special;
pub mod types;
pub mod units;
