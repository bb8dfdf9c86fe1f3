//! Execution-free prompt evaluation and metric-guided prompt optimization.
//!
//! The pipeline builds a diverse prompt pool ([`corpus`]), measures
//! execution-grounded quality metrics ([`metrics`]), ranks candidate metrics
//! with a boosted-tree classifier ([`selection`]), trains an evaluator that
//! predicts metrics and quality from text alone ([`evaluator`]), and rewrites
//! failing prompts guided by gradient attribution ([`optimizer`]). The
//! [`harness`] wires the stages together behind a CLI.

pub mod gateway;
pub mod prompts;
pub mod corpus;
pub mod io;
pub mod metrics;
pub mod selection;
pub mod evaluator;
pub mod optimizer;
pub mod harness;
