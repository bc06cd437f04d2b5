//! Experiment harness around the relaxation: single points, Pareto fronts,
//! load sweeps, frequency responses and Monte-Carlo validation.

pub mod experiments;
pub mod manifest;
