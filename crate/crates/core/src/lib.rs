//! Extremum-seeking auto-tuning of a robust feedback-linearizing controller
//! for an electromagnetic actuator.

pub mod actuator;
pub mod config;
pub mod controller;
pub mod harness;
pub mod integrator;
pub mod report;
pub mod seeker;
pub mod stability;
pub mod trajectory;
