//! Tool-routed visual reasoning agent with linear checkpoint/backtrack
//! control, a seeded evaluation harness and trace diagnostics.

pub mod agent;
pub mod config;
pub mod demo;
pub mod diagnostics;
pub mod harness;
pub mod model;
pub mod tools;
