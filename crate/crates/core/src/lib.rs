//! Multi-step offloading of a 2D convolution layer onto an accelerator with a
//! small on-chip memory: step semantics and simulation, Row-by-Row / ZigZag /
//! S1-baseline schedules, and an exact-plus-polishing search for the
//! schedule that minimises load traffic.

pub mod cli;
pub mod cli_io;
pub mod conv;
pub mod exec;
pub mod optimizer;
pub mod report;
pub mod strategy;
