//! Deterministic C-arm imaging and navigation simulator.
//!
//! A procedural upper-body phantom ([`phantom`]) is viewed through a
//! cone-beam projector ([`projector`]) from poses drawn or steered in
//! [`geometry`]. [`datasetgen`] turns views into nearest-landmark
//! question–answer records; [`navloop`] runs closed-loop episodes in which
//! an agent reads each view and replies in the [`protocol`] grammar, either
//! in process or over the JSON-lines [`gateway`]. [`metrics`] scores both.
//!
//! Every random draw comes from a stream split off one root seed
//! ([`rng`]), so a seed and a command line reproduce outputs byte for byte.
//!
//! The `examples/` directory has one runnable program per capability:
//! `phantom`, `sampling`, `render`, `dataset`, `protocol`,
//! `oracle_navigation`, `feedback`, `remote_agent` and `evaluate`.

pub mod anatomy;
pub mod cli;
pub mod conformance;
pub mod datasetgen;
pub mod gateway;
pub mod geometry;
pub mod metrics;
pub mod navloop;
pub mod phantom;
pub mod projector;
pub mod protocol;
pub mod rng;
