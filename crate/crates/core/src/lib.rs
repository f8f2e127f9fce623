//! Discrete-event simulation of virtualized cloud data centers.
//!
//! The [`kernel`] delivers timestamped events between entities in a single
//! deterministic loop. Data centers, brokers and the federation agents in
//! [`datacenter`] and [`federation`] are entities on top of it; [`scenario`]
//! builds them from a declarative description and collects a report.

pub mod datacenter;
pub mod error;
pub mod federation;
pub mod host;
pub mod kernel;
pub mod market;
pub mod memory;
pub mod messages;
pub mod model;
pub mod provision;
pub mod scenario;
pub mod scheduling;
