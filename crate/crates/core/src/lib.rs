//! Simulator for decentralized stochastic optimization with compressed
//! communication.
//!
//! The crate builds networks and mixing matrices ([`topology`]), message
//! compressors ([`compress`]), synthetic local objectives ([`objective`]),
//! and runs CEDAS alongside LEAD, Choco-SGD, DSGD, EDAS and centralized SGD
//! ([`algo`]). Runs produce [`metrics::Trace`]s that can be written as CSV,
//! aggregated over repetitions and compared through their transient time.

pub mod algo;
pub mod compress;
pub mod config;
pub mod figures;
pub mod metrics;
pub mod objective;
pub mod output;
pub mod plot;
pub mod rng;
pub mod topology;
pub mod verify;
pub mod vecops;
