//! System-level simulator for XR video traffic over a 5G NR indoor deployment.

pub mod cli;
pub mod config;
pub mod deployment;
pub mod engine;
pub mod kpi;
pub mod mac;
pub mod phy;
pub mod rng;
pub mod traffic;
