//! Cycle-level model of a small fault-tolerant microcontroller SoC, with
//! fault-injection campaigns and area/reliability reporting.

pub mod registry;

pub mod config;
pub mod cpu;
pub mod ecc;
pub mod faultsim;
pub mod interconnect;
pub mod isa;
pub mod memory;
pub mod peripherals;
pub mod redundancy;
pub mod report;
pub mod signals;
pub mod soc;
pub mod tcls;
pub mod workload;
