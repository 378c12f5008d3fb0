//! Passive LTE UE localization with two unsynchronized sniffers.
//!
//! Each sniffer measures the delay between a downlink subframe and the UE's
//! uplink reply. Range sums to the eNb and sniffer give a ToA fix; range
//! differences between sniffers give a TDoA fix that cancels the timing
//! advance and the UE clock error.

pub mod cli;
pub mod config;
pub mod experiment;
pub mod geometry;
pub mod report;
pub mod snifflog;
pub mod stats;
pub mod tdoa;
pub mod timing;
pub mod toa;
