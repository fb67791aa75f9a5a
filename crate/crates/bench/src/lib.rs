//! Shared fixtures for the benchmarks.

use ivbb_core::{league_workload, BandwidthVector, ParamVector};

pub const SEED: u64 = 2014;

/// Bandwidth of the usual benchmark runs.
pub fn typical_bandwidth() -> BandwidthVector {
    BandwidthVector::new(2.0, 1.5, 2.2).expect("positive")
}

/// `n` estimate samples and `m` queries from the shipped synthetic league.
pub fn workload(n: usize, m: usize) -> (Vec<ParamVector>, Vec<ParamVector>) {
    league_workload(n, m, SEED).expect("shipped league generates")
}
