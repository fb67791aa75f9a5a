//! Intrinsic batted-ball valuation.
//!
//! Batted balls are described by launch speed and two launch angles. A kernel
//! density estimate of each outcome class turns a launch vector into outcome
//! probabilities, and a linear weighting of those probabilities gives an
//! expected run value that ignores where fielders happened to stand.

pub mod bandwidth;
pub mod bundle;
pub mod error;
pub mod harness;
pub mod ingest;
pub mod kde;
pub mod stats;
pub mod synth;
pub mod valuation;

pub use error::{Error, Result};
pub use ingest::{
    build_validation_partition, filter_fair_contact, parse_dataset, split_by_handedness, write_dataset,
    BattedBallRecord, Diagnostic, Hand, OutcomeClass, ParsedDataset, ValidationPartition, Venue,
};
pub use kde::{kernel_eval, BandwidthVector, DensityEstimate, ParamVector, DEFAULT_TRUNCATION_RADIUS, DENSITY_FLOOR};
pub use bandwidth::{
    average_bandwidths, grid_search_one_set, pseudo_log_likelihood, select_bandwidth, Lattice, SearchConfig, SearchResult,
    SetOptimum,
};
pub use valuation::{
    export_grid, fit_model, intrinsic_value, AxisRange, FixedAxis, ModelPair, OutcomeWeights, Posterior, ValuationModel,
    ValueGrid,
};
pub use stats::{
    aggregate, leaderboard_report, team_defense, value_all, value_leave_group_out, AggregateRow, BallValuation, DefenseRow, GroupKey, SortKey,
};
pub use synth::{generate, ClassSpec, Component, Scenario, SynthConfig};
pub use bundle::{BundleModel, ModelBundle, BUNDLE_FORMAT, BUNDLE_MAGIC};
pub use harness::{compare_evaluators, league_workload, HarnessReport};
